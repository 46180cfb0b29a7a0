"""Canonical length-prefixed binary encoding.

Every value on the wire is ``tag (1 byte) | length (4 bytes, big-endian) |
payload``.  Integers are unsigned big-endian with no leading zero bytes,
lists concatenate their encoded items.  Structures are encoded as lists of
their fields in declaration order, so hashes and signatures computed over
this form are bit-exact and stable.
"""

import struct

_INT = b"I"
_BYTES = b"B"
_STR = b"S"
_NONE = b"N"
_LIST = b"L"

_HEADER = struct.Struct(">cI")
_PLACEHOLDER = bytes(_HEADER.size)


class DecodeError(ValueError):
    pass


class Raw(bytes):
    """An already-encoded value, copied verbatim by :func:`pack`."""


def pack(value) -> bytes:
    out = bytearray()
    _pack_into(value, out)
    return bytes(out)


def _pack_into(value, out):
    t = type(value)
    if t is Raw:
        out += value
    elif t is int:
        if value < 0:
            raise ValueError("negative integers are not encodable")
        raw = value.to_bytes((value.bit_length() + 7) // 8, "big")
        out += _HEADER.pack(_INT, len(raw))
        out += raw
    elif t is bytes or t is bytearray:
        out += _HEADER.pack(_BYTES, len(value))
        out += value
    elif t is list or t is tuple:
        at = len(out)
        out += _PLACEHOLDER
        for item in value:
            _pack_into(item, out)
        # backfill the list length once the items are written
        _HEADER.pack_into(out, at, _LIST, len(out) - at - _HEADER.size)
    elif value is None:
        out += _HEADER.pack(_NONE, 0)
    elif t is bool:
        out += _HEADER.pack(_INT, 1)
        out += b"\x01" if value else b"\x00"
    elif t is str:
        raw = value.encode("utf-8")
        out += _HEADER.pack(_STR, len(raw))
        out += raw
    elif isinstance(value, int):
        _pack_into(int(value), out)
    else:
        raise TypeError(f"cannot encode {t.__name__}")


def unpack(data: bytes):
    value, end = _unpack_at(data, 0)
    if end != len(data):
        raise DecodeError(f"{len(data) - end} trailing bytes")
    return value


def _unpack_at(data, pos):
    if pos + _HEADER.size > len(data):
        raise DecodeError("truncated header")
    tag, length = _HEADER.unpack_from(data, pos)
    start = pos + _HEADER.size
    end = start + length
    if end > len(data):
        raise DecodeError("truncated payload")
    payload = data[start:end]
    if tag == _INT:
        return int.from_bytes(payload, "big"), end
    if tag == _BYTES:
        return bytes(payload), end
    if tag == _STR:
        return payload.decode("utf-8"), end
    if tag == _NONE:
        return None, end
    if tag == _LIST:
        items = []
        cur = start
        while cur < end:
            item, cur = _unpack_at(data, cur)
            items.append(item)
        if cur != end:
            raise DecodeError("list overrun")
        return items, end
    raise DecodeError(f"unknown tag {tag!r}")
