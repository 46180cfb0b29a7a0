"""Bearer coins, their cut-and-choose candidates and the offline transfer chain.

A coin is issued over ``k`` surviving candidates, each carrying commitments to
an XOR split of the withdrawer's identity.  Every offline hop appends a
:class:`TransferRecord` that answers the payee's ``k``-bit challenge by
opening one share per position, proves knowledge of the current holder's
one-time key, and commits the payee's own identity shares for the next hop.
Two different answers to the same set of commitments expose the identity of
whoever forked the chain.
"""

import functools
import random
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from . import codec
from .crypto import (
    IdentityShares,
    RsaPublicKey,
    SchnorrGroup,
    SchnorrProof,
    commitment_digest,
    digest,
    hash_to_int,
    opens,
    rsa_verify,
    schnorr_verify,
    split_identity,
    xor_bytes,
)

SERIAL_PART_BITS = 128


class FundsError(ValueError):
    pass


class BadCandidateCount(FundsError):
    pass


class IndexOutOfRange(FundsError):
    pass


class HopIndexMismatch(FundsError):
    pass


class InvalidRecord(FundsError):
    pass


class SerialMismatch(FundsError):
    pass


@dataclass(frozen=True)
class TaPublic:
    """Everything a verifier needs from the trust anchor: issuance key and group."""

    rsa: RsaPublicKey
    group: SchnorrGroup


# -- identity share commitments ----------------------------------------------


@dataclass(frozen=True)
class SharePair:
    """Published commitment digests for one (left, right) share pair."""

    left: bytes
    right: bytes

    def to_wire(self):
        return [self.left, self.right]

    @classmethod
    def from_wire(cls, tree):
        return cls(*tree)


@dataclass(frozen=True)
class RevealedShare:
    share: bytes
    salt: bytes

    def to_wire(self):
        return [self.share, self.salt]

    @classmethod
    def from_wire(cls, tree):
        return cls(*tree)


@dataclass(frozen=True)
class ShareOpening:
    """Private opening data for one :class:`SharePair`."""

    shares: IdentityShares
    left_salt: bytes
    right_salt: bytes

    @functools.cached_property
    def pair(self) -> SharePair:
        return SharePair(commitment_digest(self.shares.left, self.left_salt),
                         commitment_digest(self.shares.right, self.right_salt))

    def reveal(self, bit: int) -> RevealedShare:
        if bit:
            return RevealedShare(self.shares.right, self.right_salt)
        return RevealedShare(self.shares.left, self.left_salt)

    def to_wire(self):
        return [self.shares.left, self.shares.right, self.left_salt, self.right_salt]

    @classmethod
    def from_wire(cls, tree):
        left, right, ls, rs = tree
        return cls(IdentityShares(left, right), ls, rs)


def commit_shares(identity: bytes, rng: random.Random) -> ShareOpening:
    shares = split_identity(identity, rng)
    return ShareOpening(shares, rng.randbytes(16), rng.randbytes(16))


def commit_identity(identity: bytes, count: int, rng: random.Random) -> list:
    return [commit_shares(identity, rng) for _ in range(count)]


# -- cut-and-choose candidates ----------------------------------------------


@dataclass(frozen=True)
class CandidateBody:
    """The public part of a candidate that a surviving coin carries."""

    serial_part: int
    commitments: SharePair

    def message(self, n: int) -> int:
        return _candidate_message(self.serial_part, self.commitments.left, self.commitments.right, n)

    def to_wire(self):
        return [self.serial_part, self.commitments.to_wire()]

    @classmethod
    def from_wire(cls, tree):
        return cls(tree[0], SharePair.from_wire(tree[1]))


@functools.lru_cache(maxsize=1 << 16)
def _candidate_message(serial_part: int, left: bytes, right: bytes, n: int) -> int:
    return hash_to_int(codec.pack(["candidate", serial_part, [left, right]]), n)


@dataclass(frozen=True)
class CoinCandidate:
    serial_part: int
    opening: ShareOpening

    @property
    def identity_share_commitments(self) -> SharePair:
        return self.opening.pair

    @property
    def body(self) -> CandidateBody:
        return CandidateBody(self.serial_part, self.opening.pair)


@dataclass(frozen=True)
class CandidateOpening:
    """What the withdrawer reveals for a candidate the issuer chose to open."""

    index: int
    serial_part: int
    shares: IdentityShares
    left_salt: bytes
    right_salt: bytes
    blinding: int

    @property
    def body(self) -> CandidateBody:
        return CandidateBody(self.serial_part,
                             SharePair(commitment_digest(self.shares.left, self.left_salt),
                                       commitment_digest(self.shares.right, self.right_salt)))


def make_candidates(identity: bytes, count: int, rng: random.Random) -> list:
    if count < 4 or count % 2:
        raise BadCandidateCount(count)
    return [CoinCandidate(rng.getrandbits(SERIAL_PART_BITS), commit_shares(identity, rng))
            for _ in range(count)]


def open_candidates(candidates: Sequence[CoinCandidate], subset_indices, blindings=None) -> list:
    """Reveal the candidates at ``subset_indices`` (with their blinding factors, if any)."""
    openings = []
    for i in subset_indices:
        if not 0 <= i < len(candidates):
            raise IndexOutOfRange(i)
        c = candidates[i]
        r = blindings[i] if blindings is not None else 0
        openings.append(CandidateOpening(i, c.serial_part, c.opening.shares,
                                         c.opening.left_salt, c.opening.right_salt, r))
    return openings


def opening_encodes(opening: CandidateOpening, identity: bytes) -> bool:
    return opening.shares.reconstruct() == identity if len(opening.shares.left) == len(identity) else False


def denomination_message(denomination: int, expiry: Optional[int], n: int) -> int:
    return hash_to_int(codec.pack(["denomination", denomination, expiry]), n)


def owner_message(owner_public: int, n: int) -> int:
    return hash_to_int(codec.pack(["owner", owner_public]), n)


def serial_from_parts(bodies: Sequence[CandidateBody]) -> int:
    return int.from_bytes(digest("serial", [b.serial_part for b in bodies]), "big")


# -- coins ------------------------------------------------------------------


@dataclass(frozen=True)
class Coin:
    serial: int
    denomination: int
    issuer_signature: int
    expiry: Optional[int]
    candidates: tuple
    owner_public: int

    @property
    def k(self) -> int:
        return len(self.candidates)

    def message(self, n: int) -> int:
        """The composite value the issuer's signature covers."""
        cache = self.__dict__.setdefault("_messages", {})
        if n in cache:
            return cache[n]
        m = denomination_message(self.denomination, self.expiry, n) * owner_message(self.owner_public, n) % n
        for body in self.candidates:
            m = m * body.message(n) % n
        cache[n] = m
        return m

    def to_wire(self):
        return codec.Raw(self.to_bytes())

    @classmethod
    def from_wire(cls, tree):
        serial, denom, sig, expiry, cands, owner = tree
        return cls(serial, denom, sig, expiry, tuple(CandidateBody.from_wire(c) for c in cands), owner)

    @functools.cached_property
    def _encoded(self) -> bytes:
        return codec.pack([self.serial, self.denomination, self.issuer_signature, self.expiry,
                           [c.to_wire() for c in self.candidates], self.owner_public])

    def to_bytes(self) -> bytes:
        return self._encoded


def verify_coin(coin: Coin, key: RsaPublicKey) -> Optional[str]:
    """Return ``None`` for a well-formed, properly signed coin, else a reason."""
    if coin.denomination <= 0:
        return "BadDenomination"
    if not coin.candidates:
        return "MalformedCoin"
    if coin.serial != serial_from_parts(coin.candidates):
        return "BadSerial"
    if not rsa_verify(coin.message(key.n), coin.issuer_signature, key):
        return "BadIssuerSignature"
    return None


# -- transfer records and chains ----------------------------------------------


@dataclass(frozen=True)
class TransferRecord:
    hop_index: int
    payer_coin_proof: SchnorrProof
    challenge: tuple
    revealed_shares: tuple
    payee_onetime_public: int
    tick: int
    payer_public: int
    counter: int
    payee_commitments: tuple

    def body_wire(self):
        return [self.hop_index, list(self.challenge), [r.to_wire() for r in self.revealed_shares],
                self.payee_onetime_public, self.tick, self.payer_public, self.counter,
                [p.to_wire() for p in self.payee_commitments]]

    @functools.cached_property
    def _encoded(self) -> bytes:
        body = self.body_wire()
        return codec.pack([body[0], self.payer_coin_proof.to_wire()] + body[1:])

    def to_wire(self):
        return codec.Raw(self._encoded)

    @classmethod
    def from_wire(cls, tree):
        hop, proof, challenge, revealed, payee, tick, payer, counter, commits = tree
        return cls(hop, SchnorrProof.from_wire(proof), tuple(challenge),
                   tuple(RevealedShare.from_wire(r) for r in revealed), payee, tick, payer, counter,
                   tuple(SharePair.from_wire(p) for p in commits))

    def to_bytes(self) -> bytes:
        return self._encoded

    @classmethod
    def from_bytes(cls, data: bytes) -> "TransferRecord":
        return cls.from_wire(codec.unpack(data))


def record_context(serial: int, body_wire) -> bytes:
    """Bytes the payer's proof is bound to: the coin serial and every record field."""
    return codec.pack(["transfer", serial, body_wire])


@dataclass(frozen=True)
class TransferChain:
    coin: Coin
    records: tuple = ()

    def to_wire(self):
        return [self.coin.to_wire(), [r.to_wire() for r in self.records]]

    @classmethod
    def from_wire(cls, tree):
        return cls(Coin.from_wire(tree[0]), tuple(TransferRecord.from_wire(r) for r in tree[1]))

    @functools.cached_property
    def _encoded(self) -> bytes:
        return codec.pack(self.to_wire())

    def to_bytes(self) -> bytes:
        return self._encoded

    @property
    def size(self) -> int:
        return len(self._encoded)

    @functools.cached_property
    def _digest(self) -> bytes:
        return digest("chain", codec.Raw(self._encoded))

    def digest(self) -> bytes:
        return self._digest

    def holder_public(self, hop: Optional[int] = None) -> int:
        """One-time key that must authorize the transfer at ``hop`` (default: next hop)."""
        hop = len(self.records) if hop is None else hop
        return self.coin.owner_public if hop == 0 else self.records[hop - 1].payee_onetime_public

    def answered_pairs(self, hop: Optional[int] = None) -> tuple:
        """Share commitments the payer at ``hop`` has to answer."""
        hop = len(self.records) if hop is None else hop
        if hop == 0:
            return tuple(c.commitments for c in self.coin.candidates)
        return self.records[hop - 1].payee_commitments


def check_record_shape(record: TransferRecord, k: int) -> bool:
    return (len(record.challenge) == k
            and all(b in (0, 1) for b in record.challenge)
            and len(record.revealed_shares) == k
            and len(record.payee_commitments) == k)


def append_transfer(chain: TransferChain, record: TransferRecord) -> TransferChain:
    if record.hop_index != len(chain.records):
        raise HopIndexMismatch(f"expected hop {len(chain.records)}, got {record.hop_index}")
    if not check_record_shape(record, chain.coin.k):
        raise InvalidRecord("record shape does not match the coin's challenge length")
    return TransferChain(chain.coin, chain.records + (record,))


@dataclass(frozen=True)
class TransactionStatement:
    chain: TransferChain
    sender_spec: int
    receiver_spec: int
    amount: int

    @classmethod
    def for_chain(cls, chain: TransferChain) -> "TransactionStatement":
        last = chain.records[-1] if chain.records else None
        sender = last.payer_public if last else chain.coin.owner_public
        receiver = last.payee_onetime_public if last else chain.coin.owner_public
        return cls(chain, sender, receiver, chain.coin.denomination)

    @property
    def serial(self) -> int:
        return self.chain.coin.serial

    def to_wire(self):
        return [self.chain.to_wire(), self.sender_spec, self.receiver_spec, self.amount]

    @classmethod
    def from_wire(cls, tree):
        return cls(TransferChain.from_wire(tree[0]), tree[1], tree[2], tree[3])

    def to_bytes(self) -> bytes:
        return codec.pack(self.to_wire())

    @classmethod
    def from_bytes(cls, data: bytes) -> "TransactionStatement":
        return cls.from_wire(codec.unpack(data))


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: Optional[str] = None

    def __bool__(self):
        return self.valid


VALID = Verdict(True)


def verify_chain(statement: TransactionStatement, ta_public: TaPublic, at_tick: Optional[int] = None) -> Verdict:
    """Offline acceptance check; uses nothing but the statement and the TA's public data.

    ``at_tick`` defaults to the tick of the last record.
    """
    chain = statement.chain
    coin = chain.coin
    group = ta_public.group
    bad = verify_coin(coin, ta_public.rsa)
    if bad:
        return Verdict(False, bad)
    if statement.amount != coin.denomination:
        return Verdict(False, "AmountMismatch")
    k = coin.k
    for i, rec in enumerate(chain.records):
        if rec.hop_index != i:
            return Verdict(False, "HopIndexMismatch")
        if not check_record_shape(rec, k) or not group.is_element(rec.payee_onetime_public):
            return Verdict(False, "MalformedRecord")
        if rec.payer_public != chain.holder_public(i):
            return Verdict(False, "ChainLinkBroken")
        if i and rec.tick < chain.records[i - 1].tick:
            return Verdict(False, "TickRegression")
        if not schnorr_verify(group, rec.payer_public, record_context(coin.serial, rec.body_wire()),
                              rec.payer_coin_proof):
            return Verdict(False, "BadProof")
        for pair, bit, shown in zip(chain.answered_pairs(i), rec.challenge, rec.revealed_shares):
            if not opens(pair.right if bit else pair.left, shown.share, shown.salt):
                return Verdict(False, "BadShares")
    expected = TransactionStatement.for_chain(chain)
    if (statement.sender_spec, statement.receiver_spec) != (expected.sender_spec, expected.receiver_spec):
        return Verdict(False, "SpecMismatch")
    if at_tick is None and chain.records:
        at_tick = chain.records[-1].tick
    if coin.expiry is not None and at_tick is not None and at_tick >= coin.expiry:
        return Verdict(False, "Expired")
    return VALID


def fork_point(chain_a: TransferChain, chain_b: TransferChain) -> Optional[int]:
    """First hop at which the two chains carry different records, or ``None`` if one extends the other."""
    if chain_a.coin.serial != chain_b.coin.serial:
        raise SerialMismatch()
    for i, (ra, rb) in enumerate(zip(chain_a.records, chain_b.records)):
        if ra.to_wire() != rb.to_wire():
            return i
    return None


def extract_double_spender(record_a: TransferRecord, record_b: TransferRecord, coin: Coin,
                           other_coin: Optional[Coin] = None, answered: Optional[Sequence[SharePair]] = None):
    """Identity behind two different answers to the same share commitments.

    ``answered`` defaults to the coin's candidate commitments (a hop-0 fork).
    Returns ``None`` when the challenges agree at every position.
    """
    if other_coin is not None and other_coin.serial != coin.serial:
        raise SerialMismatch()
    if record_a.hop_index != record_b.hop_index:
        raise HopIndexMismatch("records answer different hops")
    pairs = tuple(answered) if answered is not None else tuple(c.commitments for c in coin.candidates)
    found = []
    for j, (bit_a, bit_b) in enumerate(zip(record_a.challenge, record_b.challenge)):
        if bit_a == bit_b:
            continue
        sa, sb = record_a.revealed_shares[j], record_b.revealed_shares[j]
        # only trust shares that open the commitments they claim to
        pair = pairs[j]
        if not (opens(pair.right if bit_a else pair.left, sa.share, sa.salt)
                and opens(pair.right if bit_b else pair.left, sb.share, sb.salt)):
            continue
        found.append(xor_bytes(sa.share, sb.share))
    if not found:
        return None
    return Counter(found).most_common(1)[0][0]
