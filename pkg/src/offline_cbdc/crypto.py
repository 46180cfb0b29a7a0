"""Desk-scale cryptographic primitives.

Textbook RSA blind signatures, Schnorr proofs of knowledge made
non-interactive with Fiat-Shamir, salted hash commitments and XOR identity
shares.  Parameters are deliberately small; none of this is meant to protect
real money.  All randomness comes from an explicit ``random.Random`` so runs
are replayable.
"""

import functools
import hashlib
import math
import random
from dataclasses import dataclass

import gmpy2
import sympy

from . import codec

HASH_NAME = "sha256"
HASH_LEN = 32
SALT_LEN = 16

DEFAULT_RSA_BITS = 512
DEFAULT_GROUP_BITS = 256
DEFAULT_SUBGROUP_BITS = 160
RSA_MIN_BITS = 64


def powmod(base: int, exponent: int, modulus: int) -> int:
    """``powmod(base, exponent, modulus)`` for non-negative exponents, via GMP."""
    return int(gmpy2.powmod(base, exponent, modulus))


class CryptoError(ValueError):
    pass


class MessageOutOfRange(CryptoError):
    pass


class NonInvertibleBlinding(CryptoError):
    pass


class EmptyIdentity(CryptoError):
    pass


def digest(*parts) -> bytes:
    """Hash of the canonical encoding of ``parts`` (domain separation for free)."""
    return hashlib.new(HASH_NAME, codec.pack(list(parts))).digest()


def hash_to_int(data: bytes, modulus: int) -> int:
    """Map bytes to an integer in ``[1, modulus - 1]``.

    The hash is expanded in counter mode to 64 bits beyond the modulus size so
    the reduction bias is negligible.
    """
    need = (modulus.bit_length() + 64 + 7) // 8
    stream = b""
    counter = 0
    while len(stream) < need:
        stream += hashlib.new(HASH_NAME, counter.to_bytes(4, "big") + data).digest()
        counter += 1
    return int.from_bytes(stream[:need], "big") % (modulus - 1) + 1


# -- RSA blind signatures ---------------------------------------------------


@dataclass(frozen=True)
class RsaPublicKey:
    n: int
    e: int

    def to_wire(self):
        return [self.n, self.e]

    @classmethod
    def from_wire(cls, tree):
        return cls(*tree)


@dataclass(frozen=True)
class RsaKeyPair:
    modulus_n: int
    public_exponent_e: int
    private_exponent_d: int
    bit_length: int
    p: int = 0
    q: int = 0

    @property
    def public(self) -> RsaPublicKey:
        return RsaPublicKey(self.modulus_n, self.public_exponent_e)


def carmichael(p: int, q: int) -> int:
    return (p - 1) * (q - 1) // math.gcd(p - 1, q - 1)


def rsa_keypair_from_primes(p: int, q: int, e: int = 65537) -> RsaKeyPair:
    n = p * q
    lam = carmichael(p, q)
    if math.gcd(e, lam) != 1:
        raise CryptoError("public exponent not invertible mod lambda(n)")
    return RsaKeyPair(n, e, pow(e, -1, lam), n.bit_length(), p, q)


def generate_rsa_keypair(bits: int = DEFAULT_RSA_BITS, rng: random.Random = None, e: int = 65537) -> RsaKeyPair:
    if bits < RSA_MIN_BITS:
        raise CryptoError(f"RSA modulus must have at least {RSA_MIN_BITS} bits")
    rng = rng or random.Random(0)
    half = bits // 2
    while True:
        p = sympy.nextprime(rng.getrandbits(half) | (3 << (half - 2)))
        q = sympy.nextprime(rng.getrandbits(bits - half) | (3 << (bits - half - 2)))
        if p == q or math.gcd(e, carmichael(p, q)) != 1:
            continue
        key = rsa_keypair_from_primes(p, q, e)
        if key.bit_length == bits:
            return key


@functools.lru_cache(maxsize=None)
def default_rsa_keypair(bits: int = DEFAULT_RSA_BITS, seed: int = 0) -> RsaKeyPair:
    return generate_rsa_keypair(bits, random.Random(f"rsa:{bits}:{seed}"))


def draw_blinding_factor(key: RsaPublicKey, rng: random.Random) -> int:
    while True:
        r = rng.randrange(2, key.n - 1)
        if math.gcd(r, key.n) == 1:
            return r


def blind(message: int, key: RsaPublicKey, r: int) -> int:
    if not 0 < message < key.n:
        raise MessageOutOfRange(message)
    return message * powmod(r, key.e, key.n) % key.n


def sign_blinded(blinded: int, key: RsaKeyPair) -> int:
    n = key.modulus_n
    if not 0 < blinded < n:
        raise MessageOutOfRange(blinded)
    if not (key.p and key.q):
        return powmod(blinded, key.private_exponent_d, n)
    # CRT: roughly 3x faster than the direct exponentiation
    p, q, d = key.p, key.q, key.private_exponent_d
    sp = powmod(blinded, d % (p - 1), p)
    sq = powmod(blinded, d % (q - 1), q)
    return sq + (pow(q, -1, p) * (sp - sq) % p) * q


def unblind(blind_sig: int, r: int, key: RsaPublicKey) -> int:
    if math.gcd(r, key.n) != 1:
        raise NonInvertibleBlinding(r)
    return blind_sig * pow(r, -1, key.n) % key.n


def rsa_verify(message: int, signature: int, key: RsaPublicKey) -> bool:
    if not (isinstance(message, int) and isinstance(signature, int)):
        return False
    if not (0 <= message < key.n and 0 <= signature < key.n):
        return False
    return powmod(signature, key.e, key.n) == message


# -- Schnorr proofs of knowledge --------------------------------------------


@dataclass(frozen=True)
class SchnorrGroup:
    p: int
    q: int
    g: int

    def is_element(self, y: int) -> bool:
        return isinstance(y, int) and 1 < y < self.p and _in_subgroup(self.p, self.q, y)


# Verification is a pure function of its inputs; the same keys and proofs are
# checked by the receiver and again by the TA, so cache the arithmetic.
@functools.lru_cache(maxsize=1 << 16)
def _in_subgroup(p: int, q: int, y: int) -> bool:
    return powmod(y, q, p) == 1


def generate_schnorr_group(p_bits: int = DEFAULT_GROUP_BITS, q_bits: int = DEFAULT_SUBGROUP_BITS,
                           rng: random.Random = None) -> SchnorrGroup:
    rng = rng or random.Random(0)
    q = sympy.nextprime(rng.getrandbits(q_bits) | (1 << (q_bits - 1)))
    while True:
        cofactor = rng.getrandbits(p_bits - q_bits) | (1 << (p_bits - q_bits - 1))
        cofactor &= ~1
        p = q * cofactor + 1
        if p.bit_length() == p_bits and sympy.isprime(p):
            break
    h = 2
    while True:
        g = powmod(h, (p - 1) // q, p)
        if g != 1:
            return SchnorrGroup(p, q, g)
        h += 1


@functools.lru_cache(maxsize=None)
def default_group(p_bits: int = DEFAULT_GROUP_BITS, q_bits: int = DEFAULT_SUBGROUP_BITS) -> SchnorrGroup:
    return generate_schnorr_group(p_bits, q_bits, random.Random(f"group:{p_bits}:{q_bits}"))


@dataclass(frozen=True)
class SchnorrKeyPair:
    group: SchnorrGroup
    x: int
    y: int


def schnorr_keygen(group: SchnorrGroup, rng: random.Random) -> SchnorrKeyPair:
    x = rng.randrange(1, group.q)
    return SchnorrKeyPair(group, x, powmod(group.g, x, group.p))


@dataclass(frozen=True)
class SchnorrProof:
    t: int
    s: int

    def to_wire(self):
        return [self.t, self.s]

    @classmethod
    def from_wire(cls, tree):
        return cls(*tree)

    def to_bytes(self) -> bytes:
        return codec.pack(self.to_wire())


def _challenge(group: SchnorrGroup, y: int, t: int, context: bytes) -> int:
    h = digest("schnorr", group.p, group.q, group.g, y, t, context)
    return int.from_bytes(h, "big") % group.q


def schnorr_prove(key: SchnorrKeyPair, context: bytes, rng: random.Random) -> SchnorrProof:
    grp = key.group
    w = rng.randrange(1, grp.q)
    t = powmod(grp.g, w, grp.p)
    c = _challenge(grp, key.y, t, context)
    return SchnorrProof(t, (w + c * key.x) % grp.q)


def schnorr_verify(group: SchnorrGroup, y: int, context: bytes, proof: SchnorrProof) -> bool:
    if not isinstance(proof, SchnorrProof):
        return False
    if not (group.is_element(y) and isinstance(proof.t, int) and isinstance(proof.s, int)):
        return False
    if not (0 < proof.t < group.p and 0 <= proof.s < group.q):
        return False
    return _schnorr_holds(group, y, proof.t, proof.s, context)


@functools.lru_cache(maxsize=1 << 16)
def _schnorr_holds(group: SchnorrGroup, y: int, t: int, s: int, context: bytes) -> bool:
    c = _challenge(group, y, t, context)
    return powmod(group.g, s, group.p) == t * powmod(y, c, group.p) % group.p


# -- identity shares and commitments ----------------------------------------


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError("length mismatch")
    return bytes(x ^ y for x, y in zip(a, b))


@dataclass(frozen=True)
class IdentityShares:
    left: bytes
    right: bytes

    def reconstruct(self) -> bytes:
        return xor_bytes(self.left, self.right)


def split_identity(identity: bytes, rng: random.Random) -> IdentityShares:
    if not identity:
        raise EmptyIdentity()
    left = rng.randbytes(len(identity))
    return IdentityShares(left, xor_bytes(left, identity))


@dataclass(frozen=True)
class Commitment:
    """Salted hash commitment; only ``digest`` is ever published."""

    digest: bytes
    salt: bytes


def commitment_digest(payload: bytes, salt: bytes) -> bytes:
    return digest("commit", payload, salt)


def commit(payload: bytes, rng: random.Random) -> Commitment:
    salt = rng.randbytes(SALT_LEN)
    return Commitment(commitment_digest(payload, salt), salt)


def opens(commitment_digest_: bytes, payload: bytes, salt: bytes) -> bool:
    return commitment_digest(payload, salt) == commitment_digest_
