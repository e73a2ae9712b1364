"""Paillier encryption with precomputable randomness (g = n + 1).

Encryption is split in two: :func:`precompute_nonce` does the expensive
``r^n mod n^2`` ahead of time, leaving :func:`encrypt` with a single
multiplication.  A nonce may feed exactly one encryption.
"""

from __future__ import annotations

import hashlib
import math
import random
import secrets
from dataclasses import dataclass, field
from functools import cached_property

import gmpy2

from .encoding import hex_to_int, int_to_hex
from .errors import MalformedCiphertext, UsageError

SUPPORTED_BITS = (512, 1024, 2048, 3072, 4096, 8192)
DEFAULT_BITS = 2048
MR_ROUNDS = 64

_sysrand = secrets.SystemRandom()


def _rng(rng: random.Random | None) -> random.Random:
    return _sysrand if rng is None else rng


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int

    @cached_property
    def n_sq(self) -> int:
        return self.n * self.n

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    @property
    def ciphertext_bytes(self) -> int:
        """Fixed width of a serialized ciphertext (bytes of n^2)."""
        return (self.n_sq.bit_length() + 7) // 8

    def fingerprint(self) -> str:
        return hashlib.sha256(b"dexkeys/paillier-pk\x00" + int_to_hex(self.n).encode()).hexdigest()

    def to_dict(self) -> dict:
        return {"n": int_to_hex(self.n)}

    @classmethod
    def from_dict(cls, data: dict) -> "PaillierPublicKey":
        return cls(hex_to_int(data["n"]))


@dataclass(frozen=True)
class PaillierSecretKey:
    p: int
    q: int

    def __post_init__(self) -> None:
        if self.p == self.q:
            raise ValueError("Paillier primes must be distinct")
        if math.gcd(self.p * self.q, (self.p - 1) * (self.q - 1)) != 1:
            raise ValueError("gcd(n, phi(n)) != 1")

    @cached_property
    def public_key(self) -> PaillierPublicKey:
        return PaillierPublicKey(self.p * self.q)

    @cached_property
    def lam(self) -> int:
        return math.lcm(self.p - 1, self.q - 1)

    @cached_property
    def phi(self) -> int:
        return (self.p - 1) * (self.q - 1)

    @cached_property
    def mu(self) -> int:
        # with g = n + 1, L(g^lam mod n^2) = lam mod n
        return pow(self.lam, -1, self.public_key.n)

    def to_dict(self) -> dict:
        return {"p": int_to_hex(self.p), "q": int_to_hex(self.q)}

    @classmethod
    def from_dict(cls, data: dict) -> "PaillierSecretKey":
        return cls(hex_to_int(data["p"]), hex_to_int(data["q"]))


@dataclass(frozen=True)
class Ciphertext:
    value: int
    n: int

    def to_bytes(self) -> bytes:
        width = ((self.n * self.n).bit_length() + 7) // 8
        return self.value.to_bytes(width, "big")

    @classmethod
    def from_bytes(cls, pk: PaillierPublicKey, data: bytes) -> "Ciphertext":
        if len(data) != pk.ciphertext_bytes:
            raise MalformedCiphertext(f"ciphertext must be {pk.ciphertext_bytes} bytes, got {len(data)}")
        return checked_ciphertext(pk, int.from_bytes(data, "big"))

    def to_hex(self) -> str:
        return int_to_hex(self.value)


def checked_ciphertext(pk: PaillierPublicKey, value: int) -> Ciphertext:
    if not 0 < value < pk.n_sq or math.gcd(value, pk.n) != 1:
        raise MalformedCiphertext("ciphertext outside Z*_{n^2}")
    return Ciphertext(value, pk.n)


@dataclass(eq=False)
class EncNonce:
    """Encryption randomness with its n-th power already computed."""

    r_enc: int
    r_pow: int
    n: int
    used: bool = field(default=False)

    def to_dict(self) -> dict:
        return {"r_enc": int_to_hex(self.r_enc), "r_pow": int_to_hex(self.r_pow)}


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        # top two bits set so that the product has exactly 2 * bits bits
        cand = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if gmpy2.is_prime(cand, MR_ROUNDS):
            return cand


def keygen(bits: int = DEFAULT_BITS, rng: random.Random | None = None, *,
           insecure: bool = False) -> tuple[PaillierPublicKey, PaillierSecretKey]:
    if bits not in SUPPORTED_BITS and not (insecure and 16 <= bits < 512 and bits % 2 == 0):
        raise ValueError(f"unsupported Paillier modulus size {bits}")
    rng = _rng(rng)
    half = bits // 2
    while True:
        p = _random_prime(half, rng)
        q = _random_prime(bits - half, rng)
        if p == q or math.gcd(p * q, (p - 1) * (q - 1)) != 1:
            continue
        sk = PaillierSecretKey(p, q)
        return sk.public_key, sk


def keypair_from_primes(p: int, q: int, *, insecure: bool = False) -> tuple[PaillierPublicKey, PaillierSecretKey]:
    """Build a keypair from known primes; moduli under 512 bits need ``insecure``."""
    if (p * q).bit_length() < 512 and not insecure:
        raise ValueError("toy Paillier keys require insecure test mode")
    for x in (p, q):
        if not gmpy2.is_prime(x, MR_ROUNDS):
            raise ValueError(f"{x} is not prime")
    sk = PaillierSecretKey(p, q)
    return sk.public_key, sk


def make_nonce(pk: PaillierPublicKey, r_enc: int) -> EncNonce:
    if not 1 < r_enc < pk.n or math.gcd(r_enc, pk.n) != 1:
        raise ValueError("nonce must lie in (1, n) and be a unit mod n")
    return EncNonce(r_enc, int(gmpy2.powmod(r_enc, pk.n, pk.n_sq)), pk.n)


def precompute_nonce(pk: PaillierPublicKey, rng: random.Random | None = None) -> EncNonce:
    rng = _rng(rng)
    while True:
        r = rng.randrange(2, pk.n)
        if math.gcd(r, pk.n) == 1:
            return make_nonce(pk, r)


def encrypt(pk: PaillierPublicKey, m: int, nonce: EncNonce) -> Ciphertext:
    if not 0 <= m < pk.n:
        raise ValueError("plaintext out of range [0, n)")
    if nonce.n != pk.n:
        raise UsageError("nonce was generated for a different public key")
    if nonce.used:
        raise UsageError("encryption nonce already consumed")
    nonce.used = True
    n_sq = pk.n_sq
    return Ciphertext((1 + m * pk.n) % n_sq * nonce.r_pow % n_sq, pk.n)


def decrypt(sk: PaillierSecretKey, c: Ciphertext) -> int:
    pk = sk.public_key
    if c.n != pk.n:
        raise UsageError("ciphertext belongs to a different key")
    if not 0 < c.value < pk.n_sq or math.gcd(c.value, pk.n) != 1:
        raise MalformedCiphertext("ciphertext outside Z*_{n^2}")
    u = int(gmpy2.powmod(c.value, sk.lam, pk.n_sq))
    return (u - 1) // pk.n * sk.mu % pk.n


def _same_key(pk: PaillierPublicKey, *cts: Ciphertext) -> None:
    for c in cts:
        if c.n != pk.n:
            raise UsageError("operands encrypted under different Paillier keys")


def hom_add(pk: PaillierPublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    _same_key(pk, c1, c2)
    return Ciphertext(c1.value * c2.value % pk.n_sq, pk.n)


def hom_mul_scalar(pk: PaillierPublicKey, c: Ciphertext, a: int) -> Ciphertext:
    _same_key(pk, c)
    if a < 0:
        raise ValueError("scalar must be non-negative")
    return Ciphertext(int(gmpy2.powmod(c.value, a, pk.n_sq)), pk.n)
