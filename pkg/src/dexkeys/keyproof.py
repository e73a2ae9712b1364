"""Non-interactive proof that a Paillier modulus satisfies gcd(n, phi(n)) = 1.

The verifier derives ``m1`` challenges from a hash of ``(n, salt)`` and the
prover answers each with an n-th root mod n.  When gcd(n, phi(n)) = 1 the
map ``x -> x^n`` permutes Z*_n and every challenge has a root; otherwise a
prime p dividing both n and phi(n) makes only a 1/p fraction of units n-th
powers.  Ruling out prime factors below ``alpha`` bounds that fraction, so
each round has soundness error below 1/alpha (6370^-11 ~ 2^-139 overall).

The verifier additionally rejects prime or perfect-power moduli; both are
public checks that need no transcript.
"""

from __future__ import annotations

import hashlib
import math
import secrets
from dataclasses import dataclass
from functools import lru_cache

import gmpy2

from .encoding import byte_len, hex_to_int, int_to_hex, pack_ints, unpack_ints
from .errors import ProofError, UnverifiedKeyError
from .paillier import PaillierPublicKey, PaillierSecretKey

ALPHA = 6370
M1 = 11
M2 = 11

# parameters usable with n = 35 and friends; alpha must not exceed the
# smallest prime factor of the modulus
TOY_PARAMS = {"alpha": 5, "m1": M1, "m2": M2}

_DOMAIN = b"dexkeys/paillier-gcd-proof/v1"


@dataclass(frozen=True)
class KeyCorrectnessProof:
    salt: int
    roots: tuple[int, ...]
    alpha: int = ALPHA
    m1: int = M1
    m2: int = M2

    def transcript(self) -> list[int]:
        return [self.alpha, self.m1, self.m2, self.salt, *self.roots]

    def to_bytes(self) -> bytes:
        return pack_ints(self.transcript())

    @classmethod
    def from_bytes(cls, data: bytes) -> "KeyCorrectnessProof":
        try:
            values = unpack_ints(data)
        except ValueError as exc:
            raise ProofError(f"malformed transcript: {exc}") from None
        return cls._from_transcript(values)

    @classmethod
    def _from_transcript(cls, values: list[int]) -> "KeyCorrectnessProof":
        if len(values) < 4:
            raise ProofError("malformed transcript: too short")
        alpha, m1, m2, salt, *roots = values
        return cls(salt=salt, roots=tuple(roots), alpha=alpha, m1=m1, m2=m2)

    def to_dict(self) -> dict:
        return {"transcript": [int_to_hex(v) for v in self.transcript()]}

    @classmethod
    def from_dict(cls, data: dict) -> "KeyCorrectnessProof":
        try:
            values = [hex_to_int(v) for v in data["transcript"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProofError(f"malformed transcript: {exc}") from None
        return cls._from_transcript(values)


@lru_cache(maxsize=8)
def _small_primes(bound: int) -> tuple[int, ...]:
    sieve = bytearray([1]) * bound
    sieve[0:2] = b"\x00\x00"
    for i in range(2, math.isqrt(bound) + 1):
        if sieve[i]:
            sieve[i * i::i] = bytearray(len(sieve[i * i::i]))
    return tuple(i for i in range(bound) if sieve[i])


def _challenge(n: int, salt: int, index: int) -> int:
    width = byte_len(n) + 16
    counter = 0
    while True:
        h = hashlib.shake_256()
        h.update(_DOMAIN)
        h.update(byte_len(n).to_bytes(4, "big") + n.to_bytes(byte_len(n), "big"))
        h.update(salt.to_bytes(32, "big"))
        h.update(index.to_bytes(4, "big") + counter.to_bytes(4, "big"))
        rho = int.from_bytes(h.digest(width), "big") % n
        if rho > 1 and math.gcd(rho, n) == 1:
            return rho
        counter += 1


def _has_small_factor(n: int, alpha: int) -> bool:
    return any(n % p == 0 for p in _small_primes(alpha))


def prove_correctness(sk: PaillierSecretKey, *, alpha: int = ALPHA, m1: int = M1, m2: int = M2,
                      salt: int | None = None) -> KeyCorrectnessProof:
    n = sk.public_key.n
    if sk.p == sk.q or math.gcd(n, sk.phi) != 1:
        raise ProofError("gcd(n, phi(n)) != 1; key is not a valid Paillier key")
    if _has_small_factor(n, alpha):
        raise ProofError(f"modulus has a prime factor below alpha={alpha}")
    if salt is None:
        salt = secrets.randbits(256)
    exponent = pow(n, -1, sk.phi)
    roots = tuple(int(gmpy2.powmod(_challenge(n, salt, i), exponent, n)) for i in range(m1))
    return KeyCorrectnessProof(salt=salt, roots=roots, alpha=alpha, m1=m1, m2=m2)


def verify_correctness(pk: PaillierPublicKey, proof: KeyCorrectnessProof, *,
                       alpha: int = ALPHA, m1: int = M1, m2: int = M2) -> bool:
    if not isinstance(proof, KeyCorrectnessProof):
        return False
    if (proof.alpha, proof.m1, proof.m2) != (alpha, m1, m2):
        return False
    n = pk.n
    if n < 3 or n % 2 == 0 or not 0 <= proof.salt < 1 << 256:
        return False
    if len(proof.roots) != m1:
        return False
    if gmpy2.is_prime(n, 64) or gmpy2.is_power(n):
        return False
    if _has_small_factor(n, alpha):
        return False
    for i, sigma in enumerate(proof.roots):
        if not 0 < sigma < n:
            return False
        if int(gmpy2.powmod(sigma, n, n)) != _challenge(n, proof.salt, i):
            return False
    return True


@dataclass(frozen=True)
class VerifiedPaillierKey(PaillierPublicKey):
    """A public key whose correctness proof has been checked."""

    proof: KeyCorrectnessProof | None = None


def accept_public_key(pk: PaillierPublicKey, proof: KeyCorrectnessProof, **params) -> VerifiedPaillierKey:
    if not verify_correctness(pk, proof, **params):
        raise UnverifiedKeyError("Paillier key correctness proof rejected")
    return VerifiedPaillierKey(pk.n, proof)
