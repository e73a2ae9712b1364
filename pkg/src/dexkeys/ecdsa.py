"""Two-party threshold ECDSA with multiplicative key shares.

The client (trusted dealer) splits the full key ``x`` into ``x1 * x2 = x``;
``x1`` travels only as a Paillier ciphertext under the exchange key.  Nonce
points ``R = k1 * k2 * G`` are agreed ahead of time by a DH-style exchange,
after which one message carrying ``(c3, R)`` lets the exchange finish::

    c3 = Enc(k2^-1 * r * x2 * x1 + k2^-1 * m + mu * q)
    s  = k1^-1 * Dec(c3) mod q

``mu`` is drawn from [0, q^2) and statistically hides the share product;
it vanishes mod q.
"""

from __future__ import annotations

import hashlib
import random
import secrets
import uuid
from dataclasses import dataclass, field

from . import paillier
from .curves import SECP256K1, CurveParams, Point, double_mul
from .errors import InvalidSignature, PointError, RetryWithNewEntry, UnverifiedKeyError, UsageError
from .keyproof import VerifiedPaillierKey
from .paillier import Ciphertext, EncNonce, PaillierPublicKey, PaillierSecretKey

_sysrand = secrets.SystemRandom()


def _rng(rng):
    return _sysrand if rng is None else rng


def random_scalar(q: int, rng: random.Random | None = None) -> int:
    return 1 + _rng(rng).randrange(q - 1)


def digest_scalar(message: bytes, curve: CurveParams = SECP256K1) -> int:
    """SHA-256 of the message, truncated to the order's bit length and reduced mod q."""
    e = int.from_bytes(hashlib.sha256(message).digest(), "big")
    excess = 256 - curve.q.bit_length()
    if excess > 0:
        e >>= excess
    return e % curve.q


@dataclass(frozen=True)
class Signature:
    r: int
    s: int

    def to_bytes(self, curve: CurveParams = SECP256K1) -> bytes:
        n = curve.scalar_bytes
        return self.r.to_bytes(n, "big") + self.s.to_bytes(n, "big")

    @classmethod
    def from_bytes(cls, data: bytes, curve: CurveParams = SECP256K1) -> "Signature":
        n = curve.scalar_bytes
        if len(data) != 2 * n:
            raise ValueError(f"signature must be {2 * n} bytes")
        return cls(int.from_bytes(data[:n], "big"), int.from_bytes(data[n:], "big"))

    def normalized(self, curve: CurveParams = SECP256K1) -> "Signature":
        if self.s > (curve.q - 1) // 2:
            return Signature(self.r, curve.q - self.s)
        return self


def verify_ecdsa(public_key: Point, m: int, sig: Signature) -> bool:
    curve = public_key.curve
    q = curve.q
    if public_key.is_identity() or not (0 < sig.r < q and 0 < sig.s < q):
        return False
    w = pow(sig.s, -1, q)
    X = double_mul(m * w % q, curve.G, sig.r * w % q, public_key)
    return not X.is_identity() and X.x % q == sig.r


def sign_ecdsa(x: int, m: int, k: int, curve: CurveParams = SECP256K1, *, low_s: bool = True) -> Signature:
    """Single-party ECDSA with an explicit nonce."""
    q = curve.q
    R = k * curve.G
    r = R.x % q
    s = pow(k, -1, q) * (m + r * x) % q
    if r == 0 or s == 0:
        raise RetryWithNewEntry("degenerate nonce")
    sig = Signature(r, s)
    return sig.normalized(curve) if low_s else sig


def sign_full_key(x: int, m: int, curve: CurveParams = SECP256K1) -> Signature:
    while True:
        try:
            return sign_ecdsa(x, m, random_scalar(curve.q), curve)
        except RetryWithNewEntry:
            continue


# ---------------------------------------------------------------- API keys

@dataclass(frozen=True)
class ApiKeyEcdsa:
    key_id: str
    curve: CurveParams
    client_share: int
    enc_server_share: Ciphertext
    public_key: Point
    paillier_pk: PaillierPublicKey


def check_paillier_size(pk: PaillierPublicKey, curve: CurveParams) -> None:
    if pk.n.bit_length() <= 3 * curve.q.bit_length() + 2:
        raise ValueError(
            f"Paillier modulus of {pk.n.bit_length()} bits is too small for {curve.name}; "
            f"need more than {3 * curve.q.bit_length() + 2}"
        )


def generate_api_key(x: int, paillier_pk: VerifiedPaillierKey, *, curve: CurveParams = SECP256K1,
                     rng: random.Random | None = None, key_id: str | None = None,
                     resharing: int | None = None, nonce: EncNonce | None = None,
                     audit: bool = False) -> tuple[ApiKeyEcdsa, dict | None]:
    """Split ``x`` into a client share and an encrypted exchange share.

    ``resharing`` pins the random resharing scalar (test hook).  With
    ``audit=True`` the plaintext exchange share is returned alongside the
    key; production callers leave it off.
    """
    q = curve.q
    if not 0 < x < q:
        raise ValueError("secret key out of range (0, q)")
    if not isinstance(paillier_pk, VerifiedPaillierKey):
        raise UnverifiedKeyError("Paillier key has not passed its correctness proof")
    check_paillier_size(paillier_pk, curve)
    r = resharing if resharing is not None else random_scalar(q, rng)
    if not 0 < r < q:
        raise ValueError("resharing scalar out of range (0, q)")
    # x1 starts at 1 and x2 at x; both are rescaled by r
    x1 = r
    x2 = x * pow(r, -1, q) % q
    if nonce is None:
        nonce = paillier.precompute_nonce(paillier_pk, rng)
    pk = PaillierPublicKey(paillier_pk.n)
    key = ApiKeyEcdsa(
        key_id=key_id or uuid.uuid4().hex,
        curve=curve,
        client_share=x2,
        enc_server_share=paillier.encrypt(pk, x1, nonce),
        public_key=x * curve.G,
        paillier_pk=pk,
    )
    return key, ({"x1": x1} if audit else None)


# ---------------------------------------------------- nonce-point agreement

def _check_received(point: Point) -> None:
    if point.is_identity():
        raise PointError("received the identity point")


def dh_client_init(curve: CurveParams = SECP256K1, rng: random.Random | None = None,
                   k2: int | None = None) -> tuple[int, Point]:
    k2 = random_scalar(curve.q, rng) if k2 is None else k2
    return k2, k2 * curve.G


def dh_server_respond(R2: Point, curve: CurveParams = SECP256K1, rng: random.Random | None = None,
                      k1: int | None = None) -> tuple[int, Point, Point]:
    _check_received(R2)
    k1 = random_scalar(curve.q, rng) if k1 is None else k1
    R = k1 * R2
    if R.is_identity():
        raise PointError("degenerate nonce point")
    return k1, k1 * curve.G, R


def dh_client_complete(k2: int, R1: Point) -> Point:
    _check_received(R1)
    R = k2 * R1
    if R.is_identity():
        raise PointError("degenerate nonce point")
    return R


@dataclass(eq=False)
class ClientEntry:
    """Client half of a prepared point; destroyed by :func:`compute_presignature`."""

    R: Point
    k2: int
    nonce: EncNonce
    used: bool = field(default=False)


@dataclass(frozen=True)
class Presignature:
    c3: Ciphertext
    R: Point

    def to_bytes(self) -> bytes:
        """Fixed-width c3 (bytes of n^2) followed by the 33-byte compressed R."""
        return self.c3.to_bytes() + self.R.encode()

    @classmethod
    def from_bytes(cls, data: bytes, pk: PaillierPublicKey, curve: CurveParams = SECP256K1) -> "Presignature":
        width = pk.ciphertext_bytes
        if len(data) != width + 1 + curve.coord_bytes:
            raise ValueError("presignature has the wrong length")
        c3 = paillier.Ciphertext.from_bytes(pk, data[:width])
        return cls(c3, curve.decode_point(data[width:]))


def compute_presignature(key: ApiKeyEcdsa, entry: ClientEntry, m: int, *,
                         rng: random.Random | None = None, mask: int | None = None) -> Presignature:
    if entry.used:
        raise UsageError("pool entry already used")
    entry.used = True
    curve = key.curve
    q = curve.q
    R, k2, nonce = entry.R, entry.k2, entry.nonce
    # destroy the entry before anything leaves this function
    entry.k2 = 0
    entry.nonce = None
    r = R.x % q
    if r == 0:
        raise RetryWithNewEntry("r = 0")
    if mask is None:
        mask = _rng(rng).randrange(q * q)
    k2_inv = pow(k2, -1, q)
    pk = key.paillier_pk
    share_term = paillier.hom_mul_scalar(pk, key.enc_server_share, k2_inv * r * key.client_share % q)
    plain_term = paillier.encrypt(pk, k2_inv * (m % q) % q + mask * q, nonce)
    return Presignature(paillier.hom_add(pk, share_term, plain_term), R)


def complete_signature(paillier_sk: PaillierSecretKey, k1: int, presig: Presignature, m: int,
                       public_key: Point, *, low_s: bool = True) -> Signature:
    """Finish a presignature; the result is released only if it verifies."""
    curve = public_key.curve
    q = curve.q
    r = presig.R.x % q
    s = pow(k1, -1, q) * paillier.decrypt(paillier_sk, presig.c3) % q
    if r == 0 or s == 0:
        raise InvalidSignature("degenerate signature")
    sig = Signature(r, s)
    if low_s:
        sig = sig.normalized(curve)
    if not verify_ecdsa(public_key, m % q, sig):
        raise InvalidSignature("presignature does not complete to a valid signature")
    return sig
