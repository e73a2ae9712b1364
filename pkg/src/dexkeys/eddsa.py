"""Two-party threshold Ed25519 with additive key shares.

Shares satisfy ``client + server = a (mod L)``.  The nonce point is the sum
of a client and a server point, so each side adds its own nonce and share
term to ``s``; no homomorphic work happens at signing time.  Nonces are
random, so outputs are valid but no longer deterministic.
"""

from __future__ import annotations

import random
import secrets
import uuid
from dataclasses import dataclass, field

from . import ed25519, paillier
from .ed25519 import B, L, EdPoint
from .errors import InvalidSignature, PointError, UnverifiedKeyError, UsageError
from .keyproof import VerifiedPaillierKey
from .paillier import Ciphertext, PaillierPublicKey

_sysrand = secrets.SystemRandom()


def _nonzero_scalar(rng: random.Random | None) -> int:
    return 1 + (_sysrand if rng is None else rng).randrange(L - 1)


@dataclass(frozen=True)
class ApiKeyEddsa:
    key_id: str
    client_share: int
    enc_server_share: Ciphertext
    public_key: EdPoint
    paillier_pk: PaillierPublicKey
    L: int = L

    @property
    def public_bytes(self) -> bytes:
        return self.public_key.encode()


def generate_api_key_ed(seed: bytes, paillier_pk: VerifiedPaillierKey, *,
                        rng: random.Random | None = None, key_id: str | None = None,
                        client_share: int | None = None, audit: bool = False) -> tuple[ApiKeyEddsa, dict | None]:
    """Split the signing scalar of an Ed25519 secret key into additive shares.

    The nonce-prefix half of the expanded secret is discarded: threshold
    signing uses fresh random nonces instead.
    """
    if not isinstance(paillier_pk, VerifiedPaillierKey):
        raise UnverifiedKeyError("Paillier key has not passed its correctness proof")
    if paillier_pk.n <= L:
        raise ValueError("Paillier modulus must exceed the Ed25519 group order")
    a, _prefix = ed25519.secret_expand(seed)
    rng_ = _sysrand if rng is None else rng
    r = rng_.randrange(L) if client_share is None else client_share % L
    server_share = (a - r) % L
    pk = PaillierPublicKey(paillier_pk.n)
    key = ApiKeyEddsa(
        key_id=key_id or uuid.uuid4().hex,
        client_share=r,
        enc_server_share=paillier.encrypt(pk, server_share, paillier.precompute_nonce(pk, rng)),
        public_key=a * B,
        paillier_pk=pk,
    )
    return key, ({"server_share": server_share, "a": a % L} if audit else None)


@dataclass(eq=False)
class EdClientEntry:
    R: EdPoint
    r_c: int
    used: bool = field(default=False)


@dataclass(eq=False)
class EdServerEntry:
    R: EdPoint
    r_s: int


def ed_client_init(rng: random.Random | None = None, r_c: int | None = None) -> tuple[int, EdPoint]:
    r_c = _nonzero_scalar(rng) if r_c is None else r_c
    return r_c, r_c * B


def ed_server_respond(R_c: EdPoint | bytes, rng: random.Random | None = None,
                      r_s: int | None = None) -> tuple[EdServerEntry, EdPoint]:
    R_c = _received(R_c)
    r_s = _nonzero_scalar(rng) if r_s is None else r_s
    R_s = r_s * B
    return EdServerEntry(R_c + R_s, r_s), R_s


def ed_client_complete(r_c: int, R_c: EdPoint, R_s: EdPoint | bytes) -> EdClientEntry:
    R_s = _received(R_s)
    R = R_c + R_s
    if R.is_identity():
        raise PointError("degenerate nonce point")
    return EdClientEntry(R, r_c)


def _received(point: EdPoint | bytes) -> EdPoint:
    if isinstance(point, bytes):
        return ed25519.decode_group_element(point)
    if point.is_identity() or point.has_small_order() or not point.in_prime_subgroup():
        raise PointError("identity or low-order point")
    return point


def ed_prepare(client_rng: random.Random | None = None, server_rng: random.Random | None = None, *,
               r_c: int | None = None, r_s: int | None = None) -> tuple[EdClientEntry, EdServerEntry]:
    """Run both halves of the preparation round in-process."""
    r_c, R_c = ed_client_init(client_rng, r_c)
    server_entry, R_s = ed_server_respond(R_c, server_rng, r_s)
    return ed_client_complete(r_c, R_c, R_s), server_entry


def ed_client_sign(key: ApiKeyEddsa, entry: EdClientEntry, message: bytes) -> int:
    if entry.used:
        raise UsageError("pool entry already used")
    entry.used = True
    r_c, entry.r_c = entry.r_c, 0
    h = ed25519.challenge(entry.R, key.public_key, message)
    return (r_c + h * key.client_share) % L


def ed_server_complete(server_share: int, entry: EdServerEntry, message: bytes,
                       public_key: EdPoint | bytes, s_client: int) -> tuple[bytes, int]:
    """Add the server's nonce and share term; returns ``(R bytes, s)`` once it verifies."""
    a_bytes = public_key if isinstance(public_key, bytes) else public_key.encode()
    r_s, entry.r_s = entry.r_s, 0
    R_bytes = entry.R.encode()
    h = ed25519.challenge(R_bytes, a_bytes, message)
    s = (s_client + r_s + h * server_share) % L
    if not ed25519.verify(a_bytes, message, R_bytes + ed25519.scalar_to_bytes(s)):
        raise InvalidSignature("partial signature does not complete to a valid signature")
    return R_bytes, s
