"""Full account keys: the user's own secret, used to mint API keys and sign policies."""

from __future__ import annotations

import secrets
from dataclasses import dataclass

from . import ecdsa, ed25519
from .curves import get_curve

SCHEMES = ("ecdsa", "eddsa")


@dataclass
class AccountKey:
    scheme: str
    secret: bytearray
    curve: str = "secp256k1"

    @classmethod
    def generate(cls, scheme: str = "ecdsa", curve: str = "secp256k1") -> "AccountKey":
        if scheme == "ecdsa":
            q = get_curve(curve).q
            x = ecdsa.random_scalar(q)
            return cls(scheme, bytearray(x.to_bytes(32, "big")), curve)
        if scheme == "eddsa":
            return cls(scheme, bytearray(secrets.token_bytes(32)), "ed25519")
        raise ValueError(f"unknown scheme {scheme!r}")

    @property
    def scalar(self) -> int:
        return int.from_bytes(self.secret, "big")

    def public_key_hex(self) -> str:
        if self.scheme == "ecdsa":
            return (self.scalar * get_curve(self.curve).G).encode().hex()
        return ed25519.public_key(bytes(self.secret)).hex()

    def sign_digest(self, digest: bytes) -> bytes:
        if self.scheme == "ecdsa":
            c = get_curve(self.curve)
            m = int.from_bytes(digest, "big") % c.q
            return ecdsa.sign_full_key(self.scalar, m, c).to_bytes(c)
        return ed25519.sign(bytes(self.secret), digest)

    def wipe(self) -> None:
        for i in range(len(self.secret)):
            self.secret[i] = 0

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "curve": self.curve, "secret": bytes(self.secret).hex()}

    @classmethod
    def from_dict(cls, data: dict) -> "AccountKey":
        return cls(data["scheme"], bytearray.fromhex(data["secret"]), data.get("curve", "secp256k1"))


def verify_account_signature(scheme: str, curve: str, public_hex: str, digest: bytes, signature: bytes) -> bool:
    try:
        if scheme == "ecdsa":
            c = get_curve(curve)
            pub = c.decode_point(bytes.fromhex(public_hex))
            sig = ecdsa.Signature.from_bytes(signature, c)
            return ecdsa.verify_ecdsa(pub, int.from_bytes(digest, "big") % c.q, sig)
        if scheme == "eddsa":
            return ed25519.verify(bytes.fromhex(public_hex), digest, signature)
    except ValueError:
        return False
    return False
