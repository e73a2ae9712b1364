"""Ed25519 group arithmetic, encodings, and single-party sign/verify."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import PointError

P = 2**255 - 19
L = 2**252 + 27742317777372353535851937790883648493
D = -121665 * pow(121666, -1, P) % P
SQRT_M1 = pow(2, (P - 1) // 4, P)


def _recover_x(y: int, sign: int) -> int | None:
    if y >= P:
        return None
    x2 = (y * y - 1) * pow(D * y * y + 1, -1, P) % P
    if x2 == 0:
        return None if sign else 0
    x = pow(x2, (P + 3) // 8, P)
    if (x * x - x2) % P:
        x = x * SQRT_M1 % P
    if (x * x - x2) % P:
        return None
    if x & 1 != sign:
        x = P - x
    return x


@dataclass(frozen=True, eq=False)
class EdPoint:
    """Extended twisted-Edwards coordinates (X:Y:Z:T), x = X/Z, y = Y/Z, xy = T/Z."""

    X: int
    Y: int
    Z: int
    T: int

    def __add__(self, other: "EdPoint") -> "EdPoint":
        A = (self.Y - self.X) * (other.Y - other.X) % P
        B = (self.Y + self.X) * (other.Y + other.X) % P
        C = 2 * self.T * other.T * D % P
        Dd = 2 * self.Z * other.Z % P
        E, F, G, H = B - A, Dd - C, Dd + C, B + A
        return EdPoint(E * F % P, G * H % P, F * G % P, E * H % P)

    def double(self) -> "EdPoint":
        A = self.X * self.X % P
        B = self.Y * self.Y % P
        C = 2 * self.Z * self.Z % P
        H = A + B
        E = H - (self.X + self.Y) ** 2
        G = A - B
        F = C + G
        return EdPoint(E * F % P, G * H % P, F * G % P, E * H % P)

    def __neg__(self) -> "EdPoint":
        return EdPoint(-self.X % P, self.Y, self.Z, -self.T % P)

    def __sub__(self, other: "EdPoint") -> "EdPoint":
        return self + (-other)

    def __rmul__(self, k: int) -> "EdPoint":
        if k < 0:
            return (-k) * (-self)
        acc = IDENTITY
        addend = self
        while k:
            if k & 1:
                acc = acc + addend
            addend = addend.double()
            k >>= 1
        return acc

    __mul__ = __rmul__

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EdPoint):
            return NotImplemented
        return (self.X * other.Z - other.X * self.Z) % P == 0 and (self.Y * other.Z - other.Y * self.Z) % P == 0

    def __hash__(self) -> int:
        return hash(self.encode())

    def is_identity(self) -> bool:
        return self == IDENTITY

    def has_small_order(self) -> bool:
        return (8 * self).is_identity()

    def in_prime_subgroup(self) -> bool:
        return (L * self).is_identity()

    def encode(self) -> bytes:
        zi = pow(self.Z, -1, P)
        x = self.X * zi % P
        y = self.Y * zi % P
        return (y | ((x & 1) << 255)).to_bytes(32, "little")

    def __repr__(self) -> str:
        return f"EdPoint({self.encode().hex()})"


IDENTITY = EdPoint(0, 1, 1, 0)
_by = 4 * pow(5, -1, P) % P
_bx = _recover_x(_by, 0)
B = EdPoint(_bx, _by, 1, _bx * _by % P)


def decode_point(data: bytes) -> EdPoint:
    if len(data) != 32:
        raise PointError("Edwards points are 32 bytes")
    v = int.from_bytes(data, "little")
    y = v & ((1 << 255) - 1)
    x = _recover_x(y, v >> 255)
    if x is None:
        raise PointError("not a valid Edwards point encoding")
    return EdPoint(x, y, 1, x * y % P)


def decode_group_element(data: bytes) -> EdPoint:
    """Decode a point received from a peer; rejects identity, small-order and mixed-order points."""
    pt = decode_point(data)
    if pt.is_identity() or pt.has_small_order():
        raise PointError("identity or low-order point")
    if not pt.in_prime_subgroup():
        raise PointError("point has a torsion component")
    return pt


def scalar_to_bytes(s: int) -> bytes:
    return (s % L).to_bytes(32, "little")


def scalar_from_bytes(data: bytes) -> int:
    if len(data) != 32:
        raise ValueError("scalars are 32 bytes")
    s = int.from_bytes(data, "little")
    if s >= L:
        raise ValueError("non-canonical scalar")
    return s


def sha512_int(*parts: bytes) -> int:
    return int.from_bytes(hashlib.sha512(b"".join(parts)).digest(), "little")


def challenge(R: EdPoint | bytes, A: EdPoint | bytes, message: bytes) -> int:
    r_enc = R if isinstance(R, bytes) else R.encode()
    a_enc = A if isinstance(A, bytes) else A.encode()
    return sha512_int(r_enc, a_enc, message) % L


def secret_expand(seed: bytes) -> tuple[int, bytes]:
    """Return the clamped signing scalar and the nonce prefix for a 32-byte seed."""
    if len(seed) != 32:
        raise ValueError("Ed25519 secret keys are 32 bytes")
    h = hashlib.sha512(seed).digest()
    a = int.from_bytes(h[:32], "little")
    a &= (1 << 254) - 8
    a |= 1 << 254
    return a, h[32:]


def public_key(seed: bytes) -> bytes:
    a, _ = secret_expand(seed)
    return (a * B).encode()


def sign(seed: bytes, message: bytes) -> bytes:
    a, prefix = secret_expand(seed)
    A = (a * B).encode()
    r = sha512_int(prefix, message) % L
    R = (r * B).encode()
    s = (r + challenge(R, A, message) * a) % L
    return R + scalar_to_bytes(s)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    """Cofactorless verification: [s]B == R + [h]A."""
    if len(public) != 32 or len(signature) != 64:
        return False
    try:
        A = decode_point(public)
        R = decode_point(signature[:32])
        s = scalar_from_bytes(signature[32:])
    except (PointError, ValueError):
        return False
    h = challenge(signature[:32], public, message)
    return s * B == R + h * A
