"""Short-Weierstrass curve arithmetic (secp256k1 by default) with SEC1 encoding.

Points are immutable affine values; scalar multiplication runs in Jacobian
coordinates with a 4-bit fixed window.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import PointError


@dataclass(frozen=True)
class CurveParams:
    name: str
    p: int
    a: int
    b: int
    q: int  # group order
    gx: int
    gy: int

    @property
    def G(self) -> "Point":
        return Point(self, self.gx, self.gy)

    @property
    def identity(self) -> "Point":
        return Point(self, None, None)

    @property
    def scalar_bytes(self) -> int:
        return (self.q.bit_length() + 7) // 8

    @property
    def coord_bytes(self) -> int:
        return (self.p.bit_length() + 7) // 8

    def is_on_curve(self, x: int, y: int) -> bool:
        p = self.p
        return 0 <= x < p and 0 <= y < p and (y * y - (x * x * x + self.a * x + self.b)) % p == 0

    def decode_point(self, data: bytes) -> "Point":
        """Parse a compressed (33 B) or uncompressed (65 B) SEC1 point; never the identity."""
        size = self.coord_bytes
        if len(data) == 1 + size and data[0] in (2, 3):
            x = int.from_bytes(data[1:], "big")
            if x >= self.p:
                raise PointError("x coordinate out of range")
            y2 = (x * x * x + self.a * x + self.b) % self.p
            y = pow(y2, (self.p + 1) // 4, self.p)
            if y * y % self.p != y2:
                raise PointError("point not on curve")
            if y & 1 != data[0] & 1:
                y = self.p - y
            return Point(self, x, y)
        if len(data) == 1 + 2 * size and data[0] == 4:
            x = int.from_bytes(data[1:1 + size], "big")
            y = int.from_bytes(data[1 + size:], "big")
            if not self.is_on_curve(x, y):
                raise PointError("point not on curve")
            return Point(self, x, y)
        raise PointError("bad SEC1 point encoding")

    def __repr__(self) -> str:
        return f"CurveParams({self.name})"


SECP256K1 = CurveParams(
    name="secp256k1",
    p=2**256 - 2**32 - 977,
    a=0,
    b=7,
    q=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141,
    gx=0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
    gy=0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
)

P256 = CurveParams(
    name="secp256r1",
    p=0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF,
    a=-3,
    b=0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B,
    q=0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551,
    gx=0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296,
    gy=0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5,
)

CURVES = {c.name: c for c in (SECP256K1, P256)}


def get_curve(name: str) -> CurveParams:
    try:
        return CURVES[name]
    except KeyError:
        raise ValueError(f"unknown curve {name!r}") from None


# Jacobian helpers: (X, Y, Z) with x = X/Z^2, y = Y/Z^3; Z == 0 is the identity

def _jdouble(c: CurveParams, P):
    X, Y, Z = P
    if Z == 0 or Y == 0:
        return (1, 1, 0)
    p = c.p
    YY = Y * Y % p
    S = 4 * X * YY % p
    if c.a == 0:
        M = 3 * X * X % p
    else:
        ZZ = Z * Z % p
        M = (3 * X * X + c.a * ZZ * ZZ) % p
    X3 = (M * M - 2 * S) % p
    Y3 = (M * (S - X3) - 8 * YY * YY) % p
    Z3 = 2 * Y * Z % p
    return (X3, Y3, Z3)


def _jadd(c: CurveParams, P, Q):
    X1, Y1, Z1 = P
    X2, Y2, Z2 = Q
    if Z1 == 0:
        return Q
    if Z2 == 0:
        return P
    p = c.p
    Z1Z1 = Z1 * Z1 % p
    Z2Z2 = Z2 * Z2 % p
    U1 = X1 * Z2Z2 % p
    U2 = X2 * Z1Z1 % p
    S1 = Y1 * Z2 * Z2Z2 % p
    S2 = Y2 * Z1 * Z1Z1 % p
    if U1 == U2:
        if S1 != S2:
            return (1, 1, 0)
        return _jdouble(c, P)
    H = (U2 - U1) % p
    R = (S2 - S1) % p
    HH = H * H % p
    HHH = H * HH % p
    V = U1 * HH % p
    X3 = (R * R - HHH - 2 * V) % p
    Y3 = (R * (V - X3) - S1 * HHH) % p
    Z3 = H * Z1 * Z2 % p
    return (X3, Y3, Z3)


def _to_affine(c: CurveParams, P) -> "Point":
    X, Y, Z = P
    if Z == 0:
        return c.identity
    zi = pow(Z, -1, c.p)
    zi2 = zi * zi % c.p
    return Point(c, X * zi2 % c.p, Y * zi2 * zi % c.p)


def _jmul(c: CurveParams, P, k: int):
    if k == 0 or P[2] == 0:
        return (1, 1, 0)
    table = [(1, 1, 0), P]
    for _ in range(14):
        table.append(_jadd(c, table[-1], P))
    acc = (1, 1, 0)
    for shift in range((k.bit_length() + 3) // 4 * 4 - 4, -1, -4):
        for _ in range(4):
            acc = _jdouble(c, acc)
        digit = (k >> shift) & 0xF
        if digit:
            acc = _jadd(c, acc, table[digit])
    return acc


@dataclass(frozen=True)
class Point:
    curve: CurveParams
    x: int | None
    y: int | None

    def is_identity(self) -> bool:
        return self.x is None

    def _jac(self):
        return (1, 1, 0) if self.x is None else (self.x, self.y, 1)

    def __add__(self, other: "Point") -> "Point":
        if other.curve != self.curve:
            raise ValueError("points on different curves")
        return _to_affine(self.curve, _jadd(self.curve, self._jac(), other._jac()))

    def __neg__(self) -> "Point":
        if self.x is None:
            return self
        return Point(self.curve, self.x, (-self.y) % self.curve.p)

    def __sub__(self, other: "Point") -> "Point":
        return self + (-other)

    def __rmul__(self, k: int) -> "Point":
        k %= self.curve.q
        return _to_affine(self.curve, _jmul(self.curve, self._jac(), k))

    __mul__ = __rmul__

    def encode(self, compressed: bool = True) -> bytes:
        if self.x is None:
            raise PointError("the identity has no SEC1 encoding")
        size = self.curve.coord_bytes
        if compressed:
            return bytes([2 | (self.y & 1)]) + self.x.to_bytes(size, "big")
        return b"\x04" + self.x.to_bytes(size, "big") + self.y.to_bytes(size, "big")

    def hex(self) -> str:
        return self.encode().hex()

    def __repr__(self) -> str:
        if self.x is None:
            return f"Point({self.curve.name}, identity)"
        return f"Point({self.curve.name}, {self.encode().hex()})"


def double_mul(a: int, P: Point, b: int, Q: Point) -> Point:
    """a*P + b*Q (used by verification)."""
    c = P.curve
    return _to_affine(c, _jadd(c, _jmul(c, P._jac(), a % c.q), _jmul(c, Q._jac(), b % c.q)))
