import pytest
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec
from hypothesis import given, strategies as st

import oracles
from dexkeys.curves import P256, SECP256K1, double_mul
from dexkeys.errors import PointError

scalars = st.integers(min_value=1, max_value=SECP256K1.q - 1)


def _lib_point(k, curve):
    pub = ec.derive_private_key(k, curve).public_key()
    return pub.public_bytes(serialization.Encoding.X962, serialization.PublicFormat.CompressedPoint)


def test_small_multiples_match_oracle():
    assert (6 * SECP256K1.G).encode().hex() == "03fff97bd5755eeea420453a14355235d382f6472f8568a18b2f057a1460297556"
    for k in range(1, 20):
        assert (k * SECP256K1.G).encode() == oracles.ec_compress(oracles.ec_mul(k))


@given(scalars)
def test_scalar_mult_matches_library(k):
    assert (k * SECP256K1.G).encode() == _lib_point(k, ec.SECP256K1())


@given(st.integers(min_value=1, max_value=P256.q - 1))
def test_p256_matches_library(k):
    assert (k * P256.G).encode() == _lib_point(k, ec.SECP256R1())


@given(scalars, scalars)
def test_group_laws(a, b):
    G = SECP256K1.G
    assert a * G + b * G == ((a + b) % SECP256K1.q) * G
    assert (a * G) - (a * G) == SECP256K1.identity
    assert double_mul(a, G, b, 3 * G) == ((a + 3 * b) % SECP256K1.q) * G
    assert b * (a * G) == (a * b % SECP256K1.q) * G


@given(scalars)
def test_encoding_roundtrip(k):
    P = k * SECP256K1.G
    assert SECP256K1.decode_point(P.encode()) == P
    assert SECP256K1.decode_point(P.encode(compressed=False)) == P
    assert len(P.encode()) == 33


def test_order_annihilates_generator():
    assert (SECP256K1.q * SECP256K1.G).is_identity()


@pytest.mark.parametrize("data", [b"", b"\x02" + b"\x00" * 31, b"\x05" + b"\x01" * 32,
                                  b"\x02" + (SECP256K1.p).to_bytes(32, "big"),
                                  b"\x04" + b"\x01" * 64])
def test_invalid_encodings(data):
    with pytest.raises(PointError):
        SECP256K1.decode_point(data)


def test_x_without_curve_point_rejected():
    # x = 5 gives y^2 = 132, a non-residue mod p
    with pytest.raises(PointError):
        SECP256K1.decode_point(b"\x02" + (5).to_bytes(32, "big"))
