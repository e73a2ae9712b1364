import pytest
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from hypothesis import given, strategies as st

import oracles
from dexkeys import ed25519
from dexkeys.ed25519 import B, IDENTITY, L
from dexkeys.errors import PointError

# RFC 8032, section 7.1, test 1
RFC_SEED = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
RFC_PUBLIC = bytes.fromhex("d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a")
RFC_SIG = bytes.fromhex("e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b")

seeds = st.binary(min_size=32, max_size=32)


def test_rfc_vector():
    assert ed25519.public_key(RFC_SEED) == RFC_PUBLIC
    assert ed25519.sign(RFC_SEED, b"") == RFC_SIG
    assert ed25519.verify(RFC_PUBLIC, b"", RFC_SIG)


def test_five_times_base():
    assert (5 * B).encode().hex() == "edc876d6831fd2105d0b4389ca2e283166469289146e2ce06faefe98b22548df"
    assert (2 * B) + (3 * B) == 5 * B


@given(seeds, st.binary(max_size=200))
def test_sign_matches_library(seed, msg):
    lib = Ed25519PrivateKey.from_private_bytes(seed)
    pub = lib.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    assert ed25519.public_key(seed) == pub
    sig = ed25519.sign(seed, msg)
    assert sig == lib.sign(msg)
    assert ed25519.verify(pub, msg, sig)


@given(st.integers(min_value=1, max_value=L - 1))
def test_scalar_mult_matches_oracle(k):
    assert (k * B).encode() == oracles.ed_encode(oracles.ed_mul(k))


@given(seeds, st.binary(max_size=64))
def test_tampered_signatures_fail(seed, msg):
    pub = ed25519.public_key(seed)
    sig = bytearray(ed25519.sign(seed, msg))
    sig[5] ^= 1
    assert not ed25519.verify(pub, msg, bytes(sig))
    assert not ed25519.verify(pub, msg + b"x", ed25519.sign(seed, msg))


def test_non_canonical_s_rejected():
    R, s = RFC_SIG[:32], ed25519.scalar_from_bytes(RFC_SIG[32:])
    forged = R + (s + L).to_bytes(32, "little")
    assert not ed25519.verify(RFC_PUBLIC, b"", forged)
    with pytest.raises(InvalidSignature):
        Ed25519PublicKey.from_public_bytes(RFC_PUBLIC).verify(forged, b"")


def test_point_roundtrip_and_subgroup():
    P = 12345 * B
    assert ed25519.decode_point(P.encode()) == P
    assert (L * B) == IDENTITY
    assert P.in_prime_subgroup() and not P.has_small_order()


def test_low_order_points_rejected_as_group_elements():
    with pytest.raises(PointError):
        ed25519.decode_group_element(IDENTITY.encode())
    # y = -1 is the point of order 2
    order2 = (ed25519.P - 1).to_bytes(32, "little")
    assert ed25519.decode_point(order2).has_small_order()
    with pytest.raises(PointError):
        ed25519.decode_group_element(order2)


def test_invalid_encodings():
    with pytest.raises(PointError):
        ed25519.decode_point(b"\x01" * 31)
    with pytest.raises(PointError):
        ed25519.decode_point((ed25519.P + 1).to_bytes(32, "little"))
    with pytest.raises(ValueError):
        ed25519.scalar_from_bytes(L.to_bytes(32, "little"))
