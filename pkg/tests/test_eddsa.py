import pytest
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from hypothesis import given, settings, strategies as st

import oracles
from dexkeys import ed25519, eddsa, paillier
from dexkeys.ed25519 import B, L
from dexkeys.errors import InvalidSignature, PointError, UnverifiedKeyError, UsageError

seeds = st.binary(min_size=32, max_size=32)


def _key(exchange, seed, **kw):
    return eddsa.generate_api_key_ed(seed, exchange.verified, audit=True, **kw)


def test_share_split_pinned(key1024):
    seed = bytes(range(32))
    key, audit = _key(key1024, seed, client_share=7)
    a = oracles.ed_secret_scalar(seed) % L
    assert audit["a"] == a
    assert key.client_share == 7
    assert audit["server_share"] == (a - 7) % L
    assert paillier.decrypt(key1024.sk, key.enc_server_share) == (a - 7) % L
    assert key.public_bytes == ed25519.public_key(seed)


def test_nonce_points_add():
    client, server = eddsa.ed_prepare(r_c=2, r_s=3)
    assert client.R == server.R == 5 * B
    assert client.R.encode() == oracles.ed_encode(oracles.ed_mul(5))


@settings(max_examples=25)
@given(seed=seeds, msg=st.binary(max_size=100), r_c=st.integers(1, L - 1), r_s=st.integers(1, L - 1),
       share=st.integers(0, L - 1))
def test_matches_single_party_with_same_nonce(key1024, seed, msg, r_c, r_s, share):
    if (r_c + r_s) % L == 0:
        return
    key, audit = _key(key1024, seed, client_share=share)
    client, server = eddsa.ed_prepare(r_c=r_c, r_s=r_s)
    s_client = eddsa.ed_client_sign(key, client, msg)
    R, s = eddsa.ed_server_complete(audit["server_share"], server, msg, key.public_bytes, s_client)
    sig = R + ed25519.scalar_to_bytes(s)
    assert sig == oracles.ed_sign_with_nonce(oracles.ed_secret_scalar(seed), (r_c + r_s) % L, msg)
    Ed25519PrivateKey.from_private_bytes(seed).public_key().verify(sig, msg)


def test_bad_partial_rejected(key1024):
    key, audit = _key(key1024, b"\x01" * 32)
    client, server = eddsa.ed_prepare()
    s_client = eddsa.ed_client_sign(key, client, b"msg")
    with pytest.raises(InvalidSignature):
        eddsa.ed_server_complete(audit["server_share"], server, b"msg", key.public_bytes, (s_client + 1) % L)


def test_client_entry_single_use(key1024):
    key, _ = _key(key1024, b"\x02" * 32)
    client, _server = eddsa.ed_prepare()
    eddsa.ed_client_sign(key, client, b"a")
    assert client.r_c == 0
    with pytest.raises(UsageError):
        eddsa.ed_client_sign(key, client, b"b")


def test_low_order_nonce_points_rejected():
    order2 = (ed25519.P - 1).to_bytes(32, "little")
    with pytest.raises(PointError):
        eddsa.ed_server_respond(order2)
    with pytest.raises(PointError):
        eddsa.ed_client_complete(2, 2 * B, order2)
    # R_c + R_s = identity
    with pytest.raises(PointError):
        eddsa.ed_client_complete(2, 2 * B, (L - 2) * B)


def test_requires_verified_key(key1024):
    with pytest.raises(UnverifiedKeyError):
        eddsa.generate_api_key_ed(b"\x00" * 32, key1024.pk)
