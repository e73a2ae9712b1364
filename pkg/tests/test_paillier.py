import math
import random

import pytest
from hypothesis import given, strategies as st

import oracles
from dexkeys import paillier
from dexkeys.errors import MalformedCiphertext, UsageError

TOY_UNITS = [r for r in range(2, 35) if math.gcd(r, 35) == 1]


def test_toy_key_parameters(toy_key):
    pk, sk = toy_key
    assert pk.n == 35
    assert sk.lam == 12
    assert sk.mu == 3
    assert pk.n_sq == 1225


def test_toy_vector_matches_table(toy_key):
    pk, _ = toy_key
    table = oracles.paillier_table(5, 7)
    c = paillier.encrypt(pk, 2, paillier.make_nonce(pk, 2))
    assert c.value == table[(2, 2)] == 53


def test_moderate_key_modulus():
    pk, sk = paillier.keypair_from_primes(58511, 63799, insecure=True)
    assert pk.n == 3732943289
    for m in (0, 1, 12345, pk.n - 1):
        assert paillier.decrypt(sk, paillier.encrypt(pk, m, paillier.precompute_nonce(pk))) == m


def test_encrypt_matches_oracle_power_route(toy_key):
    pk, sk = toy_key
    table = oracles.paillier_table(5, 7)
    for (m, r), c in table.items():
        if r == 1:
            continue
        assert paillier.encrypt(pk, m, paillier.make_nonce(pk, r)).value == c


def test_unit_nonce_rejected(toy_key):
    pk, _ = toy_key
    with pytest.raises(ValueError):
        paillier.make_nonce(pk, 1)
    with pytest.raises(ValueError):
        paillier.make_nonce(pk, 5)


def test_nonce_single_use(key1024):
    pk = key1024.pk
    nonce = paillier.precompute_nonce(pk)
    paillier.encrypt(pk, 1, nonce)
    with pytest.raises(UsageError):
        paillier.encrypt(pk, 2, nonce)


def test_nonce_bound_to_key(key1024, toy_key):
    with pytest.raises(UsageError):
        paillier.encrypt(key1024.pk, 1, paillier.make_nonce(toy_key[0], 2))


def test_plaintext_range(key1024):
    pk = key1024.pk
    with pytest.raises(ValueError):
        paillier.encrypt(pk, pk.n, paillier.precompute_nonce(pk))
    with pytest.raises(ValueError):
        paillier.encrypt(pk, -1, paillier.precompute_nonce(pk))


def test_malformed_ciphertexts_rejected(toy_key):
    pk, sk = toy_key
    for bad in (0, 1225, 1300, 5, 7 * 3):
        with pytest.raises(MalformedCiphertext):
            paillier.checked_ciphertext(pk, bad)
    with pytest.raises(MalformedCiphertext):
        paillier.decrypt(sk, paillier.Ciphertext(35, 35))


def test_fixed_width_serialization(key2048):
    pk = key2048.pk
    c = paillier.encrypt(pk, 7, paillier.precompute_nonce(pk))
    data = c.to_bytes()
    assert len(data) == pk.ciphertext_bytes == 512
    assert paillier.Ciphertext.from_bytes(pk, data) == c
    with pytest.raises(MalformedCiphertext):
        paillier.Ciphertext.from_bytes(pk, data[1:])


def test_keygen_sizes_and_insecure_gate():
    pk, sk = paillier.keygen(512, random.Random(1))
    assert pk.bits == 512
    assert math.gcd(pk.n, sk.phi) == 1
    with pytest.raises(ValueError):
        paillier.keygen(256)
    assert paillier.keygen(256, insecure=True)[0].bits == 256
    with pytest.raises(ValueError):
        paillier.keypair_from_primes(5, 7)


def test_keygen_is_deterministic_under_seed():
    assert paillier.keygen(512, random.Random(9))[0] == paillier.keygen(512, random.Random(9))[0]


def test_public_key_dict_roundtrip(key1024):
    pk = key1024.pk
    assert paillier.PaillierPublicKey.from_dict(pk.to_dict()) == pk
    assert len(pk.fingerprint()) == 64


@given(m1=st.integers(min_value=0), m2=st.integers(min_value=0), a=st.integers(min_value=0, max_value=2**300))
def test_homomorphic_identities(key1024, m1, m2, a):
    pk, sk = key1024.pk, key1024.sk
    m1 %= pk.n
    m2 %= pk.n
    c1 = paillier.encrypt(pk, m1, paillier.precompute_nonce(pk))
    c2 = paillier.encrypt(pk, m2, paillier.precompute_nonce(pk))
    assert paillier.decrypt(sk, c1) == m1
    assert paillier.decrypt(sk, paillier.hom_add(pk, c1, c2)) == (m1 + m2) % pk.n
    assert paillier.decrypt(sk, paillier.hom_mul_scalar(pk, c1, a)) == a * m1 % pk.n


def test_operands_from_other_key_rejected(key1024, toy_key):
    pk = key1024.pk
    c = paillier.encrypt(pk, 1, paillier.precompute_nonce(pk))
    t = paillier.encrypt(toy_key[0], 1, paillier.make_nonce(toy_key[0], 2))
    with pytest.raises(UsageError):
        paillier.hom_add(pk, c, t)
    with pytest.raises(ValueError):
        paillier.hom_mul_scalar(pk, c, -1)
