import random

import pytest
from hypothesis import given, settings, strategies as st

from dataprov.crypto import Ciphertext, Digest, RealCrypto, TestCrypto, address_of, get_profile
from dataprov.errors import DecryptError, MalformedKeyError

PROFILES = [TestCrypto(), RealCrypto()]


@pytest.fixture(params=PROFILES, ids=lambda p: p.name)
def crypto(request):
    return request.param


def test_hash_is_deterministic_and_32_bytes(crypto):
    assert crypto.hash(b"abc") == crypto.hash(b"abc")
    empty = crypto.hash(b"")
    assert len(empty.bytes) == 32
    assert empty.hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_no_collisions_in_random_corpus():
    rng = random.Random(5)
    corpus = {rng.randbytes(rng.randrange(0, 64)) for _ in range(10_000)}
    digests = {TestCrypto().hash(b) for b in corpus}
    assert len(digests) == len(corpus)


def test_digest_rejects_wrong_length():
    with pytest.raises(ValueError):
        Digest(b"\x00" * 31)


def test_sign_verify_roundtrip(crypto):
    a = crypto.keypair_from_seed(b"a" * 32)
    b = crypto.keypair_from_seed(b"b" * 32)
    sig = crypto.sign(a, b"message")
    assert crypto.verify(a.public_key, b"message", sig)
    assert not crypto.verify(a.public_key, b"messagf", sig)
    assert not crypto.verify(b.public_key, b"message", sig)


def test_address_is_function_of_public_key(crypto):
    k = crypto.keypair_from_seed(b"k" * 32)
    assert k.address == address_of(k.public_key) == crypto.address(k.public_key)
    assert len(k.address) == 20


def test_malformed_keys(crypto):
    with pytest.raises(MalformedKeyError):
        crypto.keypair_from_seed(b"short")
    with pytest.raises(MalformedKeyError):
        crypto.keypair_from_hex("zz" * 32)
    good = crypto.keypair_from_seed(b"g" * 32)
    forged = type(good)(crypto.keypair_from_seed(b"h" * 32).public_key, good.private_key, good.address)
    with pytest.raises(MalformedKeyError):
        crypto.sign(forged, b"x")


@settings(max_examples=50, deadline=None)
@given(st.binary(max_size=512))
def test_encrypt_roundtrip(payload):
    for crypto in PROFILES:
        k = crypto.keypair_from_seed(b"r" * 32)
        assert crypto.decrypt(k.private_key, crypto.encrypt(k.public_key, payload)) == payload


def test_decrypt_with_wrong_key_fails(crypto):
    k = crypto.keypair_from_seed(b"1" * 32)
    other = crypto.keypair_from_seed(b"2" * 32)
    c = crypto.encrypt(k.public_key, b"secret rows")
    with pytest.raises(DecryptError):
        crypto.decrypt(other.private_key, c)
    with pytest.raises(DecryptError):
        crypto.decrypt(k.private_key, Ciphertext(c.bytes[:-1] + bytes([c.bytes[-1] ^ 1])))


def test_empty_payload(crypto):
    k = crypto.keypair_from_seed(b"e" * 32)
    assert crypto.decrypt(k.private_key, crypto.encrypt(k.public_key, b"")) == b""


def test_ciphertext_hides_plaintext(crypto):
    k = crypto.keypair_from_seed(b"p" * 32)
    secret = b"patient P00042 adverse_event=1"
    assert secret not in crypto.encrypt(k.public_key, secret).bytes


def test_test_profile_is_deterministic():
    c = TestCrypto()
    k = c.keypair_from_seed(b"d" * 32)
    assert c.encrypt(k.public_key, b"x") == c.encrypt(k.public_key, b"x")


def test_profiles_by_name():
    assert isinstance(get_profile("test"), TestCrypto)
    assert isinstance(get_profile("real"), RealCrypto)
    with pytest.raises(ValueError):
        get_profile("rot13")
