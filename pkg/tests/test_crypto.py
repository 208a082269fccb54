import random

import pytest
from hypothesis import given, strategies as st

from shrouddb.crypto import (
    Ciphertext,
    IV_SIZE,
    SymKey,
    TAG_SIZE,
    decrypt_block,
    encrypt_block,
    keygen,
    partition_of,
    prf,
)
from shrouddb.errors import (
    AuthenticationError,
    FormatError,
    ParameterError,
    SizeError,
)


def test_keygen_sizes(rng):
    for bits in (128, 256):
        key = keygen(bits, rng)
        assert key.bits == bits
        assert len(key.data) == bits // 8


def test_keygen_rejects_other_sizes(rng):
    for bits in (0, 64, 192, 512):
        with pytest.raises(ParameterError):
            keygen(bits, rng)


def test_keygen_uses_injected_rng():
    a = keygen(128, random.Random(5))
    b = keygen(128, random.Random(5))
    c = keygen(128, random.Random(6))
    assert a == b
    assert a != c


def test_symkey_validates_length():
    with pytest.raises(ParameterError):
        SymKey(b"short", 128)


def test_encrypt_decrypt_roundtrip(rng):
    key = keygen(128, rng)
    for size in (0, 1, 24, 1024):
        msg = rng.randbytes(size)
        ct = encrypt_block(key, msg, rng)
        assert decrypt_block(key, ct) == msg


def test_ciphertext_layout(rng):
    key = keygen(256, rng)
    msg = b"hello world"
    ct = encrypt_block(key, msg, rng)
    assert len(ct.iv) == IV_SIZE
    assert len(ct.tag) == TAG_SIZE
    assert len(ct.body) == len(msg)
    blob = ct.to_bytes()
    assert blob == ct.iv + ct.body + ct.tag
    back = Ciphertext.from_bytes(blob)
    assert back == ct


def test_ciphertext_from_bytes_too_short():
    with pytest.raises(FormatError):
        Ciphertext.from_bytes(b"\x00" * 31)


def test_block_size_cap(rng):
    key = keygen(128, rng)
    encrypt_block(key, b"x" * 64, rng, block_size=64)
    with pytest.raises(SizeError):
        encrypt_block(key, b"x" * 65, rng, block_size=64)


def test_tamper_detection(rng):
    key = keygen(128, rng)
    ct = encrypt_block(key, b"payload", rng)
    for field, mutated in [
        ("body", Ciphertext(ct.iv, bytes([ct.body[0] ^ 1]) + ct.body[1:], ct.tag)),
        ("tag", Ciphertext(ct.iv, ct.body, bytes([ct.tag[0] ^ 1]) + ct.tag[1:])),
        ("iv", Ciphertext(bytes([ct.iv[0] ^ 1]) + ct.iv[1:], ct.body, ct.tag)),
    ]:
        with pytest.raises(AuthenticationError):
            decrypt_block(key, mutated)


def test_wrong_key_fails(rng):
    k1 = keygen(128, random.Random(1))
    k2 = keygen(128, random.Random(2))
    ct = encrypt_block(k1, b"secret", rng)
    with pytest.raises(AuthenticationError):
        decrypt_block(k2, ct)


def test_fresh_iv_per_call(rng):
    key = keygen(128, rng)
    c1 = encrypt_block(key, b"same", rng)
    c2 = encrypt_block(key, b"same", rng)
    assert c1.iv != c2.iv
    assert c1.body != c2.body


def test_prf_deterministic_and_keyed(rng):
    k1 = keygen(128, random.Random(1))
    k2 = keygen(128, random.Random(2))
    assert prf(k1, b"data") == prf(k1, b"data")
    assert prf(k1, b"data") != prf(k2, b"data")
    assert prf(k1, b"data") != prf(k1, b"date")
    assert len(prf(k1, b"")) == 16


def test_partition_range(rng):
    key = keygen(128, rng)
    for m in (1, 2, 7, 64):
        got = {partition_of(key, rid, m) for rid in range(1000)}
        assert got <= set(range(1, m + 1))
        if m <= 7:
            assert got == set(range(1, m + 1))


def test_partition_rejects_bad_m(rng):
    key = keygen(128, rng)
    with pytest.raises(ParameterError):
        partition_of(key, 1, 0)


@given(st.binary(min_size=0, max_size=256), st.integers(0, 2**31))
def test_roundtrip_property(msg, seed):
    r = random.Random(seed)
    key = keygen(256, r)
    assert decrypt_block(key, encrypt_block(key, msg, r)) == msg
