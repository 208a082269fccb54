"""Pure-Python slot pipeline on top of ``cryptography``'s AES-GCM.

Same byte-level contract as the C kernel: fixed-size bodies, each slot
serialized as ``iv (16) || body || tag (16)``. Interchangeable with the
kernel ciphertext-for-ciphertext.
"""

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from shrouddb.errors import AuthenticationError, ParameterError

KERNEL_NAME = "python"

_IV = 16
_TAG = 16

# One AESGCM context per key; ORAM instances churn through millions of
# slots under a handful of keys, so construction cost matters.
_ctx_cache: dict[bytes, AESGCM] = {}


def _ctx(key: bytes) -> AESGCM:
    ctx = _ctx_cache.get(key)
    if ctx is None:
        if len(key) not in (16, 32):
            raise ParameterError(f"bad AES key length {len(key)}")
        if len(_ctx_cache) > 64:
            _ctx_cache.clear()
        ctx = _ctx_cache[key] = AESGCM(key)
    return ctx


def seal_slots(key: bytes, plain: bytes, ivs: bytes, count: int, body_size: int) -> bytes:
    """Encrypt ``count`` bodies of ``body_size`` bytes each.

    ``plain`` is the concatenated bodies, ``ivs`` the concatenated
    16-byte IVs; returns the concatenated sealed slots.
    """
    if len(plain) != count * body_size:
        raise ParameterError("plaintext length does not match count * body_size")
    if len(ivs) != count * _IV:
        raise ParameterError("iv blob length does not match count")
    ctx = _ctx(key)
    out = bytearray()
    for i in range(count):
        iv = ivs[i * _IV:(i + 1) * _IV]
        body = plain[i * body_size:(i + 1) * body_size]
        out += iv
        out += ctx.encrypt(iv, body, None)
    return bytes(out)


def open_slots(key: bytes, sealed: bytes, count: int, body_size: int) -> bytes:
    """Decrypt ``count`` sealed slots back to concatenated bodies."""
    slot_size = _IV + body_size + _TAG
    if len(sealed) != count * slot_size:
        raise ParameterError("sealed blob length does not match count * slot size")
    ctx = _ctx(key)
    out = bytearray(count * body_size)
    for i in range(count):
        base = i * slot_size
        iv = sealed[base:base + _IV]
        blob = sealed[base + _IV:base + slot_size]
        try:
            out[i * body_size:(i + 1) * body_size] = ctx.decrypt(iv, blob, None)
        except InvalidTag as exc:
            raise AuthenticationError(f"slot {i} failed authentication") from exc
    return bytes(out)
