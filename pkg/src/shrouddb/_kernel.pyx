# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled slot pipeline: AES-GCM sealing/opening of fixed-size bucket
slots through OpenSSL EVP, with the GIL released across the batch.

Byte-compatible with ``shrouddb._slots_py``: each slot serializes as
``iv (16) || body || tag (16)``.
"""

from cpython.bytes cimport PyBytes_FromStringAndSize, PyBytes_AS_STRING
from libc.string cimport memcpy

from shrouddb.errors import AuthenticationError, ParameterError

KERNEL_NAME = "c-openssl"

cdef extern from "openssl/evp.h" nogil:
    ctypedef struct EVP_CIPHER:
        pass
    ctypedef struct EVP_CIPHER_CTX:
        pass
    ctypedef struct ENGINE:
        pass
    const EVP_CIPHER *EVP_aes_128_gcm()
    const EVP_CIPHER *EVP_aes_256_gcm()
    EVP_CIPHER_CTX *EVP_CIPHER_CTX_new()
    void EVP_CIPHER_CTX_free(EVP_CIPHER_CTX *ctx)
    int EVP_EncryptInit_ex(EVP_CIPHER_CTX *ctx, const EVP_CIPHER *cipher,
                           ENGINE *impl, const unsigned char *key,
                           const unsigned char *iv)
    int EVP_EncryptUpdate(EVP_CIPHER_CTX *ctx, unsigned char *out, int *outl,
                          const unsigned char *inp, int inl)
    int EVP_EncryptFinal_ex(EVP_CIPHER_CTX *ctx, unsigned char *out, int *outl)
    int EVP_DecryptInit_ex(EVP_CIPHER_CTX *ctx, const EVP_CIPHER *cipher,
                           ENGINE *impl, const unsigned char *key,
                           const unsigned char *iv)
    int EVP_DecryptUpdate(EVP_CIPHER_CTX *ctx, unsigned char *out, int *outl,
                          const unsigned char *inp, int inl)
    int EVP_DecryptFinal_ex(EVP_CIPHER_CTX *ctx, unsigned char *out, int *outl)
    int EVP_CIPHER_CTX_ctrl(EVP_CIPHER_CTX *ctx, int type, int arg, void *ptr)

DEF IV_LEN = 16
DEF TAG_LEN = 16
cdef int CTRL_SET_IVLEN = 0x9   # EVP_CTRL_AEAD_SET_IVLEN
cdef int CTRL_GET_TAG = 0x10    # EVP_CTRL_AEAD_GET_TAG
cdef int CTRL_SET_TAG = 0x11    # EVP_CTRL_AEAD_SET_TAG


cdef const EVP_CIPHER *_cipher_for(Py_ssize_t key_len) except NULL:
    if key_len == 16:
        return EVP_aes_128_gcm()
    if key_len == 32:
        return EVP_aes_256_gcm()
    raise ParameterError(f"bad AES key length {key_len}")


def seal_slots(bytes key, bytes plain, bytes ivs, Py_ssize_t count, Py_ssize_t body_size):
    """Encrypt ``count`` bodies of ``body_size`` bytes under per-slot IVs."""
    if len(plain) != count * body_size:
        raise ParameterError("plaintext length does not match count * body_size")
    if len(ivs) != count * IV_LEN:
        raise ParameterError("iv blob length does not match count")
    cdef const EVP_CIPHER *cipher = _cipher_for(len(key))
    cdef Py_ssize_t slot_size = IV_LEN + body_size + TAG_LEN
    out_obj = PyBytes_FromStringAndSize(NULL, count * slot_size)
    cdef unsigned char *out = <unsigned char *>PyBytes_AS_STRING(out_obj)
    cdef const unsigned char *k = <const unsigned char *>key
    cdef const unsigned char *src = <const unsigned char *>plain
    cdef const unsigned char *ivp = <const unsigned char *>ivs
    cdef EVP_CIPHER_CTX *ctx = EVP_CIPHER_CTX_new()
    if ctx == NULL:
        raise MemoryError("EVP_CIPHER_CTX_new failed")
    cdef Py_ssize_t i
    cdef unsigned char *slot
    cdef int outl = 0, tail = 0, ok = 1
    try:
        with nogil:
            if (EVP_EncryptInit_ex(ctx, cipher, NULL, NULL, NULL) != 1 or
                    EVP_CIPHER_CTX_ctrl(ctx, CTRL_SET_IVLEN, IV_LEN, NULL) != 1 or
                    EVP_EncryptInit_ex(ctx, NULL, NULL, k, NULL) != 1):
                ok = 0
            else:
                for i in range(count):
                    slot = out + i * slot_size
                    # fresh IV, key schedule kept from the first init
                    if EVP_EncryptInit_ex(ctx, NULL, NULL, NULL, ivp + i * IV_LEN) != 1:
                        ok = 0
                        break
                    if (EVP_EncryptUpdate(ctx, slot + IV_LEN, &outl,
                                          src + i * body_size, <int>body_size) != 1 or
                            EVP_EncryptFinal_ex(ctx, slot + IV_LEN + outl, &tail) != 1 or
                            EVP_CIPHER_CTX_ctrl(ctx, CTRL_GET_TAG, TAG_LEN,
                                                slot + IV_LEN + body_size) != 1):
                        ok = 0
                        break
                    memcpy(slot, ivp + i * IV_LEN, IV_LEN)
    finally:
        EVP_CIPHER_CTX_free(ctx)
    if not ok:
        raise RuntimeError("OpenSSL EVP encryption failed")
    return out_obj


def open_slots(bytes key, bytes sealed, Py_ssize_t count, Py_ssize_t body_size):
    """Decrypt ``count`` sealed slots; raises on any tag failure."""
    cdef Py_ssize_t slot_size = IV_LEN + body_size + TAG_LEN
    if len(sealed) != count * slot_size:
        raise ParameterError("sealed blob length does not match count * slot size")
    cdef const EVP_CIPHER *cipher = _cipher_for(len(key))
    out_obj = PyBytes_FromStringAndSize(NULL, count * body_size)
    cdef unsigned char *out = <unsigned char *>PyBytes_AS_STRING(out_obj)
    cdef const unsigned char *k = <const unsigned char *>key
    cdef const unsigned char *src = <const unsigned char *>sealed
    cdef const unsigned char *slot
    cdef unsigned char tag[TAG_LEN]
    cdef EVP_CIPHER_CTX *ctx = EVP_CIPHER_CTX_new()
    if ctx == NULL:
        raise MemoryError("EVP_CIPHER_CTX_new failed")
    cdef Py_ssize_t i, bad = -1
    cdef int outl = 0, tail = 0, ok = 1
    try:
        with nogil:
            if (EVP_DecryptInit_ex(ctx, cipher, NULL, NULL, NULL) != 1 or
                    EVP_CIPHER_CTX_ctrl(ctx, CTRL_SET_IVLEN, IV_LEN, NULL) != 1 or
                    EVP_DecryptInit_ex(ctx, NULL, NULL, k, NULL) != 1):
                ok = 0
            else:
                for i in range(count):
                    slot = src + i * slot_size
                    memcpy(tag, slot + IV_LEN + body_size, TAG_LEN)
                    if (EVP_DecryptInit_ex(ctx, NULL, NULL, NULL, slot) != 1 or
                            EVP_DecryptUpdate(ctx, out + i * body_size, &outl,
                                              slot + IV_LEN, <int>body_size) != 1 or
                            EVP_CIPHER_CTX_ctrl(ctx, CTRL_SET_TAG, TAG_LEN, tag) != 1):
                        ok = 0
                        break
                    if EVP_DecryptFinal_ex(ctx, out + i * body_size + outl, &tail) != 1:
                        bad = i
                        break
    finally:
        EVP_CIPHER_CTX_free(ctx)
    if bad >= 0:
        raise AuthenticationError(f"slot {bad} failed authentication")
    if not ok:
        raise RuntimeError("OpenSSL EVP decryption failed")
    return out_obj
