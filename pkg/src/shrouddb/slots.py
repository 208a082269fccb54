"""Slot pipeline selector.

The ORAM spends nearly all of its time sealing and opening bucket
slots, so that inner loop ships as a compiled extension (OpenSSL EVP
via Cython, GIL released) with a pure-Python fallback selected here at
import. Both produce byte-identical ciphertexts; ``KERNEL`` names the
active one. Set SHROUDDB_NO_KERNEL=1 to force the fallback.
"""

import os

if os.environ.get("SHROUDDB_NO_KERNEL"):
    from shrouddb import _slots_py as _impl
else:
    try:
        from shrouddb import _kernel as _impl  # type: ignore[attr-defined]
    except ImportError:
        from shrouddb import _slots_py as _impl

KERNEL = _impl.KERNEL_NAME
seal_slots = _impl.seal_slots
open_slots = _impl.open_slots

__all__ = ["KERNEL", "seal_slots", "open_slots"]
