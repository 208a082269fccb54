"""Compare the compiled slot-crypto kernel with the pure-Python fallback.

Two views: raw slot seal/open throughput at several payload sizes, and
end-to-end ORAM access rate with each implementation patched in. Run:

    python benchmarks/bench_kernel.py [--accesses 20000]
"""

from __future__ import annotations

import argparse
import random
import time

from shrouddb import _slots_py
from shrouddb.crypto import keygen

try:
    from shrouddb import _kernel
except ImportError:
    _kernel = None


def bench_slots(impl, key: bytes, body: int, count: int, rounds: int) -> float:
    rng = random.Random(1)
    plain = rng.randbytes(body * count)
    ivs = rng.randbytes(16 * count)
    best = float("inf")
    for _ in range(rounds):
        t0 = time.perf_counter()
        sealed = impl.seal_slots(key, plain, ivs, count, body)
        impl.open_slots(key, sealed, count, body)
        best = min(best, time.perf_counter() - t0)
    return best / (2 * count)  # per slot op


def bench_oram(impl, accesses: int) -> float:
    import shrouddb.oram as oram
    from shrouddb.oram import OramConfig, oram_init, read_op, write_op
    from shrouddb.storage import MemoryKvs

    saved = oram.seal_slots, oram.open_slots
    oram.seal_slots, oram.open_slots = impl.seal_slots, impl.open_slots
    try:
        rng = random.Random(2)
        st = oram_init(OramConfig(capacity=256, block_payload=64), keygen(128, rng),
                       MemoryKvs(), rng)
        ops = []
        w = random.Random(3)
        for _ in range(accesses):
            a = w.randrange(256)
            ops.append(write_op(a, w.randbytes(64)) if w.random() < 0.5 else read_op(a))
        t0 = time.perf_counter()
        for op in ops:
            st.access(op)
        return (time.perf_counter() - t0) / accesses
    finally:
        oram.seal_slots, oram.open_slots = saved


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--accesses", type=int, default=20000)
    ap.add_argument("--count", type=int, default=512, help="slots per batch")
    ap.add_argument("--rounds", type=int, default=7)
    args = ap.parse_args()

    key = keygen(128, random.Random(0)).data
    impls = [("python", _slots_py)]
    if _kernel is not None:
        impls.append(("c-openssl", _kernel))
    else:
        print("compiled kernel unavailable; showing fallback only")

    print(f"{'impl':<10} {'24 B':>12} {'1 KiB':>12} {'4 KiB':>12}   per slot seal+open")
    base: dict[int, float] = {}
    for name, impl in impls:
        cells = []
        for body in (24, 1024, 4096):
            per = bench_slots(impl, key, body, args.count, args.rounds)
            if name == "python":
                base[body] = per
            speed = f" ({base[body] / per:4.1f}x)" if name != "python" else "       "
            cells.append(f"{per * 1e6:9.3f} us{speed}")
        print(f"{name:<10} {cells[0]} {cells[1]} {cells[2]}")

    print()
    print(f"{'impl':<10} {'oram access':>14}")
    base_oram = None
    for name, impl in impls:
        per = bench_oram(impl, args.accesses)
        if base_oram is None:
            base_oram = per
        speed = f" ({base_oram / per:4.1f}x)" if name != "python" else ""
        print(f"{name:<10} {per * 1e6:11.1f} us{speed}")


if __name__ == "__main__":
    main()
