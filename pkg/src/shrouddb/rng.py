"""Injectable randomness.

Every component that needs randomness takes a ``random.Random``-style
source. Production code uses OS entropy; tests and the benchmark
harness derive independent deterministic streams from one seed so whole
protocol runs replay exactly, regardless of thread scheduling.
"""

import hashlib
import random

__all__ = ["system_rng", "derive_stream"]


def system_rng() -> random.Random:
    """OS-entropy randomness for production use."""
    return random.SystemRandom()


def derive_stream(seed: int, label: str) -> random.Random:
    """Deterministic stream bound to (seed, label).

    Distinct labels give independent streams; the same pair always
    yields the same sequence. Labels namespace the consumers (one per
    ORAM, one per sanitizer, one for the dataset, ...), so adding draws
    in one component never perturbs another.
    """
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return random.Random(int.from_bytes(digest, "big"))
