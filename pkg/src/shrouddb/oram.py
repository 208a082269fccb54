"""Tree-based ORAM over a key-value bucket store.

The server holds a complete binary tree of buckets, each bucket a fixed
number of encrypted slots. Every stored block is pinned to a uniformly
random leaf; the block lives somewhere on the path from the root to
that leaf, or in the client-side stash. Each access reads one whole
path, remaps the touched address to a fresh leaf, and greedily rewrites
the path from the leaf level upward with re-encrypted buckets, so the
server observes nothing but uniformly random path reads.

``batch_access`` combines many accesses into exactly one multi-path
read plus one multi-path write-back (two storage round trips), with all
mixing and re-encryption done in client memory.
"""

from __future__ import annotations

import math
import random
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from shrouddb.crypto import SymKey
from shrouddb.errors import (
    AddressError,
    BatchError,
    KeyNotFoundError,
    ParameterError,
    StashOverflowError,
    StorageError,
    StorageNotEmptyError,
)
from shrouddb.slots import open_slots, seal_slots
from shrouddb.storage import Kvs, bucket_key

__all__ = [
    "DUMMY_ADDR",
    "OramConfig",
    "AccessOp",
    "OramState",
    "oram_init",
    "stash_bound",
    "default_stash_limit",
    "read_op",
    "write_op",
]

DUMMY_ADDR = (1 << 64) - 1
ADDR_SIZE = 8
IV_SIZE = 16
TAG_SIZE = 16

READ = "read"
WRITE = "write"


def stash_bound(x: int) -> float:
    """Upper bound on Pr[stash occupancy > x] with 5-slot buckets."""
    if x < 0:
        raise ParameterError("stash size must be non-negative")
    return min(1.0, 14.0 * 0.6002 ** x)


def default_stash_limit(eta1: float = 2.0 ** -32) -> int:
    """Smallest stash size whose overflow bound is at most ``eta1``."""
    if not 0.0 < eta1 < 1.0:
        raise ParameterError("eta1 must be in (0, 1)")
    x = 0
    while stash_bound(x) > eta1:
        x += 1
    return x


@dataclass(frozen=True)
class OramConfig:
    """Geometry and failure budget of one ORAM store.

    ``stash_limit`` defaults to the smallest size whose overflow
    probability bound is below ``eta1``. ``eta2`` records the assumed
    distinguishing advantage of the encryption; it is informational.
    """

    capacity: int
    block_payload: int
    Z: int = 5
    stash_limit: int | None = None
    eta1: float = 2.0 ** -32
    eta2: float | None = None

    def __post_init__(self):
        if self.Z < 1:
            raise ParameterError("bucket size Z must be >= 1")
        if self.capacity < 1:
            raise ParameterError("capacity must be >= 1")
        if self.block_payload < 1:
            raise ParameterError("block payload must be >= 1 byte")
        if self.stash_limit is not None and self.stash_limit < 1:
            raise ParameterError("stash limit must be >= 1")
        if not 0.0 < self.eta1 < 1.0:
            raise ParameterError("eta1 must be in (0, 1)")


@dataclass(frozen=True)
class AccessOp:
    """One logical access: ``op`` is "read" or "write"; writes carry data."""

    op: str
    addr: int
    data: bytes | None = None

    def __post_init__(self):
        if self.op not in (READ, WRITE):
            raise ParameterError(f"unknown access type {self.op!r}")
        if (self.data is not None) != (self.op == WRITE):
            raise ParameterError("data must be present exactly when writing")


def read_op(addr: int) -> AccessOp:
    return AccessOp(READ, addr)


def write_op(addr: int, data: bytes) -> AccessOp:
    return AccessOp(WRITE, addr, data)


class OramState:
    """Client half of one ORAM: position map, stash, keys, counters.

    Owned by exactly one worker at a time; parallelism happens across
    independent instances, never within one.
    """

    def __init__(self, config: OramConfig, key: SymKey, store: Kvs,
                 rng: random.Random, trace: bool = False):
        self.config = config
        self.key = key
        self.store = store
        self.rng = rng
        self.L = math.ceil(math.log2(max(2, math.ceil(config.capacity / config.Z))))
        self.leaves = 1 << self.L
        self.n_buckets = 2 * self.leaves - 1
        self.body_size = ADDR_SIZE + config.block_payload
        self.slot_size = IV_SIZE + self.body_size + TAG_SIZE
        self.bucket_bytes = config.Z * self.slot_size
        self.stash_limit = (config.stash_limit if config.stash_limit is not None
                            else default_stash_limit(config.eta1))
        self.pos = [rng.randrange(self.leaves) for _ in range(config.capacity)]
        self.stash: dict[int, bytes] = {}
        self.stash_peak = 0
        self.trace: list[int] | None = [] if trace else None
        self.overflowed = False
        self._zeros = bytes(config.block_payload)
        self._dummy_body = DUMMY_ADDR.to_bytes(ADDR_SIZE, "big") + self._zeros
        self._bucket_keys = [bucket_key(i) for i in range(self.n_buckets)]
        self._remap_enabled = True  # tests disable to prove the audit catches it

    # -- protocol ---------------------------------------------------------

    def access(self, op: AccessOp) -> bytes | None:
        """Single access: one path read, one path write-back."""
        return self._transact([op])[0]

    def batch_access(self, ops: list[AccessOp]) -> list[bytes | None]:
        """Run ``ops`` with the outputs of sequential accesses in exactly
        two storage round trips (one multi-path read, one write-back)."""
        return self._transact(ops)

    # -- internals --------------------------------------------------------

    def _path_buckets(self, leaf: int) -> list[int]:
        L = self.L
        return [(1 << d) - 1 + (leaf >> (L - d)) for d in range(L + 1)]

    def _draw_leaf(self) -> int:
        return self.rng.randrange(self.leaves)

    def _transact(self, ops: list[AccessOp]) -> list[bytes | None]:
        if not ops:
            raise ParameterError("access batch must be nonempty")
        capacity, payload = self.config.capacity, self.config.block_payload
        for op in ops:
            if not 0 <= op.addr < capacity:
                raise AddressError(f"address {op.addr} outside [0, {capacity})")
            if op.data is not None and len(op.data) != payload:
                raise ParameterError(
                    f"write data is {len(op.data)} bytes, block payload is {payload}")

        distinct: list[int] = []
        seen: set[int] = set()
        for op in ops:
            if op.addr not in seen:
                seen.add(op.addr)
                distinct.append(op.addr)
        read_leaves = [self.pos[a] for a in distinct]
        bucket_ids = sorted({b for leaf in read_leaves for b in self._path_buckets(leaf)})

        stash_snapshot = dict(self.stash)
        pos_snapshot = [(a, self.pos[a]) for a in distinct]

        blobs = self.store.batch_get([self._bucket_keys[b] for b in bucket_ids])
        for blob in blobs:
            if len(blob) != self.bucket_bytes:
                raise StorageError(f"bucket value has {len(blob)} bytes, expected {self.bucket_bytes}")
        total = len(bucket_ids) * self.config.Z
        bodies = open_slots(self.key.data, b"".join(blobs), total, self.body_size)

        # pull every real block on the fetched paths into the stash
        view = np.frombuffer(bodies, dtype=np.uint8).reshape(total, self.body_size)
        addrs = view[:, :ADDR_SIZE].copy().view(">u8").ravel()
        bs = self.body_size
        stash = self.stash
        for i in np.flatnonzero(addrs != np.uint64(DUMMY_ADDR)).tolist():
            stash[int(addrs[i])] = bodies[i * bs + ADDR_SIZE:(i + 1) * bs]

        results: list[bytes | None] = []
        for op in ops:
            if op.op == WRITE:
                stash[op.addr] = op.data
                results.append(None)
            else:
                results.append(stash.get(op.addr, self._zeros))
            if self._remap_enabled:
                self.pos[op.addr] = self._draw_leaf()

        new_stash, placed = self._evict(bucket_ids)
        parts: list[bytes] = []
        for bid in bucket_ids:
            blocks = placed.get(bid, ())
            for addr, data in blocks:
                parts.append(addr.to_bytes(ADDR_SIZE, "big"))
                parts.append(data)
            parts.extend([self._dummy_body] * (self.config.Z - len(blocks)))
        plain = b"".join(parts)
        ivs = self.rng.randbytes(IV_SIZE * total)
        sealed = seal_slots(self.key.data, plain, ivs, total, self.body_size)
        bb = self.bucket_bytes
        pairs = [(self._bucket_keys[b], sealed[i * bb:(i + 1) * bb])
                 for i, b in enumerate(bucket_ids)]
        try:
            self.store.batch_put(pairs)
        except StorageError as exc:
            self.stash = stash_snapshot
            for a, leaf in pos_snapshot:
                self.pos[a] = leaf
            raise BatchError(f"write-back failed, state rolled back: {exc}") from exc

        self.stash = new_stash
        if len(new_stash) > self.stash_peak:
            self.stash_peak = len(new_stash)
        if self.trace is not None:
            self.trace.extend(read_leaves)
        if len(new_stash) > self.stash_limit:
            self.overflowed = True
            raise StashOverflowError(
                f"stash holds {len(new_stash)} blocks, limit {self.stash_limit}")
        return results

    def _evict(self, bucket_ids: list[int]):
        """Greedy write-back: fill fetched buckets deepest-first, each
        block going as deep as its leaf assignment allows."""
        items = list(self.stash.items())
        n = len(items)
        pos = self.pos
        positions = [pos[a] for a, _ in items]
        order = sorted(range(n), key=positions.__getitem__)
        spos = [positions[i] for i in order]
        taken = [False] * n
        nxt = list(range(n + 1))  # skip list over sorted order

        def find(i: int) -> int:
            while nxt[i] != i:
                nxt[i] = nxt[nxt[i]]
                i = nxt[i]
            return i

        L, Z = self.L, self.config.Z
        placed: dict[int, list[tuple[int, bytes]]] = {}
        for bid in reversed(bucket_ids):  # ids grow with depth
            d = (bid + 1).bit_length() - 1
            shift = L - d
            lo = (bid - ((1 << d) - 1)) << shift
            hi = lo + (1 << shift)
            got: list[tuple[int, bytes]] = []
            i = find(bisect_left(spos, lo))
            while i < n and spos[i] < hi:
                j = order[i]
                got.append(items[j])
                taken[j] = True
                nxt[i] = i + 1
                if len(got) == Z:
                    break
                i = find(i + 1)
            if got:
                placed[bid] = got
        new_stash = {a: p for j, (a, p) in enumerate(items) if not taken[j]}
        return new_stash, placed

    # -- test support ------------------------------------------------------

    def tree_blocks(self) -> dict[int, int]:
        """Decrypt the whole server tree; returns {address: bucket id}.

        White-box helper for invariant checks; never used by protocols.
        """
        blobs = self.store.batch_get(self._bucket_keys)
        total = self.n_buckets * self.config.Z
        bodies = open_slots(self.key.data, b"".join(blobs), total, self.body_size)
        found: dict[int, int] = {}
        for i in range(total):
            addr = int.from_bytes(bodies[i * self.body_size:i * self.body_size + ADDR_SIZE], "big")
            if addr != DUMMY_ADDR:
                if addr in found:
                    raise AssertionError(f"address {addr} stored twice")
                found[addr] = i // self.config.Z
        return found


def oram_init(config: OramConfig, key: SymKey, store: Kvs,
              rng: random.Random, trace: bool = False) -> OramState:
    """Populate empty storage with encrypted dummies and build the client.

    Writes all ``2^(L+1) - 1`` buckets, ``Z`` fresh dummy ciphertexts
    each, in one batch; draws a uniform position map.
    """
    state = OramState(config, key, store, rng, trace=trace)
    try:
        store.get(bucket_key(0))
    except KeyNotFoundError:
        pass
    else:
        raise StorageNotEmptyError("storage already holds a bucket tree; clear it first")
    total = state.n_buckets * config.Z
    plain = state._dummy_body * total
    ivs = rng.randbytes(IV_SIZE * total)
    sealed = seal_slots(key.data, plain, ivs, total, state.body_size)
    bb = state.bucket_bytes
    store.batch_put([(state._bucket_keys[b], sealed[b * bb:(b + 1) * bb])
                     for b in range(state.n_buckets)])
    return state
