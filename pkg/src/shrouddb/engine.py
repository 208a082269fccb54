"""Query engine: partitioned ORAM stores behind a DP volume shield.

Records are split pseudorandomly across ``m`` independent ORAMs. A
query resolves matching record ids through a local index, asks a DP
sanitizer for a noisy overcount, and pads each ORAM's fetch list with
reads of random non-matching records up to its share of the noisy
count, so the storage server observes only uniform path reads and a
differentially private number of them.

Three volume modes:

* ``single``: one ORAM, one sanitizer, fetch exactly the noisy count;
* ``gamma``: m ORAMs share one sanitizer; every ORAM fetches an equal
  slice of the noisy count, inflated by a load factor so that w.h.p.
  no partition's true matches exceed its slice;
* ``no-gamma``: every ORAM keeps its own sanitizer over its own
  records and fetches its own noisy count (budgets compose by max
  since the partitions are disjoint).
"""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from shrouddb import bptree, sanitizer
from shrouddb.crypto import SymKey, keygen, partition_of
from shrouddb.data import Database, Query, Record
from shrouddb.errors import (
    BudgetError,
    DataError,
    ParameterError,
    QueryError,
)
from shrouddb.oram import OramConfig, OramState, oram_init, read_op, write_op
from shrouddb.rng import derive_stream
from shrouddb.storage import (
    META_NAMESPACE,
    CountingKvs,
    Kvs,
    KvsView,
    RemoteKvs,
    bucket_key,
    connect,
    parse_backend,
)

__all__ = [
    "EngineConfig",
    "EngineState",
    "QueryResult",
    "setup",
    "query",
    "register_attribute",
    "compute_gamma",
    "MODES",
]

MODES = ("single", "gamma", "no-gamma")

RID_SIZE = 8
KEY_SIZE = 8
BULK_CHUNK = 1 << 16


def compute_gamma(m: int, beta: float, k0: int) -> float:
    """Load inflation so that w.h.p. no partition holds more than
    ``(1 + gamma) * k0 / m`` of ``k0`` records spread over ``m`` bins."""
    if m < 1:
        raise ParameterError("partition count must be >= 1")
    if not 0.0 < beta < 1.0:
        raise ParameterError("beta must be in (0, 1)")
    if k0 < 1:
        raise ParameterError("count must be >= 1")
    return math.sqrt(-3.0 * m * math.log(beta) / k0)


@dataclass(frozen=True)
class EngineConfig:
    """Deployment shape: partitioning, volume mode, privacy budget."""

    domain: int
    record_size: int
    m: int = 1
    mode: str = "gamma"
    epsilon: float = math.log(2)
    beta: float = 2.0 ** -20
    fanout: int = 16
    index_fanout: int = 200
    lambda_sec: int = 128
    Z: int = 5
    budget: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.m < 1:
            raise ParameterError("partition count must be >= 1")
        if self.mode == "single" and self.m != 1:
            raise ParameterError("single mode uses exactly one ORAM")
        if self.domain < 1:
            raise ParameterError("domain size must be >= 1")
        if self.record_size < 1:
            raise ParameterError("record size must be >= 1")
        if self.epsilon <= 0.0:
            raise ParameterError("epsilon must be positive")
        if not 0.0 < self.beta < 1.0:
            raise ParameterError("beta must be in (0, 1)")
        if self.fanout < 2:
            raise ParameterError("sanitizer fanout must be >= 2")
        if self.budget is not None and self.budget < self.epsilon:
            raise BudgetError(f"budget {self.budget} below first epsilon {self.epsilon}")


@dataclass
class QueryResult:
    """Records plus the observable cost of retrieving them."""

    records: list[Record]
    true_count: int
    fetched_count: int
    failed: bool
    per_oram_requests: list[int]
    roundtrips: int
    bytes_up: int
    bytes_down: int
    oram_accesses: int


@dataclass
class EngineState:
    """Client-side state: keys, maps, stashes, sanitizers, index."""

    config: EngineConfig
    db: Database
    padded_domain: int
    hash_key: SymKey
    orams: list[OramState]
    counters: list
    addr_of: dict[int, tuple[int, int]]      # rid -> (oram id, address)
    n_per: list[int]                         # records per ORAM
    indexes: dict[str, bptree.BPlusTree]
    sanitizers: dict[str, list]              # attr -> [shared] or [per-ORAM...]
    budgets: dict[str, float]
    noise_rngs: list[random.Random]
    seed: int
    meta_store: Kvs | None
    owned_stores: list[Kvs] = field(default_factory=list)
    _pool: ThreadPoolExecutor | None = None
    _meta_slot: int = 0

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None
        for store in self.owned_stores:
            store.close()
        self.owned_stores = []

    def __enter__(self) -> "EngineState":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def oram_storage_bytes(self) -> int:
        return sum(st.n_buckets * st.bucket_bytes for st in self.orams)

    def sanitizer_bytes(self) -> int:
        return sum(len(sanitizer.serialize(ds))
                   for group in self.sanitizers.values() for ds in group)


def _pad_domain(domain: int, k: int) -> int:
    n = k
    while n < domain:
        n *= k
    return n


def _block(rid: int, key: int, payload: bytes) -> bytes:
    return rid.to_bytes(RID_SIZE, "big") + key.to_bytes(KEY_SIZE, "big") + payload


def _parse_block(blob: bytes) -> tuple[int, int, bytes]:
    rid = int.from_bytes(blob[:RID_SIZE], "big")
    key = int.from_bytes(blob[RID_SIZE:RID_SIZE + KEY_SIZE], "big")
    return rid, key, blob[RID_SIZE + KEY_SIZE:]


def _open_stores(config: EngineConfig, storage, data_dir):
    """One Kvs per ORAM plus one for metadata.

    A shared in-process store is fanned out through namespace views; a
    remote backend gets one connection per ORAM so batches can fly in
    parallel without interleaving frames.
    """
    owned: list[Kvs] = []
    if isinstance(storage, Kvs):
        base = [storage] * config.m
        meta = storage
    else:
        kind, endpoint = parse_backend(storage)
        if kind == "remote":
            host, port = endpoint.split(":")
            base = []
            for _ in range(config.m):
                conn = RemoteKvs(host, int(port))
                base.append(conn)
                owned.append(conn)
            meta = RemoteKvs(host, int(port))
            owned.append(meta)
        else:
            shared = connect(storage, data_dir)
            owned.append(shared)
            base = [shared] * config.m
            meta = shared
    oram_stores = [KvsView(base[j - 1], j - 1) for j in range(1, config.m + 1)]
    meta_store = KvsView(meta, META_NAMESPACE)
    return oram_stores, meta_store, owned


def setup(db: Database, config: EngineConfig, storage, seed: int,
          data_dir=None) -> EngineState:
    """Partition, encrypt and upload the database; build sanitizers and
    the local index. All randomness derives from ``seed``."""
    for r in db.records:
        if len(r.payload) != config.record_size:
            raise DataError(f"record {r.rid} payload is {len(r.payload)} bytes, "
                            f"expected {config.record_size}")
        if not 0 <= r.key < config.domain:
            raise DataError(f"record {r.rid} key {r.key} outside [0, {config.domain})")

    m = config.m
    hash_key = keygen(config.lambda_sec, derive_stream(seed, "key:hash"))
    groups: list[list[Record]] = [[] for _ in range(m)]
    addr_of: dict[int, tuple[int, int]] = {}
    for r in db.records:
        j = partition_of(hash_key, r.rid, m)
        addr_of[r.rid] = (j, len(groups[j - 1]))
        groups[j - 1].append(r)
    n_per = [len(g) for g in groups]

    oram_stores, meta_store, owned = _open_stores(config, storage, data_dir)
    counters = []
    orams: list[OramState] = []
    block_payload = RID_SIZE + KEY_SIZE + config.record_size
    for j in range(1, m + 1):
        counting = CountingKvs(oram_stores[j - 1])
        counters.append(counting.counters)
        oram_key = keygen(config.lambda_sec, derive_stream(seed, f"key:oram:{j}"))
        oram_rng = derive_stream(seed, f"oram:{j}")
        cfg = OramConfig(capacity=n_per[j - 1] + 1, block_payload=block_payload,
                         Z=config.Z)
        st = oram_init(cfg, oram_key, counting, oram_rng)
        orams.append(st)
        records = groups[j - 1]
        for lo in range(0, len(records), BULK_CHUNK):
            chunk = records[lo:lo + BULK_CHUNK]
            st.batch_access([write_op(addr_of[r.rid][1], _block(r.rid, r.key, r.payload))
                             for r in chunk])

    state = EngineState(
        config=config, db=db, padded_domain=_pad_domain(config.domain, config.fanout),
        hash_key=hash_key, orams=orams, counters=counters, addr_of=addr_of,
        n_per=n_per, indexes={}, sanitizers={}, budgets={},
        noise_rngs=[derive_stream(seed, f"noise:{j}") for j in range(1, m + 1)],
        seed=seed, meta_store=meta_store, owned_stores=owned,
        _pool=ThreadPoolExecutor(max_workers=m) if m > 1 else None,
    )
    _install_attribute(state, "key", config.epsilon)
    return state


def _install_attribute(state: EngineState, attribute: str, epsilon: float) -> None:
    config = state.config
    column = state.db.column(attribute)
    for v in column:
        if not 0 <= v < config.domain:
            raise DataError(f"column {attribute!r} value {v} outside "
                            f"[0, {config.domain})")
    state.indexes[attribute] = bptree.create_index(
        state.db, config.m, state.hash_key, attribute, config.index_fanout)

    N, k = state.padded_domain, config.fanout
    if config.mode == "no-gamma":
        group = []
        for j in range(1, config.m + 1):
            keys = [column[i] for i, r in enumerate(state.db.records)
                    if state.addr_of[r.rid][0] == j]
            rng = derive_stream(state.seed, f"sanitizer:{attribute}:{j}")
            group.append(sanitizer.build_range_sanitizer(
                keys, N, k, epsilon, config.beta, rng))
    else:
        rng = derive_stream(state.seed, f"sanitizer:{attribute}:0")
        group = [sanitizer.build_range_sanitizer(
            column, N, k, epsilon, config.beta, rng)]
    state.sanitizers[attribute] = group
    state.budgets[attribute] = epsilon
    if state.meta_store is not None:
        for ds in group:
            state.meta_store.put(bucket_key(state._meta_slot), sanitizer.serialize(ds))
            state._meta_slot += 1


def register_attribute(state: EngineState, attribute: str, epsilon: float) -> None:
    """Index and sanitize one more column, charging its budget.

    Columns live over the same records, so budgets add up; the total
    must stay within ``config.budget`` when one is set.
    """
    if epsilon <= 0.0:
        raise ParameterError("epsilon must be positive")
    if attribute in state.indexes:
        raise ParameterError(f"attribute {attribute!r} already registered")
    if state.config.budget is not None:
        spent = sanitizer.compose(list(state.budgets.values()) + [epsilon],
                                  disjoint=False)
        if spent > state.config.budget + 1e-12:
            raise BudgetError(f"budget {state.config.budget} exceeded: "
                              f"registering {attribute!r} needs {spent:.6f}")
    _install_attribute(state, attribute, epsilon)


def spent_budget(state: EngineState) -> float:
    """Total privacy budget across registered attributes."""
    return sanitizer.compose(list(state.budgets.values()), disjoint=False)


def _noise_addresses(n_j: int, taken: set[int], need: int,
                     rng: random.Random) -> list[int]:
    """``need`` distinct addresses outside ``taken``; when the partition
    runs out, the reserved never-written address ``n_j`` pads the rest."""
    avail = n_j - len(taken)
    take = min(need, avail)
    picks: list[int] = []
    if take > 0:
        if take * 3 >= avail:
            pool = [a for a in range(n_j) if a not in taken]
            picks = rng.sample(pool, take)
        else:
            chosen: set[int] = set()
            while len(picks) < take:
                a = rng.randrange(n_j)
                if a not in taken and a not in chosen:
                    chosen.add(a)
                    picks.append(a)
    picks.extend([n_j] * (need - take))
    return picks


def query(state: EngineState, q: Query) -> QueryResult:
    """Answer ``q`` exactly while the server sees only the noisy volume.

    If a noisy count undershoots the truth the query is marked failed
    (volume hiding broke for it) but still answers correctly.
    """
    config = state.config
    if q.attribute not in state.indexes:
        raise QueryError(f"attribute {q.attribute!r} is not indexed")
    if not 0 <= q.a <= q.b < config.domain:
        raise QueryError(f"range [{q.a}, {q.b}] outside domain [0, {config.domain})")

    locators = bptree.lookup(state.indexes[q.attribute], q)
    groups = bptree.group_by_oram(locators, config.m)
    t_rids = [sorted(groups[j]) for j in range(1, config.m + 1)]
    dss = state.sanitizers[q.attribute]

    m = config.m
    failed = False
    quotas: list[int] = []
    if config.mode == "no-gamma":
        for j in range(m):
            quotas.append(sanitizer.sanitizer_query(dss[j], q.a, q.b))
    else:
        k0 = sanitizer.sanitizer_query(dss[0], q.a, q.b)
        if config.mode == "single":
            quotas = [k0]
        else:
            if k0 == 0:
                quotas = [0] * m
            else:
                gamma = compute_gamma(m, config.beta, k0)
                quotas = [math.ceil((1.0 + gamma) * k0 / m)] * m

    plans: list[list[int]] = []
    for j in range(m):
        n_j = state.n_per[j]
        t_addrs = [state.addr_of[rid][1] for rid in t_rids[j]]
        if quotas[j] < len(t_addrs):
            failed = True
            reads = list(t_addrs)
        else:
            reads = t_addrs + _noise_addresses(
                n_j, set(t_addrs), quotas[j] - len(t_addrs), state.noise_rngs[j])
        state.noise_rngs[j].shuffle(reads)
        plans.append(reads)

    before = [c.snapshot() for c in state.counters]

    def fetch(j: int) -> list[bytes]:
        if not plans[j]:
            return []
        return state.orams[j].batch_access([read_op(a) for a in plans[j]])

    if state._pool is not None:
        blocks = list(state._pool.map(fetch, range(m)))
    else:
        blocks = [fetch(j) for j in range(m)]

    records: list[Record] = []
    for j in range(m):
        want = {state.addr_of[rid][1]: rid for rid in t_rids[j]}
        for addr, blob in zip(plans[j], blocks[j]):
            rid = want.pop(addr, None)
            if rid is None:
                continue
            got_rid, got_key, payload = _parse_block(blob)
            if got_rid != rid:
                raise DataError(f"store returned record {got_rid} for id {rid}")
            records.append(Record(got_rid, got_key, payload))
    records.sort(key=lambda r: r.rid)

    rt = up = down = 0
    for j, c in enumerate(state.counters):
        b, s = before[j], c.snapshot()
        rt += s.roundtrips - b.roundtrips
        up += s.bytes_up - b.bytes_up
        down += s.bytes_down - b.bytes_down
    fetched = sum(len(p) for p in plans)
    return QueryResult(
        records=records, true_count=len(locators), fetched_count=fetched,
        failed=failed, per_oram_requests=[len(p) for p in plans],
        roundtrips=rt, bytes_up=up, bytes_down=down, oram_accesses=fetched,
    )
