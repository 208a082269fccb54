"""Untrusted key-value storage: in-memory, on-disk log, and remote TCP.

All backends share one contract: 8-byte keys, arbitrary byte values,
get-after-put reads the last value written, batch operations complete
in one round trip and are all-or-nothing. ``CountingKvs`` instruments
round trips and logical traffic; ``KvsView`` carves namespaces out of
the key space so several ORAM stores can share one server.
"""

from __future__ import annotations

import socket
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

from shrouddb import wire
from shrouddb.errors import (
    BatchError,
    KeyNotFoundError,
    ParameterError,
    StorageClosedError,
    StorageError,
)

KEY_SIZE = 8

# namespace layout for shared stores: top 12 bits of the 8-byte key
NAMESPACE_BITS = 12
INDEX_BITS = 64 - NAMESPACE_BITS
MAX_INDEX = 1 << INDEX_BITS
META_NAMESPACE = (1 << NAMESPACE_BITS) - 1


def _check_key(key: bytes) -> None:
    if not isinstance(key, bytes) or len(key) != KEY_SIZE:
        raise ParameterError(f"keys are {KEY_SIZE}-byte strings, got {key!r}")


class Kvs:
    """Backend interface; subclasses provide the four operations."""

    def get(self, key: bytes) -> bytes:
        raise NotImplementedError

    def put(self, key: bytes, value: bytes) -> None:
        raise NotImplementedError

    def batch_get(self, keys: list[bytes]) -> list[bytes]:
        raise NotImplementedError

    def batch_put(self, pairs: list[tuple[bytes, bytes]]) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class MemoryKvs(Kvs):
    """Process-local dict store; the default test and bench backend."""

    def __init__(self):
        self._data: dict[bytes, bytes] = {}
        self._lock = threading.Lock()
        self._closed = False

    def _ensure_open(self):
        if self._closed:
            raise StorageClosedError("handle is closed")

    def get(self, key: bytes) -> bytes:
        self._ensure_open()
        _check_key(key)
        try:
            return self._data[key]
        except KeyError:
            raise KeyNotFoundError(key) from None

    def put(self, key: bytes, value: bytes) -> None:
        self._ensure_open()
        _check_key(key)
        with self._lock:
            self._data[key] = bytes(value)

    def batch_get(self, keys: list[bytes]) -> list[bytes]:
        self._ensure_open()
        if not keys:
            raise ParameterError("batch_get requires at least one key")
        for k in keys:
            _check_key(k)
        with self._lock:
            missing = [k for k in keys if k not in self._data]
            if missing:
                raise BatchError(f"{len(missing)} keys missing: {missing[:4]}", missing)
            return [self._data[k] for k in keys]

    def batch_put(self, pairs: list[tuple[bytes, bytes]]) -> None:
        self._ensure_open()
        if not pairs:
            raise ParameterError("batch_put requires at least one pair")
        for k, _ in pairs:
            _check_key(k)
        with self._lock:
            for k, v in pairs:
                self._data[k] = bytes(v)

    def clear(self) -> None:
        with self._lock:
            self._data.clear()

    def total_bytes(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._data.values())

    def __len__(self) -> int:
        return len(self._data)

    def close(self) -> None:
        self._closed = True


class DiskKvs(Kvs):
    """Append-only log with an in-memory offset index.

    One file per store; records are ``key(8) || u32 length || value``.
    Reopening rebuilds the index by a single forward scan; later
    records for a key shadow earlier ones. No compaction.
    """

    def __init__(self, path: str | Path):
        self._path = Path(path)
        self._index: dict[bytes, tuple[int, int]] = {}
        self._lock = threading.Lock()
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self._path, "a+b")
        self._scan()

    def _scan(self):
        self._file.seek(0)
        off = 0
        while True:
            header = self._file.read(KEY_SIZE + 4)
            if len(header) < KEY_SIZE + 4:
                break
            key = header[:KEY_SIZE]
            (vlen,) = struct.unpack(">I", header[KEY_SIZE:])
            self._index[key] = (off + KEY_SIZE + 4, vlen)
            self._file.seek(vlen, 1)
            off += KEY_SIZE + 4 + vlen
        self._file.seek(0, 2)

    def _ensure_open(self):
        if self._file.closed:
            raise StorageClosedError("handle is closed")

    def _append(self, key: bytes, value: bytes) -> None:
        off = self._file.tell()
        self._file.write(key + struct.pack(">I", len(value)) + value)
        self._index[key] = (off + KEY_SIZE + 4, len(value))

    def get(self, key: bytes) -> bytes:
        self._ensure_open()
        _check_key(key)
        with self._lock:
            try:
                off, vlen = self._index[key]
            except KeyError:
                raise KeyNotFoundError(key) from None
            self._file.flush()
            self._file.seek(off)
            value = self._file.read(vlen)
            self._file.seek(0, 2)
            return value

    def put(self, key: bytes, value: bytes) -> None:
        self._ensure_open()
        _check_key(key)
        with self._lock:
            self._append(key, value)
            self._file.flush()

    def batch_get(self, keys: list[bytes]) -> list[bytes]:
        self._ensure_open()
        if not keys:
            raise ParameterError("batch_get requires at least one key")
        for k in keys:
            _check_key(k)
        with self._lock:
            missing = [k for k in keys if k not in self._index]
            if missing:
                raise BatchError(f"{len(missing)} keys missing: {missing[:4]}", missing)
            self._file.flush()
            out = []
            for k in keys:
                off, vlen = self._index[k]
                self._file.seek(off)
                out.append(self._file.read(vlen))
            self._file.seek(0, 2)
            return out

    def batch_put(self, pairs: list[tuple[bytes, bytes]]) -> None:
        self._ensure_open()
        if not pairs:
            raise ParameterError("batch_put requires at least one pair")
        for k, _ in pairs:
            _check_key(k)
        with self._lock:
            for k, v in pairs:
                self._append(k, v)
            self._file.flush()

    def total_bytes(self) -> int:
        with self._lock:
            return sum(vlen for _, vlen in self._index.values())

    def __len__(self) -> int:
        return len(self._index)

    def close(self) -> None:
        if not self._file.closed:
            self._file.flush()
            self._file.close()


class RemoteKvs(Kvs):
    """Client for the TCP server in ``shrouddb.server``.

    One connection per handle; the engine opens one handle per ORAM
    worker, so connections never interleave requests.
    """

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
            self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError as exc:
            raise StorageError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._closed = False

    def _call(self, opcode: int, payload: bytes) -> tuple[int, bytes]:
        if self._closed:
            raise StorageClosedError("handle is closed")
        try:
            wire.send_request(self._sock, opcode, payload)
            return wire.read_response(self._sock, opcode)
        except (ConnectionError, OSError, ValueError) as exc:
            raise StorageError(f"transport failure: {exc}") from exc

    def get(self, key: bytes) -> bytes:
        _check_key(key)
        status, payload = self._call(wire.OP_GET, key)
        if status == wire.ST_OK:
            return payload
        if status == wire.ST_MISSING:
            raise KeyNotFoundError(key)
        raise StorageError(payload.decode(errors="replace"))

    def put(self, key: bytes, value: bytes) -> None:
        _check_key(key)
        status, payload = self._call(wire.OP_PUT, key + value)
        if status != wire.ST_OK:
            raise StorageError(payload.decode(errors="replace"))

    def batch_get(self, keys: list[bytes]) -> list[bytes]:
        if not keys:
            raise ParameterError("batch_get requires at least one key")
        for k in keys:
            _check_key(k)
        status, payload = self._call(wire.OP_BATCH_GET, wire.pack_keys(keys))
        if status == wire.ST_OK:
            return wire.unpack_values(payload)
        if status == wire.ST_MISSING:
            missing = wire.unpack_keys(payload)
            raise BatchError(f"{len(missing)} keys missing: {missing[:4]}", missing)
        raise StorageError(payload.decode(errors="replace"))

    def batch_put(self, pairs: list[tuple[bytes, bytes]]) -> None:
        if not pairs:
            raise ParameterError("batch_put requires at least one pair")
        for k, _ in pairs:
            _check_key(k)
        status, payload = self._call(wire.OP_BATCH_PUT, wire.pack_pairs(pairs))
        if status != wire.ST_OK:
            raise StorageError(payload.decode(errors="replace"))

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self._sock.close()
            except OSError:
                pass


@dataclass
class TrafficCounters:
    """Logical traffic: key/value bytes, identical across backends."""

    roundtrips: int = 0
    bytes_up: int = 0
    bytes_down: int = 0

    def snapshot(self) -> "TrafficCounters":
        return TrafficCounters(self.roundtrips, self.bytes_up, self.bytes_down)

    def reset(self) -> None:
        self.roundtrips = self.bytes_up = self.bytes_down = 0

    def add(self, other: "TrafficCounters") -> None:
        self.roundtrips += other.roundtrips
        self.bytes_up += other.bytes_up
        self.bytes_down += other.bytes_down


class CountingKvs(Kvs):
    """Wrapper that counts round trips and logical bytes moved."""

    def __init__(self, inner: Kvs):
        self.inner = inner
        self.counters = TrafficCounters()

    def get(self, key: bytes) -> bytes:
        self.counters.roundtrips += 1
        self.counters.bytes_up += KEY_SIZE
        value = self.inner.get(key)  # a miss still cost the round trip
        self.counters.bytes_down += len(value)
        return value

    def put(self, key: bytes, value: bytes) -> None:
        self.inner.put(key, value)
        self.counters.roundtrips += 1
        self.counters.bytes_up += KEY_SIZE + len(value)

    def batch_get(self, keys: list[bytes]) -> list[bytes]:
        self.counters.roundtrips += 1
        self.counters.bytes_up += KEY_SIZE * len(keys)
        values = self.inner.batch_get(keys)
        self.counters.bytes_down += sum(len(v) for v in values)
        return values

    def batch_put(self, pairs: list[tuple[bytes, bytes]]) -> None:
        self.inner.batch_put(pairs)
        self.counters.roundtrips += 1
        self.counters.bytes_up += sum(KEY_SIZE + len(v) for _, v in pairs)

    def close(self) -> None:
        self.inner.close()


class KvsView(Kvs):
    """Namespaced window onto a shared store.

    Maps local key ``i`` to global key ``(namespace << 52) | i``. With
    namespace 0 the mapping is the identity, so a standalone store sees
    plain 8-byte big-endian indices.
    """

    def __init__(self, inner: Kvs, namespace: int):
        if not 0 <= namespace <= META_NAMESPACE:
            raise ParameterError(f"namespace out of range: {namespace}")
        self.inner = inner
        self.namespace = namespace

    def _map(self, key: bytes) -> bytes:
        _check_key(key)
        idx = int.from_bytes(key, "big")
        if idx >= MAX_INDEX:
            raise ParameterError(f"key index {idx} exceeds namespaced key space")
        return ((self.namespace << INDEX_BITS) | idx).to_bytes(KEY_SIZE, "big")

    def get(self, key: bytes) -> bytes:
        return self.inner.get(self._map(key))

    def put(self, key: bytes, value: bytes) -> None:
        self.inner.put(self._map(key), value)

    def batch_get(self, keys: list[bytes]) -> list[bytes]:
        return self.inner.batch_get([self._map(k) for k in keys])

    def batch_put(self, pairs: list[tuple[bytes, bytes]]) -> None:
        self.inner.batch_put([(self._map(k), v) for k, v in pairs])

    def close(self) -> None:
        pass  # views never own the underlying handle


def bucket_key(index: int) -> bytes:
    """8-byte big-endian bucket key."""
    return index.to_bytes(KEY_SIZE, "big")


def parse_backend(spec: str) -> tuple[str, str | None]:
    """Parse a --storage value into (kind, endpoint-or-None)."""
    if spec == "memory":
        return "memory", None
    if spec == "disk":
        return "disk", None
    if spec.startswith("remote="):
        return "remote", spec.split("=", 1)[1]
    raise ParameterError(f"unknown storage spec {spec!r}")


def connect(spec: str, data_dir: str | Path | None = None) -> Kvs:
    """Open a backend from a --storage spec string."""
    kind, endpoint = parse_backend(spec)
    if kind == "memory":
        return MemoryKvs()
    if kind == "disk":
        if data_dir is None:
            raise ParameterError("disk backend requires a data directory")
        return DiskKvs(Path(data_dir) / "store.log")
    host, _, port = endpoint.rpartition(":")
    if not host:
        raise ParameterError(f"remote spec needs HOST:PORT, got {endpoint!r}")
    return RemoteKvs(host, int(port))
