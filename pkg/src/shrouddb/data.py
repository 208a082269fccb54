"""Plain data model shared by the engine, index, and benchmarks."""

from __future__ import annotations

from dataclasses import dataclass, field

from shrouddb.errors import DataError, ParameterError

__all__ = ["Record", "Database", "Query", "POINT", "RANGE"]

POINT = "point"
RANGE = "range"


@dataclass(frozen=True)
class Record:
    """One row: unique id, integer search key, opaque payload."""

    rid: int
    key: int
    payload: bytes

    def __post_init__(self):
        if self.rid < 0:
            raise DataError("record id must be non-negative")


@dataclass
class Database:
    """A list of records plus optional extra searchable columns.

    ``attributes`` maps a column name to per-record integer keys,
    aligned with ``records``; the primary column is ``Record.key``.
    """

    records: list[Record]
    attributes: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        rids = {r.rid for r in self.records}
        if len(rids) != len(self.records):
            raise DataError("record ids must be unique")
        for name, column in self.attributes.items():
            if len(column) != len(self.records):
                raise DataError(f"column {name!r} has {len(column)} values "
                                f"for {len(self.records)} records")

    def __len__(self) -> int:
        return len(self.records)

    def column(self, attribute: str) -> list[int]:
        if attribute == "key":
            return [r.key for r in self.records]
        try:
            return self.attributes[attribute]
        except KeyError:
            raise DataError(f"no column named {attribute!r}") from None


@dataclass(frozen=True)
class Query:
    """Inclusive range ``[a, b]`` (a point when ``a == b``) over one column."""

    kind: str
    a: int
    b: int
    attribute: str = "key"

    def __post_init__(self):
        if self.kind not in (POINT, RANGE):
            raise ParameterError(f"unknown query kind {self.kind!r}")
        if self.kind == POINT and self.a != self.b:
            raise ParameterError("point query must have a == b")
        if self.a > self.b:
            raise ParameterError(f"empty range [{self.a}, {self.b}]")


def point_query(a: int, attribute: str = "key") -> Query:
    return Query(POINT, a, a, attribute)


def range_query(a: int, b: int, attribute: str = "key") -> Query:
    return Query(RANGE, a, b, attribute)
