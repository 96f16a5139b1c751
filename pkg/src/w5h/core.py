"""Six-dimension object and query model.

Every record (an email, a post, a check-in) is a :class:`TraceObject` whose
items are grouped under the dimensions what/who/when/where/why/how. Queries
share the same shape. Items are plain normalized strings; the dimension they
sit under determines their kind (term, entity, time token, location, source
tag).
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping


class Dimension(str, enum.Enum):
    WHAT = "what"
    WHO = "who"
    WHEN = "when"
    WHERE = "where"
    HOW = "how"
    WHY = "why"


#: Dimensions that carry features, in the order used to enumerate subsets.
FEATURE_DIMS: tuple[str, ...] = ("what", "who", "when", "where", "how")
ALL_DIMS: tuple[str, ...] = FEATURE_DIMS + ("why",)

TIME_TOKEN = re.compile(r"^(\d{4}|\d{4}-\d{2}|\d{4}-\d{2}-\d{2}|month:\d{2})$")


class W5HError(Exception):
    """Base class for errors raised by this package."""


class SchemaError(W5HError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _coerce_dims(dims: Mapping[str, Iterable[str]] | None) -> dict[str, tuple[str, ...]]:
    dims = dict(dims or {})
    unknown = set(dims) - set(ALL_DIMS)
    if unknown:
        raise SchemaError(f"unknown dimensions {sorted(unknown)}")
    if dims.get("why"):
        raise SchemaError("the why dimension is reserved and must stay empty")
    out = {}
    for d in ALL_DIMS:
        items = dims.get(d, ())
        if isinstance(items, str):
            raise SchemaError(f"dimension {d!r} must be a list of items")
        items = tuple(items)
        for it in items:
            if not isinstance(it, str) or not it:
                raise SchemaError(f"dimension {d!r} holds an empty or non-string item")
        if d == "when":
            bad = [t for t in items if not TIME_TOKEN.match(t)]
            if bad:
                raise SchemaError(f"malformed time tokens {bad}")
        out[d] = items
    return out


@dataclass(frozen=True)
class QueryObject:
    """A query: same per-dimension item lists as an object, without an id."""

    dims: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "dims", _coerce_dims(self.dims))

    def __getitem__(self, dim: str) -> tuple[str, ...]:
        return self.dims[dim]

    def __hash__(self):
        return hash(tuple(self.dims[d] for d in ALL_DIMS))

    @property
    def active_dims(self) -> tuple[str, ...]:
        return tuple(d for d in FEATURE_DIMS if self.dims[d])

    def is_empty(self) -> bool:
        return not self.active_dims

    def to_dict(self) -> dict:
        return {d: list(self.dims[d]) for d in FEATURE_DIMS if self.dims[d]}

    def to_string(self) -> str:
        """Render as ``dim:value`` pairs, the syntax accepted by the search command."""
        parts = []
        for d in FEATURE_DIMS:
            for v in self.dims[d]:
                parts.append(f'{d}:"{v}"' if " " in v else f"{d}:{v}")
        return " ".join(parts)


@dataclass(frozen=True)
class TraceObject:
    id: str
    dims: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise SchemaError("object id must be a non-empty string")
        object.__setattr__(self, "dims", _coerce_dims(self.dims))

    def __getitem__(self, dim: str) -> tuple[str, ...]:
        return self.dims[dim]

    def __hash__(self):
        return hash(self.id)

    def to_record(self) -> str:
        """Canonical one-line JSON serialization (stable key order, UTF-8 safe)."""
        rec = {"id": self.id, "dims": {d: list(self.dims[d]) for d in FEATURE_DIMS}}
        return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))


def matches(q: QueryObject, o: TraceObject) -> bool:
    """True iff ``o`` shares at least one item with ``q`` under the same dimension."""
    for d in FEATURE_DIMS:
        qi = q.dims[d]
        if qi and not set(qi).isdisjoint(o.dims[d]):
            return True
    return False


class Dataset:
    """Append-only collection of objects, frozen into id order.

    After :meth:`freeze` the object list is sorted by id, so positional index
    order equals ascending id order; ranking tie-breaks rely on this.
    """

    def __init__(self, objects: Iterable[TraceObject] = ()):
        self._pending: list[TraceObject] = []
        self._objects: tuple[TraceObject, ...] | None = None
        self._pos: dict[str, int] = {}
        for o in objects:
            self.add(o)

    def add(self, obj: TraceObject) -> None:
        if self._objects is not None:
            raise W5HError("dataset is frozen")
        self._pending.append(obj)

    def freeze(self) -> "Dataset":
        if self._objects is not None:
            return self
        objs = sorted(self._pending, key=lambda o: o.id)
        for a, b in zip(objs, objs[1:]):
            if a.id == b.id:
                raise SchemaError(f"duplicate object id {a.id!r}")
        self._objects = tuple(objs)
        self._pos = {o.id: i for i, o in enumerate(objs)}
        self._pending = []
        return self

    @property
    def frozen(self) -> bool:
        return self._objects is not None

    @property
    def objects(self) -> tuple[TraceObject, ...]:
        if self._objects is None:
            raise W5HError("dataset must be frozen first")
        return self._objects

    def __len__(self) -> int:
        return len(self.objects)

    def __iter__(self) -> Iterator[TraceObject]:
        return iter(self.objects)

    def __getitem__(self, key: int | str) -> TraceObject:
        if isinstance(key, str):
            return self.objects[self._pos[key]]
        return self.objects[key]

    def __contains__(self, oid: str) -> bool:
        return oid in self._pos

    def position(self, oid: str) -> int:
        return self._pos[oid]

    @property
    def ids(self) -> list[str]:
        return [o.id for o in self.objects]

    def to_lines(self) -> Iterator[str]:
        for o in self.objects:
            yield o.to_record()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        from .ingest import parse_trace_record

        ds = cls()
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if line.strip():
                    ds.add(parse_trace_record(line, line_no=n))
        return ds.freeze()
