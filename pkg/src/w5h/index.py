"""Per-dimension inverted index with BM25 and field-based BM25 (BM25F) scoring.

Each feature dimension is one field; items are indexed as single tokens
(entities and time tokens are not split). A sixth field, ``all``, holds the
concatenation of every field and backs plain BM25 and the shared idf.
"""

from __future__ import annotations

import gzip
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import FEATURE_DIMS, Dataset, QueryObject, W5HError

ALL_FIELD = "all"
FIELDS = FEATURE_DIMS + (ALL_FIELD,)
INDEX_FORMAT_VERSION = 1


class UnknownObject(W5HError, KeyError):
    pass


@dataclass
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75
    weights: dict[str, float] = field(default_factory=lambda: {d: 1.0 for d in FEATURE_DIMS})

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0 <= self.b <= 1:
            raise ValueError("b must lie in [0, 1]")
        w = {d: 1.0 for d in FEATURE_DIMS}
        w.update(self.weights or {})
        if any(v < 0 for v in w.values()):
            raise ValueError("field weights must be >= 0")
        self.weights = w


class _Field:
    __slots__ = ("postings", "lengths", "total")

    def __init__(self, postings: dict[str, tuple[np.ndarray, np.ndarray]], lengths: np.ndarray):
        self.postings = postings
        self.lengths = lengths
        self.total = int(lengths.sum())

    def avglen(self, n: int) -> float:
        return self.total / n if n else 0.0

    def tf(self, term: str, pos: int) -> int:
        hit = self.postings.get(term)
        if hit is None:
            return 0
        docs, tfs = hit
        k = np.searchsorted(docs, pos)
        return int(tfs[k]) if k < len(docs) and docs[k] == pos else 0


def _field_tokens(obj, f: str) -> tuple[str, ...]:
    if f == ALL_FIELD:
        return tuple(t for d in FEATURE_DIMS for t in obj.dims[d])
    return obj.dims[f]


class InvertedIndex:
    """Postings, field lengths and document frequencies over a frozen dataset."""

    def __init__(self, ids: list[str], fields: dict[str, _Field]):
        self.ids = ids
        self.n = len(ids)
        self.fields = fields
        self._pos = {oid: i for i, oid in enumerate(ids)}

    # ------------------------------------------------------------ statistics
    def df(self, term: str, f: str = ALL_FIELD) -> int:
        hit = self.fields[f].postings.get(term)
        return 0 if hit is None else len(hit[0])

    def length(self, oid: str, f: str) -> int:
        return int(self.fields[f].lengths[self.position(oid)])

    def avglen(self, f: str) -> float:
        return self.fields[f].avglen(self.n)

    def idf(self, term: str) -> float:
        df = self.df(term, ALL_FIELD)
        return math.log(1.0 + (self.n - df + 0.5) / (df + 0.5))

    def position(self, oid: str) -> int:
        try:
            return self._pos[oid]
        except KeyError:
            raise UnknownObject(oid) from None

    def postings(self, term: str, f: str) -> tuple[np.ndarray, np.ndarray]:
        hit = self.fields[f].postings.get(term)
        if hit is None:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return hit

    # --------------------------------------------------------------- scoring
    def _norm(self, f: str, docs: np.ndarray, b: float) -> np.ndarray:
        fld = self.fields[f]
        avg = fld.avglen(self.n)
        if avg == 0:
            return np.ones(len(docs))
        return 1.0 - b + b * fld.lengths[docs] / avg

    def bm25_all(self, terms, p: Bm25Params) -> np.ndarray:
        """BM25 over the concatenated field for every object at once."""
        scores = np.zeros(self.n)
        for t in terms:
            docs, tfs = self.postings(t, ALL_FIELD)
            if len(docs) == 0:
                continue
            tf = tfs.astype(float)
            scores[docs] += self.idf(t) * tf / (tf + p.k1 * self._norm(ALL_FIELD, docs, p.b))
        return scores

    def bm25f_all(self, q: QueryObject, p: Bm25Params, dims=FEATURE_DIMS) -> np.ndarray:
        """BM25F for every object; terms of query dimension d only hit field d."""
        scores = np.zeros(self.n)
        for d in dims:
            w = p.weights[d]
            for t in q.dims[d]:
                docs, tfs = self.postings(t, d)
                if len(docs) == 0:
                    continue
                tft = w * tfs / self._norm(d, docs, p.b)
                with np.errstate(invalid="ignore", divide="ignore"):
                    contrib = np.where(tft > 0, tft / (p.k1 + tft), 0.0)
                scores[docs] += self.idf(t) * contrib
        return scores

    def match_mask(self, q: QueryObject, dims=FEATURE_DIMS) -> np.ndarray:
        """Objects sharing at least one item with q on the same dimension."""
        mask = np.zeros(self.n, dtype=bool)
        for d in dims:
            for t in q.dims[d]:
                mask[self.postings(t, d)[0]] = True
        return mask

    # ----------------------------------------------------------- persistence
    def save(self, path) -> None:
        payload = {"version": INDEX_FORMAT_VERSION, "ids": self.ids, "fields": {}}
        for f in FIELDS:
            fld = self.fields[f]
            payload["fields"][f] = {
                "lengths": fld.lengths.tolist(),
                "postings": {t: [d.tolist(), c.tolist()] for t, (d, c) in sorted(fld.postings.items())},
            }
        raw = json.dumps(payload, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
        with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
            gz.write(raw)

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        with gzip.open(path, "rb") as gz:
            payload = json.load(io.TextIOWrapper(gz, encoding="utf-8"))
        if payload.get("version") != INDEX_FORMAT_VERSION:
            raise W5HError(f"unsupported index version {payload.get('version')}")
        fields = {}
        for f in FIELDS:
            raw = payload["fields"][f]
            post = {t: (np.asarray(d, np.int64), np.asarray(c, np.int64)) for t, (d, c) in raw["postings"].items()}
            fields[f] = _Field(post, np.asarray(raw["lengths"], np.int64))
        return cls(payload["ids"], fields)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InvertedIndex) or self.ids != other.ids:
            return False
        for f in FIELDS:
            a, b = self.fields[f], other.fields[f]
            if not np.array_equal(a.lengths, b.lengths) or a.postings.keys() != b.postings.keys():
                return False
            for t, (d, c) in a.postings.items():
                d2, c2 = b.postings[t]
                if not (np.array_equal(d, d2) and np.array_equal(c, c2)):
                    return False
        return True


def build_index(d: Dataset) -> InvertedIndex:
    if not d.frozen:
        raise W5HError("index requires a frozen dataset")
    fields = {}
    for f in FIELDS:
        acc: dict[str, dict[int, int]] = {}
        lengths = np.zeros(len(d), dtype=np.int64)
        for pos, obj in enumerate(d):
            toks = _field_tokens(obj, f)
            lengths[pos] = len(toks)
            for t in toks:
                slot = acc.setdefault(t, {})
                slot[pos] = slot.get(pos, 0) + 1
        post = {t: (np.fromiter(c.keys(), np.int64, len(c)), np.fromiter(c.values(), np.int64, len(c)))
                for t, c in acc.items()}
        fields[f] = _Field(post, lengths)
    return InvertedIndex(d.ids, fields)


def bm25_terms(q: QueryObject, dims=FEATURE_DIMS) -> list[str]:
    return [t for d in dims for t in q.dims[d]]


def bm25_score(q: QueryObject, oid: str, idx: InvertedIndex, p: Bm25Params | None = None,
               dims=FEATURE_DIMS) -> float:
    """BM25 of one object against the query items of ``dims`` on the concatenated field."""
    p = p or Bm25Params()
    pos = idx.position(oid)
    fld = idx.fields[ALL_FIELD]
    avg = fld.avglen(idx.n)
    norm = 1.0 - p.b + p.b * fld.lengths[pos] / avg if avg else 1.0
    score = 0.0
    for t in bm25_terms(q, dims):
        tf = fld.tf(t, pos)
        if tf:
            score += idx.idf(t) * tf / (tf + p.k1 * norm)
    return score


def bm25f_score(q: QueryObject, oid: str, idx: InvertedIndex, p: Bm25Params | None = None,
                dims=FEATURE_DIMS) -> float:
    p = p or Bm25Params()
    pos = idx.position(oid)
    score = 0.0
    for d in dims:
        fld = idx.fields[d]
        avg = fld.avglen(idx.n)
        norm = 1.0 - p.b + p.b * fld.lengths[pos] / avg if avg else 1.0
        for t in q.dims[d]:
            tf = fld.tf(t, pos)
            tft = p.weights[d] * tf / norm
            if tft > 0:
                score += idx.idf(t) * tft / (p.k1 + tft)
    return score


def rank_scores(scores: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Positions ordered by score descending, ties by position (= object id) ascending."""
    cand = np.flatnonzero(mask) if mask is not None else np.arange(len(scores))
    order = np.lexsort((cand, -scores[cand]))
    return cand[order]


def retrieve_candidates(q: QueryObject, idx: InvertedIndex, cap: int = 1000,
                        p: Bm25Params | None = None) -> list[tuple[str, float]]:
    """Objects matching any query item, ranked by BM25F and truncated to ``cap``."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    p = p or Bm25Params()
    if q.is_empty():
        return []
    scores = idx.bm25f_all(q, p)
    ranked = rank_scores(scores, idx.match_mask(q))[:cap]
    return [(idx.ids[i], float(scores[i])) for i in ranked]
