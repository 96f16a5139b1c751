"""Frequency-based feature vectors for query/object pairs.

Feature layout (1-based):

* ``x1``: BM25F score of the query's *what* terms on the *what* field.
* ``x2..x30``: co-occurrence counts, one per non-empty subset of
  (what, who, when, where, how) of size 1 to 4, ordered by subset size and
  then lexicographically in that dimension order. ``x1`` shares the slot of
  the ``{what}`` subset.
* ``x31..x34``: who-group counts for (group), (group, when), (group, how),
  (group, when, where).
"""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np

from .core import FEATURE_DIMS, Dataset, QueryObject, TraceObject, W5HError
from .index import Bm25Params, InvertedIndex, build_index
from .topics import TopicModel

N_FEATURES = 34

SUBSETS: tuple[tuple[str, ...], ...] = tuple(
    c for r in range(1, 5) for c in itertools.combinations(FEATURE_DIMS, r))
_SUBSET_INDEX = {frozenset(s): i + 1 for i, s in enumerate(SUBSETS)}

GROUP_FEATURES: dict[int, tuple[str, ...]] = {
    31: (),
    32: ("when",),
    33: ("how",),
    34: ("when", "where"),
}


class InvalidSubset(W5HError, ValueError):
    pass


def subset_index(dims: Iterable[str]) -> int:
    """Feature index (1..30) of a dimension subset."""
    key = frozenset(str(getattr(d, "value", d)) for d in dims)
    try:
        return _SUBSET_INDEX[key]
    except KeyError:
        raise InvalidSubset(f"no feature for subset {sorted(key)}") from None


def subset_of(index: int) -> tuple[str, ...]:
    if not 1 <= index <= len(SUBSETS):
        raise InvalidSubset(f"feature index {index} is not a subset feature")
    return SUBSETS[index - 1]


def feature_name(index: int) -> str:
    if index in GROUP_FEATURES:
        return ", ".join(("who-group",) + GROUP_FEATURES[index])
    return ", ".join(subset_of(index))


class FeatureExtractor:
    """Computes feature vectors against one frozen dataset.

    Item membership is kept as one boolean mask per (dimension, item); a
    combination's frequency is the popcount of the AND of its masks.

    Parameters
    ----------
    interaction_weights : dict, optional
        Source tag -> weight. An object then adds the weight of its first
        *how* tag (1.0 if untagged) to a count instead of 1.
    """

    def __init__(self, d: Dataset, idx: InvertedIndex, m: TopicModel | None,
                 params: Bm25Params | None = None, interaction_weights: dict[str, float] | None = None):
        self.dataset = d
        self.idx = idx
        self.model = m
        self.params = params or Bm25Params()
        self.n = len(d)
        self.dominant = m.dominant_topics(d.ids) if m is not None else np.full(self.n, -1)
        self.weights = None
        if interaction_weights:
            self.weights = np.array([interaction_weights.get(o["how"][0], 1.0) if o["how"] else 1.0
                                     for o in d], dtype=float)

    # ------------------------------------------------------------------ items
    def query_items(self, q: QueryObject, dim: str) -> list:
        """Items that define the combination on ``dim``; *what* maps to one topic."""
        if dim == "what":
            if self.model is None or not q["what"]:
                return []
            t = self.model.query_topic(q["what"])
            return [] if t is None else [t]
        return list(dict.fromkeys(q[dim]))

    def mask(self, dim: str, item) -> np.ndarray:
        if dim == "what":
            return self.dominant == item
        m = np.zeros(self.n, dtype=bool)
        m[self.idx.postings(item, dim)[0]] = True
        return m

    def _count(self, mask: np.ndarray):
        if self.weights is None:
            return int(np.count_nonzero(mask))
        return float(self.weights[mask].sum())

    # ---------------------------------------------------------------- vectors
    def extract_many(self, q: QueryObject, positions: Sequence[int]) -> np.ndarray:
        """Feature matrix (len(positions), 34) for candidates given by dataset position."""
        pos = np.asarray(positions, dtype=np.int64)
        X = np.zeros((len(pos), N_FEATURES))
        if len(pos) == 0:
            return X
        if q["what"]:
            X[:, 0] = self.idx.bm25f_all(q, self.params, dims=("what",))[pos]
        items = {d: self.query_items(q, d) for d in FEATURE_DIMS}
        masks = {(d, it): self.mask(d, it) for d in FEATURE_DIMS for it in items[d]}
        for i, s in enumerate(SUBSETS[1:], start=2):
            if any(not items[d] for d in s):
                continue
            for combo in itertools.product(*(items[d] for d in s)):
                m = masks[(s[0], combo[0])]
                for d, it in zip(s[1:], combo[1:]):
                    m = m & masks[(d, it)]
                cnt = self._count(m)
                if cnt:
                    X[:, i - 1] += np.where(m[pos], cnt, 0)
        group = items["who"]
        if len(group) >= 2:
            g = masks[("who", group[0])]
            for it in group[1:]:
                g = g & masks[("who", it)]
            for fi, extra in GROUP_FEATURES.items():
                if any(not items[d] for d in extra):
                    continue
                for combo in itertools.product(*(items[d] for d in extra)):
                    m = g
                    for d, it in zip(extra, combo):
                        m = m & masks[(d, it)]
                    cnt = self._count(m)
                    if cnt:
                        X[:, fi - 1] += np.where(m[pos], cnt, 0)
        return X

    def extract(self, q: QueryObject, o: TraceObject | str) -> np.ndarray:
        oid = o if isinstance(o, str) else o.id
        return self.extract_many(q, [self.dataset.position(oid)])[0]

    def frequency(self, dims: Iterable[str], q: QueryObject, o: TraceObject | str):
        """Frequency of the query's item combination over ``dims``, gated on ``o``."""
        i = subset_index(dims)
        return self.extract(q, o)[i - 1] if i > 1 else self._what_frequency(q, o)

    def _what_frequency(self, q, o):
        oid = o if isinstance(o, str) else o.id
        pos = self.dataset.position(oid)
        total = 0
        for it in self.query_items(q, "what"):
            m = self.mask("what", it)
            if m[pos]:
                total += self._count(m)
        return total


def frequency(dims: Iterable[str], q: QueryObject, o: TraceObject, d: Dataset, m: TopicModel | None,
              idx: InvertedIndex | None = None):
    return FeatureExtractor(d, idx or build_index(d), m).frequency(dims, q, o)


def extract_features(q: QueryObject, o: TraceObject, d: Dataset, idx: InvertedIndex,
                     m: TopicModel | None, params: Bm25Params | None = None) -> np.ndarray:
    return FeatureExtractor(d, idx, m, params).extract(q, o)


# ------------------------------------------------------------ feature files

def _fmt(i: int, v: float) -> str:
    if i > 0 and float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def format_feature_line(label: int, qid: int, x: np.ndarray, oid: str) -> str:
    vals = " ".join(f"{i + 1}:{_fmt(i, v)}" for i, v in enumerate(x))
    return f"{label} qid:{qid} {vals} # {oid}"


def parse_feature_line(line: str) -> tuple[int, int, np.ndarray, str]:
    body, _, comment = line.partition("#")
    parts = body.split()
    label = int(parts[0])
    if not parts[1].startswith("qid:"):
        raise W5HError(f"missing qid in feature line: {line[:60]!r}")
    qid = int(parts[1][4:])
    x = np.zeros(N_FEATURES)
    for tok in parts[2:]:
        k, v = tok.split(":")
        x[int(k) - 1] = float(v)
    return label, qid, x, comment.strip()
