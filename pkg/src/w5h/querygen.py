"""Known-item query simulation and weakly supervised ranking sets.

A query is sampled from a randomly chosen target object; BM25F retrieves
the candidate list, and the target is the single positive.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import FEATURE_DIMS, Dataset, QueryObject, W5HError, matches
from .features import FeatureExtractor, format_feature_line, parse_feature_line
from .index import Bm25Params, InvertedIndex, rank_scores
from .ingest import finest_time_tokens

log = logging.getLogger(__name__)

MIN_WHAT_TERM_LEN = 3


class NoEligibleTarget(W5HError):
    pass


@dataclass(frozen=True)
class QueryTemplate:
    dims: tuple[str, ...]
    v: int = 1
    group: int = 0

    def __post_init__(self):
        if self.v < 1:
            raise ValueError("v must be >= 1")
        bad = set(self.dims) - set(FEATURE_DIMS)
        if not self.dims or bad:
            raise ValueError(f"invalid template dimensions {self.dims}")


#: Query groups 1-4; *where* is left out because few objects carry a location.
DEFAULT_TEMPLATES: tuple[QueryTemplate, ...] = (
    QueryTemplate(("what", "who"), group=1),
    QueryTemplate(("what", "who", "when"), group=2),
    QueryTemplate(("what", "who", "when", "how"), group=3),
    QueryTemplate(("what", "who", "how"), group=4),
)


def _eligible(obj, dim: str) -> list[str]:
    if dim == "what":
        return [t for t in obj["what"] if len(t) >= MIN_WHAT_TERM_LEN]
    if dim == "when":
        return finest_time_tokens(obj["when"])
    return list(obj[dim])


def _sample(rng: np.random.Generator, pool: list[str], v: int, weighted: bool) -> list[str]:
    uniq, counts = np.unique(np.array(pool, dtype=object), return_counts=True)
    size = min(v, len(uniq))
    p = counts / counts.sum() if weighted else None
    picked = rng.choice(len(uniq), size=size, replace=False, p=p)
    return [str(uniq[i]) for i in picked]


def generate_query(d: Dataset, template: QueryTemplate, seed, *, uniform_what: bool = False,
                   max_retries: int = 1000) -> tuple[QueryObject, str]:
    """One known-item query.

    The target is drawn uniformly and redrawn until it holds items on every
    template dimension. *what* terms are sampled proportional to their
    frequency in the target (uniformly with ``uniform_what``); *when* draws
    from the target's finest-granularity time tokens.
    """
    if len(d) == 0:
        raise NoEligibleTarget("empty dataset")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(max_retries):
        target = d[int(rng.integers(len(d)))]
        pools = {dim: _eligible(target, dim) for dim in template.dims}
        if all(pools.values()):
            break
    else:
        raise NoEligibleTarget(f"no target with items on {template.dims} after {max_retries} draws")
    dims = {dim: _sample(rng, pools[dim], template.v, weighted=(dim == "what" and not uniform_what))
            for dim in template.dims}
    return QueryObject(dims), target.id


@dataclass
class RankedQuery:
    qid: int
    query: QueryObject
    group: int
    target: str
    ids: list[str]
    X: np.ndarray
    labels: np.ndarray
    target_appended: bool = False

    @property
    def target_index(self) -> int:
        return int(np.flatnonzero(self.labels)[0])


@dataclass
class LabeledRankingSet:
    queries: list[RankedQuery] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    @property
    def n_rows(self) -> int:
        return sum(len(r.ids) for r in self.queries)

    def subset(self, keep: Sequence[int]) -> "LabeledRankingSet":
        return LabeledRankingSet([self.queries[i] for i in keep])

    def head(self, n: int) -> "LabeledRankingSet":
        return LabeledRankingSet(self.queries[:n])

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked features, labels and query boundaries (len = n_queries + 1)."""
        if not self.queries:
            return np.zeros((0, 34)), np.zeros(0), np.zeros(1, np.int64)
        X = np.vstack([r.X for r in self.queries])
        y = np.concatenate([r.labels for r in self.queries])
        bounds = np.cumsum([0] + [len(r.ids) for r in self.queries])
        return X, y, bounds

    def check(self) -> None:
        for r in self.queries:
            if int(r.labels.sum()) != 1 or r.ids[r.target_index] != r.target:
                raise W5HError(f"query {r.qid} must have exactly one positive, the target")

    # ---------------------------------------------------------------- files
    def write(self, feature_path, manifest_path, header: str | None = None) -> None:
        with open(feature_path, "w", encoding="utf-8", newline="\n") as fh:
            if header:
                fh.write(f"# {header}\n")
            for r in self.queries:
                for oid, x, lab in zip(r.ids, r.X, r.labels):
                    fh.write(format_feature_line(int(lab), r.qid, x, oid) + "\n")
        with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
            if header:
                fh.write(json.dumps({"header": header}) + "\n")
            for r in self.queries:
                fh.write(json.dumps({"qid": r.qid, "group": r.group, "query": r.query.to_dict(),
                                     "target": r.target, "target_appended": r.target_appended},
                                    ensure_ascii=False, separators=(",", ":")) + "\n")

    @classmethod
    def read(cls, feature_path, manifest_path) -> "LabeledRankingSet":
        meta = {}
        with open(manifest_path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if "qid" in rec:
                    meta[rec["qid"]] = rec
        rows: dict[int, list] = {}
        with open(feature_path, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("#") or not line.strip():
                    continue
                lab, qid, x, oid = parse_feature_line(line)
                rows.setdefault(qid, []).append((lab, x, oid))
        out = []
        for qid, rec in meta.items():
            cand = rows.get(qid, [])
            out.append(RankedQuery(qid, QueryObject(rec["query"]), rec["group"], rec["target"],
                                   [c[2] for c in cand], np.array([c[1] for c in cand]).reshape(-1, 34),
                                   np.array([c[0] for c in cand], dtype=np.int64), rec["target_appended"]))
        return cls(out)


def query_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def build_labeled_set(d: Dataset, idx: InvertedIndex, extractor: FeatureExtractor, n_queries: int,
                      templates: Sequence[QueryTemplate] = DEFAULT_TEMPLATES, seed: int = 0,
                      list_size: int = 100, *, params: Bm25Params | None = None,
                      uniform_what: bool = False, check_matches: bool = False) -> LabeledRankingSet:
    """Generate ``n_queries`` known-item queries with BM25F candidate lists and features.

    Templates are used round-robin. Query ``i`` draws from a generator seeded
    by ``(seed, i)``, so any prefix of the set is reproducible on its own.
    """
    if n_queries < 1 or not templates or list_size < 2:
        raise ValueError("need n_queries >= 1, at least one template and list_size >= 2")
    params = params or extractor.params
    out = []
    for i in range(n_queries):
        tpl = templates[i % len(templates)]
        q, target = generate_query(d, tpl, query_rng(seed, i), uniform_what=uniform_what)
        scores = idx.bm25f_all(q, params)
        ranked = rank_scores(scores, idx.match_mask(q))[:list_size]
        tpos = d.position(target)
        appended = tpos not in set(ranked.tolist())
        if appended:
            ranked = np.append(ranked, tpos)
        if check_matches:
            assert all(matches(q, d[int(p)]) for p in ranked)
        labels = (ranked == tpos).astype(np.int64)
        out.append(RankedQuery(i, q, tpl.group, target, [d.ids[int(p)] for p in ranked],
                               extractor.extract_many(q, ranked), labels, appended))
    return LabeledRankingSet(out)


def split_by_group(s: LabeledRankingSet) -> dict[int, LabeledRankingSet]:
    parts: dict[int, list] = {}
    for r in s:
        parts.setdefault(r.group, []).append(r)
    return {g: LabeledRankingSet(parts[g]) for g in sorted(parts)}


def target_overlap(a: LabeledRankingSet, b: LabeledRankingSet) -> dict:
    """How much two query sets share: identical (query, target) pairs and shared targets."""
    pa = {(r.query.to_string(), r.target) for r in a}
    pb = {(r.query.to_string(), r.target) for r in b}
    ta, tb = {r.target for r in a}, {r.target for r in b}
    return {"shared_pairs": len(pa & pb), "shared_targets": len(ta & tb),
            "targets_a": len(ta), "targets_b": len(tb)}
