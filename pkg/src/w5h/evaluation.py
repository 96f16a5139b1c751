"""Rank metrics, the Wilcoxon signed-rank test, and method comparison reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .core import W5HError

METHODS = ("bm25", "bm25f", "w5h-l2r")
SUCCESS_KS = (1, 3, 10)
DEFAULT_CUTOFF = 50


class TooFewPairs(W5HError, ValueError):
    pass


# ----------------------------------------------------------------- ranking

def rank_of(scores: np.ndarray, target: int, tiekey: np.ndarray | None = None) -> int:
    """1-based rank of ``target`` when sorting by score desc, then ``tiekey`` asc.

    Without ``tiekey``, position order breaks ties.
    """
    s = scores[target]
    key = np.arange(len(scores)) if tiekey is None else tiekey
    ahead = (scores > s) | ((scores == s) & (key < key[target]))
    return int(np.count_nonzero(ahead)) + 1


def reciprocal_ranks(ranks: Sequence[float], cutoff: int = DEFAULT_CUTOFF) -> np.ndarray:
    """1/rank, or 0 when the rank exceeds ``cutoff`` or the target was not retrieved (rank 0)."""
    r = np.asarray(ranks, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where((r >= 1) & (r <= cutoff), 1.0 / np.where(r >= 1, r, 1), 0.0)


def ranks_from_scores(scores: np.ndarray, labels: np.ndarray, bounds: np.ndarray,
                      tiekeys: np.ndarray) -> np.ndarray:
    """Rank of the positive of each query in a stacked candidate table."""
    nq = len(bounds) - 1
    qidx = np.repeat(np.arange(nq), np.diff(bounds))
    order = np.lexsort((tiekeys, -scores, qidx))
    ranks = np.empty(len(scores), dtype=np.int64)
    ranks[order] = np.arange(len(scores)) - bounds[qidx[order]] + 1
    pos = np.flatnonzero(labels > 0)
    out = np.zeros(nq, dtype=np.int64)
    out[qidx[pos]] = ranks[pos]
    return out


@dataclass
class MethodRun:
    """Per-query target ranks of one method; rank 0 means the target was not retrieved."""

    method: str
    qids: list[int]
    ranks: np.ndarray
    groups: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.ranks = np.asarray(self.ranks, dtype=np.int64)
        if len(self.ranks) != len(self.qids):
            raise ValueError("one rank per query")
        if not self.groups:
            self.groups = [0] * len(self.qids)

    def rr(self, cutoff: int = DEFAULT_CUTOFF) -> np.ndarray:
        return reciprocal_ranks(self.ranks, cutoff)

    def success(self, k: int) -> np.ndarray:
        return ((self.ranks >= 1) & (self.ranks <= k)).astype(float)

    def select(self, keep: np.ndarray) -> "MethodRun":
        keep = np.asarray(keep)
        return MethodRun(self.method, [self.qids[i] for i in keep], self.ranks[keep],
                         [self.groups[i] for i in keep])

    def by_group(self) -> dict[int, "MethodRun"]:
        g = np.asarray(self.groups)
        return {int(k): self.select(np.flatnonzero(g == k)) for k in sorted(set(self.groups))}


def mrr_at(run: MethodRun, cutoff: int = DEFAULT_CUTOFF) -> float:
    if len(run.ranks) == 0:
        return 0.0
    return float(run.rr(cutoff).mean())


def success_at(run: MethodRun, k: int) -> float:
    if len(run.ranks) == 0:
        return 0.0
    return float(run.success(k).mean())


# ---------------------------------------------------------------- wilcoxon

@dataclass(frozen=True)
class WilcoxonResult:
    W: float             # signed-rank sum T+ - T-
    p: float             # two-sided
    n: int               # pairs after dropping zero differences
    t_plus: float
    t_minus: float
    method: str          # "exact" or "normal"

    @property
    def T(self) -> float:
        """The smaller rank sum, the statistic printed in critical-value tables."""
        return min(self.t_plus, self.t_minus)


def _exact_tplus_cdf(n: int) -> np.ndarray:
    """Counts of sign assignments giving each T+ in 0..n(n+1)/2 (integer ranks)."""
    top = n * (n + 1) // 2
    counts = np.zeros(top + 1, dtype=object)
    counts[0] = 1
    for r in range(1, n + 1):
        counts[r:] = counts[r:] + counts[:-r].copy()
    return counts


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float], *, mode: str = "auto",
                         min_pairs: int = 10, exact_max_n: int = 25) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired values.

    Zero differences are dropped; tied absolute differences share average
    ranks. ``mode="normal"`` uses the normal approximation with tie-corrected
    variance and a 0.5 continuity correction. ``mode="exact"`` enumerates
    the null distribution and needs untied differences. ``"auto"`` picks
    exact when ``n <= exact_max_n`` and there are no ties.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n < max(min_pairs, 1):
        raise TooFewPairs(f"{n} non-zero differences, need at least {min_pairs}")
    absd = np.abs(d)
    ranks = rankdata(absd)
    t_plus = float(ranks[d > 0].sum())
    t_minus = float(ranks[d < 0].sum())
    W = t_plus - t_minus
    tied = len(np.unique(absd)) < n
    if mode == "auto":
        mode = "exact" if n <= exact_max_n and not tied else "normal"
    if mode == "exact":
        if tied:
            raise ValueError("exact mode needs untied absolute differences")
        counts = _exact_tplus_cdf(n)
        total = 2 ** n
        t = int(round(t_plus))
        lower = sum(counts[: t + 1])
        upper = sum(counts[t:])
        p = min(1.0, 2 * float(min(lower, upper)) / total)
    elif mode == "normal":
        mean = n * (n + 1) / 4.0
        _, tcounts = np.unique(absd, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tcounts ** 3 - tcounts).sum()) / 48.0
        diff = t_plus - mean
        if var <= 0:
            p = 1.0
        else:
            z = (abs(diff) - 0.5) / math.sqrt(var) if abs(diff) > 0.5 else 0.0
            p = float(min(1.0, 2.0 * ndtr(-z)))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return WilcoxonResult(W, p, n, t_plus, t_minus, mode)


# ------------------------------------------------------------------ reports

@dataclass
class MetricRow:
    group: str
    method: str
    n_queries: int
    mrr: float
    s1: float
    s3: float
    s10: float
    p_values: dict[str, float | None] = field(default_factory=dict)

    def to_json(self) -> str:
        rec = {"group": self.group, "method": self.method, "n_queries": self.n_queries,
               "mrr": self.mrr, "s@1": self.s1, "s@3": self.s3, "s@10": self.s10,
               "p_values": self.p_values}
        return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def metric_rows(runs: Mapping[str, MethodRun], group: str, cutoff: int = DEFAULT_CUTOFF,
                min_pairs: int = 10) -> list[MetricRow]:
    rows = []
    rr = {m: r.rr(cutoff) for m, r in runs.items()}
    for m, r in runs.items():
        pv: dict[str, float | None] = {}
        for other in runs:
            if other == m:
                continue
            try:
                pv[other] = wilcoxon_signed_rank(rr[m], rr[other], mode="normal", min_pairs=min_pairs).p
            except TooFewPairs:
                pv[other] = None
        rows.append(MetricRow(group, m, len(r.ranks), mrr_at(r, cutoff), success_at(r, 1),
                              success_at(r, 3), success_at(r, 10), pv))
    return rows


def compare_runs(runs: Mapping[str, MethodRun], cutoff: int = DEFAULT_CUTOFF) -> list[MetricRow]:
    """Metric rows for every group of queries and for their union (group ``all``)."""
    first = next(iter(runs.values()))
    rows = []
    for g in sorted(set(first.groups)):
        keep = np.flatnonzero(np.asarray(first.groups) == g)
        rows += metric_rows({m: r.select(keep) for m, r in runs.items()}, f"group{g}", cutoff)
    rows += metric_rows(runs, "all", cutoff)
    return rows


def render_table(rows: Sequence[MetricRow]) -> str:
    out = []
    groups = list(dict.fromkeys(r.group for r in rows))
    for g in groups:
        sub = [r for r in rows if r.group == g]
        title = "All queries" if g == "all" else f"Group {g.removeprefix('group')}"
        out.append(f"{title} ({sub[0].n_queries} queries)")
        out.append(f"{'Method':<10} {'MRR':>8} {'s@1':>8} {'s@3':>8} {'s@10':>8}")
        for r in sub:
            out.append(f"{r.method:<10} {r.mrr:8.4f} {r.s1:8.4f} {r.s3:8.4f} {r.s10:8.4f}")
        pairs = []
        for i, r in enumerate(sub):
            for other in [s.method for s in sub[i + 1:]]:
                p = r.p_values.get(other)
                pairs.append(f"{r.method} vs {other}: " + ("n/a" if p is None else f"p={p:.3g}"))
        if pairs:
            out.append("Wilcoxon  " + "; ".join(pairs))
        out.append("")
    return "\n".join(out)


def render_importance(importance: Mapping[int, int], names: Mapping[int, str] | None = None) -> str:
    total = sum(importance.values())
    lines = [f"Feature importance (split counts, {total} internal nodes)", f"{'Feature':<28} {'Freq.':>6}"]
    for k, c in sorted(importance.items(), key=lambda kv: (-kv[1], kv[0])):
        label = f"x{k} ({names[k]})" if names else f"x{k}"
        lines.append(f"{label:<28} {c:>6}")
    return "\n".join(lines) + "\n"
