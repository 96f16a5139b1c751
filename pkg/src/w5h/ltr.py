"""LambdaMART: boosted regression trees fitted to MRR-weighted pairwise lambdas."""

from __future__ import annotations

import itertools
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import expit

from .core import W5HError
from .evaluation import ranks_from_scores, reciprocal_ranks
from .features import N_FEATURES
from .querygen import LabeledRankingSet

log = logging.getLogger(__name__)

MODEL_FORMAT = "w5h-lambdamart"
MODEL_VERSION = 1

#: Model-selection grid searched by cross-validation.
FULL_GRID = {
    "n_trees": (50, 100, 250, 500),
    "n_leaves": (10, 15, 35, 45),
    "min_leaf_support": (10, 20, 50),
    "shrinkage": (0.01, 0.03, 0.1, 0.3, 0.5, 1.0),
}


class ArityMismatch(W5HError, ValueError):
    pass


class DegenerateTraining(UserWarning):
    """Training data offers no split; the model stays constant."""


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 50
    n_leaves: int = 15
    min_leaf_support: int = 10
    shrinkage: float = 0.1
    metric: str = "MRR"
    cutoff: int = 50
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0 or self.n_leaves < 2 or self.min_leaf_support < 1:
            raise ValueError("need n_trees >= 0, n_leaves >= 2, min_leaf_support >= 1")
        if self.metric.upper() != "MRR":
            raise ValueError("only the MRR training metric is supported")

    def label(self) -> str:
        return (f"trees={self.n_trees} leaves={self.n_leaves} "
                f"mls={self.min_leaf_support} shrinkage={self.shrinkage}")


def config_grid(grid: dict | None = None, **fixed) -> list[TrainConfig]:
    grid = dict(FULL_GRID if grid is None else grid)
    keys = list(grid)
    return [TrainConfig(**dict(zip(keys, vals)), **fixed) for vals in itertools.product(*(grid[k] for k in keys))]


# ------------------------------------------------------------------- trees

@dataclass
class RegressionTree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf. Rows with x <= threshold go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    @property
    def n_internal(self) -> int:
        return int(np.count_nonzero(self.feature >= 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while len(active):
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {"feature": [int(f) + 1 if f >= 0 else 0 for f in self.feature],
                "threshold": [float(t) for t in self.threshold],
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": [float(v) for v in self.value]}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(np.array(d["feature"], np.int64) - 1, np.array(d["threshold"], float),
                   np.array(d["left"], np.int64), np.array(d["right"], np.int64), np.array(d["value"], float))


@njit(cache=True)
def _hist_kernel(codes, offset, rows, g, n_bins):
    cnt = np.zeros(n_bins, dtype=np.int64)
    sm = np.zeros(n_bins)
    m = codes.shape[0]
    for f in range(m):
        base = offset[f]
        for i in range(rows.shape[0]):
            r = rows[i]
            k = base + codes[f, r]
            cnt[k] += 1
            sm[k] += g[r]
    return cnt, sm


@njit(cache=True)
def _split_kernel(cnt, sm, offset, mls):
    """Scan every feature's bins left to right; first strict maximum wins."""
    m = offset.shape[0] - 1
    n = 0
    total = 0.0
    for k in range(offset[0], offset[1]):
        n += cnt[k]
        total += sm[k]
    best_gain = -np.inf
    best_f = -1
    best_k = -1
    if n < 2 * mls:
        return best_gain, best_f, best_k
    parent = total * total / n
    for f in range(m):
        nl = 0
        sl = 0.0
        for k in range(offset[f], offset[f + 1] - 1):
            if cnt[k] == 0:
                continue
            nl += cnt[k]
            sl += sm[k]
            nr = n - nl
            if nl < mls:
                continue
            if nr < mls:
                break
            sr = total - sl
            gain = sl * sl / nl + sr * sr / nr - parent
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_k = k - offset[f]
    return best_gain, best_f, best_k


@njit(cache=True)
def _segment_ranks(scores, tie_order, bounds):
    """1-based rank of every row within its query: score desc, then tie order."""
    ranks = np.empty(scores.shape[0], dtype=np.int64)
    for q in range(bounds.shape[0] - 1):
        seg = tie_order[bounds[q]:bounds[q + 1]]
        o = np.argsort(-scores[seg], kind="mergesort")
        for i in range(o.shape[0]):
            ranks[seg[o[i]]] = i + 1
    return ranks


class _Binned:
    """Dense codes over each feature's sorted unique values, laid out in one flat bin space.

    Feature ``f`` owns bins ``offset[f] .. offset[f+1]-1``, so one node
    histogram covers every feature at once.
    """

    def __init__(self, X: np.ndarray):
        self.uniq = []
        n, m = X.shape
        codes = np.empty((m, n), dtype=np.int32)
        for f in range(m):
            u, inv = np.unique(X[:, f], return_inverse=True)
            self.uniq.append(u)
            codes[f] = inv.reshape(-1)
        self.codes = codes
        self.n_uniq = np.array([len(u) for u in self.uniq], dtype=np.int64)
        self.offset = np.concatenate([[0], np.cumsum(self.n_uniq)]).astype(np.int64)
        self.n_bins = int(self.offset[-1])

    def histogram(self, rows: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _hist_kernel(self.codes, self.offset, rows, g, self.n_bins)


def _best_split(b: _Binned, cnt: np.ndarray, sm: np.ndarray, mls: int):
    """Exact best split from a node histogram, by variance reduction.

    Returns (gain, feature, code) or None. Only values present in the node
    serve as thresholds; gain ties go to the lower feature index and then the
    lower threshold.
    """
    if b.n_bins == 0:
        return None
    gain, f, k = _split_kernel(cnt, sm, b.offset, mls)
    if f < 0:
        return None
    return float(gain), int(f), int(k)


def fit_tree(b: _Binned, g: np.ndarray, h: np.ndarray, n_leaves: int, mls: int,
             rows: np.ndarray | None = None) -> tuple[RegressionTree, np.ndarray]:
    """Best-first regression tree on targets ``g``; leaf values are sum(g) / sum(h).

    Returns the tree and the leaf id of every training row.
    """
    rows = np.arange(len(g)) if rows is None else rows
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    members = {0: rows}
    hist = {0: b.histogram(rows, g)}
    cand = {0: _best_split(b, *hist[0], mls)}
    leaves = 1
    while leaves < n_leaves:
        open_ = [(s[0], nd) for nd, s in cand.items() if s is not None]
        if not open_:
            break
        # highest gain first; equal gains go to the earlier node
        _, nd = max(open_, key=lambda t: (t[0], -t[1]))
        _, f, u = cand.pop(nd)
        r = members.pop(nd)
        pc, ps = hist.pop(nd)
        go_left = b.codes[f][r] <= u
        lid, rid = len(feature), len(feature) + 1
        feature[nd], threshold[nd], left[nd], right[nd] = f, float(b.uniq[f][u]), lid, rid
        kids = ((lid, r[go_left]), (rid, r[~go_left]))
        small = 0 if len(kids[0][1]) <= len(kids[1][1]) else 1
        sc, ss = b.histogram(kids[small][1], g)
        kid_hist = {kids[small][0]: (sc, ss), kids[1 - small][0]: (pc - sc, ps - ss)}
        for kid, rk in kids:
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            members[kid] = rk
            hist[kid] = kid_hist[kid]
            cand[kid] = _best_split(b, *hist[kid], mls)
        leaves += 1
    value = np.zeros(len(feature))
    leaf_of = np.empty(len(g), dtype=np.int64)
    for nd, r in members.items():
        hs = h[r].sum()
        value[nd] = g[r].sum() / hs if hs > 0 else 0.0
        leaf_of[r] = nd
    tree = RegressionTree(np.array(feature, np.int64), np.array(threshold), np.array(left, np.int64),
                          np.array(right, np.int64), value)
    return tree, leaf_of


# ---------------------------------------------------------------- ensemble

@dataclass
class Ensemble:
    trees: list[RegressionTree] = field(default_factory=list)
    shrinkage: float = 0.1
    n_features: int = N_FEATURES
    config: dict = field(default_factory=dict)
    train_log: list[float] = field(default_factory=list)

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ArityMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def predict_many(self, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
        X = self._check(X)
        s = np.zeros(len(X))
        for t in self.trees[:n_trees]:
            s += self.shrinkage * t.predict(X)
        return s

    def predict(self, x) -> float:
        return float(self.predict_many(x)[0])

    def prefix(self, n_trees: int) -> "Ensemble":
        cfg = dict(self.config, n_trees=n_trees) if self.config else {}
        return Ensemble(self.trees[:n_trees], self.shrinkage, self.n_features, cfg, self.train_log[:n_trees])

    @property
    def n_internal(self) -> int:
        return sum(t.n_internal for t in self.trees)

    def to_json(self) -> str:
        payload = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "n_features": self.n_features,
                   "shrinkage": self.shrinkage, "config": self.config, "train_log": self.train_log,
                   "trees": [t.to_dict() for t in self.trees]}
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Ensemble":
        p = json.loads(text)
        if p.get("format") != MODEL_FORMAT or p.get("version") != MODEL_VERSION:
            raise W5HError("not a supported model file")
        return cls([RegressionTree.from_dict(t) for t in p["trees"]], p["shrinkage"], p["n_features"],
                   p["config"], p["train_log"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Ensemble":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def predict(e: Ensemble, x) -> float:
    return e.predict(x)


def feature_importance(e: Ensemble) -> dict[int, int]:
    """Split count per 1-based feature index over all internal nodes."""
    counts: dict[int, int] = {}
    for t in e.trees:
        for f in t.feature[t.feature >= 0]:
            counts[int(f) + 1] = counts.get(int(f) + 1, 0) + 1
    return dict(sorted(counts.items()))


# ----------------------------------------------------------------- training

@dataclass
class _Table:
    X: np.ndarray
    labels: np.ndarray
    bounds: np.ndarray
    tiekeys: np.ndarray
    qidx: np.ndarray
    pos: np.ndarray     # row of each query's positive
    tie_order: np.ndarray | None = None

    @classmethod
    def from_set(cls, s: LabeledRankingSet) -> "_Table":
        X, y, bounds = s.arrays()
        tiekeys = np.empty(len(y), dtype=np.int64)
        for r, lo in zip(s.queries, bounds[:-1]):
            order = sorted(range(len(r.ids)), key=r.ids.__getitem__)
            tiekeys[lo + np.array(order, dtype=np.int64)] = np.arange(len(r.ids))
        qidx = np.repeat(np.arange(len(s)), np.diff(bounds))
        pos = np.flatnonzero(y > 0)
        if len(pos) != len(s) or not np.array_equal(qidx[pos], np.arange(len(s))):
            raise W5HError("every query needs exactly one positive candidate")
        return cls(X, y, bounds, tiekeys, qidx, pos)

    def ranks(self, scores: np.ndarray) -> np.ndarray:
        if self.tie_order is None:
            self.tie_order = np.lexsort((self.tiekeys, self.qidx))
        return _segment_ranks(scores, self.tie_order, self.bounds)


def _lambdas(t: _Table, scores: np.ndarray, sigma: float, cutoff: int):
    """Pseudo-responses (negative cost gradients) and Newton weights per row."""
    ranks = t.ranks(scores)
    rr = reciprocal_ranks(ranks, cutoff)
    pos_row = t.pos[t.qidx]
    delta = np.abs(rr[pos_row] - rr)
    rho = expit(-sigma * (scores[pos_row] - scores))          # 1 / (1 + exp(sigma (s_i - s_j)))
    lam = sigma * rho * delta
    w = sigma * sigma * rho * (1.0 - rho) * delta
    lam[t.pos] = 0.0
    w[t.pos] = 0.0
    g = -lam
    h = w.copy()
    g[t.pos] = np.bincount(t.qidx, weights=lam, minlength=len(t.pos))
    h[t.pos] = np.bincount(t.qidx, weights=w, minlength=len(t.pos))
    return g, h, float(rr[t.pos].mean()) if len(t.pos) else 0.0


def train_lambdamart(train: LabeledRankingSet, cfg: TrainConfig = TrainConfig(), *,
                     callback=None) -> Ensemble:
    """Fit a LambdaMART ensemble that optimizes MRR@cfg.cutoff.

    Each round computes, for every (positive i, negative j) pair of a query,
    ``sigma * |dRR_ij| / (1 + exp(sigma (s_i - s_j)))`` where ``dRR_ij`` is the
    change in reciprocal rank from swapping i and j. A regression tree is fit
    to the summed lambdas and its leaves take Newton steps.
    """
    t = _Table.from_set(train)
    return _train_table(t, cfg, callback=callback)


def _train_table(t: _Table, cfg: TrainConfig, callback=None) -> Ensemble:
    b = _Binned(t.X)
    ens = Ensemble([], cfg.shrinkage, N_FEATURES, asdict(cfg), [])
    if t.X.shape[0] == 0:
        return ens
    if (b.n_uniq < 2).all():
        warnings.warn("all feature vectors are identical; returning a constant model", DegenerateTraining)
        return ens
    scores = np.zeros(len(t.labels))
    for it in range(cfg.n_trees):
        g, h, _ = _lambdas(t, scores, cfg.sigma, cfg.cutoff)
        tree, leaf_of = fit_tree(b, g, h, cfg.n_leaves, cfg.min_leaf_support)
        scores += cfg.shrinkage * tree.value[leaf_of]
        ens.trees.append(tree)
        ens.train_log.append(float(reciprocal_ranks(t.ranks(scores)[t.pos], cfg.cutoff).mean()))
        if callback is not None:
            callback(it + 1, ens)
        log.debug("tree %d train MRR %.4f", it + 1, ens.train_log[-1])
    return ens


def evaluate_mrr(e: Ensemble, s: LabeledRankingSet, cutoff: int = 50, n_trees: int | None = None) -> float:
    return _table_mrr(e, _Table.from_set(s), cutoff, n_trees)


def _table_mrr(e: Ensemble, t: _Table, cutoff: int, n_trees: int | None = None) -> float:
    if len(t.pos) == 0:
        return 0.0
    scores = e.predict_many(t.X, n_trees)
    ranks = ranks_from_scores(scores, t.labels, t.bounds, t.tiekeys)
    return float(reciprocal_ranks(ranks, cutoff).mean())


# ------------------------------------------------------- cross-validation

@dataclass
class CVResult:
    best: TrainConfig
    folds: list[list[int]]
    scores: list[dict]      # per config: label, fold train/valid MRR, means

    def to_json(self) -> str:
        return json.dumps({"best": asdict(self.best), "folds": self.folds, "configs": self.scores},
                          indent=1, sort_keys=True)


def fold_assignment(n_queries: int, folds: int, seed: int) -> list[list[int]]:
    """Shuffle query indices and deal them round-robin, so fold sizes differ by at most one."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    perm = np.random.default_rng(seed).permutation(n_queries)
    return [sorted(perm[k::folds].tolist()) for k in range(folds)]


def cross_validate(train: LabeledRankingSet, grid: Sequence[TrainConfig], folds: int = 5,
                   seed: int = 0) -> CVResult:
    """k-fold CV over queries; the best config maximizes mean validation MRR.

    Ties go to fewer trees, then larger min leaf support. Configs that differ
    only in tree count share one training run per fold and are scored on
    prefixes of it.
    """
    if not grid:
        raise ValueError("empty grid")
    parts = fold_assignment(len(train), folds, seed)
    results = {c: {"train": [], "valid": []} for c in grid}
    families: dict[tuple, list[TrainConfig]] = {}
    for c in grid:
        families.setdefault(replace(c, n_trees=0), []).append(c)
    for k, held in enumerate(parts):
        held_set = set(held)
        tr = _Table.from_set(train.subset([i for i in range(len(train)) if i not in held_set]))
        va = _Table.from_set(train.subset(held))
        for base, members in families.items():
            longest = max(m.n_trees for m in members)
            ens = _train_table(tr, replace(base, n_trees=longest))
            for m in members:
                results[m]["train"].append(_table_mrr(ens, tr, m.cutoff, m.n_trees))
                results[m]["valid"].append(_table_mrr(ens, va, m.cutoff, m.n_trees))
            log.info("fold %d: %s done", k + 1, base.label())
    table = []
    for c in grid:
        r = results[c]
        table.append({"config": asdict(c), "label": c.label(), "train_mrr": r["train"], "valid_mrr": r["valid"],
                      "mean_train": float(np.mean(r["train"])), "mean_valid": float(np.mean(r["valid"])),
                      "spread": float(np.mean(r["train"]) - np.mean(r["valid"]))})
    order = sorted(range(len(grid)), key=lambda i: (-table[i]["mean_valid"], grid[i].n_trees,
                                                     -grid[i].min_leaf_support, i))
    return CVResult(grid[order[0]], parts, table)
