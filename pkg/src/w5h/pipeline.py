"""Pipeline stages and the artifact manifests that chain them.

Every stage writes its outputs plus ``manifests/<stage>.json`` holding a
hash of the config sections it depends on (chained through its upstream
stages) and checksums of its outputs. A stage refuses to run when an
upstream manifest is missing or no longer matches the current config.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shlex
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .core import FEATURE_DIMS, Dataset, QueryObject, W5HError
from .evaluation import (MethodRun, compare_runs, rank_of, render_importance, render_table)
from .features import FeatureExtractor, feature_name
from .index import Bm25Params, InvertedIndex, build_index, rank_scores
from .ingest import (canonicalize_entity, finest_time_tokens, ingest_maildir, load_alias_table,
                     normalize_when, read_records)
from .ltr import (FULL_GRID, CVResult, Ensemble, TrainConfig, config_grid, cross_validate,
                  feature_importance, train_lambdamart)
from .querygen import (LabeledRankingSet, QueryTemplate, build_labeled_set, target_overlap)
from .synthetic import SyntheticProfile, generate_synthetic_dataset
from .textproc import tokenize
from .topics import TopicModel, fit_lda

log = logging.getLogger(__name__)

UPSTREAM = {
    "ingest": (),
    "index": ("ingest",),
    "topics": ("ingest",),
    "gen-queries": ("index", "topics"),
    "train": ("gen-queries",),
    "evaluate": ("train",),
}
OWN_SECTIONS = {
    "ingest": ("ingest",),
    "index": ("index",),
    "topics": ("topics",),
    "gen-queries": ("querygen",),
    "train": ("train",),
    "evaluate": ("eval",),
}
OUTPUTS = {
    "ingest": ("dataset.jsonl", "ingest_stats.json"),
    "index": ("index.json.gz",),
    "topics": ("topics.txt",),
    "gen-queries": ("train.features", "train.manifest.jsonl", "eval.features", "eval.manifest.jsonl",
                    "overlap.json"),
    "train": ("model.json", "cv_log.json"),
    "evaluate": ("metrics.jsonl", "report.txt", "learning_curve.json"),
}


class MissingArtifact(W5HError):
    pass


class StaleManifest(MissingArtifact):
    pass


def stage_hash(cfg: RunConfig, stage: str) -> str:
    d = cfg.to_dict()
    payload = {s: d[s] for s in OWN_SECTIONS[stage]}
    if stage == "ingest":
        payload["corpus"] = cfg.paths.corpus
    payload["upstream"] = {u: stage_hash(cfg, u) for u in UPSTREAM[stage]}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _sha(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Workdir:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = cfg.workdir
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "manifests").mkdir(exist_ok=True)

    def path(self, name: str) -> Path:
        return self.root / name

    def write_manifest(self, stage: str) -> None:
        rec = {"stage": stage, "config_hash": stage_hash(self.cfg, stage),
               "upstream": {u: stage_hash(self.cfg, u) for u in UPSTREAM[stage]},
               "outputs": {n: _sha(self.path(n)) for n in OUTPUTS[stage]}}
        self.path(f"manifests/{stage}.json").write_text(json.dumps(rec, indent=1, sort_keys=True) + "\n")

    def require(self, stage: str) -> None:
        """Check ``stage``'s manifest against the current config and its outputs on disk."""
        mpath = self.path(f"manifests/{stage}.json")
        if not mpath.exists():
            raise MissingArtifact(f"missing {stage} artifacts in {self.root}; run `w5h {stage}` first")
        rec = json.loads(mpath.read_text())
        if rec["config_hash"] != stage_hash(self.cfg, stage):
            raise StaleManifest(f"{stage} artifacts were built with a different config; rerun `w5h {stage}`")
        for name, digest in rec["outputs"].items():
            p = self.path(name)
            if not p.exists():
                raise MissingArtifact(f"{p} is missing; rerun `w5h {stage}`")
            if _sha(p) != digest:
                raise StaleManifest(f"{p} changed since `w5h {stage}` wrote it; rerun that stage")

    def require_chain(self, stage: str) -> None:
        for u in UPSTREAM[stage]:
            self.require_chain(u)
            self.require(u)


def bm25_params(cfg: RunConfig) -> Bm25Params:
    return Bm25Params(cfg.index.k1, cfg.index.b, dict(cfg.index.weights))


def templates(cfg: RunConfig) -> list[QueryTemplate]:
    return [QueryTemplate(tuple(t), cfg.querygen.v, group=i + 1) for i, t in enumerate(cfg.querygen.templates)]


# ------------------------------------------------------------------ stages

def run_ingest(cfg: RunConfig) -> Dataset:
    wd = Workdir(cfg)
    ic = cfg.ingest
    alias = load_alias_table(ic.alias_table) if ic.alias_table else None
    stats: dict = {}
    if ic.source == "enron":
        ds, st = ingest_maildir(cfg.paths.corpus, max_messages=ic.max_messages, owners=ic.owners,
                                alias_table=alias, seed=ic.subset_seed)
        stats = st.to_dict()
    elif ic.source == "records":
        ds = read_records(cfg.paths.corpus, alias_table=alias)
    else:
        ds = generate_synthetic_dataset(ic.synthetic_seed, ic.synthetic_objects,
                                        SyntheticProfile.from_dict(ic.synthetic_profile))
    stats["objects"] = len(ds)
    ds.save(wd.path("dataset.jsonl"))
    wd.path("ingest_stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
    wd.write_manifest("ingest")
    log.info("ingested %d objects", len(ds))
    return ds


def load_dataset(wd: Workdir) -> Dataset:
    return Dataset.load(wd.path("dataset.jsonl"))


def run_index(cfg: RunConfig) -> InvertedIndex:
    wd = Workdir(cfg)
    wd.require_chain("index")
    idx = build_index(load_dataset(wd))
    idx.save(wd.path("index.json.gz"))
    wd.write_manifest("index")
    return idx


def run_topics(cfg: RunConfig) -> TopicModel:
    wd = Workdir(cfg)
    wd.require_chain("topics")
    tc = cfg.topics
    t0 = time.perf_counter()
    m = fit_lda(load_dataset(wd), tc.K, tc.alpha, tc.beta, tc.iters, tc.seed, max_doc_tokens=tc.max_doc_tokens)
    log.info("LDA fitted in %.1fs", time.perf_counter() - t0)
    m.save(wd.path("topics.txt"))
    wd.write_manifest("topics")
    return m


def _extractor(wd: Workdir, cfg: RunConfig) -> tuple[Dataset, InvertedIndex, FeatureExtractor]:
    ds = load_dataset(wd)
    idx = InvertedIndex.load(wd.path("index.json.gz"))
    m = TopicModel.load(wd.path("topics.txt"))
    return ds, idx, FeatureExtractor(ds, idx, m, bm25_params(cfg))


def run_gen_queries(cfg: RunConfig) -> tuple[LabeledRankingSet, LabeledRankingSet]:
    wd = Workdir(cfg)
    wd.require_chain("gen-queries")
    ds, idx, ex = _extractor(wd, cfg)
    qc = cfg.querygen
    header = f"config_hash={stage_hash(cfg, 'gen-queries')}"
    sets = {}
    for split, n, seed in (("train", qc.n_train, qc.train_seed), ("eval", qc.n_eval, qc.eval_seed)):
        t0 = time.perf_counter()
        s = build_labeled_set(ds, idx, ex, n, templates(cfg), seed, qc.list_size, uniform_what=qc.uniform_what)
        s.write(wd.path(f"{split}.features"), wd.path(f"{split}.manifest.jsonl"), header)
        log.info("%s: %d queries, %d rows in %.1fs", split, len(s), s.n_rows, time.perf_counter() - t0)
        sets[split] = s
    overlap = target_overlap(sets["train"], sets["eval"])
    wd.path("overlap.json").write_text(json.dumps(overlap, indent=1, sort_keys=True) + "\n")
    wd.write_manifest("gen-queries")
    return sets["train"], sets["eval"]


def load_split(wd: Workdir, split: str) -> LabeledRankingSet:
    return LabeledRankingSet.read(wd.path(f"{split}.features"), wd.path(f"{split}.manifest.jsonl"))


def _grid(cfg: RunConfig) -> list[TrainConfig]:
    tc = cfg.train
    grid = FULL_GRID if tc.grid == "full" else tc.grid
    return config_grid(grid, cutoff=tc.cutoff, sigma=tc.sigma, seed=tc.seed)


def run_train(cfg: RunConfig) -> Ensemble:
    wd = Workdir(cfg)
    wd.require_chain("train")
    train = load_split(wd, "train")
    grid = _grid(cfg)
    if cfg.train.cv and len(grid) > 1:
        cv = cross_validate(train, grid, cfg.train.folds, cfg.train.seed)
        best, log_text = cv.best, cv.to_json()
    else:
        best = grid[0]
        log_text = json.dumps({"best": best.__dict__, "folds": [], "configs": []}, indent=1, sort_keys=True)
    log.info("training final model: %s", best.label())
    model = train_lambdamart(train, best)
    model.config["config_hash"] = stage_hash(cfg, "train")
    model.save(wd.path("model.json"))
    wd.path("cv_log.json").write_text(log_text + "\n")
    wd.write_manifest("train")
    return model


# -------------------------------------------------------------- evaluation

def method_runs(eval_set: LabeledRankingSet, idx: InvertedIndex, model: Ensemble, params: Bm25Params,
                bm25_dims=("what",), cap: int = 1000) -> dict[str, MethodRun]:
    """Target ranks for BM25 (``bm25_dims`` terms on the concatenated field), BM25F
    (full ranking of matching objects) and the learned model (re-ranked BM25F list)."""
    ranks = {m: [] for m in ("bm25", "bm25f", "w5h-l2r")}
    qids, groups = [], []
    for r in eval_set:
        q = r.query
        t = idx.position(r.target)
        s = idx.bm25_all([it for d in bm25_dims for it in q[d]], params)
        ranks["bm25"].append(rank_of(s, t) if s[t] > 0 else 0)
        s = idx.bm25f_all(q, params)
        mask = idx.match_mask(q)
        rk = rank_of(np.where(mask, s, -np.inf), t) if mask[t] else 0
        ranks["bm25f"].append(rk if rk <= cap else 0)
        if r.target_appended:
            ranks["w5h-l2r"].append(0)
        else:
            sc = model.predict_many(r.X)
            key = np.argsort(np.argsort(np.array(r.ids)))
            ranks["w5h-l2r"].append(rank_of(sc, r.target_index, key))
        qids.append(r.qid)
        groups.append(r.group)
    return {m: MethodRun(m, qids, np.array(v), groups) for m, v in ranks.items()}


def compare_methods(eval_set: LabeledRankingSet, idx: InvertedIndex, model: Ensemble, params: Bm25Params,
                    bm25_dims=("what",), cutoff: int = 50, cap: int = 1000):
    runs = method_runs(eval_set, idx, model, params, bm25_dims, cap)
    return runs, compare_runs(runs, cutoff)


def _fmt_float(x):
    return None if x is None else float(f"{x:.12g}")


def run_evaluate(cfg: RunConfig) -> list:
    wd = Workdir(cfg)
    wd.require_chain("evaluate")
    wd.require("train")
    idx = InvertedIndex.load(wd.path("index.json.gz"))
    model = Ensemble.load(wd.path("model.json"))
    eval_set = load_split(wd, "eval")
    runs, rows = compare_methods(eval_set, idx, model, bm25_params(cfg), tuple(cfg.index.bm25_dims),
                                 cfg.eval.cutoff, cfg.index.candidate_cap)
    chash = stage_hash(cfg, "evaluate")
    with open(wd.path("metrics.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            rec = json.loads(row.to_json())
            rec["config_hash"] = chash
            for k in ("mrr", "s@1", "s@3", "s@10"):
                rec[k] = _fmt_float(rec[k])
            rec["p_values"] = {k: _fmt_float(v) for k, v in rec["p_values"].items()}
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    curve = []
    if cfg.eval.learning_curve:
        train = load_split(wd, "train")
        best = TrainConfig(**{k: v for k, v in model.config.items() if k in TrainConfig.__dataclass_fields__})
        for n in cfg.eval.learning_curve:
            m = train_lambdamart(train.head(n), best)
            r = method_runs(eval_set, idx, m, bm25_params(cfg), tuple(cfg.index.bm25_dims),
                            cfg.index.candidate_cap)["w5h-l2r"]
            point = {"n_train": min(n, len(train)), "all": _fmt_float(float(r.rr(cfg.eval.cutoff).mean()))}
            for g, sub in r.by_group().items():
                point[f"group{g}"] = _fmt_float(float(sub.rr(cfg.eval.cutoff).mean()))
            curve.append(point)
    wd.path("learning_curve.json").write_text(json.dumps(curve, indent=1, sort_keys=True) + "\n")
    wd.path("report.txt").write_text(render_report(wd))
    wd.write_manifest("evaluate")
    return rows


def render_report(wd: Workdir) -> str:
    from .evaluation import MetricRow

    rows = []
    for line in wd.path("metrics.jsonl").read_text().splitlines():
        r = json.loads(line)
        rows.append(MetricRow(r["group"], r["method"], r["n_queries"], r["mrr"], r["s@1"], r["s@3"],
                              r["s@10"], r["p_values"]))
    model = Ensemble.load(wd.path("model.json"))
    imp = feature_importance(model)
    parts = [render_table(rows), render_importance(imp, {k: feature_name(k) for k in imp})]
    cfg = model.config
    parts.append(f"Model: trees={cfg.get('n_trees')} leaves={cfg.get('n_leaves')} "
                 f"mls={cfg.get('min_leaf_support')} shrinkage={cfg.get('shrinkage')} "
                 f"lambda sigma={cfg.get('sigma')} lambda cutoff={cfg.get('cutoff')}\n")
    overlap = wd.path("overlap.json")
    if overlap.exists():
        parts.append("Train/eval overlap: " + overlap.read_text().replace("\n", " ").strip() + "\n")
    curve_path = wd.path("learning_curve.json")
    if curve_path.exists():
        curve = json.loads(curve_path.read_text())
        if curve:
            parts.append("Learning curve (w5h-l2r MRR@50):")
            for p in curve:
                parts.append("  " + " ".join(f"{k}={v}" for k, v in sorted(p.items())))
            parts.append("")
    return "\n".join(parts)


def run_report(cfg: RunConfig) -> str:
    wd = Workdir(cfg)
    wd.require_chain("evaluate")
    wd.require("evaluate")
    return render_report(wd)


# ------------------------------------------------------------------ search

def parse_query_string(text: str, alias_table=None) -> QueryObject:
    """Parse ``what:lunch who:"john smith" when:2018`` into a query object.

    *when* values keep only their finest time token (``June`` -> ``month:06``).
    """
    dims: dict[str, list[str]] = {d: [] for d in FEATURE_DIMS}
    for tok in shlex.split(text):
        if ":" not in tok:
            raise ValueError(f"expected dim:value, got {tok!r}")
        dim, value = tok.split(":", 1)
        dim = dim.strip().lower()
        if dim not in dims:
            raise ValueError(f"unknown dimension {dim!r}")
        if dim == "what":
            dims[dim] += tokenize(value)
        elif dim == "when":
            toks = normalize_when(value)
            fine = finest_time_tokens(toks) or toks
            if not fine:
                raise ValueError(f"cannot parse date {value!r}")
            dims[dim] += fine
        elif dim in ("who", "where"):
            dims[dim].append(canonicalize_entity(value, alias_table))
        else:
            dims[dim].append(value.strip().lower())
    return QueryObject({d: list(dict.fromkeys(v)) for d, v in dims.items()})


def search(cfg: RunConfig, query: str, method: str = "bm25f", k: int = 10) -> list[tuple[str, float]]:
    wd = Workdir(cfg)
    wd.require_chain("index")
    wd.require("index")
    idx = InvertedIndex.load(wd.path("index.json.gz"))
    alias = load_alias_table(cfg.ingest.alias_table) if cfg.ingest.alias_table else None
    q = parse_query_string(query, alias)
    params = bm25_params(cfg)
    mask = idx.match_mask(q)
    if method == "bm25":
        s = idx.bm25_all([t for d in FEATURE_DIMS for t in q[d]], params)
        order = rank_scores(s, mask & (s > 0))
    elif method in ("bm25f", "w5h-l2r"):
        s = idx.bm25f_all(q, params)
        order = rank_scores(s, mask)
        if method == "w5h-l2r":
            wd.require_chain("train")
            wd.require("train")
            ds = load_dataset(wd)
            ex = FeatureExtractor(ds, idx, TopicModel.load(wd.path("topics.txt")), params)
            order = order[:cfg.querygen.list_size]
            s = np.full(idx.n, -np.inf)
            s[order] = Ensemble.load(wd.path("model.json")).predict_many(ex.extract_many(q, order))
            order = rank_scores(s, np.isin(np.arange(idx.n), order))
    else:
        raise ValueError(f"unknown method {method!r}")
    return [(idx.ids[i], float(s[i])) for i in order[:k]]
