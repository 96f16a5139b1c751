"""Run configuration: one file, every default echoed back when resolved."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .core import W5HError


class ConfigError(W5HError):
    pass


@dataclass
class PathsConfig:
    corpus: str | None = None
    workdir: str = "work"


@dataclass
class IngestConfig:
    source: str = "synthetic"           # enron | records | synthetic
    max_messages: int | None = None
    owners: list[str] | None = None
    alias_table: str | None = None
    subset_seed: int = 0
    synthetic_seed: int = 7
    synthetic_objects: int = 2000
    synthetic_profile: dict = field(default_factory=dict)


@dataclass
class IndexConfig:
    k1: float = 1.2
    b: float = 0.75
    weights: dict[str, float] = field(default_factory=lambda: {d: 1.0 for d in ("what", "who", "when", "where", "how")})
    candidate_cap: int = 1000
    bm25_dims: list[str] = field(default_factory=lambda: ["what"])


@dataclass
class TopicsConfig:
    K: int = 50
    alpha: float | None = None
    beta: float = 0.01
    iters: int = 1000
    seed: int = 0
    max_doc_tokens: int | None = None


@dataclass
class QueryGenConfig:
    templates: list[list[str]] = field(default_factory=lambda: [
        ["what", "who"], ["what", "who", "when"], ["what", "who", "when", "how"], ["what", "who", "how"]])
    v: int = 1
    n_train: int = 2000
    n_eval: int = 500
    train_seed: int = 1001
    eval_seed: int = 2002
    list_size: int = 100
    uniform_what: bool = False


@dataclass
class TrainSection:
    cv: bool = True
    folds: int = 5
    grid: Any = field(default_factory=lambda: {
        "n_trees": [50], "n_leaves": [15], "min_leaf_support": [10, 20], "shrinkage": [0.1, 0.3]})
    cutoff: int = 50
    sigma: float = 1.0
    seed: int = 0


@dataclass
class EvalConfig:
    cutoff: int = 50
    success_ks: list[int] = field(default_factory=lambda: [1, 3, 10])
    learning_curve: list[int] = field(default_factory=list)


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    index: IndexConfig = field(default_factory=IndexConfig)
    topics: TopicsConfig = field(default_factory=TopicsConfig)
    querygen: QueryGenConfig = field(default_factory=QueryGenConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def section_hash(self, *names: str) -> str:
        d = self.to_dict()
        blob = json.dumps({n: d[n] for n in names}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def workdir(self) -> Path:
        return Path(self.paths.workdir)


def _build(cls, raw: Any, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        sub = _SECTIONS.get(k) if cls is RunConfig else None
        kwargs[k] = _build(sub, v, k) if sub else v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from None


_SECTIONS = {"paths": PathsConfig, "ingest": IngestConfig, "index": IndexConfig, "topics": TopicsConfig,
             "querygen": QueryGenConfig, "train": TrainSection, "eval": EvalConfig}


def _validate(cfg: RunConfig) -> None:
    if cfg.ingest.source not in ("enron", "records", "synthetic"):
        raise ConfigError(f"ingest.source must be enron, records or synthetic, not {cfg.ingest.source!r}")
    if cfg.ingest.source != "synthetic" and not cfg.paths.corpus:
        raise ConfigError("paths.corpus is required unless ingest.source is synthetic")
    if cfg.topics.K < 1 or cfg.topics.iters < 1:
        raise ConfigError("topics.K and topics.iters must be >= 1")
    if cfg.querygen.n_train < 1 or cfg.querygen.n_eval < 1 or cfg.querygen.list_size < 2:
        raise ConfigError("querygen counts must be >= 1 and list_size >= 2")
    if cfg.querygen.train_seed == cfg.querygen.eval_seed:
        raise ConfigError("train and eval query seeds must differ")
    if cfg.train.folds < 2:
        raise ConfigError("train.folds must be >= 2")
    if not (cfg.index.k1 >= 0 and 0 <= cfg.index.b <= 1):
        raise ConfigError("index.k1 must be >= 0 and index.b in [0, 1]")
    if not (isinstance(cfg.train.grid, dict) or cfg.train.grid == "full"):
        raise ConfigError("train.grid must be a mapping of lists or the string 'full'")


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML or JSON config; ``overrides`` maps dotted keys to values."""
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid config file: {e}") from None
    for dotted, value in (overrides or {}).items():
        node = raw
        *head, last = dotted.split(".")
        for k in head:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {dotted}")
        node[last] = value
    cfg = _build(RunConfig, raw, "<root>")
    _validate(cfg)
    return cfg
