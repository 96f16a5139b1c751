"""Command-line entry point: ``w5h <stage> --config run.yaml``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import yaml

from . import pipeline
from .config import ConfigError, load_config
from .core import SchemaError, W5HError
from .ingest import MalformedMessage
from .querygen import NoEligibleTarget
from .synthetic import InvalidProfile
from .topics import EmptyCorpus

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_DATA = 0, 2, 3, 4

STAGES = {
    "ingest": pipeline.run_ingest,
    "index": pipeline.run_index,
    "topics": pipeline.run_topics,
    "gen-queries": pipeline.run_gen_queries,
    "train": pipeline.run_train,
    "evaluate": pipeline.run_evaluate,
}


def _parse_set(pairs: list[str]) -> dict:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k] = yaml.safe_load(v)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="w5h", description="Frequency-feature learning to rank over personal traces.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="YAML or JSON run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. --set topics.K=20")
        p.add_argument("--workdir", help="shortcut for --set paths.workdir=DIR")

    for name in list(STAGES) + ["report", "all", "config"]:
        common(sub.add_parser(name))
    s = sub.add_parser("search", help="one-shot query, e.g. 'what:lunch who:john when:2018'")
    common(s)
    s.add_argument("query")
    s.add_argument("--method", choices=("bm25", "bm25f", "w5h-l2r"), default="bm25f")
    s.add_argument("-k", type=int, default=10)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        overrides = _parse_set(args.set)
        if args.workdir:
            overrides["paths.workdir"] = args.workdir
        cfg = load_config(args.config, overrides)
        if args.command == "config":
            print(cfg.dump())
        elif args.command == "all":
            for fn in STAGES.values():
                fn(cfg)
            (cfg.workdir / "resolved_config.json").write_text(cfg.dump() + "\n")
            print(pipeline.run_report(cfg))
        elif args.command == "report":
            print(pipeline.run_report(cfg))
        elif args.command == "search":
            hits = pipeline.search(cfg, args.query, args.method, args.k)
            ds = pipeline.load_dataset(pipeline.Workdir(cfg))
            for rank, (oid, score) in enumerate(hits, 1):
                o = ds[oid]
                brief = {d: list(o[d])[:6] for d in ("who", "when", "how") if o[d]}
                print(f"{rank:>3} {score:10.4f} {oid} {json.dumps(brief, ensure_ascii=False)}")
        else:
            STAGES[args.command](cfg)
            # the resolved config travels with the outputs
            (cfg.workdir / "resolved_config.json").write_text(cfg.dump() + "\n")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.MissingArtifact as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (SchemaError, MalformedMessage, NoEligibleTarget, EmptyCorpus, InvalidProfile, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except W5HError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
