"""Command-line entry point.

    artpop fixture  --out DIR            synthetic inputs plus a ready config
    artpop pipeline --config run.yaml    every stage, cached
    artpop generate|sample|estimate|evaluate|diagnose --config run.yaml
    artpop sweep    --config run.yaml --k 1 5 10 20 50 100
    artpop bench-knn

Exit status: 0 success, 2 validation failure, 3 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import knn
from .config import default_fixture_config, load_config
from .errors import ArtpopError, ConfigError, SchemaValidationError
from .fixtures import Y_NAMES, FixtureSpec, make_fixture, write_fixture
from .pipeline import STAGES, Pipeline, StageError, sensitivity_sweep

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3

log = logging.getLogger("artpop")


def _common(p: argparse.ArgumentParser, config_required=True):
    p.add_argument("--config", type=Path, required=config_required, help="run config (YAML)")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--seed-override", type=int,
                   help="replace the imputation seed (design seed becomes seed + 1)")
    p.add_argument("--retain-neighbor-lists", action="store_true", default=None,
                   help="keep every recipient's ranked donor pool for usage diagnostics")
    p.add_argument("--force", action="store_true", help="ignore the stage cache")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artpop", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="write a synthetic auxiliary/survey pair and a config")
    _common(p, config_required=False)
    p.add_argument("--n-units", type=int)
    p.add_argument("--n-clusters", type=int)
    p.add_argument("--n-domains", type=int)
    p.add_argument("--n-strata", type=int)
    p.add_argument("--zero-share-max", type=float)
    p.add_argument("--replicates", type=int, default=100)

    for stage in STAGES[1:]:
        _common(sub.add_parser(stage, help=f"run the {stage} stage from existing files"))
    _common(sub.add_parser("pipeline", help="run every stage"))

    p = sub.add_parser("sweep", help="generate + diagnose over a list of k values")
    _common(p)
    p.add_argument("--k", type=int, nargs="+", default=[1, 5, 10, 20, 50, 100])

    p = sub.add_parser("bench-knn", help="kNN query throughput")
    p.add_argument("--donors", type=int, default=4000)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--queries", type=int, default=200_000)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="write the result as JSON here")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(output=args.out, seed=args.seed_override,
                              retain_neighbor_lists=args.retain_neighbor_lists)


def cmd_fixture(args) -> int:
    if args.config is not None:
        base = _load(args)
        spec = base.fixture or FixtureSpec()
        raw = dict(base.raw)
    else:
        spec = FixtureSpec()
        raw = default_fixture_config(spec, replicates=args.replicates)
    overrides = {k: getattr(args, k) for k in
                 ("n_units", "n_clusters", "n_domains", "n_strata", "zero_share_max")
                 if getattr(args, k) is not None}
    if args.seed_override is not None:
        overrides["seed"] = args.seed_override
    d = spec.to_dict()
    d.update(overrides)
    spec = FixtureSpec.from_dict(d)
    out = args.out or Path("fixture")
    paths = write_fixture(make_fixture(spec), out)
    raw.pop("fixture", None)
    raw["inputs"] = {"auxiliary": paths["auxiliary"].name, "survey": paths["survey"].name}
    raw["schema"] = {"y": list(Y_NAMES)}
    raw["output"] = {"directory": "run"}
    (out / "config.yaml").write_text(yaml.safe_dump(raw, sort_keys=True))
    (out / "fixture_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(out / "config.yaml")
    return EXIT_OK


def cmd_stages(args, stages) -> int:
    cfg = _load(args)
    pipe = Pipeline(cfg, workers=args.workers, force=args.force)
    out = pipe.run(stages)
    print(out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    table = sensitivity_sweep(cfg, args.k, workers=args.workers)
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_bench(args) -> int:
    res = knn.benchmark(n_donors=args.donors, dim=args.dim, n_queries=args.queries, k=args.k,
                        workers=args.workers, seed=args.seed)
    text = json.dumps(res, indent=2, sort_keys=True)
    if args.out:
        args.out.write_text(text + "\n")
    print(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fixture":
            return cmd_fixture(args)
        if args.command == "bench-knn":
            return cmd_bench(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "pipeline":
            return cmd_stages(args, STAGES)
        if args.command == "generate":
            return cmd_stages(args, ("inputs", "generate"))
        return cmd_stages(args, (args.command,))
    except (ConfigError, SchemaValidationError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    except (ArtpopError, OSError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
