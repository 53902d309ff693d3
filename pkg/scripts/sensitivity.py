"""Per-domain SD correlation of imputed vs sampled responses across neighbour counts.

    python scripts/sensitivity.py --out sweep --k 1 5 10 20 50 100
"""
from __future__ import annotations

import argparse

from artpop.config import default_fixture_config, parse_config
from artpop.fixtures import FixtureSpec
from artpop.pipeline import DEFAULT_SWEEP_K, sensitivity_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="sweep")
    ap.add_argument("--k", type=int, nargs="+", default=list(DEFAULT_SWEEP_K))
    ap.add_argument("--seed", type=int, default=0, help="fixture seed")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    raw = default_fixture_config(FixtureSpec(seed=args.seed))
    raw["output"] = {"directory": args.out}
    table = sensitivity_sweep(parse_config(raw), args.k, workers=args.workers)
    wide = table.pivot_table(index=["method", "k"], columns="variable", values="sd_correlation", sort=False)
    print(wide.round(4).to_string())


if __name__ == "__main__":
    main()
