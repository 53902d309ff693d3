"""kNN throughput over a range of donor-set sizes and worker counts.

    python scripts/bench_knn.py --donors 1000 4000 16000 --workers 1 4
"""
from __future__ import annotations

import argparse

from artpop.knn import benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--donors", type=int, nargs="+", default=[1000, 4000, 16000])
    ap.add_argument("--workers", type=int, nargs="+", default=[1])
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--queries", type=int, default=200_000)
    args = ap.parse_args()

    print(f"{'donors':>8} {'workers':>7} {'q/s':>12} {'12M recipients':>15}")
    for n in args.donors:
        for w in args.workers:
            r = benchmark(n_donors=n, dim=args.dim, n_queries=args.queries, k=args.k, workers=w)
            qps = r["queries_per_second"]
            print(f"{n:>8} {w:>7} {qps:>12,.0f} {12e6 / qps / 60:>12.1f} min")


if __name__ == "__main__":
    main()
