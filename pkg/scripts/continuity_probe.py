"""Sensitivity of the regularized BP solution to perturbations of b.

Prints the ratio ||dx*|| / ||db|| over random perturbations at several scales,
next to the active-set bound 1 / sigma_min(A_S).

Usage: python3 scripts/continuity_probe.py [--seed 5] [--alpha 0.18] [--count 20]
                                           [--scales 1e-2 1e-3 1e-4] [--out results/continuity.csv]
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

from colsplit.core import L1, RegBP, make_partition
from colsplit.pipeline import continuity_probe
from colsplit.reference import random_instance, solve_centralized


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--m", type=int, default=10)
    ap.add_argument("--N", type=int, default=40)
    ap.add_argument("--p", type=int, default=4)
    ap.add_argument("--alpha", type=float, default=0.18)
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--scales", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4])
    ap.add_argument("--out", default="results/continuity.csv")
    args = ap.parse_args()
    A, b = random_instance(args.m, args.N, args.seed)
    prob = RegBP(A, b, args.alpha, L1(1.0))
    part = make_partition(args.N, args.p)
    support = np.abs(solve_centralized(prob).solution) > 1e-7
    bound = 1.0 / np.linalg.svd(A[:, support], compute_uv=False).min()
    print(f"support size {support.sum()}, active-set bound {bound:.4f}")
    rng = np.random.default_rng(0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["scale", "db_norm", "dx_norm", "ratio"])
        for scale in args.scales:
            pert = [scale * d / np.linalg.norm(d) for d in rng.standard_normal((args.count, args.m))]
            table = continuity_probe(prob, part, pert)
            ratios = table[:, 1] / table[:, 0]
            for (db, dx), r in zip(table, ratios):
                wr.writerow([scale, db, dx, r])
            print(f"scale={scale:g} ratio min={ratios.min():.4f} max={ratios.max():.4f}", flush=True)


if __name__ == "__main__":
    main()
