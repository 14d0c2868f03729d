"""Exact-regularization sweep on random basis pursuit instances.

For each instance the regularized BP problem is solved distributedly for every
alpha and the l1 value is compared with the unregularized BP optimum.

Usage: python3 scripts/alpha_sweep.py [--instances 10] [--m 5] [--N 30] [--p 5]
                                      [--alphas 0.1 0.05 0.01 0.001] [--out results/alpha_sweep.csv]
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import cvxpy as cp
import numpy as np

from colsplit.core import L1, RegBP, make_partition
from colsplit.pipeline import solve_regbp_distributed
from colsplit.reference import random_instance
from colsplit.splitting import SchemeParams


def bp_value(A, b):
    x = cp.Variable(A.shape[1])
    prob = cp.Problem(cp.Minimize(cp.norm1(x)), [A @ x == b])
    prob.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return prob.value, x.value


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--instances", type=int, default=10)
    ap.add_argument("--m", type=int, default=5)
    ap.add_argument("--N", type=int, default=30)
    ap.add_argument("--p", type=int, default=5)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.1, 0.05, 0.01, 0.001])
    ap.add_argument("--tol", type=float, default=1e-10)
    ap.add_argument("--out", default="results/alpha_sweep.csv")
    args = ap.parse_args()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    part = make_partition(args.N, args.p)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["seed", "alpha", "l1_value", "bp_value", "difference", "rule_alpha", "iterations"])
        for seed in range(args.instances):
            A, b = random_instance(args.m, args.N, seed)
            bp, x_bp = bp_value(A, b)
            # heuristic upper bound 1 / (10 ||x||_inf) for exact regularization
            rule = 1.0 / (10 * np.max(np.abs(x_bp)))
            for alpha in args.alphas:
                _, rep = solve_regbp_distributed(RegBP(A, b, alpha, L1(1.0)), part,
                                                 params=SchemeParams(tol=args.tol))
                v = float(np.abs(rep.extra["x"]).sum())
                wr.writerow([seed, alpha, v, bp, v - bp, rule, rep.iterations])
                print(f"seed={seed} alpha={alpha:g} l1={v:.10f} bp={bp:.10f} diff={v - bp:+.2e} "
                      f"rule={rule:.3f}", flush=True)


if __name__ == "__main__":
    main()
