"""Run every benchmark cell and write a results table.

Usage: python3 scripts/run_benchmark_cells.py [--seed 0] [--only lasso,bpdn] [--out results/cells.csv]
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

from colsplit.experiments import all_cells, run_cell


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--only", default="", help="comma-separated families")
    ap.add_argument("--out", default="results/cells.csv")
    args = ap.parse_args()
    only = set(filter(None, args.only.split(",")))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cols = ["family", "constraint", "topology", "J_dist", "J_true", "J_RE", "residual_norm",
            "stage1_iterations", "stage2_iterations", "wall_time"]
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for cell in all_cells(args.seed):
            if only and cell.family not in only:
                continue
            r = run_cell(cell)
            row = [cell.family, cell.constraint, cell.topology, r.J_dist, r.J_true, r.J_RE, r.residual_norm,
                   r.stage1_iterations, r.stage2_iterations, round(r.wall_time, 1)]
            wr.writerow(row)
            fh.flush()
            print(" ".join(f"{c}={v:.4g}" if isinstance(v, float) else f"{c}={v}" for c, v in zip(cols, row)),
                  flush=True)


if __name__ == "__main__":
    main()
