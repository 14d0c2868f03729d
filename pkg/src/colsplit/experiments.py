"""Benchmark cells at the m = 10, N = 400, p = 40 scale.

Each cell fixes the problem family, constraint, topology and the stage
tolerances, and compares the two-stage output against the centralized oracle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import Bpdn, Free, FusedL1, GroupL2, L1, Lasso, NonNeg, make_partition
from .network import build_topology
from .pipeline import TwoStageConfig, solve_two_stage
from .reference import random_bpdn_instance, random_instance, relative_error, solve_centralized
from .splitting import SchemeParams

M, N, P = 10, 400, 40


@dataclass(frozen=True)
class Cell:
    """One benchmark configuration.

    ``family`` is one of ``lasso``, ``bpdn``, ``fused_lasso``, ``fused_bpdn``
    and ``group_lasso``; ``constraint`` is ``free`` or ``nonneg``;
    ``topology`` is ``cycle`` or ``random``.
    """

    family: str
    constraint: str = "free"
    topology: str = "cycle"
    seed: int = 0
    topology_seed: int = 0


@dataclass
class CellResult:
    cell: Cell
    J_dist: float
    J_true: float
    J_RE: float
    feasibility: float
    residual_norm: float
    stage1_iterations: int
    stage2_iterations: int
    wall_time: float
    x: np.ndarray
    y_star: np.ndarray
    report: object


def cell_problem(cell: Cell):
    """Problem, partition, topology and two-stage config for a cell."""
    nonneg = cell.constraint == "nonneg"
    con = NonNeg() if nonneg else Free()
    part = make_partition(N, P)
    # stage 2 also stops on ||A x - b_hat||, which is the certificate residual
    feas_tol = 1e-5
    if cell.family in ("bpdn", "fused_bpdn"):
        A, b = random_bpdn_instance(M, N, 0.2, cell.seed)
    else:
        A, b = random_instance(M, N, cell.seed)
    if cell.family == "lasso":
        prob = Lasso(A, b, L1(1.8), con)
        alpha, t1, t2 = 0.18, (1e-6 if nonneg else 1e-7), 1e-5
    elif cell.family == "bpdn":
        prob = Bpdn(A, b, 0.2, L1(1.0), con)
        alpha, feas_tol = 0.15, 1e-4
        t1, t2 = (1e-5, 2e-4) if nonneg else (1e-7, 8e-4)
    elif cell.family == "fused_lasso":
        prob = Lasso(A, b, FusedL1(0.6, 0.4), con)
        alpha, t1, t2 = 0.18, 1e-5, 1e-4
    elif cell.family == "fused_bpdn":
        prob = Bpdn(A, b, 0.2, FusedL1(1.0, 0.4), con)
        alpha, feas_tol = 0.18, 1e-4
        t1, t2 = (1e-4, 1e-5) if nonneg else (1e-5, 1e-5)
    elif cell.family == "group_lasso":
        prob = Lasso(A, b, GroupL2(part, np.full(P, 1.8)), con)
        alpha, t1, t2 = 0.18, 1e-5, 8e-6
    else:
        raise ValueError(f"unknown family {cell.family!r}")
    if cell.topology == "cycle":
        top = build_topology("cycle", P)
    else:
        top = build_topology("random_connected_with_path", P, seed=cell.topology_seed)
    cfg = TwoStageConfig(stage1=SchemeParams(tol=t1), stage2=SchemeParams(tol=t2), alpha=alpha, feas_tol=feas_tol)
    return prob, part, top, cfg


def run_cell(cell: Cell, J_true: float | None = None) -> CellResult:
    """Solve a cell distributedly and score it against the oracle."""
    prob, part, top, cfg = cell_problem(cell)
    t0 = time.perf_counter()
    xb, rep = solve_two_stage(prob, part, top, cfg)
    wall = time.perf_counter() - t0
    x = part.assemble(xb)
    if J_true is None:
        J_true = solve_centralized(prob).objective
    J = float(prob.objective(x))
    return CellResult(cell, J, J_true, relative_error(J, J_true), rep.feasibility,
                      float(np.linalg.norm(prob.A @ x - prob.b)), rep.stage1.iterations,
                      rep.stage2.iterations, wall, x, rep.y_star, rep)


def all_cells(seed: int = 0) -> list[Cell]:
    cells = []
    for fam in ("lasso", "bpdn", "fused_lasso", "fused_bpdn"):
        for con in ("free", "nonneg"):
            for top in ("cycle", "random"):
                cells.append(Cell(fam, con, top, seed))
    cells.append(Cell("group_lasso", "free", "cycle", seed))
    return cells
