"""Two-stage driver: stage-1 dual solve, stage-2 regularized BP, primal assembly."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    Bpdn,
    ColumnPartition,
    DegenerateDual,
    Free,
    FusedL1,
    GeneralPolyhedron,
    L1,
    Lasso,
    NonNeg,
    RegBP,
    UnsupportedCase,
    ValidationError,
)
from .dual_forms import DualSolution, build_dual, stage2_target
from .network import ConsensusSet, Topology, mixing_weight
from .splitting import SchemeParams, SolveReport, davis_yin_run, douglas_rachford_run

ENGINES = ("auto", "douglas_rachford", "davis_yin")


@dataclass
class TwoStageConfig:
    """Parameters of the two-stage scheme.

    ``alpha=None`` means 0.18 for the plain variant and 0.1 for the scaled one.
    ``feas_tol``, when set, adds ``||A x - b_hat|| <= feas_tol`` to the stage-2
    stopping rule.
    """

    stage1: SchemeParams = field(default_factory=lambda: SchemeParams(tol=1e-6))
    stage2: SchemeParams = field(default_factory=lambda: SchemeParams(tol=1e-5))
    alpha: float | None = None
    variant: str = "plain"
    stage2_engine: str = "auto"
    feas_tol: float | None = None

    def __post_init__(self):
        if self.variant not in ("plain", "scaled"):
            raise ValidationError(f"unknown variant {self.variant!r}")
        if self.alpha is None:
            self.alpha = 0.1 if self.variant == "scaled" else 0.18
        if not self.alpha > 0:
            raise ValidationError("alpha must be positive")
        if self.stage2_engine not in ENGINES:
            raise ValidationError(f"unknown engine {self.stage2_engine!r}")


@dataclass
class TwoStageReport:
    """Outcome of :func:`solve_two_stage`."""

    stage1: SolveReport | None
    stage2: SolveReport | None
    y_star: np.ndarray
    b_hat: np.ndarray
    scale: float
    objective: float
    feasibility: float
    dual1: DualSolution | None = None
    dual2: DualSolution | None = None
    stage2_solution: np.ndarray | None = None


def _consensus(form, topology: Topology | None, params: SchemeParams) -> ConsensusSet:
    W = None
    if params.averaging == "gossip":
        if topology is None:
            raise ValidationError("gossip averaging needs a topology")
        W = mixing_weight(topology)
    return ConsensusSet(form.layout, mode=params.averaging, W=W, rounds=params.gossip_rounds)


def _check_topology(problem, partition: ColumnPartition, topology: Topology | None):
    if topology is None:
        return
    if topology.p != partition.p:
        raise ValidationError(f"topology has {topology.p} agents, partition has {partition.p}")
    if isinstance(problem.reg, FusedL1) and partition.p > 1 and not topology.has_path():
        raise ValidationError("fused penalty needs every chain edge (i, i+1) in the topology")


def primal_objective(problem, x) -> float:
    """Objective of the original problem at ``x``."""
    return problem.objective(np.asarray(x, dtype=np.float64))


def solve_regbp_distributed(problem: RegBP, partition: ColumnPartition, topology: Topology | None = None,
                            params: SchemeParams | None = None, engine: str = "auto",
                            feas_tol: float | None = None, init=None):
    """Solve ``min ||Ex||_* + alpha/2 ||x||^2 s.t. Ax = b, x in C`` by dual splitting.

    ``engine="auto"`` uses Douglas-Rachford, whose prox also handles the fused
    multiplier box, and falls back to Davis-Yin when the prox is unavailable.

    Returns
    -------
    x_blocks : list of per-agent primal blocks
    report : SolveReport
        ``report.extra`` holds ``feasibility`` (``||Ax - b||``), ``dual`` and
        ``x`` (the assembled solution).
    """
    if not isinstance(problem, RegBP):
        raise UnsupportedCase("solve_regbp_distributed needs a RegBP problem")
    if engine not in ENGINES:
        raise ValidationError(f"unknown engine {engine!r}")
    _check_topology(problem, partition, topology)
    params = params or SchemeParams(tol=1e-6)
    form = build_dual(problem, partition)
    cons = _consensus(form, topology, params)
    A, b = problem.A, problem.b

    def assemble(W):
        X = form.primal_blocks(W)
        return [X[i, :blk.size] for i, blk in enumerate(partition.blocks)]

    check = None
    if feas_tol is not None:
        def check(W):
            r = float(np.linalg.norm(A @ partition.assemble(assemble(W)) - b))
            return r <= feas_tol, r

    if engine == "auto":
        engine = "douglas_rachford" if form.prox_available else "davis_yin"
    if engine == "douglas_rachford":
        sol, rep = douglas_rachford_run(form, cons, params, init=init, extra_check=check)
    else:
        sol, rep = davis_yin_run(form, cons, params=params, init=init, extra_check=check)
    W = form.pack(sol.y, sol.mu, sol.v) if cons.mode == "exact" else rep.state.w
    x_blocks = [xb.copy() for xb in assemble(W)]
    x = partition.assemble(x_blocks)
    rep.extra["feasibility"] = float(np.linalg.norm(A @ x - b))
    rep.extra["dual"] = sol
    rep.extra["x"] = x
    return x_blocks, rep


def _check_scaled(problem):
    if not isinstance(problem.reg, L1):
        raise ValidationError("scaled variant needs a plain l1 penalty")
    con = problem.constraint
    if not (isinstance(con, (Free, NonNeg)) or (isinstance(con, GeneralPolyhedron) and con.is_cone)):
        raise ValidationError("scaled variant needs a polyhedral cone constraint (d = 0)")


def solve_two_stage(problem, partition: ColumnPartition, topology: Topology | None = None,
                    config: TwoStageConfig | None = None, init1=None):
    """Solve a LASSO or BPDN problem by the two-stage distributed scheme.

    Stage 1 solves the dual by Davis-Yin splitting; stage 2 solves the
    regularized BP problem with right-hand side ``b + y*`` (LASSO) or
    ``b + sigma y*/||y*||`` (BPDN), or their scaled versions.

    Returns
    -------
    x_blocks : list of per-agent primal blocks
    report : TwoStageReport
    """
    if not isinstance(problem, (Lasso, Bpdn)):
        raise UnsupportedCase("solve_two_stage needs a Lasso or Bpdn problem")
    config = config or TwoStageConfig()
    _check_topology(problem, partition, topology)
    if config.variant == "scaled":
        _check_scaled(problem)

    form1 = build_dual(problem, partition)
    cons1 = _consensus(form1, topology, config.stage1)
    dual1, rep1 = davis_yin_run(form1, cons1, params=config.stage1, init=init1)
    y_star = dual1.y

    try:
        b_hat, scale = stage2_target(problem, y_star, config.variant)
    except DegenerateDual:
        if config.variant != "scaled" or (isinstance(problem, Bpdn) and np.linalg.norm(y_star) == 0):
            raise
        N = problem.A.shape[1]
        x_blocks = [np.zeros(blk.size) for blk in partition.blocks]
        return x_blocks, TwoStageReport(rep1, None, y_star, np.zeros_like(y_star), 0.0,
                                        primal_objective(problem, np.zeros(N)),
                                        float(np.linalg.norm(problem.b)), dual1)

    reg2 = L1(1.0) if config.variant == "scaled" else problem.reg
    stage2 = RegBP(problem.A, b_hat, config.alpha, reg2, problem.constraint)
    z_blocks, rep2 = solve_regbp_distributed(stage2, partition, topology, config.stage2,
                                             engine=config.stage2_engine, feas_tol=config.feas_tol)
    x_blocks = [scale * zb for zb in z_blocks]
    x = partition.assemble(x_blocks)
    report = TwoStageReport(
        stage1=rep1,
        stage2=rep2,
        y_star=y_star,
        b_hat=b_hat,
        scale=scale,
        objective=primal_objective(problem, x),
        feasibility=rep2.extra["feasibility"],
        dual1=dual1,
        dual2=rep2.extra["dual"],
        stage2_solution=rep2.extra["x"],
    )
    return x_blocks, report


def continuity_probe(problem: RegBP, partition: ColumnPartition, perturbations, params: SchemeParams | None = None,
                     topology: Topology | None = None):
    """Solution displacement of a regularized BP problem under offsets of ``b``.

    Returns
    -------
    ndarray, shape (k, 2)
        Rows ``(||db||, ||dx*||)`` for each perturbation, in order.
    """
    params = params or SchemeParams(tol=1e-10)
    _, rep0 = solve_regbp_distributed(problem, partition, topology, params)
    x0 = rep0.extra["x"]
    rows = []
    for db in perturbations:
        db = np.asarray(db, dtype=np.float64)
        pert = RegBP(problem.A, problem.b + db, problem.alpha, problem.reg, problem.constraint)
        _, rep = solve_regbp_distributed(pert, partition, topology, params)
        rows.append((float(np.linalg.norm(db)), float(np.linalg.norm(rep.extra["x"] - x0))))
    return np.array(rows).reshape(-1, 2)
