"""Douglas-Rachford and Davis-Yin splitting over per-agent packed states.

All agents advance in synchronous rounds.  The per-agent work (prox, gradient,
local projection) is evaluated batched over agents, which gives the same
numbers as a sequential sweep because no agent reads another agent's state
within a round.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Infeasible, NonConvergence, ValidationError
from .dual_forms import DualForm, DualSolution, PieceSet
from .network import ConsensusSet


class StepSizeRejected(ValidationError):
    """Step parameters violate the convergence conditions of the scheme."""


@dataclass
class SchemeParams:
    """Step sizes and stopping rule for one splitting run.

    ``eta`` is the relaxation in (0, 1) for Douglas-Rachford and the gradient
    step for Davis-Yin; ``None`` picks the default from the Lipschitz estimate.
    ``rho`` is the Douglas-Rachford prox weight.
    """

    eta: float | None = None
    rho: float | None = None
    lambda_relax: float = 1.0
    max_iter: int = 200_000
    tol: float = 1e-6
    averaging: str = "exact"
    gossip_rounds: int = 50
    prox_tol: float = 1e-12
    record_y: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be at least 1")
        if self.averaging not in ("exact", "gossip"):
            raise ValidationError(f"unknown averaging mode {self.averaging!r}")


@dataclass
class AgentState:
    """Per-agent splitting variable ``z`` and consensual iterate ``w`` (rows = agents)."""

    z: np.ndarray
    w: np.ndarray


@dataclass
class SolveReport:
    """Iteration history and outcome of a splitting run."""

    scheme: str
    iterations: int = 0
    converged: bool = False
    fixed_point_residual: list = field(default_factory=list)
    consensus_residual: list = field(default_factory=list)
    dual_objective: list = field(default_factory=list)
    y_trace: list = field(default_factory=list)
    wall_time: float = 0.0
    eta: float = float("nan")
    rho: float = float("nan")
    lambda_relax: float = float("nan")
    lipschitz: float = float("nan")
    state: AgentState | None = None
    extra: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.dual_objective[-1] if self.dual_objective else float("nan")

    def to_csv(self, path) -> None:
        """Write iter, fixed_point_residual, consensus_residual, dual_objective."""
        with open(Path(path), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "fixed_point_residual", "consensus_residual", "dual_objective"])
            for k, (a, b, c) in enumerate(zip(self.fixed_point_residual, self.consensus_residual,
                                              self.dual_objective), start=1):
                wr.writerow([k, repr(float(a)), repr(float(b)), repr(float(c))])

    def smoothed_residual(self, window: int = 50) -> np.ndarray:
        """Means of the fixed-point residual over consecutive windows."""
        r = np.asarray(self.fixed_point_residual[1:], dtype=np.float64)
        n = r.size // window
        return r[: n * window].reshape(n, window).mean(axis=1)


def lipschitz_estimate(pieces: PieceSet) -> float:
    """Lipschitz constant of the stacked gradient ``(grad J_1, ..., grad J_p)``.

    This is the largest per-agent constant; for a single agent it equals
    ``lambda_max(A A^T + C C^T)/alpha`` on regularized BP duals.
    """
    return float(np.max(pieces.lipschitz()))


def _default_consensus(pieces: PieceSet, consensus, params: SchemeParams, W=None) -> ConsensusSet:
    if consensus is not None:
        return consensus
    return ConsensusSet(pieces.layout, mode=params.averaging, W=W, rounds=params.gossip_rounds)


def _unpack(pieces, W) -> DualSolution:
    if isinstance(pieces, DualForm):
        return pieces.unpack(W)
    return DualSolution(y=W[0].copy())


def _initial(pieces, init) -> np.ndarray:
    shape = (pieces.p, pieces.dim)
    if init is None:
        return np.zeros(shape)
    z = np.array(init.z if isinstance(init, AgentState) else init, dtype=np.float64)
    if z.shape != shape:
        raise ValidationError(f"initial state has shape {z.shape}, expected {shape}")
    return z


def _finish(report, pieces, cons, Wc, z, t0, converged, params, k):
    report.iterations = k
    report.converged = converged
    report.wall_time = time.perf_counter() - t0
    report.state = AgentState(z=z.copy(), w=Wc.copy())
    sol = _unpack(pieces, Wc)
    sol.spread = cons.spread(Wc)
    sol.residuals = {
        "fixed_point": report.fixed_point_residual[-1],
        "consensus": report.consensus_residual[-1],
    }
    if not converged:
        raise NonConvergence(
            f"{report.scheme} stopped after {k} iterations", k,
            max(report.fixed_point_residual[-1], report.consensus_residual[-1]), report)
    return sol, report


DIVERGENCE_WINDOW = 500


class _DivergenceWatch:
    """Flags a constant nonzero displacement along which the objective is unbounded.

    For an infeasible primal the dual is unbounded below and the iterates
    drift along a recession direction.  A steady drift alone is not enough
    (a feasible problem can cross a region where the dual is affine), so
    once the drift has persisted for ``window`` iterations the objective is
    evaluated far out along it and must keep falling at the observed rate.
    """

    def __init__(self, window: int = DIVERGENCE_WINDOW, reach: float = 1e6):
        self.window = window
        self.reach = reach
        self.delta = None
        self.obj = None
        self.count = 0

    def update(self, delta: np.ndarray, obj: float, tol: float, W=None, objective=None) -> bool:
        size = float(np.max(np.abs(delta)))
        steady = (self.delta is not None and size > tol and obj < self.obj
                  and float(np.max(np.abs(delta - self.delta))) <= 1e-9 * size)
        rate = self.obj - obj if self.obj is not None else 0.0
        self.count = self.count + 1 if steady else 0
        self.delta, self.obj = delta, obj
        if self.count < self.window:
            return False
        if W is None or objective is None:
            return True
        t = self.reach * (1.0 + float(np.max(np.abs(W)))) / size
        far = objective(W + t * delta)
        if np.isfinite(far) and far <= obj - 0.5 * t * rate:
            return True
        self.count = 0
        return False


def _record(report, Wprev, Wc, cr, obj, params, k, extra_check=None, watch=None, objective=None):
    fp = float(np.max(np.abs(Wc - Wprev))) if Wprev is not None else float("inf")
    report.fixed_point_residual.append(fp)
    report.consensus_residual.append(cr)
    report.dual_objective.append(obj)
    if params.record_y:
        report.y_trace.append(Wc[0].copy())
    report.iterations = len(report.fixed_point_residual)
    if obj < -1.0 / params.tol:
        raise Infeasible(f"dual objective {obj:.3e} fell below -1/tol after {k + 1} iterations; "
                         "the primal problem looks infeasible", report)
    if watch is not None and Wprev is not None and watch.update(Wc - Wprev, obj, params.tol, Wc, objective):
        raise Infeasible(f"iterates drift along a fixed direction on which the dual objective is "
                         f"unbounded below "
                         f"(after {k + 1} iterations); the primal problem looks infeasible", report)
    done = fp <= params.tol and cr <= params.tol
    if done and extra_check is not None:
        ok, value = extra_check(Wc)
        report.extra["extra_check"] = value
        return ok
    return done


def douglas_rachford_run(pieces: PieceSet, consensus: ConsensusSet | None = None,
                         params: SchemeParams | None = None, init=None, mixing=None,
                         extra_check=None):
    """Consensus Douglas-Rachford on ``sum_i J_i`` over the consensus set.

    Iterates ``w = P(z)``, ``z <- z + 2 eta (prox_{rho J_i}(2w - z) - w)``.
    Local constraints must already be folded into the pieces' prox.

    ``extra_check(W) -> (ok, value)`` is an optional additional stopping
    test, evaluated only once both residuals are below ``tol``.

    Returns
    -------
    (DualSolution, SolveReport)

    Raises
    ------
    NonConvergence, Infeasible
    """
    params = params or SchemeParams()
    cons = _default_consensus(pieces, consensus, params, mixing)
    eta = 0.9 if params.eta is None else float(params.eta)
    if not 0.0 < eta < 1.0:
        raise StepSizeRejected(f"Douglas-Rachford needs eta in (0, 1), got {eta}")
    L = lipschitz_estimate(pieces) if params.rho is None else float("nan")
    rho = 3.0 * pieces.p / L if params.rho is None else float(params.rho)
    if not rho > 0:
        raise StepSizeRejected(f"rho must be positive, got {rho}")
    report = SolveReport("douglas_rachford", eta=eta, rho=rho, lipschitz=L)
    t0 = time.perf_counter()
    z = _initial(pieces, init)
    Wprev = None
    watch = _DivergenceWatch()
    U = None
    converged = False
    k = 0
    for k in range(1, params.max_iter + 1):
        Wc = cons(z)
        U = pieces.prox(2.0 * Wc - z, rho, W0=U, tol=params.prox_tol)
        z = z + 2.0 * eta * (U - Wc)
        cr = max(float(np.max(np.abs(U - Wc))), cons.spread(Wc))
        done = _record(report, Wprev, Wc, cr, pieces.objective(Wc), params, k - 1, extra_check, watch,
                       pieces.objective)
        Wprev = Wc
        if done:
            converged = True
            break
    return _finish(report, pieces, cons, Wc, z, t0, converged, params, k)


def davis_yin_run(pieces: PieceSet, consensus: ConsensusSet | None = None, local_sets=None,
                  params: SchemeParams | None = None, init=None, mixing=None, extra_check=None):
    """Three-operator splitting: consensus projection, local projection, gradient.

    Iterates ``w~ = P_cons(z)``,
    ``w^ = P_loc(2 w~ - z - eta grad J(w~))``, ``z <- z + lambda (w^ - w~)``.

    ``local_sets`` is a callable projecting a ``(p, dim)`` array; by default the
    pieces' own local sets are used.

    Raises
    ------
    StepSizeRejected
        If ``eta`` is not in ``(0, 2/L)`` or the relaxation is outside
        ``(0, 2 - eta L / 2)``.
    NonConvergence, Infeasible
    """
    params = params or SchemeParams()
    cons = _default_consensus(pieces, consensus, params, mixing)
    if local_sets is None:
        if hasattr(pieces, "reset_local"):
            pieces.reset_local()
        proj = pieces.project_local
    else:
        proj = local_sets
    L = lipschitz_estimate(pieces)
    eta = 1.0 / L if params.eta is None else float(params.eta)
    lam = float(params.lambda_relax)
    if not 0.0 < eta < 2.0 / L:
        raise StepSizeRejected(f"Davis-Yin needs eta in (0, 2/L) = (0, {2.0 / L:.4g}), got {eta}")
    if not 0.0 < lam < 2.0 - eta * L / 2.0:
        raise StepSizeRejected(f"relaxation {lam} outside (0, {2.0 - eta * L / 2.0:.4g})")
    report = SolveReport("davis_yin", eta=eta, lambda_relax=lam, lipschitz=L)
    t0 = time.perf_counter()
    z = _initial(pieces, init)
    Wprev = None
    watch = _DivergenceWatch()
    converged = False
    k = 0
    for k in range(1, params.max_iter + 1):
        Wt = cons(z)
        G = pieces.gradient(Wt)
        Wh = proj(2.0 * Wt - z - eta * G)
        z = z + lam * (Wh - Wt)
        cr = max(float(np.max(np.abs(Wh - Wt))), cons.spread(Wt))
        done = _record(report, Wprev, Wt, cr, pieces.objective(Wt), params, k - 1, extra_check, watch,
                       pieces.objective)
        Wprev = Wt
        if done:
            converged = True
            break
    return _finish(report, pieces, cons, Wt, z, t0, converged, params, k)
