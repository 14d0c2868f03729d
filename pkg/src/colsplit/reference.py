"""Centralized oracles, a grid-search oracle for tiny problems, and metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .core import (
    Box,
    Bpdn,
    DecoupledPolyhedron,
    Free,
    FusedL1,
    GeneralPolyhedron,
    GroupL2,
    L1,
    Lasso,
    NonConvergence,
    NonNeg,
    RegBP,
    UnsupportedCase,
    ValidationError,
)


class ZeroDenominator(ZeroDivisionError):
    """The reference value is zero, so a relative error is undefined."""


@dataclass
class OracleReport:
    """Centralized solve outcome.

    ``tol_achieved`` is the largest constraint violation of the returned point
    (zero for unconstrained problems) combined with the solver's own stopping
    accuracy.
    """

    objective: float
    solution: np.ndarray | None
    iterations: int
    tol_achieved: float
    solver: str = ""


def relative_error(J_dist: float, J_true: float) -> float:
    """``|J_dist - J_true| / |J_true|``."""
    if J_true == 0:
        raise ZeroDenominator("reference objective is zero")
    return abs(J_dist - J_true) / abs(J_true)


# ---------------------------------------------------------------------------
# instance generators


def random_instance(m: int, N: int, seed: int):
    """Standard normal ``A`` (m x N) and ``b`` (m), drawn in that order."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, N))
    b = rng.standard_normal(m)
    return A, b


def random_bpdn_instance(m: int, N: int, sigma: float, seed: int, max_draws: int = 100):
    """Like :func:`random_instance` but redraws ``b`` until ``||b|| > sigma``."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, N))
    for _ in range(max_draws):
        b = rng.standard_normal(m)
        if np.linalg.norm(b) > sigma:
            return A, b
    raise ValidationError("could not draw b with ||b|| > sigma")


def stacked_identity_instance(m: int, r: int, b):
    """``A = [I_m, ..., I_m]`` with ``r`` copies and the given ``b``."""
    A = np.hstack([np.eye(m)] * r)
    return A, np.asarray(b, dtype=np.float64)


def stacked_identity_ridge_solution(b, r: int, lam: float, alpha: float) -> np.ndarray:
    """Closed-form minimizer of the ridge-regularized LASSO on ``[I, ..., I]``.

    ``min 1/2 ||Ax - b||^2 + lam ||x||_1 + alpha/2 ||x||^2`` has every block
    equal to ``S_lam(b) / (r + alpha)``; for ``b = 1`` this is
    ``(1 - lam) b / (r + alpha)``.  ``alpha = 0`` gives the even-split
    LASSO solution.
    """
    if r < 1 or alpha < 0 or lam <= 0:
        raise ValidationError("need r >= 1, alpha >= 0 and lam > 0")
    b = np.asarray(b, dtype=np.float64)
    return np.tile(np.sign(b) * np.maximum(np.abs(b) - lam, 0.0) / (r + alpha), r)


# ---------------------------------------------------------------------------
# centralized solve


def _penalty(reg, x):
    if isinstance(reg, L1):
        return reg.lam * cp.norm1(x)
    if isinstance(reg, FusedL1):
        return reg.lam * cp.norm1(x) + reg.gamma * cp.norm1(cp.diff(x))
    if isinstance(reg, GroupL2):
        return sum(w * cp.norm(x[b]) for w, b in zip(reg.weights, reg.partition.blocks))
    raise UnsupportedCase(f"unknown regularizer {reg!r}")


def _constraints(con, x, partition=None):
    if isinstance(con, Free):
        return []
    if isinstance(con, NonNeg):
        return [x >= 0]
    if isinstance(con, Box):
        out = []
        lo, hi = np.isfinite(con.l), np.isfinite(con.u)
        if lo.any():
            out.append(x[np.flatnonzero(lo)] >= con.l[lo])
        if hi.any():
            out.append(x[np.flatnonzero(hi)] <= con.u[hi])
        return out
    if isinstance(con, GeneralPolyhedron):
        return [con.C @ x <= con.d]
    if isinstance(con, DecoupledPolyhedron):
        if partition is None:
            raise ValidationError("decoupled polyhedron needs the partition")
        return [c @ x[b] <= d for c, d, b in zip(con.C_blocks, con.d_blocks, partition.blocks)]
    raise UnsupportedCase(f"unknown constraint set {con!r}")


def _violation(problem, x, partition=None) -> float:
    con = problem.constraint
    v = 0.0
    if isinstance(con, NonNeg):
        v = max(v, float(np.max(-x, initial=0.0)))
    elif isinstance(con, Box):
        v = max(v, float(np.max(np.maximum(con.l - x, x - con.u), initial=0.0)))
    elif isinstance(con, GeneralPolyhedron):
        v = max(v, float(np.max(con.C @ x - con.d, initial=0.0)))
    elif isinstance(con, DecoupledPolyhedron):
        for c, d, b in zip(con.C_blocks, con.d_blocks, partition.blocks):
            v = max(v, float(np.max(c @ x[b] - d, initial=0.0)))
    if isinstance(problem, RegBP):
        v = max(v, float(np.max(np.abs(problem.A @ x - problem.b))))
    if isinstance(problem, Bpdn):
        v = max(v, float(np.linalg.norm(problem.A @ x - problem.b) - problem.sigma))
    return v


def solve_centralized(problem, tol: float = 1e-10, partition=None) -> OracleReport:
    """High-accuracy centralized solve with an interior-point conic solver.

    ``partition`` is only needed for decoupled polyhedra.

    Raises
    ------
    NonConvergence
        If the solver fails, or the constraint violation (and, for LASSO
        problems, the relative duality gap) still exceeds ``tol`` after two
        retries with tighter solver tolerances.
    """
    A, b = problem.A, problem.b
    N = A.shape[1]
    if isinstance(problem.constraint, DecoupledPolyhedron) and partition is None:
        reg = problem.reg
        partition = reg.partition if isinstance(reg, GroupL2) else None
    x = cp.Variable(N)
    cons = _constraints(problem.constraint, x, partition)
    pen = _penalty(problem.reg, x)
    if isinstance(problem, RegBP):
        obj = pen + problem.alpha / 2 * cp.sum_squares(x)
        cons.append(A @ x == b)
    elif isinstance(problem, Lasso):
        obj = 0.5 * cp.sum_squares(A @ x - b) + pen
    elif isinstance(problem, Bpdn):
        obj = pen
        cons.append(cp.norm(A @ x - b) <= problem.sigma)
    else:
        raise UnsupportedCase(f"unknown problem {problem!r}")
    prob = cp.Problem(cp.Minimize(obj), cons)
    achieved = np.inf
    # the certified accuracy can trail the solver's own tolerance; tighten and retry
    for inner in (tol, tol * 1e-2, tol * 1e-4):
        settings = dict(tol_gap_abs=inner, tol_gap_rel=inner, tol_feas=inner, tol_ktratio=1e-8, max_iter=500)
        try:
            with warnings.catch_warnings():
                # accuracy is certified below, independently of the solver's own flag
                warnings.filterwarnings("ignore", message="Solution may be inaccurate")
                prob.solve(solver="CLARABEL", **settings)
        except cp.error.SolverError as exc:
            raise NonConvergence(f"centralized solver failed: {exc}") from exc
        if prob.status not in ("optimal", "optimal_inaccurate") or x.value is None:
            raise NonConvergence(f"centralized solver status {prob.status}")
        xv = np.asarray(x.value, dtype=np.float64)
        viol = _violation(problem, xv, partition)
        J = float(problem.objective(xv))
        gap = _lasso_gap(problem, xv)
        achieved = max(viol, 0.0 if gap is None else gap / max(1.0, abs(J)))
        if achieved <= tol:
            iters = int(prob.solver_stats.num_iters or 0)
            return OracleReport(J, xv, iters, achieved, "clarabel")
    raise NonConvergence(f"centralized solve certified only to {achieved:.2e}", 0, achieved)


def _lasso_gap(problem, x):
    """Duality gap of a LASSO point, using the scaled residual as dual point."""
    if not isinstance(problem, Lasso) or not isinstance(problem.constraint, (Free, NonNeg)):
        return None
    reg = problem.reg
    nonneg = isinstance(problem.constraint, NonNeg)
    r = problem.A @ x - problem.b
    s = problem.A.T @ r
    if nonneg:
        s = np.maximum(-s, 0.0)
    if isinstance(reg, L1):
        ratio = np.max(np.abs(s)) / reg.lam
    elif isinstance(reg, GroupL2):
        ratio = max(np.linalg.norm(s[b]) / w for w, b in zip(reg.weights, reg.partition.blocks))
    else:
        return None
    y = r / max(1.0, ratio)
    dual = -0.5 * y @ y - problem.b @ y
    return max(float(problem.objective(x) - dual), 0.0)


def fista_lasso(A, b, lam: float, nonneg: bool = False, tol: float = 1e-10, max_iter: int = 200_000,
                groups=None) -> OracleReport:
    """Accelerated proximal gradient for the l1 (or group) LASSO.

    Stops on a relative duality gap below ``tol``; the dual point is the
    rescaled residual.  ``groups`` is a list of index arrays (with per-group
    weight ``lam``) and switches the penalty to the group norm.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    N = A.shape[1]
    L = np.linalg.norm(A, 2) ** 2
    x = np.zeros(N)
    yk = x.copy()
    t = 1.0

    def prox(v):
        if groups is None:
            out = np.sign(v) * np.maximum(np.abs(v) - lam / L, 0.0)
            return np.maximum(out, 0.0) if nonneg else out
        out = np.zeros_like(v)
        for g in groups:
            vg = np.maximum(v[g], 0.0) if nonneg else v[g]
            n = np.linalg.norm(vg)
            if n > lam / L:
                out[g] = (1 - lam / (L * n)) * vg
        return out

    def pen(v):
        if groups is None:
            return lam * np.abs(v).sum()
        return lam * sum(np.linalg.norm(v[g]) for g in groups)

    def dual_norm(s):
        if groups is None:
            return np.max(np.maximum(-s, 0.0)) if nonneg else np.max(np.abs(s))
        return max(np.linalg.norm(np.maximum(-s[g], 0.0) if nonneg else s[g]) for g in groups)

    gap = np.inf
    for k in range(1, max_iter + 1):
        x_new = prox(yk - A.T @ (A @ yk - b) / L)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        yk = x_new + ((t - 1) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if k % 10 == 0:
            r = A @ x - b
            primal = 0.5 * r @ r + pen(x)
            dn = dual_norm(A.T @ r)
            y = r * min(1.0, lam / dn) if dn > 0 else r
            dual = -0.5 * y @ y - b @ y
            gap = (primal - dual) / max(1.0, abs(primal))
            if gap <= tol:
                return OracleReport(float(primal), x, k, float(gap), "fista")
    raise NonConvergence("FISTA hit its iteration cap", max_iter, float(gap))


# ---------------------------------------------------------------------------
# grid oracle


def _sphere(angles: np.ndarray, m: int) -> np.ndarray:
    """Unit vectors in R^m from ``m - 1`` angle columns (m = 2 or 3)."""
    if m == 2:
        return np.stack([np.cos(angles[:, 0]), np.sin(angles[:, 0])], axis=1)
    phi, th = angles[:, 0], angles[:, 1]
    return np.stack([np.sin(phi) * np.cos(th), np.sin(phi) * np.sin(th), np.cos(phi)], axis=1)


def _level_radius(problem, objective, feasible, pinv):
    """Bound on ``||x*||_inf`` from a feasible reference point, or None."""
    reg = problem.reg
    if isinstance(reg, (L1, FusedL1)):
        lam_min = float(reg.lam)
    else:
        lam_min = float(np.min(reg.weights))
    if not lam_min > 0:
        return None
    con = problem.constraint
    if isinstance(problem, Lasso):
        ref = np.zeros(problem.A.shape[1])
        if isinstance(con, Box):
            ref = np.clip(ref, con.l, con.u)
    else:
        ref = pinv @ problem.b
    ref = ref[None, :]
    if not feasible(ref)[0]:
        return None
    # every other term of the objective is nonnegative, so pen(x*) <= J(x*) <= J(ref)
    return float(objective(ref)[0]) / lam_min


def brute_force_tiny(problem, grid: int = 2001, bound: float | None = None, rounds: int = 8,
                     max_points: int = 4_000_000) -> OracleReport:
    """Grid search with successive refinement, for ``N <= 3``.

    RegBP problems are searched over the null space of ``A`` through a
    particular solution, so the equality constraint holds exactly.  BPDN
    problems with full-row-rank ``A`` are searched on the boundary
    ``||Ax - b|| = sigma`` (where the optimum lies once ``||b|| > sigma``),
    parametrized by angles and the null space.  Other problems are searched
    over ``[-bound, bound]^N``.  Each round zooms the grid around the best
    point; the reported tolerance is the final spacing.

    With ``bound=None`` the search box comes from a level-set bound: any
    minimizer has ``pen(x*) <= J(x_ref)`` for a feasible ``x_ref``, and the
    penalty dominates ``lam_min ||x||_inf``.  The fallback is 5.

    The spacing bounds the error when the objective is smooth near the optimum
    in the search coordinates.  A kink that runs along a curved valley of the
    search coordinates (l1 on the BPDN boundary with ``N = 3``) can leave a
    larger error, since the zoom window may not follow the valley.
    """
    A, b = problem.A, problem.b
    m, N = A.shape
    if N > 3:
        raise ValidationError("brute force is limited to N <= 3")
    _, sv, Vt = np.linalg.svd(A)
    rank = int(np.sum(sv > 1e-12 * max(sv.max(), 1.0)))
    Z = Vt[rank:].T
    pinv = np.linalg.pinv(A)
    starts = [(np.zeros(0), np.zeros(0))]
    if isinstance(problem, RegBP):
        x0 = pinv @ b
        if np.linalg.norm(A @ x0 - b) > 1e-10 * (1 + np.linalg.norm(b)):
            raise ValidationError("Ax = b has no solution")
        n_ang = 0

        def embed(T, sign=1.0):
            return x0 + T @ Z.T
    elif isinstance(problem, Bpdn) and rank == m:
        n_ang = m - 1
        sigma = problem.sigma

        def embed(T, sign=1.0):
            U = _sphere(T[:, :n_ang], m) if n_ang else np.full((T.shape[0], 1), sign)
            return (b + sigma * U) @ pinv.T + T[:, n_ang:] @ Z.T
    else:
        n_ang = 0
        Z = np.eye(N)

        def embed(T, sign=1.0):
            return T @ Z.T
    signs = (-1.0, 1.0) if isinstance(problem, Bpdn) and rank == m == 1 else (1.0,)

    def feasible(X):
        ok = np.ones(X.shape[0], dtype=bool)
        con = problem.constraint
        if isinstance(con, NonNeg):
            ok &= np.all(X >= 0, axis=1)
        elif isinstance(con, Box):
            ok &= np.all((X >= con.l) & (X <= con.u), axis=1)
        elif isinstance(con, GeneralPolyhedron):
            ok &= np.all(X @ con.C.T <= con.d, axis=1)
        elif not isinstance(con, Free):
            raise UnsupportedCase("brute force supports Free, NonNeg, Box and GeneralPolyhedron")
        if isinstance(problem, Bpdn):
            ok &= np.linalg.norm(X @ A.T - b, axis=1) <= problem.sigma * (1 + 1e-12)
        return ok

    def objective(X):
        reg = problem.reg
        if isinstance(reg, L1):
            pen = reg.lam * np.abs(X).sum(axis=1)
        elif isinstance(reg, FusedL1):
            pen = reg.lam * np.abs(X).sum(axis=1) + reg.gamma * np.abs(np.diff(X, axis=1)).sum(axis=1)
        else:
            pen = sum(w * np.linalg.norm(X[:, bb], axis=1) for w, bb in zip(reg.weights, reg.partition.blocks))
        if isinstance(problem, RegBP):
            return pen + 0.5 * problem.alpha * np.einsum("ij,ij->i", X, X)
        if isinstance(problem, Lasso):
            R = X @ A.T - b
            return 0.5 * np.einsum("ij,ij->i", R, R) + pen
        return pen

    if bound is None:
        R = _level_radius(problem, objective, feasible, pinv)
        if R is None:
            bound = 5.0
        elif isinstance(problem, RegBP):
            # |t_i| <= ||x - x0||_2 <= sqrt(N) R + ||x0||
            bound = np.sqrt(N) * R + np.linalg.norm(x0)
        elif n_ang:
            bound = np.sqrt(N) * R + np.linalg.norm(pinv, 2) * (np.linalg.norm(b) + sigma)
        else:
            bound = R
        bound = 1.01 * bound + 1e-12
    k = n_ang + Z.shape[1]
    ang_center = np.full(n_ang, np.pi / 2) if n_ang == 2 else np.zeros(n_ang)
    ang_half = np.array([np.pi / 2, np.pi])[:n_ang] if n_ang == 2 else np.full(n_ang, np.pi)
    center0 = np.concatenate([ang_center, np.zeros(Z.shape[1])])
    half0 = np.concatenate([ang_half, np.full(Z.shape[1], bound)])
    if k == 0:
        best = None
        for sg in signs:
            X = embed(np.zeros((1, 0)), sg)
            f = objective(X)
            f[~feasible(X)] = np.inf
            if np.isfinite(f[0]) and (best is None or f[0] < best[0]):
                best = (float(f[0]), X[0])
        if best is None:
            raise NonConvergence("no feasible grid point found")
        return OracleReport(best[0], best[1], len(signs), 0.0, "grid")
    per_axis = min(grid, int(max_points ** (1.0 / k)))
    per_axis += (per_axis + 1) % 2      # odd, so the centre is on the grid
    best_x, best_f = None, np.inf
    evaluated = 0
    spacing = np.inf
    for sg in signs:
        center, half = center0.copy(), half0.copy()
        found = None
        for _ in range(rounds):
            if np.max(half) / (per_axis - 1) < 1e-13 * (1.0 + float(np.max(np.abs(center)))):
                break
            axes = [np.linspace(c - h, c + h, per_axis) for c, h in zip(center, half)]
            step = 2.0 * half / (per_axis - 1)
            T = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
            X = embed(T, sg)
            f = objective(X)
            f[~feasible(X)] = np.inf
            evaluated += T.shape[0]
            j = int(np.argmin(f))
            if np.isfinite(f[j]) and (found is None or f[j] <= found[0]):
                found, center = (float(f[j]), X[j]), T[j]
            half = 10.0 * step
        if found is not None and found[0] < best_f:
            best_f, best_x = found
            spacing = float(np.max(step))
    if best_x is None:
        raise NonConvergence("no feasible grid point found")
    return OracleReport(best_f, best_x, evaluated, spacing, "grid")
