"""Shrinkage kernels, theta functions and Euclidean projections."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import NonConvergence, ValidationError


@dataclass(frozen=True)
class Interval:
    """Closed interval ``[l, u]`` containing 0; either end may be infinite."""

    l: float = -np.inf
    u: float = np.inf

    def __post_init__(self):
        if not (self.l <= 0 <= self.u) or not self.l < self.u:
            raise ValidationError(f"interval [{self.l}, {self.u}] must satisfy l <= 0 <= u, l < u")


def soft_threshold(s, kappa):
    """Componentwise soft thresholding ``sign(s) max(|s| - kappa, 0)``."""
    kappa = np.asarray(kappa, dtype=np.float64)
    if np.any(kappa <= 0):
        raise ValidationError("threshold must be positive")
    s = np.asarray(s, dtype=np.float64)
    out = np.where(s >= kappa, s - kappa, np.where(s <= -kappa, s + kappa, 0.0))
    return out if out.ndim else float(out)


def group_shrink(z, kappa: float = 1.0) -> np.ndarray:
    """Euclidean-norm shrinkage ``(1 - kappa/||z||)_+ z`` (``0`` inside the ball)."""
    z = np.asarray(z, dtype=np.float64)
    nz = np.linalg.norm(z)
    if nz <= kappa:
        return np.zeros_like(z)
    return (1.0 - kappa / nz) * z


def _bounds(box):
    if isinstance(box, Interval):
        return box.l, box.u
    l, u = box
    return l, u


def theta(t, box):
    """``t^2 - dist(t, [l, u])^2``.  Convex and C^1, equals ``t^2`` on the box."""
    l, u = _bounds(box)
    t = np.asarray(t, dtype=np.float64)
    r = t - np.clip(t, l, u)
    out = t * t - r * r
    return out if out.ndim else float(out)


def theta_grad(t, box):
    """Derivative of :func:`theta`, i.e. ``2 * clip(t, l, u)``."""
    l, u = _bounds(box)
    out = 2.0 * np.clip(np.asarray(t, dtype=np.float64), l, u)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# simple projections


def project_box(z, lower, upper) -> np.ndarray:
    return np.clip(np.asarray(z, dtype=np.float64), lower, upper)


def project_ball_inf(z, radius: float = 1.0) -> np.ndarray:
    if radius <= 0:
        raise ValidationError("radius must be positive")
    return np.clip(np.asarray(z, dtype=np.float64), -radius, radius)


def project_ball_2(z, radius: float = 1.0) -> np.ndarray:
    if radius <= 0:
        raise ValidationError("radius must be positive")
    z = np.asarray(z, dtype=np.float64)
    nz = np.linalg.norm(z)
    return z if nz <= radius else z * (radius / nz)


def project_nonneg(z) -> np.ndarray:
    return np.maximum(np.asarray(z, dtype=np.float64), 0.0)


def project(z, kind: str, radius: float = 1.0, intervals=None) -> np.ndarray:
    """Euclidean projection onto one of the elementary sets.

    Parameters
    ----------
    kind : {"box", "ball_inf", "ball_2", "nonneg"}
    radius : float
        Radius for the balls.
    intervals : sequence of :class:`Interval` or ``(l, u)`` pairs
        Per-coordinate bounds for ``kind="box"``.
    """
    if kind == "box":
        if intervals is None:
            raise ValidationError("box projection needs intervals")
        lo = np.array([_bounds(iv)[0] for iv in intervals], dtype=np.float64)
        hi = np.array([_bounds(iv)[1] for iv in intervals], dtype=np.float64)
        return project_box(z, lo, hi)
    if kind == "ball_inf":
        return project_ball_inf(z, radius)
    if kind == "ball_2":
        return project_ball_2(z, radius)
    if kind == "nonneg":
        return project_nonneg(z)
    raise ValidationError(f"unknown set kind {kind!r}")


# ---------------------------------------------------------------------------
# polyhedra


def _equality_projection(C, d, z, active):
    """Project ``z`` onto ``{x : C_S x = d_S}``; returns (x, multipliers)."""
    if len(active) == 0:
        return z.copy(), np.zeros(0)
    CS = C[active]
    nu = np.linalg.lstsq(CS @ CS.T, CS @ z - d[active], rcond=None)[0]
    return z - CS.T @ nu, nu


def _kkt_ok(C, d, x, nu, active, tol):
    scale = 1.0 + np.max(np.abs(d), initial=0.0)
    if np.any(C @ x > d + tol * scale):
        return False
    if len(active) == 0:
        return True
    return bool(np.all(np.abs(C[active] @ x - d[active]) <= tol * scale) and nu.min() >= -tol)


def project_polyhedron(C, d, z, tol: float = 1e-10, max_iter: int | None = None,
                       method: str = "dykstra") -> np.ndarray:
    """Euclidean projection of ``z`` onto ``{x : C x <= d}``.

    The default method runs Dykstra's alternating projections over the
    halfspaces, then polishes by solving the equality-constrained projection on
    the constraints Dykstra found active.  ``method="active_set"`` runs the
    primal active-set method directly, starting from a feasible point found by
    Dykstra.

    Raises
    ------
    NonConvergence
        If Dykstra hits ``max_iter`` sweeps (default ``10 * rows * dim``) without
        producing a point within ``tol`` of the polyhedron.
    """
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    ell, n = C.shape
    if d.size != ell or z.size != n:
        raise ValidationError("shape mismatch in polyhedron projection")
    if np.all(C @ z <= d):
        return z.copy()
    if max_iter is None:
        max_iter = max(10 * ell * n, 50)
    norms2 = np.einsum("ij,ij->i", C, C)
    keep = norms2 > 0
    if np.any(~keep & (d < 0)):
        raise ValidationError("polyhedron is empty (zero row with negative right-hand side)")

    x = z.copy()
    incr = np.zeros((ell, n))
    scale = 1.0 + np.max(np.abs(d), initial=0.0)
    done = False
    for sweep in range(max_iter):
        x_old = x.copy()
        incr_old = incr.copy()
        for j in np.flatnonzero(keep):
            u = x + incr[j]
            viol = C[j] @ u - d[j]
            x = u - (viol / norms2[j]) * C[j] if viol > 0 else u
            incr[j] = u - x
        moved = max(np.max(np.abs(x - x_old)), np.max(np.abs(incr - incr_old)))
        if moved <= tol * 1e-2 and np.all(C @ x <= d + tol * scale):
            done = True
            break
    # multipliers carried by the increments
    nu = np.einsum("ij,ij->i", incr, C) / np.where(keep, norms2, 1.0)
    active = [j for j in range(ell) if keep[j] and nu[j] > tol]
    if method == "active_set" and np.all(C @ x <= d + 1e-10 * scale):
        try:
            return PolyhedronProjector(C, d, x0=x)(z)
        except NonConvergence:
            pass
    xp, nup = _equality_projection(C, d, z, active)
    if _kkt_ok(C, d, xp, nup, active, tol):
        return xp
    # slow Dykstra phases (nearly parallel rows): try subsets of the nearest rows
    gap = d - C @ x
    near = [j for j in np.argsort(gap) if keep[j]][:12]
    best, best_dist = None, np.inf
    for k in range(1, len(near) + 1):
        for S in itertools.combinations(sorted(near), k):
            xs, nus = _equality_projection(C, d, z, list(S))
            dist = float(np.linalg.norm(xs - z))
            if dist < best_dist and _kkt_ok(C, d, xs, nus, list(S), tol):
                best, best_dist = xs, dist
    if best is not None:
        return best
    if done and np.all(C @ x <= d + tol * scale):
        return x
    raise NonConvergence("Dykstra projection did not converge", sweep + 1,
                         float(np.max(C @ x - d)))


class PolyhedronProjector:
    """Warm-started primal active-set projection onto ``{x : G x <= h}``.

    Each call starts from the previous answer and its active set, which is
    feasible for the same polyhedron.  When successive points are close, one or
    two active-set changes suffice.  The first call starts from ``x0``, which
    must be feasible (zero by default).
    """

    def __init__(self, G, h, x0=None, max_iter: int = 500, tol: float = 1e-12):
        self.G = np.asarray(G, dtype=np.float64)
        self.h = np.asarray(h, dtype=np.float64)
        n = self.G.shape[1]
        self.x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
        if np.any(self.G @ self.x > self.h + 1e-9 * (1 + np.abs(self.h))):
            raise ValidationError("warm start is not feasible")
        self.active: list[int] = []
        self.max_iter = max_iter
        self.tol = tol
        self.inner_iterations = 0

    def __call__(self, z) -> np.ndarray:
        G, h = self.G, self.h
        z = np.asarray(z, dtype=np.float64)
        x = self.x
        W = list(self.active)
        zs = 1.0 + np.max(np.abs(z))
        for it in range(self.max_iter):
            r = z - x
            if W:
                GW = G[W]
                nu = np.linalg.lstsq(GW @ GW.T, GW @ r, rcond=None)[0]
                step_dir = r - GW.T @ nu
            else:
                nu = np.zeros(0)
                step_dir = r
            if np.max(np.abs(step_dir)) <= self.tol * zs:
                if not W or nu.min() >= -self.tol * zs:
                    self.x, self.active = x, W
                    self.inner_iterations += it
                    return x.copy()
                W.pop(int(np.argmin(nu)))
                continue
            Gd = G @ step_dir
            slack = h - G @ x
            mask = Gd > 1e-14 * zs
            if W:
                mask[W] = False
            step = 1.0
            block = -1
            if mask.any():
                ratios = np.full(Gd.shape, np.inf)
                ratios[mask] = slack[mask] / Gd[mask]
                j = int(np.argmin(ratios))
                if ratios[j] < 1.0:
                    step = max(ratios[j], 0.0)
                    block = j
            x = x + step * step_dir
            if block >= 0:
                W.append(block)
        raise NonConvergence("active-set projection hit its iteration cap", self.max_iter)


class EllipsoidProjector:
    """Projection onto ``{w : ||M w||_2 <= r}`` via the secular equation.

    With ``M^T M = V diag(e) V^T`` the projection is
    ``V diag(1/(1 + t e)) V^T z`` for the unique ``t >= 0`` making the
    constraint tight.  ``t`` is found by Newton on ``1/r - 1/||M w(t)||``,
    which is concave and increasing, so Newton from ``t = 0`` is monotone.
    """

    def __init__(self, M, radius: float):
        M = np.atleast_2d(np.asarray(M, dtype=np.float64))
        self.M = M
        self.radius = float(radius)
        e, V = np.linalg.eigh(M.T @ M)
        self.e = np.maximum(e, 0.0)
        self.V = V

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        r = self.radius
        if np.linalg.norm(self.M @ z) <= r:
            return z.copy()
        zh = self.V.T @ z
        e = self.e
        c2 = e * zh * zh
        t = 0.0
        for _ in range(100):
            q = 1.0 + t * e
            nrm2 = np.sum(c2 / q**2)
            nrm = np.sqrt(nrm2)
            phi = 1.0 / r - 1.0 / nrm
            if abs(phi) * r <= 1e-15:
                break
            dnrm2 = -2.0 * np.sum(c2 * e / q**3)
            dphi = 0.5 * dnrm2 / nrm**3
            t_new = t - phi / dphi
            if t_new <= t:
                break
            t = t_new
        return self.V @ (zh / (1.0 + t * e))


class NegativePartBallProjector:
    """Projection onto ``{w : ||min(M w, 0)||_2 <= r}``.

    Penalty path: ``w(t) = argmin 1/2||w - z||^2 + t/2 ||min(Mw, 0)||^2`` is
    computed by semismooth Newton, and ``t`` is located by bisection on the
    monotone map ``t -> ||min(M w(t), 0)||``.
    """

    def __init__(self, M, radius: float, tol: float = 1e-12):
        self.M = np.atleast_2d(np.asarray(M, dtype=np.float64))
        self.radius = float(radius)
        self.tol = tol

    def _neg_norm(self, w):
        return np.linalg.norm(np.minimum(self.M @ w, 0.0))

    def _penalized(self, z, t, w0):
        M = self.M
        w = w0.copy()
        n = z.size
        for _ in range(100):
            s = M @ w
            act = s < 0
            g = w - z + t * M.T @ np.where(act, s, 0.0)
            if np.max(np.abs(g)) <= 1e-14 * (1 + np.max(np.abs(z))):
                break
            Ma = M[act]
            H = np.eye(n) + t * Ma.T @ Ma
            w = w - np.linalg.solve(H, g)
        return w

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        r = self.radius
        if self._neg_norm(z) <= r:
            return z.copy()
        lo, hi = 0.0, 1.0
        w = z.copy()
        while True:
            w = self._penalized(z, hi, w)
            if self._neg_norm(w) <= r:
                break
            lo, hi = hi, 2.0 * hi
            if hi > 1e16:
                raise NonConvergence("penalty bracket failed in negative-part ball projection")
        w_hi = w
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            w_mid = self._penalized(z, mid, w_hi)
            if self._neg_norm(w_mid) <= r:
                hi, w_hi = mid, w_mid
            else:
                lo = mid
            if hi - lo <= self.tol * max(hi, 1.0):
                break
        return w_hi


# ---------------------------------------------------------------------------
# numeric prox


def prox_numeric(f: Callable, grad: Callable, rho: float, z, tol: float = 1e-10,
                 max_iter: int = 5000, w0=None) -> np.ndarray:
    """``argmin_w f(w) + ||w - z||^2 / (2 rho)`` for smooth convex ``f``.

    Gradient descent with Barzilai-Borwein steps and Armijo backtracking.
    Stops when ``||w - z + rho * grad(w)||_2 <= tol``.
    """
    if rho <= 0:
        raise ValidationError("rho must be positive")
    z = np.asarray(z, dtype=np.float64)
    w = z.copy() if w0 is None else np.asarray(w0, dtype=np.float64).copy()

    def F(v):
        return f(v) + np.dot(v - z, v - z) / (2 * rho)

    def G(v):
        return grad(v) + (v - z) / rho

    g = G(w)
    Fw = F(w)
    step = rho
    for it in range(max_iter):
        if rho * np.linalg.norm(g) <= tol:
            return w
        t = step
        while True:
            w_new = w - t * g
            F_new = F(w_new)
            if F_new <= Fw - 1e-4 * t * np.dot(g, g) or t < 1e-20:
                break
            t *= 0.5
        g_new = G(w_new)
        s = w_new - w
        yv = g_new - g
        sy = np.dot(s, yv)
        step = np.dot(s, s) / sy if sy > 0 else rho
        w, g, Fw = w_new, g_new, F_new
    res = rho * np.linalg.norm(g)
    if res <= tol:
        return w
    raise NonConvergence("prox_numeric hit its iteration cap", max_iter, float(res))
