"""Column-separable dual problems, primal recovery and stage-2 targets.

Every supported dual is stored in one batched form.  Agent ``i`` holds a packed
state ``w_i = (y_i, mu_i, v_i)`` and the objective piece

    J_i(w_i) = c_i^T w_i + h_i(y_i) + Phi_i(K_i^T w_i)

where ``s_i = K_i^T w_i = A_i^T y + C_i^T mu + gamma G_i v`` collects the
column-block quantities.  For the regularized BP dual ``h_i = 0`` and ``Phi_i``
is the conjugate-type function with ``grad Phi_i(s) = -x_i(s)``, the primal
recovery map.  For the LASSO and BPDN duals ``Phi_i = 0``,
``h_i = ||y||^2/(2p)`` or ``sigma ||y|| / p``, and the nonsmooth part sits in a
per-agent local set described by ``K_i``.

Blocks are padded to the widest block with zero columns so that all agents can
be evaluated with one batched ``einsum``; zero columns contribute nothing.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    Box,
    Bpdn,
    ColumnPartition,
    DecoupledPolyhedron,
    DegenerateDual,
    Free,
    FusedL1,
    GeneralPolyhedron,
    GroupL2,
    L1,
    Lasso,
    NonNeg,
    RegBP,
    UnsupportedCase,
    ValidationError,
)
from .network import StateLayout
from .prox_kernels import (
    EllipsoidProjector,
    NegativePartBallProjector,
    PolyhedronProjector,
    prox_numeric,
)


@dataclass
class DualSolution:
    """Consensual dual point returned by the engines.

    ``mu`` is a vector for a coupled polyhedron and a list of per-agent vectors
    for a decoupled one.  ``v`` is the global fused multiplier of length N-1.
    """

    y: np.ndarray
    mu: np.ndarray | list | None = None
    v: np.ndarray | None = None
    residuals: dict = field(default_factory=dict)
    spread: float = 0.0

    def bpdn_multiplier(self, sigma: float) -> float:
        """Multiplier ``||y|| / (2 sigma)`` of the BPDN ball constraint."""
        return float(np.linalg.norm(self.y) / (2.0 * sigma))


# ---------------------------------------------------------------------------
# Phi kernels: each returns (Phi per agent, x = -grad Phi, curvature)


def _phi_l1(s, lam, lo, hi, alpha):
    """``Phi(s) = alpha/2 theta(-S_lam(s)/alpha)`` for the weighted l1 norm over a box."""
    S = np.where(s >= lam, s - lam, np.where(s <= -lam, s + lam, 0.0))
    t = -S / alpha
    x = np.clip(t, lo, hi)
    r = t - x
    phi = 0.5 * alpha * np.sum(t * t - r * r, axis=-1)
    curv = ((np.abs(s) > lam) & (t > lo) & (t < hi)) / alpha
    return phi, x, curv


def _phi_group(s, lam, alpha):
    """Group norm on a free block: ``x = -(1/alpha) S_{lam,||.||}(s)``."""
    ns = np.linalg.norm(s, axis=-1)
    k = np.where(ns > lam, 1.0 - lam / np.where(ns > 0, ns, 1.0), 0.0)
    x = -(k / alpha)[:, None] * s
    phi = np.maximum(ns - lam, 0.0) ** 2 / (2.0 * alpha)
    return phi, x, (s, ns, k)


def _phi_group_nonneg(s, lam, alpha):
    """Group norm on a nonnegative block: ``x = (1/alpha) S_{lam,||.||}((-s)_+)``."""
    q = np.maximum(-s, 0.0)
    nq = np.linalg.norm(q, axis=-1)
    k = np.where(nq > lam, 1.0 - lam / np.where(nq > 0, nq, 1.0), 0.0)
    x = (k / alpha)[:, None] * q
    phi = np.maximum(nq - lam, 0.0) ** 2 / (2.0 * alpha)
    return phi, x, (q, nq, k)


def _phi_group_box(s, lam, lo, hi, alpha, iters: int = 200):
    """Group norm on a box: ``x = clip(-s/c, lo, hi)`` with ``||x|| (c - alpha) = lam``."""
    absorbed = ((lo == 0) & (s > 0)) | ((hi == 0) & (s < 0))
    s_adm = np.where(absorbed, 0.0, s)
    active = np.linalg.norm(s_adm, axis=-1) > lam
    p = s.shape[0]
    c_lo = np.full(p, alpha)
    c_hi = np.full(p, 2.0 * alpha + 1.0)

    def g(c):
        x = np.clip(-s / c[:, None], lo, hi)
        return np.linalg.norm(x, axis=-1) * (c - alpha)

    for _ in range(200):
        short = active & (g(c_hi) < lam)
        if not short.any():
            break
        c_lo = np.where(short, c_hi, c_lo)
        c_hi = np.where(short, 2.0 * c_hi, c_hi)
    for _ in range(iters):
        mid = 0.5 * (c_lo + c_hi)
        below = g(mid) < lam
        c_lo = np.where(below, mid, c_lo)
        c_hi = np.where(below, c_hi, mid)
        if np.all(c_hi - c_lo <= 1e-15 * c_hi):
            break
    c = 0.5 * (c_lo + c_hi)
    x = np.where(active[:, None], np.clip(-s / c[:, None], lo, hi), 0.0)
    nx = np.linalg.norm(x, axis=-1)
    phi = -(lam * nx + 0.5 * alpha * nx * nx + np.sum(s * x, axis=-1))
    free = active[:, None] & (x > lo) & (x < hi)
    curv = free / c[:, None]
    return phi, x, curv


# ---------------------------------------------------------------------------
# generic batched pieces


class PieceSet:
    """Batched collection of per-agent smooth objective pieces.

    Subclasses implement ``value``, ``gradient`` and optionally ``hessian``.
    Row ``i`` of every ``(p, dim)`` array belongs to agent ``i``.
    """

    layout: StateLayout

    @property
    def p(self) -> int:
        return self.layout.p

    @property
    def dim(self) -> int:
        return self.layout.dim

    def value(self, W):  # pragma: no cover - interface
        raise NotImplementedError

    def gradient(self, W):  # pragma: no cover - interface
        raise NotImplementedError

    def hessian(self, W):
        return None

    def objective(self, W) -> float:
        return float(np.sum(self.value(W)))

    def project_local(self, W):
        """Projection onto the per-agent local sets (identity if there are none)."""
        return W

    @property
    def has_local_sets(self) -> bool:
        return False

    def lipschitz(self) -> np.ndarray:
        """Per-agent Lipschitz constants of the gradient, by power iteration."""
        return _power_lipschitz(self)

    @property
    def pieces(self) -> list["DualPiece"]:
        return [DualPiece(self, i) for i in range(self.p)]

    def prox_bounds(self):
        """Per-coordinate bounds folded into the prox, or ``None``."""
        return None

    @property
    def prox_available(self) -> bool:
        return not self.has_local_sets or self.prox_bounds() is not None

    def prox(self, V, rho: float, W0=None, tol: float = 1e-12, max_iter: int = 100):
        """Row-wise ``argmin_w J_i(w) + ||w - V_i||^2 / (2 rho)`` over the prox bounds.

        Uses projected semismooth Newton (Bertsekas' two-metric variant) with an
        Armijo search along the projection arc when a generalized Hessian is
        available, and the generic BB solver otherwise.
        """
        if not self.prox_available:
            raise UnsupportedCase("prox of pieces with polyhedral local sets is not available; use Davis-Yin")
        V = np.asarray(V, dtype=np.float64)
        W = V.copy() if W0 is None else np.array(W0, dtype=np.float64)
        bounds = self.prox_bounds()
        if bounds is None:
            lo = np.full(V.shape, -np.inf)
            hi = np.full(V.shape, np.inf)
        else:
            lo, hi = bounds
        W = np.clip(W, lo, hi)
        if self.hessian(W) is None:
            if bounds is not None:
                raise UnsupportedCase("bounded prox needs a Hessian")
            out = np.empty_like(V)
            for i, pc in enumerate(self.pieces):
                out[i] = prox_numeric(pc.objective, pc.gradient, rho, V[i], tol=tol, w0=W[i])
            return out
        p, dim = V.shape
        eye = np.eye(dim) / rho
        scale = tol * (1.0 + np.max(np.abs(V)))

        def F(X):
            D = X - V
            return self.value(X) + np.einsum("pd,pd->p", D, D) / (2 * rho)

        FW = F(W)
        for _ in range(max_iter):
            g = self.gradient(W) + (W - V) / rho
            pg = W - np.clip(W - rho * g, lo, hi)
            res = np.max(np.abs(pg), axis=1)
            todo = res > scale
            if not todo.any():
                return W
            eps = np.minimum(res, 1e-3)[:, None]
            act = ((W <= lo + eps) & (g > 0)) | ((W >= hi - eps) & (g < 0))
            H = self.hessian(W) + eye
            if act.any():
                diag = np.einsum("pii->pi", H).copy()
                keep = ~act
                H = H * (keep[:, :, None] & keep[:, None, :])
                H[:, np.arange(dim), np.arange(dim)] = np.where(act, diag, np.einsum("pii->pi", H))
            dW = -np.linalg.solve(H, g[..., None])[..., 0]
            dW[~todo] = 0.0
            t = np.ones(p)
            for _ls in range(40):
                Wn = np.clip(W + t[:, None] * dW, lo, hi)
                Fn = F(Wn)
                dec = np.where(act, g * (Wn - W), t[:, None] * g * dW).sum(axis=1)
                ok = (Fn <= FW + 1e-4 * dec + 1e-15 * np.abs(FW)) | ~todo
                if ok.all():
                    break
                t = np.where(ok, t, 0.5 * t)
            W, FW = Wn, Fn
        return W


@dataclass
class DualPiece:
    """View of agent ``agent``'s piece of a :class:`PieceSet`."""

    form: PieceSet
    agent: int

    def _batch(self, w):
        W = np.zeros((self.form.p, self.form.dim))
        W[self.agent] = w
        return W

    def objective(self, w) -> float:
        sub = self.form.rows([self.agent]) if hasattr(self.form, "rows") else None
        if sub is not None:
            return float(sub.value(np.asarray(w, dtype=np.float64)[None, :])[0])
        return float(self.form.value(self._batch(w))[self.agent])

    def gradient(self, w) -> np.ndarray:
        sub = self.form.rows([self.agent]) if hasattr(self.form, "rows") else None
        if sub is not None:
            return sub.gradient(np.asarray(w, dtype=np.float64)[None, :])[0]
        return self.form.gradient(self._batch(w))[self.agent]

    @property
    def local_set(self) -> str:
        return getattr(self.form, "local_kind", "none")


def dual_gradient(piece: DualPiece, point) -> np.ndarray:
    """Gradient of the smooth part of one agent's piece at ``point``."""
    return piece.gradient(point)


class CallablePieces(PieceSet):
    """Pieces given by per-agent Python callables on a common state dimension.

    Useful for small generic problems; the whole state is treated as a shared
    ``y`` block.
    """

    def __init__(self, values: Sequence[Callable], grads: Sequence[Callable], dim: int,
                 lipschitz: float | None = None):
        if len(values) != len(grads):
            raise ValidationError("need one gradient per objective")
        self.values = list(values)
        self.grads = list(grads)
        self.layout = StateLayout(m=dim, p=len(values))
        self._lip = lipschitz

    def value(self, W):
        return np.array([f(w) for f, w in zip(self.values, W)])

    def gradient(self, W):
        return np.array([g(w) for g, w in zip(self.grads, W)], dtype=np.float64).reshape(W.shape)

    def lipschitz(self):
        if self._lip is not None:
            return np.full(self.p, float(self._lip))
        return _power_lipschitz(self)


def _power_lipschitz(pieces: PieceSet, iters: int = 200, tol: float = 1e-6) -> np.ndarray:
    """Largest curvature per agent by power iteration on gradient differences."""
    p, dim = pieces.p, pieces.dim
    rng = np.random.default_rng(0)
    W0 = np.zeros((p, dim))
    g0 = pieces.gradient(W0)
    v = rng.standard_normal((p, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    eps = 1e-6
    est = np.zeros(p)
    for _ in range(iters):
        Hv = (pieces.gradient(W0 + eps * v) - g0) / eps
        nrm = np.linalg.norm(Hv, axis=1)
        new = nrm.copy()
        v = Hv / np.where(nrm > 0, nrm, 1.0)[:, None]
        if np.all(np.abs(new - est) <= tol * np.maximum(new, 1e-300)):
            est = new
            break
        est = new
    return est


# ---------------------------------------------------------------------------
# dual problems


class DualForm(PieceSet):
    """Batched dual of a RegBP, LASSO or BPDN problem over a column partition.

    Build with :func:`build_dual`.
    """

    kind: str
    problem: object
    partition: ColumnPartition
    K: np.ndarray
    c: np.ndarray
    colmask: np.ndarray

    # -- batching helpers ---------------------------------------------------

    _ROW_ARRAYS = ("K", "c", "colmask", "lam", "lo", "hi", "quad")

    def rows(self, idx) -> "DualForm":
        """Shallow copy restricted to the agents in ``idx``."""
        sub = copy.copy(self)
        for name in self._ROW_ARRAYS:
            arr = getattr(self, name, None)
            if isinstance(arr, np.ndarray) and arr.ndim >= 1 and arr.shape[0] == self.p:
                setattr(sub, name, arr[idx])
        sub._nrows = len(idx)
        return sub

    def _s(self, W):
        return np.einsum("pdn,pd->pn", self.K, W)

    def _phi(self, s):
        k = self.kernel
        if k == "l1":
            return _phi_l1(s, self.lam[:, None], self.lo, self.hi, self.alpha)
        if k == "group":
            return _phi_group(s, self.lam, self.alpha)
        if k == "group_nonneg":
            return _phi_group_nonneg(s, self.lam, self.alpha)
        if k == "group_box":
            return _phi_group_box(s, self.lam, self.lo, self.hi, self.alpha)
        raise UnsupportedCase(k)

    # -- evaluation ---------------------------------------------------------

    def value(self, W):
        W = np.asarray(W, dtype=np.float64)
        out = np.einsum("pd,pd->p", self.c, W)
        m = self.layout.m
        if self.kind == "regbp":
            out = out + self._phi(self._s(W))[0]
        elif self.kind == "lasso":
            out = out + self.quad * np.einsum("pd,pd->p", W[:, :m], W[:, :m]) / 2.0
        else:
            out = out + self.quad * np.linalg.norm(W[:, :m], axis=1)
        return out

    def gradient(self, W):
        W = np.asarray(W, dtype=np.float64)
        g = self.c.copy()
        m = self.layout.m
        if self.kind == "regbp":
            x = self._phi(self._s(W))[1]
            g -= np.einsum("pdn,pn->pd", self.K, x)
        elif self.kind == "lasso":
            g[:, :m] += self.quad[:, None] * W[:, :m]
        else:
            ny = np.linalg.norm(W[:, :m], axis=1)
            safe = np.where(ny > 0, ny, 1.0)
            g[:, :m] += np.where(ny > 0, self.quad / safe, 0.0)[:, None] * W[:, :m]
        return g

    def hessian(self, W):
        W = np.asarray(W, dtype=np.float64)
        rows, dim = W.shape
        m = self.layout.m
        if self.kind == "regbp":
            s = self._s(W)
            _, _, curv = self._phi(s)
            if self.kernel in ("l1", "group_box"):
                return np.einsum("pdn,pn,pen->pde", self.K, curv, self.K)
            vec, nv, k = curv
            on = k > 0
            safe = np.where(nv > 0, nv, 1.0)
            coef = np.where(on, self.lam / safe**3, 0.0)
            if self.kernel == "group":
                KK = np.einsum("pdn,pen->pde", self.K, self.K)
                Ks = np.einsum("pdn,pn->pd", self.K, vec)
            else:
                P = (s < 0).astype(float)
                KK = np.einsum("pdn,pn,pen->pde", self.K, P, self.K)
                Ks = np.einsum("pdn,pn->pd", self.K, vec)
            H = k[:, None, None] * KK + coef[:, None, None] * np.einsum("pd,pe->pde", Ks, Ks)
            return H / self.alpha
        H = np.zeros((rows, dim, dim))
        if self.kind == "lasso":
            H[:, np.arange(m), np.arange(m)] = self.quad[:, None]
            return H
        y = W[:, :m]
        ny = np.linalg.norm(y, axis=1)
        safe = np.where(ny > 0, ny, 1.0)
        P = np.eye(m)[None] - np.einsum("pi,pj->pij", y, y) / safe[:, None, None] ** 2
        H[:, :m, :m] = np.where(ny > 0, self.quad / safe, 0.0)[:, None, None] * P
        return H

    def primal_blocks(self, W) -> np.ndarray:
        """Padded per-agent primal blocks ``x_i(s_i)`` (RegBP only)."""
        if self.kind != "regbp":
            raise UnsupportedCase("primal recovery is only defined for the regularized BP dual")
        return self._phi(self._s(np.asarray(W, dtype=np.float64)))[1] * self.colmask

    # -- local sets -----------------------------------------------------------

    @property
    def has_local_sets(self) -> bool:
        return self.local_kind != "none"

    def project_local(self, W):
        if self.local_kind == "none":
            return W
        out = np.array(W, dtype=np.float64)
        if self.local_kind == "ball_inf":
            sl = self.layout.v
            out[:, sl] = np.clip(out[:, sl], -1.0, 1.0)
            return out
        for i, proj in enumerate(self._local):
            out[i] = proj(out[i])
        return out

    def prox_bounds(self):
        if self.local_kind != "ball_inf":
            return None
        lo = np.full((self.K.shape[0], self.layout.dim), -np.inf)
        hi = np.full_like(lo, np.inf)
        lo[:, self.layout.v] = -1.0
        hi[:, self.layout.v] = 1.0
        return lo, hi

    def reset_local(self):
        """Forget warm starts held by the local projectors."""
        self._local = [f() for f in self._local_factories]

    def lipschitz(self) -> np.ndarray:
        """Per-agent gradient Lipschitz constants.

        RegBP: ``lambda_max(K_i K_i^T)/alpha`` by power iteration.  LASSO:
        ``1/p``.  BPDN: ``sigma/(p r)`` where ``r`` lower-bounds ``||y*||``
        (see :meth:`bpdn_radius`).
        """
        if self.kind == "regbp":
            return _gram_power(self.K) / self.alpha
        if self.kind == "lasso":
            return self.quad.copy()
        return self.quad / self.bpdn_radius()

    def bpdn_radius(self) -> float:
        """Largest ``t`` with ``-t b/||b||`` dual feasible, a lower bound on ``||y*||``.

        The dual objective is at least ``-(||b|| - sigma)||y||`` and at most its
        value at ``-t b/||b||``, which is ``-t(||b|| - sigma)``.
        """
        b = self.problem.b
        bh = b / np.linalg.norm(b)
        m = self.layout.m
        Ab = np.einsum("pdn,d->pn", self.K[:, :m, :], bh)
        if self.reg_kind == "l1":
            if self.nonneg:
                top = np.max(np.maximum(Ab, 0.0), axis=1)
            else:
                top = np.max(np.abs(Ab), axis=1)
        else:
            top = np.linalg.norm(np.maximum(Ab, 0.0) if self.nonneg else Ab, axis=1)
        with np.errstate(divide="ignore"):
            r = np.where(top > 0, self.lam / np.where(top > 0, top, 1.0), np.inf)
        r = float(np.min(r))
        return r if np.isfinite(r) else 1.0

    # -- packing ----------------------------------------------------------------

    def pack(self, y, mu=None, v=None) -> np.ndarray:
        """Replicate a consensual dual point into per-agent packed states."""
        lay = self.layout
        W = np.zeros((lay.p, lay.dim))
        W[:, lay.y] = np.asarray(y, dtype=np.float64)
        if lay.ell:
            if lay.mu_shared:
                W[:, lay.mu] = np.asarray(mu, dtype=np.float64)
            else:
                for i, mi in enumerate(mu):
                    W[i, lay.m:lay.m + len(mi)] = mi
        if lay.vmax:
            v = np.asarray(v, dtype=np.float64)
            idx = lay.v_index
            W[:, lay.v] = np.where(idx >= 0, v[np.maximum(idx, 0)], 0.0)
        return W

    def unpack(self, W) -> DualSolution:
        """Read the consensual dual point off (agent 0's copy of) a packed state."""
        lay = self.layout
        y = W[0, lay.y].copy()
        mu = None
        if lay.ell:
            if lay.mu_shared:
                mu = W[0, lay.mu].copy()
            else:
                mu = [W[i, lay.m:lay.m + n].copy() for i, n in enumerate(self.ell_blocks)]
        v = lay.v_global(W[:, lay.v]) if lay.vmax else None
        return DualSolution(y=y, mu=mu, v=v)


def _gram_power(K, iters: int = 1000, tol: float = 1e-9) -> np.ndarray:
    """``lambda_max(K_i K_i^T)`` per agent by power iteration."""
    p, dim, _ = K.shape
    rng = np.random.default_rng(0)
    v = rng.standard_normal((p, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    est = np.zeros(p)
    for _ in range(iters):
        u = np.einsum("pdn,pd->pn", K, v)
        Hv = np.einsum("pdn,pn->pd", K, u)
        new = np.linalg.norm(Hv, axis=1)
        v = Hv / np.where(new > 0, new, 1.0)[:, None]
        if np.all(np.abs(new - est) <= tol * np.maximum(new, 1e-300)):
            return new
        est = new
    return est


def _fused_v_index(partition: ColumnPartition):
    """Global first-difference coordinates touched by each agent's block."""
    N = partition.N
    idx = []
    for blk in partition.blocks:
        a, b = int(blk[0]), int(blk[-1])
        idx.append(np.arange(max(a - 1, 0), min(b, N - 2) + 1))
    vmax = max(len(ix) for ix in idx)
    out = -np.ones((partition.p, vmax), dtype=np.int64)
    for i, ix in enumerate(idx):
        out[i, :len(ix)] = ix
    return out


def build_dual(problem, partition: ColumnPartition) -> DualForm:
    """Build the batched, column-partitioned dual of ``problem``.

    Supported cases: RegBP with any regularizer and constraint set; LASSO and
    BPDN with any regularizer over ``Free``, ``NonNeg`` or
    ``GeneralPolyhedron``.  LASSO/BPDN with ``NonNeg`` use the reduced
    constraint ``A^T y >= -lam`` without a multiplier.

    Raises
    ------
    UnsupportedCase
        Naming the offending (problem, constraint, regularizer) triple.
    """
    reg = problem.reg
    con = problem.constraint
    A, b = problem.A, problem.b
    m, N = A.shape
    if partition.N != N:
        raise ValidationError(f"partition covers {partition.N} columns, A has {N}")
    triple = f"({type(problem).__name__}, {type(con).__name__}, {type(reg).__name__})"
    if isinstance(problem, RegBP):
        kind = "regbp"
    elif isinstance(problem, Lasso):
        kind = "lasso"
    elif isinstance(problem, Bpdn):
        kind = "bpdn"
    else:
        raise UnsupportedCase(f"unknown problem type {triple}")
    if kind != "regbp" and isinstance(con, (Box, DecoupledPolyhedron)):
        raise UnsupportedCase(f"stage-1 dual not available for {triple}")
    if isinstance(reg, GroupL2) and reg.partition != partition:
        raise UnsupportedCase(f"group blocks must equal the agent partition for {triple}")
    fused = isinstance(reg, FusedL1)
    if fused and not partition.is_contiguous():
        raise UnsupportedCase(f"fused penalty needs contiguous blocks for {triple}")
    if isinstance(con, DecoupledPolyhedron):
        con.check(N, partition)

    p = partition.p
    sizes = partition.sizes
    nmax = int(sizes.max())
    colmask = np.zeros((p, nmax))
    for i, n in enumerate(sizes):
        colmask[i, :n] = 1.0

    # multiplier block
    ell_blocks = None
    if isinstance(con, GeneralPolyhedron):
        ell, mu_shared = con.C.shape[0], True
    elif isinstance(con, DecoupledPolyhedron):
        ell_blocks = [c.shape[0] for c in con.C_blocks]
        ell, mu_shared = max(ell_blocks), False
    else:
        ell, mu_shared = 0, True
    v_index = _fused_v_index(partition) if fused and N > 1 else None
    layout = StateLayout(m=m, ell=ell, mu_shared=mu_shared, v_index=v_index,
                         n_v=max(N - 1, 0) if v_index is not None else 0, p=p)
    dim = layout.dim

    K = np.zeros((p, dim, nmax))
    c = np.zeros((p, dim))
    for i, blk in enumerate(partition.blocks):
        n = blk.size
        K[i, :m, :n] = A[:, blk]
        c[i, :m] = b / p
        if isinstance(con, GeneralPolyhedron):
            K[i, m:m + ell, :n] = con.C[:, blk]
            c[i, m:m + ell] = con.d / p
        elif isinstance(con, DecoupledPolyhedron):
            li = ell_blocks[i]
            K[i, m:m + li, :n] = con.C_blocks[i]
            c[i, m:m + li] = con.d_blocks[i]
        if v_index is not None:
            for k, gk in enumerate(v_index[i]):
                if gk < 0:
                    continue
                # column j of D1^T holds -1 at row gk and +1 at row gk + 1
                for jpos, j in enumerate(blk):
                    if j == gk:
                        K[i, m + ell + k, jpos] = -reg.gamma
                    elif j == gk + 1:
                        K[i, m + ell + k, jpos] = reg.gamma

    form = DualForm()
    form.kind = kind
    form.problem = problem
    form.partition = partition
    form.layout = layout
    form.K = K
    form.c = c
    form.colmask = colmask
    form.ell_blocks = ell_blocks
    form.nonneg = isinstance(con, NonNeg)
    form.reg_kind = "group" if isinstance(reg, GroupL2) else "l1"
    if isinstance(reg, GroupL2):
        form.lam = reg.weights.astype(np.float64).copy()
    else:
        form.lam = np.full(p, reg.lam)
    form.lo = np.full((p, nmax), -np.inf)
    form.hi = np.full((p, nmax), np.inf)
    if isinstance(con, NonNeg):
        form.lo[:] = 0.0
    elif isinstance(con, Box):
        for i, blk in enumerate(partition.blocks):
            form.lo[i, :blk.size] = con.l[blk]
            form.hi[i, :blk.size] = con.u[blk]
    form.quad = np.zeros(p)
    form.local_kind = "none"
    form._local_factories = []

    if kind == "regbp":
        form.alpha = problem.alpha
        if form.reg_kind == "l1":
            form.kernel = "l1"
        elif isinstance(con, NonNeg):
            form.kernel = "group_nonneg"
        elif isinstance(con, Box):
            form.kernel = "group_box"
        else:
            form.kernel = "group"
        if v_index is not None:
            form.local_kind = "ball_inf"
    else:
        form.kernel = None
        form.quad = np.full(p, 1.0 / p if kind == "lasso" else problem.sigma / p)
        form.local_kind, form._local_factories = _stage1_sets(form, partition)
    form.reset_local()
    return form


def _stage1_sets(form: DualForm, partition: ColumnPartition):
    """Local constraint sets of the LASSO/BPDN duals, one projector per agent."""
    lay = form.layout
    factories = []
    kinds = set()
    vsl = lay.v
    for i, blk in enumerate(partition.blocks):
        n = blk.size
        Mt = form.K[i, :, :n].T                       # s = Mt @ w
        lam = float(form.lam[i])
        if form.reg_kind == "l1":
            if form.nonneg:
                G, h = -Mt, np.full(n, lam)
            else:
                G, h = np.vstack([Mt, -Mt]), np.full(2 * n, lam)
            if lay.vmax:
                nv = int(np.sum(lay.v_index[i] >= 0))
                E = np.zeros((nv, lay.dim))
                E[np.arange(nv), vsl.start + np.arange(nv)] = 1.0
                G = np.vstack([G, E, -E])
                h = np.concatenate([h, np.ones(2 * nv)])
            factories.append(lambda G=G, h=h: PolyhedronProjector(G, h))
            kinds.add("polyhedron")
        elif form.nonneg:
            factories.append(lambda Mt=Mt, lam=lam: NegativePartBallProjector(Mt, lam))
            kinds.add("negative_part_ball")
        else:
            factories.append(lambda Mt=Mt, lam=lam: EllipsoidProjector(Mt, lam))
            kinds.add("ellipsoid")
    return kinds.pop(), factories


# ---------------------------------------------------------------------------
# recovery and targets


def recover_primal(problem: RegBP, partition: ColumnPartition, dual: DualSolution) -> list[np.ndarray]:
    """Per-agent primal blocks from a dual solution of a regularized BP problem.

    Each block depends only on the agent's columns and the dual variables it
    holds.
    """
    if not isinstance(problem, RegBP):
        raise UnsupportedCase("primal recovery needs a regularized BP problem")
    form = build_dual(problem, partition)
    W = form.pack(dual.y, dual.mu, dual.v)
    X = form.primal_blocks(W)
    return [X[i, :blk.size].copy() for i, blk in enumerate(partition.blocks)]


def stage2_target(problem, y_star, variant: str = "plain", tol: float = 1e-14):
    """Right-hand side for the stage-2 BP-like problem and the post-scale factor.

    Parameters
    ----------
    problem : Lasso or Bpdn
    y_star : dual solution of the stage-1 problem
    variant : {"plain", "scaled"}

    Returns
    -------
    b_hat : ndarray
    scale : float
        Multiply the stage-2 solution by this to get the primal solution.

    Raises
    ------
    DegenerateDual
        ``y* = 0`` for BPDN, or a vanishing denominator in scaled mode (the
        primal solution is then zero).
    """
    y = np.asarray(y_star, dtype=np.float64)
    b = problem.b
    if variant not in ("plain", "scaled"):
        raise ValidationError(f"unknown variant {variant!r}")
    if isinstance(problem, Lasso):
        if variant == "plain":
            return b + y, 1.0
        lam = problem.reg.lam
        den = float(y @ (y + b))
        if abs(den) <= tol * max(1.0, float(b @ b)):
            raise DegenerateDual("y*^T (y* + b) vanishes; the LASSO solution is zero")
        return -lam * (y + b) / den, -den / lam
    if isinstance(problem, Bpdn):
        ny = np.linalg.norm(y)
        if ny <= tol * max(1.0, np.linalg.norm(b)):
            raise DegenerateDual("BPDN dual solution is zero, contradicting y* != 0")
        shift = problem.sigma * y / ny
        if variant == "plain":
            return b + shift, 1.0
        lam = problem.reg.lam
        den = float(b @ y + problem.sigma * ny)
        if abs(den) <= tol * max(1.0, float(b @ b)):
            raise DegenerateDual("b^T y* + sigma ||y*|| vanishes; the BPDN solution is zero")
        return -lam * (b + shift) / den, -den / lam
    raise UnsupportedCase("stage-2 targets exist only for LASSO and BPDN")
