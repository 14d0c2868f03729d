"""Data model shared by every module: partitions, constraints, regularizers, problems.

Indices are 0-based everywhere inside the package.  Configuration files use
1-based indices and are converted in :mod:`colsplit.cli`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np


class ValidationError(ValueError):
    """An input violates a documented invariant."""


class UnsupportedCase(ValueError):
    """The (problem, constraint, regularizer) combination is not implemented."""


class NonConvergence(RuntimeError):
    """An iterative method hit its iteration cap.

    Attributes
    ----------
    iterations : int
    residual : float
        Last residual reached before giving up.
    """

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan"), report=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.report = report


class Infeasible(RuntimeError):
    """The dual objective diverged, which is evidence of primal infeasibility."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class DegenerateDual(ValueError):
    """A dual solution cannot be turned into a stage-2 target."""


class TrivialSolution(ValidationError):
    """The problem has the zero vector as its solution and needs no solve.

    The zero solution is carried in ``solution``.
    """

    def __init__(self, message: str, n: int):
        super().__init__(message)
        self.solution = np.zeros(n)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array."""
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    return arr


def as_vector(v, name: str = "vector", allow_inf: bool = False) -> np.ndarray:
    arr = np.array(v, dtype=np.float64).reshape(-1)
    bad = np.isnan(arr) if allow_inf else ~np.isfinite(arr)
    if bad.any():
        raise ValidationError(f"{name} has non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True, eq=False)
class ColumnPartition:
    """Disjoint column blocks, one per agent.

    Parameters
    ----------
    blocks : sequence of integer arrays
        0-based column indices owned by each agent.  Order inside a block is
        preserved.
    """

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(np.array(b, dtype=np.int64).reshape(-1) for b in self.blocks)
        if len(blocks) == 0:
            raise ValidationError("partition needs at least one block")
        if any(b.size == 0 for b in blocks):
            raise ValidationError("every block must be nonempty")
        allidx = np.concatenate(blocks)
        n = allidx.size
        if np.any(np.sort(allidx) != np.arange(n)):
            raise ValidationError("blocks must be disjoint and cover 0..N-1 exactly")
        for b in blocks:
            b.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @property
    def p(self) -> int:
        return len(self.blocks)

    @property
    def N(self) -> int:
        return int(sum(b.size for b in self.blocks))

    @property
    def sizes(self) -> np.ndarray:
        return np.array([b.size for b in self.blocks])

    @property
    def owner(self) -> np.ndarray:
        """Agent index owning each column."""
        own = np.empty(self.N, dtype=np.int64)
        for i, b in enumerate(self.blocks):
            own[b] = i
        return own

    def is_contiguous(self) -> bool:
        """True when blocks are ascending runs covering 0..N-1 in order."""
        start = 0
        for b in self.blocks:
            if np.any(b != np.arange(start, start + b.size)):
                return False
            start += b.size
        return True

    def split(self, x) -> list[np.ndarray]:
        x = np.asarray(x)
        return [x[b] for b in self.blocks]

    def assemble(self, x_blocks: Sequence[np.ndarray]) -> np.ndarray:
        if len(x_blocks) != self.p:
            raise ValidationError(f"expected {self.p} blocks, got {len(x_blocks)}")
        x = np.zeros(self.N)
        for b, xb in zip(self.blocks, x_blocks):
            xb = np.asarray(xb, dtype=np.float64).reshape(-1)
            if xb.size != b.size:
                raise ValidationError("block length does not match partition")
            x[b] = xb
        return x

    def __eq__(self, other):
        if not isinstance(other, ColumnPartition) or other.p != self.p:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks))

    def __hash__(self):
        return hash(tuple(tuple(b.tolist()) for b in self.blocks))


def make_partition(N: int, p: int, strategy="even") -> ColumnPartition:
    """Build a column partition of ``N`` columns over ``p`` agents.

    ``strategy="even"`` gives contiguous ascending blocks whose sizes differ by
    at most one (larger blocks first).  Any other value is read as an explicit
    list of 0-based index lists.
    """
    if p < 1 or N < 1:
        raise ValidationError("need N >= 1 and p >= 1")
    if p > N:
        raise ValidationError(f"p={p} exceeds N={N}")
    if isinstance(strategy, str):
        if strategy != "even":
            raise ValidationError(f"unknown partition strategy {strategy!r}")
        q, r = divmod(N, p)
        sizes = [q + 1] * r + [q] * (p - r)
        edges = np.concatenate([[0], np.cumsum(sizes)])
        return ColumnPartition(tuple(np.arange(edges[i], edges[i + 1]) for i in range(p)))
    blocks = list(strategy)
    if len(blocks) != p:
        raise ValidationError(f"explicit partition has {len(blocks)} blocks, expected {p}")
    part = ColumnPartition(tuple(blocks))
    if part.N != N:
        raise ValidationError(f"explicit partition covers {part.N} columns, expected {N}")
    return part


def blocked_matvec(A, partition: ColumnPartition, x_blocks: Sequence) -> np.ndarray:
    """Compute ``A x`` as the sum of per-agent products ``A[:, I_i] x_i``."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape[1] != partition.N:
        raise ValidationError(f"A has {A.shape[1]} columns, partition covers {partition.N}")
    if len(x_blocks) != partition.p:
        raise ValidationError("number of blocks does not match partition")
    out = np.zeros(A.shape[0])
    for b, xb in zip(partition.blocks, x_blocks):
        xb = np.asarray(xb, dtype=np.float64).reshape(-1)
        if xb.size != b.size:
            raise ValidationError("block length does not match partition")
        out += A[:, b] @ xb
    return out


def diff1(x: np.ndarray) -> np.ndarray:
    """First-order differences ``(D1 x)_j = x_{j+1} - x_j``, applied matrix-free."""
    return np.diff(x)


def diff1_T(v: np.ndarray, N: int | None = None) -> np.ndarray:
    """Adjoint of :func:`diff1`."""
    v = np.asarray(v, dtype=np.float64)
    N = v.size + 1 if N is None else N
    out = np.zeros(N)
    out[1:] += v
    out[:-1] -= v
    return out


def diff1_matrix(N: int) -> np.ndarray:
    """Dense (N-1) x N first-difference matrix, for tests and oracles only."""
    D = np.zeros((N - 1, N))
    idx = np.arange(N - 1)
    D[idx, idx] = -1.0
    D[idx, idx + 1] = 1.0
    return D


# ---------------------------------------------------------------------------
# constraint sets


@dataclass(frozen=True)
class Free:
    """No constraint, C = R^N."""

    is_cone = True

    def check(self, N: int, partition: ColumnPartition | None = None):
        pass

    def contains(self, x, tol=0.0) -> bool:
        return True


@dataclass(frozen=True)
class NonNeg:
    """Nonnegative orthant."""

    is_cone = True

    def check(self, N: int, partition: ColumnPartition | None = None):
        pass

    def contains(self, x, tol=0.0) -> bool:
        return bool(np.all(np.asarray(x) >= -tol))


@dataclass(frozen=True, eq=False)
class Box:
    """Box ``[l, u]`` with ``l <= 0 <= u`` and ``l < u``; infinite bounds allowed."""

    l: np.ndarray
    u: np.ndarray
    is_cone = False

    def __post_init__(self):
        l = as_vector(self.l, "l", allow_inf=True)
        u = as_vector(self.u, "u", allow_inf=True)
        if l.shape != u.shape:
            raise ValidationError("box bounds differ in length")
        if np.any(l > 0) or np.any(u < 0):
            raise ValidationError("box must contain the origin (l <= 0 <= u)")
        if np.any(l >= u):
            raise ValidationError("box needs l < u componentwise")
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "u", u)

    def check(self, N: int, partition=None):
        if self.l.size != N:
            raise ValidationError(f"box has {self.l.size} bounds, problem has N={N}")

    def contains(self, x, tol=0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.l - tol) and np.all(x <= self.u + tol))


@dataclass(frozen=True, eq=False)
class GeneralPolyhedron:
    """Coupled polyhedron ``{x : C x <= d}``."""

    C: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        C = as_matrix(self.C, "C")
        d = as_vector(self.d, "d")
        if C.shape[0] != d.size:
            raise ValidationError("C and d disagree on the number of rows")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)

    @property
    def is_cone(self) -> bool:
        return bool(np.all(self.d == 0))

    def check(self, N: int, partition=None):
        if self.C.shape[1] != N:
            raise ValidationError(f"C has {self.C.shape[1]} columns, problem has N={N}")

    def contains(self, x, tol=0.0) -> bool:
        return bool(np.all(self.C @ np.asarray(x) <= self.d + tol))


@dataclass(frozen=True, eq=False)
class DecoupledPolyhedron:
    """Product of per-block polyhedra ``C_i x_{I_i} <= d_i``.

    Parameters
    ----------
    C_blocks, d_blocks : sequences
        One matrix/vector pair per agent, in partition order.
    """

    C_blocks: tuple
    d_blocks: tuple

    def __post_init__(self):
        Cs = tuple(as_matrix(c, "C_i") for c in self.C_blocks)
        ds = tuple(as_vector(d, "d_i") for d in self.d_blocks)
        if len(Cs) != len(ds):
            raise ValidationError("need one d_i per C_i")
        for c, d in zip(Cs, ds):
            if c.shape[0] != d.size:
                raise ValidationError("C_i and d_i disagree on rows")
        object.__setattr__(self, "C_blocks", Cs)
        object.__setattr__(self, "d_blocks", ds)

    @property
    def is_cone(self) -> bool:
        return all(np.all(d == 0) for d in self.d_blocks)

    def check(self, N: int, partition: ColumnPartition | None = None):
        if partition is None:
            return
        if len(self.C_blocks) != partition.p:
            raise ValidationError(f"{len(self.C_blocks)} polyhedron blocks for {partition.p} agents")
        for c, b in zip(self.C_blocks, partition.blocks):
            if c.shape[1] != b.size:
                raise ValidationError("polyhedron block width does not match partition block")

    def contains(self, x, tol=0.0, partition: ColumnPartition | None = None) -> bool:
        if partition is None:
            raise ValidationError("decoupled polyhedron membership needs the partition")
        xs = partition.split(x)
        return all(np.all(c @ xb <= d + tol) for c, d, xb in zip(self.C_blocks, self.d_blocks, xs))


ConstraintSet = Union[Free, NonNeg, Box, GeneralPolyhedron, DecoupledPolyhedron]


# ---------------------------------------------------------------------------
# regularizers


def _positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be a positive number, got {value}")
    return value


@dataclass(frozen=True)
class L1:
    """``lam * ||x||_1``."""

    lam: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lam", _positive(self.lam, "lam"))

    def value(self, x) -> float:
        return self.lam * float(np.abs(x).sum())


@dataclass(frozen=True)
class FusedL1:
    """``lam * ||x||_1 + gamma * ||D1 x||_1``."""

    lam: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lam", _positive(self.lam, "lam"))
        object.__setattr__(self, "gamma", _positive(self.gamma, "gamma"))

    def value(self, x) -> float:
        x = np.asarray(x)
        return self.lam * float(np.abs(x).sum()) + self.gamma * float(np.abs(diff1(x)).sum())


@dataclass(frozen=True, eq=False)
class GroupL2:
    """``sum_i w_i ||x_{I_i}||_2`` over the blocks of ``partition``."""

    partition: ColumnPartition
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        w = np.ones(self.partition.p) if self.weights is None else as_vector(self.weights, "weights")
        if w.size == 1 and self.partition.p > 1:
            w = np.full(self.partition.p, float(w[0]))
        if w.size != self.partition.p:
            raise ValidationError("need one group weight per block")
        if np.any(w <= 0):
            raise ValidationError("group weights must be positive")
        object.__setattr__(self, "weights", w)

    def value(self, x) -> float:
        x = np.asarray(x)
        return float(sum(w * np.linalg.norm(x[b]) for w, b in zip(self.weights, self.partition.blocks)))


Regularizer = Union[L1, FusedL1, GroupL2]


# ---------------------------------------------------------------------------
# problems


def _check_common(A, b, reg, constraint):
    A = as_matrix(A, "A")
    b = as_vector(b, "b")
    if b.size != A.shape[0]:
        raise ValidationError(f"b has length {b.size}, A has {A.shape[0]} rows")
    if not isinstance(reg, (L1, FusedL1, GroupL2)):
        raise ValidationError(f"unknown regularizer {reg!r}")
    if not isinstance(constraint, (Free, NonNeg, Box, GeneralPolyhedron, DecoupledPolyhedron)):
        raise ValidationError(f"unknown constraint set {constraint!r}")
    N = A.shape[1]
    if isinstance(reg, GroupL2) and reg.partition.N != N:
        raise ValidationError("group partition does not cover the columns of A")
    part = reg.partition if isinstance(reg, GroupL2) else None
    constraint.check(N, part)
    return A, b


@dataclass(frozen=True, eq=False)
class RegBP:
    """``min ||Ex||_* + alpha/2 ||x||^2  s.t.  Ax = b, x in C``."""

    A: np.ndarray
    b: np.ndarray
    alpha: float
    reg: Regularizer = field(default_factory=L1)
    constraint: ConstraintSet = field(default_factory=Free)

    def __post_init__(self):
        A, b = _check_common(self.A, self.b, self.reg, self.constraint)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "alpha", _positive(self.alpha, "alpha"))

    @property
    def shape(self):
        return self.A.shape

    def objective(self, x) -> float:
        x = np.asarray(x)
        return self.reg.value(x) + 0.5 * self.alpha * float(x @ x)


@dataclass(frozen=True, eq=False)
class Lasso:
    """``min 1/2 ||Ax - b||^2 + ||Ex||_*  s.t.  x in C``."""

    A: np.ndarray
    b: np.ndarray
    reg: Regularizer = field(default_factory=L1)
    constraint: ConstraintSet = field(default_factory=Free)

    def __post_init__(self):
        A, b = _check_common(self.A, self.b, self.reg, self.constraint)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def shape(self):
        return self.A.shape

    def objective(self, x) -> float:
        x = np.asarray(x)
        r = self.A @ x - self.b
        return 0.5 * float(r @ r) + self.reg.value(x)


@dataclass(frozen=True, eq=False)
class Bpdn:
    """``min ||Ex||_*  s.t.  ||Ax - b||_2 <= sigma, x in C``.

    Raises :class:`TrivialSolution` when ``||b|| <= sigma``, in which case the
    zero vector solves the problem.
    """

    A: np.ndarray
    b: np.ndarray
    sigma: float
    reg: Regularizer = field(default_factory=L1)
    constraint: ConstraintSet = field(default_factory=Free)

    def __post_init__(self):
        A, b = _check_common(self.A, self.b, self.reg, self.constraint)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        sigma = _positive(self.sigma, "sigma")
        object.__setattr__(self, "sigma", sigma)
        if np.linalg.norm(b) <= sigma:
            raise TrivialSolution(f"||b||={np.linalg.norm(b):.6g} <= sigma={sigma}; x=0 solves", A.shape[1])

    @property
    def shape(self):
        return self.A.shape

    def objective(self, x) -> float:
        return self.reg.value(np.asarray(x))


ProblemSpec = Union[RegBP, Lasso, Bpdn]
