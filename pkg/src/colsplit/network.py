"""Agent graphs, mixing weights, gossip averaging and consensus projections."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ValidationError


@dataclass(frozen=True)
class Topology:
    """Undirected connected graph on agents ``0..p-1``.

    Edges are stored as sorted pairs ``(i, j)`` with ``i < j``.
    """

    p: int
    edges: frozenset

    def __post_init__(self):
        if self.p < 1:
            raise ValidationError("topology needs at least one agent")
        edges = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise ValidationError(f"self-loop at agent {i}")
            if not (0 <= i < self.p and 0 <= j < self.p):
                raise ValidationError(f"edge ({i}, {j}) outside 0..{self.p - 1}")
            edges.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(edges))
        if not self.is_connected():
            raise ValidationError("topology must be connected")

    def neighbors(self) -> list[list[int]]:
        nb = [[] for _ in range(self.p)]
        for i, j in sorted(self.edges):
            nb[i].append(j)
            nb[j].append(i)
        return nb

    def is_connected(self) -> bool:
        nb = self.neighbors()
        seen = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in nb[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return len(seen) == self.p

    def has_path(self) -> bool:
        """Whether every chain edge ``(i, i+1)`` is present."""
        return all((i, i + 1) in self.edges for i in range(self.p - 1))

    def laplacian(self) -> np.ndarray:
        L = np.zeros((self.p, self.p))
        for i, j in self.edges:
            L[i, j] = L[j, i] = -1.0
            L[i, i] += 1.0
            L[j, j] += 1.0
        return L


def build_topology(kind: str, p: int, seed: int | None = None, extra_edge_prob: float = 0.1) -> Topology:
    """Build a cycle, a path, or a random graph containing the path.

    ``random_connected_with_path`` keeps every chain edge and adds each other
    pair independently with probability ``extra_edge_prob``; the draw is fixed
    by ``seed``.
    """
    if p < 2:
        raise ValidationError("cycle/path/random topologies need p >= 2")
    path = {(i, i + 1) for i in range(p - 1)}
    if kind == "path":
        return Topology(p, frozenset(path))
    if kind == "cycle":
        return Topology(p, frozenset(path | {(0, p - 1)}))
    if kind in ("random", "random_connected_with_path"):
        if not 0.0 <= extra_edge_prob <= 1.0:
            raise ValidationError("extra_edge_prob must lie in [0, 1]")
        rng = np.random.default_rng(seed)
        iu, ju = np.triu_indices(p, k=2)
        draw = rng.random(iu.size) < extra_edge_prob
        extra = {(int(i), int(j)) for i, j, k in zip(iu, ju, draw) if k}
        return Topology(p, frozenset(path | extra))
    if kind == "complete":
        iu, ju = np.triu_indices(p, k=1)
        return Topology(p, frozenset(zip(iu.tolist(), ju.tolist())))
    raise ValidationError(f"unknown topology kind {kind!r}")


def load_topology(path) -> Topology:
    """Read an edge list: first line ``p``, then one 1-based ``i j`` pair per line."""
    lines = [ln.split("#")[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValidationError(f"{path}: empty topology file")
    try:
        p = int(lines[0])
        edges = []
        for k, ln in enumerate(lines[1:], start=2):
            parts = ln.split()
            if len(parts) != 2:
                raise ValidationError(f"{path}: line {k}: expected 'i j'")
            edges.append((int(parts[0]) - 1, int(parts[1]) - 1))
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    return Topology(p, frozenset(edges))


def save_topology(top: Topology, path) -> None:
    rows = [str(top.p)] + [f"{i + 1} {j + 1}" for i, j in sorted(top.edges)]
    Path(path).write_text("\n".join(rows) + "\n")


def mixing_weight(top: Topology) -> np.ndarray:
    """Optimal constant edge weight matrix ``W = I - w L``.

    ``w = 2 / (lambda_1 + lambda_{p-1})`` with ``lambda_1`` the largest and
    ``lambda_{p-1}`` the smallest nonzero Laplacian eigenvalue.
    """
    L = top.laplacian()
    if top.p == 1:
        return np.ones((1, 1))
    ev = np.linalg.eigvalsh(L)
    w = 2.0 / (ev[-1] + ev[1])
    return np.eye(top.p) - w * L


def mixing_rate(W: np.ndarray) -> float:
    """Spectral radius of ``W - 11^T/p``, the per-round gossip contraction."""
    p = W.shape[0]
    return float(np.max(np.abs(np.linalg.eigvalsh(W - np.full((p, p), 1.0 / p)))))


def distributed_average(values, W: np.ndarray | None = None, mode: str = "exact", rounds: int = 50) -> np.ndarray:
    """Average per-agent vectors over the network.

    Parameters
    ----------
    values : array, shape (p, k) or (p,)
        Row ``i`` is agent ``i``'s vector.
    W : mixing matrix, needed for ``mode="gossip"``.
    mode : {"exact", "gossip"}
        ``exact`` replicates the arithmetic mean; ``gossip`` applies
        ``v <- W v`` for ``rounds`` synchronous rounds.
    """
    v = np.asarray(values, dtype=np.float64)
    if mode == "exact":
        return np.broadcast_to(v.mean(axis=0), v.shape).copy()
    if mode != "gossip":
        raise ValidationError(f"unknown averaging mode {mode!r}")
    if W is None:
        raise ValidationError("gossip averaging needs a mixing matrix")
    out = v.copy()
    for _ in range(int(rounds)):
        out = W @ out
    return out


def consensus_project(z_y, z_mu=None, mode: str = "exact", W=None, rounds: int = 50):
    """Project onto ``{copies equal} x {copies equal and >= 0}``.

    Returns the averaged ``y`` copies and, when ``z_mu`` is given, the positive
    part of the averaged ``mu`` copies.
    """
    y = distributed_average(z_y, W, mode, rounds)
    if z_mu is None:
        return y
    mu = np.maximum(distributed_average(z_mu, W, mode, rounds), 0.0)
    return y, mu


@dataclass(frozen=True, eq=False)
class StateLayout:
    """How a per-agent state vector splits into shared and local parts.

    The packed state has ``y`` in ``[0, m)``, ``mu`` in ``[m, m + ell)`` and the
    local fused multipliers ``v`` after that.  ``v_index[i, k]`` is the global
    coordinate of agent ``i``'s ``k``-th ``v`` entry (``-1`` marks padding);
    coordinates held by two agents are averaged by the projection.
    """

    m: int
    ell: int = 0
    mu_shared: bool = True
    v_index: np.ndarray | None = None
    n_v: int = 0
    p: int = 1

    @property
    def vmax(self) -> int:
        return 0 if self.v_index is None else self.v_index.shape[1]

    @property
    def dim(self) -> int:
        return self.m + self.ell + self.vmax

    @property
    def y(self) -> slice:
        return slice(0, self.m)

    @property
    def mu(self) -> slice:
        return slice(self.m, self.m + self.ell)

    @property
    def v(self) -> slice:
        return slice(self.m + self.ell, self.dim)

    def v_global(self, Wv: np.ndarray) -> np.ndarray:
        """Average the held copies of each global ``v`` coordinate."""
        idx = self.v_index
        ok = idx >= 0
        tot = np.zeros(self.n_v)
        cnt = np.zeros(self.n_v)
        np.add.at(tot, idx[ok], Wv[ok])
        np.add.at(cnt, idx[ok], 1.0)
        return tot / np.maximum(cnt, 1.0)


@dataclass(eq=False)
class ConsensusSet:
    """Projection onto the consensus set of a packed agent state.

    ``y`` copies are averaged (exactly or by gossip), shared ``mu`` copies are
    averaged then clipped at zero, local ``mu`` is clipped at zero, and shared
    ``v`` coordinates are averaged between the two agents holding them.
    """

    layout: StateLayout
    mode: str = "exact"
    W: np.ndarray | None = None
    rounds: int = 50
    _Wr: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("exact", "gossip"):
            raise ValidationError(f"unknown averaging mode {self.mode!r}")
        if self.mode == "gossip":
            if self.W is None:
                raise ValidationError("gossip mode needs a mixing matrix")
            self._Wr = np.linalg.matrix_power(self.W, int(self.rounds))

    def _avg(self, block):
        if self.mode == "exact":
            return np.broadcast_to(block.mean(axis=0), block.shape).copy()
        return self._Wr @ block

    def project(self, Z: np.ndarray) -> np.ndarray:
        lay = self.layout
        out = np.empty_like(Z)
        out[:, lay.y] = self._avg(Z[:, lay.y])
        if lay.ell:
            mu = Z[:, lay.mu]
            out[:, lay.mu] = np.maximum(self._avg(mu) if lay.mu_shared else mu, 0.0)
        if lay.vmax:
            Zv = Z[:, lay.v]
            g = lay.v_global(Zv)
            idx = lay.v_index
            out[:, lay.v] = np.where(idx >= 0, g[np.maximum(idx, 0)], 0.0)
        return out

    __call__ = project

    def spread(self, Wt: np.ndarray) -> float:
        """Largest deviation of a shared copy from the mean of its copies."""
        lay = self.layout
        y = Wt[:, lay.y]
        s = float(np.max(np.abs(y - y.mean(axis=0)), initial=0.0))
        if lay.ell and lay.mu_shared:
            mu = Wt[:, lay.mu]
            s = max(s, float(np.max(np.abs(mu - mu.mean(axis=0)), initial=0.0)))
        return s
