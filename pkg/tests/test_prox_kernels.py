import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from colsplit.core import L1, NonConvergence, RegBP, ValidationError, make_partition
from colsplit.dual_forms import build_dual
from colsplit.prox_kernels import (
    EllipsoidProjector,
    Interval,
    NegativePartBallProjector,
    PolyhedronProjector,
    group_shrink,
    project,
    project_ball_2,
    project_polyhedron,
    prox_numeric,
    soft_threshold,
    theta,
    theta_grad,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def vectors(n_min=1, n_max=6):
    return st.integers(n_min, n_max).flatmap(lambda n: arrays(np.float64, n, elements=finite))


@pytest.mark.parametrize("s, expected", [(2.5, 1.5), (0.5, 0.0), (-3.0, -2.0), (1.0, 0.0), (-1.0, 0.0)])
def test_soft_threshold_values(s, expected):
    assert soft_threshold(s, 1.0) == expected


def test_soft_threshold_vectorized():
    assert np.array_equal(soft_threshold(np.array([2.5, 0.5, -3.0]), 1.0), [1.5, 0.0, -2.0])


def test_soft_threshold_rejects_nonpositive_threshold():
    with pytest.raises(ValidationError):
        soft_threshold(1.0, 0.0)


@given(finite, st.floats(0.01, 10))
def test_soft_threshold_is_odd(s, k):
    assert soft_threshold(-s, k) == -soft_threshold(s, k)


@given(st.floats(-20, 20), st.floats(0.1, 5))
def test_half_squared_shrinkage_derivative(s, k):
    h = 1e-5
    if abs(abs(s) - k) < 10 * h:
        return
    fd = (0.5 * soft_threshold(s + h, k) ** 2 - 0.5 * soft_threshold(s - h, k) ** 2) / (2 * h)
    exact = soft_threshold(s, k)
    assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact))


def test_group_shrink_values():
    assert np.allclose(group_shrink([3.0, 4.0]), [2.4, 3.2])
    assert np.array_equal(group_shrink([0.3, 0.4]), [0.0, 0.0])
    assert np.array_equal(group_shrink([0.6, 0.8]), [0.0, 0.0])
    assert np.array_equal(group_shrink(np.zeros(3)), np.zeros(3))


@given(vectors())
def test_group_shrink_norm_identity(z):
    out = np.linalg.norm(group_shrink(z))
    assert abs(out - max(np.linalg.norm(z) - 1.0, 0.0)) <= 1e-12 * max(1.0, np.linalg.norm(z))


@pytest.mark.parametrize("t, expected", [(0.0, 0.0), (3.0, 8.0), (-2.0, 3.0), (1.5, 2.25)])
def test_theta_values(t, expected):
    assert theta(t, Interval(-1.0, 2.0)) == pytest.approx(expected)


def test_theta_grad_is_twice_clip():
    assert theta_grad(3.0, (-1.0, 2.0)) == 4.0
    assert theta_grad(-5.0, Interval(-1.0, np.inf)) == -2.0
    assert theta_grad(7.0, Interval(-1.0, np.inf)) == 14.0


def test_interval_invariants():
    with pytest.raises(ValidationError):
        Interval(0.5, 1.0)
    with pytest.raises(ValidationError):
        Interval(0.0, 0.0)


boxes = st.tuples(st.floats(-5, 0), st.floats(0, 5)).filter(lambda b: b[0] < b[1])


@settings(max_examples=25)
@given(boxes, st.integers(0, 2**31 - 1))
def test_theta_grad_matches_finite_differences(box, seed):
    t = np.random.default_rng(seed).uniform(-10, 10, 1000)
    h = 1e-6
    away = (np.abs(t - box[0]) > 1e-4) & (np.abs(t - box[1]) > 1e-4)
    t = t[away]
    fd = (theta(t + h, box) - theta(t - h, box)) / (2 * h)
    g = theta_grad(t, box)
    assert np.all(np.abs(fd - g) <= 1e-6 * np.maximum(1.0, np.abs(g)))
    assert np.all(theta(t, box) >= 0)


def test_projection_examples():
    assert np.allclose(project([2.5, -0.3], "ball_inf", 1.0), [1.0, -0.3])
    assert np.allclose(project([3.0, 4.0], "ball_2", 1.0), [0.6, 0.8])
    assert np.allclose(project([-1.0, 2.0], "nonneg"), [0.0, 2.0])
    assert np.allclose(project([3.0, -3.0], "box", intervals=[(-1, 2), Interval(-2, 1)]), [2.0, -2.0])


def test_projection_rejects_bad_radius():
    with pytest.raises(ValidationError):
        project([1.0], "ball_2", 0.0)
    with pytest.raises(ValidationError):
        project([1.0], "ball_inf", -1.0)


@pytest.mark.property
@given(st.sampled_from(["ball_inf", "ball_2", "nonneg", "box"]), vectors(3, 3), vectors(3, 3), st.floats(0.1, 5))
def test_projections_idempotent_and_nonexpansive(kind, a, b, r):
    iv = [(-1.0, 2.0), (-np.inf, 0.5), (0.0, np.inf)]
    pa = project(a, kind, r, iv)
    pb = project(b, kind, r, iv)
    assert np.allclose(project(pa, kind, r, iv), pa, atol=1e-12)
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12


def test_polyhedron_single_halfspace():
    assert np.allclose(project_polyhedron([[1.0]], [1.0], [3.0]), [1.0])


def test_polyhedron_box():
    C = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]])
    d = np.array([1.0, 0, 1, 0])
    assert np.allclose(project_polyhedron(C, d, [2.0, -1.0]), [1.0, 0.0], atol=1e-10)


def enumerate_projection(C, d, z):
    """Exhaustive active-set oracle: best KKT point over all constraint subsets."""
    best, best_dist = None, np.inf
    for k in range(C.shape[0] + 1):
        for S in itertools.combinations(range(C.shape[0]), k):
            S = list(S)
            if S:
                CS = C[S]
                G = CS @ CS.T
                if np.linalg.matrix_rank(G) < len(S):
                    continue
                nu = np.linalg.solve(G, CS @ z - d[S])
                x = z - CS.T @ nu
                if np.any(nu < -1e-12):
                    continue
            else:
                x = z.copy()
            if np.all(C @ x <= d + 1e-10):
                dist = np.linalg.norm(x - z)
                if dist < best_dist:
                    best, best_dist = x, dist
    return best


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["dykstra", "active_set"]))
def test_polyhedron_matches_enumeration(seed, method):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((3, 2))
    d = rng.uniform(0.1, 1.0, 3)
    z = rng.standard_normal(2) * 3
    ref = enumerate_projection(C, d, z)
    out = project_polyhedron(C, d, z, method=method)
    assert np.linalg.norm(out - ref) <= 1e-8
    assert np.all(C @ out <= d + 1e-10 * (1 + np.max(np.abs(d))))


@pytest.mark.property
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_polyhedron_projection_idempotent_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((5, 3))
    d = rng.uniform(0.1, 1.0, 5)
    a, b = rng.standard_normal((2, 3)) * 3
    pa = project_polyhedron(C, d, a)
    pb = project_polyhedron(C, d, b)
    assert np.allclose(project_polyhedron(C, d, pa), pa, atol=1e-10)
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9


def test_polyhedron_cap_raises_nonconvergence():
    C = np.array([[1.0, 1.0], [-1.0, -1.0]])
    d = np.array([-1.0, 0.0])
    with pytest.raises(NonConvergence):
        project_polyhedron(C, d, [3.0, 3.0], max_iter=5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_warm_active_set_projector_matches_dykstra(seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((8, 3))
    h = rng.uniform(0.5, 2.0, 8)
    proj = PolyhedronProjector(G, h)
    for _ in range(3):
        z = rng.standard_normal(3) * 4
        assert np.linalg.norm(proj(z) - project_polyhedron(G, h, z)) <= 1e-8


def cvx_distance(M, r, z, nonneg):
    import cvxpy as cp
    w = cp.Variable(z.size)
    s = M @ w
    con = [cp.norm(cp.pos(-s)) <= r] if nonneg else [cp.norm(s) <= r]
    cp.Problem(cp.Minimize(cp.sum_squares(w - z)), con).solve(solver="CLARABEL")
    return float(np.linalg.norm(w.value - z))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_ellipsoid_projectors_satisfy_kkt(seed, nonneg):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((4, 3))
    z = rng.standard_normal(3) * 3
    proj = NegativePartBallProjector(M, 0.7) if nonneg else EllipsoidProjector(M, 0.7)
    w = proj(z)
    s = M @ w
    g = -M.T @ np.maximum(-s, 0.0) if nonneg else M.T @ s
    size = np.linalg.norm(np.maximum(-s, 0.0)) if nonneg else np.linalg.norm(s)
    inside = (np.linalg.norm(np.maximum(-M @ z, 0.0)) if nonneg else np.linalg.norm(M @ z)) <= 0.7
    if inside:
        assert np.array_equal(w, z)
    else:
        assert abs(size - 0.7) <= 1e-9
        t = (z - w) @ g / (g @ g)
        assert t >= 0
        assert np.linalg.norm(z - w - t * g) <= 1e-8 * max(1.0, np.linalg.norm(z))
    assert np.linalg.norm(w - z) <= cvx_distance(M, 0.7, z, nonneg) + 1e-7
    assert np.allclose(proj(w), w, atol=1e-9)


def test_prox_of_zero_is_identity():
    z = np.array([1.0, -2.0])
    out = prox_numeric(lambda w: 0.0, lambda w: np.zeros_like(w), 1.0, z)
    assert np.array_equal(out, z)


def test_prox_of_half_square():
    out = prox_numeric(lambda w: 0.5 * w @ w, lambda w: w, 1.0, np.array([2.0, 0.0]))
    assert np.allclose(out, [1.0, 0.0], atol=1e-10)


def test_prox_rejects_nonpositive_rho():
    with pytest.raises(ValidationError):
        prox_numeric(lambda w: 0.0, lambda w: 0 * w, 0.0, np.zeros(1))


def test_prox_of_regbp_dual_piece_matches_grid_search():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((2, 10))
    b = rng.standard_normal(2)
    form = build_dual(RegBP(A, b, 0.5, L1(1.0)), make_partition(10, 1))
    piece = form.pieces[0]
    rho = 0.7
    z = np.array([0.8, -1.1])
    w = prox_numeric(piece.objective, piece.gradient, rho, z, tol=1e-10)
    assert np.linalg.norm(w - z + rho * piece.gradient(w)) <= 1e-10

    def F(v):
        return piece.objective(v) + (v - z) @ (v - z) / (2 * rho)

    center, half = z.copy(), 3.0
    for _ in range(6):
        ax = np.linspace(-half, half, 41)
        pts = [center + np.array([a, c]) for a in ax for c in ax]
        center = min(pts, key=F)
        half = 2 * half / 40
    assert np.linalg.norm(w - center) <= 2 * half
    assert F(w) <= F(center) + 1e-12
