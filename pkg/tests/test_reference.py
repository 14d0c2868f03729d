import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from colsplit.core import Box, Bpdn, Free, GroupL2, L1, Lasso, NonNeg, RegBP, ValidationError, make_partition
from colsplit.reference import (
    ZeroDenominator,
    brute_force_tiny,
    fista_lasso,
    random_bpdn_instance,
    random_instance,
    relative_error,
    solve_centralized,
    stacked_identity_instance,
    stacked_identity_ridge_solution,
)


def test_relative_error_examples():
    assert relative_error(1.7211, 1.7200) == pytest.approx(6.395e-4, rel=1e-3)
    assert relative_error(3.3, 3.3) == 0.0
    assert relative_error(2.0, 1.0) == 1.0
    assert relative_error(-1.0, -2.0) == 0.5


def test_relative_error_zero_denominator():
    with pytest.raises(ZeroDenominator):
        relative_error(1.0, 0.0)
    with pytest.raises(ZeroDivisionError):
        relative_error(0.0, 0.0)


def test_random_instance_is_seeded():
    A1, b1 = random_instance(10, 400, seed=0)
    A2, b2 = random_instance(10, 400, seed=0)
    assert A1.shape == (10, 400) and b1.shape == (10,)
    assert np.array_equal(A1, A2) and np.array_equal(b1, b2)
    assert not np.array_equal(A1, random_instance(10, 400, seed=1)[0])


def test_bpdn_instance_redraws_until_nontrivial():
    for seed in range(20):
        _, b = random_bpdn_instance(2, 5, 1.5, seed)
        assert np.linalg.norm(b) > 1.5


def test_identity_lasso_value():
    rep = solve_centralized(Lasso(np.eye(2), [2.0, 0.0], L1(1.0)))
    assert rep.objective == pytest.approx(1.5, abs=1e-9)
    assert np.allclose(rep.solution, [1.0, 0.0], atol=1e-8)
    assert rep.tol_achieved <= 1e-10


def test_regularized_bp_picks_midpoint():
    rep = solve_centralized(RegBP(np.array([[1.0, 1.0]]), [1.0], 0.1, L1(1.0)))
    assert np.allclose(rep.solution, [0.5, 0.5], atol=1e-8)


def test_ridge_lasso_closed_form_on_stacked_identity():
    import cvxpy as cp
    A, b = stacked_identity_instance(2, 2, [1.0, 1.0])
    expected = stacked_identity_ridge_solution(b, 2, 0.5, 0.1)
    assert np.allclose(expected, 0.5 / 2.1)
    x = cp.Variable(4)
    obj = 0.5 * cp.sum_squares(A @ x - b) + 0.5 * cp.norm1(x) + 0.05 * cp.sum_squares(x)
    cp.Problem(cp.Minimize(obj)).solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    assert np.allclose(x.value, expected, atol=1e-7)
    # stationarity holds exactly since every entry is positive
    g = A.T @ (A @ expected - b) + 0.5 + 0.1 * expected
    assert np.max(np.abs(g)) <= 1e-14


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.integers(1, 4),
       st.floats(0.05, 2.0), st.floats(0.0, 1.0))
def test_stacked_identity_closed_form_is_stationary(b, r, lam, alpha):
    A, b = stacked_identity_instance(2, r, b)
    x = stacked_identity_ridge_solution(b, r, lam, alpha)
    g = A.T @ (A @ x - b) + alpha * x
    # subgradient of lam |x|: equal to -lam sign(x) off zero, within [-lam, lam] at zero
    on = x != 0
    assert np.allclose(g[on], -lam * np.sign(x[on]), atol=1e-12)
    assert np.all(np.abs(g[~on]) <= lam + 1e-12)


def test_stacked_identity_rejects_bad_arguments():
    with pytest.raises(ValidationError):
        stacked_identity_ridge_solution([1.0, 1.0], 0, 0.5, 0.1)


def test_grid_oracle_on_reference_examples():
    cases = [
        (Lasso(np.eye(2), [2.0, 0.0], L1(1.0)), 1.5),
        (RegBP(np.array([[1.0, 1.0]]), [1.0], 0.1, L1(1.0)), 1.025),
        (Bpdn(np.eye(1), [2.0], 1.0), 1.0),
    ]
    for prob, value in cases:
        g = brute_force_tiny(prob)
        c = solve_centralized(prob)
        assert g.objective == pytest.approx(value, abs=1e-9)
        assert abs(g.objective - c.objective) <= 1e-9
    assert brute_force_tiny(cases[2][0]).solution == pytest.approx([1.0], abs=1e-9)


def test_huge_lambda_gives_zero():
    b = np.array([0.7, -1.2])
    A = np.array([[1.0, 0.5], [0.2, -1.0]])
    prob = Lasso(A, b, L1(100.0))
    for rep in (solve_centralized(prob), brute_force_tiny(prob, grid=201)):
        assert np.allclose(rep.solution, 0.0, atol=1e-8)
        assert rep.objective == pytest.approx(0.5 * b @ b, abs=1e-9)


def test_grid_oracle_limits():
    with pytest.raises(ValidationError):
        brute_force_tiny(Lasso(np.eye(4), np.ones(4), L1()))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["lasso", "regbp", "bpdn"]),
       st.sampled_from(["free", "nonneg", "box"]))
def test_centralized_matches_grid_on_tiny_problems(seed, family, con):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((1, 2)) if family == "regbp" else rng.standard_normal((2, 2))
    b = rng.standard_normal(A.shape[0]) * 2
    constraint = {"free": Free(), "nonneg": NonNeg(), "box": Box([-0.5, -1.0], [1.0, 0.4])}[con]
    if family == "lasso":
        prob = Lasso(A, b, L1(0.4), constraint)
    elif family == "regbp":
        if con != "free":
            b = A @ np.array([0.2, 0.1]) if con == "box" else A @ np.abs(rng.standard_normal(2))
        prob = RegBP(A, b, 0.3, L1(1.0), constraint)
    else:
        # x0 lies in every constraint set and strictly inside the noise ball
        x0 = np.array([0.3, 0.2])
        e = 0.1 * rng.standard_normal(2)
        b = A @ x0 + e
        sigma = 1.5 * np.linalg.norm(e)
        assume(np.linalg.norm(b) > 1.5 * sigma)
        prob = Bpdn(A, b, sigma, L1(1.0), constraint)
    g = brute_force_tiny(prob, grid=1001 if family != "bpdn" else 2001)
    c = solve_centralized(prob)
    assert abs(g.objective - c.objective) <= 1e-7 * max(1.0, abs(c.objective))


def test_centralized_matches_grid_in_three_dimensions():
    A = np.random.default_rng(0).standard_normal((2, 3))
    for con in (Free(), NonNeg()):
        prob = Lasso(A, [1.0, -1.0], L1(0.3), con)
        g = brute_force_tiny(prob)
        assert abs(g.objective - solve_centralized(prob).objective) <= 1e-9


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_oracle_invariant_to_column_permutation(seed):
    rng = np.random.default_rng(seed)
    A, b = random_instance(6, 24, seed=seed)
    part = make_partition(24, 4)
    perm = rng.permutation(24)
    inv = np.argsort(perm)
    part_perm = make_partition(24, 4, [inv[blk] for blk in part.blocks])
    for reg, reg_p in [(L1(0.7), L1(0.7)), (GroupL2(part, 0.7), GroupL2(part_perm, 0.7))]:
        J = solve_centralized(Lasso(A, b, reg)).objective
        Jp = solve_centralized(Lasso(A[:, perm], b, reg_p)).objective
        assert abs(J - Jp) <= 1e-10 * max(1.0, abs(J))


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_fista_agrees_with_centralized(seed, nonneg):
    A, b = random_instance(8, 30, seed=seed)
    c = solve_centralized(Lasso(A, b, L1(0.9), NonNeg() if nonneg else Free()))
    f = fista_lasso(A, b, 0.9, nonneg=nonneg)
    assert abs(f.objective - c.objective) <= 1e-9 * abs(c.objective)
    assert f.tol_achieved <= 1e-10


def test_fista_group_agrees_with_centralized():
    A, b = random_instance(8, 30, seed=4)
    part = make_partition(30, 5)
    c = solve_centralized(Lasso(A, b, GroupL2(part, 0.9)))
    f = fista_lasso(A, b, 0.9, groups=part.blocks)
    assert abs(f.objective - c.objective) <= 1e-9 * abs(c.objective)


def test_oracle_report_fields():
    rep = solve_centralized(Lasso(np.eye(2), [2.0, 0.0], L1(1.0)))
    assert np.isfinite(rep.objective)
    assert rep.iterations > 0
    assert rep.solver == "clarabel"


def test_grid_box_covers_minimizer_outside_unit_scale():
    # nearly singular A puts the minimizer near (-6.1, 1.0)
    rng = np.random.default_rng(4028)
    A = rng.standard_normal((2, 2))
    prob = Lasso(A, rng.standard_normal(2) * 2, L1(0.4))
    c = solve_centralized(prob)
    assert np.max(np.abs(c.solution)) > 5
    assert abs(brute_force_tiny(prob, grid=1001).objective - c.objective) <= 1e-9
