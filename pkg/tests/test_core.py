import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colsplit.core import (
    Box,
    Bpdn,
    ColumnPartition,
    DecoupledPolyhedron,
    FusedL1,
    GeneralPolyhedron,
    GroupL2,
    L1,
    Lasso,
    NonNeg,
    RegBP,
    TrivialSolution,
    ValidationError,
    blocked_matvec,
    diff1,
    diff1_T,
    diff1_matrix,
    make_partition,
)


def test_even_partition_400_by_40():
    part = make_partition(400, 40)
    assert part.p == 40
    assert all(b.size == 10 for b in part.blocks)
    assert part.is_contiguous()
    assert np.array_equal(part.blocks[3], np.arange(30, 40))


def test_single_agent_partition():
    part = make_partition(3, 1)
    assert part.p == 1
    assert np.array_equal(part.blocks[0], [0, 1, 2])


def test_uneven_partition_puts_larger_block_first():
    part = make_partition(5, 2)
    assert list(part.sizes) == [3, 2]


def test_partition_rejects_p_above_N():
    with pytest.raises(ValidationError):
        make_partition(3, 4)


@pytest.mark.parametrize("blocks", [
    [[0, 1], [1, 2]],
    [[0], [2]],
    [[0, 1, 2], []],
    [[0, 3], [1, 2, 4]],
])
def test_partition_rejects_malformed_lists(blocks):
    with pytest.raises(ValidationError):
        make_partition(4, len(blocks), blocks)


def test_explicit_partition_keeps_order():
    part = make_partition(4, 2, [[3, 0], [1, 2]])
    assert not part.is_contiguous()
    x = np.array([10.0, 11.0, 12.0, 13.0])
    assert np.array_equal(part.split(x)[0], [13.0, 10.0])
    assert np.array_equal(part.assemble(part.split(x)), x)


@given(st.integers(1, 300), st.integers(1, 60))
def test_even_partition_covers_exactly(N, p):
    if p > N:
        with pytest.raises(ValidationError):
            make_partition(N, p)
        return
    part = make_partition(N, p)
    assert np.array_equal(np.sort(np.concatenate(part.blocks)), np.arange(N))
    assert part.sizes.max() - part.sizes.min() <= 1
    assert part.is_contiguous()


@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_random_explicit_partition_roundtrip(N, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(N)
    cuts = np.sort(rng.choice(np.arange(1, N), size=min(3, N - 1), replace=False))
    blocks = np.split(perm, cuts)
    part = make_partition(N, len(blocks), blocks)
    x = rng.standard_normal(N)
    assert np.array_equal(part.assemble(part.split(x)), x)
    assert np.array_equal(np.sort(np.concatenate(part.blocks)), np.arange(N))


def test_blocked_matvec_identity():
    part = make_partition(2, 2)
    assert np.array_equal(blocked_matvec(np.eye(2), part, [[3.0], [-1.0]]), [3.0, -1.0])


def test_blocked_matvec_zero_blocks():
    A = np.arange(12.0).reshape(3, 4)
    part = make_partition(4, 2)
    assert np.array_equal(blocked_matvec(A, part, [np.zeros(2), np.zeros(2)]), np.zeros(3))


def test_blocked_matvec_small_dense_oracle():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((4, 6))
    x = rng.standard_normal(6)
    part = make_partition(6, 3)
    out = blocked_matvec(A, part, part.split(x))
    assert np.linalg.norm(out - A @ x) <= 1e-12 * np.linalg.norm(A @ x)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 50), st.integers(1, 500), st.integers(1, 50), st.integers(0, 2**31 - 1))
def test_blocked_matvec_matches_dense(m, N, p, seed):
    p = min(p, N)
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, N))
    x = rng.standard_normal(N)
    part = make_partition(N, p, [list(b) for b in np.array_split(rng.permutation(N), p)])
    ref = A @ x
    out = blocked_matvec(A, part, part.split(x))
    assert np.linalg.norm(out - ref) <= 1e-12 * max(np.linalg.norm(ref), 1.0) * np.sqrt(N)


def test_blocked_matvec_dimension_mismatch():
    with pytest.raises(ValidationError):
        blocked_matvec(np.eye(3), make_partition(3, 1), [np.ones(2)])
    with pytest.raises(ValidationError):
        blocked_matvec(np.eye(3), make_partition(4, 2), [np.ones(2), np.ones(2)])


@given(st.integers(2, 30), st.integers(0, 2**31 - 1))
def test_diff1_adjoint(N, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(N)
    v = rng.standard_normal(N - 1)
    D = diff1_matrix(N)
    assert np.allclose(diff1(x), D @ x)
    assert np.allclose(diff1_T(v, N), D.T @ v)
    assert np.isclose(diff1(x) @ v, x @ diff1_T(v, N))


def test_box_requires_origin_inside():
    with pytest.raises(ValidationError):
        Box([0.5], [1.0])
    with pytest.raises(ValidationError):
        Box([-1.0], [-0.5])
    with pytest.raises(ValidationError):
        Box([0.0], [0.0])
    box = Box([-np.inf, 0.0], [1.0, np.inf])
    assert box.contains([-5.0, 3.0])
    assert not box.contains([2.0, 0.0])


def test_polyhedron_shapes_checked():
    with pytest.raises(ValidationError):
        GeneralPolyhedron(np.ones((2, 3)), np.ones(3))
    con = GeneralPolyhedron(np.ones((1, 3)), [1.0])
    with pytest.raises(ValidationError):
        RegBP(np.ones((1, 4)), [1.0], 0.1, L1(), con)
    assert not con.is_cone
    assert GeneralPolyhedron(np.ones((1, 3)), [0.0]).is_cone


def test_decoupled_polyhedron_matches_partition():
    part = make_partition(4, 2)
    con = DecoupledPolyhedron([np.ones((1, 2)), np.ones((1, 3))], [[1.0], [1.0]])
    with pytest.raises(ValidationError):
        Lasso(np.ones((1, 4)), [1.0], GroupL2(part), con)
    good = DecoupledPolyhedron([np.ones((1, 2)), np.ones((1, 2))], [[1.0], [1.0]])
    assert good.contains([0.5, 0.5, 0.0, 1.0], partition=part)
    assert not good.contains([0.5, 0.6, 0.0, 1.0], partition=part)


@pytest.mark.parametrize("make", [
    lambda: L1(0.0),
    lambda: L1(-1.0),
    lambda: FusedL1(1.0, 0.0),
    lambda: GroupL2(make_partition(4, 2), [1.0, -1.0]),
    lambda: GroupL2(make_partition(4, 2), [1.0, 1.0, 1.0]),
    lambda: RegBP(np.eye(2), [1.0, 1.0], 0.0),
    lambda: RegBP(np.eye(2), [1.0, 1.0, 1.0], 1.0),
    lambda: Lasso(np.eye(2), [1.0], L1()),
    lambda: Lasso(np.eye(2), [np.nan, 1.0], L1()),
    lambda: Bpdn(np.eye(2), [1.0, 1.0], -1.0),
    lambda: Lasso(np.eye(4), np.ones(4), GroupL2(make_partition(3, 1))),
])
def test_invariant_violations_rejected(make):
    with pytest.raises(ValidationError):
        make()


def test_bpdn_trivial_case_carries_zero_solution():
    with pytest.raises(TrivialSolution) as exc:
        Bpdn(np.eye(2), [0.3, 0.4], 0.5)
    assert np.array_equal(exc.value.solution, np.zeros(2))


def test_objectives():
    x = np.array([1.0, -2.0, 0.0])
    A = np.eye(3)
    b = np.array([1.0, 0.0, 0.0])
    assert RegBP(A, b, 0.5, L1(2.0)).objective(x) == pytest.approx(2 * 3 + 0.25 * 5)
    assert Lasso(A, b, FusedL1(1.0, 0.5)).objective(x) == pytest.approx(0.5 * 4 + 3 + 0.5 * 5)
    part = make_partition(3, 2)
    assert Lasso(A, b, GroupL2(part, [1.0, 2.0])).objective(x) == pytest.approx(2 + np.sqrt(5))
    assert Bpdn(A, 2 * b, 0.5, L1(1.0), NonNeg()).objective(x) == pytest.approx(3.0)


def test_partition_equality_and_hash():
    a = make_partition(6, 3)
    b = ColumnPartition(([0, 1], [2, 3], [4, 5]))
    assert a == b
    assert hash(a) == hash(b)
    assert a != make_partition(6, 2)
