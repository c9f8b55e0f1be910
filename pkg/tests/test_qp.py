import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_qp, random_qp

from lpvmpc.qp import (
    INFEASIBLE,
    MAX_ITER,
    SOLVED,
    DenseQp,
    QpSolution,
    QpSolver,
    QpSolverConfig,
    dump_qp,
    kkt_residuals,
    load_qp,
    solve,
)


def one_dim(lo=0.0, hi=0.5):
    # 0.5 u^2 - u
    return DenseQp([[1.0]], [-1.0], [[1.0]], [lo], [hi])


def test_clipped_scalar():
    sol = solve(one_dim())
    assert sol.status == SOLVED
    assert sol.z[0] == pytest.approx(0.5, abs=1e-9)


def test_unconstrained_scalar():
    sol = solve(one_dim(-np.inf, np.inf))
    assert sol.z[0] == pytest.approx(1.0, abs=1e-9)


def test_kkt_of_exact_solution():
    qp = one_dim()
    exact = QpSolution(np.array([0.5]), np.array([0.5]), SOLVED, 0, 0.0, 0.0)
    assert max(kkt_residuals(qp, exact)) <= 1e-9


def test_kkt_perturbed():
    qp = one_dim()
    off = QpSolution(np.array([0.6]), np.array([0.5]), SOLVED, 0, 0.0, 0.0)
    stat, viol, _ = kkt_residuals(qp, off)
    assert stat > 0.05
    assert viol == pytest.approx(0.1)


def test_kkt_infeasible_point():
    qp = DenseQp(np.eye(2), np.zeros(2), np.eye(2), [-1, -1], [1, 1])
    pt = QpSolution(np.array([3.0, -1.5]), np.zeros(2), SOLVED, 0, 0.0, 0.0)
    assert kkt_residuals(qp, pt)[1] == pytest.approx(2.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_brute_force(seed):
    qp = random_qp(np.random.default_rng(seed))
    z_ref, _ = brute_force_qp(qp)
    sol = solve(qp)
    if z_ref is None:
        assert sol.status != SOLVED
        return
    assert sol.status == SOLVED
    np.testing.assert_allclose(sol.z, z_ref, atol=1e-6)
    assert max(kkt_residuals(qp, sol)) <= 1e-5


def test_detects_infeasibility():
    # x1 + x2 >= 3 while both are capped at 1
    qp = DenseQp(np.eye(2), np.zeros(2), [[1, 0], [0, 1], [1, 1]], [-1, -1, 3], [1, 1, np.inf])
    assert solve(qp).status == INFEASIBLE


def test_max_iter_reported():
    rng = np.random.default_rng(5)
    qp = random_qp(rng, n=4, m=6, identity_rows=False)
    sol = QpSolver(QpSolverConfig(max_iter=1, polish=False)).solve(qp)
    assert sol.status == MAX_ITER
    assert sol.iterations == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0.1, 10.0), min_size=4, max_size=4))
def test_invariant_to_diagonal_scaling(seed, scales):
    qp = random_qp(np.random.default_rng(seed), n=4, identity_rows=False)
    s = np.array(scales)
    # z = S w: H -> S H S, g -> S g, A -> A S
    scaled = DenseQp(s[:, None] * qp.h * s[None, :], s * qp.g, qp.a_ineq * s[None, :], qp.lo, qp.hi)
    a, b = solve(qp), solve(scaled)
    if a.status != SOLVED:
        return
    assert b.status == SOLVED
    np.testing.assert_allclose(s * b.z, a.z, atol=1e-6)


def test_warm_start_from_optimum_is_fast():
    rng = np.random.default_rng(11)
    for _ in range(50):
        qp = random_qp(rng)
        cold = solve(qp)
        if cold.status != SOLVED:
            continue
        warm = solve(qp, cold)
        assert warm.status == SOLVED
        assert warm.iterations <= 5
        np.testing.assert_allclose(warm.z, cold.z, atol=1e-9)


def test_residual_trend_decreases():
    rng = np.random.default_rng(2)
    cfg = QpSolverConfig(polish=False, eps_abs=1e-14, max_iter=2000, record_history=True)
    for _ in range(20):
        qp = random_qp(rng, n=4, m=6, identity_rows=False)
        solver = QpSolver(cfg)
        sol = solver.solve(qp)
        if sol.status == INFEASIBLE:
            continue
        hist = solver.history
        for k in (5, 10, 20, 50, 100):
            if 10 * k <= len(hist):
                assert hist[10 * k - 1] <= hist[k - 1]


def test_factorisation_cached():
    rng = np.random.default_rng(3)
    qp = random_qp(rng, n=3, identity_rows=True)
    cfg = QpSolverConfig(adaptive_rho_interval=0)
    solver = QpSolver(cfg)
    solver.solve(qp)
    first = solver.factorizations
    qp2 = DenseQp(qp.h, qp.g + 0.1, qp.a_ineq, qp.lo, qp.hi)
    solver.solve(qp2)
    assert solver.factorizations == first


def test_equality_rows():
    # x1 + x2 = 1, minimise |x|^2
    qp = DenseQp(np.eye(2), np.zeros(2), [[1.0, 1.0]], [1.0], [1.0])
    sol = solve(qp)
    np.testing.assert_allclose(sol.z, [0.5, 0.5], atol=1e-9)


def test_validation():
    with pytest.raises(ValueError):
        DenseQp([[1.0, 2.0], [0.0, 1.0]], [0, 0], np.eye(2), [0, 0], [1, 1])
    with pytest.raises(ValueError):
        DenseQp(np.eye(2), [0, 0], np.eye(2), [1, 0], [0, 1])
    with pytest.raises(ValueError):
        DenseQp(np.eye(2), [0, 0], np.eye(2), [0], [1])


def test_dump_roundtrip(tmp_path):
    qp = random_qp(np.random.default_rng(9), n=3, m=5, identity_rows=False)
    p = tmp_path / "qp.txt"
    dump_qp(p, qp)
    back = load_qp(p)
    for name in ("h", "g", "a_ineq", "lo", "hi"):
        np.testing.assert_array_equal(getattr(back, name), getattr(qp, name))
