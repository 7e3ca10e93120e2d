import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcsvm.data_io import SparseDataset
from dcsvm.kernel import KernelSpec, kernel_matrix
from dcsvm.solver import SolverConfig, gradient, kkt_violation, objective, solve_dual, violations
from oracles import box_qp, dense_rbf, enumerate_box_qp, qp_objective


def one_point(norm_sq=1.0):
    # linear kernel, x = (sqrt(norm_sq)) gives Q_11 = norm_sq
    return SparseDataset.from_dense(np.array([[np.sqrt(norm_sq)]]), [1.0])


def problem(n, d=8, gamma=0.3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, d))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    ds = SparseDataset.from_dense(X, y)
    Q = np.outer(y, y) * dense_rbf(X, X, gamma)
    return ds, KernelSpec.rbf(gamma), Q


def test_scalar_examples():
    lin = KernelSpec.linear()
    sol = solve_dual(one_point(), lin, SolverConfig(C=10.0, tol=1e-12))
    assert sol.alpha[0] == 1.0 and sol.objective == -0.5
    sol = solve_dual(one_point(), lin, SolverConfig(C=0.5, tol=1e-12))
    assert sol.alpha[0] == 0.5 and sol.kkt_violation == 0.0


def test_zero_curvature_moves_to_bound():
    ds = SparseDataset.from_dense(np.zeros((1, 1)), [1.0])
    sol = solve_dual(ds, KernelSpec.polynomial(1.0), SolverConfig(C=3.0))
    assert sol.alpha[0] == 3.0 and sol.objective == -3.0


def test_objective_examples():
    ds, spec, Q = problem(20, seed=4)
    assert objective(ds, spec, np.zeros(20)) == 0.0
    assert objective(one_point(), KernelSpec.linear(), np.array([1.0])) == -0.5
    rng = np.random.default_rng(5)
    for _ in range(5):
        a = rng.uniform(0, 2, 20) * (rng.random(20) < 0.6)
        assert objective(ds, spec, a) == pytest.approx(qp_objective(Q, a), rel=1e-10, abs=1e-12)


def test_kkt_examples():
    assert kkt_violation(-np.ones(5), np.zeros(5), 1.0) == 1.0
    assert kkt_violation(np.array([0.2]), np.array([0.5]), 1.0) >= 0.2
    v = violations(np.array([-1.0, 1.0, -1.0, 1.0]), np.array([0.0, 0.0, 2.0, 2.0]), 2.0)
    assert v.tolist() == [1.0, 0.0, 0.0, 1.0]
    A = np.random.default_rng(0).standard_normal((10, 10))
    Q = A @ A.T + 0.1 * np.eye(10)
    a = box_qp(Q, 1.0)[0]
    assert kkt_violation(Q @ a - 1, a, 1.0) <= 1e-8


@pytest.mark.parametrize("seed", range(6))
def test_matches_enumeration_oracle(seed):
    ds, spec, Q = problem(7, d=3, gamma=1.5, seed=seed)
    C = [0.3, 2.0, 50.0][seed % 3]
    _, f_ref = enumerate_box_qp(Q, C)
    sol = solve_dual(ds, spec, SolverConfig(C=C, tol=1e-12))
    assert sol.objective == pytest.approx(f_ref, rel=1e-8, abs=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_matches_projected_gradient_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(5, 31))
    ds, spec, Q = problem(n, seed=seed)
    C = float(rng.choice([0.5, 8.0, 128.0]))
    _, f_ref, _ = box_qp(Q, C)
    sol = solve_dual(ds, spec, SolverConfig(C=C, tol=1e-10))
    assert sol.objective == pytest.approx(f_ref, rel=1e-8)


def test_solution_invariants():
    ds, spec, Q = problem(120, seed=9)
    C = 4.0
    sol = solve_dual(ds, spec, SolverConfig(C=C, tol=1e-4))
    assert sol.converged and sol.kkt_violation <= 1e-4
    assert np.all((sol.alpha >= 0) & (sol.alpha <= C))
    assert np.array_equal(sol.support, np.flatnonzero(sol.alpha > 0))
    assert sol.objective == pytest.approx(qp_objective(Q, sol.alpha), rel=1e-8)
    np.testing.assert_allclose(sol.gradient, Q @ sol.alpha - 1, atol=1e-9)
    np.testing.assert_allclose(gradient(ds, spec, sol.alpha), Q @ sol.alpha - 1, atol=1e-10)


def test_warm_start_equivalence():
    ds, spec, _ = problem(150, seed=2)
    cfg = SolverConfig(C=16.0, tol=1e-3)
    cold = solve_dual(ds, spec, cfg)
    rng = np.random.default_rng(3)
    for _ in range(3):
        init = rng.uniform(0, 16.0, 150) * (rng.random(150) < 0.3)
        warm = solve_dual(ds, spec, cfg, alpha_init=init)
        assert abs(warm.objective - cold.objective) <= 2 * cfg.tol * 150


def test_infeasible_init_rejected():
    ds, spec, _ = problem(10)
    cfg = SolverConfig(C=1.0)
    for bad in (np.full(10, 2.0), -np.ones(10), np.zeros(9)):
        with pytest.raises(ValueError):
            solve_dual(ds, spec, cfg, alpha_init=bad)
    with pytest.raises(ValueError):
        SolverConfig(C=0.0)
    with pytest.raises(ValueError):
        SolverConfig(C=1.0, tol=0.0)


def test_max_iter_flags_not_converged():
    ds, spec, _ = problem(80, seed=1)
    sol = solve_dual(ds, spec, SolverConfig(C=10.0, tol=1e-8, max_iter=5))
    assert not sol.converged and sol.iterations == 5
    assert np.all((sol.alpha >= 0) & (sol.alpha <= 10.0))


def test_debug_drift_check_runs():
    ds, spec, _ = problem(200, seed=7)
    sol = solve_dual(ds, spec, SolverConfig(C=64.0, tol=1e-6, debug=True))
    assert sol.converged


def test_view_and_dense_kernel_agree():
    ds, spec, _ = problem(90, seed=11)
    idx = np.arange(0, 90, 2)
    K = kernel_matrix(spec, ds.X[idx], ds.X[idx], ds.sq_norms[idx], ds.sq_norms[idx])
    cfg = SolverConfig(C=2.0, tol=1e-6)
    a = solve_dual(ds, spec, cfg, indices=idx)
    b = solve_dual(ds, spec, cfg, indices=idx, K=K)
    sub = solve_dual(ds.subset(idx), spec, cfg)
    assert a.objective == b.objective == sub.objective
    assert np.array_equal(a.alpha, sub.alpha)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.5, 8.0, 128.0]), st.booleans())
def test_update_properties(seed, C, shrinking):
    """Monotone objective and feasibility after every single update."""
    ds, spec, Q = problem(60, d=4, gamma=0.8, seed=seed)
    seen = []

    def record(t, i, old, new, f):
        seen.append((new, f))
        assert 0.0 <= new <= C

    solve_dual(ds, spec, SolverConfig(C=C, tol=1e-9, shrinking=shrinking), callback=record)
    fs = np.array([f for _, f in seen])
    assert np.all(np.diff(fs) <= 1e-12 * (1 + np.abs(fs[1:])))


@pytest.mark.parametrize("seed", range(4))
def test_shrinking_transparency(seed):
    ds, spec, _ = problem(400, d=10, gamma=0.5, seed=seed)
    tol = 1e-3
    on = solve_dual(ds, spec, SolverConfig(C=32.0, tol=tol, shrinking=True))
    off = solve_dual(ds, spec, SolverConfig(C=32.0, tol=tol, shrinking=False))
    assert on.converged and off.converged
    assert on.shrink_events > 0 and off.shrink_events == 0
    assert abs(on.objective - off.objective) <= tol
