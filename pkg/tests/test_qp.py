"""Tests for the dense box-constrained active-set QP solver."""

import numpy as np
import pytest

import oracles
from trailermpc.errors import QpError, QpIterationError
from trailermpc.qp import (
    AT_LOWER,
    AT_UPPER,
    FREE,
    KKT_TOL,
    BoxQp,
    BoxQpSolver,
    QpSolution,
    regularization_shift,
    solve_box_qp,
)


def test_scalar_interior_minimum():
    qp = BoxQp(np.array([[2.0]]), np.array([-2.0]),
               np.array([-5.0]), np.array([5.0]))
    sol = solve_box_qp(qp)
    assert sol.x[0] == pytest.approx(1.0, abs=1e-12)
    assert sol.active_set[0] == FREE
    assert sol.objective(qp) == pytest.approx(-1.0, abs=1e-12)


def test_scalar_clamped_at_upper_bound():
    qp = BoxQp(np.array([[2.0]]), np.array([-2.0]),
               np.array([-5.0]), np.array([0.5]))
    sol = solve_box_qp(qp)
    assert sol.x[0] == 0.5
    assert sol.active_set[0] == AT_UPPER


def test_pinned_variable_matches_manual_elimination():
    H = np.array([[4.0, 1.0, 0.5],
                  [1.0, 3.0, 0.2],
                  [0.5, 0.2, 2.0]])
    g = np.array([1.0, -2.0, 0.3])
    lo = np.array([-10.0, 0.7, -10.0])
    up = np.array([10.0, 0.7, 10.0])
    sol = solve_box_qp(BoxQp(H, g, lo, up))
    assert sol.x[1] == 0.7
    assert sol.active_set[1] == AT_LOWER
    # eliminate the pinned coordinate by hand and solve the 2x2 system
    keep = [0, 2]
    reduced_h = H[np.ix_(keep, keep)]
    reduced_g = g[keep] + H[np.ix_(keep, [1])] @ np.array([0.7])
    manual = np.linalg.solve(reduced_h, -reduced_g)
    np.testing.assert_allclose(sol.x[keep], manual, atol=1e-12)


def test_all_variables_pinned():
    pins = np.array([0.3, -1.2])
    qp = BoxQp(np.eye(2), np.array([5.0, -5.0]), pins, pins)
    sol = solve_box_qp(qp)
    np.testing.assert_array_equal(sol.x, pins)


def test_unbounded_instance_matches_linear_solve():
    rng = np.random.default_rng(2)
    basis, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    H = basis @ np.diag(rng.uniform(0.5, 5.0, 5)) @ basis.T
    H = 0.5 * (H + H.T)
    g = rng.normal(size=5)
    inf = np.full(5, np.inf)
    sol = solve_box_qp(BoxQp(H, g, -inf, inf))
    np.testing.assert_allclose(sol.x, np.linalg.solve(H, -g), atol=1e-9)


def test_random_instances_match_projected_gradient_oracle():
    rng = np.random.default_rng(33)
    for _ in range(60):
        H, g, lo, up = oracles.random_box_qp(rng, max_dim=12)
        sol = solve_box_qp(BoxQp(H, g, lo, up))
        ref = oracles.projected_gradient_qp(H, g, lo, up)
        assert np.max(np.abs(sol.x - ref)) < 1e-6
        assert oracles.kkt_residual(H, g, lo, up, sol.x) < KKT_TOL
        assert np.all(sol.x >= lo) and np.all(sol.x <= up)


def test_warm_start_resolves_in_one_iteration():
    rng = np.random.default_rng(17)
    H, g, lo, up = oracles.random_box_qp(rng, max_dim=10)
    qp = BoxQp(H, g, lo, up)
    solver = BoxQpSolver()
    first = solver.solve(qp)
    second = solver.solve(qp)
    assert second.iterations == 1
    np.testing.assert_allclose(second.x, first.x, atol=1e-12)


def test_solver_drops_warm_start_on_shape_change():
    solver = BoxQpSolver()
    solver.solve(BoxQp(np.eye(3), np.ones(3), -np.ones(3), np.ones(3)))
    sol = solver.solve(BoxQp(np.eye(2), -np.ones(2), -np.ones(2), np.ones(2)))
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-12)
    solver.reset()
    assert solver.last is None


def test_validation_errors():
    with pytest.raises(QpError):
        BoxQp(np.ones((2, 3)), np.zeros(2), -np.ones(2), np.ones(2))
    with pytest.raises(QpError, match="symmetric"):
        BoxQp(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2),
              -np.ones(2), np.ones(2))
    with pytest.raises(QpError):
        BoxQp(np.eye(2), np.zeros(3), -np.ones(2), np.ones(2))
    with pytest.raises(QpError):
        BoxQp(np.eye(2), np.zeros(2), np.ones(2), -np.ones(2))


def test_iteration_limit_reports_best_solution():
    # every coordinate wants to move past its bound, and the ratio test
    # admits one blocker per iteration, so 150 variables exceed the limit
    n = 150
    qp = BoxQp(np.eye(n), np.full(n, -10.0), -np.ones(n), np.ones(n))
    with pytest.raises(QpIterationError) as err:
        solve_box_qp(qp)
    best = err.value.best_solution
    assert isinstance(best, QpSolution)
    assert best.iterations == 100
    assert np.all(best.x <= 1.0)


def test_zero_hessian_is_regularized():
    assert regularization_shift(np.eye(2)) == 0.0
    shift = regularization_shift(np.zeros((1, 1)))
    assert shift == pytest.approx(1e-8)
    qp = BoxQp(np.zeros((1, 1)), np.array([2.0]),
               np.array([-2.0]), np.array([2.0]))
    sol = solve_box_qp(qp)
    assert sol.x[0] == -2.0
    assert sol.active_set[0] == AT_LOWER
    assert sol.regularization == pytest.approx(1e-8)
