"""Reference implementations used to cross-check the library's numerics.

Everything in this module is written independently of the code under test:
different algorithms (projected gradient instead of active sets, adjoint
sweeps instead of forward condensing, probe columns instead of recursions)
so that agreement between the two is meaningful evidence of correctness.
"""

from __future__ import annotations

import math

import numpy as np

# ---------------------------------------------------------------------------
# Hand-derived reference values (closed-form arithmetic, frozen).
# ---------------------------------------------------------------------------

# Yaw rate of the tractor at 10 deg steering, unit speed and slips,
# wheelbase 1.4 m:  tan(10 deg) / 1.4.
TRACTOR_YAW_RATE_10DEG = 0.1259478433631893

# Matching trailer yaw rate with both bodies aligned and zero trailer
# steering: -(hitch_offset / tractor_wheelbase) * tan(10 deg) / trailer_wheelbase
# = -(1.1 / 1.4) * tan(10 deg) / 1.3.
TRAILER_YAW_RATE_10DEG = -0.10657125207654476

# Steady turning radius of the tractor reference point at 10 deg commanded
# steering when the steering slip gain is 0.9: 1.4 / tan(0.9 * 10 deg).
TURNING_RADIUS_10DEG_SLIP09 = 8.83925212054506

# Straight-line chord spanned by a 1.6 m arclength advance along a circle of
# radius 10: 2 * 10 * sin(1.6 / 20).
LOOKAHEAD_CHORD_R10 = 1.598293879383454

# Total length of the built-in benchmark path: 30 + 20 + 30 m of straights
# plus two quarter circles of radius 10.
BENCHMARK_LENGTH = 80.0 + 10.0 * math.pi


# ---------------------------------------------------------------------------
# Box-constrained QP oracle.
# ---------------------------------------------------------------------------

def projected_gradient_qp(hessian, gradient, lower, upper, tol=1e-12,
                          max_iter=500_000):
    """Minimize 0.5 x'Hx + g'x over a box by projected gradient descent.

    Slow but simple; requires H positive definite.  Used as the ground-truth
    solver for randomized QP comparisons.
    """
    H = np.asarray(hessian, dtype=float)
    g = np.asarray(gradient, dtype=float)
    lo = np.asarray(lower, dtype=float)
    up = np.asarray(upper, dtype=float)
    lipschitz = float(np.linalg.eigvalsh(H)[-1])
    step = 1.0 / max(lipschitz, 1e-12)
    x = np.clip(np.zeros_like(g), lo, up)
    for _ in range(max_iter):
        x_next = np.clip(x - step * (H @ x + g), lo, up)
        if np.max(np.abs(x_next - x)) < tol:
            return x_next
        x = x_next
    return x


def kkt_residual(hessian, gradient, lower, upper, x, feas_tol=1e-10):
    """Largest violation of the box-QP optimality conditions at x.

    Interior coordinates need a zero gradient; coordinates at a bound need
    the gradient to point out of the feasible box.  Coordinates pinned by
    lower == upper are skipped (any multiplier is admissible there).
    """
    H = np.asarray(hessian, dtype=float)
    g = np.asarray(gradient, dtype=float)
    lo = np.asarray(lower, dtype=float)
    up = np.asarray(upper, dtype=float)
    grad = H @ np.asarray(x, dtype=float) + g
    worst = 0.0
    for i in range(g.size):
        if up[i] - lo[i] <= feas_tol:
            continue
        at_lower = x[i] <= lo[i] + feas_tol
        at_upper = x[i] >= up[i] - feas_tol
        if at_lower:
            worst = max(worst, -grad[i])
        elif at_upper:
            worst = max(worst, grad[i])
        else:
            worst = max(worst, abs(grad[i]))
    return float(worst)


# ---------------------------------------------------------------------------
# Optimal-control helpers built on raw rollouts.
# ---------------------------------------------------------------------------

def rollout(problem, x0, inputs):
    """Simulate problem.dynamics from x0 under the given input sequence.

    Returns (states, A_list, B_list) with states of shape (N + 1, nx).
    """
    inputs = np.asarray(inputs, dtype=float)
    states = [np.array(x0, dtype=float)]
    a_list, b_list = [], []
    for k in range(problem.horizon):
        x_next, a_mat, b_mat = problem.dynamics(k, states[k], inputs[k])
        states.append(np.asarray(x_next, dtype=float))
        a_list.append(np.asarray(a_mat, dtype=float))
        b_list.append(np.asarray(b_mat, dtype=float))
    return np.array(states), a_list, b_list


def residual_vector(problem, x0, inputs, refs):
    """Stacked weighted tracking residual of the exact nonlinear rollout."""
    states, _, _ = rollout(problem, x0, inputs)
    inputs = np.asarray(inputs, dtype=float)
    parts = []
    for k in range(problem.horizon):
        parts.append(problem.stage_sqrt_q * (states[k] - refs.states[k]))
        parts.append(problem.input_sqrt_r * (inputs[k] - refs.inputs[k]))
    parts.append(problem.terminal_sqrt_s * (states[-1] - refs.states[-1]))
    return np.concatenate(parts)


def reduced_gradient(problem, x0, inputs, refs):
    """Gradient of 0.5 * ||residual||^2 with respect to the inputs.

    Assembled by a reverse adjoint sweep over the rollout, which shares no
    code path with the forward condensing used inside the library.
    """
    states, a_list, b_list = rollout(problem, x0, inputs)
    inputs = np.asarray(inputs, dtype=float)
    q2 = problem.stage_sqrt_q ** 2
    r2 = problem.input_sqrt_r ** 2
    s2 = problem.terminal_sqrt_s ** 2
    grad = np.zeros_like(inputs)
    adjoint = s2 * (states[-1] - refs.states[-1])
    for k in range(problem.horizon - 1, -1, -1):
        grad[k] = r2 * (inputs[k] - refs.inputs[k]) + b_list[k].T @ adjoint
        adjoint = a_list[k].T @ adjoint + q2 * (states[k] - refs.states[k])
    return grad


def projected_stationarity(problem, x0, inputs, refs):
    """Infinity norm of the projected gradient of the rollout objective."""
    grad = reduced_gradient(problem, x0, inputs, refs)
    u = np.asarray(inputs, dtype=float)
    projected = np.clip(u - grad, problem.u_lower, problem.u_upper)
    return float(np.max(np.abs(projected - u)))


def linearized_input_jacobian(problem, iterate_states, iterate_inputs):
    """Jacobian of the stacked residual with respect to the flat input vector.

    Built column by column: each input coordinate's unit perturbation is
    propagated forward through the dynamics Jacobians, then scattered into
    the weighted residual rows.  This avoids the E/e recursion used by the
    implementation under test.
    """
    n = problem.horizon
    nx, nu = problem.nx, problem.nu
    a_list, b_list = [], []
    for k in range(n):
        _, a_mat, b_mat = problem.dynamics(k, iterate_states[k],
                                           iterate_inputs[k])
        a_list.append(np.asarray(a_mat, dtype=float))
        b_list.append(np.asarray(b_mat, dtype=float))
    rows = n * (nx + nu) + nx
    jac = np.zeros((rows, n * nu))
    for k in range(n):
        for j in range(nu):
            col = np.zeros((n + 1, nx))
            col[k + 1] = b_list[k][:, j]
            for m in range(k + 1, n):
                col[m + 1] = a_list[m] @ col[m]
            full = np.zeros(rows)
            for m in range(n):
                base = m * (nx + nu)
                full[base:base + nx] = problem.stage_sqrt_q * col[m]
                if m == k:
                    full[base + nx + j] = problem.input_sqrt_r[j]
            full[n * (nx + nu):] = problem.terminal_sqrt_s * col[n]
            jac[:, k * nu + j] = full
    return jac


# ---------------------------------------------------------------------------
# Finite differences.
# ---------------------------------------------------------------------------

def fd_jacobian(func, x, step=1e-6):
    """Central finite-difference Jacobian of a vector-valued function."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(func(x), dtype=float)
    jac = np.zeros((f0.size, x.size))
    for i in range(x.size):
        delta = np.zeros_like(x)
        delta[i] = step
        hi = np.asarray(func(x + delta), dtype=float)
        lo = np.asarray(func(x - delta), dtype=float)
        jac[:, i] = (hi - lo) / (2.0 * step)
    return jac


def relative_error(approx, exact, floor=1.0):
    """Elementwise |approx - exact| / max(floor, |exact|), reduced to a max."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    denom = np.maximum(floor, np.abs(exact))
    return float(np.max(np.abs(approx - exact) / denom))


# ---------------------------------------------------------------------------
# Random QP instance generator (shared by unit and acceptance tests).
# ---------------------------------------------------------------------------

def random_box_qp(rng, max_dim=20):
    """Draw a random strictly convex box QP with a controlled spectrum.

    Returns (H, g, lower, upper).  Some instances contain infinite bounds
    and some contain pinned coordinates (lower == upper).
    """
    n = int(rng.integers(1, max_dim + 1))
    basis, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eigs = rng.uniform(0.5, 5.0, size=n)
    hessian = basis @ np.diag(eigs) @ basis.T
    hessian = 0.5 * (hessian + hessian.T)
    gradient = rng.normal(scale=2.0, size=n)
    lower = rng.uniform(-2.0, -0.05, size=n)
    upper = rng.uniform(0.05, 2.0, size=n)
    for i in range(n):
        draw = rng.random()
        if draw < 0.1:
            lower[i] = -np.inf
        elif draw < 0.2:
            upper[i] = np.inf
        elif draw < 0.3:
            pin = rng.uniform(-1.0, 1.0)
            lower[i] = pin
            upper[i] = pin
    return hessian, gradient, lower, upper
