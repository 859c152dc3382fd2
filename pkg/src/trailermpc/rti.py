"""Real-time iteration engine for tracking optimal control problems.

One call performs exactly one Gauss-Newton step: linearize the shooting
map at the current iterate, condense the state trajectory onto the input
sequence, solve a dense box QP, and expand with full step length.  Run
once per sample (warm started by shifting) this is the classic real-time
iteration; run repeatedly on a frozen anchor it converges to a KKT point
of the nonlinear program.

The problem description is generic over the discrete dynamics, so the
same engine serves every controller flavor and the test problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import QpError, SolverError
from .qp import BoxQp, BoxQpSolver, QpSolution, solve_box_qp

# dynamics callable: (node, x, u) -> (x_next, A, B)
DiscreteDynamics = Callable[[int, np.ndarray, np.ndarray], tuple]


@dataclass
class OcpProblem:
    """Tracking OCP over a fixed horizon with box-constrained inputs.

    The quadratic tracking cost is stored as square roots of the diagonal
    stage/input/terminal weights, matching the residual formulation used
    by the Gauss-Newton step.
    """

    horizon: int
    sample_time: float
    nx: int
    nu: int
    dynamics: DiscreteDynamics
    stage_sqrt_q: np.ndarray     # (nx,)
    input_sqrt_r: np.ndarray     # (nu,)
    terminal_sqrt_s: np.ndarray  # (nx,)
    u_lower: np.ndarray          # (nu,)
    u_upper: np.ndarray          # (nu,)

    def __post_init__(self):
        if self.horizon < 1:
            raise SolverError("horizon must be at least 1")
        if self.sample_time <= 0.0:
            raise SolverError("sample time must be positive")
        for name in ("stage_sqrt_q", "input_sqrt_r", "terminal_sqrt_s",
                     "u_lower", "u_upper"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.stage_sqrt_q < 0) or np.any(self.input_sqrt_r < 0) \
                or np.any(self.terminal_sqrt_s < 0):
            raise SolverError("weights must be non-negative")
        if np.any(self.u_lower > self.u_upper):
            raise SolverError("input lower bound exceeds upper bound")


@dataclass
class References:
    """Per-node tracking targets."""

    states: np.ndarray  # (N+1, nx)
    inputs: np.ndarray  # (N, nu)


@dataclass
class RtiIterate:
    """Current multiple-shooting iterate (state nodes plus input nodes)."""

    states: np.ndarray  # (N+1, nx)
    inputs: np.ndarray  # (N, nu)

    def copy(self):
        return RtiIterate(self.states.copy(), self.inputs.copy())


@dataclass
class RtiStepInfo:
    """Diagnostics of one Gauss-Newton step."""

    objective: float          # 0.5 * ||residual||^2 at the linearization point
    step_norm: float
    defect_norm: float
    qp: QpSolution
    stationarity: float = field(default=float("nan"))


def cold_start_iterate(problem: OcpProblem, x0, u0=None) -> RtiIterate:
    """Roll the dynamics out from x0 under a constant input guess."""
    N, nx, nu = problem.horizon, problem.nx, problem.nu
    if u0 is None:
        u0 = np.zeros(nu)
    u0 = np.clip(np.asarray(u0, dtype=float), problem.u_lower, problem.u_upper)
    states = np.zeros((N + 1, nx))
    inputs = np.tile(u0, (N, 1))
    states[0] = x0
    for k in range(N):
        try:
            states[k + 1] = problem.dynamics(k, states[k], inputs[k])[0]
        except Exception as exc:
            raise SolverError(f"cold-start rollout failed at node {k}",
                              node=k) from exc
    return RtiIterate(states, inputs)


def _linearize(problem: OcpProblem, iterate: RtiIterate, x0, refs):
    """Build residual vector, Jacobian and expansion data at the iterate."""
    N, nx, nu = problem.horizon, problem.nx, problem.nu
    nz = N * nu
    sq = problem.stage_sqrt_q
    sr = problem.input_sqrt_r
    ss = problem.terminal_sqrt_s

    # sensitivities of each state node wrt stacked inputs, with the
    # affine part carrying the anchor mismatch and shooting defects
    E = np.zeros((N + 1, nx, nz))
    e = np.zeros((N + 1, nx))
    e[0] = np.asarray(x0, dtype=float) - iterate.states[0]
    defect_norm = 0.0
    for k in range(N):
        try:
            x_next, A, B = problem.dynamics(k, iterate.states[k],
                                            iterate.inputs[k])
        except Exception as exc:
            raise SolverError(f"dynamics evaluation failed at node {k}",
                              node=k) from exc
        if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(A))
                and np.all(np.isfinite(B))):
            raise SolverError(f"non-finite linearization at node {k}", node=k)
        d = x_next - iterate.states[k + 1]
        defect_norm = max(defect_norm, float(np.abs(d).max()))
        E[k + 1] = A @ E[k]
        E[k + 1][:, k * nu:(k + 1) * nu] += B
        e[k + 1] = A @ e[k] + d

    rows = N * (nx + nu) + nx
    r = np.zeros(rows)
    J = np.zeros((rows, nz))
    at = 0
    for k in range(N):
        r[at:at + nx] = sq * (iterate.states[k] + e[k] - refs.states[k])
        J[at:at + nx] = sq[:, None] * E[k]
        at += nx
        r[at:at + nu] = sr * (iterate.inputs[k] - refs.inputs[k])
        for j in range(nu):
            J[at + j, k * nu + j] = sr[j]
        at += nu
    r[at:] = ss * (iterate.states[N] + e[N] - refs.states[N])
    J[at:] = ss[:, None] * E[N]
    return r, J, E, e, defect_norm


def rti_step(problem: OcpProblem, iterate: RtiIterate, x0, refs: References,
             qp_solver: BoxQpSolver | None = None):
    """One Gauss-Newton iteration; returns the updated iterate and info."""
    N, nu = problem.horizon, problem.nu
    r, J, E, e, defect_norm = _linearize(problem, iterate, x0, refs)

    H = J.T @ J
    g = J.T @ r
    u_flat = iterate.inputs.reshape(-1)
    lo = np.tile(problem.u_lower, N) - u_flat
    up = np.tile(problem.u_upper, N) - u_flat
    qp = BoxQp(H, g, lo, up)
    try:
        sol = qp_solver.solve(qp) if qp_solver is not None else solve_box_qp(qp)
    except QpError as exc:
        raise SolverError(f"condensed QP failed: {exc}") from exc

    dz = sol.x
    new = iterate.copy()
    new.inputs = u_flat + dz
    new.inputs = new.inputs.reshape(N, nu)
    # exact clamp: the QP already enforces the box, this removes roundoff
    new.inputs = np.clip(new.inputs, problem.u_lower, problem.u_upper)
    new.states = iterate.states + e + (E @ dz)

    info = RtiStepInfo(
        objective=float(0.5 * r @ r),
        step_norm=float(np.abs(dz).max()) if dz.size else 0.0,
        defect_norm=defect_norm,
        qp=sol,
        stationarity=_projected_gradient_norm(g, u_flat, problem, N),
    )
    return new, info


def _projected_gradient_norm(g, u_flat, problem, N):
    """Infinity norm of the projected objective gradient at the iterate."""
    lo = np.tile(problem.u_lower, N)
    up = np.tile(problem.u_upper, N)
    proj = np.clip(u_flat - g, lo, up)
    return float(np.abs(proj - u_flat).max()) if g.size else 0.0


def nlp_objective(problem: OcpProblem, x0, inputs, refs: References) -> float:
    """Exact rollout objective 0.5 * ||residual||^2 for a given input plan."""
    N, nx = problem.horizon, problem.nx
    sq = problem.stage_sqrt_q
    sr = problem.input_sqrt_r
    ss = problem.terminal_sqrt_s
    x = np.asarray(x0, dtype=float)
    total = 0.0
    for k in range(N):
        rx = sq * (x - refs.states[k])
        ru = sr * (inputs[k] - refs.inputs[k])
        total += rx @ rx + ru @ ru
        x = problem.dynamics(k, x, inputs[k])[0]
    rT = ss * (x - refs.states[N])
    total += rT @ rT
    return 0.5 * float(total)


def shift_warm_start(problem: OcpProblem, iterate: RtiIterate) -> RtiIterate:
    """Advance the iterate one sample: shift, duplicate the last input,
    re-integrate the terminal node."""
    N = problem.horizon
    if N < 2:
        raise SolverError("shifting requires a horizon of at least 2")
    new = iterate.copy()
    new.states[:-1] = iterate.states[1:]
    new.inputs[:-1] = iterate.inputs[1:]
    new.inputs[-1] = iterate.inputs[-1]
    try:
        new.states[-1] = problem.dynamics(N - 1, new.states[-2],
                                          new.inputs[-1])[0]
    except Exception as exc:
        raise SolverError("terminal re-integration failed",
                          node=N - 1) from exc
    return new
