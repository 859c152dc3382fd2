"""Dense box-constrained QP solver (primal active set).

Solves  min 0.5 x'Hx + g'x  s.t.  lower <= x <= upper  for a symmetric H
that is positive definite after Levenberg regularization.  The free-
variable block is solved by Cholesky factorization, refactorized whenever
the active set changes.  Intended for the small dense problems produced
by condensing (tens to ~150 variables).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import QpError, QpIterationError

MAX_ITERATIONS = 100
KKT_TOL = 1e-8
REG_FLOOR = 1e-8

FREE = 0
AT_LOWER = -1
AT_UPPER = 1


@dataclass
class BoxQp:
    """Problem data.  Bounds may be infinite; lower == upper pins a variable."""

    hessian: np.ndarray
    gradient: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.hessian, dtype=float)
        n = H.shape[0]
        if H.shape != (n, n):
            raise QpError("hessian must be square")
        scale = max(1.0, float(np.abs(H).max()))
        if float(np.abs(H - H.T).max()) > 1e-10 * scale:
            raise QpError("hessian must be symmetric")
        self.hessian = 0.5 * (H + H.T)
        self.gradient = np.asarray(self.gradient, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.gradient.shape != (n,) or self.lower.shape != (n,) \
                or self.upper.shape != (n,):
            raise QpError("inconsistent dimensions")
        if np.any(self.lower > self.upper):
            raise QpError("lower bound exceeds upper bound")


@dataclass
class QpSolution:
    """Primal minimizer with the final working set (per-variable status)."""

    x: np.ndarray
    active_set: np.ndarray  # entries FREE / AT_LOWER / AT_UPPER
    iterations: int
    regularization: float

    def objective(self, qp: BoxQp) -> float:
        return float(0.5 * self.x @ qp.hessian @ self.x
                     + qp.gradient @ self.x)


def regularization_shift(H):
    """Levenberg shift lifting the smallest eigenvalue to the floor."""
    n = H.shape[0]
    try:
        # fast path: strictly convex already (vast majority of our calls)
        np.linalg.cholesky(H - REG_FLOOR * np.eye(n))
        return 0.0
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(H)[0])
        return max(0.0, REG_FLOOR - smallest)


def solve_box_qp(qp: BoxQp, warm_start: QpSolution | None = None) -> QpSolution:
    """Primal active-set iteration from a feasible (clamped) start point."""
    H = qp.hessian
    g = qp.gradient
    lo, up = qp.lower, qp.upper
    n = len(g)

    lam = regularization_shift(H)
    if lam > 0.0:
        H = H + lam * np.eye(n)

    if warm_start is not None and warm_start.x.shape == (n,):
        x = np.clip(warm_start.x, lo, up)
        status = warm_start.active_set.copy()
        # drop stale activity markers that no longer touch their bound
        status[(status == AT_LOWER) & (x > lo)] = FREE
        status[(status == AT_UPPER) & (x < up)] = FREE
    else:
        x = np.clip(np.zeros(n), lo, up)
        status = np.zeros(n, dtype=np.int8)
        status[x <= lo] = AT_LOWER
        status[x >= up] = AT_UPPER
    fixed = lo == up
    status[fixed] = AT_LOWER
    x[status == AT_LOWER] = lo[status == AT_LOWER]
    x[status == AT_UPPER] = up[status == AT_UPPER]

    for it in range(1, MAX_ITERATIONS + 1):
        free = status == FREE
        if np.any(free):
            idx = np.where(free)[0]
            rhs = -(g[idx] + H[np.ix_(idx, ~free)] @ x[~free]) \
                if np.any(~free) else -g[idx]
            try:
                cf = cho_factor(H[np.ix_(idx, idx)], lower=True)
            except (LinAlgError, ValueError) as exc:
                raise QpError(
                    "free block not positive definite after "
                    f"regularization {lam:g}") from exc
            target = cho_solve(cf, rhs)
            step = target - x[idx]
        else:
            idx = np.array([], dtype=int)
            step = np.zeros(0)

        # ratio test against the box on the free variables
        alpha = 1.0
        blocker = -1
        block_side = FREE
        for j, i in enumerate(idx):
            if step[j] > 0.0 and x[i] + step[j] > up[i]:
                a = (up[i] - x[i]) / step[j]
                if a < alpha:
                    alpha, blocker, block_side = a, i, AT_UPPER
            elif step[j] < 0.0 and x[i] + step[j] < lo[i]:
                a = (lo[i] - x[i]) / step[j]
                if a < alpha:
                    alpha, blocker, block_side = a, i, AT_LOWER
        if idx.size:
            x[idx] = x[idx] + alpha * step
        if blocker >= 0:
            status[blocker] = block_side
            x[blocker] = up[blocker] if block_side == AT_UPPER else lo[blocker]
            continue

        # at the equality-constrained minimum: check bound multipliers
        grad = H @ x + g
        worst = -1
        worst_viol = KKT_TOL
        for i in np.where((status != FREE) & ~fixed)[0]:
            viol = -grad[i] if status[i] == AT_LOWER else grad[i]
            if viol > worst_viol:
                worst_viol = viol
                worst = i
        if worst < 0:
            return QpSolution(x, status, it, lam)
        status[worst] = FREE

    best = QpSolution(x, status, MAX_ITERATIONS, lam)
    raise QpIterationError("active-set iteration limit exceeded",
                           best_solution=best)


class BoxQpSolver:
    """Stateful wrapper that warm starts each solve from the previous one."""

    def __init__(self):
        self.last: QpSolution | None = None

    def solve(self, qp: BoxQp) -> QpSolution:
        warm = self.last
        if warm is not None and warm.x.shape != qp.gradient.shape:
            warm = None
        sol = solve_box_qp(qp, warm_start=warm)
        self.last = sol
        return sol

    def reset(self):
        self.last = None
