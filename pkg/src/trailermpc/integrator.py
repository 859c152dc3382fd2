"""Fixed-step RK4 integration with forward sensitivity propagation.

The sensitivity path integrates the variational equations alongside the
state using the same RK4 stages, so the returned Jacobian blocks are the
exact derivatives of the discrete map (not a finite-difference estimate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError
from .model import (ControlInput, SlipParams, VehicleGeometry, VehicleState,
                    estimation_jacobians, estimation_rates)

DEFAULT_SUBSTEPS = 2  # per 0.2 s sampling period


@dataclass(frozen=True)
class ShootingResult:
    """End state of one shooting interval and its sensitivities."""

    end_state: np.ndarray     # (n,)
    sens_state: np.ndarray    # (n, n)  d end / d start
    sens_input: np.ndarray    # (n, m)
    sens_param: np.ndarray    # (n, p)


def rk4(f, x, dt, steps):
    """Classical RK4 with ``steps`` equal substeps; f maps x -> xdot."""
    if steps < 1:
        raise IntegrationError("need at least one substep")
    h = dt / steps
    x = np.asarray(x, dtype=float).copy()
    for i in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationError("state became non-finite", substep=i)
    return x

def rk4_sensitivities(f_jac, x, dt, steps, nu, npar):
    """RK4 map together with exact state/input/parameter sensitivities.

    ``f_jac(x)`` must return ``(f, A, B, P)`` where A, B, P are the
    Jacobians of the vector field wrt state, input and parameters at x
    (input and parameters held constant over the interval).
    """
    if steps < 1:
        raise IntegrationError("need at least one substep")
    n = len(x)
    h = dt / steps
    x = np.asarray(x, dtype=float).copy()
    # stacked sensitivity block [Sx | Su | Sp]
    S = np.zeros((n, n + nu + npar))
    S[:, :n] = np.eye(n)
    tail = np.zeros((n, nu + npar))
    for i in range(steps):
        f1, A1, B1, P1 = f_jac(x)
        tail[:, :nu] = B1
        tail[:, nu:] = P1
        K1 = np.hstack([A1 @ S[:, :n], A1 @ S[:, n:] + tail])

        x2 = x + 0.5 * h * f1
        f2, A2, B2, P2 = f_jac(x2)
        S2 = S + 0.5 * h * K1
        tail[:, :nu] = B2
        tail[:, nu:] = P2
        K2 = np.hstack([A2 @ S2[:, :n], A2 @ S2[:, n:] + tail])

        x3 = x + 0.5 * h * f2
        f3, A3, B3, P3 = f_jac(x3)
        S3 = S + 0.5 * h * K2
        tail[:, :nu] = B3
        tail[:, nu:] = P3
        K3 = np.hstack([A3 @ S3[:, :n], A3 @ S3[:, n:] + tail])

        x4 = x + h * f3
        f4, A4, B4, P4 = f_jac(x4)
        S4 = S + h * K3
        tail[:, :nu] = B4
        tail[:, nu:] = P4
        K4 = np.hstack([A4 @ S4[:, :n], A4 @ S4[:, n:] + tail])

        x = x + (h / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        S = S + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        if not np.all(np.isfinite(x)):
            raise IntegrationError("state became non-finite", substep=i)
    return x, S[:, :n], S[:, n:n + nu], S[:, n + nu:]


# ---------------------------------------------------------------------------
# vehicle-model wrappers (hitch-eliminated 7-state propagation model)
# ---------------------------------------------------------------------------

def integrate(start: VehicleState, control: ControlInput, slips: SlipParams,
              geom: VehicleGeometry, dt: float,
              steps: int = DEFAULT_SUBSTEPS) -> VehicleState:
    """Propagate the estimation-model state over one interval."""
    u = control.as_array()
    p = slips.as_array()
    x = rk4(lambda xx: estimation_rates(xx, u, p, geom),
            start.as_array(), dt, steps)
    return VehicleState.from_array(x)


def integrate_with_sensitivities(start: VehicleState, control: ControlInput,
                                 slips: SlipParams, geom: VehicleGeometry,
                                 dt: float,
                                 steps: int = DEFAULT_SUBSTEPS) -> ShootingResult:
    """Propagate and return exact sensitivities wrt state, input, slips."""
    u = control.as_array()
    p = slips.as_array()
    x, Sx, Su, Sp = rk4_sensitivities(
        lambda xx: estimation_jacobians(xx, u, p, geom),
        start.as_array(), dt, steps, nu=2, npar=3)
    return ShootingResult(x, Sx, Su, Sp)
