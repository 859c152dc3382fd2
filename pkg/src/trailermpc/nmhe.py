"""Moving-horizon estimation of vehicle state and slip factors.

A sliding window of synchronized measurements is fit by constrained
least squares over the initial window state, the slip parameters, the
applied inputs and per-node additive process corrections.  Each call
performs one Gauss-Newton iteration (real-time iteration scheme, warm
started by shifting).  Information leaving the window is absorbed into
an arrival cost whose weight is propagated by an extended Kalman filter
step evaluated at the smoothed window solution.

Residual weighting follows the inverse-standard-deviation convention:
every residual is divided by its configured sigma, so the quadratic cost
is the sum of squared standardized residuals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import EstimatorError, QpError, SolverError
from .integrator import rk4, rk4_sensitivities
from .model import (Measurement, SlipParams, VehicleGeometry, VehicleState,
                    SLIP_MAX, SLIP_MIN, estimation_jacobians,
                    estimation_rates, measurement_jacobians)
from .qp import BoxQp, BoxQpSolver

log = logging.getLogger(__name__)

NXA = 10  # augmented dimension: 7 states + 3 slip parameters


@dataclass
class EstimatorConfig:
    """Weights, bounds and window geometry of the estimator."""

    window: int = 15
    substeps: int = 2
    output_sigma: np.ndarray = field(default_factory=lambda: np.array(
        [0.03, 0.03, 0.03, 0.03, 0.0175, 0.01]))
    input_sigma: np.ndarray = field(default_factory=lambda: np.array(
        [0.0175, 0.0175]))
    process_weight: float = 1.0e3
    slip_lower: float = SLIP_MIN
    slip_upper: float = SLIP_MAX
    initial_slip: float = 0.625
    prior_sigma: np.ndarray = field(default_factory=lambda: np.array(
        [0.05, 0.05, 0.25, 0.05, 0.05, 0.25, 0.15, 0.25, 0.25, 0.25]))
    arrival_q_state: float | None = None  # None: interval^2 / process_weight
    arrival_q_param: float = 1.0e-8
    displacement_threshold: float = 0.05

    def __post_init__(self):
        self.output_sigma = np.asarray(self.output_sigma, dtype=float)
        self.input_sigma = np.asarray(self.input_sigma, dtype=float)
        self.prior_sigma = np.asarray(self.prior_sigma, dtype=float)
        if self.window < 2:
            raise EstimatorError("window must hold at least 2 nodes")
        if np.any(self.output_sigma <= 0) or np.any(self.input_sigma <= 0) \
                or np.any(self.prior_sigma <= 0) or self.process_weight <= 0:
            raise EstimatorError("all weights must be positive")


@dataclass
class EstimateResult:
    """Estimate at the newest window node plus solve diagnostics."""

    state: VehicleState
    slips: SlipParams
    hitch: float
    input_estimate: np.ndarray
    degraded: bool
    objective: float
    qp_iterations: int
    step_norm: float


class EstimationWindow:
    """Measurement buffer plus decision iterate and arrival-cost anchors."""

    def __init__(self, measurements, anchor, prior_sigma, capacity):
        if len(measurements) < 2:
            raise EstimatorError("window needs at least two measurements")
        self.capacity = int(capacity)
        self.measurements = list(measurements)
        self._check_order()
        self.anchor = np.asarray(anchor, dtype=float).copy()
        # arrival covariance kept as a lower Cholesky factor
        self.arrival_chol = np.diag(np.asarray(prior_sigma, dtype=float))
        self._prior_sigma = np.asarray(prior_sigma, dtype=float).copy()
        m = len(self.measurements)
        self.x0 = self.anchor[:7].copy()
        self.p = self.anchor[7:].copy()
        self.u = np.array([mm.input_array() for mm in self.measurements])
        self.w = np.zeros((m - 1, 7))
        self.states = None        # rollout cache at the current decisions
        self._oldest_lin = None   # linearization used to absorb node 0

    def _check_order(self):
        times = [mm.timestamp for mm in self.measurements]
        if any(t1 - t0 <= 0.0 for t0, t1 in zip(times, times[1:])):
            raise EstimatorError("measurement timestamps must increase")

    def __len__(self):
        return len(self.measurements)

    @property
    def full(self):
        return len(self.measurements) >= self.capacity

    def intervals(self):
        times = [mm.timestamp for mm in self.measurements]
        return np.diff(times)

    def reset_arrival(self):
        self.arrival_chol = np.diag(self._prior_sigma)


def rollout(window: EstimationWindow, geom: VehicleGeometry, substeps: int):
    """States at every node implied by the current decision variables."""
    m = len(window)
    dts = window.intervals()
    states = np.zeros((m, 7))
    states[0] = window.x0
    for k in range(m - 1):
        # the actuators keep moving between samples, so the steering over
        # an interval is taken as the average of the two endpoint readings
        u = 0.5 * (window.u[k] + window.u[k + 1])
        f = rk4(lambda xx: estimation_rates(xx, u, window.p, geom),
                states[k], float(dts[k]), substeps)
        # process corrections act as rate disturbances over the interval
        states[k + 1] = f + float(dts[k]) * window.w[k]
    window.states = states
    return states


def _decision_layout(m):
    """Column offsets of [x0 | p | u_0..u_{m-1} | w_0..w_{m-2}]."""
    iu = 10
    iw = 10 + 2 * m
    ndec = iw + 7 * (m - 1)
    return iu, iw, ndec


def _linearize(window: EstimationWindow, config: EstimatorConfig,
               geom: VehicleGeometry):
    """Residual vector, Jacobian and node sensitivities at the iterate."""
    m = len(window)
    dts = window.intervals()
    iu, iw, ndec = _decision_layout(m)

    G = np.zeros((m, 7, ndec))       # d x_k / d z
    G[0, :, :7] = np.eye(7)
    states = np.zeros((m, 7))
    states[0] = window.x0
    lin0 = None
    for k in range(m - 1):
        u = 0.5 * (window.u[k] + window.u[k + 1])
        x_end, A, B, P = rk4_sensitivities(
            lambda xx: estimation_jacobians(xx, u, window.p, geom),
            states[k], float(dts[k]), config.substeps, nu=2, npar=3)
        states[k + 1] = x_end + float(dts[k]) * window.w[k]
        G[k + 1] = A @ G[k]
        G[k + 1][:, 7:10] += P
        G[k + 1][:, iu + 2 * k:iu + 2 * k + 2] += 0.5 * B
        G[k + 1][:, iu + 2 * k + 2:iu + 2 * k + 4] += 0.5 * B
        G[k + 1][:, iw + 7 * k:iw + 7 * k + 7] += float(dts[k]) * np.eye(7)
        if k == 0:
            # keep the iterate values with the sensitivities so the arrival
            # update can run its mean recursion at this linearization point
            lin0 = (A, B, P, window.x0.copy(), window.p.copy(),
                    x_end.copy())
    window.states = states

    inv_sy = 1.0 / config.output_sigma
    inv_su = 1.0 / config.input_sigma
    sqrt_w = math.sqrt(config.process_weight)
    n_rows = 6 * m + 2 * m + 7 * (m - 1) + NXA
    r = np.zeros(n_rows)
    J = np.zeros((n_rows, ndec))

    at = 0
    meas_lin0 = None
    for k in range(m):
        meas = window.measurements[k]
        h, C, D, Hp = measurement_jacobians(states[k], window.u[k], window.p)
        if k == 0:
            meas_lin0 = (C, D, Hp, h.copy(), meas.output_array())
        r[at:at + 6] = inv_sy * (h - meas.output_array())
        J[at:at + 6] = inv_sy[:, None] * (C @ G[k])
        J[at:at + 6, 7:10] += inv_sy[:, None] * Hp
        J[at:at + 6, iu + 2 * k:iu + 2 * k + 2] += inv_sy[:, None] * D
        at += 6
    for k in range(m):
        meas = window.measurements[k]
        r[at:at + 2] = inv_su * (window.u[k] - meas.input_array())
        J[at, iu + 2 * k] = inv_su[0]
        J[at + 1, iu + 2 * k + 1] = inv_su[1]
        at += 2
    for k in range(m - 1):
        r[at:at + 7] = sqrt_w * window.w[k]
        J[at:at + 7, iw + 7 * k:iw + 7 * k + 7] = sqrt_w * np.eye(7)
        at += 7
    # arrival term ties [x0; p] to the anchors through the inverse factor
    a = np.concatenate([window.x0, window.p]) - window.anchor
    Linv_a = solve_triangular(window.arrival_chol, a, lower=True)
    r[at:at + NXA] = Linv_a
    Linv = solve_triangular(window.arrival_chol, np.eye(NXA), lower=True)
    J[at:at + NXA, :NXA] = Linv

    window._oldest_lin = (lin0, meas_lin0)
    return r, J, G


def estimate_step(window: EstimationWindow, config: EstimatorConfig,
                  geom: VehicleGeometry,
                  qp_solver: BoxQpSolver | None = None):
    """One Gauss-Newton iteration over the current window.

    Returns (state estimate at the newest node, slip estimate, info dict).
    The slip parameters are constrained to their admissible box by the QP.
    """
    if len(window) < 2:
        raise EstimatorError("estimate_step needs at least two measurements")
    m = len(window)
    iu, iw, ndec = _decision_layout(m)
    r, J, _G = _linearize(window, config, geom)

    H = J.T @ J
    g = J.T @ r
    lo = np.full(ndec, -np.inf)
    up = np.full(ndec, np.inf)
    lo[7:10] = config.slip_lower - window.p
    up[7:10] = config.slip_upper - window.p
    qp = BoxQp(H, g, lo, up)
    try:
        sol = qp_solver.solve(qp) if qp_solver is not None \
            else BoxQpSolver().solve(qp)
    except QpError as exc:
        raise SolverError(f"estimator QP failed: {exc}") from exc

    dz = sol.x
    window.x0 = window.x0 + dz[:7]
    window.p = np.clip(window.p + dz[7:10], config.slip_lower,
                       config.slip_upper)
    window.u = window.u + dz[iu:iw].reshape(m, 2)
    window.w = window.w + dz[iw:].reshape(m - 1, 7)

    states = rollout(window, geom, config.substeps)
    newest = states[-1]
    info = {
        "objective": float(0.5 * r @ r),
        "qp_iterations": sol.iterations,
        "step_norm": float(np.abs(dz).max()) if dz.size else 0.0,
    }
    return newest, window.p.copy(), info


def update_arrival_cost(window: EstimationWindow, config: EstimatorConfig):
    """Absorb the oldest node into the arrival cost (smoothed EKF update).

    Must run after an estimate_step so the node-0 linearization taken at
    the solution trajectory is available.  The anchor receives an EKF
    measurement update with the oldest output sample and is then pushed
    one node forward through the first shooting interval; the covariance
    factor is propagated alongside.  If the propagated covariance loses
    positive definiteness the factor is re-initialized to the configured
    prior.
    """
    if window._oldest_lin is None or window.states is None:
        raise EstimatorError("arrival update requires a completed step")
    (A, B, P, x0_it, p_it, x1_model), (C, D, Hp, h0, y0) = window._oldest_lin

    L = window.arrival_chol
    Pcov = L @ L.T
    Ca = np.hstack([C, Hp])
    # the dropped node's steering readings leave the problem with it, so
    # their spread is marginalized into the output noise (feedthrough) and
    # into the one-step prediction below (dynamics use the interval average,
    # hence the quarter weight on this node's share)
    Su = np.diag(config.input_sigma ** 2)
    Ry = np.diag(config.output_sigma ** 2) + D @ Su @ D.T
    S = Ca @ Pcov @ Ca.T + Ry
    K = np.linalg.solve(S, Ca @ Pcov).T
    IKC = np.eye(NXA) - K @ Ca
    Pup = IKC @ Pcov @ IKC.T + K @ Ry @ K.T   # Joseph form
    # measurement update of the anchor: predicted oldest output at the
    # anchor, linearized where the Jacobians were taken
    s_it = np.concatenate([x0_it, p_it])
    innovation = y0 - (h0 + Ca @ (window.anchor - s_it))
    s_post = window.anchor + K @ innovation
    Aa = np.eye(NXA)
    Aa[:7, :7] = A
    Aa[:7, 7:] = P
    dt0 = float(window.intervals()[0])
    if config.arrival_q_state is None:
        # match the variance the window grants one rate correction
        q_state = dt0 * dt0 / config.process_weight
    else:
        q_state = config.arrival_q_state
    Qa = np.diag(np.concatenate([
        np.full(7, q_state), np.full(3, config.arrival_q_param)]))
    Pnew = Aa @ Pup @ Aa.T + Qa
    Pnew[:7, :7] += 0.25 * (B @ Su @ B.T)
    Pnew = 0.5 * (Pnew + Pnew.T)
    try:
        window.arrival_chol = np.linalg.cholesky(Pnew)
    except np.linalg.LinAlgError:
        log.warning("arrival covariance lost positive definiteness; "
                    "re-initializing to the prior")
        window.reset_arrival()
    # the anchor moves one node forward through the interval map
    anchor_x = x1_model + A @ (s_post[:7] - x0_it) + P @ (s_post[7:] - p_it)
    window.anchor = np.concatenate([anchor_x, s_post[7:]])


def slide_window(window: EstimationWindow, measurement: Measurement,
                 config: EstimatorConfig):
    """Append a measurement; absorb the oldest node first when full."""
    if measurement.timestamp <= window.measurements[-1].timestamp:
        raise EstimatorError("measurement timestamps must increase")
    if window.full:
        update_arrival_cost(window, config)
        window.measurements.pop(0)
        window.x0 = window.anchor[:7].copy()
        window.u = window.u[1:]
        window.w = window.w[1:]
    window.measurements.append(measurement)
    window.u = np.vstack([window.u, measurement.input_array()])
    window.w = np.vstack([window.w, np.zeros(7)])
    window.states = None
    window._oldest_lin = None


def cold_start(measurements, config: EstimatorConfig) -> EstimationWindow:
    """Build a window once the vehicle has moved far enough to give a
    displacement heading.  Raises EstimatorError while displacement is
    below the threshold."""
    if len(measurements) < 2:
        raise EstimatorError("cold start needs two position fixes")
    first = measurements[0]
    last = measurements[-1]
    dxt = last.tractor_x - first.tractor_x
    dyt = last.tractor_y - first.tractor_y
    dxi = last.trailer_x - first.trailer_x
    dyi = last.trailer_y - first.trailer_y
    if math.hypot(dxt, dyt) < config.displacement_threshold:
        raise EstimatorError("displacement below cold-start threshold")
    yaw_t = math.atan2(dyt, dxt)
    yaw_i = math.atan2(dyi, dxi) if math.hypot(dxi, dyi) \
        >= config.displacement_threshold else yaw_t
    anchor = np.array([
        first.tractor_x, first.tractor_y, yaw_t,
        first.trailer_x, first.trailer_y, yaw_i,
        max(first.speed, 0.0),
        config.initial_slip, config.initial_slip, config.initial_slip])
    return EstimationWindow(measurements, anchor, config.prior_sigma,
                            config.window)


class MovingHorizonEstimator:
    """Harness-facing wrapper: feeds measurements, returns estimates."""

    def __init__(self, config: EstimatorConfig, geom: VehicleGeometry):
        self.config = config
        self.geom = geom
        self.window: EstimationWindow | None = None
        self._pending: list[Measurement] = []
        self._qp = BoxQpSolver()
        self._last: EstimateResult | None = None

    @property
    def ready(self) -> bool:
        return self.window is not None

    def update(self, measurement: Measurement) -> EstimateResult | None:
        """Process one sample; None until the cold start succeeds."""
        if self.window is None:
            self._pending.append(measurement)
            try:
                self.window = cold_start(self._pending, self.config)
            except EstimatorError:
                return None
            self._pending = []
        else:
            slide_window(self.window, measurement, self.config)

        try:
            newest, p, info = estimate_step(self.window, self.config,
                                            self.geom, self._qp)
        except SolverError:
            log.warning("estimator solve failed; holding previous estimate")
            if self._last is None:
                raise
            self._last = EstimateResult(
                self._last.state, self._last.slips, self._last.hitch,
                self._last.input_estimate, True, float("nan"), 0, 0.0)
            return self._last
        u_new = self.window.u[-1]
        hitch = float(newest[2] - newest[5] - p[2] * u_new[1])
        state = VehicleState.from_array(
            np.concatenate([newest[:6], [max(newest[6], 0.0)]]))
        self._last = EstimateResult(
            state=state, slips=SlipParams.from_array(p), hitch=hitch,
            input_estimate=u_new.copy(), degraded=False,
            objective=info["objective"], qp_iterations=info["qp_iterations"],
            step_norm=info["step_norm"])
        return self._last
