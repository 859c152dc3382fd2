"""Kinematic model of a steered tractor towing an actively steered trailer.

State vector (7 entries, SI units, angles in rad and unwrapped):

    x = [x_t, y_t, heading_t, x_i, y_i, heading_i, v]

where (x_t, y_t) is the tractor rear-axle position, heading_t the tractor
yaw, (x_i, y_i) the trailer axle position, heading_i the trailer yaw and
v the wheel (odometry) speed.  Ground speed is the wheel speed scaled by
the longitudinal slip factor.  Inputs are the tractor steering angle and
the trailer steering angle at the hitch actuator.

Three slip factors in [0.25, 1] scale the wheel speed and the two
steering angles.  The hitch angle closes the kinematic chain:

    trailer_steer_eff + hitch = heading_t - heading_i

which also serves as the predicted hitch-angle output of the measurement
model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelError

# physical steering limits (rad)
STEER_LIMIT_TRACTOR = math.radians(35.0)
STEER_LIMIT_TRAILER = math.radians(25.0)

# admissible slip-factor range
SLIP_MIN = 0.25
SLIP_MAX = 1.0

NX = 7  # full state dimension
NY = 6  # measurement dimension
NP = 3  # slip-parameter dimension


def _require_finite(name, *values):
    for v in values:
        if not math.isfinite(v):
            raise ModelError(f"non-finite value in {name}: {v!r}")


@dataclass(frozen=True)
class VehicleGeometry:
    """Fixed linkage dimensions (m)."""

    tractor_wheelbase: float = 1.4
    trailer_wheelbase: float = 1.3
    hitch_offset: float = 1.1  # distance from tractor axle to trailer joint

    def __post_init__(self):
        _require_finite("VehicleGeometry", self.tractor_wheelbase,
                        self.trailer_wheelbase, self.hitch_offset)
        if min(self.tractor_wheelbase, self.trailer_wheelbase,
               self.hitch_offset) <= 0.0:
            raise ModelError("geometry lengths must be positive")


@dataclass(frozen=True)
class SlipParams:
    """Slip factors scaling wheel speed and the two steering angles."""

    longitudinal: float = 1.0
    tractor_steer: float = 1.0
    trailer_steer: float = 1.0

    def __post_init__(self):
        _require_finite("SlipParams", self.longitudinal, self.tractor_steer,
                        self.trailer_steer)
        for v in (self.longitudinal, self.tractor_steer, self.trailer_steer):
            if not (SLIP_MIN <= v <= SLIP_MAX):
                raise ModelError(
                    f"slip factor {v} outside [{SLIP_MIN}, {SLIP_MAX}]")

    def as_array(self):
        return np.array([self.longitudinal, self.tractor_steer,
                         self.trailer_steer])

    @staticmethod
    def from_array(p):
        return SlipParams(float(p[0]), float(p[1]), float(p[2]))


@dataclass(frozen=True)
class VehicleState:
    """Planar pose of both bodies plus wheel speed.  Yaw is unwrapped."""

    tractor_x: float
    tractor_y: float
    tractor_heading: float
    trailer_x: float
    trailer_y: float
    trailer_heading: float
    speed: float

    def __post_init__(self):
        _require_finite("VehicleState", self.tractor_x, self.tractor_y,
                        self.tractor_heading, self.trailer_x, self.trailer_y,
                        self.trailer_heading, self.speed)
        if self.speed < 0.0:
            raise ModelError("wheel speed must be non-negative")

    def as_array(self):
        return np.array([self.tractor_x, self.tractor_y, self.tractor_heading,
                         self.trailer_x, self.trailer_y, self.trailer_heading,
                         self.speed])

    @staticmethod
    def from_array(x):
        return VehicleState(*(float(v) for v in x[:NX]))


@dataclass(frozen=True)
class ControlInput:
    """Commanded steering angles (rad), limited by the actuator hardware."""

    tractor_steer: float
    trailer_steer: float

    def __post_init__(self):
        _require_finite("ControlInput", self.tractor_steer, self.trailer_steer)
        if abs(self.tractor_steer) > STEER_LIMIT_TRACTOR + 1e-12:
            raise ModelError("tractor steering exceeds the 35 deg limit")
        if abs(self.trailer_steer) > STEER_LIMIT_TRAILER + 1e-12:
            raise ModelError("trailer steering exceeds the 25 deg limit")

    def as_array(self):
        return np.array([self.tractor_steer, self.trailer_steer])


@dataclass(frozen=True)
class HitchAngle:
    """Angle between the tractor and the drawbar (rad)."""

    angle: float

    def __post_init__(self):
        _require_finite("HitchAngle", self.angle)
        if abs(self.angle) >= math.pi:
            raise ModelError("hitch angle must lie strictly inside (-pi, pi)")


@dataclass(frozen=True)
class Measurement:
    """One synchronized sensor sample.  Timestamps must be increasing."""

    tractor_x: float
    tractor_y: float
    trailer_x: float
    trailer_y: float
    hitch_angle: float
    speed: float
    tractor_steer: float
    trailer_steer: float
    timestamp: float

    def output_array(self):
        """Stacked output vector matching ``measurement_function``."""
        return np.array([self.tractor_x, self.tractor_y, self.trailer_x,
                         self.trailer_y, self.hitch_angle, self.speed])

    def input_array(self):
        return np.array([self.tractor_steer, self.trailer_steer])


@dataclass(frozen=True)
class NoiseConfig:
    """Standard deviations of the simulated sensors."""

    position: float = 0.03     # m, both bodies
    hitch_angle: float = 0.0175  # rad
    speed: float = 0.1         # m/s
    steer: float = 0.0175      # rad, measured steering angles

    def scaled(self, factor):
        return NoiseConfig(self.position * factor, self.hitch_angle * factor,
                           self.speed * factor, self.steer * factor)


# ---------------------------------------------------------------------------
# continuous-time kinematics
# ---------------------------------------------------------------------------

def rates_raw(x, tractor_steer, trailer_steer, hitch, mu, kappa, eta, geom):
    """Time derivative of the 7-state vector with an explicit hitch angle.

    This is the plant-side form: the hitch angle is supplied from outside
    and the trailer yaw rate is driven by (trailer_steer_eff + hitch).
    The wheel speed is modeled as constant within a step.
    """
    lt = geom.tractor_wheelbase
    li = geom.trailer_wheelbase
    off = geom.hitch_offset
    v = x[6]
    c = mu * v
    tk = math.tan(kappa * tractor_steer)
    a = eta * trailer_steer + hitch
    return np.array([
        c * math.cos(x[2]),
        c * math.sin(x[2]),
        c * tk / lt,
        c * math.cos(x[5]),
        c * math.sin(x[5]),
        (c / li) * (math.sin(a) - (off / lt) * tk * math.cos(a)),
        0.0,
    ])


def state_derivative(state: VehicleState, control: ControlInput,
                     hitch: HitchAngle, slips: SlipParams,
                     geom: VehicleGeometry) -> np.ndarray:
    """Validated wrapper around :func:`rates_raw` for API use."""
    return rates_raw(state.as_array(), control.tractor_steer,
                     control.trailer_steer, hitch.angle, slips.longitudinal,
                     slips.tractor_steer, slips.trailer_steer, geom)


def estimation_rates(x, u, p, geom):
    """Derivative of the self-contained (hitch-eliminated) 7-state model.

    Substituting the chain closure, the trailer yaw rate depends on the
    yaw difference heading_t - heading_i instead of the measured hitch
    angle.  This form is what the estimator propagates; the trailer
    steering then only enters through the hitch-angle output equation.
    """
    lt = geom.tractor_wheelbase
    li = geom.trailer_wheelbase
    off = geom.hitch_offset
    mu, kappa = p[0], p[1]
    c = mu * x[6]
    tk = math.tan(kappa * u[0])
    gam = x[2] - x[5]
    return np.array([
        c * math.cos(x[2]),
        c * math.sin(x[2]),
        c * tk / lt,
        c * math.cos(x[5]),
        c * math.sin(x[5]),
        (c / li) * (math.sin(gam) - (off / lt) * tk * math.cos(gam)),
        0.0,
    ])


def estimation_jacobians(x, u, p, geom):
    """(f, A, B, P) of :func:`estimation_rates` wrt state, input, params."""
    lt = geom.tractor_wheelbase
    li = geom.trailer_wheelbase
    off = geom.hitch_offset
    mu, kappa = p[0], p[1]
    tht, thi, v = x[2], x[5], x[6]
    c = mu * v
    st, ct = math.sin(tht), math.cos(tht)
    si, ci = math.sin(thi), math.cos(thi)
    ka = kappa * u[0]
    tk = math.tan(ka)
    sec2 = 1.0 + tk * tk
    gam = tht - thi
    sg, cg = math.sin(gam), math.cos(gam)
    roff = off / lt

    f = np.array([c * ct, c * st, c * tk / lt, c * ci, c * si,
                  (c / li) * (sg - roff * tk * cg), 0.0])

    A = np.zeros((7, 7))
    A[0, 2] = -c * st
    A[0, 6] = mu * ct
    A[1, 2] = c * ct
    A[1, 6] = mu * st
    A[2, 6] = mu * tk / lt
    A[3, 5] = -c * si
    A[3, 6] = mu * ci
    A[4, 5] = c * ci
    A[4, 6] = mu * si
    dyaw = (c / li) * (cg + roff * tk * sg)
    A[5, 2] = dyaw
    A[5, 5] = -dyaw
    A[5, 6] = (mu / li) * (sg - roff * tk * cg)

    B = np.zeros((7, 2))
    B[2, 0] = c * kappa * sec2 / lt
    B[5, 0] = -(c / li) * roff * kappa * sec2 * cg

    P = np.zeros((7, 3))
    if mu != 0.0:
        P[:, 0] = f / mu
    P[2, 1] = c * u[0] * sec2 / lt
    P[5, 1] = -(c / li) * roff * u[0] * sec2 * cg
    # trailer-steer slip does not enter the propagation model
    return f, A, B, P


def measurement_function(x, u, p):
    """Predicted sensor outputs [x_t, y_t, x_i, y_i, hitch, speed].

    The hitch prediction inverts the chain closure:
    hitch = heading_t - heading_i - trailer_steer_eff.
    """
    return np.array([x[0], x[1], x[3], x[4],
                     x[2] - x[5] - p[2] * u[1], x[6]])


def measurement_jacobians(x, u, p):
    """(h, C, D, Hp): output plus Jacobians wrt state, input and params."""
    h = measurement_function(x, u, p)
    C = np.zeros((6, 7))
    C[0, 0] = 1.0
    C[1, 1] = 1.0
    C[2, 3] = 1.0
    C[3, 4] = 1.0
    C[4, 2] = 1.0
    C[4, 5] = -1.0
    C[5, 6] = 1.0
    D = np.zeros((6, 2))
    D[4, 1] = -p[2]
    Hp = np.zeros((6, 3))
    Hp[4, 2] = -u[1]
    return h, C, D, Hp


def measurement_from_state(state: VehicleState, control: ControlInput,
                           slips: SlipParams) -> np.ndarray:
    """Validated wrapper around :func:`measurement_function`."""
    return measurement_function(state.as_array(), control.as_array(),
                                slips.as_array())


# ---------------------------------------------------------------------------
# prediction sub-models used by the controllers
#
# Subsystem controllers predict with the measured hitch angle held fixed
# over the horizon, so each body reduces to a 3-state block; the trailer
# block is driven by both steering angles.  Joint predictions over all six
# states instead re-close the hitch angle along the predicted trajectory
# (the same geometric closure the plant applies), so the tractor-to-trailer
# alignment coupling stays live over the horizon.
# ---------------------------------------------------------------------------

def tractor_block_jacobians(x, steer, mu, kappa, v, geom):
    """(f, A, B) of the 3-state tractor block [x_t, y_t, heading_t]."""
    lt = geom.tractor_wheelbase
    c = mu * v
    st, ct = math.sin(x[2]), math.cos(x[2])
    ka = kappa * steer
    tk = math.tan(ka)
    f = np.array([c * ct, c * st, c * tk / lt])
    A = np.zeros((3, 3))
    A[0, 2] = -c * st
    A[1, 2] = c * ct
    B = np.array([0.0, 0.0, c * kappa * (1.0 + tk * tk) / lt])
    return f, A, B


def trailer_block_jacobians(x, tractor_steer, trailer_steer, hitch,
                            mu, kappa, eta, v, geom):
    """(f, A, B) of the trailer block with the hitch angle frozen.

    B carries two columns: sensitivity to the tractor steering (the
    coupling channel) and to the trailer steering.
    """
    lt = geom.tractor_wheelbase
    li = geom.trailer_wheelbase
    off = geom.hitch_offset
    c = mu * v
    si, ci = math.sin(x[2]), math.cos(x[2])
    tk = math.tan(kappa * tractor_steer)
    sec2 = 1.0 + tk * tk
    a = eta * trailer_steer + hitch
    sa, ca = math.sin(a), math.cos(a)
    roff = off / lt
    f = np.array([c * ci, c * si, (c / li) * (sa - roff * tk * ca)])
    A = np.zeros((3, 3))
    A[0, 2] = -c * si
    A[1, 2] = c * ci
    B = np.zeros((3, 2))
    B[2, 0] = -(c / li) * roff * kappa * sec2 * ca
    B[2, 1] = (c / li) * eta * (ca + roff * tk * sa)
    return f, A, B


def coupled_block_jacobians(x, tractor_steer, trailer_steer,
                            trailer_steer_ref, mu, kappa, eta, v, geom):
    """(f, A, B) of the joint 6-state block [tractor 3 | trailer 3].

    The hitch angle is closed against the predicted yaw difference, so the
    pull angle is (heading_t - heading_i) plus the articulation change from
    steering the trailer away from ``trailer_steer_ref`` (the last applied
    value, which the closure has already absorbed).  B column 0 is the
    tractor steering, column 1 the trailer steering.
    """
    lt = geom.tractor_wheelbase
    li = geom.trailer_wheelbase
    off = geom.hitch_offset
    c = mu * v
    st, ct = math.sin(x[2]), math.cos(x[2])
    si, ci = math.sin(x[5]), math.cos(x[5])
    tk = math.tan(kappa * tractor_steer)
    sec2 = 1.0 + tk * tk
    a = (x[2] - x[5]) + eta * (trailer_steer - trailer_steer_ref)
    sa, ca = math.sin(a), math.cos(a)
    roff = off / lt
    f = np.array([c * ct, c * st, c * tk / lt,
                  c * ci, c * si, (c / li) * (sa - roff * tk * ca)])
    A = np.zeros((6, 6))
    A[0, 2] = -c * st
    A[1, 2] = c * ct
    A[3, 5] = -c * si
    A[4, 5] = c * ci
    dpsidot_da = (c / li) * (ca + roff * tk * sa)
    A[5, 2] = dpsidot_da
    A[5, 5] = -dpsidot_da
    B = np.zeros((6, 2))
    B[2, 0] = c * kappa * sec2 / lt
    B[5, 0] = -(c / li) * roff * kappa * sec2 * ca
    B[5, 1] = eta * dpsidot_da
    return f, A, B


# ---------------------------------------------------------------------------
# plant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActuatorConfig:
    """First-order steering actuator lags (s) and rate limits (rad/s)."""

    tractor_lag: float = 0.3
    trailer_lag: float = 0.6
    tractor_rate: float = 1.0
    trailer_rate: float = 0.8


def constant_profile(value):
    """Speed or slip profile holding a constant value."""
    def profile(_t):
        return value
    return profile


def piecewise_linear_profile(breakpoints):
    """Profile interpolating (time, value) pairs, clamped at the ends."""
    pts = sorted((float(t), float(v)) for t, v in breakpoints)
    times = np.array([p[0] for p in pts])
    vals = np.array([p[1] for p in pts])

    def profile(t):
        return float(np.interp(t, times, vals))

    return profile


class Plant:
    """Ground-truth simulator for the tractor-trailer pair.

    Integrates the kinematics with a fine fixed inner step, maintaining
    the hitch angle by the geometric chain closure at every instant, so
    the recorded hitch always equals the yaw difference minus the slipped
    trailer steering.  Steering commands pass through rate-limited
    first-order actuators.
    """

    def __init__(self, initial_state: VehicleState, geom: VehicleGeometry,
                 slips=SlipParams(0.9, 0.9, 0.9), speed_profile=None,
                 actuators: ActuatorConfig = ActuatorConfig(),
                 noise: NoiseConfig = NoiseConfig(), inner_step=0.02,
                 initial_hitch=0.0):
        if inner_step <= 0.0:
            raise ModelError("inner integration step must be positive")
        self.geom = geom
        self.actuators = actuators
        self.noise = noise
        self.inner_step = float(inner_step)
        if callable(slips):
            self._slips = slips
        else:
            self._slips = constant_profile(slips)
        if speed_profile is None:
            speed_profile = constant_profile(initial_state.speed)
        self._speed = speed_profile
        self.time = 0.0
        self.state = initial_state
        self.hitch = float(initial_hitch)
        self.steer_actual = np.zeros(2)

    def slips_at(self, t) -> SlipParams:
        return self._slips(t)

    def _ode(self, t, z, cmd):
        """Rates of [7-state vehicle, 2 actuator angles] at time t."""
        sl = self._slips(t)
        x = z[:7].copy()
        x[6] = self._speed(t)
        # the hitch angle satisfies the chain closure at every instant, so
        # the pull angle eta * steer + hitch equals the current yaw difference
        hitch = (z[2] - z[5]) - sl.trailer_steer * z[8]
        rates = rates_raw(x, z[7], z[8], hitch, sl.longitudinal,
                          sl.tractor_steer, sl.trailer_steer, self.geom)
        act = self.actuators
        r_t = (cmd[0] - z[7]) / act.tractor_lag if act.tractor_lag > 0 else 0.0
        r_i = (cmd[1] - z[8]) / act.trailer_lag if act.trailer_lag > 0 else 0.0
        r_t = min(max(r_t, -act.tractor_rate), act.tractor_rate)
        r_i = min(max(r_i, -act.trailer_rate), act.trailer_rate)
        if act.tractor_lag <= 0.0:
            z[7] = cmd[0]
        if act.trailer_lag <= 0.0:
            z[8] = cmd[1]
        return np.concatenate([rates, [r_t, r_i]])

    def step(self, command: ControlInput, dt: float) -> VehicleState:
        """Advance the truth by one sampling period."""
        if dt <= 0.0:
            raise ModelError("plant step requires dt > 0")
        cmd = np.array([command.tractor_steer, command.trailer_steer])
        act = self.actuators
        z = np.concatenate([self.state.as_array(), self.steer_actual])
        if act.tractor_lag <= 0.0:
            z[7] = cmd[0]
        if act.trailer_lag <= 0.0:
            z[8] = cmd[1]
        n_sub = max(1, int(math.ceil(dt / self.inner_step - 1e-12)))
        h = dt / n_sub
        t = self.time
        for _ in range(n_sub):
            k1 = self._ode(t, z, cmd)
            k2 = self._ode(t + 0.5 * h, z + 0.5 * h * k1, cmd)
            k3 = self._ode(t + 0.5 * h, z + 0.5 * h * k2, cmd)
            k4 = self._ode(t + h, z + h * k3, cmd)
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
        self.time += dt
        z[7] = min(max(z[7], -STEER_LIMIT_TRACTOR), STEER_LIMIT_TRACTOR)
        z[8] = min(max(z[8], -STEER_LIMIT_TRAILER), STEER_LIMIT_TRAILER)
        self.steer_actual = z[7:9].copy()
        z[6] = self._speed(self.time)
        self.state = VehicleState.from_array(z[:7])
        # re-close the kinematic chain with the applied trailer steering
        sl = self._slips(self.time)
        self.hitch = (z[2] - z[5]) - sl.trailer_steer * z[8]
        return self.state

    def sample(self, rng: np.random.Generator) -> Measurement:
        """Draw one noisy synchronized sensor sample at the current time."""
        x = self.state.as_array()
        nz = self.noise
        pos = rng.normal(0.0, nz.position, 4) if nz.position > 0 else np.zeros(4)
        e_h = rng.normal(0.0, nz.hitch_angle) if nz.hitch_angle > 0 else 0.0
        e_v = rng.normal(0.0, nz.speed) if nz.speed > 0 else 0.0
        e_s = rng.normal(0.0, nz.steer, 2) if nz.steer > 0 else np.zeros(2)
        return Measurement(
            tractor_x=x[0] + pos[0], tractor_y=x[1] + pos[1],
            trailer_x=x[3] + pos[2], trailer_y=x[4] + pos[3],
            hitch_angle=self.hitch + e_h,
            speed=x[6] + e_v,
            tractor_steer=self.steer_actual[0] + e_s[0],
            trailer_steer=self.steer_actual[1] + e_s[1],
            timestamp=self.time,
        )


def aligned_initial_state(x, y, heading, speed, geom: VehicleGeometry,
                          lateral_offset=0.0) -> VehicleState:
    """Tractor at (x, y) with the trailer trailing straight behind it."""
    nx = -math.sin(heading)
    ny = math.cos(heading)
    xt = x + lateral_offset * nx
    yt = y + lateral_offset * ny
    back = geom.hitch_offset + geom.trailer_wheelbase
    return VehicleState(xt, yt, heading,
                        xt - back * math.cos(heading),
                        yt - back * math.sin(heading),
                        heading, speed)
