"""Predictive steering controllers for the tractor-trailer pair.

Four flavors share one Gauss-Newton engine and differ only in the
objective and in what they assume about the other body's plan:

* cooperative: the tractor minimizes the blended two-body objective over
  its own steering with the trailer's previous plan held fixed; the
  trailer then minimizes its share against the fresh tractor plan.  (For
  this kinematic model the tractor objective does not depend on the
  trailer steering, so the trailer subproblem coincides with the
  independent one; the blended form is kept for model extensions.)
* independent: each body minimizes only its own tracking cost, taking
  the other body's plan as a known disturbance.
* centralized: one joint problem over both steering sequences.
* decentralized: like independent but the other body's plan is assumed
  zero (no exchange at all).

Every step performs exactly one real-time iteration, warm started by
shifting the previous solution.  Plans are exchanged once per sample:
tractor first (using the trailer plan from the previous sample), trailer
second (using the tractor plan just produced).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .integrator import rk4_sensitivities
from .model import (STEER_LIMIT_TRACTOR, STEER_LIMIT_TRAILER,
                    VehicleGeometry, coupled_block_jacobians,
                    tractor_block_jacobians, trailer_block_jacobians)
from .qp import BoxQpSolver
from .reference import REFERENCE_MODES, ReferenceWindow
from .rti import (OcpProblem, References, RtiIterate, cold_start_iterate,
                  rti_step, shift_warm_start)

VARIANTS = ("cooperative", "independent", "centralized", "decentralized")

# timing/reporting labels for the four optimization problem classes
CLASS_COOPERATIVE = "cdinmpc"
CLASS_INDEPENDENT = "idinmpc"
CLASS_CENTRALIZED = "cenmpc"
CLASS_DECENTRALIZED = "denmpc"


@dataclass(frozen=True)
class ControllerWeights:
    """Tracking weights shared by all variants (heading is unweighted)."""

    stage_q: tuple = (0.5, 0.5, 0.0)
    input_r: float = 5.0
    terminal_s: tuple = (5.0, 5.0, 0.0)
    rho_tractor: float = 0.9
    rho_trailer: float = 0.1

    def __post_init__(self):
        if self.rho_tractor <= 0.0 or self.rho_trailer <= 0.0:
            raise SolverError("objective blend factors must be positive")
        if min(self.stage_q) < 0 or min(self.terminal_s) < 0 \
                or self.input_r < 0:
            raise SolverError("weights must be non-negative")


@dataclass(frozen=True)
class ControllerConfig:
    variant: str = "cooperative"
    horizon: int = 15
    sample_time: float = 0.2
    substeps: int = 2
    reference_mode: str = "hold"   # see reference_window
    weights: ControllerWeights = field(default_factory=ControllerWeights)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SolverError(f"unknown variant {self.variant!r}; "
                              f"expected one of {VARIANTS}")
        if self.horizon < 2:
            raise SolverError("horizon must be at least 2")
        if self.sample_time <= 0.0:
            raise SolverError("sample time must be positive")
        if self.reference_mode not in REFERENCE_MODES:
            raise SolverError(f"reference_mode must be one of "
                              f"{REFERENCE_MODES}")


@dataclass(frozen=True)
class ControlAnchor:
    """Everything a controller step needs from estimation and sensing."""

    state: np.ndarray      # (7,) estimated full state
    slips: np.ndarray      # (3,) estimated slip factors
    hitch: float           # estimated hitch angle
    steer_measured: np.ndarray  # (2,) most recent measured steering angles

    @property
    def tractor_state(self):
        return self.state[:3]

    @property
    def trailer_state(self):
        return self.state[3:6]

    @property
    def speed(self):
        return float(self.state[6])


@dataclass(frozen=True)
class PredictedInputPlan:
    """Steering sequence a subsystem announced for the current horizon."""

    subsystem: str
    sequence: np.ndarray  # (N,)
    produced_at: int      # sample index

    def shifted(self) -> "PredictedInputPlan":
        """Advance one sample: drop the first move, repeat the last."""
        seq = np.concatenate([self.sequence[1:], self.sequence[-1:]])
        return PredictedInputPlan(self.subsystem, seq, self.produced_at + 1)

    @staticmethod
    def zero(subsystem: str, horizon: int, produced_at: int = 0):
        return PredictedInputPlan(subsystem, np.zeros(horizon), produced_at)


@dataclass
class SolveRecord:
    """Diagnostics of one subproblem solve within a sample."""

    problem_class: str
    solve_time: float
    objective: float
    qp_iterations: int
    stationarity: float
    held: bool = False


@dataclass
class VariantDecision:
    """Commands plus everything the harness logs for one sample."""

    tractor_steer: float
    trailer_steer: float
    tractor_plan: PredictedInputPlan
    trailer_plan: PredictedInputPlan
    solves: list


# ---------------------------------------------------------------------------
# discrete dynamics factories (hitch angle and speed frozen over the horizon)
# ---------------------------------------------------------------------------

def _discretize(f_jac, x, u_vec, dt, substeps, nu):
    x_end, Sx, Su, _ = rk4_sensitivities(f_jac, x, dt, substeps, nu=nu,
                                         npar=0)
    return x_end, Sx, Su


def make_tractor_dynamics(slips, speed, geom, dt, substeps):
    """3-state tractor block driven by its own steering."""
    mu, kappa = float(slips[0]), float(slips[1])

    def dynamics(_k, x, u):
        steer = float(u[0])

        def f_jac(xx):
            f, A, B = tractor_block_jacobians(xx, steer, mu, kappa, speed,
                                              geom)
            return f, A, B.reshape(3, 1), np.zeros((3, 0))

        return _discretize(f_jac, x, u, dt, substeps, nu=1)

    return dynamics


def make_trailer_dynamics(slips, speed, hitch, tractor_plan, geom, dt,
                          substeps):
    """3-state trailer block; the tractor plan acts as a known input."""
    mu, kappa, eta = (float(slips[0]), float(slips[1]), float(slips[2]))
    plan = np.asarray(tractor_plan, dtype=float)

    def dynamics(k, x, u):
        tractor_steer = float(plan[min(k, len(plan) - 1)])

        def f_jac(xx):
            f, A, B = trailer_block_jacobians(xx, tractor_steer, float(u[0]),
                                              hitch, mu, kappa, eta, speed,
                                              geom)
            return f, A, B[:, 1:2], np.zeros((3, 0))

        return _discretize(f_jac, x, u, dt, substeps, nu=1)

    return dynamics


def make_coupled_dynamics(slips, speed, steer_i_applied, geom, dt, substeps,
                          trailer_plan=None):
    """6-state joint model with the hitch closed along the prediction.

    ``steer_i_applied`` is the trailer steering the plant last applied;
    deviations of the planned trailer steering from it act through the
    articulation.  With ``trailer_plan`` given, the only decision input is
    the tractor steering (blended-objective tractor problem); otherwise
    both steering angles are decisions (centralized problem).
    """
    mu, kappa, eta = (float(slips[0]), float(slips[1]), float(slips[2]))
    steer_i_applied = float(steer_i_applied)
    plan = None if trailer_plan is None \
        else np.asarray(trailer_plan, dtype=float)

    def dynamics(k, x, u):
        if plan is None:
            steer_t, steer_i = float(u[0]), float(u[1])
        else:
            steer_t = float(u[0])
            steer_i = float(plan[min(k, len(plan) - 1)])

        def f_jac(xx):
            f, A, B = coupled_block_jacobians(xx, steer_t, steer_i,
                                              steer_i_applied, mu, kappa,
                                              eta, speed, geom)
            if plan is not None:
                B = B[:, 0:1]
            return f, A, B, np.zeros((6, 0))

        nu = 2 if plan is None else 1
        return _discretize(f_jac, x, u, dt, substeps, nu=nu)

    return dynamics


# ---------------------------------------------------------------------------
# subproblem wrapper with persistent warm start
# ---------------------------------------------------------------------------

class SubproblemSolver:
    """One OCP class: builds the problem each sample, keeps the iterate."""

    def __init__(self, problem_class, nx, nu, stage_sqrt_q, input_sqrt_r,
                 terminal_sqrt_s, u_lower, u_upper, config: ControllerConfig):
        self.problem_class = problem_class
        self.nx = nx
        self.nu = nu
        self.stage_sqrt_q = np.asarray(stage_sqrt_q, dtype=float)
        self.input_sqrt_r = np.asarray(input_sqrt_r, dtype=float)
        self.terminal_sqrt_s = np.asarray(terminal_sqrt_s, dtype=float)
        self.u_lower = np.asarray(u_lower, dtype=float)
        self.u_upper = np.asarray(u_upper, dtype=float)
        self.config = config
        self.iterate: RtiIterate | None = None
        self.qp = BoxQpSolver()

    def build(self, dynamics) -> OcpProblem:
        return OcpProblem(
            horizon=self.config.horizon,
            sample_time=self.config.sample_time,
            nx=self.nx, nu=self.nu, dynamics=dynamics,
            stage_sqrt_q=self.stage_sqrt_q,
            input_sqrt_r=self.input_sqrt_r,
            terminal_sqrt_s=self.terminal_sqrt_s,
            u_lower=self.u_lower, u_upper=self.u_upper)

    def solve(self, dynamics, x0, state_refs, input_refs):
        """Shift, run one Gauss-Newton iteration, return plan + record."""
        t0 = time.perf_counter()
        problem = self.build(dynamics)
        if self.iterate is None or self.iterate.states.shape[1] != self.nx:
            self.iterate = cold_start_iterate(problem, x0)
        else:
            self.iterate = shift_warm_start(problem, self.iterate)
        refs = References(np.asarray(state_refs, dtype=float),
                          np.asarray(input_refs, dtype=float))
        self.iterate, info = rti_step(problem, self.iterate, x0, refs,
                                      self.qp)
        elapsed = time.perf_counter() - t0
        record = SolveRecord(self.problem_class, elapsed, info.objective,
                             info.qp.iterations, info.stationarity)
        return self.iterate.inputs.copy(), record

    def reset(self):
        self.iterate = None
        self.qp.reset()


# ---------------------------------------------------------------------------
# variant orchestration
# ---------------------------------------------------------------------------

def _input_refs(horizon, values):
    return np.tile(np.asarray(values, dtype=float).reshape(1, -1),
                   (horizon, 1))


def math_sqrt(v):
    if v < 0:
        raise SolverError("cannot take the square root of a negative weight")
    return float(np.sqrt(v))


class NmpcController:
    """Per-sample controller for one experiment run."""

    def __init__(self, config: ControllerConfig, geom: VehicleGeometry):
        self.config = config
        self.geom = geom
        w = config.weights
        r1 = math_sqrt(w.rho_tractor)
        r2 = math_sqrt(w.rho_trailer)
        sq = np.sqrt(np.asarray(w.stage_q, dtype=float))
        ss = np.sqrt(np.asarray(w.terminal_s, dtype=float))
        sr = math_sqrt(w.input_r)
        lim_t, lim_i = STEER_LIMIT_TRACTOR, STEER_LIMIT_TRAILER

        self.tractor_plant = SubproblemSolver(
            CLASS_COOPERATIVE, 6, 1,
            np.concatenate([r1 * sq, r2 * sq]), [r1 * sr],
            np.concatenate([r1 * ss, r2 * ss]),
            [-lim_t], [lim_t], config)
        self.tractor_self = SubproblemSolver(
            CLASS_INDEPENDENT if config.variant == "independent"
            else CLASS_DECENTRALIZED, 3, 1,
            sq, [sr], ss, [-lim_t], [lim_t], config)
        self.trailer_coop = SubproblemSolver(
            CLASS_INDEPENDENT, 3, 1,
            r2 * sq, [r2 * sr], r2 * ss, [-lim_i], [lim_i], config)
        self.trailer_self = SubproblemSolver(
            CLASS_INDEPENDENT if config.variant != "decentralized"
            else CLASS_DECENTRALIZED, 3, 1,
            sq, [sr], ss, [-lim_i], [lim_i], config)
        self.central = SubproblemSolver(
            CLASS_CENTRALIZED, 6, 2,
            np.concatenate([r1 * sq, r2 * sq]), [r1 * sr, r2 * sr],
            np.concatenate([r1 * ss, r2 * ss]),
            [-lim_t, -lim_i], [lim_t, lim_i], config)

        self.prev_trailer_plan: PredictedInputPlan | None = None
        self.prev_decision: VariantDecision | None = None
        self._held_once = False

    # -- spec-level operations -------------------------------------------

    def tractor_control_step(self, anchor: ControlAnchor,
                             window: ReferenceWindow,
                             trailer_plan: PredictedInputPlan, sample: int):
        """Blended-objective tractor step with the trailer plan fixed."""
        cfg = self.config
        dyn = make_coupled_dynamics(anchor.slips, anchor.speed,
                                    anchor.steer_measured[1], self.geom,
                                    cfg.sample_time, cfg.substeps,
                                    trailer_plan=trailer_plan.sequence)
        refs = np.hstack([window.tractor, window.trailer])
        u_ref = _input_refs(cfg.horizon, [anchor.steer_measured[0]])
        x0 = anchor.state[:6]
        inputs, record = self.tractor_plant.solve(dyn, x0, refs, u_ref)
        plan = PredictedInputPlan("tractor", inputs[:, 0].copy(), sample)
        return float(inputs[0, 0]), plan, record

    def tractor_control_step_self(self, anchor, window, sample):
        """Own-objective tractor step (independent and decentralized)."""
        cfg = self.config
        dyn = make_tractor_dynamics(anchor.slips, anchor.speed, self.geom,
                                    cfg.sample_time, cfg.substeps)
        u_ref = _input_refs(cfg.horizon, [anchor.steer_measured[0]])
        inputs, record = self.tractor_self.solve(
            dyn, anchor.tractor_state, window.tractor, u_ref)
        plan = PredictedInputPlan("tractor", inputs[:, 0].copy(), sample)
        return float(inputs[0, 0]), plan, record

    def trailer_control_step(self, anchor, window,
                             tractor_plan: PredictedInputPlan, sample: int,
                             cooperative: bool):
        """Trailer step against a fixed tractor plan.

        The cooperative flavor carries the blended-objective weights; the
        tractor cost does not depend on the trailer steering, so its
        minimizer provably matches the independent flavor.
        """
        cfg = self.config
        dyn = make_trailer_dynamics(anchor.slips, anchor.speed, anchor.hitch,
                                    tractor_plan.sequence, self.geom,
                                    cfg.sample_time, cfg.substeps)
        u_ref = _input_refs(cfg.horizon, [anchor.steer_measured[1]])
        solver = self.trailer_coop if cooperative else self.trailer_self
        inputs, record = solver.solve(dyn, anchor.trailer_state,
                                      window.trailer, u_ref)
        plan = PredictedInputPlan("trailer", inputs[:, 0].copy(), sample)
        return float(inputs[0, 0]), plan, record

    def centralized_control_step(self, anchor, window, sample):
        """Joint step over both steering sequences."""
        cfg = self.config
        dyn = make_coupled_dynamics(anchor.slips, anchor.speed,
                                    anchor.steer_measured[1], self.geom,
                                    cfg.sample_time, cfg.substeps)
        refs = np.hstack([window.tractor, window.trailer])
        u_ref = _input_refs(cfg.horizon, anchor.steer_measured)
        x0 = anchor.state[:6]
        inputs, record = self.central.solve(dyn, x0, refs, u_ref)
        plan_t = PredictedInputPlan("tractor", inputs[:, 0].copy(), sample)
        plan_i = PredictedInputPlan("trailer", inputs[:, 1].copy(), sample)
        return (float(inputs[0, 0]), float(inputs[0, 1]), plan_t, plan_i,
                record)

    # -- harness entry point ---------------------------------------------

    def step(self, anchor: ControlAnchor, window: ReferenceWindow,
             sample: int) -> VariantDecision:
        """Run the configured variant for one sample (plans exchanged once)."""
        try:
            decision = self._step_inner(anchor, window, sample)
        except SolverError:
            if self._held_once or self.prev_decision is None:
                raise
            self._held_once = True
            prev = self.prev_decision
            held = VariantDecision(
                prev.tractor_steer, prev.trailer_steer,
                prev.tractor_plan.shifted(), prev.trailer_plan.shifted(),
                [SolveRecord("held", 0.0, float("nan"), 0, float("nan"),
                             held=True)])
            self.prev_trailer_plan = held.trailer_plan
            self.prev_decision = held
            return held
        self._held_once = False
        self.prev_trailer_plan = decision.trailer_plan
        self.prev_decision = decision
        return decision

    def _step_inner(self, anchor, window, sample):
        cfg = self.config
        N = cfg.horizon
        if self.prev_trailer_plan is None:
            prev_plan = PredictedInputPlan.zero("trailer", N, sample)
        else:
            prev_plan = self.prev_trailer_plan.shifted()

        if cfg.variant == "cooperative":
            cmd_t, plan_t, rec_t = self.tractor_control_step(
                anchor, window, prev_plan, sample)
            cmd_i, plan_i, rec_i = self.trailer_control_step(
                anchor, window, plan_t, sample, cooperative=True)
            solves = [rec_t, rec_i]
        elif cfg.variant == "independent":
            cmd_t, plan_t, rec_t = self.tractor_control_step_self(
                anchor, window, sample)
            cmd_i, plan_i, rec_i = self.trailer_control_step(
                anchor, window, plan_t, sample, cooperative=False)
            solves = [rec_t, rec_i]
        elif cfg.variant == "centralized":
            cmd_t, cmd_i, plan_t, plan_i, rec = self.centralized_control_step(
                anchor, window, sample)
            solves = [rec]
        else:  # decentralized: no exchange, the other plan is zero
            cmd_t, plan_t, rec_t = self.tractor_control_step_self(
                anchor, window, sample)
            zero = PredictedInputPlan.zero("tractor", N, sample)
            cmd_i, plan_i, rec_i = self.trailer_control_step(
                anchor, window, zero, sample, cooperative=False)
            solves = [rec_t, rec_i]

        return VariantDecision(cmd_t, cmd_i, plan_t, plan_i, solves)

    def reset(self):
        for s in (self.tractor_plant, self.tractor_self, self.trailer_coop,
                  self.trailer_self, self.central):
            s.reset()
        self.prev_trailer_plan = None
        self.prev_decision = None
        self._held_once = False
