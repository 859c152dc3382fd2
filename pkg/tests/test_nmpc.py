"""Predictive controllers: variants, equivalences, bounds, failure paths."""

import math

import numpy as np
import pytest

from trailermpc.errors import SolverError
from trailermpc.model import (STEER_LIMIT_TRACTOR, STEER_LIMIT_TRAILER,
                              VehicleGeometry)
import trailermpc.nmpc as nmpc
from trailermpc.nmpc import (CLASS_CENTRALIZED, ControlAnchor,
                             ControllerConfig, ControllerWeights,
                             NmpcController, PredictedInputPlan,
                             SubproblemSolver, _input_refs,
                             make_coupled_dynamics, make_tractor_dynamics,
                             make_trailer_dynamics)
from trailermpc.reference import PathBuilder, reference_window

GEOM = VehicleGeometry()
SLIPS = np.array([0.9, 0.9, 0.9])
STRAIGHT = PathBuilder(-10.0, 0.0, 0.0).line(100.0).build()
CURVE = PathBuilder(0.0, 0.0, 0.0).line(5.0).arc(10.0, math.pi / 2).build()


def _anchor(ty=0.0, iy=0.0, heading=0.0, steer=(0.0, 0.0)):
    state = np.array([0.0, ty, heading, -2.4, iy, heading, 1.0])
    return ControlAnchor(state, SLIPS, 0.0, np.asarray(steer, dtype=float))


def _window(path, anchor, cfg):
    return reference_window(path, anchor.tractor_state, anchor.trailer_state,
                            cfg.horizon, cfg.sample_time, anchor.speed, GEOM,
                            mode=cfg.reference_mode)


# ---------------------------------------------------------------------------
# configuration validation and small types
# ---------------------------------------------------------------------------

def test_config_rejects_bad_values():
    with pytest.raises(SolverError):
        ControllerConfig(variant="telepathic")
    with pytest.raises(SolverError):
        ControllerConfig(horizon=1)
    with pytest.raises(SolverError):
        ControllerConfig(sample_time=0.0)
    with pytest.raises(SolverError):
        ControllerConfig(reference_mode="sideways")
    with pytest.raises(SolverError):
        ControllerWeights(rho_tractor=0.0)
    with pytest.raises(SolverError):
        ControllerWeights(input_r=-1.0)


def test_predicted_plan_shift_and_zero():
    plan = PredictedInputPlan("tractor", np.array([1.0, 2.0, 3.0]), 4)
    shifted = plan.shifted()
    np.testing.assert_allclose(shifted.sequence, [2.0, 3.0, 3.0])
    assert shifted.produced_at == 5
    assert shifted.subsystem == "tractor"
    zero = PredictedInputPlan.zero("trailer", 5)
    np.testing.assert_allclose(zero.sequence, np.zeros(5))
    assert zero.subsystem == "trailer"


def test_anchor_slices():
    a = _anchor(ty=1.0, iy=2.0)
    np.testing.assert_allclose(a.tractor_state, [0.0, 1.0, 0.0])
    np.testing.assert_allclose(a.trailer_state, [-2.4, 2.0, 0.0])
    assert a.speed == 1.0


def test_dynamics_factory_shapes():
    dt, sub = 0.2, 2
    x3 = np.array([0.1, -0.2, 0.05])
    x6 = np.concatenate([x3, [0.0, 0.1, 0.02]])
    f = make_tractor_dynamics(SLIPS, 1.0, GEOM, dt, sub)
    xe, A, B = f(0, x3, np.array([0.1]))
    assert xe.shape == (3,) and A.shape == (3, 3) and B.shape == (3, 1)
    f = make_trailer_dynamics(SLIPS, 1.0, 0.05, np.full(15, 0.1), GEOM, dt,
                              sub)
    xe, A, B = f(3, x3, np.array([0.1]))
    assert xe.shape == (3,) and A.shape == (3, 3) and B.shape == (3, 1)
    f = make_coupled_dynamics(SLIPS, 1.0, 0.02, GEOM, dt, sub)
    xe, A, B = f(0, x6, np.array([0.1, -0.05]))
    assert xe.shape == (6,) and A.shape == (6, 6) and B.shape == (6, 2)
    f = make_coupled_dynamics(SLIPS, 1.0, 0.02, GEOM, dt, sub,
                              trailer_plan=np.full(15, -0.05))
    xe, A, B = f(0, x6, np.array([0.1]))
    assert B.shape == (6, 1)


# ---------------------------------------------------------------------------
# steady-state and corrective behaviour
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("variant", ["cooperative", "independent",
                                     "centralized", "decentralized"])
def test_aligned_on_straight_gives_zero_commands(variant):
    cfg = ControllerConfig(variant=variant)
    ctl = NmpcController(cfg, GEOM)
    state = np.array([0.0, 0.0, 0.0, -2.4, 0.0, 0.0, 1.0])
    for k in range(3):
        a = ControlAnchor(state.copy(), SLIPS, 0.0, np.zeros(2))
        d = ctl.step(a, _window(STRAIGHT, a, cfg), k)
        assert abs(d.tractor_steer) < 1e-12
        assert abs(d.trailer_steer) < 1e-12
        state[0] += 0.2
        state[3] += 0.2


def test_lateral_offset_steers_back_with_mirror_symmetry():
    cfg = ControllerConfig()
    cmds = {}
    for ty in (0.5, -0.5):
        ctl = NmpcController(cfg, GEOM)
        a = _anchor(ty=ty)
        d = ctl.step(a, _window(STRAIGHT, a, cfg), 0)
        cmds[ty] = (d.tractor_steer, d.trailer_steer)
    # displaced to the left -> steer right (negative), and mirrored exactly
    assert cmds[0.5][0] < -0.01
    assert cmds[0.5][0] == pytest.approx(-cmds[-0.5][0], abs=1e-12)
    assert cmds[0.5][1] == pytest.approx(-cmds[-0.5][1], abs=1e-12)

    for iy in (0.5, -0.5):
        ctl = NmpcController(cfg, GEOM)
        a = _anchor(iy=iy)
        d = ctl.step(a, _window(STRAIGHT, a, cfg), 0)
        cmds[iy] = (d.tractor_steer, d.trailer_steer)
    assert cmds[0.5][1] < -0.01
    assert cmds[0.5][1] == pytest.approx(-cmds[-0.5][1], abs=1e-12)


def test_huge_offset_clamps_exactly_to_limits():
    cfg = ControllerConfig()
    ctl = NmpcController(cfg, GEOM)
    a = _anchor(ty=-8.0, iy=-8.0)
    d = ctl.step(a, _window(STRAIGHT, a, cfg), 0)
    assert d.tractor_steer == pytest.approx(STEER_LIMIT_TRACTOR, abs=1e-12)
    assert d.trailer_steer == pytest.approx(STEER_LIMIT_TRAILER, abs=1e-12)
    assert d.tractor_steer <= STEER_LIMIT_TRACTOR
    assert d.trailer_steer <= STEER_LIMIT_TRAILER


def test_commands_and_plans_stay_within_limits_under_stress():
    cfg = ControllerConfig()
    ctl = NmpcController(cfg, GEOM)
    rng = np.random.default_rng(8)
    for k in range(10):
        ty, iy = rng.uniform(-4.0, 4.0, 2)
        heading = rng.uniform(-0.8, 0.8)
        a = _anchor(ty=ty, iy=iy, heading=heading,
                    steer=rng.uniform(-0.3, 0.3, 2))
        d = ctl.step(a, _window(CURVE, a, cfg), k)
        for value in (d.tractor_steer, *d.tractor_plan.sequence):
            assert abs(value) <= STEER_LIMIT_TRACTOR + 1e-12
        for value in (d.trailer_steer, *d.trailer_plan.sequence):
            assert abs(value) <= STEER_LIMIT_TRAILER + 1e-12


def test_first_plan_entry_is_the_command():
    cfg = ControllerConfig()
    ctl = NmpcController(cfg, GEOM)
    a = _anchor(ty=0.7, iy=-0.4)
    d = ctl.step(a, _window(CURVE, a, cfg), 0)
    assert d.tractor_plan.sequence[0] == pytest.approx(d.tractor_steer,
                                                       abs=0.0)
    assert d.trailer_plan.sequence[0] == pytest.approx(d.trailer_steer,
                                                       abs=0.0)
    assert d.tractor_plan.produced_at == 0
    assert len(d.solves) == 2


# ---------------------------------------------------------------------------
# variant equivalences
# ---------------------------------------------------------------------------

def test_cooperative_trailer_matches_independent_given_same_plan():
    # the tractor objective does not depend on the trailer steering, so
    # the share-weighted trailer problem has the same minimizer as the
    # own-objective one when both see the same announced tractor plan
    cfg = ControllerConfig()
    coop = NmpcController(cfg, GEOM)
    probe = NmpcController(cfg, GEOM)
    state = np.array([2.0, 0.1, 0.05, -0.4, 0.05, 0.02, 1.0])
    worst = 0.0
    for k in range(12):
        a = ControlAnchor(state.copy(), SLIPS, 0.01,
                          np.array([0.02, -0.01]))
        w = _window(CURVE, a, cfg)
        d = coop.step(a, w, k)
        cmd, _plan, _rec = probe.trailer_control_step(
            a, w, d.tractor_plan, k, cooperative=False)
        worst = max(worst, abs(cmd - d.trailer_steer))
        state[0] += 0.19
        state[1] += 0.01 * math.sin(k)
        state[2] += 0.01
        state[3] += 0.19
        state[5] += 0.008
    assert worst < 1e-12


def test_tractor_blend_reacts_to_announced_trailer_plan():
    # the announced trailer steering enters the blended objective through
    # the articulation, so different plans move the tractor command
    cfg = ControllerConfig()
    a = ControlAnchor(np.array([4.0, -0.3, 0.1, 1.6, -0.25, 0.05, 1.0]),
                      SLIPS, 0.05, np.array([0.1, 0.05]))
    w = _window(CURVE, a, cfg)
    zero_plan = PredictedInputPlan.zero("trailer", cfg.horizon)
    big_plan = PredictedInputPlan("trailer", np.full(cfg.horizon, 0.3), 0)
    cmd_zero, _, _ = NmpcController(cfg, GEOM).tractor_control_step(
        a, w, zero_plan, 0)
    cmd_big, _, _ = NmpcController(cfg, GEOM).tractor_control_step(
        a, w, big_plan, 0)
    assert 1e-4 < abs(cmd_zero - cmd_big) < 0.1


def test_centralized_with_pinned_trailer_matches_cooperative_tractor():
    # pinning the joint problem's trailer input to the applied value must
    # reproduce the cooperative tractor subproblem exactly
    cfg = ControllerConfig()
    applied = 0.05
    a = ControlAnchor(np.array([4.0, -0.3, 0.1, 1.6, -0.25, 0.05, 1.0]),
                      SLIPS, 0.05, np.array([0.1, applied]))
    w = _window(CURVE, a, cfg)
    plan = PredictedInputPlan("trailer", np.full(cfg.horizon, applied), 0)
    cmd_coop, _, _ = NmpcController(cfg, GEOM).tractor_control_step(
        a, w, plan, 0)

    wgt = cfg.weights
    r1, r2 = math.sqrt(wgt.rho_tractor), math.sqrt(wgt.rho_trailer)
    sq = np.sqrt(np.asarray(wgt.stage_q))
    ss = np.sqrt(np.asarray(wgt.terminal_s))
    sr = math.sqrt(wgt.input_r)
    pinned = SubproblemSolver(
        CLASS_CENTRALIZED, 6, 2,
        np.concatenate([r1 * sq, r2 * sq]), [r1 * sr, r2 * sr],
        np.concatenate([r1 * ss, r2 * ss]),
        [-STEER_LIMIT_TRACTOR, applied], [STEER_LIMIT_TRACTOR, applied], cfg)
    dyn = make_coupled_dynamics(SLIPS, a.speed, applied, GEOM,
                                cfg.sample_time, cfg.substeps)
    refs = np.hstack([w.tractor, w.trailer])
    u_ref = _input_refs(cfg.horizon, [a.steer_measured[0], applied])
    inputs, _rec = pinned.solve(dyn, a.state[:6], refs, u_ref)
    assert abs(inputs[0, 0] - cmd_coop) < 1e-9


def test_decentralized_matches_independent_when_tractor_plan_is_zero():
    # with a zero announced tractor plan the two flavors solve the same
    # trailer problem
    cfg_d = ControllerConfig(variant="decentralized")
    cfg_i = ControllerConfig(variant="independent")
    a = _anchor(iy=0.6)
    d_dec = NmpcController(cfg_d, GEOM).step(a, _window(STRAIGHT, a, cfg_d), 0)
    ctl_i = NmpcController(cfg_i, GEOM)
    w = _window(STRAIGHT, a, cfg_i)
    cmd_i, _, _ = ctl_i.trailer_control_step(
        a, w, PredictedInputPlan.zero("tractor", cfg_i.horizon), 0,
        cooperative=False)
    assert d_dec.trailer_steer == pytest.approx(cmd_i, abs=1e-12)


def test_variant_solve_record_classes():
    for variant, classes in (
            ("cooperative", ["cdinmpc", "idinmpc"]),
            ("independent", ["idinmpc", "idinmpc"]),
            ("centralized", ["cenmpc"]),
            ("decentralized", ["denmpc", "denmpc"])):
        cfg = ControllerConfig(variant=variant)
        ctl = NmpcController(cfg, GEOM)
        a = _anchor(ty=0.2)
        d = ctl.step(a, _window(STRAIGHT, a, cfg), 0)
        assert [rec.problem_class for rec in d.solves] == classes
        assert all(rec.solve_time >= 0.0 for rec in d.solves)
        assert all(np.isfinite(rec.stationarity) for rec in d.solves)


def test_reset_restores_cold_start_behaviour():
    cfg = ControllerConfig()
    ctl = NmpcController(cfg, GEOM)
    a = _anchor(ty=0.5)
    w = _window(CURVE, a, cfg)
    first = ctl.step(a, w, 0)
    ctl.step(_anchor(ty=0.3), _window(CURVE, _anchor(ty=0.3), cfg), 1)
    ctl.reset()
    again = ctl.step(a, w, 0)
    assert again.tractor_steer == pytest.approx(first.tractor_steer, abs=0.0)
    assert again.trailer_steer == pytest.approx(first.trailer_steer, abs=0.0)


# ---------------------------------------------------------------------------
# failure handling
# ---------------------------------------------------------------------------

def _boom(*_args, **_kwargs):
    raise SolverError("forced failure")


def test_hold_previous_decision_once_then_raise(monkeypatch):
    cfg = ControllerConfig()
    ctl = NmpcController(cfg, GEOM)
    a = _anchor(ty=0.4)
    w = _window(STRAIGHT, a, cfg)
    good = ctl.step(a, w, 0)

    monkeypatch.setattr(nmpc, "rti_step", _boom)
    held = ctl.step(a, w, 1)
    assert held.tractor_steer == good.tractor_steer
    assert held.trailer_steer == good.trailer_steer
    np.testing.assert_allclose(
        held.tractor_plan.sequence,
        np.concatenate([good.tractor_plan.sequence[1:],
                        good.tractor_plan.sequence[-1:]]))
    assert held.solves[0].held
    assert held.solves[0].problem_class == "held"

    with pytest.raises(SolverError):
        ctl.step(a, w, 2)


def test_failure_with_no_history_raises(monkeypatch):
    monkeypatch.setattr(nmpc, "rti_step", _boom)
    cfg = ControllerConfig()
    ctl = NmpcController(cfg, GEOM)
    a = _anchor()
    with pytest.raises(SolverError):
        ctl.step(a, _window(STRAIGHT, a, cfg), 0)


def test_recovery_after_hold_resets_the_fuse(monkeypatch):
    cfg = ControllerConfig()
    ctl = NmpcController(cfg, GEOM)
    a = _anchor(ty=0.4)
    w = _window(STRAIGHT, a, cfg)
    ctl.step(a, w, 0)

    real_step = nmpc.rti_step
    monkeypatch.setattr(nmpc, "rti_step", _boom)
    held = ctl.step(a, w, 1)
    assert held.solves[0].held
    monkeypatch.setattr(nmpc, "rti_step", real_step)
    ok = ctl.step(a, w, 2)
    assert not ok.solves[0].held
    # a later isolated failure is held again rather than raising
    monkeypatch.setattr(nmpc, "rti_step", _boom)
    held2 = ctl.step(a, w, 3)
    assert held2.solves[0].held
