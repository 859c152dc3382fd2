"""Closed-loop experiment runner, metrics, and CSV/JSON writers.

One sample of the loop: draw a noisy sensor sample from the plant, feed
it to the moving-horizon estimator, build reference windows around the
estimated poses, run the configured controller variant, and apply the
commanded steering to the plant for one sampling period.  Until the
estimator finishes its cold start the commands are held at zero.

Logging is split deliberately: ``samples.csv`` holds only quantities
that are deterministic for a given configuration and seed (so two
matched runs produce bit-identical files), while wall-clock solve times
go to ``timings.csv`` and aggregate statistics to ``metrics.json``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import SchemaError
from .model import ControlInput, Measurement, Plant, SlipParams
from .nmhe import EstimatorConfig, MovingHorizonEstimator
from .nmpc import VARIANTS, ControlAnchor, NmpcController
from .reference import TrajectorySpec, reference_window

SAMPLES_SCHEMA = "trailermpc-samples-v1"
TIMINGS_SCHEMA = "trailermpc-timings-v1"

SAMPLE_COLUMNS = [
    "sample", "time",
    "true_x_t", "true_y_t", "true_yaw_t",
    "true_x_i", "true_y_i", "true_yaw_i",
    "true_speed", "true_hitch", "true_steer_t", "true_steer_i",
    "slip_mu_true", "slip_kappa_true", "slip_eta_true",
    "meas_x_t", "meas_y_t", "meas_x_i", "meas_y_i",
    "meas_hitch", "meas_speed", "meas_steer_t", "meas_steer_i",
    "est_ready", "est_degraded",
    "est_x_t", "est_y_t", "est_yaw_t",
    "est_x_i", "est_y_i", "est_yaw_i",
    "est_speed", "est_hitch", "est_mu", "est_kappa", "est_eta",
    "cmd_steer_t", "cmd_steer_i",
    "ref_station_t", "ref_station_i",
    "err_tractor", "err_trailer",
    "seg_tractor", "curve_tractor", "seg_trailer", "curve_trailer",
]

TIMING_COLUMNS = ["sample", "problem_class", "solve_time", "objective",
                  "qp_iterations", "stationarity", "held"]

_INT_COLUMNS = {"sample", "est_ready", "est_degraded", "seg_tractor",
                "curve_tractor", "seg_trailer", "curve_trailer",
                "qp_iterations", "held"}

# angles live in radians in memory and in degrees in the delimited files
_ANGLE_COLUMNS = {"true_yaw_t", "true_yaw_i", "true_hitch", "true_steer_t",
                  "true_steer_i", "meas_hitch", "meas_steer_t",
                  "meas_steer_i", "est_yaw_t", "est_yaw_i", "est_hitch",
                  "cmd_steer_t", "cmd_steer_i"}


@dataclass
class RunResult:
    """Everything one closed-loop experiment produced."""

    config: ExperimentConfig
    path: TrajectorySpec
    samples: list            # list of dicts keyed by SAMPLE_COLUMNS
    timings: list            # list of dicts keyed by TIMING_COLUMNS
    metrics: dict
    out_dir: Path | None = None

    def column(self, name) -> np.ndarray:
        if name not in SAMPLE_COLUMNS:
            raise SchemaError(f"unknown sample column {name!r}")
        return np.array([row[name] for row in self.samples], dtype=float)


def _fmt(value) -> str:
    """Format one CSV cell; repr keeps floats bit-exact across runs."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_samples_csv(path, samples):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"# schema={SAMPLES_SCHEMA}\n")
        fh.write(",".join(SAMPLE_COLUMNS) + "\n")
        for row in samples:
            fh.write(",".join(
                _fmt(math.degrees(row[c]) if c in _ANGLE_COLUMNS else row[c])
                for c in SAMPLE_COLUMNS) + "\n")
    return path


def write_timings_csv(path, timings):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"# schema={TIMINGS_SCHEMA}\n")
        fh.write(",".join(TIMING_COLUMNS) + "\n")
        for row in timings:
            cells = []
            for c in TIMING_COLUMNS:
                v = row[c]
                cells.append(v if isinstance(v, str) else _fmt(v))
            fh.write(",".join(cells) + "\n")
    return path


def read_samples_csv(path):
    """Load a samples file back into a list of row dicts."""
    path = Path(path)
    with open(path) as fh:
        schema = fh.readline().strip()
        if schema != f"# schema={SAMPLES_SCHEMA}":
            raise SchemaError(f"unexpected schema line {schema!r} in {path}")
        header = fh.readline().strip().split(",")
        if header != SAMPLE_COLUMNS:
            raise SchemaError(f"sample columns of {path} do not match "
                              f"{SAMPLES_SCHEMA}")
        rows = []
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != len(SAMPLE_COLUMNS):
                raise SchemaError(f"malformed row in {path}")
            row = {}
            for name, cell in zip(SAMPLE_COLUMNS, parts):
                if name in _INT_COLUMNS:
                    row[name] = int(cell)
                elif name in _ANGLE_COLUMNS:
                    row[name] = math.radians(float(cell))
                else:
                    row[name] = float(cell)
            rows.append(row)
    return rows


def write_metrics_json(path, metrics):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# the closed loop
# ---------------------------------------------------------------------------

def _estimate_cells(est):
    if est is None:
        return {
            "est_ready": 0, "est_degraded": 0,
            "est_x_t": math.nan, "est_y_t": math.nan, "est_yaw_t": math.nan,
            "est_x_i": math.nan, "est_y_i": math.nan, "est_yaw_i": math.nan,
            "est_speed": math.nan, "est_hitch": math.nan,
            "est_mu": math.nan, "est_kappa": math.nan, "est_eta": math.nan,
        }
    s = est.state.as_array()
    p = est.slips.as_array()
    return {
        "est_ready": 1, "est_degraded": int(est.degraded),
        "est_x_t": s[0], "est_y_t": s[1], "est_yaw_t": s[2],
        "est_x_i": s[3], "est_y_i": s[4], "est_yaw_i": s[5],
        "est_speed": s[6], "est_hitch": est.hitch,
        "est_mu": p[0], "est_kappa": p[1], "est_eta": p[2],
    }


def run_experiment(config: ExperimentConfig, out_dir=None,
                   collect_timings=True) -> RunResult:
    """Run one closed-loop experiment and (optionally) write artifacts."""
    path = config.build_path()
    plant = config.build_plant()
    estimator = MovingHorizonEstimator(config.estimator, config.geometry)
    controller = NmpcController(config.controller, config.geometry)
    rng = np.random.default_rng(config.run.seed)

    dt = config.run.sample_time
    duration = config.run.duration
    if duration is None:
        # worst-case travel time at the lowest admissible slip, plus slack
        duration = path.total_length / (0.25 * config.plant.speed) + 60.0
    n_max = int(math.ceil(duration / dt))
    end_margin = max(2.0 * config.plant.speed * dt, 0.5)

    samples, timings = [], []
    completed = False
    for k in range(n_max):
        meas = plant.sample(rng)
        truth = plant.state.as_array()
        true_slips = plant.slips_at(plant.time).as_array()

        t0 = time.perf_counter()
        est = estimator.update(meas)
        est_time = time.perf_counter() - t0
        if collect_timings:
            timings.append({
                "sample": k, "problem_class": "nmhe",
                "solve_time": est_time,
                "objective": est.objective if est is not None else math.nan,
                "qp_iterations":
                    est.qp_iterations if est is not None else 0,
                "stationarity": math.nan,
                "held": int(est.degraded) if est is not None else 0})

        if est is None:
            command = ControlInput(0.0, 0.0)
            ref_station_t = math.nan
            ref_station_i = math.nan
        else:
            s = est.state.as_array()
            anchor = ControlAnchor(state=s, slips=est.slips.as_array(),
                                   hitch=est.hitch,
                                   steer_measured=meas.input_array())
            ground_speed = max(s[6] * est.slips.longitudinal, 0.1)
            window = reference_window(
                path, (s[0], s[1], s[2]), (s[3], s[4], s[5]),
                config.controller.horizon, dt, ground_speed,
                config.geometry, mode=config.controller.reference_mode)
            decision = controller.step(anchor, window, k)
            command = ControlInput(decision.tractor_steer,
                                   decision.trailer_steer)
            ref_station_t = window.tractor_station
            ref_station_i = window.trailer_station
            if collect_timings:
                for rec in decision.solves:
                    timings.append({
                        "sample": k, "problem_class": rec.problem_class,
                        "solve_time": rec.solve_time,
                        "objective": rec.objective,
                        "qp_iterations": rec.qp_iterations,
                        "stationarity": rec.stationarity,
                        "held": int(rec.held)})

        # tracking errors of the true body positions against the path
        pt = path.closest_point(truth[0], truth[1])
        pi = path.closest_point(truth[3], truth[4])
        err_t = math.hypot(truth[0] - pt.x, truth[1] - pt.y)
        err_i = math.hypot(truth[3] - pi.x, truth[4] - pi.y)
        seg_t = path.segment_index_at(pt.station)
        seg_i = path.segment_index_at(pi.station)

        row = {
            "sample": k, "time": plant.time,
            "true_x_t": truth[0], "true_y_t": truth[1],
            "true_yaw_t": truth[2], "true_x_i": truth[3],
            "true_y_i": truth[4], "true_yaw_i": truth[5],
            "true_speed": truth[6], "true_hitch": plant.hitch,
            "true_steer_t": plant.steer_actual[0],
            "true_steer_i": plant.steer_actual[1],
            "slip_mu_true": true_slips[0],
            "slip_kappa_true": true_slips[1],
            "slip_eta_true": true_slips[2],
            "meas_x_t": meas.tractor_x, "meas_y_t": meas.tractor_y,
            "meas_x_i": meas.trailer_x, "meas_y_i": meas.trailer_y,
            "meas_hitch": meas.hitch_angle, "meas_speed": meas.speed,
            "meas_steer_t": meas.tractor_steer,
            "meas_steer_i": meas.trailer_steer,
            "cmd_steer_t": command.tractor_steer,
            "cmd_steer_i": command.trailer_steer,
            "ref_station_t": ref_station_t, "ref_station_i": ref_station_i,
            "err_tractor": err_t, "err_trailer": err_i,
            "seg_tractor": seg_t, "curve_tractor": int(path.is_curve(seg_t)),
            "seg_trailer": seg_i, "curve_trailer": int(path.is_curve(seg_i)),
        }
        row.update(_estimate_cells(est))
        samples.append(row)

        # stop once the tractor front axle reaches the end of the path
        front_x = truth[0] + config.geometry.tractor_wheelbase \
            * math.cos(truth[2])
        front_y = truth[1] + config.geometry.tractor_wheelbase \
            * math.sin(truth[2])
        front = path.closest_point(front_x, front_y)
        if front.station >= path.total_length - end_margin:
            completed = True
            break

        plant.step(command, dt)

    metrics = compute_metrics(config, path, samples, timings, completed)
    result = RunResult(config, path, samples, timings, metrics)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_samples_csv(out_dir / "samples.csv", samples)
        write_timings_csv(out_dir / "timings.csv", timings)
        write_metrics_json(out_dir / "metrics.json", metrics)
        result.out_dir = out_dir
    return result


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _error_stats(errors, curve_mask):
    errors = np.asarray(errors, dtype=float)
    curve_mask = np.asarray(curve_mask, dtype=bool)
    straight = errors[~curve_mask]
    curve = errors[curve_mask]

    def block(vals):
        if vals.size == 0:
            return {"mean": math.nan, "max": math.nan, "rms": math.nan,
                    "count": 0}
        return {"mean": float(np.mean(vals)),
                "max": float(np.max(vals)),
                "rms": float(np.sqrt(np.mean(vals ** 2))),
                "count": int(vals.size)}

    out = block(errors)
    out["straight"] = block(straight)
    out["curve"] = block(curve)
    return out


def _total_variation(values):
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.sum(np.abs(np.diff(values))))


def compute_metrics(config, path, samples, timings, completed) -> dict:
    if not samples:
        return {"samples": 0, "completed": False}
    col = lambda name: np.array([row[name] for row in samples], dtype=float)

    err_t = col("err_tractor")
    err_i = col("err_trailer")
    curve_t = col("curve_tractor").astype(bool)
    curve_i = col("curve_trailer").astype(bool)

    ready = col("est_ready").astype(bool)
    cold = int(np.argmax(ready)) if ready.any() else len(samples)
    slips_true = np.stack([col("slip_mu_true"), col("slip_kappa_true"),
                           col("slip_eta_true")], axis=1)
    slips_est = np.stack([col("est_mu"), col("est_kappa"),
                          col("est_eta")], axis=1)
    tail = max(len(samples) * 3 // 4, cold + 1)
    if ready[tail:].any():
        sel = np.arange(len(samples))[tail:][ready[tail:]]
        tail_err = np.abs(slips_est[sel] - slips_true[sel]).mean(axis=0)
        final = slips_est[sel[-1]]
    else:
        tail_err = np.full(3, math.nan)
        final = np.full(3, math.nan)

    timing_stats = {}
    for row in timings:
        cls = row["problem_class"]
        timing_stats.setdefault(cls, []).append(row["solve_time"])
    timing_stats = {
        cls: {"count": len(v), "mean": float(np.mean(v)),
              "max": float(np.max(v)), "total": float(np.sum(v))}
        for cls, v in timing_stats.items()}

    return {
        "variant": config.run.variant,
        "seed": config.run.seed,
        "samples": len(samples),
        "duration": float(samples[-1]["time"]),
        "completed": bool(completed),
        "path_length": float(path.total_length),
        "tractor": _error_stats(err_t, curve_t),
        "trailer": _error_stats(err_i, curve_i),
        "slips": {
            "true_final": [float(v) for v in slips_true[-1]],
            "estimate_final": [float(v) for v in final],
            "tail_mean_abs_error": [float(v) for v in tail_err],
        },
        "steering": {
            "tractor_total_variation": _total_variation(col("cmd_steer_t")),
            "trailer_total_variation": _total_variation(col("cmd_steer_i")),
            "tractor_max_abs": float(np.max(np.abs(col("cmd_steer_t")))),
            "trailer_max_abs": float(np.max(np.abs(col("cmd_steer_i")))),
        },
        "estimator": {
            "cold_start_sample": cold,
            "degraded_samples": int(col("est_degraded").sum()),
        },
        "timing": timing_stats,
    }


# ---------------------------------------------------------------------------
# multi-run drivers
# ---------------------------------------------------------------------------

@dataclass
class CompareResult:
    runs: dict = field(default_factory=dict)   # variant -> RunResult
    summary: dict = field(default_factory=dict)


def compare_variants(config: ExperimentConfig, variants=VARIANTS,
                     out_dir=None) -> CompareResult:
    """Run several variants from matched seeds and tabulate the outcome."""
    result = CompareResult()
    for variant in variants:
        sub = None if out_dir is None else Path(out_dir) / variant
        run = run_experiment(config.with_variant(variant), out_dir=sub)
        result.runs[variant] = run

    summary = {}
    for variant, run in result.runs.items():
        m = run.metrics
        summary[variant] = {
            "tractor_mean": m["tractor"]["mean"],
            "trailer_mean": m["trailer"]["mean"],
            "tractor_straight_mean": m["tractor"]["straight"]["mean"],
            "trailer_straight_mean": m["trailer"]["straight"]["mean"],
            "tractor_curve_mean": m["tractor"]["curve"]["mean"],
            "trailer_curve_mean": m["trailer"]["curve"]["mean"],
            "completed": m["completed"],
            "timing": m["timing"],
        }
    result.summary = summary
    if out_dir is not None:
        write_metrics_json(Path(out_dir) / "comparison.json", summary)
    return result


def run_estimation_scenario(seed=0, samples=220, noise_scale=1.0,
                            slips=(0.8, 0.9, 0.85), speed=1.0,
                            tractor_amplitude=0.30, tractor_period=8.0,
                            trailer_amplitude=0.30, trailer_period=11.0,
                            estimator: EstimatorConfig | None = None,
                            config: ExperimentConfig | None = None) -> dict:
    """Open-loop slip-identification scenario.

    Drives the plant with sinusoidal steering on both axles (steady
    driving leaves the steering slips unobservable) and runs only the
    estimator.  Returns per-sample histories of truth and estimates.
    """
    if config is None:
        config = ExperimentConfig()
    geom = config.geometry
    est_cfg = estimator if estimator is not None else config.estimator
    plant_cfg = config.plant
    plant = Plant(
        _start_state(config, speed), geom,
        slips=SlipParams(*slips),
        speed_profile=lambda _t: speed,
        noise=config.noise.scaled(noise_scale),
        inner_step=plant_cfg.inner_step)
    estimator_obj = MovingHorizonEstimator(est_cfg, geom)
    rng = np.random.default_rng(seed)
    dt = config.run.sample_time

    hist = {"time": [], "true_slips": [], "est_slips": [], "ready": [],
            "true_state": [], "est_state": [], "est_hitch": [],
            "true_hitch": [], "meas": []}
    for k in range(samples):
        meas = plant.sample(rng)
        est = estimator_obj.update(meas)
        hist["time"].append(plant.time)
        hist["true_slips"].append(plant.slips_at(plant.time).as_array())
        hist["true_state"].append(plant.state.as_array())
        hist["true_hitch"].append(plant.hitch)
        hist["meas"].append(meas)
        if est is None:
            hist["ready"].append(False)
            hist["est_slips"].append(np.full(3, np.nan))
            hist["est_state"].append(np.full(7, np.nan))
            hist["est_hitch"].append(np.nan)
        else:
            hist["ready"].append(True)
            hist["est_slips"].append(est.slips.as_array())
            hist["est_state"].append(est.state.as_array())
            hist["est_hitch"].append(est.hitch)
        t = plant.time
        cmd = ControlInput(
            tractor_amplitude * math.sin(2.0 * math.pi * t / tractor_period),
            trailer_amplitude * math.sin(
                2.0 * math.pi * t / trailer_period + 1.0))
        plant.step(cmd, dt)

    for key in ("true_slips", "est_slips", "true_state", "est_state"):
        hist[key] = np.array(hist[key])
    hist["ready"] = np.array(hist["ready"], dtype=bool)
    hist["time"] = np.array(hist["time"])
    hist["true_hitch"] = np.array(hist["true_hitch"])
    hist["est_hitch"] = np.array(hist["est_hitch"])
    return hist


def _start_state(config, speed):
    from .model import aligned_initial_state
    start = config.trajectory.start
    return aligned_initial_state(start.x, start.y, start.heading, speed,
                                 config.geometry, start.lateral_offset)
