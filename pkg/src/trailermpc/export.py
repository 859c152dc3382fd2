"""Render report figures from run artifacts.

Figures are produced from the delimited files alone (``samples.csv``
and, when present, ``timings.csv``), so reports can be regenerated for
any archived run directory.  The Agg backend keeps rendering headless.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (after backend selection)
import numpy as np  # noqa: E402

from .errors import SchemaError
from .harness import TIMING_COLUMNS, TIMINGS_SCHEMA, read_samples_csv
from .model import STEER_LIMIT_TRACTOR, STEER_LIMIT_TRAILER  # noqa: E402

FIGURE_NAMES = ("trajectory.png", "tracking_error.png", "slip_estimates.png",
                "steering.png", "solve_times.png")


def _column(rows, name):
    return np.array([row[name] for row in rows], dtype=float)


def read_timings_csv(path):
    path = Path(path)
    with open(path) as fh:
        schema = fh.readline().strip()
        if schema != f"# schema={TIMINGS_SCHEMA}":
            raise SchemaError(f"unexpected schema line {schema!r} in {path}")
        header = fh.readline().strip().split(",")
        if header != TIMING_COLUMNS:
            raise SchemaError(f"timing columns of {path} do not match "
                              f"{TIMINGS_SCHEMA}")
        rows = []
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != len(TIMING_COLUMNS):
                raise SchemaError(f"malformed row in {path}")
            rows.append({
                "sample": int(parts[0]), "problem_class": parts[1],
                "solve_time": float(parts[2]), "objective": float(parts[3]),
                "qp_iterations": int(parts[4]),
                "stationarity": float(parts[5]), "held": int(parts[6])})
    return rows


def _plot_trajectory(rows, path_xy, ax):
    if path_xy is not None:
        ax.plot(path_xy[:, 0], path_xy[:, 1], "k--", lw=1.0,
                label="reference path")
    ax.plot(_column(rows, "true_x_t"), _column(rows, "true_y_t"),
            color="tab:blue", lw=1.2, label="tractor")
    ax.plot(_column(rows, "true_x_i"), _column(rows, "true_y_i"),
            color="tab:orange", lw=1.2, label="trailer")
    ax.plot(rows[0]["true_x_t"], rows[0]["true_y_t"], "go", ms=6,
            label="start")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("driven trajectories")


def _plot_tracking_error(rows, ax):
    t = _column(rows, "time")
    ax.plot(t, 100.0 * _column(rows, "err_tractor"), color="tab:blue",
            lw=1.0, label="tractor")
    ax.plot(t, 100.0 * _column(rows, "err_trailer"), color="tab:orange",
            lw=1.0, label="trailer")
    curve = _column(rows, "curve_tractor").astype(bool)
    if curve.any():
        ax.fill_between(t, 0, 1, where=curve, transform=ax.get_xaxis_transform(),
                        color="gray", alpha=0.15, label="curve segment")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("distance to path [cm]")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("tracking error")


def _plot_slips(rows, ax):
    t = _column(rows, "time")
    pairs = [("est_mu", "slip_mu_true", "longitudinal", "tab:blue"),
             ("est_kappa", "slip_kappa_true", "tractor steer", "tab:orange"),
             ("est_eta", "slip_eta_true", "trailer steer", "tab:green")]
    for est_name, true_name, label, color in pairs:
        ax.plot(t, _column(rows, true_name), color=color, ls="--", lw=1.0)
        ax.plot(t, _column(rows, est_name), color=color, lw=1.2, label=label)
    ax.axhline(0.25, color="k", lw=0.6, alpha=0.4)
    ax.axhline(1.0, color="k", lw=0.6, alpha=0.4)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("slip factor")
    ax.set_ylim(0.0, 1.15)
    ax.legend(loc="best", fontsize=8)
    ax.set_title("slip estimates (dashed: truth)")


def _plot_steering(rows, ax):
    t = _column(rows, "time")
    ax.plot(t, np.degrees(_column(rows, "cmd_steer_t")), color="tab:blue",
            lw=1.0, label="tractor command")
    ax.plot(t, np.degrees(_column(rows, "true_steer_t")), color="tab:blue",
            lw=0.8, ls="--", alpha=0.7, label="tractor actual")
    ax.plot(t, np.degrees(_column(rows, "cmd_steer_i")), color="tab:orange",
            lw=1.0, label="trailer command")
    ax.plot(t, np.degrees(_column(rows, "true_steer_i")), color="tab:orange",
            lw=0.8, ls="--", alpha=0.7, label="trailer actual")
    for lim, color in ((STEER_LIMIT_TRACTOR, "tab:blue"),
                       (STEER_LIMIT_TRAILER, "tab:orange")):
        ax.axhline(math.degrees(lim), color=color, lw=0.6, alpha=0.5)
        ax.axhline(-math.degrees(lim), color=color, lw=0.6, alpha=0.5)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("steering [deg]")
    ax.legend(loc="best", fontsize=7)
    ax.set_title("steering commands and actuator response")


def _plot_solve_times(timing_rows, ax):
    by_class = {}
    for row in timing_rows:
        by_class.setdefault(row["problem_class"], []).append(
            1000.0 * row["solve_time"])
    if not by_class:
        ax.text(0.5, 0.5, "no timing data", ha="center", va="center")
        return
    labels = sorted(by_class)
    ax.boxplot([by_class[label] for label in labels], tick_labels=labels,
               showfliers=False)
    ax.set_ylabel("solve time [ms]")
    ax.set_title("per-class solve times")


def generate_report(run_dir, out_dir=None, path_xy=None) -> list:
    """Render all figures for one run directory; returns written paths."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    samples_path = run_dir / "samples.csv"
    if not samples_path.exists():
        raise SchemaError(f"no samples.csv in {run_dir}")
    rows = read_samples_csv(samples_path)
    if not rows:
        raise SchemaError(f"{samples_path} holds no samples")

    timings_path = run_dir / "timings.csv"
    timing_rows = read_timings_csv(timings_path) \
        if timings_path.exists() else []

    written = []

    def render(name, plot, *args):
        fig, ax = plt.subplots(figsize=(7.0, 4.5), dpi=120)
        plot(*args, ax)
        fig.tight_layout()
        target = out_dir / name
        fig.savefig(target)
        plt.close(fig)
        written.append(target)

    render("trajectory.png", _plot_trajectory, rows, path_xy
           if path_xy is None else np.asarray(path_xy))
    render("tracking_error.png", _plot_tracking_error, rows)
    render("slip_estimates.png", _plot_slips, rows)
    render("steering.png", _plot_steering, rows)
    render("solve_times.png", _plot_solve_times, timing_rows)
    return written
