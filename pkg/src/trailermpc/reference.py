"""Space-based reference paths built from lines and tangent circular arcs.

The controllers track a moving window of path points: an anchor station
is found by closest-point projection, pushed forward by a fixed lookahead
distance, and then advanced per horizon node by the travel expected in
one sampling period.  Stations saturate at the path end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import VehicleGeometry

TRACTOR_LOOKAHEAD = 1.6  # m, measured from the tractor front axle
TRAILER_LOOKAHEAD = 0.0


@dataclass(frozen=True)
class ReferencePoint:
    """A path sample: position, tangent heading and arclength station."""

    x: float
    y: float
    heading: float
    station: float

    def position(self):
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class LineSegment:
    x0: float
    y0: float
    heading: float
    length: float

    def point_at(self, s):
        return (self.x0 + s * math.cos(self.heading),
                self.y0 + s * math.sin(self.heading), self.heading)

    def closest(self, qx, qy):
        """(local station, squared distance) of the projection of (qx, qy)."""
        dx = qx - self.x0
        dy = qy - self.y0
        s = dx * math.cos(self.heading) + dy * math.sin(self.heading)
        s = min(max(s, 0.0), self.length)
        px, py, _ = self.point_at(s)
        return s, (qx - px) ** 2 + (qy - py) ** 2


@dataclass(frozen=True)
class ArcSegment:
    """Circular arc; positive sweep turns left, negative turns right."""

    cx: float
    cy: float
    radius: float
    angle0: float  # polar angle of the start point seen from the center
    sweep: float   # signed sweep angle
    length: float

    def point_at(self, s):
        a = self.angle0 + math.copysign(s / self.radius, self.sweep)
        x = self.cx + self.radius * math.cos(a)
        y = self.cy + self.radius * math.sin(a)
        heading = a + math.copysign(0.5 * math.pi, self.sweep)
        return (x, y, heading)

    def closest(self, qx, qy):
        dx = qx - self.cx
        dy = qy - self.cy
        if dx * dx + dy * dy < 1e-24:
            # query at the center: every arc point is equidistant, return
            # the smallest station on this segment
            px, py, _ = self.point_at(0.0)
            return 0.0, (qx - px) ** 2 + (qy - py) ** 2
        ang = math.atan2(dy, dx)
        # local angle from the start, measured along the travel direction
        rel = (ang - self.angle0) * math.copysign(1.0, self.sweep)
        rel = rel % (2.0 * math.pi)
        span = abs(self.sweep)
        if rel <= span:
            s = rel * self.radius
        else:
            # off the sector: nearer endpoint (compare leftover angles)
            s = 0.0 if (2.0 * math.pi - rel) < (rel - span) else self.length
        px, py, _ = self.point_at(s)
        return s, (qx - px) ** 2 + (qy - py) ** 2


@dataclass
class TrajectorySpec:
    """Piecewise line/arc path with first-order (tangent) continuity."""

    segments: list = field(default_factory=list)
    cumulative: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.segments:
            raise ConfigError("a trajectory needs at least one segment")
        lengths = [seg.length for seg in self.segments]
        if min(lengths) <= 0.0:
            raise ConfigError("all segments must have positive length")
        self.cumulative = np.concatenate([[0.0], np.cumsum(lengths)])

    @property
    def total_length(self) -> float:
        return float(self.cumulative[-1])

    def is_curve(self, segment_index) -> bool:
        return isinstance(self.segments[segment_index], ArcSegment)

    def point_at(self, station) -> ReferencePoint:
        """Path sample at an arclength station (clamped to the ends)."""
        s = min(max(station, 0.0), self.total_length)
        idx = int(np.searchsorted(self.cumulative, s, side="right")) - 1
        idx = min(max(idx, 0), len(self.segments) - 1)
        local = s - self.cumulative[idx]
        x, y, heading = self.segments[idx].point_at(local)
        return ReferencePoint(x, y, heading, s)

    def segment_index_at(self, station) -> int:
        s = min(max(station, 0.0), self.total_length)
        idx = int(np.searchsorted(self.cumulative, s, side="right")) - 1
        return min(max(idx, 0), len(self.segments) - 1)

    def closest_point(self, qx, qy) -> ReferencePoint:
        """Global closest path point; ties resolve to the smallest station."""
        best_station = math.inf
        best_d2 = math.inf
        for i, seg in enumerate(self.segments):
            s_local, d2 = seg.closest(qx, qy)
            station = self.cumulative[i] + s_local
            tol = 1e-12 * max(1.0, best_d2)
            if d2 < best_d2 - tol or \
                    (d2 <= best_d2 + tol and station < best_station):
                best_d2 = min(best_d2, d2)
                best_station = station
        return self.point_at(best_station)

    def distance_to(self, qx, qy) -> float:
        p = self.closest_point(qx, qy)
        return math.hypot(qx - p.x, qy - p.y)

    def lookahead_point(self, qx, qy, lookahead) -> ReferencePoint:
        """Closest station advanced by a fixed arc distance."""
        anchor = self.closest_point(qx, qy)
        return self.point_at(anchor.station + lookahead)

    def sample_polyline(self, spacing=0.05) -> np.ndarray:
        """Dense (n, 4) polyline [x, y, heading, station] for export."""
        n = max(2, int(math.ceil(self.total_length / spacing)) + 1)
        stations = np.linspace(0.0, self.total_length, n)
        out = np.zeros((n, 4))
        for i, s in enumerate(stations):
            p = self.point_at(s)
            out[i] = (p.x, p.y, p.heading, s)
        return out


class PathBuilder:
    """Chains tangent-continuous segments from a start pose."""

    def __init__(self, x=0.0, y=0.0, heading=0.0):
        self._x = float(x)
        self._y = float(y)
        self._heading = float(heading)
        self._segments = []

    def line(self, length):
        if length <= 0.0:
            raise ConfigError("line length must be positive")
        self._segments.append(LineSegment(self._x, self._y, self._heading,
                                          float(length)))
        self._x += length * math.cos(self._heading)
        self._y += length * math.sin(self._heading)
        return self

    def arc(self, radius, sweep):
        """Arc of given radius turning by the signed sweep angle (rad)."""
        if radius <= 0.0:
            raise ConfigError("arc radius must be positive")
        if sweep == 0.0:
            raise ConfigError("arc sweep must be nonzero")
        side = math.copysign(1.0, sweep)
        cx = self._x - side * radius * math.sin(self._heading)
        cy = self._y + side * radius * math.cos(self._heading)
        angle0 = math.atan2(self._y - cy, self._x - cx)
        length = abs(sweep) * radius
        self._segments.append(ArcSegment(cx, cy, float(radius), angle0,
                                         float(sweep), length))
        self._heading += sweep
        self._x = cx + radius * math.cos(angle0 + sweep)
        self._y = cy + radius * math.sin(angle0 + sweep)
        return self

    def build(self) -> TrajectorySpec:
        return TrajectorySpec(self._segments)


def benchmark_path() -> TrajectorySpec:
    """Default S-shaped test track: 30 m straight, 90 deg right turn of
    radius 10, 20 m straight, 90 deg left turn of radius 10, 30 m straight."""
    return (PathBuilder(0.0, 0.0, 0.0)
            .line(30.0)
            .arc(10.0, -0.5 * math.pi)
            .line(20.0)
            .arc(10.0, 0.5 * math.pi)
            .line(30.0)
            .build())


@dataclass
class ReferenceWindow:
    """Per-node reference trajectories for both bodies."""

    tractor: np.ndarray   # (N+1, 3) columns x, y, heading
    trailer: np.ndarray   # (N+1, 3)
    tractor_station: float
    trailer_station: float


REFERENCE_MODES = ("hold", "advance")


def reference_window(path: TrajectorySpec, tractor_pose, trailer_pose,
                     horizon: int, sample_time: float, speed: float,
                     geom: VehicleGeometry,
                     tractor_lookahead=TRACTOR_LOOKAHEAD,
                     trailer_lookahead=TRAILER_LOOKAHEAD,
                     mode="hold") -> ReferenceWindow:
    """Build tracking targets for one controller step.

    The tractor anchor is the closest point to its front axle, pushed
    forward by the tractor lookahead; the trailer anchors at its own
    closest point.  The path is space-based, so the desired point is a
    function of the current position only; in the default ``hold`` mode
    every node of the horizon targets that one desired point, which the
    anchor sweeps forward sample by sample.  In ``advance`` mode node k
    additionally leads by k * speed * sample_time of arclength; this
    anticipates more but rewards corner cutting: the optimizer can catch
    up to in-curve references by running a smaller radius, roughly
    doubling the steady-state curve offset.
    """
    if mode not in REFERENCE_MODES:
        raise ConfigError(f"reference mode must be one of "
                          f"{REFERENCE_MODES}, got {mode!r}")
    tx, ty, th = tractor_pose
    fx = tx + geom.tractor_wheelbase * math.cos(th)
    fy = ty + geom.tractor_wheelbase * math.sin(th)
    anchor_t = path.closest_point(fx, fy)
    anchor_i = path.closest_point(trailer_pose[0], trailer_pose[1])
    advance = max(speed, 0.0) * sample_time if mode == "advance" else 0.0

    tractor = np.zeros((horizon + 1, 3))
    trailer = np.zeros((horizon + 1, 3))
    for k in range(horizon + 1):
        pt = path.point_at(anchor_t.station + tractor_lookahead + k * advance)
        pi = path.point_at(anchor_i.station + trailer_lookahead + k * advance)
        tractor[k] = (pt.x, pt.y, pt.heading)
        trailer[k] = (pi.x, pi.y, pi.heading)
    return ReferenceWindow(tractor, trailer, anchor_t.station,
                           anchor_i.station)
