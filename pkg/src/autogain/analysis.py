"""Per-submovement geometry, classification, aim-point estimation and
aiming errors.

Distances are in mm. ``d_target`` is measured from the cursor at span
start to the target centre; ``d_c`` is the displacement over the span
projected on that direction, so it goes negative when the cursor moves
away from the target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .segmentation import SubmovementSpan

MAX_ANGLE_DEG = 45.0
OVERSHOOT_RATIO = 0.5
INTERRUPTED_RATIO = 0.5
CLUTCH_MS = 130.0


class SubmovementClass(str, Enum):
    NORMAL = "normal"
    INTERRUPTED = "interrupted"
    UNAIMED = "unaimed"


@dataclass(frozen=True)
class TargetSpec:
    cx: float  # px
    cy: float  # px
    width: float  # mm

    def width_px(self, res_out: float) -> float:
        return self.width * res_out

    def contains(self, x: float, y: float, res_out: float) -> bool:
        return math.hypot(x - self.cx, y - self.cy) <= self.width_px(res_out) / 2.0


@dataclass(frozen=True)
class ClassificationParams:
    max_angle_deg: float = MAX_ANGLE_DEG
    overshoot_ratio: float = OVERSHOOT_RATIO
    interrupted_ratio: float = INTERRUPTED_RATIO
    clutch_ms: float = CLUTCH_MS


@dataclass(frozen=True)
class SubmovementRecord:
    span: SubmovementSpan
    cursor_points: np.ndarray = field(repr=False)
    d_target: float
    d_c: float
    max_ang_dev: float
    max_gap_ms: float = 0.0
    cls: SubmovementClass | None = None
    ballistic: bool | None = None
    clutched: bool = False
    occupancy: np.ndarray | None = field(default=None, repr=False)
    aiming_error: float | None = None

    @property
    def degenerate(self) -> bool:
        return self.d_target == 0.0

    @property
    def updates_gain(self) -> bool:
        return self.cls is not None and self.cls is not SubmovementClass.UNAIMED

    @property
    def updates_aim_point(self) -> bool:
        return self.cls is SubmovementClass.NORMAL and bool(self.ballistic)


def projected_distance(path, target: TargetSpec, res_out: float) -> float:
    path = np.asarray(path, dtype=float)
    if path.shape[0] < 2:
        raise ValueError("path needs at least 2 points")
    to_target = np.array([target.cx, target.cy]) - path[0]
    norm = math.hypot(*to_target)
    if norm == 0.0:
        return 0.0
    moved = path[-1] - path[0]
    return float(moved @ to_target) / norm / res_out


def max_angular_deviation(path) -> float:
    """Largest angle (degrees) between first->last and first->point."""
    path = np.asarray(path, dtype=float)
    if len(np.unique(path, axis=0)) < 3:
        return 0.0
    chord = path[-1] - path[0]
    if not chord.any():
        return 0.0
    rays = path[1:-1] - path[0]
    rays = rays[rays.any(axis=1)]
    if rays.size == 0:
        return 0.0
    # atan2 stays accurate for nearly collinear points, unlike arccos
    cross = np.abs(rays[:, 0] * chord[1] - rays[:, 1] * chord[0])
    dot = rays @ chord
    return float(np.degrees(np.arctan2(cross, dot)).max())


def max_event_gap(times, span: SubmovementSpan) -> float:
    """Longest interval between consecutive events inside the span (ms)."""
    t = np.asarray(times[span.start_idx : span.end_idx + 1], dtype=float)
    if t.size < 2:
        return 0.0
    return float(np.diff(t).max())


def measure(span, cursor_points, times, target: TargetSpec, res_out: float) -> SubmovementRecord:
    """Geometry of one span. ``cursor_points`` are the cursor positions after
    each event of the span (floating pixels)."""
    pts = np.asarray(cursor_points, dtype=float)
    start = pts[0]
    d_target = math.hypot(target.cx - start[0], target.cy - start[1]) / res_out
    return SubmovementRecord(
        span=span,
        cursor_points=pts,
        d_target=d_target,
        d_c=projected_distance(pts, target, res_out),
        max_ang_dev=max_angular_deviation(pts),
        max_gap_ms=max_event_gap(times, span),
    )


def classify(records, params: ClassificationParams = ClassificationParams()) -> list[SubmovementRecord]:
    out = []
    normals = 0
    last = len(records) - 1
    for i, rec in enumerate(records):
        overshoot = max(rec.d_c - rec.d_target, 0.0)
        clutched = i != last and rec.max_gap_ms > params.clutch_ms
        if (
            rec.degenerate
            or rec.max_ang_dev > params.max_angle_deg
            or overshoot > params.overshoot_ratio * rec.d_target
        ):
            cls = SubmovementClass.UNAIMED
        elif rec.d_c < params.interrupted_ratio * rec.d_target or clutched:
            cls = SubmovementClass.INTERRUPTED
        else:
            cls = SubmovementClass.NORMAL
        # ballistic up to and including the second normal submovement
        ballistic = normals < 2
        if cls is SubmovementClass.NORMAL:
            normals += 1
        out.append(replace(rec, cls=cls, ballistic=ballistic, clutched=clutched))
    return out


@dataclass(frozen=True)
class AimPointFilter:
    """Scalar random-walk Kalman filter on the aim fraction."""

    p: float = 1.0
    cov: float = 1.0
    q: float = 0.2
    r: float = 40.0

    def __post_init__(self):
        if not (self.cov > 0 and self.q > 0 and self.r > 0):
            raise ValueError("variances must be > 0")

    def step(self, z: float) -> "AimPointFilter":
        cov = self.cov + self.q
        k = cov / (cov + self.r)
        return replace(self, p=self.p + k * (z - self.p), cov=(1.0 - k) * cov)


def aim_measurement(d_target: float, d_c: float, mode: str = "covered") -> float:
    if mode == "covered":
        return d_c / d_target
    if mode == "remaining":
        return (d_target - d_c) / d_target
    raise ValueError(f"unknown measurement mode {mode!r}")


def update_aim_point(f: AimPointFilter, d_target: float, d_c: float, mode: str = "covered") -> AimPointFilter:
    if d_target == 0:
        return f
    return f.step(aim_measurement(d_target, d_c, mode))


def aiming_error(p: float, d_target: float, d_c: float, ballistic: bool) -> float:
    d_aim = p * d_target if ballistic else d_target
    return d_aim - d_c


def speed_occupancy(speeds, bin_width: float, n_bins: int, grow: bool = False) -> np.ndarray:
    """Boolean array, bit j set when some speed lies in bin j.

    A speed of exactly 0 occupies nothing. Speeds past the last bin extend
    the array when ``grow`` is set, otherwise they land in the last bin.
    """
    speeds = np.asarray(speeds, dtype=float)
    if speeds.size == 0:
        raise ValueError("span has no events")
    moving = speeds[speeds > 0]
    idx = np.floor(moving / bin_width).astype(np.int64)
    if grow and idx.size:
        n_bins = max(n_bins, int(idx.max()) + 1)
    else:
        idx = np.minimum(idx, n_bins - 1)
    bits = np.zeros(n_bins, dtype=bool)
    bits[idx] = True
    return bits
