"""Gain table and cursor integration in device units.

Speeds are in m/s, displacements in device counts, cursor positions in
pixels. The cursor keeps a fractional remainder per axis so that slow
motion is not lost to integer rounding.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

GAIN_FLOOR = 0.01
SNAPSHOT_HEADER = ("bin_start_mps", "gain")


@dataclass(frozen=True)
class DeviceSpec:
    res_in: float  # counts per mm
    freq_in: float  # events per second
    res_out: float  # pixels per mm
    screen_w: int
    screen_h: int

    def __post_init__(self):
        for name in ("res_in", "freq_in", "res_out", "screen_w", "screen_h"):
            if not getattr(self, name) > 0:
                raise ValueError(f"DeviceSpec.{name} must be > 0")

    @property
    def c_in(self) -> float:
        """Input speed in m/s produced by one count per event."""
        # counts/event * events/ms / (counts/mm) = mm/ms = m/s
        return (self.freq_in / 1000.0) / self.res_in

    @property
    def c_out(self) -> float:
        """Pixels per event produced by a transformed speed of 1 m/s."""
        return self.res_out / (self.freq_in / 1000.0)

    @property
    def event_ms(self) -> float:
        return 1000.0 / self.freq_in


@dataclass(frozen=True)
class InputEvent:
    t: float  # ms
    dx: int
    dy: int


@dataclass(frozen=True, eq=False)
class GainTable:
    """Discrete gain function: ``gains[j]`` applies to speeds in
    ``[j * bin_width, (j + 1) * bin_width)``."""

    bin_width: float
    gains: np.ndarray
    gain_floor: float = GAIN_FLOOR
    interpolation: str = "linear"

    def __post_init__(self):
        gains = np.array(self.gains, dtype=float)
        gains.setflags(write=False)
        object.__setattr__(self, "gains", gains)
        if not self.bin_width > 0:
            raise ValueError("bin_width must be > 0")
        if gains.ndim != 1 or gains.size == 0:
            raise ValueError("gain table must be a non-empty 1-D sequence")
        if np.any(gains < self.gain_floor):
            raise ValueError(f"gains must be >= gain_floor ({self.gain_floor})")
        if self.interpolation not in ("linear", "step"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")

    @classmethod
    def constant(cls, bin_width, n_bins, gain=1.0, **kwargs) -> "GainTable":
        return cls(bin_width, np.full(n_bins, float(gain)), **kwargs)

    def __len__(self):
        return self.gains.size

    def __eq__(self, other):
        if not isinstance(other, GainTable):
            return NotImplemented
        return (
            self.bin_width == other.bin_width
            and np.array_equal(self.gains, other.gains)
        )

    @property
    def bin_starts(self) -> np.ndarray:
        return np.arange(len(self)) * self.bin_width

    @property
    def bin_centers(self) -> np.ndarray:
        return (np.arange(len(self)) + 0.5) * self.bin_width

    def bin_index(self, v: float) -> int:
        return int(math.floor(v / self.bin_width))

    def with_gains(self, gains) -> "GainTable":
        return replace(self, gains=np.asarray(gains, dtype=float))

    def grown(self, n_bins: int) -> "GainTable":
        """Extend to ``n_bins`` by repeating the last gain (no-op if already long enough)."""
        extra = n_bins - len(self)
        if extra <= 0:
            return self
        return self.with_gains(np.concatenate([self.gains, np.full(extra, self.gains[-1])]))


@dataclass(frozen=True)
class CursorState:
    x: int
    y: int
    rx: float = 0.0
    ry: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        """Floating cursor position including the subpixel remainder."""
        return (self.x + self.rx, self.y + self.ry)


def input_speed(e: InputEvent, d: DeviceSpec) -> float:
    return d.c_in * math.hypot(e.dx, e.dy)


def interpolate_gain(g: GainTable, v: float) -> float:
    if g.interpolation == "step":
        return float(g.gains[min(max(g.bin_index(v), 0), len(g) - 1)])
    # position in units of bins, measured from the first bin centre
    u = v / g.bin_width - 0.5
    last = len(g) - 1
    if u <= 0.0:
        return float(g.gains[0])
    if u >= last:
        return float(g.gains[last])
    j = int(u)
    frac = u - j
    return float(g.gains[j] + frac * (g.gains[j + 1] - g.gains[j]))


def _advance(pos: int, rem: float, delta: float, limit: int) -> tuple[int, float]:
    total = rem + delta
    step = math.trunc(total)
    new = pos + step
    if new < 0:
        return 0, 0.0
    if new > limit - 1:
        return limit - 1, 0.0
    return new, total - step


def apply_input(e: InputEvent, g: GainTable, d: DeviceSpec, c: CursorState) -> CursorState:
    gain = interpolate_gain(g, input_speed(e, d))
    fx = d.c_out * (d.c_in * e.dx * gain)
    fy = d.c_out * (d.c_in * e.dy * gain)
    x, rx = _advance(c.x, c.rx, fx, d.screen_w)
    y, ry = _advance(c.y, c.ry, fy, d.screen_h)
    return CursorState(x, y, rx, ry)


# -- 1 euro filter -----------------------------------------------------------


def _smoothing_factor(te: float, cutoff: float) -> float:
    tau = 1.0 / (2.0 * math.pi * cutoff)
    return 1.0 / (1.0 + tau / te)


@dataclass
class OneEuroFilter:
    """Speed-adaptive low-pass filter (Casiez et al.). Timestamps in seconds."""

    min_cutoff: float = 1e-5
    beta: float = 0.05
    d_cutoff: float = 1.0
    _t: float | None = field(default=None, repr=False)
    _x: float = field(default=0.0, repr=False)
    _dx: float = field(default=0.0, repr=False)

    def __call__(self, t: float, x: float) -> float:
        if self._t is None:
            self._t, self._x, self._dx = t, x, 0.0
            return x
        te = t - self._t
        if not te > 0:
            raise ValueError(f"timestamps must be strictly increasing (got {self._t} then {t})")
        a_d = _smoothing_factor(te, self.d_cutoff)
        dx = a_d * ((x - self._x) / te) + (1.0 - a_d) * self._dx
        cutoff = self.min_cutoff + self.beta * abs(dx)
        a = _smoothing_factor(te, cutoff)
        x_hat = a * x + (1.0 - a) * self._x
        self._t, self._x, self._dx = t, x_hat, dx
        return x_hat


def one_euro_filter(times, values, min_cutoff=1e-5, beta=0.05, d_cutoff=1.0) -> np.ndarray:
    """Filter a whole stream. ``times`` in seconds, strictly increasing."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape:
        raise ValueError("times and values must have the same length")
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ValueError("timestamps must be strictly increasing")
    f = OneEuroFilter(min_cutoff, beta, d_cutoff)
    return np.array([f(t, x) for t, x in zip(times, values)])


# -- snapshot files ----------------------------------------------------------


def format_gain_csv(g: GainTable) -> str:
    buf = io.StringIO()
    buf.write(",".join(SNAPSHOT_HEADER) + "\n")
    for start, gain in zip(g.bin_starts, g.gains):
        buf.write(f"{float(start)!r},{float(gain)!r}\n")
    return buf.getvalue()


def write_gain_csv(g: GainTable, path) -> None:
    Path(path).write_text(format_gain_csv(g), newline="\n")


def read_gain_csv(path, gain_floor: float = GAIN_FLOOR, bin_width: float | None = None) -> GainTable:
    """Load a snapshot. Raises ValueError on any malformed content.

    ``bin_width`` is only needed for single-bin tables, where it cannot be
    inferred from the bin starts.
    """
    text = Path(path).read_text()
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ValueError(f"{path}: empty file")
    if tuple(c.strip() for c in rows[0]) != SNAPSHOT_HEADER:
        raise ValueError(f"{path}: expected header {','.join(SNAPSHOT_HEADER)}")
    starts, gains = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ValueError(f"{path}:{lineno}: expected 2 columns")
        try:
            starts.append(float(row[0]))
            gains.append(float(row[1]))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value") from None
    if not gains:
        raise ValueError(f"{path}: no bins")
    if len(starts) == 1:
        if bin_width is None:
            raise ValueError(f"{path}: cannot infer bin width from a single bin")
        width = bin_width
    else:
        width = starts[1] - starts[0]
    if starts[0] != 0.0 or not width > 0 or not np.allclose(
        np.diff(starts), width, rtol=1e-9, atol=0
    ):
        raise ValueError(f"{path}: bin starts must begin at 0 and be evenly spaced")
    return GainTable(width, np.array(gains), gain_floor=gain_floor)
