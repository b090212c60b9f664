"""Synthetic user and closed-loop session runner.

The user aims each of the first two submovements of a trial at a fixed
fraction of the remaining distance and later ones at the target centre.
It converts display intent into motor amplitude through a scalar belief
about the current gain, which it revises after every submovement from the
display/motor ratio it just experienced. Amplitudes carry
signal-dependent Gaussian noise; speed profiles are symmetric bells.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import betaln

from .analysis import SubmovementClass, SubmovementRecord, TargetSpec
from .config import Config, SessionConfig, UserConfig
from .pipeline import AutoGain, TrialResult
from .transfer import DeviceSpec, GainTable, InputEvent, OneEuroFilter

log = logging.getLogger(__name__)

MIN_BELL_EVENTS = 5


class TaskGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class UserModel:
    p_user: float = 0.94
    noise_k: float = 0.1
    gain_belief: float = 1.0
    alpha: float = 0.3
    events_per_submovement: int = 25
    peak_speed_scale: float = 1.875
    direction_noise_deg: float = 1.0
    reference_amplitude_mm: float = 10.0
    duration_exponent: float = 0.35

    def __post_init__(self):
        if not 0 < self.p_user <= 1:
            raise ValueError("p_user must be in (0, 1]")
        if not self.noise_k >= 0:
            raise ValueError("noise_k must be >= 0")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not self.gain_belief > 0:
            raise ValueError("gain_belief must be > 0")

    @classmethod
    def from_config(cls, u: UserConfig) -> "UserModel":
        return cls(
            p_user=u.p_user,
            noise_k=u.noise_k,
            gain_belief=u.initial_gain_belief,
            alpha=u.alpha,
            events_per_submovement=u.events_per_submovement,
            peak_speed_scale=u.peak_speed_scale,
            direction_noise_deg=u.direction_noise_deg,
            reference_amplitude_mm=u.reference_amplitude_mm,
            duration_exponent=u.duration_exponent,
        )

    def bell_events(self, amplitude_mm: float) -> int:
        """Events in a bell of the given planned amplitude.

        ``events_per_submovement`` at the reference amplitude, scaled by a
        power law so that longer movements last longer and peak speed grows
        sublinearly with amplitude.
        """
        if self.duration_exponent == 0 or amplitude_mm <= 0:
            return self.events_per_submovement
        scale = (amplitude_mm / self.reference_amplitude_mm) ** self.duration_exponent
        return max(MIN_BELL_EVENTS, round(self.events_per_submovement * scale))

    def observe(self, display_mm: float, motor_mm: float) -> "UserModel":
        """Blend the experienced display/motor ratio into the gain belief."""
        if motor_mm <= 0 or display_mm <= 0:
            return self
        ratio = display_mm / motor_mm
        return replace(self, gain_belief=(1 - self.alpha) * self.gain_belief + self.alpha * ratio)


@dataclass(frozen=True)
class Task:
    start: tuple[float, float]
    target: TargetSpec
    id_bits: float  # requested ID
    id_actual: float  # ID of the generated geometry


@dataclass(frozen=True)
class Plan:
    amplitude_mm: float  # motor space
    direction: float  # radians, screen coordinates
    intent_mm: float  # display space


@dataclass
class TrialLog:
    task: Task
    events: list[InputEvent]
    cursor_path: np.ndarray
    records: list[SubmovementRecord]
    hit: bool
    planned_submovements: int
    completion_s: float
    p: float = float("nan")


@dataclass(frozen=True)
class BlockMetrics:
    block: int
    mean_abs_R_mm: float
    submovements_per_trial: float
    completion_proxy_s: float


@dataclass
class SessionMetrics:
    blocks: list[BlockMetrics] = field(default_factory=list)
    p_trace: list[float] = field(default_factory=list)
    gain_snapshots: dict[int, GainTable] = field(default_factory=dict)
    class_counts: dict[str, int] = field(default_factory=dict)
    aborted: int = 0


@dataclass
class SessionResult:
    metrics: SessionMetrics
    trials: list[TrialLog]
    initial_table: GainTable
    final_table: GainTable
    user: UserModel


# -- tasks ---------------------------------------------------------------


def fitts_id(distance_mm: float, width_mm: float) -> float:
    return math.log2(1.0 + distance_mm / width_mm)


def generate_task(rng: np.random.Generator, device: DeviceSpec, prev_click, s: SessionConfig = SessionConfig()) -> Task:
    """Draw a target whose ID from ``prev_click`` is within tolerance of a
    uniformly drawn ID. The whole disk must lie on screen."""
    px, py = prev_click
    wanted = rng.uniform(s.id_min, s.id_max)
    for _ in range(s.max_draws):
        width = rng.uniform(s.width_min_mm, s.width_max_mm)
        cx = rng.uniform(0, device.screen_w)
        cy = rng.uniform(0, device.screen_h)
        r = width * device.res_out / 2
        if cx - r < 0 or cx + r > device.screen_w or cy - r < 0 or cy + r > device.screen_h:
            continue
        actual = fitts_id(math.hypot(cx - px, cy - py) / device.res_out, width)
        if abs(actual - wanted) < s.id_tolerance:
            return Task((float(px), float(py)), TargetSpec(cx, cy, width), wanted, actual)
    raise TaskGenerationError(f"no task with ID {wanted:.2f} after {s.max_draws} draws")


# -- motor model -----------------------------------------------------------


def plan_submovement(u: UserModel, cursor, target: TargetSpec, res_out: float, issued: int) -> Plan:
    dx = target.cx - cursor[0]
    dy = target.cy - cursor[1]
    remaining = math.hypot(dx, dy) / res_out
    intent = u.p_user * remaining if issued < 2 else remaining
    return Plan(intent / u.gain_belief, math.atan2(dy, dx), intent)


@lru_cache(maxsize=None)
def _bell_exponent(peak_ratio: float) -> float:
    # (t(1-t))^k has peak/mean ratio 4^-k / B(k+1, k+1); k=2 is minimum jerk
    def gap(k):
        return -k * math.log(4.0) - betaln(k + 1, k + 1) - math.log(peak_ratio)

    return brentq(gap, 1e-9, 200.0)


def bell_profile(n: int, peak_ratio: float = 1.875) -> np.ndarray:
    """Normalised speed bell over ``n`` events, zero at both ends."""
    tau = np.linspace(0.0, 1.0, n)
    w = (tau * (1.0 - tau)) ** _bell_exponent(peak_ratio)
    return w / w.sum()


def _quantize(cum: np.ndarray) -> np.ndarray:
    """Integer steps whose running sum tracks ``cum`` to within half a count."""
    rounded = np.floor(cum + 0.5).astype(np.int64)
    return np.diff(rounded, prepend=0)


def _motion(plan: Plan, u: UserModel, rng: np.random.Generator):
    """Realized amplitude (mm) and direction, before quantization."""
    amp = rng.normal(plan.amplitude_mm, u.noise_k * plan.amplitude_mm) if u.noise_k else plan.amplitude_mm
    amp = max(amp, 0.0)
    direction = plan.direction
    if u.direction_noise_deg:
        direction += math.radians(rng.normal(0.0, u.direction_noise_deg))
    return amp, direction


def _bell_steps(amp_counts: float, direction: float, u: UserModel, n: int) -> np.ndarray:
    """Per-event float displacement (counts) of one ``n``-event bell, shape (n, 2)."""
    bell = bell_profile(n, u.peak_speed_scale)
    return np.outer(bell * amp_counts, [math.cos(direction), math.sin(direction)])


def _truncate(steps: np.ndarray, limit_counts: float) -> tuple[np.ndarray, np.ndarray]:
    """Split a stroke where its path length reaches ``limit_counts``.

    The event that crosses the limit is shortened so the first part covers
    exactly the limit. Returns ``(before, after)``.
    """
    lengths = np.hypot(steps[:, 0], steps[:, 1])
    travelled = np.cumsum(lengths)
    if travelled[-1] <= limit_counts:
        return steps, steps[:0]
    k = int(np.searchsorted(travelled, limit_counts))
    before_k = travelled[k - 1] if k else 0.0
    frac = (limit_counts - before_k) / lengths[k]
    head = steps[: k + 1].copy()
    head[k] *= frac
    tail = steps[k:].copy()
    tail[0] *= 1.0 - frac
    return head, tail


def execute_submovement(plan: Plan, u: UserModel, rng: np.random.Generator, device: DeviceSpec,
                        t0: float = 0.0, range_mm: float | None = None):
    """Emit one bell-shaped stroke as integer-count events.

    Returns ``(events, realized_mm)``. Event totals equal the realized
    amplitude rounded to whole counts on each axis. With ``range_mm`` the
    stroke keeps the speed profile of the full movement but stops once the
    device range is used up, so ``realized_mm`` never exceeds it.
    """
    amp, direction = _motion(plan, u, rng)
    steps = _bell_steps(amp * device.res_in, direction, u, u.bell_events(plan.amplitude_mm))
    if range_mm is not None and amp > range_mm:
        steps, _ = _truncate(steps, range_mm * device.res_in)
        amp = range_mm
    cum = np.cumsum(steps, axis=0)
    dx, dy = _quantize(cum[:, 0]), _quantize(cum[:, 1])
    events = [InputEvent(t0 + i * device.event_ms, int(dx[i]), int(dy[i])) for i in range(len(steps))]
    return events, amp


# -- trials and sessions -------------------------------------------------------


class _FilteredHand:
    """Hand position passed through per-axis 1 euro filters and re-quantized."""

    def __init__(self, cfg):
        self.fx = OneEuroFilter(cfg.one_euro_min_cutoff, cfg.one_euro_beta, cfg.one_euro_d_cutoff)
        self.fy = OneEuroFilter(cfg.one_euro_min_cutoff, cfg.one_euro_beta, cfg.one_euro_d_cutoff)
        self.hand = np.zeros(2)
        self.sent = np.zeros(2, dtype=np.int64)

    def events(self, steps: np.ndarray, times) -> list[InputEvent]:
        out = []
        for (sx, sy), t in zip(steps, times):
            self.hand += (sx, sy)
            fx = self.fx(t / 1000.0, self.hand[0])
            fy = self.fy(t / 1000.0, self.hand[1])
            target = np.floor(np.array([fx, fy]) + 0.5).astype(np.int64)
            d = target - self.sent
            self.sent = target
            out.append(InputEvent(t, int(d[0]), int(d[1])))
        return out


def _clutched_strokes(plan: Plan, u: UserModel, rng, device: DeviceSpec, cfg: Config, t0: float):
    """Float per-event steps (counts) and timestamps for one planned movement.

    Without clutching the bell is cut where the device range runs out. With
    clutching, a movement longer than the range is split into equal strokes,
    each its own bell, separated by a lift of ``clutch_gap_ms`` without events.
    """
    amp, direction = _motion(plan, u, rng)
    range_mm = cfg.device.range_mm
    if not cfg.user.clutch or amp <= range_mm:
        steps = _bell_steps(amp * device.res_in, direction, u, u.bell_events(plan.amplitude_mm))
        steps, _ = _truncate(steps, range_mm * device.res_in)
        times = t0 + np.arange(len(steps)) * device.event_ms
        return steps, [float(t) for t in times]
    k = math.ceil(amp / range_mm)
    stroke_mm = amp / k
    n = u.bell_events(plan.amplitude_mm / k)
    bell = _bell_steps(stroke_mm * device.res_in, direction, u, n)
    steps = np.vstack([bell] * k)
    gaps = np.zeros(len(steps))
    gaps[n::n] = cfg.user.clutch_gap_ms - device.event_ms
    times = t0 + np.arange(len(steps)) * device.event_ms + np.cumsum(gaps)
    return steps, [float(t) for t in times]


def run_trial(u: UserModel, engine: AutoGain, task: Task, rng: np.random.Generator, cfg: Config):
    """Execute one target acquisition and feed it through the engine.

    Returns ``(TrialLog, TrialResult, updated user)``.
    """
    device = engine.device
    target = task.target
    engine.begin_trial()
    hand = _FilteredHand(cfg.device) if cfg.device.one_euro else None
    events: list[InputEvent] = []
    path = [engine.cursor.position]
    hit = False
    issued = 0
    t0 = 0.0
    while issued < cfg.user.max_submovements:
        cursor = engine.cursor
        plan = plan_submovement(u, (cursor.x, cursor.y), target, device.res_out, issued)
        if cfg.user.clutch or hand is not None:
            steps, times = _clutched_strokes(plan, u, rng, device, cfg, t0)
            if hand is not None:
                new = hand.events(steps, times)
            else:
                cum = np.cumsum(steps, axis=0)
                dx, dy = _quantize(cum[:, 0]), _quantize(cum[:, 1])
                new = [InputEvent(t, int(a), int(b)) for t, a, b in zip(times, dx, dy)]
        else:
            new, _ = execute_submovement(plan, u, rng, device, t0, cfg.device.range_mm)
        start = np.array(engine.cursor.position)
        for ev in new:
            engine.move(ev)
            path.append(engine.cursor.position)
        events.extend(new)
        t0 = new[-1].t + device.event_ms
        issued += 1
        display_mm = float(np.hypot(*(np.array(engine.cursor.position) - start))) / device.res_out
        motor_mm = math.hypot(sum(e.dx for e in new), sum(e.dy for e in new)) / device.res_in
        u = u.observe(display_mm, motor_mm)
        if target.contains(engine.cursor.x, engine.cursor.y, device.res_out):
            hit = True
            break
    result = engine.end_trial(target, completed=hit)
    log_ = TrialLog(
        task=task,
        events=events,
        cursor_path=np.array(path),
        records=result.records,
        hit=hit,
        planned_submovements=issued,
        completion_s=len(events) / device.freq_in,
        p=result.p,
    )
    return log_, result, u


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


def block_metrics(trials: list[TrialLog], block_size: int) -> list[BlockMetrics]:
    blocks = []
    for b, start in enumerate(range(0, len(trials), block_size), start=1):
        chunk = trials[start : start + block_size]
        errors = [abs(r.aiming_error) for t in chunk for r in t.records if r.aiming_error is not None]
        blocks.append(
            BlockMetrics(
                block=b,
                mean_abs_R_mm=_mean(errors),
                submovements_per_trial=_mean([len(t.records) for t in chunk]),
                completion_proxy_s=_mean([t.completion_s for t in chunk]),
            )
        )
    return blocks


def run_session(cfg: Config, on_trial=None, keep_trials: bool = True) -> SessionResult:
    """Run ``cfg.session.trials`` trials, updating the gain table after each hit.

    ``on_trial(index, TrialLog, TrialResult, engine)`` is called after every
    trial, e.g. to stream logs to disk.
    """
    task_rng, motor_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    engine = AutoGain(cfg)
    initial = engine.table
    user = UserModel.from_config(cfg.user)
    metrics = SessionMetrics(class_counts={c.value: 0 for c in SubmovementClass})
    trials = []
    every = cfg.session.snapshot_every
    for i in range(cfg.session.trials):
        task = generate_task(task_rng, engine.device, (engine.cursor.x, engine.cursor.y), cfg.session)
        trial, result, user = run_trial(user, engine, task, motor_rng, cfg)
        if not trial.hit:
            metrics.aborted += 1
            log.info("trial %d aborted after %d submovements", i, trial.planned_submovements)
        for rec in trial.records:
            metrics.class_counts[rec.cls.value] += 1
        metrics.p_trace.append(result.p)
        if every and (i + 1) % every == 0:
            metrics.gain_snapshots[i + 1] = engine.table
        if on_trial is not None:
            on_trial(i, trial, result, engine)
        if keep_trials:
            trials.append(trial)
        else:
            # metrics only need the records and timing
            trials.append(replace(trial, events=[], cursor_path=np.empty((0, 2))))
    metrics.blocks = block_metrics(trials, cfg.session.block_size)
    return SessionResult(metrics, trials if keep_trials else [], initial, engine.table, user)
