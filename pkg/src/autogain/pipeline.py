"""The per-trial update loop shared by simulation and offline replay.

An :class:`AutoGain` engine holds all per-session state. Events are fed
one by one through :meth:`AutoGain.move`. :meth:`AutoGain.end_trial` then
segments and classifies the trial; completed trials also update the aim
point filter and the gain table.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import analysis, optimizer, segmentation
from .analysis import SubmovementClass, SubmovementRecord, TargetSpec
from .config import Config
from .segmentation import SubmovementSpan
from .transfer import CursorState, InputEvent, apply_input

log = logging.getLogger(__name__)


def attach_lifts(spans: list[SubmovementSpan], times, clutch_ms: float) -> list[SubmovementSpan]:
    """Give a lift that falls exactly on a span boundary to the span before it.

    Speed minima sit where the finger stops, which is usually the last event
    before a lift, so the pause would otherwise open the next submovement.
    The next span is made to start at touch-down instead.
    """
    out = list(spans)
    for k in range(len(out) - 1):
        e = out[k].end_idx
        nxt = out[k + 1]
        if times[e + 1] - times[e] > clutch_ms and e + 1 < nxt.peak_idx:
            out[k] = replace(out[k], end_idx=e + 1)
            out[k + 1] = replace(nxt, start_idx=e + 1)
    return out


@dataclass(frozen=True)
class TrialResult:
    records: list[SubmovementRecord]
    batch: optimizer.UpdateBatch | None
    p: float


class AutoGain:
    def __init__(self, config: Config, cursor: CursorState | None = None):
        self.config = config
        self.device = config.device.spec()
        self.table = config.gain_table.table()
        k = config.kalman
        self.filter = analysis.AimPointFilter(k.p0, k.cov0, k.q, k.r)
        self.rate = optimizer.ChangeRate(config.optimizer.c)
        if cursor is None:
            cursor = CursorState(self.device.screen_w // 2, self.device.screen_h // 2)
        self.cursor = cursor
        self._events: list[InputEvent] = []
        self._path: list[tuple[float, float]] = []
        self._last_batch: optimizer.UpdateBatch | None = None

    def begin_trial(self) -> None:
        self._events = []
        self._path = []

    def move(self, event: InputEvent) -> CursorState:
        self.cursor = apply_input(event, self.table, self.device, self.cursor)
        self._events.append(event)
        self._path.append(self.cursor.position)
        return self.cursor

    @property
    def trial_events(self) -> list[InputEvent]:
        return list(self._events)

    def end_trial(self, target: TargetSpec, completed: bool = True) -> TrialResult:
        """Analyse the buffered trial; update filter and gains only if ``completed``."""
        records = self.analyze(self._events, self._path, target, update=completed)
        batch = self._last_batch if completed else None
        self.begin_trial()
        return TrialResult(records, batch, self.filter.p)

    def analyze(self, events, path, target: TargetSpec, update: bool = True) -> list[SubmovementRecord]:
        cfg = self.config
        self._last_batch = None
        if not events:
            return []
        counts = np.array([np.hypot(e.dx, e.dy) for e in events])
        spans = segmentation.segment_submovements(
            counts, cfg.segmentation.sigma, cfg.segmentation.persistence
        )
        if not spans:
            return []
        times = [e.t for e in events]
        spans = attach_lifts(spans, times, cfg.classification.clutch_ms)
        path = np.asarray(path, dtype=float)
        res_out = self.device.res_out
        records = [
            analysis.measure(s, path[s.start_idx : s.end_idx + 1], times, target, res_out)
            for s in spans
        ]
        records = analysis.classify(records, cfg.classification.params())

        speeds = counts * self.device.c_in
        table = self.table
        out = []
        for rec in records:
            if update and rec.updates_aim_point:
                self.filter = analysis.update_aim_point(
                    self.filter, rec.d_target, rec.d_c, cfg.kalman.measurement
                )
            error = None
            if rec.updates_gain:
                toward_aim_point = rec.ballistic or (
                    cfg.classification.interrupted_uses_aim_point
                    and rec.cls is SubmovementClass.INTERRUPTED
                )
                error = analysis.aiming_error(self.filter.p, rec.d_target, rec.d_c, toward_aim_point)
            occ = analysis.speed_occupancy(
                speeds[rec.span.start_idx : rec.span.end_idx + 1],
                table.bin_width,
                len(table),
                grow=cfg.gain_table.grow,
            )
            out.append(replace(rec, occupancy=occ, aiming_error=error))

        n_bins = max(len(table), max(len(r.occupancy) for r in out))
        for i, rec in enumerate(out):
            if len(rec.occupancy) < n_bins:
                occ = np.zeros(n_bins, dtype=bool)
                occ[: len(rec.occupancy)] = rec.occupancy
                out[i] = replace(rec, occupancy=occ)

        if update:
            claims = [
                (r.aiming_error if r.updates_gain else 0.0, r.occupancy)
                for r in out
                if r.updates_gain or cfg.optimizer.unaimed_claims_bins
            ]
            batch = optimizer.compute_deltas(claims, self.rate, n_bins)
            self.table = optimizer.apply_update(table, batch)
            self._last_batch = batch
        return out


def record_report(trial: int, index: int, rec: SubmovementRecord) -> dict:
    """One line of the JSONL submovement report."""
    return {
        "trial": trial,
        "index": index,
        "class": rec.cls.value,
        "ballistic": bool(rec.ballistic),
        "clutched": bool(rec.clutched),
        "d_target_mm": rec.d_target,
        "d_c_mm": rec.d_c,
        "max_ang_dev_deg": rec.max_ang_dev,
        "R_mm": rec.aiming_error,
        "occupied_bins": [int(j) for j in np.flatnonzero(rec.occupancy)],
    }
