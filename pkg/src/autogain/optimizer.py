"""Bin-local gain update from per-submovement aiming errors.

Each bin is changed by at most one submovement per trial: the latest one
that used it. The change is ``c * R`` (``R`` in mm, ``c`` in 1/mm).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transfer import GainTable

DEFAULT_C = 5e-5
STUDY1_C = 6.4e-5
STUDY2_C = 3.6e-5


@dataclass(frozen=True)
class ChangeRate:
    c: float = DEFAULT_C  # 1/mm

    def __post_init__(self):
        # c == 0 is allowed: it freezes the table
        if not self.c >= 0:
            raise ValueError("change rate must be >= 0")


@dataclass(frozen=True)
class UpdateBatch:
    errors: np.ndarray  # (N,) aiming errors, mm
    occupancy: np.ndarray  # (N, J) bool
    deltas: np.ndarray  # (N, J)
    claimed: np.ndarray  # (J,) bool

    @property
    def n_bins(self) -> int:
        return self.deltas.shape[1]

    @property
    def total(self) -> np.ndarray:
        return self.deltas.sum(axis=0)


def change_rate_from_budget(delta_g: float, m: float, mu_r: float) -> ChangeRate:
    """Rate that moves a bin by ``delta_g`` after ``m`` submovements of mean error ``mu_r`` mm."""
    if not (delta_g > 0 and m > 0 and mu_r > 0):
        raise ValueError("every budget argument must be > 0")
    return ChangeRate(delta_g / (m * mu_r))


def compute_deltas(records, c: ChangeRate, n_bins: int) -> UpdateBatch:
    """``records`` is a sequence of ``(R, occupancy)`` pairs in trial order."""
    errors = np.array([r for r, _ in records], dtype=float)
    rows = [np.asarray(s, dtype=bool) for _, s in records]
    for i, s in enumerate(rows):
        if s.shape != (n_bins,):
            raise ValueError(f"occupancy {i} has length {s.size}, gain table has {n_bins} bins")
    occ = np.array(rows, dtype=bool).reshape(len(rows), n_bins)
    deltas = np.zeros(occ.shape)
    claimed = np.zeros(n_bins, dtype=bool)
    for i in range(len(rows) - 1, -1, -1):
        fresh = occ[i] & ~claimed
        deltas[i, fresh] = c.c * errors[i]
        claimed |= occ[i]
    return UpdateBatch(errors, occ, deltas, claimed)


def apply_update(g: GainTable, batch: UpdateBatch) -> GainTable:
    """Add the batch to the table, clamped at the gain floor.

    The table grows (repeating its last gain) only as far as the highest bin
    that actually changes; growing further would not alter the gain function.
    A batch with no non-zero delta returns ``g`` unchanged.
    """
    if batch.n_bins < len(g):
        raise ValueError(f"batch covers {batch.n_bins} bins, gain table has {len(g)}")
    total = batch.total
    changed = np.flatnonzero(total)
    if changed.size == 0:
        return g
    g = g.grown(int(changed[-1]) + 1)
    gains = np.maximum(g.gains + total[: len(g)], g.gain_floor)
    return g.with_gains(gains)
