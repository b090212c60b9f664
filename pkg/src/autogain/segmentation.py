"""Submovement segmentation of a speed profile.

The series is smoothed with a truncated Gaussian, then local extrema are
paired by 1-D topological persistence (sublevel-set watershed with the
elder rule). Pairs whose persistence falls below the threshold are
discarded; every remaining maximum sits between two remaining minima, and
each min-max-min triplet is one candidate submovement.

Equal values are ordered by index, so among tied minima the lower index
is the elder and survives a merge.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.ndimage import gaussian_filter1d

DEFAULT_SIGMA = 3.0
DEFAULT_PERSISTENCE = 0.2


@dataclass(frozen=True)
class ExtremaSet:
    minima: tuple[int, ...]
    maxima: tuple[int, ...]
    global_max_index: int | None


@dataclass(frozen=True)
class SubmovementSpan:
    start_idx: int
    peak_idx: int
    end_idx: int

    def __post_init__(self):
        if not self.start_idx < self.peak_idx < self.end_idx:
            raise ValueError(f"invalid span {self}")


def _as_series(s) -> np.ndarray:
    values = np.asarray(s, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("speed series must be a non-empty 1-D sequence")
    return values


def gaussian_smooth(s, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Gaussian smoothing, kernel truncated at +-3 sigma, edges replicated."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    values = _as_series(s)
    return gaussian_filter1d(values, sigma, mode="nearest", truncate=3.0)


@njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=True)
def pair_extrema(values):
    """Persistence pairing of a 1-D series.

    Returns ``(pairs, global_min)`` where ``pairs`` is an ``(m, 2)`` array of
    ``(min_idx, max_idx)`` in the order the pairs are created.
    """
    n = values.shape[0]
    order = np.argsort(values, kind="mergesort")
    parent = np.full(n, -1, dtype=np.int64)
    pairs = np.empty((n, 2), dtype=np.int64)
    m = 0
    for idx in order:
        left = -1
        right = -1
        if idx > 0 and parent[idx - 1] >= 0:
            left = _find(parent, idx - 1)
        if idx < n - 1 and parent[idx + 1] >= 0:
            right = _find(parent, idx + 1)
        if left < 0 and right < 0:
            parent[idx] = idx
        elif right < 0:
            parent[idx] = left
        elif left < 0:
            parent[idx] = right
        else:
            # left root always has the lower index, so it wins ties
            if values[right] < values[left]:
                elder, younger = right, left
            else:
                elder, younger = left, right
            parent[idx] = elder
            parent[younger] = elder
            pairs[m, 0] = younger
            pairs[m, 1] = idx
            m += 1
    return pairs[:m].copy(), _find(parent, 0)


@njit(cache=True)
def select_extrema(values, pairs, global_min, threshold):
    """Sorted minima and maxima that survive the persistence threshold."""
    keep = np.zeros(pairs.shape[0], dtype=np.bool_)
    for k in range(pairs.shape[0]):
        keep[k] = values[pairs[k, 1]] - values[pairs[k, 0]] >= threshold
    kept = pairs[keep]
    minima = np.empty(kept.shape[0] + 1, dtype=np.int64)
    minima[: kept.shape[0]] = kept[:, 0]
    minima[kept.shape[0]] = global_min
    return np.sort(minima), np.sort(kept[:, 1])


def persistence_extrema(s, threshold: float = DEFAULT_PERSISTENCE) -> ExtremaSet:
    values = _as_series(s)
    pairs, global_min = pair_extrema(values)
    minima, maxima = select_extrema(values, pairs, global_min, float(threshold))
    global_max = None
    if maxima.size:
        # argmax returns the first (lowest-index) maximum on ties
        global_max = int(maxima[np.argmax(values[maxima])])
    return ExtremaSet(
        tuple(int(i) for i in minima), tuple(int(i) for i in maxima), global_max
    )


def segment_submovements(
    s, sigma: float = DEFAULT_SIGMA, threshold: float = DEFAULT_PERSISTENCE
) -> list[SubmovementSpan]:
    """Split a trial's speed series into submovement spans.

    Spans start at the triplet holding the highest maximum; anything before
    it is dropped. The last span is extended to the final sample so the
    returned spans tile the rest of the trial.
    """
    values = _as_series(s)
    smoothed = gaussian_smooth(values, sigma)
    ext = persistence_extrema(smoothed, threshold)
    if ext.global_max_index is None:
        return []
    minima = np.asarray(ext.minima)
    spans = []
    for peak in ext.maxima:
        if peak < ext.global_max_index:
            continue
        k = np.searchsorted(minima, peak)
        spans.append([int(minima[k - 1]), int(peak), int(minima[k])])
    spans[-1][2] = max(spans[-1][2], values.size - 1)
    return [SubmovementSpan(*span) for span in spans]
