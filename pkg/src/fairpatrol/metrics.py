"""Allocation and detection metrics reported per deployment cycle."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .allocator import DIR_DELTA, dir_of

COVERAGE_TAU = 0.5


@dataclass
class MetricBundle:
    dir_mean: float
    dir_std: float
    dir_degenerate_steps: int
    gini: float
    coverage: float
    coverage_tau: float
    det_min: float
    det_maj: float
    det_degenerate: bool
    det_cell_min: float
    det_cell_max: float
    patrol_min_mean: float
    patrol_maj_mean: float
    obs_dir_smoothed: float
    optimal_fraction: float

    def to_dict(self) -> dict:
        return asdict(self)


def gini(p) -> float:
    """Mean absolute pairwise difference over twice the mean; 0 for zero mass."""
    p = np.asarray(p, dtype=np.float64)
    n = p.size
    total = p.sum()
    if n == 0 or total <= 0:
        return 0.0
    # sum_{i,j} |p_i - p_j| = 2 * sum_i (2i - n + 1) p_(i) over the sorted values
    s = np.sort(p)
    pair_sum = 2.0 * np.dot(2 * np.arange(n) - n + 1, s)
    return float(pair_sum / (2.0 * n * n * (total / n)))


def gini_rows(P) -> np.ndarray:
    return np.array([gini(row) for row in np.asarray(P)])


def coverage(risks, p, tau: float = COVERAGE_TAU) -> float:
    risks = np.asarray(risks, dtype=np.float64)
    total = risks.sum()
    if total <= 0:
        return 1.0
    return float(risks[np.asarray(p) >= tau].sum() / total)


def detection_ratios(y_true, y_obs, mask, delta: float = DIR_DELTA):
    """Observed over true incident totals per group, zones on axis 0.

    Returns ``(det_min, det_maj, degenerate)``; a group with less than
    ``delta`` true incidents uses ``total + delta`` and sets ``degenerate``.
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    y_obs = np.asarray(y_obs, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    out = []
    degenerate = False
    for g in (mask, ~mask):
        true = y_true[g].sum()
        obs = y_obs[g].sum()
        if true < delta:
            degenerate = True
            true += delta
        out.append(float(obs / true))
    return out[0], out[1], degenerate


def cell_detection_range(y_true, y_obs) -> tuple[float, float]:
    """Smallest and largest ``y_obs / y_true`` over cells with crime; NaN if none."""
    y_true = np.asarray(y_true, dtype=np.float64)
    pos = y_true > 0
    if not pos.any():
        return math.nan, math.nan
    r = np.asarray(y_obs, dtype=np.float64)[pos] / y_true[pos]
    return float(r.min()), float(r.max())


def dir_series_stats(P, mask):
    """Mean and population std of per-step DIR over non-degenerate steps.

    Returns ``(mean, std, n_degenerate)``; both stats are NaN when every step
    is degenerate.
    """
    values = []
    bad = 0
    for row in np.asarray(P):
        d, degenerate = dir_of(row, mask)
        if degenerate:
            bad += 1
        else:
            values.append(d)
    if not values:
        return math.nan, math.nan, bad
    v = np.array(values)
    return float(v.mean()), float(v.std()), bad


def observed_dir_smoothed(y_obs, mask, delta: float = DIR_DELTA) -> float:
    """Per-step mean observed count ratio (minority over non-minority + delta).

    Diagnostic only; blows up when non-minority zones record nothing.
    """
    y_obs = np.asarray(y_obs, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    ratio = y_obs[mask].mean(axis=0) / (y_obs[~mask].mean(axis=0) + delta)
    return float(ratio.mean())


def metric_bundle(P, risks, y_true, y_obs, mask, tau: float = COVERAGE_TAU, optimal_fraction: float = 1.0) -> MetricBundle:
    """All cycle metrics. ``P`` and ``risks`` are (T, N); counts are (N, T)."""
    P = np.asarray(P, dtype=np.float64)
    risks = np.asarray(risks, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    d_mean, d_std, d_bad = dir_series_stats(P, mask)
    det_min, det_maj, det_bad = detection_ratios(y_true, y_obs, mask)
    cell_lo, cell_hi = cell_detection_range(y_true, y_obs)
    return MetricBundle(
        dir_mean=d_mean,
        dir_std=d_std,
        dir_degenerate_steps=d_bad,
        gini=float(gini_rows(P).mean()),
        coverage=float(np.mean([coverage(r, p, tau) for r, p in zip(risks, P)])),
        coverage_tau=tau,
        det_min=det_min,
        det_maj=det_maj,
        det_degenerate=det_bad,
        det_cell_min=cell_lo,
        det_cell_max=cell_hi,
        patrol_min_mean=float(P[:, mask].mean()),
        patrol_maj_mean=float(P[:, ~mask].mean()),
        obs_dir_smoothed=observed_dir_smoothed(y_obs, mask),
        optimal_fraction=optimal_fraction,
    )
