"""Closed-form insertion marginals under the uniform score prior.

With TP and FP confidence scores both modeled as uniform on (0, 1), the
expected AP change of one cell when a single detection is inserted at
score s has a compact closed form in the accumulated counts T, F,
A = T + F and the class ground-truth total:

    tp(s) = (1/T_GT) * [ (T(1-s)+1) / (A(1-s)+1) + (T*F/A^2) * L(s) ]
    fp(s) = -(T^2 / (T_GT * A^2)) * L(s)
    L(s)  = ln((A+1) / (A(1-s)+1))

Both are monotone in s: increasing for TP insertions, decreasing for FP
insertions. ``image_detgain`` sums these per-detection effects over a
matched image and normalizes by the class and threshold counts, giving
the per-image marginal-mAP estimate.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .model import (
    ClassThresholdStats,
    IouThresholdGrid,
    MatchedDetection,
    stats_index,
)

ArrayLike = Union[float, np.ndarray]
StatsMap = Mapping[tuple[int, float], ClassThresholdStats]


def _log_ratio(s: ArrayLike, a: float) -> np.ndarray:
    # ln((A+1)/(A(1-s)+1)) written via log1p: for small s the ratio is
    # 1 + A*s/(A(1-s)+1) and the naive form loses all significant digits.
    s = np.asarray(s, dtype=float)
    return np.log1p(a * s / (a * (1.0 - s) + 1.0))


def _check_open_unit(s: np.ndarray) -> None:
    if np.any(s <= 0.0) or np.any(s >= 1.0):
        raise ValueError("insertion score must lie strictly inside (0, 1)")


def delta_ap_tp_uniform(s: ArrayLike, stats: ClassThresholdStats) -> ArrayLike:
    """Expected AP change from inserting one TP at score s (uniform prior).

    The inserted TP recalls one previously-missed ground truth, so the
    recall denominator stays at the class total. Accepts a scalar or an
    array of scores.
    """
    if stats.gt_count == 0:
        raise ValueError("AP is undefined for a class with no ground truth")
    arr = np.asarray(s, dtype=float)
    _check_open_unit(arr)
    t, f, a = float(stats.tp_count), float(stats.fp_count), float(stats.total)
    if a == 0.0:
        bracket = np.ones_like(arr)
    else:
        self_term = (t * (1.0 - arr) + 1.0) / (a * (1.0 - arr) + 1.0)
        bracket = self_term + (t * f / a**2) * _log_ratio(arr, a)
    out = bracket / stats.gt_count
    return float(out) if np.ndim(s) == 0 else out


def delta_ap_fp_uniform(s: ArrayLike, stats: ClassThresholdStats) -> ArrayLike:
    """Expected AP change from inserting one FP at score s (uniform prior).

    Always non-positive; zero only when no TPs are accumulated or s -> 0.
    """
    if stats.gt_count == 0:
        raise ValueError("AP is undefined for a class with no ground truth")
    arr = np.asarray(s, dtype=float)
    _check_open_unit(arr)
    t, a = float(stats.tp_count), float(stats.total)
    if a == 0.0 or t == 0.0:
        out = np.zeros_like(arr)
    else:
        out = -(t * t / a**2) * _log_ratio(arr, a) / stats.gt_count
    return float(out) if np.ndim(s) == 0 else out


def learnability(delta_teacher: float, delta_student: float) -> float:
    """Teacher-minus-student marginal gap; high values mark images whose
    detections the teacher turns into more metric value than the student."""
    return delta_teacher - delta_student


MarginalFn = Callable[[float, ClassThresholdStats, tuple[int, float]], float]


def _count_classes(stats: StatsMap) -> int:
    return len({c for (c, _), cell in stats.items() if cell.gt_count > 0})


def aggregate_image(
    matched: Sequence[MatchedDetection],
    stats: StatsMap,
    grid: IouThresholdGrid,
    tp_marginal: MarginalFn,
    fp_marginal: MarginalFn,
) -> float:
    """Sum per-detection insertion marginals over an image and normalize.

    Cells with no ground truth (or absent from the stats table) are
    skipped, mirroring their exclusion from the dataset metric's class
    mean. The normalizer counts classes with positive ground truth in the
    reference pool times the number of thresholds.
    """
    n_classes = _count_classes(stats)
    if n_classes == 0:
        return 0.0
    total = 0.0
    for det in matched:
        for k, tau in enumerate(grid.thresholds):
            key = (det.category_id, tau)
            cell = stats.get(key)
            if cell is None or cell.gt_count == 0:
                continue
            if det.tp_flags[k]:
                total += tp_marginal(det.score, cell, key)
            else:
                total += fp_marginal(det.score, cell, key)
    return total / (n_classes * len(grid))


def image_detgain(
    matched: Sequence[MatchedDetection],
    stats: StatsMap | Iterable[ClassThresholdStats],
    grid: IouThresholdGrid,
) -> float:
    """Per-image marginal-mAP estimate under the uniform prior."""
    table = stats if isinstance(stats, Mapping) else stats_index(stats)
    return aggregate_image(
        matched,
        table,
        grid,
        lambda s, cell, _key: delta_ap_tp_uniform(s, cell),
        lambda s, cell, _key: delta_ap_fp_uniform(s, cell),
    )
