"""Exact average-precision evaluation over finite detection sets.

The non-interpolated AP is the primary definition: sort a cell's
detections by descending score, walk the ranked list, and accumulate
precision at every true-positive rank divided by the class ground-truth
total. The 101-point interpolated variant exists only for comparison
reports. ``exact_delta_map`` is the brute-force marginal: it evaluates
the dataset metric with and without one candidate image and returns the
difference, serving as ground truth for the analytic estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .matching import MatchedDataset, MatchedImage
from .model import IouThresholdGrid


@dataclass(frozen=True)
class ApReport:
    """Per-cell AP values and their mean over evaluated classes and thresholds."""

    per_cell: Mapping[tuple[int, float], float]
    mean_ap: float
    n_classes: int


def ap_from_ranked(flags_ranked: np.ndarray, gt_count: int) -> float:
    """AP of an already rank-ordered TP/FP flag sequence."""
    if gt_count == 0:
        return math.nan
    if flags_ranked.size == 0:
        return 0.0
    cum_tp = np.cumsum(flags_ranked)
    ranks = np.arange(1, flags_ranked.size + 1)
    return float(np.sum(cum_tp[flags_ranked] / ranks[flags_ranked]) / gt_count)


def ap_single_arrays(scores: np.ndarray, flags: np.ndarray, gt_count: int) -> float:
    """AP from parallel score/flag arrays; ties keep input order."""
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    return ap_from_ranked(np.asarray(flags, dtype=bool)[order], gt_count)


def ap_single(matched: Sequence[tuple[float, bool]], gt_count: int) -> float:
    """Non-interpolated AP of one (class, threshold) cell.

    ``matched`` holds (score, is_tp) pairs in a deterministic input order
    that breaks score ties. Returns 0 when no detection is a TP, and NaN
    (cell excluded from any mean) when the class has no ground truth.
    """
    if gt_count < 0:
        raise ValueError("gt_count must be non-negative")
    if not matched:
        return math.nan if gt_count == 0 else 0.0
    scores = np.array([s for s, _ in matched], dtype=float)
    flags = np.array([bool(t) for _, t in matched])
    return ap_single_arrays(scores, flags, gt_count)


def ap_interpolated_101(matched: Sequence[tuple[float, bool]], gt_count: int) -> float:
    """101-point interpolated AP; comparison-report mode only."""
    if gt_count == 0:
        return math.nan
    if not matched:
        return 0.0
    scores = np.array([s for s, _ in matched], dtype=float)
    flags = np.array([bool(t) for _, t in matched])
    order = np.argsort(-scores, kind="stable")
    flags = flags[order]
    cum_tp = np.cumsum(flags)
    ranks = np.arange(1, flags.size + 1)
    precision = cum_tp / ranks
    recall = cum_tp / gt_count
    # Precision envelope: best precision at any recall >= r.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    out = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        idx = np.searchsorted(recall, r, side="left")
        if idx < recall.size:
            out += envelope[idx]
    return out / 101.0


def _cell_lists(
    pool: MatchedDataset, grid: IouThresholdGrid
) -> dict[tuple[int, int], tuple[list[float], list[bool]]]:
    cells: dict[tuple[int, int], tuple[list[float], list[bool]]] = {}
    for image_id in sorted(pool.images):
        for det in pool.images[image_id]:
            for k, flag in enumerate(det.tp_flags):
                key = (det.category_id, k)
                if key not in cells:
                    cells[key] = ([], [])
                cells[key][0].append(det.score)
                cells[key][1].append(flag)
    return cells


def map_exact(pool: MatchedDataset, grid: IouThresholdGrid) -> ApReport:
    """Dataset-level mean AP: average over classes with ground truth and
    over the threshold grid."""
    cells = _cell_lists(pool, grid)
    classes = sorted(c for c, n in pool.gt_counts.items() if n > 0)
    per_cell: dict[tuple[int, float], float] = {}
    total = 0.0
    for c in classes:
        for k, tau in enumerate(grid.thresholds):
            scores, flags = cells.get((c, k), ([], []))
            ap = ap_single_arrays(np.asarray(scores), np.asarray(flags, dtype=bool), pool.gt_counts[c])
            per_cell[(c, tau)] = ap
            total += ap
    n_cells = len(classes) * len(grid)
    mean = total / n_cells if n_cells else 0.0
    return ApReport(per_cell, mean, len(classes))


def _with_image(pool: MatchedDataset, x: MatchedImage) -> MatchedDataset:
    images = dict(pool.images)
    images[x.image_id] = tuple(x.detections)
    counts = dict(pool.gt_counts)
    for c, n in x.gt_counts.items():
        counts[c] = counts.get(c, 0) + n
    return MatchedDataset(images, counts)


def exact_delta_map(pool: MatchedDataset, x: MatchedImage, grid: IouThresholdGrid) -> float:
    """Exact marginal mAP of inserting one image into the pool.

    The insertion adds the image's detections to the ranked cell lists and
    its ground truths to the per-class totals, then re-evaluates the full
    metric on both sides.
    """
    if x.image_id in pool.images:
        raise ValueError(f"image {x.image_id} is already in the pool")
    before = map_exact(pool, grid).mean_ap
    after = map_exact(_with_image(pool, x), grid).mean_ap
    return after - before
