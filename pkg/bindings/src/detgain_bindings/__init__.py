"""In-process array bindings for marginal-mAP scoring inside training loops.

The training loop hands over plain per-image arrays (boxes, scores,
labels) instead of files, gets back one score per image, and ranks by
the teacher-student gap. No math lives here: everything delegates to the
detgain library, so values are bit-for-bit identical to the CLI on the
same inputs.

    config = BindingsConfig.with_fixed_ratio_stats(gt_counts={1: 120, 2: 80})
    gain_s = compute_detgain(student_preds, gts, config)
    gain_t = compute_detgain(teacher_preds, gts, config)
    chosen = select_topk_indices(gain_t - gain_s, ratio=0.2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from detgain.closedform import image_detgain
from detgain.matching import match_image, truncate_by_score
from detgain.model import (
    ClassThresholdStats,
    DetectionRecord,
    GroundTruthRecord,
    IouThresholdGrid,
    clamp_score,
    fixed_ratio_stats,
    stats_index,
)

__all__ = ["BindingsConfig", "compute_detgain", "select_topk_indices"]

# Image geometry is irrelevant to scoring; boxes only meet each other.
_VIRTUAL_IMAGE_ID = 0


@dataclass(frozen=True)
class BindingsConfig:
    """Threshold grid plus the frozen pool statistics to score against."""

    thresholds: tuple[float, ...] = IouThresholdGrid.coco().thresholds
    stats: Mapping[tuple[int, float], ClassThresholdStats] | None = None
    max_dets: int | None = 100

    @property
    def grid(self) -> IouThresholdGrid:
        return IouThresholdGrid(self.thresholds)

    @classmethod
    def with_stats(
        cls,
        stats: Mapping[tuple[int, float], ClassThresholdStats] | Sequence[ClassThresholdStats],
        thresholds: tuple[float, ...] | None = None,
        max_dets: int | None = 100,
    ) -> "BindingsConfig":
        """Score against precomputed per-(class, threshold) pool counts."""
        table = stats if isinstance(stats, Mapping) else stats_index(stats)
        ts = thresholds if thresholds is not None else IouThresholdGrid.coco().thresholds
        return cls(ts, table, max_dets)

    @classmethod
    def with_fixed_ratio_stats(
        cls,
        gt_counts: Mapping[int, int],
        thresholds: tuple[float, ...] | None = None,
        tf_ratio: tuple[float, float] = (1.0, 9.0),
        max_dets: int | None = 100,
    ) -> "BindingsConfig":
        """Cold-start statistics: a fixed TP:FP ratio per class."""
        ts = thresholds if thresholds is not None else IouThresholdGrid.coco().thresholds
        cells = [
            fixed_ratio_stats(n, tf_ratio, category_id=c, threshold=tau)
            for c, n in sorted(gt_counts.items())
            for tau in ts
        ]
        return cls(ts, stats_index(cells), max_dets)


def _as_image_arrays(entry, n_arrays: int, what: str, index: int):
    try:
        parts = tuple(np.asarray(a) for a in entry)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{what} for image {index} is not array-like") from exc
    if len(parts) != n_arrays:
        raise ValueError(
            f"{what} for image {index}: expected {n_arrays} arrays, got {len(parts)}"
        )
    boxes = parts[0].reshape(-1, 4) if parts[0].size else np.zeros((0, 4))
    n = boxes.shape[0]
    for k, arr in enumerate(parts[1:], start=1):
        if arr.reshape(-1).shape[0] != n:
            raise ValueError(
                f"{what} for image {index}: array {k} has length "
                f"{arr.reshape(-1).shape[0]}, expected {n}"
            )
    return (boxes, *(a.reshape(-1) for a in parts[1:]))


def compute_detgain(
    predictions: Sequence,
    ground_truths: Sequence,
    config: BindingsConfig,
) -> np.ndarray:
    """Marginal-mAP estimate per image from in-memory arrays.

    ``predictions[i]`` is ``(boxes, scores, labels)`` and
    ``ground_truths[i]`` is ``(boxes, labels)``, with boxes as (n, 4)
    ``[x, y, w, h]`` rows. Returns one float per image, identical to the
    library scoring path on equal inputs.
    """
    if config.stats is None:
        raise ValueError("config carries no pool statistics; use a with_* constructor")
    if len(predictions) != len(ground_truths):
        raise ValueError(
            f"got {len(predictions)} prediction entries but {len(ground_truths)} ground-truth entries"
        )
    grid = config.grid
    out = np.zeros(len(predictions))
    for i, (pred, gt) in enumerate(zip(predictions, ground_truths)):
        boxes, scores, labels = _as_image_arrays(pred, 3, "predictions", i)
        g_boxes, g_labels = _as_image_arrays(gt, 2, "ground_truths", i)
        dets = [
            DetectionRecord(_VIRTUAL_IMAGE_ID, int(c), tuple(b), clamp_score(float(s)))
            for b, s, c in zip(boxes, scores, labels)
        ]
        gts = [
            GroundTruthRecord(_VIRTUAL_IMAGE_ID, int(c), tuple(b))
            for b, c in zip(g_boxes, g_labels)
        ]
        matched = match_image(truncate_by_score(dets, config.max_dets), gts, grid)
        out[i] = image_detgain(matched, config.stats, grid)
    return out


def select_topk_indices(learnability: Sequence[float], ratio: float) -> list[int]:
    """Indices of the top ``max(1, floor(ratio * n))`` values, ties broken
    toward lower indices."""
    values = np.asarray(learnability, dtype=float)
    if values.size == 0:
        raise ValueError("cannot select from an empty score vector")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    k = max(1, math.floor(ratio * values.size))
    order = np.argsort(-values, kind="stable")
    return [int(i) for i in order[:k]]
