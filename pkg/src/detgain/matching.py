"""Greedy one-to-one matching of detections to ground truth.

Matching runs independently per class and per IoU threshold: detections
are visited in descending score order (ties by input index) and each
takes the unmatched same-class ground-truth box of highest IoU, provided
that IoU clears the threshold. Assignments are recomputed from scratch
at every threshold because greedy choices can differ across thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .ingest import Dataset
from .model import (
    Bbox,
    DetectionRecord,
    GroundTruthRecord,
    IouThresholdGrid,
    MatchedDetection,
)


def iou(a: Bbox, b: Bbox) -> float:
    """Intersection-over-union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValueError("boxes must have positive dimensions")
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


def _iou_matrix(dets: Sequence[Bbox], gts: Sequence[Bbox]) -> np.ndarray:
    d = np.asarray(dets, dtype=float).reshape(-1, 4)
    g = np.asarray(gts, dtype=float).reshape(-1, 4)
    ix = np.minimum(d[:, None, 0] + d[:, None, 2], g[None, :, 0] + g[None, :, 2]) - np.maximum(
        d[:, None, 0], g[None, :, 0]
    )
    iy = np.minimum(d[:, None, 1] + d[:, None, 3], g[None, :, 1] + g[None, :, 3]) - np.maximum(
        d[:, None, 1], g[None, :, 1]
    )
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    union = (d[:, 2] * d[:, 3])[:, None] + (g[:, 2] * g[:, 3])[None, :] - inter
    # Float noise can push identical boxes a few ulp above 1.
    return np.clip(inter / union, 0.0, 1.0)


def match_image(
    dets: Sequence[DetectionRecord],
    gts: Sequence[GroundTruthRecord],
    grid: IouThresholdGrid,
) -> list[MatchedDetection]:
    """Match one image's detections, yielding per-threshold TP flags.

    Returned records are in processing order (score descending, input
    index ascending). ``iou`` on each record is the IoU to the best
    same-class ground-truth box, 0 when the class has none.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    flags = {i: np.zeros(len(grid), dtype=bool) for i in order}
    best_iou = {i: 0.0 for i in order}

    classes = {d.category_id for d in dets}
    for c in classes:
        det_idx = [i for i in order if dets[i].category_id == c]
        gt_idx = [j for j, g in enumerate(gts) if g.category_id == c]
        if not gt_idx:
            continue
        ious = _iou_matrix([dets[i].bbox for i in det_idx], [gts[j].bbox for j in gt_idx])
        for row, i in enumerate(det_idx):
            best_iou[i] = float(ious[row].max())
        for k, tau in enumerate(grid.thresholds):
            taken = np.zeros(len(gt_idx), dtype=bool)
            for row, i in enumerate(det_idx):
                cand = np.where(~taken & (ious[row] >= tau))[0]
                if cand.size == 0:
                    continue
                j = cand[np.argmax(ious[row][cand])]
                taken[j] = True
                flags[i][k] = True

    return [
        MatchedDetection(
            score=dets[i].score,
            category_id=dets[i].category_id,
            iou=best_iou[i],
            tp_flags=tuple(flags[i]),
        )
        for i in order
    ]


@dataclass(frozen=True)
class MatchedImage:
    """One image's matched detections plus its own ground-truth class counts."""

    image_id: int
    detections: tuple[MatchedDetection, ...]
    gt_counts: Mapping[int, int]


@dataclass(frozen=True)
class MatchedDataset:
    """Matched detections for every dataset image plus per-class GT totals."""

    images: Mapping[int, tuple[MatchedDetection, ...]]
    gt_counts: Mapping[int, int]

    def image(self, image_id: int) -> MatchedImage:
        dets = self.images[image_id]
        return MatchedImage(image_id, dets, {})

    def without_image(self, image_id: int, image_gt_counts: Mapping[int, int]) -> "MatchedDataset":
        """The pool with one image (and its ground truths) removed."""
        remaining = {i: d for i, d in self.images.items() if i != image_id}
        counts = dict(self.gt_counts)
        for c, n in image_gt_counts.items():
            counts[c] = counts.get(c, 0) - n
        return MatchedDataset(remaining, counts)


def truncate_by_score(
    dets: Sequence[DetectionRecord], max_dets: int | None
) -> Sequence[DetectionRecord]:
    """Keep the top ``max_dets`` detections by score (ties by input index),
    preserving input order among the survivors."""
    if max_dets is None or len(dets) <= max_dets:
        return dets
    keep = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))[:max_dets]
    return [dets[i] for i in sorted(keep)]


def match_dataset(
    dets: Sequence[DetectionRecord],
    ds: Dataset,
    grid: IouThresholdGrid,
    max_dets: int | None = 100,
) -> MatchedDataset:
    """Match a full detection dump against a dataset.

    Every dataset image appears in the result, with an empty tuple when it
    has no detections. Detections per image are optionally truncated to the
    top ``max_dets`` by score before matching.
    """
    known_ids = {im.image_id for im in ds.images}
    by_image: dict[int, list[DetectionRecord]] = {i: [] for i in known_ids}
    for det in dets:
        if det.image_id not in known_ids:
            raise ValueError(f"detection references image_id {det.image_id} not in the dataset")
        by_image[det.image_id].append(det)

    gts_by_image = ds.gts_by_image()
    matched: dict[int, tuple[MatchedDetection, ...]] = {}
    for image_id in sorted(known_ids):
        img_dets = truncate_by_score(by_image[image_id], max_dets)
        matched[image_id] = tuple(match_image(img_dets, gts_by_image[image_id], grid))

    return MatchedDataset(matched, ds.gt_class_counts())


def image_gt_counts(ds: Dataset, image_id: int) -> dict[int, int]:
    """Per-class ground-truth counts of a single image."""
    counts: dict[int, int] = {}
    for gt in ds.ground_truths:
        if gt.image_id == image_id:
            counts[gt.category_id] = counts.get(gt.category_id, 0) + 1
    return counts
