"""Shared synthetic-data builders for the demo scripts."""

from __future__ import annotations

import numpy as np

from detgain import Dataset, DetectionRecord, GroundTruthRecord
from detgain.ingest import ImageInfo
from detgain.model import clamp_score

CANVAS = (640, 480)


def make_dataset(n_images: int, n_classes: int = 5, seed: int = 0,
                 min_gts: int = 1, max_gts: int = 4) -> Dataset:
    rng = np.random.default_rng(seed)
    images, gts = [], []
    for i in range(1, n_images + 1):
        images.append(ImageInfo(i, *CANVAS))
        for _ in range(int(rng.integers(min_gts, max_gts + 1))):
            w, h = rng.uniform(40, 140, 2)
            x = rng.uniform(0, CANVAS[0] - w)
            y = rng.uniform(0, CANVAS[1] - h)
            gts.append(GroundTruthRecord(i, int(rng.integers(1, n_classes + 1)), (x, y, w, h)))
    cats = tuple((c, f"cat{c}") for c in range(1, n_classes + 1))
    return Dataset(tuple(images), tuple(gts), cats)


def strong_model_dump(ds: Dataset, seed: int = 0) -> list[DetectionRecord]:
    """High-confidence, well-localized detections: an oracle-ish model."""
    rng = np.random.default_rng(seed)
    return [
        DetectionRecord(gt.image_id, gt.category_id, gt.bbox,
                        clamp_score(float(rng.uniform(0.85, 0.99))))
        for gt in ds.ground_truths
    ]


def weak_model_dump(ds: Dataset, seed: int = 0, drift: float = 0.12) -> list[DetectionRecord]:
    """Mid-confidence detections with localization drift plus spurious boxes."""
    rng = np.random.default_rng(seed)
    out = []
    n_classes = len(ds.categories)
    for gt in ds.ground_truths:
        x, y, w, h = gt.bbox
        x += rng.uniform(-drift, drift) * w
        y += rng.uniform(-drift, drift) * h
        out.append(DetectionRecord(gt.image_id, gt.category_id, (x, y, w, h),
                                   clamp_score(float(rng.uniform(0.4, 0.7)))))
    for im in ds.images:
        for _ in range(rng.poisson(1.5)):
            w, h = rng.uniform(30, 100, 2)
            x = rng.uniform(0, CANVAS[0] - w)
            y = rng.uniform(0, CANVAS[1] - h)
            out.append(DetectionRecord(im.image_id, int(rng.integers(1, n_classes + 1)),
                                       (x, y, w, h), clamp_score(float(rng.uniform(0.3, 0.6)))))
    return out
