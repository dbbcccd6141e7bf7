"""COCO-style annotation/result file I/O and annotation corruption.

The corruption operators synthesize low-quality annotation variants:
box jittering, label swaps, deletions, and fake-box insertion. Each
image gets its own RNG stream derived from (seed, image_id), so output
is deterministic and per-image work parallelizes.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import Bbox, DetectionRecord, GroundTruthRecord, clamp_score

CORRUPTION_TYPES = ("jitter", "labels", "deletion", "fakes")

# Jitter draws scale factors from [0.5, 1.5] and rejects draws closer to 1
# than 5%, so a jittered box is never a near-copy of the original.
JITTER_LO, JITTER_HI = 0.5, 1.5
JITTER_MIN_DEV = 0.05

FAKE_BOX_CAP = 20
FAKE_IOU_LIMIT = 0.1
FAKE_PLACEMENT_ATTEMPTS = 50


class ParseError(ValueError):
    """A malformed annotation or detection file."""


@dataclass(frozen=True)
class ImageInfo:
    image_id: int
    width: int
    height: int


@dataclass(frozen=True)
class LoadReport:
    n_images: int
    n_annotations: int
    n_crowd_dropped: int

    def to_json(self) -> dict:
        return {
            "images": self.n_images,
            "annotations": self.n_annotations,
            "crowd_dropped": self.n_crowd_dropped,
        }


@dataclass(frozen=True)
class Dataset:
    """Annotation container: images, ground-truth boxes, category table."""

    images: tuple[ImageInfo, ...]
    ground_truths: tuple[GroundTruthRecord, ...]
    categories: tuple[tuple[int, str], ...]
    load_report: LoadReport | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        ids = {im.image_id for im in self.images}
        for gt in self.ground_truths:
            if gt.image_id not in ids:
                raise ValueError(f"ground truth references unknown image_id {gt.image_id}")

    def image_ids(self) -> list[int]:
        return sorted(im.image_id for im in self.images)

    def image_size(self, image_id: int) -> tuple[int, int]:
        for im in self.images:
            if im.image_id == image_id:
                return (im.width, im.height)
        raise KeyError(image_id)

    def gts_by_image(self) -> dict[int, list[GroundTruthRecord]]:
        out: dict[int, list[GroundTruthRecord]] = {im.image_id: [] for im in self.images}
        for gt in self.ground_truths:
            out[gt.image_id].append(gt)
        return out

    def category_ids(self) -> list[int]:
        return sorted(c for c, _ in self.categories)

    def gt_class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for gt in self.ground_truths:
            counts[gt.category_id] = counts.get(gt.category_id, 0) + 1
        return counts


@dataclass(frozen=True)
class CorruptionConfig:
    """Which corruption types run, on what fraction of images, and the seed."""

    probability: float
    enabled: tuple[str, ...] = CORRUPTION_TYPES
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must lie in [0, 1], got {self.probability}")
        unknown = set(self.enabled) - set(CORRUPTION_TYPES)
        if unknown:
            raise ValueError(f"unknown corruption types: {sorted(unknown)}")
        object.__setattr__(self, "enabled", tuple(self.enabled))


@dataclass(frozen=True)
class CorruptionResult:
    dataset: Dataset
    selected_ids: tuple[int, ...]  # images drawn for corruption
    modified_ids: tuple[int, ...]  # images whose annotations actually changed

    def manifest(self) -> dict:
        return {"selected": list(self.selected_ids), "modified": list(self.modified_ids)}


# ---------------------------------------------------------------------------
# Loading and saving
# ---------------------------------------------------------------------------


def _clip_box(bbox: Bbox, width: float, height: float) -> Bbox:
    x, y, w, h = bbox
    x0, y0 = max(0.0, x), max(0.0, y)
    x1, y1 = min(float(width), x + w), min(float(height), y + h)
    return (x0, y0, x1 - x0, y1 - y0)


def load_ground_truth(path: str) -> Dataset:
    """Parse a COCO annotation file.

    Crowd annotations are dropped (and counted in the load report); boxes
    are clipped to their image. Malformed records raise ParseError naming
    the offending annotation.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc

    for key in ("images", "annotations", "categories"):
        if key not in raw:
            raise ParseError(f"{path}: missing required key {key!r}")

    images = []
    for rec in raw["images"]:
        try:
            images.append(ImageInfo(int(rec["id"]), int(rec["width"]), int(rec["height"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed image record {rec!r}") from exc
    sizes = {im.image_id: (im.width, im.height) for im in images}

    gts = []
    n_crowd = 0
    for rec in raw["annotations"]:
        ann_id = rec.get("id", "<missing id>")
        try:
            image_id = int(rec["image_id"])
            category_id = int(rec["category_id"])
            bbox = [float(v) for v in rec["bbox"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed annotation id={ann_id}") from exc
        if int(rec.get("iscrowd", 0)):
            n_crowd += 1
            continue
        if len(bbox) != 4 or bbox[2] <= 0 or bbox[3] <= 0:
            raise ParseError(f"{path}: annotation id={ann_id} has non-positive box dims {bbox}")
        if image_id not in sizes:
            raise ParseError(f"{path}: annotation id={ann_id} references unknown image {image_id}")
        w, h = sizes[image_id]
        clipped = _clip_box(tuple(bbox), w, h)
        if clipped[2] <= 0 or clipped[3] <= 0:
            raise ParseError(f"{path}: annotation id={ann_id} lies outside its image")
        gts.append(GroundTruthRecord(image_id, category_id, clipped))

    categories = []
    for rec in raw["categories"]:
        try:
            categories.append((int(rec["id"]), str(rec.get("name", rec["id"]))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed category record {rec!r}") from exc

    report = LoadReport(len(images), len(gts), n_crowd)
    return Dataset(tuple(images), tuple(gts), tuple(categories), load_report=report)


def save_ground_truth(ds: Dataset, path: str) -> None:
    """Write a dataset back out in the same annotation schema."""
    payload = {
        "images": [
            {"id": im.image_id, "width": im.width, "height": im.height} for im in ds.images
        ],
        "annotations": [
            {
                "id": i + 1,
                "image_id": gt.image_id,
                "category_id": gt.category_id,
                "bbox": list(gt.bbox),
                "area": gt.bbox[2] * gt.bbox[3],
                "iscrowd": 0,
            }
            for i, gt in enumerate(ds.ground_truths)
        ],
        "categories": [{"id": c, "name": name} for c, name in ds.categories],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_detections(path: str) -> list[DetectionRecord]:
    """Parse a COCO results file: an array of {image_id, category_id, bbox, score}.

    Scores are clamped into [1e-6, 1 - 1e-6]; anything outside [0, 1] by
    more than 1e-9 is a parse error. Records come back grouped by image_id
    with the within-image input order preserved.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise ParseError(f"{path}: detection results must be a JSON array")

    records = []
    for i, rec in enumerate(raw):
        try:
            image_id = int(rec["image_id"])
            category_id = int(rec["category_id"])
            bbox = tuple(float(v) for v in rec["bbox"])
            score = float(rec["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed detection at index {i}") from exc
        if score < -1e-9 or score > 1.0 + 1e-9:
            raise ParseError(f"{path}: detection at index {i} has score {score} outside [0, 1]")
        records.append(DetectionRecord(image_id, category_id, bbox, clamp_score(score)))

    order = sorted(range(len(records)), key=lambda i: records[i].image_id)
    return [records[i] for i in order]


def save_detections(dets: Iterable[DetectionRecord], path: str) -> None:
    payload = [
        {
            "image_id": d.image_id,
            "category_id": d.category_id,
            "bbox": list(d.bbox),
            "score": d.score,
        }
        for d in dets
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


# ---------------------------------------------------------------------------
# Corruption operators
# ---------------------------------------------------------------------------


def _draw_jitter_factor(rng: np.random.Generator) -> float:
    # Rejection-resample until the factor deviates from 1 by at least 5%.
    while True:
        s = rng.uniform(JITTER_LO, JITTER_HI)
        if abs(s - 1.0) >= JITTER_MIN_DEV:
            return s


def corrupt_jitter(
    gt: GroundTruthRecord, image_size: tuple[int, int], rng: np.random.Generator
) -> GroundTruthRecord:
    """Rescale a box around its center by independent width/height factors."""
    width, height = image_size
    x, y, w, h = gt.bbox
    cx, cy = x + w / 2.0, y + h / 2.0
    new_w = w * _draw_jitter_factor(rng)
    new_h = h * _draw_jitter_factor(rng)
    bbox = _clip_box((cx - new_w / 2.0, cy - new_h / 2.0, new_w, new_h), width, height)
    return GroundTruthRecord(gt.image_id, gt.category_id, bbox, gt.iscrowd)


def _affected_count(n: int, rng: np.random.Generator) -> int:
    # Uniform fraction in [0.2, 0.5], floored, at least one box when any exist.
    if n == 0:
        return 0
    return max(1, int(n * rng.uniform(0.2, 0.5)))


def corrupt_labels(
    gts: Sequence[GroundTruthRecord],
    category_ids: Sequence[int],
    rng: np.random.Generator,
) -> list[GroundTruthRecord]:
    """Swap the category of a random 20-50% subset of boxes."""
    if not gts:
        return []
    if len(set(category_ids)) < 2:
        warnings.warn("label noise skipped: only one category exists", stacklevel=2)
        return list(gts)
    out = list(gts)
    picked = rng.choice(len(out), size=_affected_count(len(out), rng), replace=False)
    for i in sorted(int(v) for v in picked):
        old = out[i]
        choices = [c for c in category_ids if c != old.category_id]
        new_cat = int(choices[rng.integers(len(choices))])
        out[i] = GroundTruthRecord(old.image_id, new_cat, old.bbox, old.iscrowd)
    return out


def corrupt_delete(
    gts: Sequence[GroundTruthRecord], rng: np.random.Generator
) -> list[GroundTruthRecord]:
    """Remove a random 20-50% subset of boxes."""
    if not gts:
        return []
    drop = set(int(v) for v in rng.choice(len(gts), size=_affected_count(len(gts), rng), replace=False))
    return [gt for i, gt in enumerate(gts) if i not in drop]


def _iou_xywh(a: Bbox, b: Bbox) -> float:
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    iy = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


def corrupt_fake_boxes(
    gts: Sequence[GroundTruthRecord],
    image_size: tuple[int, int],
    category_ids: Sequence[int],
    image_id: int,
    rng: np.random.Generator,
) -> list[GroundTruthRecord]:
    """Insert spurious boxes that barely overlap anything already present.

    Inserts floor(n * r) boxes with r ~ U[0.2, 0.5] (capped at 20); each
    candidate is resampled up to 50 times until its IoU with every existing
    box stays below 0.1, and skipped if placement keeps failing.
    """
    width, height = image_size
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    n = len(gts)
    m = min(FAKE_BOX_CAP, int(n * rng.uniform(0.2, 0.5)))
    out = list(gts)
    occupied = [gt.bbox for gt in gts]
    for _ in range(m):
        for _ in range(FAKE_PLACEMENT_ATTEMPTS):
            w = rng.uniform(0.05 * width, 0.2 * width)
            h = rng.uniform(0.05 * height, 0.2 * height)
            x = rng.uniform(0.0, width - w)
            y = rng.uniform(0.0, height - h)
            candidate = (x, y, w, h)
            if all(_iou_xywh(candidate, b) < FAKE_IOU_LIMIT for b in occupied):
                cat = int(category_ids[rng.integers(len(category_ids))])
                out.append(GroundTruthRecord(image_id, cat, candidate))
                occupied.append(candidate)
                break
    return out


def image_rng(seed: int, image_id: int) -> np.random.Generator:
    """Per-image RNG stream; independent across images for a fixed seed."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(image_id))))


def corrupt_dataset(ds: Dataset, cfg: CorruptionConfig) -> CorruptionResult:
    """Apply the enabled corruption types to a p-fraction of images.

    Selected images receive every enabled type once, in the fixed order
    jitter -> labels -> deletion -> fakes. Deterministic given the seed.
    """
    category_ids = ds.category_ids()
    by_image = ds.gts_by_image()
    selected: list[int] = []
    modified: list[int] = []
    new_gts: list[GroundTruthRecord] = []
    for im in sorted(ds.images, key=lambda im: im.image_id):
        gts = by_image[im.image_id]
        rng = image_rng(cfg.seed, im.image_id)
        if rng.random() >= cfg.probability:
            new_gts.extend(gts)
            continue
        selected.append(im.image_id)
        size = (im.width, im.height)
        current = list(gts)
        if "jitter" in cfg.enabled:
            current = [corrupt_jitter(gt, size, rng) for gt in current]
        if "labels" in cfg.enabled and current:
            current = corrupt_labels(current, category_ids, rng)
        if "deletion" in cfg.enabled:
            current = corrupt_delete(current, rng)
        if "fakes" in cfg.enabled:
            current = corrupt_fake_boxes(current, size, category_ids, im.image_id, rng)
        if current != gts:
            modified.append(im.image_id)
        new_gts.extend(current)
    corrupted = Dataset(ds.images, tuple(new_gts), ds.categories)
    return CorruptionResult(corrupted, tuple(selected), tuple(modified))
