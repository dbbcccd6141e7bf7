"""Online sub-batch selection over precomputed teacher/student dumps.

Each iteration draws a super-batch of B images from a seeded shuffle,
scores every image's marginal-mAP estimate under both models against a
frozen reference pool, ranks by the teacher-student gap, and keeps the
top floor(ratio * B). Pool statistics are computed once per run from the
ground truth plus the student dump and never mutated, so scoring is
read-only and images score independently.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import closedform
from .ingest import Dataset
from .matching import MatchedDataset, MatchedDetection, match_dataset
from .model import (
    ClassThresholdStats,
    IouThresholdGrid,
    LearnabilityRecord,
    build_stats,
    fixed_ratio_stats,
    stats_index,
)
from .priors import PolySurrogate, PriorTable, image_detgain_with_priors

PRIOR_MODES = ("uniform", "beta-table", "surrogate")
STATS_SOURCES = ("dataset", "fixed-ratio")


@dataclass(frozen=True)
class CurationConfig:
    """Selection ratio, super-batch size, seed, and scoring configuration."""

    ratio: float
    superbatch_size: int
    seed: int = 0
    prior_mode: str = "uniform"
    stats_source: str = "dataset"
    max_dets: int | None = 100

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"ratio must lie in (0, 1], got {self.ratio}")
        if self.superbatch_size < 1:
            raise ValueError("superbatch_size must be positive")
        if self.prior_mode not in PRIOR_MODES:
            raise ValueError(f"prior_mode must be one of {PRIOR_MODES}")
        if self.stats_source not in STATS_SOURCES:
            raise ValueError(f"stats_source must be one of {STATS_SOURCES}")

    def selection_count(self, n: int) -> int:
        return min(n, max(1, math.floor(self.ratio * n)))


def pool_stats(
    matched: MatchedDataset,
    grid: IouThresholdGrid,
    source: str = "dataset",
    tf_ratio: tuple[float, float] = (1.0, 9.0),
) -> dict[tuple[int, float], ClassThresholdStats]:
    """Frozen per-(class, threshold) statistics for a scoring run.

    ``dataset`` accumulates real TP/FP counts from the matched dump;
    ``fixed-ratio`` substitutes the 1:9 surrogate scaled to each class's
    ground-truth total (the cold-start option).
    """
    if source == "dataset":
        return stats_index(build_stats(matched.images.values(), matched.gt_counts, grid))
    if source != "fixed-ratio":
        raise ValueError(f"unknown stats source {source!r}")
    cells = []
    for c, n_gt in sorted(matched.gt_counts.items()):
        for tau in grid.thresholds:
            cells.append(
                fixed_ratio_stats(n_gt, tf_ratio, category_id=c, threshold=tau)
            )
    return stats_index(cells)


def make_image_scorer(
    stats: Mapping[tuple[int, float], ClassThresholdStats],
    grid: IouThresholdGrid,
    prior_mode: str = "uniform",
    prior_table: PriorTable | None = None,
    surrogate: PolySurrogate | None = None,
):
    """Image-scoring callable for the configured prior mode."""
    if prior_mode == "uniform":
        return lambda matched: closedform.image_detgain(matched, stats, grid)
    if prior_mode in ("beta-table", "surrogate"):
        if prior_table is None:
            raise ValueError(f"prior mode {prior_mode!r} requires a fitted prior table")
        sur = surrogate if prior_mode == "surrogate" else None
        if prior_mode == "surrogate" and sur is None:
            raise ValueError("prior mode 'surrogate' requires fitted surrogates")
        return lambda matched: image_detgain_with_priors(matched, stats, grid, prior_table, sur)
    raise ValueError(f"unknown prior mode {prior_mode!r}")


def score_superbatch(
    image_ids: Sequence[int],
    teacher: MatchedDataset,
    student: MatchedDataset,
    stats: Mapping[tuple[int, float], ClassThresholdStats],
    grid: IouThresholdGrid,
    scorer=None,
) -> list[LearnabilityRecord]:
    """Teacher/student marginals and their gap for every listed image.

    Images missing from either dump score as empty (legal); an image id
    that the ground truth does not know is a structural error.
    """
    if scorer is None:
        scorer = make_image_scorer(stats, grid)
    records = []
    for image_id in image_ids:
        if image_id not in teacher.images or image_id not in student.images:
            raise ValueError(f"image id {image_id} is not part of the ground-truth dataset")
        delta_t = scorer(teacher.images[image_id])
        delta_s = scorer(student.images[image_id])
        records.append(LearnabilityRecord.from_deltas(image_id, delta_t, delta_s))
    return records


def select_topk(records: Sequence[LearnabilityRecord], cfg: CurationConfig) -> list[int]:
    """Ids of the top-learnability records; ties break toward lower ids."""
    if not records:
        raise ValueError("cannot select from an empty record list")
    k = cfg.selection_count(len(records))
    ranked = sorted(records, key=lambda r: (-r.learnability, r.image_id))
    return [r.image_id for r in ranked[:k]]


def batch_detgain(
    matched_images: Iterable[Sequence[MatchedDetection]],
    stats: Mapping[tuple[int, float], ClassThresholdStats],
    grid: IouThresholdGrid,
) -> float:
    """First-order additive marginal of a whole sub-batch: the plain sum
    of its per-image estimates."""
    return sum(closedform.image_detgain(m, stats, grid) for m in matched_images)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    superbatch: tuple[int, ...]
    records: tuple[LearnabilityRecord, ...]
    selected: tuple[int, ...]


@dataclass
class SelectionTrace:
    """Per-iteration selection decisions plus cumulative tallies."""

    iterations: list[IterationRecord] = field(default_factory=list)
    selection_counts: Counter = field(default_factory=Counter)
    selected_gt_classes: Counter = field(default_factory=Counter)
    corrupted_ids: tuple[int, ...] | None = None

    def summary(self, corrupted_ids: Iterable[int] | None = None) -> dict:
        if corrupted_ids is None:
            corrupted_ids = self.corrupted_ids
        selected_mean, rejected_mean, n_sel, n_rej = 0.0, 0.0, 0, 0
        for it in self.iterations:
            chosen = set(it.selected)
            for rec in it.records:
                if rec.image_id in chosen:
                    selected_mean += rec.learnability
                    n_sel += 1
                else:
                    rejected_mean += rec.learnability
                    n_rej += 1
        out = {
            "iterations": len(self.iterations),
            "selected_per_iteration": len(self.iterations[0].selected) if self.iterations else 0,
            "distinct_images_selected": len(self.selection_counts),
            "mean_learnability_selected": selected_mean / n_sel if n_sel else 0.0,
            "mean_learnability_rejected": rejected_mean / n_rej if n_rej else 0.0,
            "selected_gt_class_histogram": dict(sorted(self.selected_gt_classes.items())),
        }
        if corrupted_ids is not None:
            corrupted = set(corrupted_ids)
            total = sum(self.selection_counts.values())
            hits = sum(n for i, n in self.selection_counts.items() if i in corrupted)
            seen = {i for it in self.iterations for i in it.superbatch}
            out["corrupted_base_fraction"] = (
                len(corrupted & seen) / len(seen) if seen else 0.0
            )
            out["corrupted_selected_fraction"] = hits / total if total else 0.0
        return out


def run_simulation(
    ds: Dataset,
    teacher_dets,
    student_dets,
    cfg: CurationConfig,
    iterations: int,
    grid: IouThresholdGrid | None = None,
    prior_table: PriorTable | None = None,
    surrogate: PolySurrogate | None = None,
    corruption_manifest: Iterable[int] | None = None,
) -> SelectionTrace:
    """Run the per-iteration curation loop over precomputed dumps.

    Image ids are consumed from seeded per-epoch permutations, B at a
    time; when fewer than B remain a fresh permutation is appended, so
    every image appears exactly once per epoch.
    """
    if grid is None:
        grid = IouThresholdGrid.coco()
    teacher = match_dataset(teacher_dets, ds, grid, cfg.max_dets)
    student = match_dataset(student_dets, ds, grid, cfg.max_dets)
    stats = pool_stats(student, grid, cfg.stats_source)
    scorer = make_image_scorer(stats, grid, cfg.prior_mode, prior_table, surrogate)

    ids = ds.image_ids()
    gts_per_image = {i: [] for i in ids}
    for gt in ds.ground_truths:
        gts_per_image[gt.image_id].append(gt.category_id)

    trace = SelectionTrace()
    queue: list[int] = []
    epoch = 0
    for it in range(iterations):
        while len(queue) < cfg.superbatch_size:
            rng = np.random.default_rng(np.random.SeedSequence((int(cfg.seed), epoch)))
            queue.extend(int(i) for i in rng.permutation(ids))
            epoch += 1
        batch = queue[: cfg.superbatch_size]
        del queue[: cfg.superbatch_size]
        records = score_superbatch(batch, teacher, student, stats, grid, scorer)
        selected = select_topk(records, cfg)
        trace.iterations.append(
            IterationRecord(it, tuple(batch), tuple(records), tuple(selected))
        )
        trace.selection_counts.update(selected)
        for image_id in selected:
            trace.selected_gt_classes.update(gts_per_image[image_id])

    if corruption_manifest is not None:
        trace.corrupted_ids = tuple(sorted(corruption_manifest))
    return trace
