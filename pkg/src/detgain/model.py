"""Core value types shared by every other module.

Everything here is an immutable value object: detection and ground-truth
records as they come out of a dump, the IoU-threshold grid, matched
detections with their per-threshold TP flags, per-(class, threshold)
count accumulators, and the TP/FP confidence-score density models used
by the analytic insertion marginals.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as scipy_stats

# Scores of exactly 0 or 1 are pulled inside the open interval at ingestion
# so that every formula defined on (0, 1) applies without special cases.
SCORE_EPS = 1e-6

Bbox = tuple[float, float, float, float]  # (x, y, w, h), pixels, top-left origin


def clamp_score(score: float) -> float:
    """Clamp a confidence score into [SCORE_EPS, 1 - SCORE_EPS]."""
    return min(max(float(score), SCORE_EPS), 1.0 - SCORE_EPS)


def _check_bbox(bbox: Sequence[float], what: str) -> Bbox:
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise ValueError(f"{what}: box width/height must be positive, got w={w}, h={h}")
    return (x, y, w, h)


@dataclass(frozen=True)
class DetectionRecord:
    """One predicted box from a detection dump."""

    image_id: int
    category_id: int
    bbox: Bbox
    score: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "bbox", _check_bbox(self.bbox, "detection"))
        if not 0.0 < self.score < 1.0:
            raise ValueError(f"detection score must lie in (0, 1), got {self.score}")


@dataclass(frozen=True)
class GroundTruthRecord:
    """One annotated box."""

    image_id: int
    category_id: int
    bbox: Bbox
    iscrowd: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "bbox", _check_bbox(self.bbox, "ground truth"))


@dataclass(frozen=True)
class IouThresholdGrid:
    """Strictly increasing IoU thresholds in (0, 1) used for evaluation."""

    thresholds: tuple[float, ...]

    def __post_init__(self) -> None:
        ts = tuple(float(t) for t in self.thresholds)
        if not ts:
            raise ValueError("threshold grid must not be empty")
        if any(not 0.0 < t < 1.0 for t in ts):
            raise ValueError(f"thresholds must lie in (0, 1), got {ts}")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"thresholds must be strictly increasing, got {ts}")
        object.__setattr__(self, "thresholds", ts)

    @classmethod
    def coco(cls) -> "IouThresholdGrid":
        """The default 10-value grid 0.50, 0.55, ..., 0.95."""
        return cls(tuple(round(0.50 + 0.05 * k, 2) for k in range(10)))

    def __len__(self) -> int:
        return len(self.thresholds)

    def __iter__(self):
        return iter(self.thresholds)


@dataclass(frozen=True)
class MatchedDetection:
    """A detection after one-to-one matching against same-class ground truth.

    ``tp_flags[k]`` says whether the detection is a true positive at
    ``grid.thresholds[k]``; ``iou`` is the IoU to the best same-class
    ground-truth box in the image (0 when none exists), so the invariant
    ``tp_flags[k] implies iou >= thresholds[k]`` holds for any grid the
    flags were built from.
    """

    score: float
    category_id: int
    iou: float
    tp_flags: tuple[bool, ...]

    def __post_init__(self) -> None:
        if not 0.0 < self.score < 1.0:
            raise ValueError(f"score must lie in (0, 1), got {self.score}")
        if not 0.0 <= self.iou <= 1.0:
            raise ValueError(f"iou must lie in [0, 1], got {self.iou}")
        object.__setattr__(self, "tp_flags", tuple(bool(f) for f in self.tp_flags))


@dataclass(frozen=True)
class ClassThresholdStats:
    """Accumulated TP/FP counts of one (class, IoU threshold) cell."""

    category_id: int
    threshold: float
    tp_count: int
    fp_count: int
    gt_count: int
    total: int = field(init=False)

    def __post_init__(self) -> None:
        if self.tp_count < 0 or self.fp_count < 0 or self.gt_count < 0:
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "total", self.tp_count + self.fp_count)


@dataclass(frozen=True)
class LearnabilityRecord:
    """Per-image marginal-mAP estimates of a teacher and a student."""

    image_id: int
    delta_teacher: float
    delta_student: float
    learnability: float

    def __post_init__(self) -> None:
        if self.learnability != self.delta_teacher - self.delta_student:
            raise ValueError("learnability must equal delta_teacher - delta_student")

    @classmethod
    def from_deltas(cls, image_id: int, delta_teacher: float, delta_student: float) -> "LearnabilityRecord":
        return cls(image_id, delta_teacher, delta_student, delta_teacher - delta_student)


# ---------------------------------------------------------------------------
# Confidence-score density models
# ---------------------------------------------------------------------------


class UniformDensity:
    """Uniform density on (0, 1); the maximum-entropy baseline."""

    kind = "uniform"

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.ones_like(u)

    def cdf(self, u):
        return np.clip(np.asarray(u, dtype=float), 0.0, 1.0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.random(n)

    def describe(self) -> str:
        return "uniform"


@dataclass(frozen=True)
class BetaDensity:
    """Beta(alpha, beta) density on (0, 1)."""

    alpha: float
    beta: float
    kind = "beta"

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("beta shape parameters must be positive")

    def pdf(self, u):
        return scipy_stats.beta.pdf(np.asarray(u, dtype=float), self.alpha, self.beta)

    def cdf(self, u):
        return scipy_stats.beta.cdf(np.asarray(u, dtype=float), self.alpha, self.beta)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.beta(self.alpha, self.beta, size=n)

    def describe(self) -> str:
        return f"beta({self.alpha:g}, {self.beta:g})"


class EmpiricalDensity:
    """Histogram density fitted to observed scores.

    The PDF is piecewise constant over uniform bins on (0, 1) and the CDF
    is its piecewise-linear integral, so mass is exactly 1 and sampling by
    inverse CDF is deterministic given a generator.
    """

    kind = "empirical"

    def __init__(self, samples: Sequence[float], bins: int = 50):
        x = np.sort(np.asarray(samples, dtype=float))
        if x.size == 0:
            raise ValueError("empirical density needs at least one sample")
        if np.any(x <= 0.0) or np.any(x >= 1.0):
            raise ValueError("samples must lie strictly inside (0, 1)")
        counts, edges = np.histogram(x, bins=bins, range=(0.0, 1.0))
        width = edges[1] - edges[0]
        self._edges = edges
        self._pdf = counts / (counts.sum() * width)
        self._cdf = np.concatenate([[0.0], np.cumsum(self._pdf) * width])
        self._cdf[-1] = 1.0

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        idx = np.clip(np.searchsorted(self._edges, u, side="right") - 1, 0, self._pdf.size - 1)
        out = self._pdf[idx]
        return np.where((u < 0.0) | (u > 1.0), 0.0, out)

    def cdf(self, u):
        return np.interp(np.asarray(u, dtype=float), self._edges, self._cdf)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.interp(rng.random(n), self._cdf, self._edges)

    def describe(self) -> str:
        return f"empirical({self._pdf.size} bins)"


Density = UniformDensity | BetaDensity | EmpiricalDensity


@dataclass(frozen=True)
class ScoreDistribution:
    """Paired TP/FP confidence-score densities.

    Provides the four evaluables ``pdf_tp``, ``cdf_tp``, ``pdf_fp``,
    ``cdf_fp`` on (0, 1) plus deterministic sampling, for the numeric
    insertion integrals and the Monte Carlo simulator.
    """

    tp: Density
    fp: Density

    @classmethod
    def uniform(cls) -> "ScoreDistribution":
        return cls(UniformDensity(), UniformDensity())

    @classmethod
    def beta(cls, alpha_tp: float, beta_tp: float, alpha_fp: float, beta_fp: float) -> "ScoreDistribution":
        return cls(BetaDensity(alpha_tp, beta_tp), BetaDensity(alpha_fp, beta_fp))

    @classmethod
    def empirical(cls, tp_scores: Sequence[float], fp_scores: Sequence[float], bins: int = 50) -> "ScoreDistribution":
        return cls(EmpiricalDensity(tp_scores, bins), EmpiricalDensity(fp_scores, bins))

    @property
    def kind(self) -> str:
        return f"{self.tp.describe()}/{self.fp.describe()}"

    def pdf_tp(self, u):
        return self.tp.pdf(u)

    def cdf_tp(self, u):
        return self.tp.cdf(u)

    def pdf_fp(self, u):
        return self.fp.pdf(u)

    def cdf_fp(self, u):
        return self.fp.cdf(u)

    def sample_tp(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.tp.sample(n, rng)

    def sample_fp(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.fp.sample(n, rng)


def density_mass(density: Density, n: int = 200_000) -> float:
    """Total PDF mass over (0, 1) by composite midpoint quadrature.

    Midpoint is exact for the piecewise-constant empirical PDF whenever the
    subintervals do not straddle bin edges, which holds for n being a
    multiple of the bin count.
    """
    h = 1.0 / n
    mids = (np.arange(n) + 0.5) * h
    return float(np.sum(density.pdf(mids)) * h)


# ---------------------------------------------------------------------------
# Count accumulation
# ---------------------------------------------------------------------------


def build_stats(
    matched: Iterable[Sequence[MatchedDetection]],
    gt_counts: Mapping[int, int],
    grid: IouThresholdGrid,
) -> list[ClassThresholdStats]:
    """Accumulate per-(class, threshold) TP/FP totals from matched images.

    Classes appearing in either the detections or ``gt_counts`` get one
    cell per grid threshold; classes absent from ``gt_counts`` carry a
    ground-truth total of 0.
    """
    n_thresholds = len(grid)
    tp: Counter[tuple[int, int]] = Counter()
    fp: Counter[tuple[int, int]] = Counter()
    classes = {c for c, n in gt_counts.items() if n >= 0}
    for dets in matched:
        for det in dets:
            if len(det.tp_flags) != n_thresholds:
                raise ValueError(
                    f"tp_flags length {len(det.tp_flags)} does not match grid length {n_thresholds}"
                )
            classes.add(det.category_id)
            for k, flag in enumerate(det.tp_flags):
                if flag:
                    tp[(det.category_id, k)] += 1
                else:
                    fp[(det.category_id, k)] += 1
    out = []
    for c in sorted(classes):
        for k, tau in enumerate(grid.thresholds):
            out.append(
                ClassThresholdStats(
                    category_id=c,
                    threshold=tau,
                    tp_count=tp[(c, k)],
                    fp_count=fp[(c, k)],
                    gt_count=int(gt_counts.get(c, 0)),
                )
            )
    return out


def fixed_ratio_stats(
    gt_count: int,
    tf_ratio: tuple[float, float] = (1.0, 9.0),
    *,
    preds_per_gt: float = 10.0,
    category_id: int = 0,
    threshold: float = 0.5,
) -> ClassThresholdStats:
    """Surrogate cell counts under a fixed global TP:FP ratio.

    The total prediction count defaults to 10 per ground truth, mirroring
    detectors that emit ~100 boxes per image with ~10 annotated objects.
    """
    if gt_count < 0:
        raise ValueError("gt_count must be non-negative")
    t_part, f_part = (float(v) for v in tf_ratio)
    if t_part <= 0 or f_part <= 0:
        raise ValueError("ratio components must be positive")
    total = int(round(preds_per_gt * gt_count))
    tp = int(round(total * t_part / (t_part + f_part)))
    return ClassThresholdStats(
        category_id=category_id,
        threshold=threshold,
        tp_count=tp,
        fp_count=total - tp,
        gt_count=int(gt_count),
    )


def stats_index(
    stats: Iterable[ClassThresholdStats],
) -> dict[tuple[int, float], ClassThresholdStats]:
    """Index stats cells by (category_id, threshold) for O(1) lookup."""
    return {(s.category_id, s.threshold): s for s in stats}
