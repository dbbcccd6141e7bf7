"""Monte Carlo verification of the analytic insertion marginals.

Each trial draws a finite pool of TP/FP confidence scores from a score
distribution, computes the exact non-interpolated AP, inserts a single
detection at a probe score, recomputes, and records the difference.
Means over many trials converge to the analytic expectation, so the
closed forms and quadrature estimates can be checked to statistical
precision. Trials use per-index RNG streams, making runs reproducible
and trivially parallel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .closedform import delta_ap_fp_uniform, delta_ap_tp_uniform
from .exactap import ap_from_ranked
from .model import ClassThresholdStats, ScoreDistribution, UniformDensity
from .priors import delta_ap_numeric

DEFAULT_TP = 800
DEFAULT_FP = 9200
DEFAULT_GT = 1000
DEFAULT_TRIALS = 1000


def default_probe_scores(n: int = 10) -> tuple[float, ...]:
    """Evenly spaced insertion scores spanning [0.01, 0.99]."""
    return tuple(float(s) for s in np.linspace(0.01, 0.99, n))


@dataclass(frozen=True)
class McConfig:
    """Pool sizes, probe scores, trial count, score model, and seed."""

    tp_count: int = DEFAULT_TP
    fp_count: int = DEFAULT_FP
    gt_count: int = DEFAULT_GT
    scores: tuple[float, ...] = ()
    trials: int = DEFAULT_TRIALS
    dist: ScoreDistribution = None  # type: ignore[assignment]
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dist is None:
            object.__setattr__(self, "dist", ScoreDistribution.uniform())
        if not self.scores:
            object.__setattr__(self, "scores", default_probe_scores())
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if any(not 0.0 < s < 1.0 for s in self.scores):
            raise ValueError("probe scores must lie strictly inside (0, 1)")
        if min(self.tp_count, self.fp_count, self.gt_count) < 0:
            raise ValueError("counts must be non-negative")

    def stats(self) -> ClassThresholdStats:
        return ClassThresholdStats(0, 0.5, self.tp_count, self.fp_count, self.gt_count)


@dataclass(frozen=True)
class McResult:
    kind: str
    scores: tuple[float, ...]
    means: tuple[float, ...]
    stderrs: tuple[float, ...]
    trials: int


def mc_delta_ap(cfg: McConfig, kind: Literal["tp", "fp"]) -> McResult:
    """Empirical mean and standard error of the insertion-induced AP change.

    A TP insertion leaves the ground-truth total unchanged: the inserted
    detection recalls one of the previously-missed ground truths, which
    requires tp_count < gt_count.
    """
    if kind not in ("tp", "fp"):
        raise ValueError(f"kind must be 'tp' or 'fp', got {kind!r}")
    if kind == "tp" and cfg.tp_count >= cfg.gt_count:
        raise ValueError(
            "TP insertion needs tp_count < gt_count (a missed ground truth must exist)"
        )
    n_pool = cfg.tp_count + cfg.fp_count
    probe = np.asarray(cfg.scores, dtype=float)
    deltas = np.empty((cfg.trials, probe.size))
    insert_flag = kind == "tp"
    for t in range(cfg.trials):
        rng = np.random.default_rng(np.random.SeedSequence((int(cfg.seed), t)))
        pool_scores = np.concatenate(
            [cfg.dist.sample_tp(cfg.tp_count, rng), cfg.dist.sample_fp(cfg.fp_count, rng)]
        )
        pool_flags = np.concatenate(
            [np.ones(cfg.tp_count, dtype=bool), np.zeros(cfg.fp_count, dtype=bool)]
        )
        order = np.argsort(-pool_scores, kind="stable")
        ranked_flags = pool_flags[order]
        asc_scores = pool_scores[order][::-1]
        base = ap_from_ranked(ranked_flags, cfg.gt_count)
        for i, s_star in enumerate(probe):
            # Rank of the inserted detection: existing equal scores win.
            pos = n_pool - int(np.searchsorted(asc_scores, s_star, side="left"))
            new_flags = np.insert(ranked_flags, pos, insert_flag)
            deltas[t, i] = ap_from_ranked(new_flags, cfg.gt_count) - base
    means = deltas.mean(axis=0)
    if cfg.trials > 1:
        stderrs = deltas.std(axis=0, ddof=1) / math.sqrt(cfg.trials)
    else:
        stderrs = np.full(probe.size, math.inf)
    return McResult(
        kind=kind,
        scores=tuple(float(v) for v in probe),
        means=tuple(float(v) for v in means),
        stderrs=tuple(float(v) for v in stderrs),
        trials=cfg.trials,
    )


def _is_uniform(dist: ScoreDistribution) -> bool:
    return isinstance(dist.tp, UniformDensity) and isinstance(dist.fp, UniformDensity)


@dataclass(frozen=True)
class McComparison:
    """Side-by-side simulated vs analytic marginals at each probe score."""

    kind: str
    scores: tuple[float, ...]
    mc_means: tuple[float, ...]
    mc_stderrs: tuple[float, ...]
    analytic: tuple[float, ...]
    analytic_source: str
    trials: int

    @property
    def max_abs_deviation(self) -> float:
        return max(abs(m - a) for m, a in zip(self.mc_means, self.analytic))

    def to_text(self) -> str:
        head = (
            f"{self.kind.upper()} insertion, {self.trials} trials, analytic={self.analytic_source}\n"
            f"{'s*':>6}  {'mc_mean':>13}  {'mc_stderr':>11}  {'analytic':>13}  {'|dev|':>10}"
        )
        lines = [head]
        for s, m, e, a in zip(self.scores, self.mc_means, self.mc_stderrs, self.analytic):
            lines.append(f"{s:6.3f}  {m:13.6e}  {e:11.3e}  {a:13.6e}  {abs(m - a):10.3e}")
        lines.append(f"max |deviation| = {self.max_abs_deviation:.3e}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "trials": self.trials,
            "analytic_source": self.analytic_source,
            "rows": [
                {"s": s, "mc_mean": m, "mc_stderr": e, "analytic": a, "abs_dev": abs(m - a)}
                for s, m, e, a in zip(self.scores, self.mc_means, self.mc_stderrs, self.analytic)
            ],
            "max_abs_deviation": self.max_abs_deviation,
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def mc_report(cfg: McConfig, kind: Literal["tp", "fp"], n_points: int = 300) -> McComparison:
    """Run the simulation and line it up against the analytic estimate.

    Uniform score models use the closed forms; any other model goes
    through the quadrature path.
    """
    result = mc_delta_ap(cfg, kind)
    stats = cfg.stats()
    if _is_uniform(cfg.dist):
        source = "closed-form"
        fn = delta_ap_tp_uniform if kind == "tp" else delta_ap_fp_uniform
        analytic = tuple(float(fn(s, stats)) for s in cfg.scores)
    else:
        source = f"quadrature({n_points})"
        analytic = tuple(
            delta_ap_numeric(s, kind, stats, cfg.dist, n_points) for s in cfg.scores
        )
    return McComparison(
        kind=kind,
        scores=result.scores,
        mc_means=result.means,
        mc_stderrs=result.stderrs,
        analytic=analytic,
        analytic_source=source,
        trials=cfg.trials,
    )
