"""Non-uniform score-prior modeling.

Beta densities are fitted to observed TP/FP confidence scores per
(class, threshold) cell, by method of moments and by Newton maximum
likelihood. Under an arbitrary score distribution the insertion
marginals become one-dimensional integrals, evaluated here by composite
trapezoid quadrature; degree-6 polynomial surrogates of those curves
make repeated evaluation a constant-time Horner step.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from typing import Literal, Mapping, Sequence

import numpy as np
from scipy.special import gammaln, polygamma, psi

from .closedform import aggregate_image
from .matching import MatchedDataset
from .model import (
    BetaDensity,
    ClassThresholdStats,
    IouThresholdGrid,
    ScoreDistribution,
    UniformDensity,
)

PARAM_LO, PARAM_HI = 1e-3, 1e3
DENSITY_EPS = 1e-6
SURROGATE_DEGREE = 6
DEFAULT_FIT_SAMPLES = 64
DEFAULT_RESIDUAL_LIMIT = 1e-4


class DegenerateSamplesError(ValueError):
    """Samples cannot support a Beta fit; fall back to the uniform prior."""


@dataclass(frozen=True)
class BetaParams:
    """Fitted Beta shape parameters, clamped into [1e-3, 1e3]."""

    alpha: float
    beta: float
    sample_count: int
    converged: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", float(min(max(self.alpha, PARAM_LO), PARAM_HI)))
        object.__setattr__(self, "beta", float(min(max(self.beta, PARAM_LO), PARAM_HI)))

    def density(self) -> BetaDensity:
        return BetaDensity(self.alpha, self.beta)


def _clean_samples(samples: Sequence[float]) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise DegenerateSamplesError(
            f"need at least 2 samples to fit a Beta density, got {x.size}; use the uniform prior"
        )
    return np.clip(x, 1e-12, 1.0 - 1e-12)


def fit_beta_mom(samples: Sequence[float]) -> BetaParams:
    """Method-of-moments Beta fit: match the sample mean and variance."""
    x = _clean_samples(samples)
    m = float(x.mean())
    v = float(x.var())
    if v <= 0.0:
        raise DegenerateSamplesError(
            "samples have zero variance; no Beta fit exists, use the uniform prior"
        )
    common = m * (1.0 - m) / v - 1.0
    return BetaParams(m * common, (1.0 - m) * common, x.size)


def beta_mean_loglik(samples: Sequence[float], alpha: float, beta: float) -> float:
    """Mean log-likelihood of samples under Beta(alpha, beta)."""
    x = _clean_samples(samples)
    return float(
        gammaln(alpha + beta)
        - gammaln(alpha)
        - gammaln(beta)
        + (alpha - 1.0) * np.mean(np.log(x))
        + (beta - 1.0) * np.mean(np.log1p(-x))
    )


def fit_beta_mle(samples: Sequence[float], tol: float = 1e-8, max_iter: int = 100) -> BetaParams:
    """Maximum-likelihood Beta fit by damped Newton iteration.

    Starts from the method-of-moments estimate and iterates on the mean
    log-likelihood until its gradient norm drops below ``tol``. On
    non-convergence the moments estimate is returned with a warning flag.
    """
    x = _clean_samples(samples)
    mom = fit_beta_mom(samples)
    mean_log = float(np.mean(np.log(x)))
    mean_log1m = float(np.mean(np.log1p(-x)))

    def loglik(a: float, b: float) -> float:
        return float(
            gammaln(a + b) - gammaln(a) - gammaln(b) + (a - 1.0) * mean_log + (b - 1.0) * mean_log1m
        )

    a, b = mom.alpha, mom.beta
    ll = loglik(a, b)
    for _ in range(max_iter):
        ga = float(psi(a + b) - psi(a)) + mean_log
        gb = float(psi(a + b) - psi(b)) + mean_log1m
        if max(abs(ga), abs(gb)) < tol:
            return BetaParams(a, b, x.size)
        tri_ab = float(polygamma(1, a + b))
        haa = tri_ab - float(polygamma(1, a))
        hbb = tri_ab - float(polygamma(1, b))
        det = haa * hbb - tri_ab * tri_ab
        if det == 0.0:
            break
        # Newton step: solve H @ d = -g for the 2x2 Hessian.
        da = -(hbb * ga - tri_ab * gb) / det
        db = -(haa * gb - tri_ab * ga) / det
        step = 1.0
        improved = False
        # Accept any step within float noise of the current value: near the
        # optimum the likelihood is flat at machine resolution while the
        # gradient still has digits to gain.
        slack = 1e-12 * max(1.0, abs(ll))
        for _ in range(40):
            na, nb = a + step * da, b + step * db
            if na > 0.0 and nb > 0.0:
                nll = loglik(na, nb)
                if nll >= ll - slack:
                    a, b, ll = na, nb, nll
                    improved = True
                    break
            step *= 0.5
        if not improved:
            break
    ga = float(psi(a + b) - psi(a)) + mean_log
    gb = float(psi(a + b) - psi(b)) + mean_log1m
    if max(abs(ga), abs(gb)) < tol:
        return BetaParams(a, b, x.size)
    warnings.warn("Beta MLE did not converge; returning the moments estimate", stacklevel=2)
    return replace(mom, converged=False)


# ---------------------------------------------------------------------------
# Numeric insertion marginals under an arbitrary score distribution
# ---------------------------------------------------------------------------


def delta_ap_numeric(
    s: float,
    kind: Literal["tp", "fp"],
    stats: ClassThresholdStats,
    dist: ScoreDistribution,
    n_points: int = 300,
) -> float:
    """Expected AP change of one insertion, by trapezoid quadrature.

    The cumulative counts above threshold u are T(1 - F_tp(u)) and
    F(1 - F_fp(u)); the integrand reweights precision on the existing TP
    score measure. Density evaluations are clamped away from the endpoints
    so shapes that diverge at 0 or 1 stay finite.
    """
    if stats.gt_count == 0:
        raise ValueError("AP is undefined for a class with no ground truth")
    if n_points < 10:
        raise ValueError("n_points must be at least 10")
    if not 0.0 < s < 1.0:
        raise ValueError("insertion score must lie strictly inside (0, 1)")
    if kind not in ("tp", "fp"):
        raise ValueError(f"kind must be 'tp' or 'fp', got {kind!r}")

    t, f, gt = float(stats.tp_count), float(stats.fp_count), float(stats.gt_count)
    u = np.linspace(0.0, s, n_points)
    u_pdf = np.clip(u, DENSITY_EPS, 1.0 - DENSITY_EPS)
    f_tp = dist.pdf_tp(u_pdf)
    c_tp = t * (1.0 - dist.cdf_tp(u))
    c_fp = f * (1.0 - dist.cdf_fp(u))
    n = c_tp + c_fp
    den = n * (n + 1.0)

    if kind == "tp":
        self_term = (c_tp[-1] + 1.0) / (n[-1] + 1.0) / gt
        num = c_fp * f_tp
        integrand = np.divide(num, den, out=np.zeros_like(num), where=den > 0.0)
        return float(self_term + (t / gt) * np.trapezoid(integrand, u))
    num = c_tp * f_tp
    integrand = np.divide(num, den, out=np.zeros_like(num), where=den > 0.0)
    return float(-(t / gt) * np.trapezoid(integrand, u))


# ---------------------------------------------------------------------------
# Per-cell prior tables and polynomial surrogates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorCell:
    """Fitted TP/FP score priors of one (class, threshold) cell.

    ``tp``/``fp`` are None for sides with too few samples; those sides
    fall back to the uniform prior.
    """

    category_id: int
    threshold: float
    tp: BetaParams | None
    fp: BetaParams | None
    tp_count: int
    fp_count: int
    gt_count: int

    @property
    def tp_is_fallback(self) -> bool:
        return self.tp is None

    @property
    def fp_is_fallback(self) -> bool:
        return self.fp is None

    def distribution(self) -> ScoreDistribution:
        return ScoreDistribution(
            self.tp.density() if self.tp else UniformDensity(),
            self.fp.density() if self.fp else UniformDensity(),
        )

    def stats(self) -> ClassThresholdStats:
        return ClassThresholdStats(
            self.category_id, self.threshold, self.tp_count, self.fp_count, self.gt_count
        )


@dataclass
class PriorTable:
    """All fitted cells, keyed by (category_id, threshold)."""

    cells: dict[tuple[int, float], PriorCell]

    def n_fitted(self) -> tuple[int, int]:
        tp = sum(1 for c in self.cells.values() if c.tp is not None)
        fp = sum(1 for c in self.cells.values() if c.fp is not None)
        return tp, fp


def fit_dataset_priors(
    pool: MatchedDataset,
    grid: IouThresholdGrid,
    min_samples: int = 10,
) -> PriorTable:
    """Fit one Beta pair per (class, threshold) cell of a matched dataset.

    Cells with fewer than ``min_samples`` scores on a side keep that side
    uniform and are flagged through ``tp``/``fp`` being None.
    """
    tp_scores: dict[tuple[int, int], list[float]] = {}
    fp_scores: dict[tuple[int, int], list[float]] = {}
    classes = {c for c, n in pool.gt_counts.items() if n > 0}
    for image_id in sorted(pool.images):
        for det in pool.images[image_id]:
            classes.add(det.category_id)
            for k, flag in enumerate(det.tp_flags):
                bucket = tp_scores if flag else fp_scores
                bucket.setdefault((det.category_id, k), []).append(det.score)

    def _fit(scores: list[float]) -> BetaParams | None:
        if len(scores) < min_samples:
            return None
        try:
            return fit_beta_mle(scores)
        except DegenerateSamplesError:
            return None

    cells: dict[tuple[int, float], PriorCell] = {}
    for c in sorted(classes):
        for k, tau in enumerate(grid.thresholds):
            tp_list = tp_scores.get((c, k), [])
            fp_list = fp_scores.get((c, k), [])
            cells[(c, tau)] = PriorCell(
                category_id=c,
                threshold=tau,
                tp=_fit(tp_list),
                fp=_fit(fp_list),
                tp_count=len(tp_list),
                fp_count=len(fp_list),
                gt_count=int(pool.gt_counts.get(c, 0)),
            )
    return PriorTable(cells)


def horner(coeffs: Sequence[float], s: float) -> float:
    """Evaluate a polynomial with ascending-order coefficients at s."""
    out = 0.0
    for c in reversed(coeffs):
        out = out * s + c
    return out


@dataclass(frozen=True)
class CellSurrogate:
    coeffs_tp: tuple[float, ...]
    coeffs_fp: tuple[float, ...]
    residual: float
    monotone: bool

    def usable(self, residual_limit: float) -> bool:
        return self.monotone and self.residual <= residual_limit


@dataclass
class PolySurrogate:
    """Degree-6 polynomial fits of the per-cell insertion-marginal curves.

    Cells whose fit residual exceeds the limit, or whose fitted curves
    violate the expected monotonicity, are flagged and answered through
    the numeric path at query time.
    """

    cells: dict[tuple[int, float], CellSurrogate]
    residual_limit: float = DEFAULT_RESIDUAL_LIMIT
    domain: tuple[float, float] = (0.0, 1.0)

    def flagged(self) -> list[tuple[int, float]]:
        return sorted(k for k, c in self.cells.items() if not c.usable(self.residual_limit))

    def eval_tp(self, key: tuple[int, float], s: float) -> float:
        return horner(self.cells[key].coeffs_tp, s)

    def eval_fp(self, key: tuple[int, float], s: float) -> float:
        return horner(self.cells[key].coeffs_fp, s)

    def max_residual(self) -> float:
        return max((c.residual for c in self.cells.values()), default=0.0)


def fit_surrogates(
    table: PriorTable,
    n_samples: int = DEFAULT_FIT_SAMPLES,
    n_points: int = 300,
    residual_limit: float = DEFAULT_RESIDUAL_LIMIT,
) -> PolySurrogate:
    """Least-squares degree-6 fits to the numeric marginals of every cell."""
    s_grid = (np.arange(n_samples) + 0.5) / n_samples
    check_grid = (np.arange(100) + 0.5) / 100.0
    cells: dict[tuple[int, float], CellSurrogate] = {}
    for key, cell in table.cells.items():
        if cell.gt_count == 0:
            continue
        stats = cell.stats()
        dist = cell.distribution()
        y_tp = np.array([delta_ap_numeric(s, "tp", stats, dist, n_points) for s in s_grid])
        y_fp = np.array([delta_ap_numeric(s, "fp", stats, dist, n_points) for s in s_grid])
        coeffs_tp = np.polynomial.polynomial.polyfit(s_grid, y_tp, SURROGATE_DEGREE)
        coeffs_fp = np.polynomial.polynomial.polyfit(s_grid, y_fp, SURROGATE_DEGREE)
        fit_tp = np.polynomial.polynomial.polyval(s_grid, coeffs_tp)
        fit_fp = np.polynomial.polynomial.polyval(s_grid, coeffs_fp)
        residual = float(
            max(np.max(np.abs(fit_tp - y_tp)), np.max(np.abs(fit_fp - y_fp)))
        )
        # Monotone up to fit noise: a violation must be a real direction
        # reversal (beyond 2% of the curve's range), not polynomial wiggle
        # in a flat region.
        tp_curve = np.polynomial.polynomial.polyval(check_grid, coeffs_tp)
        fp_curve = np.polynomial.polynomial.polyval(check_grid, coeffs_fp)
        tp_slack = 0.02 * float(np.ptp(tp_curve))
        fp_slack = 0.02 * float(np.ptp(fp_curve))
        monotone = bool(
            np.all(np.diff(tp_curve) >= -tp_slack) and np.all(np.diff(fp_curve) <= fp_slack)
        )
        cells[key] = CellSurrogate(
            tuple(float(v) for v in coeffs_tp),
            tuple(float(v) for v in coeffs_fp),
            residual,
            monotone,
        )
    return PolySurrogate(cells, residual_limit)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_prior_table(
    table: PriorTable,
    path: str,
    surrogate: PolySurrogate | None = None,
) -> None:
    """Write the prior table (and optional surrogate fits) as a JSON array.

    One row per cell: class, tau, the four Beta parameters (1.0 marks a
    uniform-fallback side, see the fallback booleans), the cell counts,
    and the polynomial coefficients when fitted.
    """
    rows = []
    for (c, tau), cell in sorted(table.cells.items()):
        sur = surrogate.cells.get((c, tau)) if surrogate else None
        rows.append(
            {
                "class": c,
                "tau": tau,
                "alpha_tp": cell.tp.alpha if cell.tp else 1.0,
                "beta_tp": cell.tp.beta if cell.tp else 1.0,
                "alpha_fp": cell.fp.alpha if cell.fp else 1.0,
                "beta_fp": cell.fp.beta if cell.fp else 1.0,
                "tp_uniform_fallback": cell.tp is None,
                "fp_uniform_fallback": cell.fp is None,
                "T": cell.tp_count,
                "F": cell.fp_count,
                "t_gt": cell.gt_count,
                "coeffs_tp": list(sur.coeffs_tp) if sur else None,
                "coeffs_fp": list(sur.coeffs_fp) if sur else None,
                "residual": sur.residual if sur else None,
                "monotone": sur.monotone if sur else None,
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh)


def load_prior_table(path: str) -> tuple[PriorTable, PolySurrogate | None]:
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    cells: dict[tuple[int, float], PriorCell] = {}
    sur_cells: dict[tuple[int, float], CellSurrogate] = {}
    for row in rows:
        key = (int(row["class"]), float(row["tau"]))
        tp = None if row.get("tp_uniform_fallback") else BetaParams(
            row["alpha_tp"], row["beta_tp"], int(row["T"])
        )
        fp = None if row.get("fp_uniform_fallback") else BetaParams(
            row["alpha_fp"], row["beta_fp"], int(row["F"])
        )
        cells[key] = PriorCell(key[0], key[1], tp, fp, int(row["T"]), int(row["F"]), int(row["t_gt"]))
        if row.get("coeffs_tp") is not None:
            sur_cells[key] = CellSurrogate(
                tuple(row["coeffs_tp"]),
                tuple(row["coeffs_fp"]),
                float(row["residual"]),
                bool(row.get("monotone", True)),
            )
    surrogate = PolySurrogate(sur_cells) if sur_cells else None
    return PriorTable(cells), surrogate


# ---------------------------------------------------------------------------
# Image scoring under fitted priors
# ---------------------------------------------------------------------------


def image_detgain_with_priors(
    matched,
    stats: Mapping[tuple[int, float], ClassThresholdStats],
    grid: IouThresholdGrid,
    table: PriorTable,
    surrogate: PolySurrogate | None = None,
    n_points: int = 300,
) -> float:
    """Per-image marginal with Beta-fitted priors, optionally through the
    polynomial surrogates (flagged cells fall back to quadrature)."""

    def _dist(key: tuple[int, float]) -> ScoreDistribution:
        cell = table.cells.get(key)
        return cell.distribution() if cell else ScoreDistribution.uniform()

    def tp_marginal(s: float, cell: ClassThresholdStats, key: tuple[int, float]) -> float:
        if surrogate is not None:
            sur = surrogate.cells.get(key)
            if sur is not None and sur.usable(surrogate.residual_limit):
                return horner(sur.coeffs_tp, s)
        return delta_ap_numeric(s, "tp", cell, _dist(key), n_points)

    def fp_marginal(s: float, cell: ClassThresholdStats, key: tuple[int, float]) -> float:
        if surrogate is not None:
            sur = surrogate.cells.get(key)
            if sur is not None and sur.usable(surrogate.residual_limit):
                return horner(sur.coeffs_fp, s)
        return delta_ap_numeric(s, "fp", cell, _dist(key), n_points)

    return aggregate_image(matched, stats, grid, tp_marginal, fp_marginal)
