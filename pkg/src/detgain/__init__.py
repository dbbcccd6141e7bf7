"""Marginal-mAP scoring and online sub-batch selection for detection dumps.

The library estimates how much each training image would move the
dataset-level mean average precision if its detections and ground truths
joined the evaluation pool, computes the teacher-student gap of that
estimate (learnability), and selects informative sub-batches. An exact
brute-force evaluator and a Monte Carlo simulator verify the analytic
estimators.
"""

from .closedform import (
    delta_ap_fp_uniform,
    delta_ap_tp_uniform,
    image_detgain,
    learnability,
)
from .curation import (
    CurationConfig,
    SelectionTrace,
    batch_detgain,
    make_image_scorer,
    pool_stats,
    run_simulation,
    score_superbatch,
    select_topk,
)
from .exactap import (
    ApReport,
    ap_interpolated_101,
    ap_single,
    exact_delta_map,
    map_exact,
)
from .ingest import (
    CorruptionConfig,
    CorruptionResult,
    Dataset,
    ParseError,
    corrupt_dataset,
    corrupt_delete,
    corrupt_fake_boxes,
    corrupt_jitter,
    corrupt_labels,
    load_detections,
    load_ground_truth,
    save_detections,
    save_ground_truth,
)
from .matching import (
    MatchedDataset,
    MatchedImage,
    iou,
    match_dataset,
    match_image,
)
from .model import (
    BetaDensity,
    ClassThresholdStats,
    DetectionRecord,
    EmpiricalDensity,
    GroundTruthRecord,
    IouThresholdGrid,
    LearnabilityRecord,
    MatchedDetection,
    ScoreDistribution,
    UniformDensity,
    build_stats,
    fixed_ratio_stats,
    stats_index,
)
from .montecarlo import McConfig, McResult, mc_delta_ap, mc_report
from .priors import (
    BetaParams,
    PolySurrogate,
    PriorTable,
    delta_ap_numeric,
    fit_beta_mle,
    fit_beta_mom,
    fit_dataset_priors,
    fit_surrogates,
    load_prior_table,
    save_prior_table,
)

__version__ = "0.1.0"

__all__ = [
    "ApReport",
    "BetaDensity",
    "BetaParams",
    "ClassThresholdStats",
    "CorruptionConfig",
    "CorruptionResult",
    "CurationConfig",
    "Dataset",
    "DetectionRecord",
    "EmpiricalDensity",
    "GroundTruthRecord",
    "IouThresholdGrid",
    "LearnabilityRecord",
    "MatchedDataset",
    "MatchedDetection",
    "MatchedImage",
    "McConfig",
    "McResult",
    "ParseError",
    "PolySurrogate",
    "PriorTable",
    "ScoreDistribution",
    "SelectionTrace",
    "UniformDensity",
    "ap_interpolated_101",
    "ap_single",
    "batch_detgain",
    "build_stats",
    "corrupt_dataset",
    "corrupt_delete",
    "corrupt_fake_boxes",
    "corrupt_jitter",
    "corrupt_labels",
    "delta_ap_fp_uniform",
    "delta_ap_numeric",
    "delta_ap_tp_uniform",
    "exact_delta_map",
    "fit_beta_mle",
    "fit_beta_mom",
    "fit_dataset_priors",
    "fit_surrogates",
    "fixed_ratio_stats",
    "image_detgain",
    "iou",
    "learnability",
    "load_detections",
    "load_ground_truth",
    "load_prior_table",
    "make_image_scorer",
    "map_exact",
    "match_dataset",
    "match_image",
    "mc_delta_ap",
    "mc_report",
    "pool_stats",
    "run_simulation",
    "save_detections",
    "save_ground_truth",
    "save_prior_table",
    "score_superbatch",
    "select_topk",
    "stats_index",
]
