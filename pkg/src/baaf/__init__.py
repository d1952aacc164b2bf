"""Bootstrap-aggregated anomaly filtering for one-class detectors.

Wraps any fit/score one-class backend in a bagged cross-prediction filter
that removes likely anomalies from a corrupted training set, then retrains
the unmodified backend on what survives.
"""

from .backends import (
    BackendConfig,
    GaussianParams,
    KnnParams,
    PcaParams,
    TrainedDetector,
    coreset_subsample,
    fit,
    load_detector,
    save_detector,
    score,
)
from .data import BagPartition, FeatureDataset, load_dataset, random_split, write_dataset
from .engine import (
    BaafConfig,
    FilterReport,
    VoteRecord,
    aggregate_votes,
    baaf_train,
    report_from_json,
    report_to_json,
    run_vote,
)
from .errors import BaafError, DataError, DegenerateError, ParameterError
from .gmm import GmmFit, crossover_threshold, fit_weighted_gmm, normalize_scores
from .metrics import auroc, filter_precision_recall, run_corruption_sweep, true_labels
from .seeding import stable_seed
from .synth import CorruptionSpec, SynthConfig, inject_corruption, synth_generate
from .video import ClipDecision, clip_decisions, close_anomaly_mask, segment_clips

__version__ = "0.1.0"

__all__ = [
    "BaafConfig",
    "BaafError",
    "BackendConfig",
    "BagPartition",
    "ClipDecision",
    "CorruptionSpec",
    "DataError",
    "DegenerateError",
    "FeatureDataset",
    "FilterReport",
    "GaussianParams",
    "GmmFit",
    "KnnParams",
    "ParameterError",
    "PcaParams",
    "SynthConfig",
    "TrainedDetector",
    "VoteRecord",
    "aggregate_votes",
    "auroc",
    "baaf_train",
    "clip_decisions",
    "close_anomaly_mask",
    "coreset_subsample",
    "crossover_threshold",
    "filter_precision_recall",
    "fit",
    "fit_weighted_gmm",
    "inject_corruption",
    "load_dataset",
    "load_detector",
    "normalize_scores",
    "random_split",
    "report_from_json",
    "report_to_json",
    "run_corruption_sweep",
    "run_vote",
    "save_detector",
    "score",
    "segment_clips",
    "stable_seed",
    "synth_generate",
    "true_labels",
    "write_dataset",
]
