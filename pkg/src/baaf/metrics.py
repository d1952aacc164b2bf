"""Evaluation-side interfaces: labels access, ranking metrics, filter
precision/recall, and the corruption-sweep harness.

This module is the only sanctioned path to a dataset's hidden evaluation
labels; everything the engine and backends consume is label-free.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from . import backends, engine
from .data import FeatureDataset
from .engine import BaafConfig, FilterReport
from .errors import ParameterError
from .seeding import stable_seed
from .synth import CorruptionSpec, SynthConfig, inject_corruption, synth_generate, truth_map


def true_labels(dataset: FeatureDataset) -> dict[str, int]:
    """Hidden evaluation labels of a dataset (1 = anomalous, 0 = nominal)."""
    if dataset._eval_labels is None:
        raise ParameterError("dataset carries no evaluation labels")
    return dict(dataset._eval_labels)


def auroc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Probability that a random anomalous sample outscores a random nominal
    one, ties counted one half (rank-based Mann-Whitney formulation)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ParameterError("scores and labels must be aligned 1-D sequences")
    n_pos = int(y.sum())
    n_neg = int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ParameterError("both classes must be present to compute AUROC")
    ranks = rankdata(s)  # average ranks resolve ties as one half
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def filter_precision_recall(
    removed_ids: Iterable[str],
    truth: Mapping[str, bool],
) -> tuple[float | None, float | None]:
    """Precision and recall of the filter against injected ground truth.

    ``truth`` must cover the whole corrupted training set. Precision is
    None when nothing was removed; both are None when the truth contains no
    anomalies at all (the 0%-corruption case, where the ratios are
    meaningless).
    """
    removed = set(removed_ids)
    unknown = removed - set(truth)
    if unknown:
        raise ParameterError(f"removed ids missing from truth: {sorted(unknown)[:3]}")
    anomalies = {s for s, bad in truth.items() if bad}
    if not anomalies:
        return None, None
    hits = len(removed & anomalies)
    precision = hits / len(removed) if removed else None
    recall = hits / len(anomalies)
    return precision, recall


def attach_filter_metrics(report: FilterReport, truth: Mapping[str, bool]) -> FilterReport:
    """Return a copy of the report with its evaluation block filled in."""
    precision, recall = filter_precision_recall(report.removed_ids, truth)
    return engine.with_evaluation(report, {
        "filter_precision": precision,
        "filter_recall": recall,
        "n_removed": len(report.removed_ids),
        "n_true_anomalies": sum(bool(v) for v in truth.values()),
    })


# ---------------------------------------------------------------------------
# corruption sweep harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    """One (rate, seed) cell of a corruption sweep."""

    config_name: str
    seed: int
    rate: float
    i_auroc_filtered: float
    i_auroc_unfiltered: float
    i_auroc_clean: float
    filter_precision: float | None
    filter_recall: float | None
    fit_calls: int


def _test_scores(detector, test: FeatureDataset) -> tuple[np.ndarray, np.ndarray]:
    scores = backends.score(detector, test.features)
    labels_map = true_labels(test)
    labels = np.array([bool(labels_map[s]) for s in test.sample_ids])
    return scores, labels


def evaluate_run(
    train: FeatureDataset,
    test: FeatureDataset,
    corruption: CorruptionSpec,
    config: BaafConfig,
    threads: int = 1,
) -> tuple[SweepRow, FilterReport]:
    """Corrupt, filter, and score one configuration against its test set."""
    injection = inject_corruption(train, test, corruption)
    corrupted = injection.dataset
    truth = truth_map(injection)

    detector, report = engine.baaf_train(corrupted, config, threads=threads)
    report = attach_filter_metrics(report, truth)

    baseline = backends.fit(config.backend, corrupted, stable_seed(config.master_seed, "baseline"))
    clean = backends.fit(config.backend, train, stable_seed(config.master_seed, "clean"))

    if corruption.mode == "non_overlapping" and injection.injected_ids:
        keep = [i for i, s in enumerate(test.sample_ids) if s not in set(injection.injected_ids)]
        test = test.take(keep)

    scores_f, labels = _test_scores(detector, test)
    scores_u, _ = _test_scores(baseline, test)
    scores_c, _ = _test_scores(clean, test)

    row = SweepRow(
        config_name=config.name,
        seed=config.master_seed,
        rate=corruption.rate,
        i_auroc_filtered=auroc(scores_f, labels),
        i_auroc_unfiltered=auroc(scores_u, labels),
        i_auroc_clean=auroc(scores_c, labels),
        filter_precision=report.evaluation["filter_precision"],
        filter_recall=report.evaluation["filter_recall"],
        fit_calls=report.total_fit_calls,
    )
    return row, report


def run_corruption_sweep(
    synth: SynthConfig,
    rates: Sequence[float],
    seeds: Sequence[int],
    config: BaafConfig,
    mode: str = "overlapping",
    threads: int = 1,
) -> list[SweepRow]:
    """Full grid of (rate, seed) cells over freshly generated data.

    Per seed, the generator and the corruption draws are re-derived from
    stable sub-seeds, and anomaly draws nest across rates, so higher rates
    extend lower ones instead of resampling.
    """
    rows = []
    for seed in seeds:
        data = replace(synth, seed=stable_seed(seed, "data"))
        train, test = synth_generate(data)
        for rate in rates:
            spec = CorruptionSpec(rate=rate, mode=mode, seed=stable_seed(seed, "corrupt"))
            run_config = replace(config, master_seed=stable_seed(seed, "engine"))
            row, _ = evaluate_run(train, test, spec, run_config, threads=threads)
            rows.append(replace(row, seed=seed))
    return rows
