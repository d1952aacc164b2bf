"""End-to-end orchestration of the bagged filter.

One *vote* is: split the dataset into n disjoint bags, fit one detector per
bag, let every model score all samples outside its own bag, min-max
normalize, fit the nominal-biased mixture per target bag, threshold at the
density crossover, and remove samples that a strict majority of the n-1
predictors call anomalous. K votes are aggregated by per-sample majority,
and a final detector is trained on the surviving samples only; its scoring
path is the unmodified backend, so inference is untouched by the filter.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np

from . import backends
from .backends import BackendConfig, TrainedDetector
from .data import BagPartition, FeatureDataset, random_split
from .errors import BaafError, DegenerateError, ParameterError
from .gmm import GmmFit, crossover_threshold, fit_weighted_gmm, normalize_scores
from .seeding import stable_seed

REPORT_VERSION = 1


@dataclass(frozen=True)
class BaafConfig:
    """Filter configuration; defaults are the headline 1-vote, 4-bag setup."""

    n_bags: int = 4
    k_votes: int = 1
    backend: BackendConfig = field(default_factory=BackendConfig)
    normalization: str = "global"
    master_seed: int = 0

    def __post_init__(self):
        if self.n_bags < 2:
            raise ParameterError("n_bags must be >= 2")
        if self.k_votes < 1:
            raise ParameterError("k_votes must be >= 1")

    @property
    def name(self) -> str:
        return f"BAAF({self.k_votes}/{self.n_bags})"


@dataclass(frozen=True)
class VoteRecord:
    """Everything one vote iteration decided, keyed to dataset order."""

    vote_index: int
    sample_ids: tuple[str, ...]
    partition: BagPartition
    bag_of: tuple[int, ...]
    gmm_fits: tuple[GmmFit | None, ...]
    thresholds: tuple[float, ...]
    fallback_bags: tuple[bool, ...]
    constant_norm_groups: tuple[int, ...]
    anomalous_votes: tuple[int, ...]
    removed: tuple[bool, ...]
    predictions: tuple[tuple[float | None, ...], ...]  # (n models) x (samples)
    fit_call_count: int

    def __post_init__(self):
        n = self.partition.n
        if any(v < 0 or v > n - 1 for v in self.anomalous_votes):
            raise BaafError("anomalous vote counts must lie in [0, n-1]")
        if sorted(self.sample_ids) != sorted(
            s for bag in self.partition.bags for s in bag
        ):
            raise BaafError("partition does not cover the sample set exactly once")


@dataclass(frozen=True)
class FilterReport:
    """Full audit of a filtering run, serializable and replayable."""

    version: int
    config: BaafConfig
    sample_ids: tuple[str, ...]
    votes: tuple[VoteRecord, ...]
    kept_ids: tuple[str, ...]
    removed_ids: tuple[str, ...]
    total_fit_calls: int
    evaluation: Mapping[str, object] | None = None

    def __post_init__(self):
        if set(self.kept_ids) | set(self.removed_ids) != set(self.sample_ids):
            raise BaafError("kept and removed ids must partition the sample set")
        if set(self.kept_ids) & set(self.removed_ids):
            raise BaafError("kept and removed ids overlap")


def _majority_min(n_voters: int) -> int:
    """Smallest count that is a strict majority of ``n_voters``."""
    return n_voters // 2 + 1


def _fallback_threshold(values: np.ndarray, weights: np.ndarray) -> float:
    """Weighted mean plus three weighted standard deviations.

    Used when the mixture fit degenerates (e.g. clean, easy data where the
    predictions collapse); keeps the vote usable with a conservative cutoff.
    """
    total = weights.sum()
    if total <= 0.0:
        mean = float(values.mean())
        var = float(values.var())
    else:
        mean = float(np.sum(weights * values) / total)
        var = float(np.sum(weights * (values - mean) ** 2) / total)
    return mean + 3.0 * np.sqrt(var)


def run_vote(dataset: FeatureDataset, config: BaafConfig, vote_index: int,
             threads: int = 1) -> VoteRecord:
    """Execute one split / fit / cross-predict / threshold / filter pass."""
    n = config.n_bags
    if dataset.n_samples < 2 * n:
        raise ParameterError(
            f"need at least {2 * n} samples for {n} bags, got {dataset.n_samples}"
        )
    partition = random_split(
        dataset, n, stable_seed(config.master_seed, "split", vote_index)
    )
    bag_of = np.empty(dataset.n_samples, dtype=np.intp)
    bag_indices: list[np.ndarray] = []
    by_id = partition.bag_of()
    for s in dataset.sample_ids:
        bag_of[dataset.index_of(s)] = by_id[s]
    for j in range(n):
        bag_indices.append(np.flatnonzero(bag_of == j))

    def fit_bag(j: int) -> TrainedDetector:
        subset = dataset.take(bag_indices[j])
        return backends.fit(
            config.backend, subset, stable_seed(config.master_seed, "fit", vote_index, j)
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        models = list(pool.map(fit_bag, range(n)))

        def predict_outside(j: int) -> np.ndarray:
            cols = np.flatnonzero(bag_of != j)
            row = np.full(dataset.n_samples, np.nan)
            row[cols] = backends.score(models[j], dataset.features[cols])
            return row

        raw = np.vstack(list(pool.map(predict_outside, range(n))))

    present = bag_of[None, :] != np.arange(n)[:, None]
    norm = normalize_scores(raw, mode=config.normalization, mask=present)
    scores = norm.values

    thresholds: list[float] = []
    fits: list[GmmFit | None] = []
    fallback: list[bool] = []
    for i in range(n):
        cols = bag_indices[i]
        block = scores[:, cols]
        pooled = block[present[:, cols]]  # row-major: all predictors j != i
        weights = 1.0 - pooled
        try:
            fit = crossover_threshold(fit_weighted_gmm(pooled, weights))
            fits.append(fit)
            thresholds.append(fit.threshold)
            fallback.append(False)
        except (DegenerateError, ParameterError):
            fits.append(None)
            thresholds.append(_fallback_threshold(pooled, weights))
            fallback.append(True)

    votes = np.zeros(dataset.n_samples, dtype=int)
    for i in range(n):
        cols = bag_indices[i]
        with np.errstate(invalid="ignore"):
            above = scores[:, cols] > thresholds[i]  # NaN rows compare False
        votes[cols] = above.sum(axis=0)
    removed = votes >= _majority_min(n - 1)

    predictions = tuple(
        tuple(None if not present[j, x] else float(scores[j, x])
              for x in range(dataset.n_samples))
        for j in range(n)
    )
    return VoteRecord(
        vote_index=vote_index,
        sample_ids=dataset.sample_ids,
        partition=partition,
        bag_of=tuple(int(b) for b in bag_of),
        gmm_fits=tuple(fits),
        thresholds=tuple(float(t) for t in thresholds),
        fallback_bags=tuple(fallback),
        constant_norm_groups=norm.constant_groups,
        anomalous_votes=tuple(int(v) for v in votes),
        removed=tuple(bool(r) for r in removed),
        predictions=predictions,
        fit_call_count=n,
    )


def aggregate_votes(records: list[VoteRecord] | tuple[VoteRecord, ...]) -> tuple[str, ...]:
    """Per-sample majority over K votes; returns the kept sample ids.

    A sample survives only if it was kept in a strict majority of votes;
    exact ties (even K) remove it, trading nominal recall for anomaly
    recall, which the data-efficient backends tolerate.
    """
    if not records:
        raise ParameterError("need at least one vote record")
    ids = records[0].sample_ids
    for r in records[1:]:
        if r.sample_ids != ids:
            raise BaafError("vote records cover different sample sets")
    k = len(records)
    kept_counts = np.zeros(len(ids), dtype=int)
    for r in records:
        kept_counts += ~np.asarray(r.removed, dtype=bool)
    return tuple(s for s, c in zip(ids, kept_counts) if c >= _majority_min(k))


def baaf_train(dataset: FeatureDataset, config: BaafConfig,
               threads: int = 1) -> tuple[TrainedDetector, FilterReport]:
    """Run K filtering votes, aggregate, and train the final detector on the
    surviving samples.

    The report is byte-identical for identical (dataset, config) regardless
    of ``threads``; every random choice derives from the master seed.
    """
    records = [
        run_vote(dataset, config, vote_index, threads=threads)
        for vote_index in range(config.k_votes)
    ]
    kept_ids = aggregate_votes(records)
    if not kept_ids:
        raise DegenerateError("filter removed every sample; refusing to train")
    kept_set = set(kept_ids)
    kept_idx = [i for i, s in enumerate(dataset.sample_ids) if s in kept_set]
    removed_ids = tuple(s for s in dataset.sample_ids if s not in kept_set)

    detector = backends.fit(
        config.backend, dataset.take(kept_idx), stable_seed(config.master_seed, "final")
    )
    report = FilterReport(
        version=REPORT_VERSION,
        config=config,
        sample_ids=dataset.sample_ids,
        votes=tuple(records),
        kept_ids=tuple(dataset.sample_ids[i] for i in kept_idx),
        removed_ids=removed_ids,
        total_fit_calls=sum(r.fit_call_count for r in records) + 1,
        evaluation=None,
    )
    return detector, report


# ---------------------------------------------------------------------------
# report serialization (versioned structured text)
# ---------------------------------------------------------------------------

def report_to_dict(report: FilterReport) -> dict:
    def fit_dict(fit: GmmFit | None):
        if fit is None:
            return None
        d = asdict(fit)
        d.pop("loglik_path")  # diagnostics only, not part of the audit record
        return d

    return {
        "version": report.version,
        "config": asdict(report.config),
        "sample_ids": list(report.sample_ids),
        "kept_ids": list(report.kept_ids),
        "removed_ids": list(report.removed_ids),
        "total_fit_calls": report.total_fit_calls,
        "evaluation": dict(report.evaluation) if report.evaluation else None,
        "votes": [
            {
                "vote_index": r.vote_index,
                "seed": r.partition.seed,
                "bags": [sorted(b) for b in r.partition.bags],
                "bag_of": list(r.bag_of),
                "gmm_fits": [fit_dict(f) for f in r.gmm_fits],
                "thresholds": list(r.thresholds),
                "fallback_bags": list(r.fallback_bags),
                "constant_norm_groups": list(r.constant_norm_groups),
                "anomalous_votes": list(r.anomalous_votes),
                "removed": list(r.removed),
                "predictions": [list(row) for row in r.predictions],
                "fit_call_count": r.fit_call_count,
            }
            for r in report.votes
        ],
    }


def report_to_json(report: FilterReport) -> str:
    return json.dumps(report_to_dict(report), sort_keys=True, separators=(",", ":"))


def report_from_json(text: str) -> FilterReport:
    obj = json.loads(text)
    if obj.get("version") != REPORT_VERSION:
        raise BaafError(f"unsupported report version {obj.get('version')!r}")
    cfg = obj["config"]
    config = BaafConfig(
        n_bags=cfg["n_bags"],
        k_votes=cfg["k_votes"],
        backend=BackendConfig(
            kind=cfg["backend"]["kind"],
            knn=backends.KnnParams(**cfg["backend"]["knn"]),
            gaussian=backends.GaussianParams(**cfg["backend"]["gaussian"]),
            pca=backends.PcaParams(**cfg["backend"]["pca"]),
        ),
        normalization=cfg["normalization"],
        master_seed=cfg["master_seed"],
    )
    votes = []
    for v in obj["votes"]:
        ids = tuple(obj["sample_ids"])
        fits = tuple(
            None if f is None else GmmFit(
                mixing=tuple(f["mixing"]),
                means=tuple(f["means"]),
                variances=tuple(f["variances"]),
                converged=f["converged"],
                iterations=f["iterations"],
                final_weighted_loglik=f["final_weighted_loglik"],
                threshold=f["threshold"],
                threshold_clamped=f["threshold_clamped"],
            )
            for f in v["gmm_fits"]
        )
        votes.append(VoteRecord(
            vote_index=v["vote_index"],
            sample_ids=ids,
            partition=BagPartition(
                bags=tuple(frozenset(b) for b in v["bags"]),
                n=len(v["bags"]),
                seed=v["seed"],
            ),
            bag_of=tuple(v["bag_of"]),
            gmm_fits=fits,
            thresholds=tuple(v["thresholds"]),
            fallback_bags=tuple(v["fallback_bags"]),
            constant_norm_groups=tuple(v["constant_norm_groups"]),
            anomalous_votes=tuple(v["anomalous_votes"]),
            removed=tuple(v["removed"]),
            predictions=tuple(tuple(row) for row in v["predictions"]),
            fit_call_count=v["fit_call_count"],
        ))
    return FilterReport(
        version=obj["version"],
        config=config,
        sample_ids=tuple(obj["sample_ids"]),
        votes=tuple(votes),
        kept_ids=tuple(obj["kept_ids"]),
        removed_ids=tuple(obj["removed_ids"]),
        total_fit_calls=obj["total_fit_calls"],
        evaluation=obj.get("evaluation"),
    )


def with_evaluation(report: FilterReport, evaluation: Mapping[str, object]) -> FilterReport:
    """Attach an evaluation block (computed by the metrics layer) to a report."""
    return replace(report, evaluation=dict(evaluation))
