"""Synthetic data generation and training-set corruption.

Nominal samples follow a standard multivariate Gaussian; anomalies are
drawn uniformly from the [-6, 6]^d box and rejected while they fall within
Mahalanobis distance 4 of the nominal center, so every anomaly lies outside
the 4-sigma nominal ball. These radii make the plain backends near-perfect
on clean data, so downstream experiments measure the filter, not the
detector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import FeatureDataset
from .errors import DegenerateError, ParameterError

REJECT_RADIUS = 4.0
BOX_HALF_WIDTH = 6.0
_MAX_REJECTION_ATTEMPTS = 10**6

CORRUPTION_MODES = ("overlapping", "non_overlapping", "near_duplicate")
RATE_CONVENTIONS = ("final_fraction", "of_nominal")


@dataclass(frozen=True)
class SynthConfig:
    dim: int
    n_nominal: int
    n_test_nominal: int
    n_anomaly: int
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ParameterError("dim must be >= 1")
        if min(self.n_nominal, self.n_test_nominal, self.n_anomaly) < 1:
            raise ParameterError("sample counts must be >= 1")


@dataclass(frozen=True)
class CorruptionSpec:
    """How to contaminate a training set with anomalies.

    ``overlapping`` injects test-set anomalies (they remain in the test
    set); ``non_overlapping`` marks the injected ids so the evaluation can
    drop them from the test side; ``near_duplicate`` violates sample
    independence on purpose: one pool anomaly plus jittered copies of it.
    """

    rate: float
    mode: str = "overlapping"
    seed: int = 0
    rate_convention: str = "final_fraction"
    jitter_scale: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.rate < 0.5:
            raise ParameterError(f"corruption rate must lie in [0, 0.5), got {self.rate}")
        if self.mode not in CORRUPTION_MODES:
            raise ParameterError(f"unknown corruption mode {self.mode!r}")
        if self.rate_convention not in RATE_CONVENTIONS:
            raise ParameterError(f"unknown rate convention {self.rate_convention!r}")
        if self.jitter_scale <= 0.0:
            raise ParameterError("jitter_scale must be positive")

    def injected_count(self, n_train: int) -> int:
        if self.rate_convention == "final_fraction":
            return int(round(self.rate * n_train / (1.0 - self.rate)))
        return int(round(self.rate * n_train))


@dataclass(frozen=True)
class InjectionResult:
    dataset: FeatureDataset
    injected_ids: tuple[str, ...]


def _sample_anomalies(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    out = np.empty((count, dim))
    filled = 0
    attempts = 0
    while filled < count:
        batch = rng.uniform(-BOX_HALF_WIDTH, BOX_HALF_WIDTH, size=(count, dim))
        attempts += count
        keep = np.linalg.norm(batch, axis=1) >= REJECT_RADIUS
        accepted = batch[keep][: count - filled]
        out[filled : filled + len(accepted)] = accepted
        filled += len(accepted)
        if attempts > _MAX_REJECTION_ATTEMPTS:
            raise DegenerateError(
                "anomaly rejection sampling exceeded the attempt budget"
            )
    return out


def synth_generate(config: SynthConfig) -> tuple[FeatureDataset, FeatureDataset]:
    """Generate a clean nominal training set and a labeled test set.

    The test set holds fresh nominals plus anomalies and carries hidden
    evaluation labels; the training set is unlabeled. Reproducible from the
    config seed.
    """
    rng = np.random.default_rng(config.seed)
    d = config.dim
    train = rng.standard_normal((config.n_nominal, d))
    test_nom = rng.standard_normal((config.n_test_nominal, d))
    anomalies = _sample_anomalies(rng, config.n_anomaly, d)

    train_ids = [f"train-{i:05d}" for i in range(config.n_nominal)]
    test_ids = [f"testnom-{i:05d}" for i in range(config.n_test_nominal)]
    anom_ids = [f"anom-{i:05d}" for i in range(config.n_anomaly)]

    train_ds = FeatureDataset(train_ids, train.astype(np.float32))
    labels = {s: 0 for s in test_ids} | {s: 1 for s in anom_ids}
    test_ds = FeatureDataset(
        test_ids + anom_ids,
        np.vstack([test_nom, anomalies]).astype(np.float32),
        eval_labels=labels,
    )
    return train_ds, test_ds


def inject_corruption(
    train: FeatureDataset,
    anomaly_pool: FeatureDataset,
    spec: CorruptionSpec,
) -> InjectionResult:
    """Contaminate ``train`` with anomalies drawn from a labeled pool.

    The default convention makes the corrupted set's anomaly fraction equal
    to the rate: a = round(p * |train| / (1 - p)) anomalies are appended,
    sampled without replacement. Injected ids are returned as hidden ground
    truth for filter metrics. With the same seed the draws are nested
    across rates (a higher rate extends a lower one).
    """
    count = spec.injected_count(train.n_samples)
    if count == 0:
        return InjectionResult(dataset=train, injected_ids=())

    rng = np.random.default_rng(spec.seed)
    if anomaly_pool._eval_labels is None:
        raise ParameterError("anomaly pool must carry labels")
    pool_ids = [s for s in anomaly_pool.sample_ids if anomaly_pool._eval_labels[s] == 1]
    if not pool_ids:
        raise ParameterError("anomaly pool contains no anomalous samples")

    if spec.mode == "near_duplicate":
        base_id = pool_ids[int(rng.integers(len(pool_ids)))]
        base = anomaly_pool.features[anomaly_pool.index_of(base_id)].astype(np.float64)
        copies = base + spec.jitter_scale * rng.standard_normal((count, train.dim))
        injected_ids = tuple(f"dup-{i:05d}" for i in range(count))
        injected = copies.astype(np.float32)
    else:
        if count > len(pool_ids):
            raise ParameterError(
                f"pool holds {len(pool_ids)} anomalies, {count} requested"
            )
        order = rng.permutation(len(pool_ids))
        injected_ids = tuple(pool_ids[int(i)] for i in order[:count])
        rows = [anomaly_pool.index_of(s) for s in injected_ids]
        injected = anomaly_pool.features[rows]

    merged = FeatureDataset(
        list(train.sample_ids) + list(injected_ids),
        np.vstack([train.features, injected]),
    )
    return InjectionResult(dataset=merged, injected_ids=injected_ids)


def truth_map(result: InjectionResult) -> dict[str, bool]:
    """Ground-truth anomaly flag for every sample of the corrupted set."""
    injected = set(result.injected_ids)
    return {s: s in injected for s in result.dataset.sample_ids}
