"""Feature-space one-class detectors behind a single fit/score contract.

Three classical backends, each a stand-in for a different family of anomaly
detectors: a nearest-neighbor memory bank (optionally coreset-subsampled),
a shrunk-covariance Mahalanobis model, and a PCA reconstruction-error
model. The filtering engine treats them all as opaque: fit on vectors,
emit a finite non-negative raw score, higher means more anomalous.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from .data import FeatureDataset
from .errors import DataError, DegenerateError, ParameterError

KINDS = ("knn_memory_bank", "gaussian_mahalanobis", "pca_reconstruction")

# unconditional variance floor keeping the shrunk covariance factorizable
_COV_FLOOR = 1e-12


@dataclass(frozen=True)
class KnnParams:
    k_neighbors: int = 1
    coreset_fraction: float = 1.0


@dataclass(frozen=True)
class GaussianParams:
    shrinkage: float = 0.01


@dataclass(frozen=True)
class PcaParams:
    variance_kept: float = 0.95


@dataclass(frozen=True)
class BackendConfig:
    """Detector choice plus the parameter block for that choice.

    Exactly one block (matching ``kind``) is consulted; the others keep
    their defaults and are ignored.
    """

    kind: str = "knn_memory_bank"
    knn: KnnParams = field(default_factory=KnnParams)
    gaussian: GaussianParams = field(default_factory=GaussianParams)
    pca: PcaParams = field(default_factory=PcaParams)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown backend kind {self.kind!r}")
        if self.knn.k_neighbors < 1:
            raise ParameterError("k_neighbors must be >= 1")
        if not 0.0 < self.knn.coreset_fraction <= 1.0:
            raise ParameterError("coreset_fraction must lie in (0, 1]")
        if not 0.0 <= self.gaussian.shrinkage <= 1.0:
            raise ParameterError("shrinkage must lie in [0, 1]")
        if not 0.0 < self.pca.variance_kept < 1.0:
            raise ParameterError("variance_kept must lie in (0, 1)")


@dataclass(frozen=True)
class KnnState:
    bank: np.ndarray  # (rows, d) float32, read-only
    k_neighbors: int


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray  # (d,) float64
    cov_cholesky: np.ndarray  # (d, d) float64, lower triangular


@dataclass(frozen=True)
class PcaState:
    mean: np.ndarray  # (d,) float64
    basis: np.ndarray  # (m, d) float64, orthonormal rows


@dataclass(frozen=True)
class TrainedDetector:
    """Immutable model state; ``score`` is a pure function of (state, query)."""

    kind: str
    dim: int
    train_sample_count: int
    state: Union[KnnState, GaussianState, PcaState]


def fit(config: BackendConfig, train: FeatureDataset, seed: int) -> TrainedDetector:
    """Train a detector of ``config.kind`` on the dataset's feature rows.

    Deterministic given (config, training order, seed); the seed only
    matters for the coreset pick of the knn backend.
    """
    if train.n_samples == 0:
        raise ParameterError("cannot fit a detector on an empty training set")
    d = train.dim

    if config.kind == "knn_memory_bank":
        bank = train.features
        if config.knn.coreset_fraction < 1.0:
            bank = coreset_subsample(bank, config.knn.coreset_fraction, seed)
        if config.knn.k_neighbors > bank.shape[0]:
            raise ParameterError(
                f"k_neighbors={config.knn.k_neighbors} exceeds bank size {bank.shape[0]}"
            )
        bank = np.ascontiguousarray(bank, dtype=np.float32)
        bank.flags.writeable = False
        state = KnnState(bank=bank, k_neighbors=config.knn.k_neighbors)

    elif config.kind == "gaussian_mahalanobis":
        X = train.features.astype(np.float64)
        lam = config.gaussian.shrinkage
        mean = X.mean(axis=0)
        Xc = X - mean
        cov = Xc.T @ Xc / X.shape[0]
        if lam == 0.0:
            # no shrinkage: the raw covariance itself must be positive definite
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise DegenerateError(
                    "covariance is singular and shrinkage is 0; "
                    "set shrinkage > 0 or provide more varied data"
                ) from None
        shrunk = (1.0 - lam) * cov + lam * (np.trace(cov) / d) * np.eye(d)
        shrunk += _COV_FLOOR * np.eye(d)
        try:
            chol = np.linalg.cholesky(shrunk)
        except np.linalg.LinAlgError:
            raise DegenerateError("shrunk covariance could not be factorized") from None
        state = GaussianState(mean=mean, cov_cholesky=chol)

    else:  # pca_reconstruction
        X = train.features.astype(np.float64)
        mean = X.mean(axis=0)
        Xc = X - mean
        # eigenvalues of the covariance via SVD of the centered data
        _, s, vt = np.linalg.svd(Xc, full_matrices=False)
        var = s**2 / X.shape[0]
        total = var.sum()
        if total <= 0.0:
            m = 0  # constant data: score degenerates to distance from the mean
        else:
            ratio = np.cumsum(var) / total
            m = int(np.searchsorted(ratio, config.pca.variance_kept) + 1)
            m = min(m, len(var))
        state = PcaState(mean=mean, basis=np.ascontiguousarray(vt[:m]))

    for arr in vars(state).values():
        if isinstance(arr, np.ndarray):
            arr.flags.writeable = False
    return TrainedDetector(
        kind=config.kind, dim=d, train_sample_count=train.n_samples, state=state
    )


def score(detector: TrainedDetector, query: np.ndarray) -> float | np.ndarray:
    """Raw anomaly score of a query vector (or a batch of row vectors).

    knn: Euclidean distance to the k-th nearest bank vector. gaussian:
    Mahalanobis distance under the shrunk covariance. pca: norm of the
    residual after projection onto the retained basis. Pure and reentrant.
    """
    q = np.asarray(query, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if q.ndim != 2 or q.shape[1] != detector.dim:
        raise ParameterError(
            f"query dimension {q.shape[-1] if q.ndim else '?'} != model dimension {detector.dim}"
        )

    state = detector.state
    if detector.kind == "knn_memory_bank":
        dists = cdist(q, state.bank.astype(np.float64))
        k = state.k_neighbors
        out = np.partition(dists, k - 1, axis=1)[:, k - 1]
    elif detector.kind == "gaussian_mahalanobis":
        z = solve_triangular(state.cov_cholesky, (q - state.mean).T, lower=True)
        out = np.sqrt(np.sum(z**2, axis=0))
    else:
        centered = q - state.mean
        if state.basis.shape[0] > 0:
            coeffs = centered @ state.basis.T
            centered = centered - coeffs @ state.basis
        out = np.linalg.norm(centered, axis=1)

    return float(out[0]) if single else out


def coreset_subsample(bank: np.ndarray, fraction: float, seed: int,
                      first_index: int | None = None) -> np.ndarray:
    """Greedy k-center (farthest-point) subsample of a memory bank.

    Picks ceil(fraction * rows) vectors: a seeded random first pick, then
    repeatedly the point farthest from everything chosen so far. With
    fraction = 1.0 the bank is returned unchanged. ``first_index`` pins the
    initial pick, mainly for tests.
    """
    bank = np.asarray(bank)
    if bank.ndim != 2 or bank.shape[0] == 0:
        raise ParameterError("bank must be a non-empty 2-D matrix")
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction}")
    rows = bank.shape[0]
    m = int(np.ceil(fraction * rows))
    if m >= rows:
        return bank

    pts = bank.astype(np.float64)
    if first_index is None:
        first_index = int(np.random.default_rng(seed).integers(rows))
    chosen = [first_index]
    min_dist = cdist(pts, pts[first_index : first_index + 1]).ravel()
    for _ in range(m - 1):
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, cdist(pts, pts[nxt : nxt + 1]).ravel())
    return bank[np.array(chosen)]


# ---------------------------------------------------------------------------
# detector blob (versioned binary cache format)
# ---------------------------------------------------------------------------

_BLOB_VERSION = 1
_TAGS = {"knn_memory_bank": 1, "gaussian_mahalanobis": 2, "pca_reconstruction": 3}
_KIND_OF_TAG = {v: k for k, v in _TAGS.items()}


def save_detector(detector: TrainedDetector, path: str | Path) -> None:
    """Serialize detector state: version, tag, dims, then f32le payloads."""
    parts = [struct.pack("<BBIQ", _BLOB_VERSION, _TAGS[detector.kind],
                         detector.dim, detector.train_sample_count)]
    state = detector.state
    if detector.kind == "knn_memory_bank":
        parts.append(struct.pack("<IQ", state.k_neighbors, state.bank.shape[0]))
        parts.append(np.ascontiguousarray(state.bank, dtype="<f4").tobytes())
    elif detector.kind == "gaussian_mahalanobis":
        parts.append(np.ascontiguousarray(state.mean, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(state.cov_cholesky, dtype="<f4").tobytes())
    else:
        parts.append(struct.pack("<I", state.basis.shape[0]))
        parts.append(np.ascontiguousarray(state.mean, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(state.basis, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_detector(path: str | Path) -> TrainedDetector:
    raw = Path(path).read_bytes()
    try:
        version, tag, dim, count = struct.unpack_from("<BBIQ", raw, 0)
        offset = struct.calcsize("<BBIQ")
        if version != _BLOB_VERSION:
            raise DataError(f"unsupported detector blob version {version}")
        kind = _KIND_OF_TAG.get(tag)
        if kind is None:
            raise DataError(f"unknown detector tag {tag}")

        def take_f32(n_values: int) -> np.ndarray:
            nonlocal offset
            end = offset + 4 * n_values
            if end > len(raw):
                raise DataError("detector blob truncated")
            arr = np.frombuffer(raw[offset:end], dtype="<f4")
            offset = end
            return arr

        if kind == "knn_memory_bank":
            k, rows = struct.unpack_from("<IQ", raw, offset)
            offset += struct.calcsize("<IQ")
            bank = take_f32(rows * dim).reshape(rows, dim).astype(np.float32)
            state = KnnState(bank=bank, k_neighbors=k)
        elif kind == "gaussian_mahalanobis":
            mean = take_f32(dim).astype(np.float64)
            chol = take_f32(dim * dim).reshape(dim, dim).astype(np.float64)
            state = GaussianState(mean=mean, cov_cholesky=chol)
        else:
            (m,) = struct.unpack_from("<I", raw, offset)
            offset += struct.calcsize("<I")
            mean = take_f32(dim).astype(np.float64)
            basis = take_f32(m * dim).reshape(m, dim).astype(np.float64)
            state = PcaState(mean=mean, basis=basis)
    except struct.error as exc:
        raise DataError(f"detector blob truncated: {exc}") from exc

    for arr in vars(state).values():
        if isinstance(arr, np.ndarray):
            arr.flags.writeable = False
    return TrainedDetector(kind=kind, dim=dim, train_sample_count=count, state=state)
