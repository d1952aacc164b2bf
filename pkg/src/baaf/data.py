"""Dataset container, manifest ingestion, and the random bag partitioner.

File formats
------------
A dataset on disk is described by a JSON *manifest* with fields::

    feature_file   payload path, relative to the manifest
    rows           number of samples
    dim            feature dimension d
    format         "csv" or "f32le"
    labels_file    optional, CSV of ``sample_id,label`` with label in {0, 1}
    clips_file     optional, CSV of ``sample_id,clip_id,frame_index``
    sample_ids     optional, explicit id list (needed to round-trip custom
                   ids through the headerless f32le format)

``f32le`` payloads are rows x dim little-endian 32-bit floats, row-major,
no header. ``csv`` payloads carry one sample per row, first column the
sample id, then d feature values. Unknown manifest keys are ignored, so a
manifest can double as a run record.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, ParameterError

MANIFEST_FORMATS = ("csv", "f32le")


class FeatureDataset:
    """Ordered, immutable collection of fixed-dimension feature vectors.

    Evaluation labels, when present, are deliberately private: training-side
    code (the engine and the backends) only ever reads ``sample_ids``,
    ``features``, and the clip structure. The accessor for labels lives in
    :mod:`baaf.metrics`, the evaluation side of the fence.
    """

    __slots__ = ("sample_ids", "features", "clip_of", "frame_index", "_eval_labels", "_index_of")

    def __init__(
        self,
        sample_ids: Sequence[str],
        features: np.ndarray,
        clip_of: Mapping[str, str] | None = None,
        frame_index: Mapping[str, int] | None = None,
        eval_labels: Mapping[str, int] | None = None,
    ):
        features = np.asarray(features, dtype=np.float32)
        if features.ndim != 2:
            raise DataError(f"features must be 2-D (rows x dim), got ndim={features.ndim}")
        if features.shape[1] < 1:
            raise DataError("feature dimension must be >= 1")
        if len(sample_ids) != features.shape[0]:
            raise DataError(
                f"{len(sample_ids)} sample ids for {features.shape[0]} feature rows"
            )
        ids = tuple(str(s) for s in sample_ids)
        if len(set(ids)) != len(ids):
            raise DataError("sample ids are not unique")
        if not np.all(np.isfinite(features)):
            raise DataError("features contain non-finite values")

        self.sample_ids = ids
        features = features.copy()
        features.flags.writeable = False
        self.features = features
        self._index_of = {s: i for i, s in enumerate(ids)}

        if clip_of is not None:
            clip_of = {str(k): str(v) for k, v in clip_of.items()}
            missing = set(ids) - set(clip_of)
            if missing or set(clip_of) - set(ids):
                raise DataError("clip assignment must cover exactly the sample ids")
            frame_index = {str(k): int(v) for k, v in (frame_index or {}).items()}
            if set(frame_index) != set(ids):
                raise DataError("frame_index must cover exactly the sample ids")
            self._check_clip_layout(ids, clip_of, frame_index)
            self.clip_of = clip_of
            self.frame_index = frame_index
        else:
            if frame_index is not None:
                raise DataError("frame_index given without clip assignment")
            self.clip_of = None
            self.frame_index = None

        if eval_labels is not None:
            eval_labels = {str(k): int(v) for k, v in eval_labels.items()}
            if set(eval_labels) != set(ids):
                raise DataError("eval labels must cover every sample id")
            bad = {v for v in eval_labels.values() if v not in (0, 1)}
            if bad:
                raise DataError(f"labels must be 0 or 1, got {sorted(bad)}")
            self._eval_labels = eval_labels
        else:
            self._eval_labels = None

    @staticmethod
    def _check_clip_layout(ids, clip_of, frame_index):
        # clips must be contiguous runs, frames ascending within each run
        seen_done = set()
        prev_clip = None
        prev_frame = None
        for s in ids:
            c = clip_of[s]
            if c != prev_clip:
                if c in seen_done:
                    raise DataError(f"clip {c!r} is not contiguous in sample order")
                if prev_clip is not None:
                    seen_done.add(prev_clip)
                prev_clip = c
                prev_frame = frame_index[s]
            else:
                if frame_index[s] <= prev_frame:
                    raise DataError(f"frames of clip {c!r} are not in ascending order")
                prev_frame = frame_index[s]

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self._eval_labels is not None

    def index_of(self, sample_id: str) -> int:
        return self._index_of[sample_id]

    def clip_ids(self) -> tuple[str, ...]:
        """Clip ids in first-appearance order; empty tuple for flat datasets."""
        if self.clip_of is None:
            return ()
        seen: dict[str, None] = {}
        for s in self.sample_ids:
            seen.setdefault(self.clip_of[s], None)
        return tuple(seen)

    def take(self, indices: Sequence[int]) -> "FeatureDataset":
        """Subset by positional indices, preserving order and structure."""
        idx = np.asarray(indices, dtype=np.intp)
        ids = [self.sample_ids[i] for i in idx]
        clip_of = frame_index = labels = None
        if self.clip_of is not None:
            clip_of = {s: self.clip_of[s] for s in ids}
            frame_index = {s: self.frame_index[s] for s in ids}
        if self._eval_labels is not None:
            labels = {s: self._eval_labels[s] for s in ids}
        return FeatureDataset(ids, self.features[idx], clip_of, frame_index, labels)


@dataclass(frozen=True)
class BagPartition:
    """A disjoint split of sample ids into ``n`` bags for one vote iteration."""

    bags: tuple[frozenset[str], ...]
    n: int
    seed: int

    def __post_init__(self):
        if self.n != len(self.bags) or self.n < 2:
            raise ParameterError(f"partition needs n >= 2 bags, got n={self.n}")
        total = sum(len(b) for b in self.bags)
        union = frozenset().union(*self.bags)
        if len(union) != total:
            raise ParameterError("bags overlap")

    def bag_of(self) -> dict[str, int]:
        return {s: i for i, bag in enumerate(self.bags) for s in bag}


def random_split(dataset: FeatureDataset, n: int, seed: int) -> BagPartition:
    """Uniformly random near-equal partition of the dataset into ``n`` bags.

    Sampling is without replacement, so a sample (and, for clip-structured
    data, a whole clip) appears in exactly one bag. Unit counts per bag
    differ by at most one; for clip datasets the unit is the clip, so every
    clip's frames land in the same bag. Deterministic given (dataset order,
    n, seed).
    """
    if not isinstance(n, int) or n < 2:
        raise ParameterError(f"number of bags must be an integer >= 2, got {n!r}")
    if dataset.clip_of is not None:
        units: list[tuple[str, ...]] = []
        clip_members: dict[str, list[str]] = {}
        for s in dataset.sample_ids:
            clip_members.setdefault(dataset.clip_of[s], []).append(s)
        units = [tuple(clip_members[c]) for c in dataset.clip_ids()]
    else:
        units = [(s,) for s in dataset.sample_ids]

    if n > len(units):
        raise ParameterError(
            f"cannot split {len(units)} assignable units into {n} bags"
        )

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(units))
    base, extra = divmod(len(units), n)
    bags: list[frozenset[str]] = []
    pos = 0
    for i in range(n):
        size = base + (1 if i < extra else 0)
        chunk = order[pos : pos + size]
        pos += size
        bags.append(frozenset(s for u in chunk for s in units[int(u)]))
    return BagPartition(bags=tuple(bags), n=n, seed=seed)


# ---------------------------------------------------------------------------
# manifest IO
# ---------------------------------------------------------------------------

def _fmt_f32(x: np.float32) -> str:
    # shortest string that round-trips the float32 value
    return str(np.float32(x))


def write_dataset(
    dataset: FeatureDataset,
    manifest_path: str | Path,
    feature_format: str = "csv",
    extra_manifest_fields: Mapping[str, object] | None = None,
) -> Path:
    """Write manifest plus payload files next to ``manifest_path``.

    Returns the manifest path. Labels and clips files are emitted only when
    the dataset carries them.
    """
    if feature_format not in MANIFEST_FORMATS:
        raise ParameterError(f"unknown feature format {feature_format!r}")
    manifest_path = Path(manifest_path)
    stem = manifest_path.stem
    out_dir = manifest_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)

    feature_file = f"{stem}.features.{'csv' if feature_format == 'csv' else 'f32le'}"
    manifest: dict[str, object] = {
        "feature_file": feature_file,
        "rows": dataset.n_samples,
        "dim": dataset.dim,
        "format": feature_format,
    }
    if feature_format == "f32le":
        manifest["sample_ids"] = list(dataset.sample_ids)
    if dataset.has_labels:
        manifest["labels_file"] = f"{stem}.labels.csv"
    if dataset.clip_of is not None:
        manifest["clips_file"] = f"{stem}.clips.csv"
    if extra_manifest_fields:
        for key, value in extra_manifest_fields.items():
            manifest.setdefault(key, value)

    # the manifest doubles as the run record, so it goes down first
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    if feature_format == "csv":
        with open(out_dir / feature_file, "w", newline="") as fh:
            writer = csv.writer(fh)
            for sid, row in zip(dataset.sample_ids, dataset.features):
                writer.writerow([sid] + [_fmt_f32(v) for v in row])
    else:
        payload = np.ascontiguousarray(dataset.features, dtype="<f4")
        (out_dir / feature_file).write_bytes(payload.tobytes())

    if dataset.has_labels:
        with open(out_dir / manifest["labels_file"], "w", newline="") as fh:
            writer = csv.writer(fh)
            for sid in dataset.sample_ids:
                writer.writerow([sid, dataset._eval_labels[sid]])

    if dataset.clip_of is not None:
        with open(out_dir / manifest["clips_file"], "w", newline="") as fh:
            writer = csv.writer(fh)
            for sid in dataset.sample_ids:
                writer.writerow([sid, dataset.clip_of[sid], dataset.frame_index[sid]])

    return manifest_path


def load_dataset(manifest_path: str | Path) -> FeatureDataset:
    """Load and validate a dataset declared by a manifest file."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON: {exc}") from exc

    for field in ("feature_file", "rows", "dim", "format"):
        if field not in manifest:
            raise DataError(f"manifest missing required field {field!r}")
    rows, dim = int(manifest["rows"]), int(manifest["dim"])
    fmt = manifest["format"]
    if fmt not in MANIFEST_FORMATS:
        raise DataError(f"unknown payload format {fmt!r}")
    if rows < 1 or dim < 1:
        raise DataError(f"manifest declares empty shape {rows}x{dim}")

    base = manifest_path.parent
    feature_path = base / manifest["feature_file"]
    if not feature_path.exists():
        raise DataError(f"feature payload not found: {feature_path}")

    if fmt == "f32le":
        raw = feature_path.read_bytes()
        expected = rows * dim * 4
        if len(raw) != expected:
            raise DataError(
                f"payload is {len(raw)} bytes, expected {expected} ({rows}x{dim} f32le)"
            )
        features = np.frombuffer(raw, dtype="<f4").reshape(rows, dim)
        ids = manifest.get("sample_ids")
        if ids is None:
            ids = [f"row-{i:06d}" for i in range(rows)]
        elif len(ids) != rows:
            raise DataError(f"{len(ids)} sample_ids declared for {rows} rows")
    else:
        ids = []
        values = []
        with open(feature_path, newline="") as fh:
            for lineno, record in enumerate(csv.reader(fh), start=1):
                if not record:
                    continue
                if len(record) != dim + 1:
                    raise DataError(
                        f"{feature_path.name}:{lineno}: expected id + {dim} values, "
                        f"got {len(record)} fields"
                    )
                ids.append(record[0])
                try:
                    values.append([np.float32(v) for v in record[1:]])
                except ValueError as exc:
                    raise DataError(f"{feature_path.name}:{lineno}: {exc}") from exc
        if len(ids) != rows:
            raise DataError(f"payload has {len(ids)} rows, manifest declares {rows}")
        features = np.array(values, dtype=np.float32)

    labels = None
    if manifest.get("labels_file"):
        labels = _read_keyed_csv(base / manifest["labels_file"], 2, "labels")
        labels = {k: int(v[0]) for k, v in labels.items()}

    clip_of = frame_index = None
    if manifest.get("clips_file"):
        rows_map = _read_keyed_csv(base / manifest["clips_file"], 3, "clips")
        clip_of = {k: v[0] for k, v in rows_map.items()}
        frame_index = {k: int(v[1]) for k, v in rows_map.items()}

    return FeatureDataset(ids, features, clip_of, frame_index, labels)


def _read_keyed_csv(path: Path, n_fields: int, what: str) -> dict[str, tuple[str, ...]]:
    if not path.exists():
        raise DataError(f"{what} file not found: {path}")
    out: dict[str, tuple[str, ...]] = {}
    with open(path, newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record:
                continue
            if len(record) != n_fields:
                raise DataError(
                    f"{path.name}:{lineno}: expected {n_fields} fields, got {len(record)}"
                )
            if record[0] in out:
                raise DataError(f"{path.name}:{lineno}: duplicate id {record[0]!r}")
            out[record[0]] = tuple(record[1:])
    return out
