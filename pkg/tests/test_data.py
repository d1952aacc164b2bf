"""Dataset container, manifest round-trips, and bag partitioning."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from baaf.data import BagPartition, FeatureDataset, load_dataset, random_split, write_dataset
from baaf.errors import DataError, ParameterError


def make_dataset(n=10, d=3, seed=0, labels=False, clips=None):
    rng = np.random.default_rng(seed)
    ids = [f"s{i:03d}" for i in range(n)]
    feats = rng.normal(size=(n, d)).astype(np.float32)
    eval_labels = {s: int(i % 2 == 0) for i, s in enumerate(ids)} if labels else None
    clip_of = frame_index = None
    if clips is not None:
        clip_of, frame_index = {}, {}
        pos = 0
        for c, length in enumerate(clips):
            for f in range(length):
                clip_of[ids[pos]] = f"clip{c}"
                frame_index[ids[pos]] = f
                pos += 1
        assert pos == n
    return FeatureDataset(ids, feats, clip_of, frame_index, eval_labels)


class TestFeatureDataset:
    def test_basic_construction(self):
        ds = make_dataset(4, 3)
        assert ds.n_samples == 4
        assert ds.dim == 3
        assert not ds.has_labels

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataError, match="unique"):
            FeatureDataset(["a", "a"], np.zeros((2, 2), dtype=np.float32))

    def test_partial_labels_rejected(self):
        ids = ["a", "b", "c", "d"]
        with pytest.raises(DataError, match="labels"):
            FeatureDataset(ids, np.zeros((4, 2), dtype=np.float32),
                           eval_labels={"a": 0, "b": 0, "c": 1})

    def test_features_immutable(self):
        ds = make_dataset()
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0

    def test_non_contiguous_clip_rejected(self):
        ids = ["a", "b", "c"]
        clip_of = {"a": "x", "b": "y", "c": "x"}
        frames = {"a": 0, "b": 0, "c": 1}
        with pytest.raises(DataError, match="contiguous"):
            FeatureDataset(ids, np.zeros((3, 2), dtype=np.float32), clip_of, frames)

    def test_take_preserves_structure(self):
        ds = make_dataset(6, 2, labels=True, clips=[3, 3])
        sub = ds.take([0, 1, 2])
        assert sub.sample_ids == ds.sample_ids[:3]
        assert sub.clip_of == {s: "clip0" for s in sub.sample_ids}
        np.testing.assert_array_equal(sub.features, ds.features[:3])


class TestManifestIO:
    def test_load_plain_manifest(self, tmp_path):
        # manifest declaring 4 rows, d=3, no labels
        ds = make_dataset(4, 3)
        path = write_dataset(ds, tmp_path / "data.json")
        loaded = load_dataset(path)
        assert loaded.n_samples == 4
        assert loaded.dim == 3
        assert not loaded.has_labels

    def test_labels_for_subset_is_error(self, tmp_path):
        ds = make_dataset(4, 3, labels=True)
        path = write_dataset(ds, tmp_path / "data.json")
        labels_file = tmp_path / "data.labels.csv"
        lines = labels_file.read_text().strip().splitlines()
        labels_file.write_text("\n".join(lines[:3]) + "\n")
        with pytest.raises(DataError):
            load_dataset(path)

    @pytest.mark.parametrize("fmt", ["csv", "f32le"])
    def test_round_trip_bit_for_bit(self, tmp_path, fmt):
        ds = make_dataset(12, 5, seed=9, labels=True, clips=[4, 4, 4])
        path = write_dataset(ds, tmp_path / "data.json", feature_format=fmt)
        loaded = load_dataset(path)
        assert loaded.sample_ids == ds.sample_ids
        np.testing.assert_array_equal(loaded.features, ds.features)
        assert loaded.features.dtype == np.float32
        assert loaded.clip_of == ds.clip_of
        assert loaded.frame_index == ds.frame_index
        assert loaded._eval_labels == ds._eval_labels

    def test_short_f32le_payload_is_shape_error(self, tmp_path):
        ds = make_dataset(4, 3)
        path = write_dataset(ds, tmp_path / "data.json", feature_format="f32le")
        payload = tmp_path / "data.features.f32le"
        payload.write_bytes(payload.read_bytes()[:-4])
        with pytest.raises(DataError, match="bytes"):
            load_dataset(path)

    def test_csv_row_width_mismatch(self, tmp_path):
        ds = make_dataset(4, 3)
        path = write_dataset(ds, tmp_path / "data.json")
        feats = tmp_path / "data.features.csv"
        lines = feats.read_text().strip().splitlines()
        lines[2] = lines[2].rsplit(",", 1)[0]  # drop one value
        feats.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="fields"):
            load_dataset(path)

    def test_missing_payload(self, tmp_path):
        ds = make_dataset(4, 3)
        path = write_dataset(ds, tmp_path / "data.json")
        (tmp_path / "data.features.csv").unlink()
        with pytest.raises(DataError, match="not found"):
            load_dataset(path)

    def test_unknown_manifest_keys_ignored(self, tmp_path):
        ds = make_dataset(4, 3)
        path = write_dataset(ds, tmp_path / "data.json",
                             extra_manifest_fields={"command": "synth"})
        assert json.loads(path.read_text())["command"] == "synth"
        assert load_dataset(path).n_samples == 4


class TestRandomSplit:
    def test_bag_sizes_ten_into_four(self):
        ds = make_dataset(10)
        part = random_split(ds, 4, seed=7)
        sizes = sorted(len(b) for b in part.bags)
        assert sizes == [2, 2, 3, 3]
        union = set().union(*part.bags)
        assert union == set(ds.sample_ids)
        assert sum(len(b) for b in part.bags) == 10

    def test_deterministic_per_seed(self):
        ds = make_dataset(20)
        a = random_split(ds, 4, seed=123)
        b = random_split(ds, 4, seed=123)
        assert a.bags == b.bags
        c = random_split(ds, 4, seed=124)
        assert a.bags != c.bags  # overwhelmingly likely

    def test_clip_split_whole_clips(self):
        # 6 clips of 20 frames, 2 bags: brute-force check that each bag is
        # exactly 3 whole clips (= 60 frames) and no clip straddles bags
        ds = make_dataset(120, 2, clips=[20] * 6)
        part = random_split(ds, 2, seed=42)
        for bag in part.bags:
            assert len(bag) == 60
            clips_seen = {ds.clip_of[s] for s in bag}
            assert len(clips_seen) == 3
            for c in clips_seen:
                members = {s for s in ds.sample_ids if ds.clip_of[s] == c}
                assert members <= bag  # the whole clip landed here

    def test_too_many_bags(self):
        ds = make_dataset(5)
        with pytest.raises(ParameterError):
            random_split(ds, 6, seed=0)
        clip_ds = make_dataset(12, clips=[4, 4, 4])
        with pytest.raises(ParameterError):
            random_split(clip_ds, 4, seed=0)  # only 3 clips

    def test_n_below_two(self):
        ds = make_dataset(5)
        with pytest.raises(ParameterError):
            random_split(ds, 1, seed=0)

    @settings(max_examples=50, deadline=None)
    @given(
        n_samples=st.integers(min_value=4, max_value=60),
        n_bags=st.integers(min_value=2, max_value=6),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_partition_property(self, n_samples, n_bags, seed):
        if n_bags > n_samples:
            return
        ds = make_dataset(n_samples)
        part = random_split(ds, n_bags, seed=seed)
        sizes = [len(b) for b in part.bags]
        assert max(sizes) - min(sizes) <= 1
        assert sum(sizes) == n_samples
        assert set().union(*part.bags) == set(ds.sample_ids)

    def test_overlapping_bags_rejected(self):
        with pytest.raises(ParameterError, match="overlap"):
            BagPartition(bags=(frozenset({"a"}), frozenset({"a", "b"})), n=2, seed=0)
