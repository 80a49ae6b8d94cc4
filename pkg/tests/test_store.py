import json

import numpy as np
import pytest

from periscope import store


def test_feature_store_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    matrix = rng.normal(0, 1, size=(5, 12)).astype(np.float32)
    ids = [f"s{k}" for k in range(5)]
    path = tmp_path / "feat.bin"
    store.write_features(path, ids, matrix, source="lbph", cfg_hash="abc123")
    back_ids, back, header = store.read_features(path)
    assert back_ids == ids
    assert np.array_equal(back, matrix)
    assert header["source"] == "lbph"
    assert header["config_hash"] == "abc123"
    assert header["dim"] == 12


def test_feature_store_layout(tmp_path):
    matrix = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "feat.bin"
    store.write_features(path, ["a", "b"], matrix, source="hog", cfg_hash="h")
    raw = path.read_bytes()
    newline = raw.index(b"\n")
    header = json.loads(raw[: newline + 1])
    assert header["count"] == 2
    payload = np.frombuffer(raw[newline + 1 :], dtype="<f4")
    assert payload.tolist() == [0, 1, 2, 3, 4, 5]


def test_feature_store_truncation_detected(tmp_path):
    path = tmp_path / "feat.bin"
    store.write_features(path, ["a"], np.ones((1, 4), np.float32), "lbph", "h")
    path.write_bytes(path.read_bytes()[:-2])
    with pytest.raises(ValueError):
        store.read_features(path)


def test_keypoint_store_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    ids = ["a", "b", "c"]
    geoms = [
        rng.normal(0, 1, (3, 4)).astype(np.float32),
        np.zeros((0, 4), np.float32),  # keypoint-free sample
        rng.normal(0, 1, (1, 4)).astype(np.float32),
    ]
    descs = [
        rng.normal(0, 1, (3, 128)).astype(np.float32),
        np.zeros((0, 128), np.float32),
        rng.normal(0, 1, (1, 128)).astype(np.float32),
    ]
    path = tmp_path / "kp.bin"
    store.write_keypoints(path, ids, geoms, descs)
    back_ids, back_geoms, back_descs = store.read_keypoints(path)
    assert back_ids == ids
    for got, want in zip(back_geoms, geoms):
        assert np.array_equal(got, want)
    for got, want in zip(back_descs, descs):
        assert np.array_equal(got, want)


def test_keypoint_store_validation(tmp_path):
    with pytest.raises(ValueError):
        store.write_keypoints(
            tmp_path / "kp.bin",
            ["a"],
            [np.zeros((2, 4), np.float32)],
            [np.zeros((1, 128), np.float32)],
        )


def test_config_hash_stability():
    h1 = store.config_hash({"b": 1, "a": [1, 2]})
    h2 = store.config_hash({"a": [1, 2], "b": 1})
    assert h1 == h2
    assert len(h1) == 16
    assert store.config_hash({"a": [1, 3], "b": 1}) != h1
