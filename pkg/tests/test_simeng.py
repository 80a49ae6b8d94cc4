import json

import numpy as np
import pytest

from periscope import protocol, simeng
from periscope.corpus import SampleRecord
from periscope.handfeat import FeatureVector, KeypointSet, MatchStats

from test_corpus import make_records


def fv(values, sid="v"):
    return FeatureVector(sample_id=sid, values=np.asarray(values, np.float32), source="lbph")


def random_corpus(n_subjects, per_identity, dim, seed):
    rng = np.random.default_rng(seed)
    records = make_records(n_subjects, per_identity)
    features = {
        rec.sample_id: rng.normal(0, 1, dim).astype(np.float32) for rec in records
    }
    return records, features


def test_cosine_worked_examples():
    assert simeng.cosine(fv([1, 0]), fv([0, 1])) == 0.0
    assert simeng.cosine(fv([1, 2, 3]), fv([2, 4, 6])) == pytest.approx(1.0, abs=1e-12)
    assert simeng.cosine(fv([1, 0]), fv([1, 1])) == pytest.approx(0.70710678, abs=1e-8)


def fv64(values, sid="v"):
    # full-precision vector: the scale-invariance bound is about the
    # scorer's arithmetic, not input quantization
    return FeatureVector(sample_id=sid, values=np.asarray(values, np.float64), source="lbph")


def test_cosine_invariants():
    rng = np.random.default_rng(13)
    for _ in range(25):
        v = rng.normal(0, 1, int(rng.integers(2, 400)))
        w = rng.normal(0, 1, v.size)
        alpha = float(rng.uniform(0.1, 10))
        assert simeng.cosine(fv64(v), fv64(v)) == pytest.approx(1.0, abs=1e-9)
        assert simeng.cosine(fv64(v), fv64(w)) == pytest.approx(
            simeng.cosine(fv64(w), fv64(v)), abs=0
        )
        assert simeng.cosine(fv64(alpha * v), fv64(w)) == pytest.approx(
            simeng.cosine(fv64(v), fv64(w)), abs=1e-9
        )


def test_cosine_errors():
    with pytest.raises(simeng.DimensionMismatchError):
        simeng.cosine(fv([1, 2]), fv([1, 2, 3]))
    with pytest.raises(simeng.ZeroNormError):
        simeng.cosine(fv([0, 0]), fv([1, 2]))


def test_sift_ratio_forms():
    cfg = simeng.SiftRatioConfig()
    assert simeng.sift_ratio(MatchStats(10, 20, 10), cfg) == 1.0
    assert simeng.sift_ratio(MatchStats(0, 0, 0), cfg) == 0.0
    assert simeng.sift_ratio(MatchStats(3, 7, 12), cfg) == pytest.approx(3 / 7, abs=1e-12)
    literal = simeng.SiftRatioConfig(epsilon=1.0, literal_min=True)
    # the formula as printed caps the denominator at epsilon
    assert simeng.sift_ratio(MatchStats(2, 5, 9), literal) == 2.0
    assert simeng.sift_ratio(MatchStats(2, 5, 9), cfg) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        simeng.SiftRatioConfig(epsilon=0.0)


def test_score_pairs_single_class():
    records = [SampleRecord(f"s{k}", "subj", "left", k) for k in range(3)]
    pairs = protocol.enumerate_pairs(protocol.make_partition(records, "Complete"))
    rng = np.random.default_rng(0)
    features = {rec.sample_id: rng.normal(0, 1, 16).astype(np.float32) for rec in records}
    scores = simeng.score_pairs(features, pairs, descriptor="lbph", partition="complete")
    assert len(scores.genuine) == 3
    assert len(scores.impostor) == 0
    assert scores.meta.pair_counts == (3, 0)
    assert scores.meta.descriptor == "lbph"


def test_score_pairs_imp_shaped_counts():
    records, features = random_corpus(62, 5, 24, seed=21)  # 124 identities x 5
    pairs = protocol.enumerate_pairs(protocol.make_partition(records, "Complete"))
    scores = simeng.score_pairs(features, pairs, workers=2)
    assert len(scores.genuine) == 1240
    assert len(scores.impostor) == 190650
    assert np.isfinite(scores.genuine).all() and np.isfinite(scores.impostor).all()
    assert scores.genuine.max() <= 1.0 and scores.genuine.min() >= -1.0


def test_blocked_equals_naive():
    records, features = random_corpus(50, 2, 40, seed=22)  # 200 samples
    pairs = protocol.enumerate_pairs(protocol.make_partition(records, "Complete"))
    blocked = simeng.score_pairs(features, pairs, workers=2, tile=64)
    naive = simeng.score_pairs_naive(features, pairs)
    assert np.abs(blocked.genuine - naive.genuine).max() <= 1e-6
    assert np.abs(blocked.impostor - naive.impostor).max() <= 1e-6


def test_worker_counts_bit_identical():
    records, features = random_corpus(40, 3, 33, seed=23)
    pairs = protocol.enumerate_pairs(protocol.make_partition(records, "Complete"))
    outs = [
        simeng.score_pairs(features, pairs, workers=w, tile=48) for w in (1, 2, 8)
    ]
    for other in outs[1:]:
        assert outs[0].genuine.tobytes() == other.genuine.tobytes()
        assert outs[0].impostor.tobytes() == other.impostor.tobytes()


def test_score_order_matches_pairlist():
    records, features = random_corpus(5, 3, 8, seed=24)
    pairs = protocol.enumerate_pairs(protocol.make_partition(records, "Complete"))
    scores = simeng.score_pairs(features, pairs)
    for k, (a, b) in enumerate(pairs.genuine[:5]):
        want = simeng.cosine(fv(features[a], a), fv(features[b], b))
        assert scores.genuine[k] == pytest.approx(want, abs=1e-12)


def test_missing_feature_and_zero_norm():
    records, features = random_corpus(3, 2, 8, seed=25)
    pairs = protocol.enumerate_pairs(protocol.make_partition(records, "Complete"))
    incomplete = dict(features)
    missing_id = records[-1].sample_id
    del incomplete[missing_id]
    with pytest.raises(simeng.MissingFeatureError, match=missing_id):
        simeng.score_pairs(incomplete, pairs)
    features[records[0].sample_id] = np.zeros(8, np.float32)
    with pytest.raises(simeng.ZeroNormError, match=records[0].sample_id):
        simeng.score_pairs(features, pairs)


def test_keypoint_mode_matches_naive():
    rng = np.random.default_rng(26)
    records = make_records(4, 2)
    sets = {}
    for rec in records:
        n = int(rng.integers(0, 12))
        desc = rng.normal(0, 1, (n, 128)).astype(np.float32)
        desc /= np.maximum(np.linalg.norm(desc, axis=1, keepdims=True), 1e-9)
        sets[rec.sample_id] = KeypointSet(rec.sample_id, np.zeros((n, 4), np.float32), desc)
    pairs = protocol.enumerate_pairs(protocol.make_partition(records, "Complete"))
    fast = simeng.score_pairs(sets, pairs, workers=2)
    slow = simeng.score_pairs_naive(sets, pairs)
    assert np.array_equal(fast.genuine, slow.genuine)
    assert np.array_equal(fast.impostor, slow.impostor)
    everything = np.concatenate([fast.genuine, fast.impostor])
    assert (everything >= 0).all() and (everything <= 1.0).all()


def test_scores_file_roundtrip_and_layout(tmp_path):
    meta = simeng.ScoreMeta(descriptor="lbph", partition="cw-test", pair_counts=(2, 3))
    # values exactly representable in float32, the on-disk precision
    scores = simeng.ScoreSet(
        genuine=np.array([0.5, 0.25]), impostor=np.array([0.125, 0.75, -0.5]), meta=meta
    )
    path = tmp_path / "scores.bin"
    simeng.write_scores(scores, path)
    raw = path.read_bytes()
    newline = raw.index(b"\n")
    header = json.loads(raw[: newline + 1])
    assert header["genuine_count"] == 2 and header["impostor_count"] == 3
    assert header["meta"]["descriptor"] == "lbph"
    payload = np.frombuffer(raw[newline + 1 :], dtype="<f4")
    assert payload.tolist() == [0.5, 0.25, 0.125, 0.75, -0.5]

    back = simeng.read_scores(path)
    assert back.meta == meta
    assert np.array_equal(back.genuine, scores.genuine)
    assert np.array_equal(back.impostor, scores.impostor)
    with pytest.raises(ValueError):
        path.write_bytes(raw[:-1])
        simeng.read_scores(path)
