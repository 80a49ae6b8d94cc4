"""Pairwise similarity engine: cosine over feature vectors, match ratio
over SIFT keypoint sets, for millions of genuine/impostor pairs.

The blocked engine must be bit-identical for any worker count, so the
pair stream is cut into fixed-size chunks (independent of the worker
count) and every score is produced by a per-pair row reduction in 64-bit;
no reduction ever spans a chunk boundary.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .handfeat import FeatureVector, KeypointSet, sift_match
from .protocol import PairList

log = logging.getLogger(__name__)


class DimensionMismatchError(ValueError):
    pass


class ZeroNormError(ValueError):
    pass


class MissingFeatureError(KeyError):
    pass


@dataclass(frozen=True)
class SiftRatioConfig:
    """epsilon guards the ratio denominator when keypoints are absent."""

    epsilon: float = 1.0
    literal_min: bool = False  # historical min(K_a, K_b, epsilon) denominator

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class ScoreMeta:
    descriptor: str
    partition: str
    pair_counts: tuple[int, int]


@dataclass(frozen=True)
class ScoreSet:
    genuine: np.ndarray  # float64
    impostor: np.ndarray  # float64
    meta: ScoreMeta


def cosine(v1: FeatureVector, v2: FeatureVector) -> float:
    """Cosine similarity dot(v1,v2) / (|v1||v2|), accumulated in 64-bit."""
    a = np.asarray(v1.values, dtype=np.float64)
    b = np.asarray(v2.values, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{v1.sample_id}: {a.shape} vs {v2.sample_id}: {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError(
            f"zero feature vector: {v1.sample_id if na == 0.0 else v2.sample_id}"
        )
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def sift_ratio(stats, cfg: SiftRatioConfig = SiftRatioConfig()) -> float:
    """Match-count ratio M / max(min(K_a, K_b), epsilon).

    The guarded denominator realizes the stated purpose of epsilon (no
    division by zero for keypoint-free images). literal_min selects the
    formula as printed, min(K_a, K_b, epsilon), which caps the denominator
    at epsilon instead.
    """
    smaller = min(stats.k_a, stats.k_b)
    if cfg.literal_min:
        return stats.m / min(smaller, cfg.epsilon)
    return stats.m / max(smaller, cfg.epsilon)


def _feature_matrix(features, pairs: PairList) -> np.ndarray:
    if isinstance(features, dict):
        table = features
    else:
        table = {fv.sample_id: fv.values for fv in features}
    rows = []
    dim = None
    for sid in pairs.sample_ids:
        if sid not in table:
            raise MissingFeatureError(sid)
        row = np.asarray(table[sid], dtype=np.float32).ravel()
        if dim is None:
            dim = row.size
        elif row.size != dim:
            raise DimensionMismatchError(f"{sid}: dim {row.size}, expected {dim}")
        rows.append(row)
    return np.stack(rows) if rows else np.zeros((0, 1), np.float32)


def _cosine_chunk(matrix, norms, idx_a, idx_b, out, start, stop):
    a = matrix[idx_a[start:stop]]
    b = matrix[idx_b[start:stop]]
    dots = np.einsum("ij,ij->i", a, b, dtype=np.float64)
    np.clip(dots / (norms[idx_a[start:stop]] * norms[idx_b[start:stop]]), -1.0, 1.0, out=out[start:stop])


def _cosine_scores(matrix, sample_ids, pair_idx, workers: int, tile: int) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix, dtype=np.float64))
    zero = np.nonzero(norms == 0.0)[0]
    if len(zero):
        raise ZeroNormError(f"zero feature vector: {sample_ids[zero[0]]}")
    idx_a = pair_idx[:, 0].astype(np.intp)
    idx_b = pair_idx[:, 1].astype(np.intp)
    out = np.empty(len(pair_idx), dtype=np.float64)
    # chunk size depends only on the tile budget and dim, never on workers
    chunk = max(1, (tile * tile) // max(matrix.shape[1], 1))
    bounds = range(0, len(pair_idx), chunk)
    if workers <= 1:
        for start in bounds:
            _cosine_chunk(matrix, norms, idx_a, idx_b, out, start, min(start + chunk, len(out)))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(
                    _cosine_chunk, matrix, norms, idx_a, idx_b, out, start, min(start + chunk, len(out))
                )
                for start in bounds
            ]
            for future in futures:
                future.result()
    return out


def score_pairs(
    features,
    pairs: PairList,
    workers: int = 1,
    tile: int = 4096,
    ratio_cfg: SiftRatioConfig = SiftRatioConfig(),
    descriptor: str = "",
    partition: str = "",
) -> ScoreSet:
    """Score every pair of a PairList, genuine block then impostor block.

    features is either sample_id -> vector (or FeatureVector list) for
    cosine scoring, or sample_id -> KeypointSet for match-ratio scoring.
    Scores are ordered exactly as the PairList; output is bit-identical
    for any worker count.
    """
    started = time.monotonic()
    g = len(pairs.genuine_idx)
    values = list(features.values()) if isinstance(features, dict) else list(features)
    keypoint_mode = any(isinstance(v, KeypointSet) for v in values)
    all_idx = np.concatenate([pairs.genuine_idx, pairs.impostor_idx]).reshape(-1, 2)
    if keypoint_mode:
        scores = _ratio_scores(features, pairs, all_idx, workers, ratio_cfg)
    else:
        matrix = _feature_matrix(features, pairs)
        scores = _cosine_scores(matrix, pairs.sample_ids, all_idx, workers, tile)
    elapsed = time.monotonic() - started
    if elapsed > 0:
        log.info("scored %d pairs in %.2fs (%.0f pairs/s)", len(scores), elapsed, len(scores) / elapsed)
    meta = ScoreMeta(descriptor=descriptor, partition=partition, pair_counts=pairs.counts)
    return ScoreSet(genuine=scores[:g].copy(), impostor=scores[g:].copy(), meta=meta)


def _ratio_scores(features, pairs, all_idx, workers, cfg) -> np.ndarray:
    table = features if isinstance(features, dict) else {ks.sample_id: ks for ks in features}
    sets = []
    for sid in pairs.sample_ids:
        if sid not in table:
            raise MissingFeatureError(sid)
        sets.append(table[sid])
    out = np.empty(len(all_idx), dtype=np.float64)

    def run(start, stop):
        for k in range(start, stop):
            a, b = all_idx[k]
            out[k] = sift_ratio(sift_match(sets[a], sets[b]), cfg)

    chunk = 1024
    bounds = [(s, min(s + chunk, len(out))) for s in range(0, len(out), chunk)]
    if workers <= 1:
        for start, stop in bounds:
            run(start, stop)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for future in [pool.submit(run, s, e) for s, e in bounds]:
                future.result()
    return out


def score_pairs_naive(features, pairs: PairList, ratio_cfg: SiftRatioConfig = SiftRatioConfig()) -> ScoreSet:
    """Reference scorer: plain per-pair loop, no blocking, no threads."""
    if isinstance(features, dict):
        table = features
    else:
        table = {fv.sample_id: fv for fv in features}
    keypoint_mode = any(isinstance(v, KeypointSet) for v in table.values())

    def one(sid_a, sid_b):
        if sid_a not in table:
            raise MissingFeatureError(sid_a)
        if sid_b not in table:
            raise MissingFeatureError(sid_b)
        a, b = table[sid_a], table[sid_b]
        if keypoint_mode:
            return sift_ratio(sift_match(a, b), ratio_cfg)
        fa = a if isinstance(a, FeatureVector) else FeatureVector(sid_a, np.asarray(a, np.float32), "")
        fb = b if isinstance(b, FeatureVector) else FeatureVector(sid_b, np.asarray(b, np.float32), "")
        return cosine(fa, fb)

    genuine = np.array([one(x, y) for x, y in pairs.genuine], dtype=np.float64)
    impostor = np.array([one(x, y) for x, y in pairs.impostor], dtype=np.float64)
    meta = ScoreMeta(descriptor="", partition="", pair_counts=pairs.counts)
    return ScoreSet(genuine=genuine, impostor=impostor, meta=meta)


def write_scores(scores: ScoreSet, path) -> None:
    """ScoreSet file: JSON header line {meta, genuine_count, impostor_count},
    then the genuine scores and the impostor scores as little-endian f32."""
    header = {
        "meta": {
            "descriptor": scores.meta.descriptor,
            "partition": scores.meta.partition,
            "pair_counts": list(scores.meta.pair_counts),
        },
        "genuine_count": len(scores.genuine),
        "impostor_count": len(scores.impostor),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        fh.write(np.asarray(scores.genuine, dtype="<f4").tobytes())
        fh.write(np.asarray(scores.impostor, dtype="<f4").tobytes())


def read_scores(path) -> ScoreSet:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        payload = fh.read()
    g, i = header["genuine_count"], header["impostor_count"]
    if len(payload) != (g + i) * 4:
        raise ValueError(f"{path}: expected {(g + i) * 4} payload bytes, found {len(payload)}")
    scores = np.frombuffer(payload, dtype="<f4")
    meta = ScoreMeta(
        descriptor=header["meta"]["descriptor"],
        partition=header["meta"]["partition"],
        pair_counts=tuple(header["meta"]["pair_counts"]),
    )
    return ScoreSet(
        genuine=scores[:g].astype(np.float64),
        impostor=scores[g:].astype(np.float64),
        meta=meta,
    )
