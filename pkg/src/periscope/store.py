"""Binary artifact stores shared by the feature extractors.

Every store is a single file: one UTF-8 JSON header line, then raw
little-endian payload. Row order follows the header's sample-id table,
so files are byte-reproducible whenever their inputs are.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serializable config."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_header(fh, header: dict) -> None:
    fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")


def _read_header(fh) -> dict:
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise ValueError("missing or truncated store header")
    return json.loads(line)


def write_features(path, sample_ids, matrix, source: str, cfg_hash: str) -> None:
    """Feature store: header {dim, count, source, config_hash, sample_ids},
    then count rows of dim little-endian float32 values."""
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[0] != len(sample_ids):
        raise ValueError("matrix must be (n_samples, dim)")
    header = {
        "dim": int(matrix.shape[1]),
        "count": int(matrix.shape[0]),
        "source": source,
        "config_hash": cfg_hash,
        "sample_ids": list(sample_ids),
    }
    with open(path, "wb") as fh:
        _write_header(fh, header)
        fh.write(matrix.tobytes())


def read_features(path) -> tuple[list[str], np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = _read_header(fh)
        payload = fh.read()
    n, dim = header["count"], header["dim"]
    expected = n * dim * 4
    if len(payload) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, dim)
    return list(header["sample_ids"]), matrix, header


def write_keypoints(path, sample_ids, geometries, descriptors) -> None:
    """Keypoint store: header {descriptor_dim, sample_ids}, then per sample
    a little-endian u32 keypoint count followed by, per keypoint, 4 float32
    geometry values (x, y, scale, orientation) and the float32 descriptor."""
    if not len(sample_ids) == len(geometries) == len(descriptors):
        raise ValueError("parallel lists required")
    dim = 128 if not descriptors else int(np.shape(descriptors[0])[-1] or 128)
    for desc in descriptors:
        if len(desc) and np.shape(desc)[-1] != dim:
            raise ValueError("inconsistent descriptor dims")
    header = {"descriptor_dim": dim, "sample_ids": list(sample_ids)}
    with open(path, "wb") as fh:
        _write_header(fh, header)
        for geom, desc in zip(geometries, descriptors):
            geom = np.ascontiguousarray(geom, dtype="<f4").reshape(-1, 4)
            desc = np.ascontiguousarray(desc, dtype="<f4").reshape(-1, dim)
            if len(geom) != len(desc):
                raise ValueError("geometry/descriptor count mismatch")
            fh.write(np.array([len(geom)], dtype="<u4").tobytes())
            if len(geom):
                fh.write(np.hstack([geom, desc]).astype("<f4").tobytes())


def read_keypoints(path) -> tuple[list[str], list[np.ndarray], list[np.ndarray]]:
    with open(path, "rb") as fh:
        header = _read_header(fh)
        payload = fh.read()
    dim = header["descriptor_dim"]
    sample_ids = list(header["sample_ids"])
    geometries, descriptors = [], []
    offset = 0
    for sid in sample_ids:
        if offset + 4 > len(payload):
            raise ValueError(f"{path}: truncated before record of {sid}")
        count = int(np.frombuffer(payload, dtype="<u4", count=1, offset=offset)[0])
        offset += 4
        row = 4 + dim
        block = np.frombuffer(payload, dtype="<f4", count=count * row, offset=offset)
        offset += count * row * 4
        block = block.reshape(count, row)
        geometries.append(block[:, :4].copy())
        descriptors.append(block[:, 4:].copy())
    if offset != len(payload):
        raise ValueError(f"{path}: {len(payload) - offset} trailing bytes")
    return sample_ids, geometries, descriptors
