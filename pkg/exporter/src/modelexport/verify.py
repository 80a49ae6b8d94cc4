"""Fidelity verification of exported graphs against the source model.

The check crosses a process boundary on purpose: reference activations
come from the source framework in this process, while graph-side
activations are produced by the verification host's command line
driving the exported file, exactly as a downstream consumer would.
Nothing here links against the consumer's internals; the exchange
happens through documented file formats only (corpus manifest CSV,
feature store, layer manifest sidecar).

Reference activations travel as a single binary blob: one JSON header
line describing the pinned input batch and the taps it covers, then
the activation rows for each tap as raw float32, concatenated in
header order.
"""

from __future__ import annotations

import json
import struct
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .convert import DEFAULT_TAP_POLICY, tap_layers
from .export import manifest_path_for

VERIFY_TOLERANCE = 1e-4


class VerificationError(RuntimeError):
    """The verification run itself could not be completed."""


class MissingTapError(VerificationError):
    """Reference and manifest disagree about which taps exist."""


@dataclass(frozen=True)
class TapCheck:
    index: int
    name: str
    max_abs_diff: float


@dataclass(frozen=True)
class VerifyReport:
    ok: bool
    tolerance: float
    max_abs_diff: float
    taps: tuple[TapCheck, ...]
    failures: tuple[str, ...]

    def __str__(self) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        lines = [f"{verdict} tolerance={self.tolerance:g} "
                 f"worst={self.max_abs_diff:.3e}"]
        lines += [f"  tap {c.index} {c.name}: {c.max_abs_diff:.3e}"
                  for c in self.taps]
        if self.failures:
            lines.append("  failing taps: " + ", ".join(self.failures))
        return "\n".join(lines)


def pinned_batch(side: int, samples: int, seed: int) -> np.ndarray:
    """The fixed uint8 grayscale batch both sides must agree on."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(samples, side, side), dtype=np.uint8)


# -- reference blob ---------------------------------------------------------


def write_reference(model, path, samples: int = 4, seed: int = 0,
                    tap_policy=DEFAULT_TAP_POLICY, taps=None,
                    model_id: str = "") -> dict:
    """Run the source model on the pinned batch and save tap activations.

    `taps` optionally restricts to a subset of tap indices; default is
    every tap the policy selects.  Returns the written header.
    """
    import keras

    chosen = tap_layers(model, tap_policy)
    if taps is not None:
        wanted = set(int(t) for t in taps)
        chosen = [(i, layer) for i, layer in chosen if i in wanted]
        missing = wanted - {i for i, _ in chosen}
        if missing:
            raise MissingTapError(
                f"requested taps not selected by the policy: {sorted(missing)}"
            )
    in_shape = tuple(model.inputs[0].shape)
    side, channels = in_shape[1], in_shape[3]
    if in_shape[2] != side:
        raise VerificationError("verification needs a square model input")

    gray = pinned_batch(side, samples, seed)
    feed = np.repeat((gray.astype(np.float32) / 255.0)[..., None],
                     channels, axis=3)
    probe = keras.Model(model.inputs, [layer.output for _, layer in chosen])
    outputs = probe.predict(feed, verbose=0)
    if not isinstance(outputs, list):
        outputs = [outputs]

    header = {
        "input": {"samples": int(samples), "seed": int(seed), "side": int(side)},
        "model_id": model_id or model.name,
        "taps": [],
    }
    rows = []
    for (index, layer), act in zip(chosen, outputs):
        flat = np.ascontiguousarray(act, dtype=np.float32).reshape(samples, -1)
        header["taps"].append({
            "count": int(samples),
            "dim": int(flat.shape[1]),
            "index": int(index),
            "name": layer.name,
        })
        rows.append(flat)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for flat in rows:
            fh.write(flat.tobytes())
    return header


def read_reference(path) -> tuple[dict, dict[int, np.ndarray]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blocks: dict[int, np.ndarray] = {}
        for tap in header["taps"]:
            count, dim = tap["count"], tap["dim"]
            raw = fh.read(count * dim * 4)
            if len(raw) != count * dim * 4:
                raise VerificationError(
                    f"reference truncated at tap {tap['index']}"
                )
            blocks[tap["index"]] = np.frombuffer(raw, np.float32).reshape(count, dim)
        if fh.read(1):
            raise VerificationError("trailing bytes after the last tap block")
    return header, blocks


# -- graph side -------------------------------------------------------------


def _write_corpus(workdir: Path, gray: np.ndarray) -> Path:
    """Pinned batch as PNG files plus a corpus manifest CSV."""
    import tensorflow as tf

    images = workdir / "images"
    images.mkdir(parents=True, exist_ok=True)
    lines = ["sample_id,subject_id,eye,session,image_path,"
             "sclera_cx,sclera_cy,sclera_r,orientation,distance_group"]
    for k, img in enumerate(gray):
        name = f"s{k:03d}"
        png = tf.io.encode_png(tf.convert_to_tensor(img[..., None])).numpy()
        path = images / f"{name}.png"
        path.write_bytes(png)
        lines.append(f"{name},ref,left,,{path.resolve()},,,,,")
    manifest = workdir / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def _read_feature_rows(path, expected_ids) -> np.ndarray:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        count, dim = header["count"], header["dim"]
        raw = fh.read(count * dim * 4)
        if len(raw) != count * dim * 4:
            raise VerificationError(f"feature store truncated: {path}")
    rows = np.frombuffer(raw, np.float32).reshape(count, dim)
    order = {sid: i for i, sid in enumerate(header["sample_ids"])}
    try:
        picked = [order[sid] for sid in expected_ids]
    except KeyError as exc:
        raise VerificationError(f"feature store lacks sample {exc}") from exc
    return rows[picked]


def _extract_tap(graph_path, manifest_csv, layer_index: int, out_path) -> None:
    cmd = [
        sys.executable, "-m", "periscope.cli", "extract",
        "--manifest", str(manifest_csv),
        "--descriptor", "tap",
        "--graph", str(graph_path),
        "--layer", str(layer_index),
        "--out", str(out_path),
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        detail = proc.stderr.strip() or proc.stdout.strip()
        raise VerificationError(
            f"tap {layer_index}: graph-side extraction failed: {detail}"
        )


# -- verification -----------------------------------------------------------


def _cross_check(manifest: dict, header: dict, subset_ok: bool) -> None:
    by_index = {entry["index"]: entry for entry in manifest["layers"]}
    for tap in header["taps"]:
        entry = by_index.get(tap["index"])
        if entry is None:
            raise MissingTapError(
                f"tap {tap['index']} ({tap['name']}) missing from the manifest"
            )
        if entry["name"] != tap["name"]:
            raise MissingTapError(
                f"tap {tap['index']}: reference names {tap['name']!r} but "
                f"the manifest names {entry['name']!r}"
            )
        dim = int(np.prod(entry["output_shape"], dtype=np.int64))
        if dim != tap["dim"]:
            raise MissingTapError(
                f"tap {tap['index']} ({tap['name']}): reference dim "
                f"{tap['dim']} vs manifest dim {dim}"
            )
    if not subset_ok:
        covered = {tap["index"] for tap in header["taps"]}
        absent = sorted(set(by_index) - covered)
        if absent:
            raise MissingTapError(
                f"manifest taps missing from the reference: {absent}"
            )


def verify(graph_path, manifest_path, reference_path,
           tolerance: float = VERIFY_TOLERANCE, subset_ok: bool = False,
           workdir=None) -> VerifyReport:
    """Compare graph-side tap activations with the reference blob.

    Every tap in the reference is extracted from the graph through the
    verification host CLI and compared row by row; the report carries
    the worst absolute difference per tap.  With subset_ok the
    reference may cover only some manifest taps, otherwise coverage
    must match exactly in both directions.
    """
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    header, blocks = read_reference(reference_path)
    if manifest["model_id"] != header["model_id"]:
        raise VerificationError(
            f"model_id mismatch: manifest {manifest['model_id']!r} vs "
            f"reference {header['model_id']!r}"
        )
    _cross_check(manifest, header, subset_ok)

    spec = header["input"]
    gray = pinned_batch(spec["side"], spec["samples"], spec["seed"])
    expected_ids = [f"s{k:03d}" for k in range(spec["samples"])]

    own = None
    if workdir is None:
        own = tempfile.TemporaryDirectory(prefix="modelexport-verify-")
        workdir = own.name
    try:
        workdir = Path(workdir)
        manifest_csv = _write_corpus(workdir, gray)
        checks = []
        failures = []
        for tap in header["taps"]:
            feat = workdir / f"tap{tap['index']:04d}.feat"
            _extract_tap(graph_path, manifest_csv, tap["index"], feat)
            got = _read_feature_rows(feat, expected_ids)
            ref = blocks[tap["index"]]
            if got.shape != ref.shape:
                raise VerificationError(
                    f"tap {tap['index']}: graph returned shape {got.shape}, "
                    f"reference has {ref.shape}"
                )
            diff = float(np.max(np.abs(got - ref))) if ref.size else 0.0
            checks.append(TapCheck(tap["index"], tap["name"], diff))
            if diff > tolerance:
                failures.append(tap["name"])
    finally:
        if own is not None:
            own.cleanup()

    worst = max((c.max_abs_diff for c in checks), default=0.0)
    return VerifyReport(
        ok=not failures,
        tolerance=tolerance,
        max_abs_diff=worst,
        taps=tuple(checks),
        failures=tuple(failures),
    )


def verify_export(model, graph_path, samples: int = 4, seed: int = 0,
                  tolerance: float = VERIFY_TOLERANCE,
                  tap_policy=DEFAULT_TAP_POLICY, taps=None,
                  workdir=None) -> VerifyReport:
    """End-to-end check of a fresh export against its source model."""
    manifest_path = manifest_path_for(graph_path)
    with open(manifest_path, encoding="utf-8") as fh:
        model_id = json.load(fh)["model_id"]
    with tempfile.NamedTemporaryFile(prefix="modelexport-ref-",
                                     suffix=".act", delete=False) as fh:
        reference_path = fh.name
    try:
        write_reference(model, reference_path, samples=samples, seed=seed,
                        tap_policy=tap_policy, taps=taps, model_id=model_id)
        return verify(graph_path, manifest_path, reference_path,
                      tolerance=tolerance, subset_ok=taps is not None,
                      workdir=workdir)
    finally:
        Path(reference_path).unlink(missing_ok=True)
