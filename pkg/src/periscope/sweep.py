"""Layer sweeps: EER as a function of tap depth, plus transfer matrices.

Layers are evaluated one at a time; each layer's tap features are staged
to an on-disk cache and removed right after scoring, so peak memory
stays near a single layer's feature matrix regardless of sweep length.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from contextlib import ExitStack
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .deepfeat import GraphHandle, TapRequest, extract_tap, relative_depth
from .handfeat import FeatureVector
from .protocol import PairList
from .simeng import score_pairs
from .store import config_hash, read_features, write_features
from .verimetrics import eer_from_scores


class SweepError(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepRow:
    layer_index: int
    relative_depth: float
    eer: float
    genuine_count: int
    impostor_count: int


@dataclass(frozen=True)
class LayerSweepResult:
    model_id: str
    partition_id: str
    rows: tuple[SweepRow, ...]
    strategy: str = "pretrained"  # report metadata: pretrained | random | finetuned
    protocol: str = ""


@dataclass(frozen=True)
class TransferCell:
    selector: str
    target: str
    layer_index: int
    eer: float


def _by_id(images) -> dict:
    if isinstance(images, dict):
        return images
    return {img.sample_id: img for img in images}


def _resolve_cache(stack: ExitStack, cache_dir) -> Path:
    if cache_dir is None:
        cache_dir = os.environ.get("PERISCOPE_CACHE")
    if cache_dir is None:
        cache_dir = stack.enter_context(tempfile.TemporaryDirectory(prefix="periscope-tap-"))
    path = Path(cache_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _evaluate_layer(
    handle: GraphHandle,
    images_by_id: dict,
    pairs: PairList,
    layer: int,
    partition_id: str,
    workers: int,
    batch_size: int,
    cache_dir: Path,
) -> tuple[float, int, int]:
    model_id = handle.manifest.model_id
    try:
        batch = [images_by_id[sid] for sid in pairs.sample_ids]
    except KeyError as exc:
        raise SweepError(f"layer {layer}: sample {exc.args[0]!r} missing from corpus") from exc
    source = f"tap:{layer}"
    cache_path = cache_dir / f"tap-{config_hash([model_id, partition_id, layer])}.feat"
    try:
        vectors = extract_tap(handle, TapRequest(model_id, layer, batch), batch_size=batch_size)
        matrix = np.stack([v.values for v in vectors])
        del vectors
        write_features(cache_path, list(pairs.sample_ids), matrix, source, config_hash([model_id, layer]))
        del matrix
        ids, staged, _ = read_features(cache_path)
        features = [FeatureVector(sid, row, source) for sid, row in zip(ids, staged)]
        scores = score_pairs(features, pairs, workers=workers, descriptor=source, partition=partition_id)
        result = eer_from_scores(scores.genuine, scores.impostor)
        return float(result.eer), len(scores.genuine), len(scores.impostor)
    except SweepError:
        raise
    except Exception as exc:
        raise SweepError(f"layer {layer}: {exc}") from exc
    finally:
        cache_path.unlink(missing_ok=True)


def _layer_range(handle: GraphHandle, first, last, stride) -> list[int]:
    total = handle.manifest.total_layers
    first = 1 if first is None else int(first)
    last = total if last is None else int(last)
    if not (1 <= first <= last <= total):
        raise ValueError(f"layer range {first}..{last} outside 1..{total}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return list(range(first, last + 1, stride))


def run_sweep(
    handle: GraphHandle,
    images,
    pairs: PairList,
    partition_id: str,
    first: int | None = None,
    last: int | None = None,
    stride: int = 1,
    refine: bool = False,
    workers: int = 1,
    batch_size: int = 16,
    cache_dir=None,
    strategy: str = "pretrained",
    protocol: str = "",
) -> LayerSweepResult:
    """EER per tapped layer over one pair partition, rows in layer order.

    With refine=True a stride>1 pass is followed by a stride-1 pass in
    the window around the coarse winner; all evaluated layers appear in
    the result.
    """
    images_by_id = _by_id(images)
    layers = _layer_range(handle, first, last, stride)
    with ExitStack() as stack:
        cache = _resolve_cache(stack, cache_dir)
        evaluated: dict[int, SweepRow] = {}

        def sweep_over(layer_list):
            for layer in layer_list:
                if layer in evaluated:
                    continue
                value, n_gen, n_imp = _evaluate_layer(
                    handle, images_by_id, pairs, layer, partition_id, workers, batch_size, cache
                )
                evaluated[layer] = SweepRow(
                    layer, relative_depth(layer, handle.manifest), value, n_gen, n_imp
                )

        sweep_over(layers)
        if refine and stride > 1:
            incumbent = min(evaluated.values(), key=lambda r: (r.eer, r.layer_index))
            lo = max(layers[0], incumbent.layer_index - stride + 1)
            hi = min(layers[-1], incumbent.layer_index + stride - 1)
            sweep_over(range(lo, hi + 1))
    rows = tuple(evaluated[k] for k in sorted(evaluated))
    return LayerSweepResult(handle.manifest.model_id, partition_id, rows, strategy, protocol)


def best_layer(result: LayerSweepResult) -> tuple[int, float]:
    """Argmin of EER over the sweep; ties go to the shallower layer."""
    if not result.rows:
        raise ValueError("sweep has no rows")
    row = min(result.rows, key=lambda r: (r.eer, r.layer_index))
    return row.layer_index, row.eer


def transfer_matrix(
    sweeps: dict[str, LayerSweepResult],
    targets: dict[str, tuple],
    handle: GraphHandle,
    workers: int = 1,
    batch_size: int = 16,
    cache_dir=None,
) -> list[TransferCell]:
    """Evaluate every target partition at every selector's best layer.

    targets maps partition id to (images, pairs). Cells are ordered
    selector-major in the given mapping order.
    """
    if not sweeps:
        raise ValueError("no selector sweeps given")
    if not targets:
        raise ValueError("no target partitions given")
    cells = []
    with ExitStack() as stack:
        cache = _resolve_cache(stack, cache_dir)
        for selector, sweep in sweeps.items():
            layer, _ = best_layer(sweep)
            for target, (images, pairs) in targets.items():
                value, _, _ = _evaluate_layer(
                    handle, _by_id(images), pairs, layer, target, workers, batch_size, cache
                )
                cells.append(TransferCell(selector, target, layer, value))
    return cells


def read_report(path) -> tuple[list[LayerSweepResult], list[TransferCell]]:
    """Load a report JSON back into sweep results and transfer cells."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    sweeps = [
        LayerSweepResult(
            entry["model_id"],
            entry["partition"],
            tuple(
                SweepRow(
                    row["layer_index"], row["relative_depth"], row["eer"],
                    row["genuine_count"], row["impostor_count"],
                )
                for row in entry["rows"]
            ),
            entry["strategy"],
            entry["protocol"],
        )
        for entry in doc.get("sweeps", [])
    ]
    cells = [
        TransferCell(entry["selector"], entry["target"], entry["layer_index"], entry["eer"])
        for entry in doc.get("transfers", [])
    ]
    return sweeps, cells


def _percent(value: float) -> str:
    return f"{100.0 * value:.2f}"


def _sweep_doc(result: LayerSweepResult) -> dict:
    layer, value = best_layer(result)
    return {
        "model_id": result.model_id,
        "strategy": result.strategy,
        "partition": result.partition_id,
        "protocol": result.protocol,
        "best": {"layer_index": layer, "eer": value, "eer_percent": _percent(value)},
        "rows": [
            {
                "layer_index": r.layer_index,
                "relative_depth": r.relative_depth,
                "eer": r.eer,
                "eer_percent": _percent(r.eer),
                "genuine_count": r.genuine_count,
                "impostor_count": r.impostor_count,
            }
            for r in result.rows
        ],
    }


def emit_report(results, out_dir, name: str = "report") -> list[Path]:
    """Write sweep/transfer results as one JSON plus CSV table files.

    Accepts a sequence of LayerSweepResult and TransferCell in any mix;
    field order is fixed so identical inputs give identical bytes.
    """
    sweeps = [r for r in results if isinstance(r, LayerSweepResult)]
    cells = [r for r in results if isinstance(r, TransferCell)]
    stray = [r for r in results if not isinstance(r, (LayerSweepResult, TransferCell))]
    if stray:
        raise TypeError(f"cannot report {type(stray[0]).__name__}")
    if not sweeps and not cells:
        raise ValueError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "sweeps": [_sweep_doc(s) for s in sweeps],
        "transfers": [
            {
                "selector": c.selector,
                "target": c.target,
                "layer_index": c.layer_index,
                "eer": c.eer,
                "eer_percent": _percent(c.eer),
            }
            for c in cells
        ],
    }
    written = []
    json_path = out / f"{name}.json"
    json_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    written.append(json_path)
    if sweeps:
        path = out / f"{name}.sweep.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["model_id", "strategy", "partition", "protocol", "layer_index",
                 "relative_depth", "eer_percent", "genuine_count", "impostor_count"]
            )
            for s in sweeps:
                for r in s.rows:
                    writer.writerow(
                        [s.model_id, s.strategy, s.partition_id, s.protocol, r.layer_index,
                         f"{r.relative_depth:.4f}", _percent(r.eer), r.genuine_count, r.impostor_count]
                    )
        written.append(path)
    if cells:
        path = out / f"{name}.transfer.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["selector", "target", "layer_index", "eer_percent"])
            for c in cells:
                writer.writerow([c.selector, c.target, c.layer_index, _percent(c.eer)])
        written.append(path)
    return written
