"""Deep-representation extraction from portable computation graphs.

A graph file carries its tappable layers as extra graph outputs named
``tap/<index>/<name>`` with static shapes, plus a JSON manifest sidecar.
Activations are tapped by truncated execution and flattened to one
feature vector per image; weights can be re-randomized in place of
training.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import NormalizedImage
from .handfeat import FeatureVector
from .onnxlite import GraphExecutor, MalformedGraphError, Model, TensorData, parse_model, serialize_model

TAP_PATTERN = re.compile(r"^tap/(\d+)/(.+)$")


class LayerNotFoundError(KeyError):
    pass


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class LayerEntry:
    """One tappable layer: 1-based index, human name, per-sample
    channel-last activation shape."""

    index: int
    name: str
    output_shape: tuple[int, ...]

    @property
    def tensor(self) -> str:
        return f"tap/{self.index}/{self.name}"

    @property
    def flat_length(self) -> int:
        return int(np.prod(self.output_shape, dtype=np.int64))


@dataclass(frozen=True)
class LayerManifest:
    model_id: str
    input_shape: tuple[int, int, int]  # height, width, channels
    layers: tuple[LayerEntry, ...]

    def __post_init__(self):
        indices = [e.index for e in self.layers]
        if indices != list(range(1, len(indices) + 1)):
            raise MalformedGraphError(f"layer indices not contiguous from 1: {indices}")

    @property
    def total_layers(self) -> int:
        return len(self.layers)

    def layer(self, key) -> LayerEntry:
        """Resolve a layer by 1-based index, human name, or tap tensor name."""
        if isinstance(key, (int, np.integer)):
            if 1 <= key <= len(self.layers):
                return self.layers[key - 1]
            raise LayerNotFoundError(f"layer index {key} not in 1..{len(self.layers)}")
        for entry in self.layers:
            if key in (entry.name, entry.tensor):
                return entry
        raise LayerNotFoundError(f"layer {key!r} not in manifest")


@dataclass(frozen=True)
class TapRequest:
    model_id: str
    layer: int | str
    batch: list[NormalizedImage]


@dataclass(frozen=True)
class GraphHandle:
    """Read-only loaded graph; safe to share across worker threads."""

    executor: GraphExecutor
    input_name: str
    manifest: LayerManifest


def _channel_last(dims) -> tuple[int, ...]:
    """Per-sample shape of a graph tensor: drop batch, move C after H, W."""
    tail = tuple(dims[1:])
    if any(not isinstance(d, (int, np.integer)) for d in tail):
        raise MalformedGraphError(f"tap shape has non-static dims: {dims}")
    if len(tail) == 3:
        c, h, w = tail
        return (int(h), int(w), int(c))
    return tuple(int(d) for d in tail)


def _derive_manifest(model: Model) -> tuple[str, LayerManifest]:
    graph = model.graph
    weights = {t.name for t in graph.initializers}
    feeds = [v for v in graph.inputs if v.name not in weights]
    if len(feeds) != 1:
        raise MalformedGraphError(f"expected exactly one graph input, found {len(feeds)}")
    feed = feeds[0]
    if len(feed.shape) != 4:
        raise MalformedGraphError(f"graph input must be rank 4, got shape {feed.shape}")
    height, width, channels = _channel_last(feed.shape)

    tapped = []
    for info in graph.outputs:
        match = TAP_PATTERN.match(info.name)
        if not match:
            continue
        tapped.append(LayerEntry(int(match.group(1)), match.group(2), _channel_last(info.shape)))
    if not tapped:
        raise MalformedGraphError("graph declares no tap/<index>/<name> outputs")
    tapped.sort(key=lambda e: e.index)
    model_id = model.metadata.get("model_id") or graph.name or "graph"
    manifest = LayerManifest(model_id, (height, width, channels), tuple(tapped))
    return feed.name, manifest


def load_graph(path) -> tuple[GraphHandle, LayerManifest]:
    data = Path(path).read_bytes()
    model = parse_model(data)
    input_name, manifest = _derive_manifest(model)
    handle = GraphHandle(GraphExecutor(model), input_name, manifest)
    return handle, manifest


def _prep_batch(images, input_shape) -> np.ndarray:
    height, width, channels = input_shape
    planes = []
    for img in images:
        pixels = img.pixels
        if pixels.shape != (height, width):
            raise ShapeMismatchError(
                f"sample {img.sample_id}: image is {pixels.shape}, graph wants {(height, width)}"
            )
        plane = pixels.astype(np.float32) / 255.0
        planes.append(np.repeat(plane[None, :, :], channels, axis=0))
    return np.stack(planes)


def extract_tap(handle: GraphHandle, req: TapRequest, batch_size: int = 16) -> list[FeatureVector]:
    """Truncated forward pass to one layer, flattened channel-last.

    The returned vectors enumerate the (H, W, C) activation in row-major
    order with channels fastest; unflatten() is the inverse.
    """
    if req.model_id != handle.manifest.model_id:
        raise ValueError(f"request for {req.model_id!r} against graph {handle.manifest.model_id!r}")
    entry = handle.manifest.layer(req.layer)
    out: list[FeatureVector] = []
    for start in range(0, len(req.batch), batch_size):
        chunk = req.batch[start : start + batch_size]
        feed = _prep_batch(chunk, handle.manifest.input_shape)
        act = handle.executor.run({handle.input_name: feed}, [entry.tensor])[entry.tensor]
        if act.ndim == 4:
            act = np.transpose(act, (0, 2, 3, 1))
        flat = np.ascontiguousarray(act.reshape(act.shape[0], -1), dtype=np.float32)
        if flat.shape[1] != entry.flat_length:
            raise ShapeMismatchError(
                f"tap {entry.tensor}: got {flat.shape[1]} values, manifest says {entry.flat_length}"
            )
        for img, row in zip(chunk, flat):
            out.append(FeatureVector(img.sample_id, row, f"tap:{entry.index}"))
    return out


def unflatten(vector: FeatureVector | np.ndarray, output_shape) -> np.ndarray:
    """Rebuild the channel-last activation tensor a tap vector came from."""
    values = vector.values if isinstance(vector, FeatureVector) else np.asarray(vector)
    return values.reshape(tuple(output_shape))


def relative_depth(layer_index: int, manifest: LayerManifest) -> float:
    manifest.layer(layer_index)
    return layer_index / manifest.total_layers


def _glorot(rng, shape, fan_in, fan_out) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def _redraw(rng, tensor: TensorData, node, slot) -> np.ndarray | None:
    """New value for a learned parameter, or None to keep it."""
    arr = tensor.to_array()
    op = node.op_type
    if op == "Conv":
        if slot == 1:
            rf = int(np.prod(arr.shape[2:], dtype=np.int64))
            return _glorot(rng, arr.shape, arr.shape[1] * rf, arr.shape[0] * rf)
        if slot == 2:
            return np.zeros_like(arr)
    elif op in ("Gemm", "MatMul"):
        if slot == 1 and arr.ndim == 2:
            trans_b = int(node.attr("transB", 0)) if op == "Gemm" else 0
            fan_out, fan_in = arr.shape if trans_b else arr.shape[::-1]
            return _glorot(rng, arr.shape, fan_in, fan_out)
        if slot == 2 and op == "Gemm":
            return np.zeros_like(arr)
    elif op == "BatchNormalization":
        if slot in (1, 4):  # scale, running variance
            return np.ones_like(arr)
        if slot in (2, 3):  # shift, running mean
            return np.zeros_like(arr)
    return None


def randomize_weights(path_in, path_out, seed: int) -> LayerManifest:
    """Re-draw learned parameters (training-free baseline), keeping the
    topology, names, and shapes untouched; deterministic in seed."""
    model = parse_model(Path(path_in).read_bytes())
    consumers: dict[str, tuple] = {}
    for node in model.graph.nodes:
        for slot, name in enumerate(node.inputs):
            consumers.setdefault(name, (node, slot))
    rng = np.random.default_rng(seed)
    fresh = []
    for tensor in model.graph.initializers:
        hit = consumers.get(tensor.name)
        redrawn = _redraw(rng, tensor, *hit) if hit else None
        if redrawn is None:
            fresh.append(tensor)
        else:
            fresh.append(TensorData.from_array(tensor.name, redrawn))
    model.graph.initializers[:] = fresh
    Path(path_out).write_bytes(serialize_model(model))
    _, manifest = _derive_manifest(model)
    return manifest


def manifest_path_for(graph_path) -> Path:
    return Path(str(graph_path) + ".manifest.json")


def write_manifest(manifest: LayerManifest, path) -> None:
    doc = {
        "model_id": manifest.model_id,
        "input_shape": list(manifest.input_shape),
        "layers": [
            {"index": e.index, "name": e.name, "output_shape": list(e.output_shape)}
            for e in manifest.layers
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_manifest(path) -> LayerManifest:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    layers = tuple(
        LayerEntry(int(e["index"]), e["name"], tuple(int(d) for d in e["output_shape"]))
        for e in doc["layers"]
    )
    return LayerManifest(doc["model_id"], tuple(doc["input_shape"]), layers)
