"""Export entry points: build a model, write graph plus manifest.

Exports are deterministic: the graph serialization is canonical, the
manifest is indented JSON with sorted keys, and randomly initialized
weights come from a fixed seed in the spec, so the same spec always
produces byte-identical artifacts.  The manifest carries a
content hash of the shipped weights so downstream tooling can detect
weight drift without parsing the graph.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .convert import DEFAULT_TAP_POLICY, TapRecord, convert_model
from .graphfile import GraphFile

ARCHITECTURES = (
    "ResNet101V2",
    "DenseNet121",
    "VGG19",
    "InceptionV3",
    "MobileNetV2",
    "Xception",
)

WEIGHT_SOURCES = ("random", "pretrained", "file")


class UnsupportedArchitectureError(ValueError):
    """Architecture name not in the export registry."""


@dataclass(frozen=True)
class ExportSpec:
    """Everything that determines one export.

    weights selects the source: "random" initializes from `seed`,
    "pretrained" uses the framework's published weights (needs network
    access), "file" loads `weights_path` into the built architecture.
    The manifest is always written next to the graph as
    `<graph>.manifest.json`.
    """

    architecture: str
    graph_path: str
    weights: str = "random"
    weights_path: str | None = None
    seed: int = 0
    input_side: int = 96
    include_top: bool = False
    opset: int = 13
    tap_policy: tuple[str, ...] = DEFAULT_TAP_POLICY
    model_id: str = ""

    def resolved_model_id(self) -> str:
        return self.model_id or self.architecture.lower()


@dataclass(frozen=True)
class ExportResult:
    graph_path: str
    manifest_path: str
    model_id: str
    tap_count: int
    weights_sha256: str
    records: tuple[TapRecord, ...] = field(repr=False, default=())


def weights_digest(graph: GraphFile) -> str:
    """Content hash over the shipped weights, in graph order."""
    digest = hashlib.sha256()
    for w in graph.weights:
        digest.update(w.name.encode("utf-8"))
        digest.update(repr(w.dims).encode("ascii"))
        digest.update(w.raw)
    return digest.hexdigest()


def manifest_path_for(graph_path) -> str:
    return str(graph_path) + ".manifest.json"


def _manifest_doc(model_id: str, input_shape, records, digest: str) -> dict:
    return {
        "model_id": model_id,
        "input_shape": list(input_shape),
        "layers": [
            {"index": r.index, "name": r.name, "output_shape": list(r.output_shape)}
            for r in records
        ],
        "weights_sha256": digest,
    }


def export_model(model, graph_path, model_id: str = "",
                 tap_policy=DEFAULT_TAP_POLICY) -> ExportResult:
    """Convert an in-memory Keras model and write graph + manifest."""
    model_id = model_id or model.name
    graph, records = convert_model(model, model_id, tap_policy)
    data = graph.serialize()
    graph_path = Path(graph_path)
    graph_path.parent.mkdir(parents=True, exist_ok=True)
    graph_path.write_bytes(data)

    in_shape = tuple(model.inputs[0].shape)
    digest = weights_digest(graph)
    doc = _manifest_doc(model_id, (in_shape[1], in_shape[2], in_shape[3]),
                        records, digest)
    manifest_path = manifest_path_for(graph_path)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ExportResult(
        graph_path=str(graph_path),
        manifest_path=manifest_path,
        model_id=model_id,
        tap_count=len(records),
        weights_sha256=digest,
        records=tuple(records),
    )


def build_model(spec: ExportSpec):
    """Instantiate the architecture named by the spec, seeded."""
    import keras

    registry = {name.lower(): name for name in ARCHITECTURES}
    canonical = registry.get(spec.architecture.lower())
    if canonical is None:
        raise UnsupportedArchitectureError(
            f"architecture {spec.architecture!r} not supported; "
            f"choose one of {', '.join(ARCHITECTURES)}"
        )
    if spec.weights not in WEIGHT_SOURCES:
        raise ValueError(
            f"weights must be one of {WEIGHT_SOURCES}, got {spec.weights!r}"
        )
    if spec.weights == "file" and not spec.weights_path:
        raise ValueError("weights='file' needs weights_path")
    if spec.opset != 13:
        raise ValueError(f"only opset 13 is supported, got {spec.opset}")

    keras.utils.set_random_seed(spec.seed)
    ctor = getattr(keras.applications, canonical)
    weights = "imagenet" if spec.weights == "pretrained" else None
    model = ctor(
        include_top=spec.include_top,
        weights=weights,
        input_shape=(spec.input_side, spec.input_side, 3),
    )
    if spec.weights == "file":
        model.load_weights(spec.weights_path)
    return model


def export(spec: ExportSpec) -> ExportResult:
    """Build the spec's model and export it to the spec's paths."""
    model = build_model(spec)
    return export_model(model, spec.graph_path, spec.resolved_model_id(),
                        spec.tap_policy)
