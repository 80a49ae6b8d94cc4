"""Generate the committed toy graph fixture (conv -> relu -> pool -> dense).

Writes tests/fixtures/toy4.onnx and its manifest sidecar. Deterministic:
rerunning reproduces the files byte for byte.
"""

from pathlib import Path

import numpy as np

from periscope.deepfeat import load_graph, manifest_path_for, write_manifest
from periscope.onnxlite import Attribute, Graph, Model, Node, TensorData, ValueInfo, serialize_model


def build_model() -> Model:
    rng = np.random.default_rng(20240601)
    w0 = (rng.normal(size=(4, 3, 3, 3)) * 0.2).astype(np.float32)
    b0 = (rng.normal(size=4) * 0.1).astype(np.float32)
    w1 = (rng.normal(size=(10, 256)) * 0.05).astype(np.float32)
    b1 = (rng.normal(size=10) * 0.1).astype(np.float32)

    def attrs(**kv):
        return {k: Attribute.of(k, v) for k, v in kv.items()}

    nodes = [
        Node("Conv", ["input", "w0", "b0"], ["tap/1/conv0"], name="conv0",
             attributes=attrs(kernel_shape=[3, 3], strides=[1, 1], pads=[1, 1, 1, 1])),
        Node("Relu", ["tap/1/conv0"], ["tap/2/act0"], name="act0"),
        Node("MaxPool", ["tap/2/act0"], ["tap/3/pool0"], name="pool0",
             attributes=attrs(kernel_shape=[2, 2], strides=[2, 2])),
        Node("Flatten", ["tap/3/pool0"], ["flat0"], name="flat0", attributes=attrs(axis=1)),
        Node("Gemm", ["flat0", "w1", "b1"], ["tap/4/dense0"], name="dense0",
             attributes=attrs(alpha=1.0, beta=1.0, transB=1)),
    ]
    graph = Graph(
        name="toy4",
        nodes=nodes,
        inputs=[ValueInfo("input", shape=("N", 3, 16, 16))],
        outputs=[
            ValueInfo("tap/1/conv0", shape=("N", 4, 16, 16)),
            ValueInfo("tap/2/act0", shape=("N", 4, 16, 16)),
            ValueInfo("tap/3/pool0", shape=("N", 4, 8, 8)),
            ValueInfo("tap/4/dense0", shape=("N", 10)),
        ],
        initializers=[
            TensorData.from_array("w0", w0),
            TensorData.from_array("b0", b0),
            TensorData.from_array("w1", w1),
            TensorData.from_array("b1", b1),
        ],
    )
    return Model(graph, producer_name="toygen", metadata={"model_id": "toy4"})


def main():
    out = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "toy4.onnx"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(serialize_model(build_model()))
    _, manifest = load_graph(out)
    write_manifest(manifest, manifest_path_for(out))
    print(f"wrote {out} ({out.stat().st_size} bytes), {manifest.total_layers} layers")


if __name__ == "__main__":
    main()
