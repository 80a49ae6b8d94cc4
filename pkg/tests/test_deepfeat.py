"""Graph loading, tap extraction, and weight randomization."""

from pathlib import Path

import numpy as np
import pytest

from periscope.corpus import NormalizationConfig, NormalizedImage
from periscope.deepfeat import (
    GraphHandle,
    LayerEntry,
    LayerManifest,
    LayerNotFoundError,
    ShapeMismatchError,
    TapRequest,
    extract_tap,
    load_graph,
    manifest_path_for,
    randomize_weights,
    read_manifest,
    relative_depth,
    unflatten,
    write_manifest,
)
from periscope.onnxlite import (
    Attribute,
    Graph,
    MalformedGraphError,
    Model,
    Node,
    TensorData,
    ValueInfo,
    parse_model,
    serialize_model,
)

FIXTURES = Path(__file__).parent / "fixtures"
TOY = FIXTURES / "toy4.onnx"


def make_images(count, side=16, seed=0):
    rng = np.random.default_rng(seed)
    cfg = NormalizationConfig(output_side=side)
    return [
        NormalizedImage(f"s{k:03d}", rng.integers(0, 256, size=(side, side), dtype=np.uint8).astype(np.uint8), cfg)
        for k in range(count)
    ]


def test_toy_graph_manifest():
    handle, manifest = load_graph(TOY)
    assert manifest.model_id == "toy4"
    assert manifest.input_shape == (16, 16, 3)
    assert manifest.total_layers == 4
    assert [e.name for e in manifest.layers] == ["conv0", "act0", "pool0", "dense0"]
    assert [e.index for e in manifest.layers] == [1, 2, 3, 4]
    assert manifest.layers[0].output_shape == (16, 16, 4)
    assert manifest.layers[2].output_shape == (8, 8, 4)
    assert manifest.layers[3].output_shape == (10,)
    assert manifest.layers[1].tensor == "tap/2/act0"
    assert handle.input_name == "input"


def test_manifest_sidecar_agrees_with_derived():
    _, derived = load_graph(TOY)
    sidecar = read_manifest(manifest_path_for(TOY))
    assert sidecar == derived


def test_manifest_json_roundtrip(tmp_path):
    _, manifest = load_graph(TOY)
    path = tmp_path / "m.json"
    write_manifest(manifest, path)
    assert read_manifest(path) == manifest


def test_corrupted_graph_rejected(tmp_path):
    blob = TOY.read_bytes()
    bad = tmp_path / "bad.onnx"
    bad.write_bytes(blob[: len(blob) // 3])
    with pytest.raises(MalformedGraphError):
        load_graph(bad)


def test_graph_without_taps_rejected(tmp_path):
    node = Node("Relu", ["input"], ["out"])
    graph = Graph(
        name="plain",
        nodes=[node],
        inputs=[ValueInfo("input", shape=("N", 3, 4, 4))],
        outputs=[ValueInfo("out", shape=("N", 3, 4, 4))],
    )
    path = tmp_path / "plain.onnx"
    path.write_bytes(serialize_model(Model(graph)))
    with pytest.raises(MalformedGraphError):
        load_graph(path)


def test_tap_vector_lengths():
    handle, manifest = load_graph(TOY)
    images = make_images(2)
    vecs = extract_tap(handle, TapRequest("toy4", 1, images))
    assert len(vecs) == 2
    assert all(v.values.shape == (16 * 16 * 4,) for v in vecs)
    assert [v.sample_id for v in vecs] == ["s000", "s001"]
    assert vecs[0].source == "tap:1"
    dense = extract_tap(handle, TapRequest("toy4", "dense0", images))
    assert all(v.values.shape == (10,) for v in dense)


def test_final_tap_equals_full_forward():
    handle, manifest = load_graph(TOY)
    images = make_images(3, seed=5)
    vecs = extract_tap(handle, TapRequest("toy4", 4, images))
    feed = np.stack(
        [np.repeat(img.pixels.astype(np.float32)[None] / 255.0, 3, axis=0) for img in images]
    )
    full = handle.executor.run({"input": feed}, ["tap/4/dense0"])["tap/4/dense0"]
    for k, vec in enumerate(vecs):
        assert np.max(np.abs(vec.values - full[k])) == 0.0


def test_truncated_taps_match_instrumented_full_run():
    handle, manifest = load_graph(TOY)
    images = make_images(4, seed=6)
    feed = np.stack(
        [np.repeat(img.pixels.astype(np.float32)[None] / 255.0, 3, axis=0) for img in images]
    )
    tensors = [e.tensor for e in manifest.layers]
    full = handle.executor.run({"input": feed}, tensors)
    for entry in manifest.layers:
        vecs = extract_tap(handle, TapRequest("toy4", entry.index, images))
        act = full[entry.tensor]
        if act.ndim == 4:
            act = np.transpose(act, (0, 2, 3, 1))
        flat = act.reshape(act.shape[0], -1)
        worst = max(np.max(np.abs(v.values - flat[k])) for k, v in enumerate(vecs))
        assert worst <= 1e-5


def test_batch_invariance():
    handle, _ = load_graph(TOY)
    images = make_images(7, seed=7)
    batched = extract_tap(handle, TapRequest("toy4", 2, images), batch_size=4)
    for k in (0, 3, 6):
        alone = extract_tap(handle, TapRequest("toy4", 2, [images[k]]))
        assert np.max(np.abs(alone[0].values - batched[k].values)) <= 1e-5


def test_flatten_is_channel_last_bijection():
    handle, manifest = load_graph(TOY)
    images = make_images(1, seed=8)
    entry = manifest.layer(3)
    vec = extract_tap(handle, TapRequest("toy4", 3, images))[0]
    assert vec.values.shape[0] == int(np.prod(entry.output_shape))
    feed = np.repeat(images[0].pixels.astype(np.float32)[None, None] / 255.0, 3, axis=1)
    act = handle.executor.run({"input": feed}, [entry.tensor])[entry.tensor][0]  # (C, H, W)
    rebuilt = unflatten(vec, entry.output_shape)  # (H, W, C)
    assert rebuilt.shape == entry.output_shape
    h, w, c = entry.output_shape
    for hh, ww, cc in [(0, 0, 0), (1, 5, 2), (h - 1, w - 1, c - 1)]:
        assert rebuilt[hh, ww, cc] == act[cc, hh, ww]
        assert vec.values[(hh * w + ww) * c + cc] == act[cc, hh, ww]


def test_errors_for_bad_requests():
    handle, manifest = load_graph(TOY)
    images = make_images(1)
    with pytest.raises(LayerNotFoundError):
        extract_tap(handle, TapRequest("toy4", 9, images))
    with pytest.raises(LayerNotFoundError):
        manifest.layer("nope")
    with pytest.raises(ValueError):
        extract_tap(handle, TapRequest("other-model", 1, images))
    wrong = make_images(1, side=8)
    with pytest.raises(ShapeMismatchError):
        extract_tap(handle, TapRequest("toy4", 1, wrong))


def test_relative_depth_values():
    def dummy(total):
        return LayerManifest(
            "m", (4, 4, 3), tuple(LayerEntry(k, f"l{k}", (1,)) for k in range(1, total + 1))
        )

    assert round(relative_depth(195, dummy(379)), 4) == 0.5145
    assert relative_depth(26, dummy(26)) == 1.0
    assert round(relative_depth(1, dummy(26)), 4) == 0.0385
    with pytest.raises(LayerNotFoundError):
        relative_depth(0, dummy(26))


def test_randomize_is_seed_deterministic(tmp_path):
    a = tmp_path / "a.onnx"
    b = tmp_path / "b.onnx"
    randomize_weights(TOY, a, seed=42)
    randomize_weights(TOY, b, seed=42)
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.onnx"
    randomize_weights(TOY, c, seed=43)
    assert a.read_bytes() != c.read_bytes()


def test_randomize_preserves_topology_and_manifest(tmp_path):
    out = tmp_path / "r.onnx"
    manifest = randomize_weights(TOY, out, seed=1)
    _, original = load_graph(TOY)
    _, reloaded = load_graph(out)
    assert manifest == original == reloaded
    before = parse_model(TOY.read_bytes())
    after = parse_model(out.read_bytes())
    assert [n.name for n in before.graph.nodes] == [n.name for n in after.graph.nodes]
    assert [n.inputs for n in before.graph.nodes] == [n.inputs for n in after.graph.nodes]
    for t0, t1 in zip(before.graph.initializers, after.graph.initializers):
        assert t0.name == t1.name and t0.dims == t1.dims


def test_randomize_changes_first_parametric_layer(tmp_path):
    out = tmp_path / "r.onnx"
    randomize_weights(TOY, out, seed=9)
    h0, _ = load_graph(TOY)
    h1, _ = load_graph(out)
    images = make_images(1, seed=3)
    v0 = extract_tap(h0, TapRequest("toy4", 1, images))[0].values
    v1 = extract_tap(h1, TapRequest("toy4", 1, images))[0].values
    assert np.max(np.abs(v0 - v1)) > 0.0
    after = parse_model(out.read_bytes())
    weights = {t.name: t.to_array() for t in after.graph.initializers}
    assert np.array_equal(weights["b0"], np.zeros(4, dtype=np.float32))
    assert np.array_equal(weights["b1"], np.zeros(10, dtype=np.float32))
    limit = np.sqrt(6.0 / (3 * 9 + 4 * 9))
    assert np.max(np.abs(weights["w0"])) <= limit


def test_randomize_handles_norm_layers(tmp_path):
    rng = np.random.default_rng(2)
    w = rng.normal(size=(2, 1, 1, 1)).astype(np.float32)
    bn = [rng.normal(size=2).astype(np.float32) for _ in range(4)]
    bn[3] = np.abs(bn[3]) + 0.5
    nodes = [
        Node("Conv", ["input", "w", ""], ["tap/1/c"], name="c",
             attributes={"kernel_shape": Attribute.of("kernel_shape", [1, 1])}),
        Node("BatchNormalization", ["tap/1/c", "g", "b", "m", "v"], ["tap/2/bn"], name="bn"),
    ]
    graph = Graph(
        name="bn",
        nodes=nodes,
        inputs=[ValueInfo("input", shape=("N", 1, 4, 4))],
        outputs=[ValueInfo("tap/1/c", shape=("N", 2, 4, 4)), ValueInfo("tap/2/bn", shape=("N", 2, 4, 4))],
        initializers=[
            TensorData.from_array("w", w),
            TensorData.from_array("g", bn[0]),
            TensorData.from_array("b", bn[1]),
            TensorData.from_array("m", bn[2]),
            TensorData.from_array("v", bn[3]),
        ],
    )
    src = tmp_path / "bn.onnx"
    src.write_bytes(serialize_model(Model(graph, metadata={"model_id": "bn"})))
    out = tmp_path / "bn_r.onnx"
    randomize_weights(src, out, seed=0)
    after = {t.name: t.to_array() for t in parse_model(out.read_bytes()).graph.initializers}
    assert np.array_equal(after["g"], np.ones(2, dtype=np.float32))
    assert np.array_equal(after["v"], np.ones(2, dtype=np.float32))
    assert np.array_equal(after["b"], np.zeros(2, dtype=np.float32))
    assert np.array_equal(after["m"], np.zeros(2, dtype=np.float32))
    assert not np.array_equal(after["w"], w)


def test_input_channel_replication():
    handle, _ = load_graph(TOY)
    img = make_images(1, seed=11)[0]
    from periscope.deepfeat import _prep_batch

    feed = _prep_batch([img], handle.manifest.input_shape)
    assert feed.shape == (1, 3, 16, 16)
    assert np.array_equal(feed[0, 0], feed[0, 1])
    assert np.array_equal(feed[0, 1], feed[0, 2])
    assert np.max(np.abs(feed[0, 0] - img.pixels / 255.0)) < 1e-7
