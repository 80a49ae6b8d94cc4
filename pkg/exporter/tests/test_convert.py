"""Conversion decisions on small hand-built models."""

import keras
import numpy as np
import pytest
from keras import layers

from modelexport import (
    ConversionError,
    UnsupportedLayerError,
    convert_model,
    tap_layers,
)
from modelexport.convert import same_pads

from conftest import build_toy


def _attr(node, name):
    for a in node.attrs:
        if a.name == name:
            return a.value
    raise AssertionError(f"node {node.name} has no attribute {name}")


def _node(graph, op, name=None):
    for n in graph.nodes:
        if n.op_type == op and (name is None or n.name == name):
            return n
    raise AssertionError(f"no {op} node" + (f" named {name}" if name else ""))


class TestSamePads:
    def test_unit_stride_odd_kernel_is_symmetric(self):
        assert same_pads((5, 5), (3, 3), (1, 1)) == (1, 1, 1, 1)

    def test_stride_two_puts_excess_bottom_right(self):
        # 96 -> 48 with k=3 needs one extra row/column at the far edge
        assert same_pads((96, 96), (3, 3), (2, 2)) == (0, 0, 1, 1)

    def test_even_kernel(self):
        assert same_pads((5, 5), (2, 2), (2, 2)) == (0, 0, 1, 1)

    def test_dilation_widens_effective_kernel(self):
        assert same_pads((7, 7), (3, 3), (1, 1), (2, 2)) == (2, 2, 2, 2)

    def test_no_padding_when_input_divides(self):
        assert same_pads((8, 8), (2, 2), (2, 2)) == (0, 0, 0, 0)


class TestTapSelection:
    def test_indices_contiguous_in_model_order(self, toy_model):
        picked = tap_layers(toy_model)
        assert [i for i, _ in picked] == [1, 2, 3, 4, 5]
        assert [l.name for _, l in picked] == ["c1", "p1", "c2", "gap", "head"]

    def test_policy_filters_categories(self, toy_model):
        picked = tap_layers(toy_model, ("conv",))
        assert [l.name for _, l in picked] == ["c1", "c2"]
        assert [i for i, _ in picked] == [1, 2]

    def test_unknown_category_rejected(self, toy_model):
        with pytest.raises(ConversionError):
            tap_layers(toy_model, ("conv", "attention"))

    def test_empty_selection_rejected(self, toy_model):
        with pytest.raises(ConversionError):
            tap_layers(toy_model, ("merge",))


class TestConversion:
    def test_fused_activation_becomes_own_node(self, toy_model):
        graph, records = convert_model(toy_model, "toy")
        conv = _node(graph, "Conv", "c1")
        assert conv.outputs == ("c1/pre",)
        relu = [n for n in graph.nodes if n.op_type == "Relu"][0]
        assert relu.inputs == ("c1/pre",)
        assert relu.outputs == ("tap/1/c1",)

    def test_linear_layer_tap_sits_on_its_node(self, toy_model):
        graph, _ = convert_model(toy_model, "toy")
        gemm = _node(graph, "Gemm", "head")
        assert gemm.outputs == ("tap/5/head",)

    def test_records_mirror_output_shapes(self, toy_model):
        _, records = convert_model(toy_model, "toy")
        shapes = {r.name: r.output_shape for r in records}
        assert shapes["c1"] == (24, 24, 6)
        assert shapes["p1"] == (12, 12, 6)
        assert shapes["c2"] == (10, 10, 4)
        assert shapes["gap"] == (4,)
        assert shapes["head"] == (5,)

    def test_graph_outputs_are_channel_first(self, toy_model):
        graph, _ = convert_model(toy_model, "toy")
        decls = {d.name: d.shape for d in graph.outputs}
        assert decls["tap/1/c1"] == ("N", 6, 24, 24)
        assert decls["tap/5/head"] == ("N", 5)
        assert graph.inputs[0].shape == ("N", 3, 24, 24)

    def test_kernel_layout_transposed_once(self, toy_model):
        graph, _ = convert_model(toy_model, "toy")
        weights = {w.name: w for w in graph.weights}
        kernel = toy_model.get_layer("c1").get_weights()[0]
        stored = np.frombuffer(weights["c1/w"].raw, np.float32).reshape(
            weights["c1/w"].dims
        )
        assert weights["c1/w"].dims == (6, 3, 3, 3)
        assert np.array_equal(stored, kernel.transpose(3, 2, 0, 1))

    def test_metadata_carries_model_id(self, toy_model):
        graph, _ = convert_model(toy_model, "custom-id")
        assert graph.metadata == {"model_id": "custom-id"}
        assert graph.name == "custom-id"


class TestDepthwise:
    def test_grouping_and_weight_reshape(self):
        keras.utils.set_random_seed(3)
        x = inp = keras.Input((8, 8, 3))
        x = layers.DepthwiseConv2D(3, padding="same", depth_multiplier=2,
                                   name="dw")(x)
        model = keras.Model(inp, x)
        graph, _ = convert_model(model, "dw")
        conv = _node(graph, "Conv", "dw")
        assert _attr(conv, "group") == 3
        w = [w for w in graph.weights if w.name == "dw/w"][0]
        assert w.dims == (6, 1, 3, 3)
        keras.backend.clear_session()

    def test_separable_becomes_two_convs(self):
        keras.utils.set_random_seed(3)
        x = inp = keras.Input((8, 8, 4))
        x = layers.SeparableConv2D(5, 3, padding="same", name="sep")(x)
        model = keras.Model(inp, x)
        graph, records = convert_model(model, "sep")
        depth = _node(graph, "Conv", "sep/depth")
        point = _node(graph, "Conv", "sep/point")
        assert _attr(depth, "group") == 4
        assert _attr(point, "kernel_shape") == (1, 1)
        assert point.outputs == ("tap/1/sep",)
        assert records[0].output_shape == (8, 8, 5)
        keras.backend.clear_session()


class TestStructuralLayers:
    def test_pad_flatten_dropout_not_tapped(self):
        keras.utils.set_random_seed(3)
        x = inp = keras.Input((8, 8, 2))
        x = layers.ZeroPadding2D(((1, 0), (2, 1)))(x)
        x = layers.Conv2D(3, 3, name="c")(x)
        x = layers.Dropout(0.5)(x)
        x = layers.Flatten()(x)
        x = layers.Dense(4, name="d")(x)
        model = keras.Model(inp, x)
        graph, records = convert_model(model, "pads")
        assert [r.name for r in records] == ["c", "d"]
        pad = _node(graph, "Pad")
        assert _attr(pad, "pads") == (0, 0, 1, 2, 0, 0, 0, 1)
        # channels-last flattening: transpose back before the flatten
        trans = _node(graph, "Transpose")
        assert _attr(trans, "perm") == (0, 2, 3, 1)
        keras.backend.clear_session()

    def test_merge_layers_tap_and_chain(self):
        keras.utils.set_random_seed(3)
        inp = keras.Input((6, 6, 2))
        a = layers.Conv2D(2, 1, name="a")(inp)
        b = layers.Conv2D(2, 1, name="b")(inp)
        c = layers.Conv2D(2, 1, name="c")(inp)
        summed = layers.Add(name="s")([a, b, c])
        cat = layers.Concatenate(name="k")([summed, a])
        model = keras.Model(inp, cat)
        graph, records = convert_model(model, "merge")
        adds = [n for n in graph.nodes if n.op_type == "Add"]
        assert len(adds) == 2
        assert adds[-1].outputs == ("tap/4/s",)
        concat = _node(graph, "Concat")
        assert _attr(concat, "axis") == 1
        assert [r.name for r in records] == ["a", "b", "c", "s", "k"]
        keras.backend.clear_session()


class TestRejections:
    def test_unsupported_layer_class(self):
        x = inp = keras.Input((8, 8, 2))
        x = layers.Conv2D(2, 1)(x)
        x = layers.LeakyReLU(name="bad")(x)
        model = keras.Model(inp, x)
        with pytest.raises(UnsupportedLayerError, match="bad"):
            convert_model(model, "m")
        keras.backend.clear_session()

    def test_leaky_relu_layer_slope_rejected(self):
        x = inp = keras.Input((8, 8, 2))
        x = layers.ReLU(negative_slope=0.3, name="slope")(x)
        model = keras.Model(inp, x)
        with pytest.raises(UnsupportedLayerError, match="slope"):
            convert_model(model, "m")
        keras.backend.clear_session()

    def test_relu_ceiling_exports_as_clip(self):
        x = inp = keras.Input((8, 8, 2))
        x = layers.ReLU(max_value=6.0, name="r6")(x)
        model = keras.Model(inp, x)
        graph, _ = convert_model(model, "m")
        clip = _node(graph, "Clip")
        assert _attr(clip, "max") == 6.0
        assert _attr(clip, "min") == 0.0
        keras.backend.clear_session()

    def test_multi_input_model_rejected(self):
        a = keras.Input((8, 8, 1))
        b = keras.Input((8, 8, 1))
        out = layers.Add()([a, b])
        model = keras.Model([a, b], out)
        with pytest.raises(ConversionError, match="exactly one input"):
            convert_model(model, "m")
        keras.backend.clear_session()

    def test_non_image_input_rejected(self):
        inp = keras.Input((12,))
        out = layers.Dense(3)(inp)
        model = keras.Model(inp, out)
        with pytest.raises(ConversionError, match="static image batch"):
            convert_model(model, "m")
        keras.backend.clear_session()

    def test_off_channel_concat_rejected(self):
        inp = keras.Input((6, 6, 2))
        a = layers.Conv2D(2, 1)(inp)
        out = layers.Concatenate(axis=1, name="rowcat")([a, a])
        model = keras.Model(inp, out)
        with pytest.raises(UnsupportedLayerError, match="rowcat"):
            convert_model(model, "m")
        keras.backend.clear_session()


def test_policy_can_reduce_toy():
    model = build_toy("poltoy")
    graph, records = convert_model(model, "poltoy", tap_policy=("conv", "dense"))
    assert [(r.index, r.name) for r in records] == [(1, "c1"), (2, "c2"), (3, "head")]
    assert [d.name for d in graph.outputs] == [
        "tap/1/c1", "tap/2/c2", "tap/3/head"
    ]
    keras.backend.clear_session()
