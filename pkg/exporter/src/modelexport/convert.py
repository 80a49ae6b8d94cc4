"""Keras functional models to tapped inference graphs.

The converter walks ``model.layers`` in build order, emits one or more
graph operators per layer, and renames the output tensor of every
layer selected by the tap policy to ``tap/<index>/<layer name>`` with
indices contiguous from 1.  Activations fused into a layer become a
separate operator so the tap always carries the layer's final output,
matching what the source framework reports for that layer.

Feature maps stay numerically identical under the layout change:
channels-last kernels are transposed to channels-first once at export
time, and padding for ``same`` layers is resolved to explicit
per-edge amounts using the source framework's rule (excess padding
goes to the bottom and right edges).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graphfile import Attr, GraphFile, GraphNode, TensorDecl, Weight

DEFAULT_TAP_POLICY = (
    "conv",
    "dense",
    "activation",
    "pooling",
    "normalization",
    "merge",
)

LAYER_CATEGORY = {
    "Conv2D": "conv",
    "DepthwiseConv2D": "conv",
    "SeparableConv2D": "conv",
    "Dense": "dense",
    "Activation": "activation",
    "ReLU": "activation",
    "Softmax": "activation",
    "MaxPooling2D": "pooling",
    "AveragePooling2D": "pooling",
    "GlobalAveragePooling2D": "pooling",
    "BatchNormalization": "normalization",
    "Add": "merge",
    "Concatenate": "merge",
    "Multiply": "merge",
}

# Layers that reshape or regroup data without a tappable feature map.
STRUCTURAL = {"ZeroPadding2D", "Flatten", "Dropout", "SpatialDropout2D", "Identity"}

ACTIVATION_OPS = {
    "relu": "Relu",
    "sigmoid": "Sigmoid",
    "tanh": "Tanh",
    "softmax": "Softmax",
}


class UnsupportedLayerError(ValueError):
    """A layer (or layer configuration) has no graph translation."""


class ConversionError(ValueError):
    """The model shape or wiring cannot be exported."""


@dataclass(frozen=True)
class TapRecord:
    """Manifest row for one tapped layer."""

    index: int
    name: str
    output_shape: tuple[int, ...]


def _class_name(layer) -> str:
    return type(layer).__name__


def _activation_name(layer) -> str:
    act = getattr(layer, "activation", None)
    if act is None:
        return "linear"
    name = getattr(act, "__name__", None)
    if isinstance(name, str):
        return name
    raise UnsupportedLayerError(
        f"layer {layer.name}: cannot identify fused activation {act!r}"
    )


def tap_layers(model, tap_policy=DEFAULT_TAP_POLICY) -> list[tuple[int, object]]:
    """Return (tap index, layer) pairs the policy selects, in model order."""
    policy = frozenset(tap_policy)
    unknown = policy - frozenset(DEFAULT_TAP_POLICY)
    if unknown:
        raise ConversionError(f"unknown tap categories: {sorted(unknown)}")
    picked = []
    for layer in model.layers:
        if LAYER_CATEGORY.get(_class_name(layer)) in policy:
            picked.append((len(picked) + 1, layer))
    if not picked:
        raise ConversionError("tap policy selects no layers")
    return picked


def same_pads(size_in: tuple[int, int], kernel: tuple[int, int],
              strides: tuple[int, int], dilations: tuple[int, int] = (1, 1)):
    """Explicit (top, left, bottom, right) padding for 'same' layers."""
    pads = []
    for size, k, s, d in zip(size_in, kernel, strides, dilations):
        eff = (k - 1) * d + 1
        out = math.ceil(size / s)
        total = max((out - 1) * s + eff - size, 0)
        pads.append((total // 2, total - total // 2))
    (top, bottom), (left, right) = pads
    return top, left, bottom, right


class _Converter:
    def __init__(self, model, model_id: str, tap_policy):
        self.model = model
        self.model_id = model_id
        self.taps = dict((id(layer), idx) for idx, layer in tap_layers(model, tap_policy))
        self.names: dict[int, str] = {}
        self.shapes: dict[int, tuple] = {}
        self.nodes: list[GraphNode] = []
        self.weights: list[Weight] = []
        self.records: list[TapRecord] = []
        self.used: set[str] = set()

    # -- tensor bookkeeping --------------------------------------------

    def _claim(self, name: str) -> str:
        if name in self.used:
            raise ConversionError(f"duplicate tensor name {name!r}")
        self.used.add(name)
        return name

    def _register(self, tensor, name: str) -> None:
        self.names[id(tensor)] = name
        self.shapes[id(tensor)] = tuple(tensor.shape)

    def _sources(self, layer) -> list[str]:
        try:
            tensors = layer.input
        except Exception as exc:
            raise ConversionError(
                f"layer {layer.name}: cannot resolve inputs ({exc})"
            ) from exc
        if not isinstance(tensors, (list, tuple)):
            tensors = [tensors]
        names = []
        for t in tensors:
            try:
                names.append(self.names[id(t)])
            except KeyError:
                raise ConversionError(
                    f"layer {layer.name}: input tensor not produced by an "
                    "earlier layer; only single-path functional models export"
                ) from None
        return names

    def _in_shape(self, layer) -> tuple:
        tensors = layer.input
        if isinstance(tensors, (list, tuple)):
            tensors = tensors[0]
        return self.shapes[id(tensors)]

    def _out_name(self, layer) -> str:
        idx = self.taps.get(id(layer))
        if idx is None:
            return self._claim(layer.name)
        return self._claim(f"tap/{idx}/{layer.name}")

    def _out_shape(self, layer) -> tuple:
        shape = tuple(layer.output.shape)
        if any(d is None for d in shape[1:]):
            raise ConversionError(
                f"layer {layer.name}: output shape {shape} is not static"
            )
        return shape

    def _weight(self, name: str, array: np.ndarray) -> str:
        self.weights.append(Weight.of(self._claim(name), array))
        return name

    # -- emission helpers ------------------------------------------------

    def _node(self, op: str, inputs, outputs, name: str, attrs=()) -> None:
        self.nodes.append(GraphNode(op_type=op, inputs=tuple(inputs),
                                    outputs=tuple(outputs), name=name,
                                    attrs=tuple(attrs)))

    def _finish_layer(self, layer, src: str, act_name: str, final: str) -> None:
        """Emit the fused activation (if any) so `final` is post-activation."""
        if act_name == "linear":
            if src != final:
                self._node("Identity", [src], [final], f"{layer.name}/alias")
            return
        op = ACTIVATION_OPS.get(act_name)
        if op is None:
            raise UnsupportedLayerError(
                f"layer {layer.name}: unsupported activation {act_name!r}"
            )
        attrs = []
        if op == "Softmax":
            rank = len(self._out_shape(layer))
            if rank != 2:
                raise UnsupportedLayerError(
                    f"layer {layer.name}: softmax only exports on rank-2 outputs"
                )
            attrs.append(Attr.i("axis", 1))
        self._node(op, [src], [final], f"{layer.name}/act", attrs)

    # -- layer translations ----------------------------------------------

    def _conv_attrs(self, layer, in_shape, kernel, strides, dilations, group=1):
        kh, kw = kernel
        attrs = [
            Attr.ints("dilations", dilations),
            Attr.i("group", group),
            Attr.ints("kernel_shape", (kh, kw)),
            Attr.ints("strides", strides),
        ]
        if layer.padding == "same":
            pads = same_pads(in_shape[1:3], kernel, strides, dilations)
        elif layer.padding == "valid":
            pads = (0, 0, 0, 0)
        else:
            raise UnsupportedLayerError(
                f"layer {layer.name}: padding {layer.padding!r}"
            )
        attrs.append(Attr.ints("pads", pads))
        return attrs

    def do_conv2d(self, layer, src):
        in_shape = self._in_shape(layer)
        params = layer.get_weights()
        kernel = params[0]
        w = self._weight(f"{layer.name}/w", kernel.transpose(3, 2, 0, 1))
        inputs = [src, w]
        if layer.use_bias:
            inputs.append(self._weight(f"{layer.name}/b", params[1]))
        act = _activation_name(layer)
        final = self._out_name(layer)
        out = f"{layer.name}/pre" if act != "linear" else final
        attrs = self._conv_attrs(layer, in_shape, kernel.shape[:2],
                                 layer.strides, layer.dilation_rate,
                                 group=getattr(layer, "groups", 1))
        self._node("Conv", inputs, [out], layer.name, attrs)
        self._finish_layer(layer, out, act, final)
        return final

    def do_depthwise(self, layer, src):
        in_shape = self._in_shape(layer)
        params = layer.get_weights()
        kernel = params[0]
        kh, kw, cin, mult = kernel.shape
        w = kernel.transpose(2, 3, 0, 1).reshape(cin * mult, 1, kh, kw)
        wname = self._weight(f"{layer.name}/w", w)
        inputs = [src, wname]
        if layer.use_bias:
            inputs.append(self._weight(f"{layer.name}/b", params[1]))
        act = _activation_name(layer)
        final = self._out_name(layer)
        out = f"{layer.name}/pre" if act != "linear" else final
        attrs = self._conv_attrs(layer, in_shape, (kh, kw), layer.strides,
                                 layer.dilation_rate, group=cin)
        self._node("Conv", inputs, [out], layer.name, attrs)
        self._finish_layer(layer, out, act, final)
        return final

    def do_separable(self, layer, src):
        in_shape = self._in_shape(layer)
        params = layer.get_weights()
        depthwise, pointwise = params[0], params[1]
        kh, kw, cin, mult = depthwise.shape
        dw = depthwise.transpose(2, 3, 0, 1).reshape(cin * mult, 1, kh, kw)
        dname = self._weight(f"{layer.name}/dw", dw)
        mid = f"{layer.name}/depthwise"
        attrs = self._conv_attrs(layer, in_shape, (kh, kw), layer.strides,
                                 layer.dilation_rate, group=cin)
        self._node("Conv", [src, dname], [mid], f"{layer.name}/depth", attrs)

        pname = self._weight(f"{layer.name}/pw", pointwise.transpose(3, 2, 0, 1))
        inputs = [mid, pname]
        if layer.use_bias:
            inputs.append(self._weight(f"{layer.name}/b", params[2]))
        act = _activation_name(layer)
        final = self._out_name(layer)
        out = f"{layer.name}/pre" if act != "linear" else final
        point_attrs = [
            Attr.ints("dilations", (1, 1)),
            Attr.i("group", 1),
            Attr.ints("kernel_shape", (1, 1)),
            Attr.ints("pads", (0, 0, 0, 0)),
            Attr.ints("strides", (1, 1)),
        ]
        self._node("Conv", inputs, [out], f"{layer.name}/point", point_attrs)
        self._finish_layer(layer, out, act, final)
        return final

    def do_dense(self, layer, src):
        in_shape = self._in_shape(layer)
        if len(in_shape) != 2:
            raise UnsupportedLayerError(
                f"layer {layer.name}: dense exports on rank-2 inputs only"
            )
        params = layer.get_weights()
        w = self._weight(f"{layer.name}/w", params[0])
        inputs = [src, w]
        if layer.use_bias:
            inputs.append(self._weight(f"{layer.name}/b", params[1]))
        act = _activation_name(layer)
        final = self._out_name(layer)
        out = f"{layer.name}/pre" if act != "linear" else final
        self._node("Gemm", inputs, [out], layer.name)
        self._finish_layer(layer, out, act, final)
        return final

    def do_batchnorm(self, layer, src):
        in_shape = self._in_shape(layer)
        rank = len(in_shape)
        axis = layer.axis
        if isinstance(axis, (list, tuple)):
            if len(axis) != 1:
                raise UnsupportedLayerError(
                    f"layer {layer.name}: multi-axis normalization"
                )
            axis = axis[0]
        if rank != 4 or axis not in (-1, 3):
            raise UnsupportedLayerError(
                f"layer {layer.name}: normalization exports on the channel "
                "axis of rank-4 inputs only"
            )
        channels = in_shape[3]
        params = list(layer.get_weights())
        gamma = params.pop(0) if layer.scale else np.ones(channels, np.float32)
        beta = params.pop(0) if layer.center else np.zeros(channels, np.float32)
        mean, var = params
        inputs = [
            src,
            self._weight(f"{layer.name}/gamma", gamma),
            self._weight(f"{layer.name}/beta", beta),
            self._weight(f"{layer.name}/mean", mean),
            self._weight(f"{layer.name}/var", var),
        ]
        final = self._out_name(layer)
        self._node("BatchNormalization", inputs, [final], layer.name,
                   [Attr.f("epsilon", layer.epsilon)])
        return final

    def do_activation(self, layer, src):
        final = self._out_name(layer)
        self._finish_layer(layer, src, _activation_name(layer), final)
        return final

    def do_relu_layer(self, layer, src):
        final = self._out_name(layer)
        slope = float(layer.negative_slope or 0.0)
        threshold = float(layer.threshold or 0.0)
        top = layer.max_value
        if threshold != 0.0 or slope != 0.0:
            raise UnsupportedLayerError(
                f"layer {layer.name}: only plain or ceiling-clipped relu exports"
            )
        if top is None:
            self._node("Relu", [src], [final], layer.name)
        else:
            self._node("Clip", [src], [final], layer.name,
                       [Attr.f("max", float(top)), Attr.f("min", 0.0)])
        return final

    def do_softmax_layer(self, layer, src):
        final = self._out_name(layer)
        rank = len(self._out_shape(layer))
        if rank != 2 or layer.axis not in (-1, 1):
            raise UnsupportedLayerError(
                f"layer {layer.name}: softmax only exports on rank-2 outputs"
            )
        self._node("Softmax", [src], [final], layer.name, [Attr.i("axis", 1)])
        return final

    def do_pool(self, layer, src, op):
        in_shape = self._in_shape(layer)
        kernel = layer.pool_size
        strides = layer.strides or kernel
        if layer.padding == "same":
            pads = same_pads(in_shape[1:3], kernel, strides)
        else:
            pads = (0, 0, 0, 0)
        final = self._out_name(layer)
        attrs = [
            Attr.ints("kernel_shape", kernel),
            Attr.ints("pads", pads),
            Attr.ints("strides", strides),
        ]
        self._node(op, [src], [final], layer.name, attrs)
        return final

    def do_global_pool(self, layer, src, op):
        final = self._out_name(layer)
        if getattr(layer, "keepdims", False):
            self._node(op, [src], [final], layer.name)
            return final
        pooled = f"{layer.name}/pooled"
        self._node(op, [src], [pooled], layer.name)
        self._node("Flatten", [pooled], [final], f"{layer.name}/squeeze",
                   [Attr.i("axis", 1)])
        return final

    def do_zeropad(self, layer, src):
        ((top, bottom), (left, right)) = layer.padding
        final = self._out_name(layer)
        self._node("Pad", [src], [final], layer.name, [
            Attr.s("mode", "constant"),
            Attr.ints("pads", (0, 0, top, left, 0, 0, bottom, right)),
            Attr.f("value", 0.0),
        ])
        return final

    def do_merge(self, layer, sources, op):
        if len(sources) < 2:
            raise ConversionError(f"layer {layer.name}: merge needs two inputs")
        final = self._out_name(layer)
        if op == "Concat":
            axis = layer.axis
            rank = len(self._out_shape(layer))
            if axis not in (-1, rank - 1):
                raise UnsupportedLayerError(
                    f"layer {layer.name}: concat exports on the channel axis only"
                )
            self._node("Concat", sources, [final], layer.name,
                       [Attr.i("axis", 1 if rank == 4 else rank - 1)])
            return final
        acc = sources[0]
        for step, nxt in enumerate(sources[1:], start=1):
            last = step == len(sources) - 1
            out = final if last else f"{layer.name}/acc{step}"
            self._node(op, [acc, nxt], [out], f"{layer.name}/{step}")
            acc = out
        return final

    def do_flatten(self, layer, src):
        in_shape = self._in_shape(layer)
        final = self._out_name(layer)
        if len(in_shape) == 2:
            self._node("Identity", [src], [final], layer.name)
        elif len(in_shape) == 4:
            back = f"{layer.name}/nhwc"
            self._node("Transpose", [src], [back], f"{layer.name}/layout",
                       [Attr.ints("perm", (0, 2, 3, 1))])
            self._node("Flatten", [back], [final], layer.name,
                       [Attr.i("axis", 1)])
        else:
            raise UnsupportedLayerError(
                f"layer {layer.name}: flatten exports rank-2 or rank-4 inputs"
            )
        return final

    # -- driver -----------------------------------------------------------

    def run(self) -> tuple[GraphFile, list[TapRecord]]:
        model = self.model
        inputs = getattr(model, "inputs", None)
        if not inputs or len(inputs) != 1:
            raise ConversionError("model must have exactly one input tensor")
        in_shape = tuple(inputs[0].shape)
        if len(in_shape) != 4 or any(d is None for d in in_shape[1:]):
            raise ConversionError(
                f"model input must be a static image batch, got {in_shape}"
            )
        self._claim("input")
        self._register(inputs[0], "input")

        for layer in model.layers:
            kind = _class_name(layer)
            if kind == "InputLayer":
                continue
            if hasattr(layer, "layers"):
                raise UnsupportedLayerError(
                    f"layer {layer.name}: nested models are not supported"
                )
            sources = self._sources(layer)
            src = sources[0]
            if kind == "Conv2D":
                out = self.do_conv2d(layer, src)
            elif kind == "DepthwiseConv2D":
                out = self.do_depthwise(layer, src)
            elif kind == "SeparableConv2D":
                out = self.do_separable(layer, src)
            elif kind == "Dense":
                out = self.do_dense(layer, src)
            elif kind == "BatchNormalization":
                out = self.do_batchnorm(layer, src)
            elif kind == "Activation":
                out = self.do_activation(layer, src)
            elif kind == "ReLU":
                out = self.do_relu_layer(layer, src)
            elif kind == "Softmax":
                out = self.do_softmax_layer(layer, src)
            elif kind == "MaxPooling2D":
                out = self.do_pool(layer, src, "MaxPool")
            elif kind == "AveragePooling2D":
                out = self.do_pool(layer, src, "AveragePool")
            elif kind == "GlobalAveragePooling2D":
                out = self.do_global_pool(layer, src, "GlobalAveragePool")
            elif kind == "ZeroPadding2D":
                out = self.do_zeropad(layer, src)
            elif kind in ("Add", "Multiply"):
                out = self.do_merge(layer, sources,
                                    "Add" if kind == "Add" else "Mul")
            elif kind == "Concatenate":
                out = self.do_merge(layer, sources, "Concat")
            elif kind == "Flatten":
                out = self.do_flatten(layer, src)
            elif kind in ("Dropout", "SpatialDropout2D", "Identity"):
                out = self._out_name(layer)
                self._node("Identity", [src], [out], layer.name)
            else:
                raise UnsupportedLayerError(
                    f"layer {layer.name}: no translation for {kind}"
                )
            self._register(layer.output, out)
            idx = self.taps.get(id(layer))
            if idx is not None:
                shape = self._out_shape(layer)
                per_sample = (tuple(shape[1:3]) + (shape[3],)) if len(shape) == 4 \
                    else tuple(shape[1:])
                self.records.append(TapRecord(idx, layer.name, per_sample))

        n, h, w, c = in_shape
        decl_in = TensorDecl("input", ("N", c, h, w))
        outs = []
        for rec in sorted(self.records, key=lambda r: r.index):
            if len(rec.output_shape) == 3:
                hh, ww, cc = rec.output_shape
                outs.append(TensorDecl(f"tap/{rec.index}/{rec.name}",
                                       ("N", cc, hh, ww)))
            else:
                outs.append(TensorDecl(f"tap/{rec.index}/{rec.name}",
                                       ("N",) + rec.output_shape))
        graph = GraphFile(name=self.model_id, nodes=self.nodes,
                          weights=self.weights, inputs=[decl_in], outputs=outs,
                          metadata={"model_id": self.model_id})
        return graph, sorted(self.records, key=lambda r: r.index)


def convert_model(model, model_id: str,
                  tap_policy=DEFAULT_TAP_POLICY) -> tuple[GraphFile, list[TapRecord]]:
    """Translate a Keras functional model into a tapped graph.

    Returns the graph container and the ordered tap records that make
    up the manifest.  Raises UnsupportedLayerError for layers without a
    translation and ConversionError for non-exportable model wiring.
    """
    return _Converter(model, model_id, tap_policy).run()
