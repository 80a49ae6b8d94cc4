"""Float32 numpy executor for the exchange-graph operator subset.

Tensors are NCHW. Execution walks the node list in topological order and
can be truncated: only nodes on a path to the requested outputs run, and
intermediate buffers are freed as soon as their last consumer has fired.
"""

from __future__ import annotations

import numpy as np

from .model import Graph, Model, MalformedGraphError


class UnsupportedOperatorError(ValueError):
    pass


def _pair(node, name, default):
    value = node.attr(name, default)
    return [int(v) for v in value]


def _pads4(node):
    pads = node.attr("pads", [0, 0, 0, 0])
    if node.attr("auto_pad", "NOTSET") not in ("", "NOTSET"):
        raise UnsupportedOperatorError(f"{node.op_type}: auto_pad must be resolved by the exporter")
    if len(pads) != 4:
        raise UnsupportedOperatorError(f"{node.op_type}: only 2-D spatial pads supported")
    return [int(p) for p in pads]  # top, left, bottom, right


def _window_slices(x, kernel, strides, dilations, pads, pad_value):
    """Pad x (N,C,H,W) and return the (N,C,kh,kw,oh,ow) sliding view."""
    kh, kw = kernel
    sh, sw = strides
    dh, dw = dilations
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=pad_value)
    H, W = xp.shape[2], xp.shape[3]
    oh = (H - ((kh - 1) * dh + 1)) // sh + 1
    ow = (W - ((kw - 1) * dw + 1)) // sw + 1
    if oh < 1 or ow < 1:
        raise MalformedGraphError(f"window {kernel} does not fit input {x.shape[2:]} with pads {pads}")
    sN, sC, sH, sW = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(x.shape[0], x.shape[1], kh, kw, oh, ow),
        strides=(sN, sC, sH * dh, sW * dw, sH * sh, sW * sw),
        writeable=False,
    )
    return view, oh, ow


def op_conv(node, x, w, b=None):
    group = int(node.attr("group", 1))
    strides = _pair(node, "strides", [1, 1])
    dilations = _pair(node, "dilations", [1, 1])
    pads = _pads4(node)
    m, cg, kh, kw = w.shape
    n, c = x.shape[0], x.shape[1]
    if c != cg * group:
        raise MalformedGraphError(f"conv channel mismatch: input {c}, kernel {cg}x{group} groups")
    view, oh, ow = _window_slices(x, (kh, kw), strides, dilations, pads, 0.0)
    mg = m // group
    out = np.empty((n, m, oh, ow), dtype=np.float32)
    for g in range(group):
        cols = view[:, g * cg : (g + 1) * cg]  # (N, cg, kh, kw, oh, ow)
        kern = w[g * mg : (g + 1) * mg].reshape(mg, cg * kh * kw)
        flat = cols.reshape(n, cg * kh * kw, oh * ow)
        out[:, g * mg : (g + 1) * mg] = (kern @ flat).reshape(n, mg, oh, ow)
    if b is not None:
        out += b.reshape(1, m, 1, 1)
    return out


def op_maxpool(node, x):
    kernel = _pair(node, "kernel_shape", None)
    strides = _pair(node, "strides", [1, 1])
    pads = _pads4(node)
    if int(node.attr("ceil_mode", 0)):
        raise UnsupportedOperatorError("MaxPool: ceil_mode not supported")
    view, oh, ow = _window_slices(x, kernel, strides, [1, 1], pads, -np.inf)
    return view.max(axis=(2, 3)).astype(np.float32)


def op_averagepool(node, x):
    kernel = _pair(node, "kernel_shape", None)
    strides = _pair(node, "strides", [1, 1])
    pads = _pads4(node)
    include_pad = int(node.attr("count_include_pad", 0))
    view, oh, ow = _window_slices(x, kernel, strides, [1, 1], pads, 0.0)
    total = view.sum(axis=(2, 3), dtype=np.float32)
    if include_pad:
        return total / (kernel[0] * kernel[1])
    # divide by the number of true-image cells under each window
    ones = np.ones((1, 1) + x.shape[2:], dtype=np.float32)
    ones_view, _, _ = _window_slices(ones, kernel, strides, [1, 1], pads, 0.0)
    counts = ones_view.sum(axis=(2, 3), dtype=np.float32)
    return total / counts


def op_gemm(node, a, b, c=None):
    alpha = float(node.attr("alpha", 1.0))
    beta = float(node.attr("beta", 1.0))
    if int(node.attr("transA", 0)):
        a = a.T
    if int(node.attr("transB", 0)):
        b = b.T
    out = alpha * (a @ b)
    if c is not None:
        out = out + beta * c
    return out.astype(np.float32)


def op_batchnorm(node, x, scale, bias, mean, var):
    epsilon = float(node.attr("epsilon", 1e-5))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    inv = 1.0 / np.sqrt(var + epsilon)
    return ((x - mean.reshape(shape)) * (scale * inv).reshape(shape) + bias.reshape(shape)).astype(
        np.float32
    )


def op_pad(node, x, pads=None, value=None):
    if node.attr("mode", "constant") != "constant":
        raise UnsupportedOperatorError("Pad: only constant mode supported")
    if pads is None:
        pads = np.asarray(node.attr("pads", None), dtype=np.int64)
    fill = float(value) if value is not None else float(node.attr("value", 0.0))
    pads = np.asarray(pads, dtype=np.int64)
    half = len(pads) // 2
    width = [(int(pads[k]), int(pads[k + half])) for k in range(half)]
    return np.pad(x, width, constant_values=np.float32(fill))


def op_softmax(node, x):
    axis = int(node.attr("axis", -1))
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=axis, keepdims=True)).astype(np.float32)


def op_flatten(node, x):
    axis = int(node.attr("axis", 1))
    lead = int(np.prod(x.shape[:axis], dtype=np.int64)) if axis else 1
    return x.reshape(lead, -1)


class GraphExecutor:
    """Immutable after construction; run() may be called concurrently."""

    def __init__(self, model: Model):
        self.model = model
        self.graph: Graph = model.graph
        self.weights = {t.name: t.to_array() for t in self.graph.initializers}
        self.input_names = [v.name for v in self.graph.inputs if v.name not in self.weights]
        self._producer: dict[str, int] = {}
        for k, node in enumerate(self.graph.nodes):
            for out in node.outputs:
                self._producer[out] = k
        self._check_topological()

    def _check_topological(self):
        seen = set(self.weights) | set(self.input_names)
        for node in self.graph.nodes:
            for name in node.inputs:
                if name and name not in seen:
                    raise MalformedGraphError(
                        f"node {node.name or node.op_type}: input {name!r} not yet produced"
                    )
            seen.update(node.outputs)

    def run(self, feeds: dict[str, np.ndarray], outputs: list[str]) -> dict[str, np.ndarray]:
        """Evaluate the requested tensor names; computes only their ancestors."""
        for name in outputs:
            if name not in self._producer and name not in feeds and name not in self.weights:
                raise KeyError(f"unknown tensor {name!r}")
        needed = self._ancestors(outputs)
        wanted = set(outputs)
        values: dict[str, np.ndarray] = {}
        for name, array in feeds.items():
            values[name] = np.asarray(array, dtype=np.float32)
        remaining = self._consumer_counts(needed)
        results: dict[str, np.ndarray] = {}
        for name in wanted:
            if name in values:
                results[name] = values[name]
            elif name in self.weights:
                results[name] = self.weights[name]
        for k in needed:
            node = self.graph.nodes[k]
            args = [self._fetch(name, values) if name else None for name in node.inputs]
            outs = self._apply(node, args)
            for name, value in zip(node.outputs, outs):
                if name:
                    values[name] = value
                    if name in wanted:
                        results[name] = value
            # free tensors whose consumers have all run
            for name in node.inputs:
                if name and name in remaining:
                    remaining[name] -= 1
                    if remaining[name] == 0 and name in values and name not in wanted:
                        del values[name]
        missing = [name for name in outputs if name not in results]
        if missing:
            raise KeyError(f"outputs not produced: {missing}")
        return results

    def _fetch(self, name, values):
        if name in values:
            return values[name]
        if name in self.weights:
            return self.weights[name]
        raise MalformedGraphError(f"tensor {name!r} unavailable")

    def _ancestors(self, outputs) -> list[int]:
        stack = [self._producer[n] for n in outputs if n in self._producer]
        needed = set()
        while stack:
            k = stack.pop()
            if k in needed:
                continue
            needed.add(k)
            for name in self.graph.nodes[k].inputs:
                if name in self._producer:
                    stack.append(self._producer[name])
        return sorted(needed)

    def _consumer_counts(self, needed) -> dict[str, int]:
        counts: dict[str, int] = {}
        for k in needed:
            for name in self.graph.nodes[k].inputs:
                if name:
                    counts[name] = counts.get(name, 0) + 1
        return counts

    def _apply(self, node, args) -> list[np.ndarray]:
        op = node.op_type
        x = args[0] if args else None
        if op == "Conv":
            return [op_conv(node, *args)]
        if op == "Relu":
            return [np.maximum(x, 0.0)]
        if op == "Clip":
            lo = args[1] if len(args) > 1 and args[1] is not None else node.attr("min", -np.inf)
            hi = args[2] if len(args) > 2 and args[2] is not None else node.attr("max", np.inf)
            return [np.clip(x, np.float32(lo), np.float32(hi))]
        if op == "Sigmoid":
            return [(1.0 / (1.0 + np.exp(-x))).astype(np.float32)]
        if op == "Tanh":
            return [np.tanh(x).astype(np.float32)]
        if op == "Add":
            return [args[0] + args[1]]
        if op == "Sub":
            return [args[0] - args[1]]
        if op == "Mul":
            return [args[0] * args[1]]
        if op == "Concat":
            return [np.concatenate(args, axis=int(node.attr("axis", 1)))]
        if op == "MaxPool":
            return [op_maxpool(node, x)]
        if op == "AveragePool":
            return [op_averagepool(node, x)]
        if op == "GlobalAveragePool":
            return [x.mean(axis=(2, 3), keepdims=True, dtype=np.float32)]
        if op == "BatchNormalization":
            return [op_batchnorm(node, *args)]
        if op == "Gemm":
            return [op_gemm(node, *args)]
        if op == "MatMul":
            return [(args[0] @ args[1]).astype(np.float32)]
        if op == "Flatten":
            return [op_flatten(node, x)]
        if op == "Reshape":
            shape = [int(v) for v in args[1]]
            return [x.reshape(shape)]
        if op == "Transpose":
            perm = node.attr("perm")
            return [np.transpose(x, perm and [int(p) for p in perm])]
        if op == "Softmax":
            return [op_softmax(node, x)]
        if op == "Pad":
            return [op_pad(node, *args)]
        if op in ("Identity", "Dropout"):
            return [x]
        raise UnsupportedOperatorError(f"operator {op} not supported")
