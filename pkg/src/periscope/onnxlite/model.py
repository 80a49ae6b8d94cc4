"""Typed in-memory form of the exchange graph format and its (de)serializer.

The object model mirrors the standard graph schema: a Model wraps one
Graph; a Graph holds Nodes in execution order plus initializer tensors
and typed input/output value infos. Serialization is deterministic:
identical objects produce identical bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import wire

# tensor element types
FLOAT = 1
INT32 = 6
INT64 = 7
DOUBLE = 11

_DTYPES = {FLOAT: np.dtype("<f4"), INT32: np.dtype("<i4"), INT64: np.dtype("<i8"), DOUBLE: np.dtype("<f8")}

# attribute value kinds
ATTR_FLOAT = 1
ATTR_INT = 2
ATTR_STRING = 3
ATTR_TENSOR = 4
ATTR_FLOATS = 6
ATTR_INTS = 7
ATTR_STRINGS = 8


class MalformedGraphError(ValueError):
    pass


@dataclass
class TensorData:
    name: str
    dims: tuple[int, ...]
    data_type: int
    raw: bytes

    @classmethod
    def from_array(cls, name: str, array: np.ndarray) -> "TensorData":
        kind = {np.dtype("float32"): FLOAT, np.dtype("int32"): INT32,
                np.dtype("int64"): INT64, np.dtype("float64"): DOUBLE}.get(array.dtype)
        if kind is None:
            raise ValueError(f"unsupported tensor dtype {array.dtype}")
        return cls(name=name, dims=tuple(int(d) for d in array.shape), data_type=kind,
                   raw=np.ascontiguousarray(array).astype(_DTYPES[kind]).tobytes())

    def to_array(self) -> np.ndarray:
        dtype = _DTYPES.get(self.data_type)
        if dtype is None:
            raise MalformedGraphError(f"tensor {self.name}: unsupported data_type {self.data_type}")
        count = int(np.prod(self.dims, dtype=np.int64)) if self.dims else 1
        if len(self.raw) != count * dtype.itemsize:
            raise MalformedGraphError(
                f"tensor {self.name}: {len(self.raw)} bytes for shape {self.dims}"
            )
        return np.frombuffer(self.raw, dtype=dtype).reshape(self.dims)


@dataclass
class Attribute:
    name: str
    kind: int
    value: object

    @classmethod
    def of(cls, name: str, value) -> "Attribute":
        if isinstance(value, bool):
            raise ValueError("attributes take ints, not bools")
        if isinstance(value, int):
            return cls(name, ATTR_INT, value)
        if isinstance(value, float):
            return cls(name, ATTR_FLOAT, value)
        if isinstance(value, str):
            return cls(name, ATTR_STRING, value)
        if isinstance(value, TensorData):
            return cls(name, ATTR_TENSOR, value)
        if isinstance(value, (list, tuple)):
            items = list(value)
            if all(isinstance(v, int) for v in items):
                return cls(name, ATTR_INTS, items)
            if all(isinstance(v, (int, float)) for v in items):
                return cls(name, ATTR_FLOATS, [float(v) for v in items])
            if all(isinstance(v, str) for v in items):
                return cls(name, ATTR_STRINGS, items)
        raise ValueError(f"cannot type attribute {name}={value!r}")


@dataclass
class Node:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    name: str = ""
    attributes: dict[str, Attribute] = field(default_factory=dict)

    def attr(self, name: str, default=None):
        found = self.attributes.get(name)
        return default if found is None else found.value


@dataclass
class ValueInfo:
    name: str
    elem_type: int = FLOAT
    shape: tuple = ()  # entries: int, str (symbolic), or None (unknown)


@dataclass
class Graph:
    name: str = ""
    nodes: list[Node] = field(default_factory=list)
    initializers: list[TensorData] = field(default_factory=list)
    inputs: list[ValueInfo] = field(default_factory=list)
    outputs: list[ValueInfo] = field(default_factory=list)
    value_infos: list[ValueInfo] = field(default_factory=list)


@dataclass
class Model:
    graph: Graph
    ir_version: int = 8
    opset_version: int = 13
    producer_name: str = ""
    producer_version: str = ""
    model_version: int = 0
    doc_string: str = ""
    metadata: dict[str, str] = field(default_factory=dict)


# --- serialization ---------------------------------------------------------


def _ser_tensor(t: TensorData) -> bytes:
    parts = [wire.packed_varints(1, t.dims)] if t.dims else []
    parts.append(wire.uint_field(2, t.data_type))
    parts.append(wire.string_field(8, t.name))
    parts.append(wire.bytes_field(9, t.raw))
    return b"".join(parts)


def _ser_attribute(a: Attribute) -> bytes:
    parts = [wire.string_field(1, a.name)]
    if a.kind == ATTR_FLOAT:
        parts.append(wire.float_field(2, a.value))
    elif a.kind == ATTR_INT:
        parts.append(wire.uint_field(3, a.value))
    elif a.kind == ATTR_STRING:
        parts.append(wire.bytes_field(4, a.value.encode("utf-8")))
    elif a.kind == ATTR_TENSOR:
        parts.append(wire.bytes_field(5, _ser_tensor(a.value)))
    elif a.kind == ATTR_FLOATS:
        parts.append(wire.packed_floats(7, a.value))
    elif a.kind == ATTR_INTS:
        parts.append(wire.packed_varints(8, a.value))
    elif a.kind == ATTR_STRINGS:
        parts.extend(wire.bytes_field(9, s.encode("utf-8")) for s in a.value)
    else:
        raise ValueError(f"attribute {a.name}: unknown kind {a.kind}")
    parts.append(wire.uint_field(20, a.kind))
    return b"".join(parts)


def _ser_node(n: Node) -> bytes:
    parts = [wire.string_field(1, s) for s in n.inputs]
    parts += [wire.string_field(2, s) for s in n.outputs]
    if n.name:
        parts.append(wire.string_field(3, n.name))
    parts.append(wire.string_field(4, n.op_type))
    parts += [wire.bytes_field(5, _ser_attribute(a)) for a in n.attributes.values()]
    return b"".join(parts)


def _ser_value_info(v: ValueInfo) -> bytes:
    dims = b""
    for d in v.shape:
        if isinstance(d, int):
            dim = wire.uint_field(1, d)
        elif isinstance(d, str):
            dim = wire.string_field(2, d)
        else:
            dim = b""  # unknown dimension
        dims += wire.bytes_field(1, dim)
    tensor_type = wire.uint_field(1, v.elem_type) + wire.bytes_field(2, dims)
    type_proto = wire.bytes_field(1, tensor_type)
    return wire.string_field(1, v.name) + wire.bytes_field(2, type_proto)


def _ser_graph(g: Graph) -> bytes:
    parts = [wire.bytes_field(1, _ser_node(n)) for n in g.nodes]
    if g.name:
        parts.append(wire.string_field(2, g.name))
    parts += [wire.bytes_field(5, _ser_tensor(t)) for t in g.initializers]
    parts += [wire.bytes_field(11, _ser_value_info(v)) for v in g.inputs]
    parts += [wire.bytes_field(12, _ser_value_info(v)) for v in g.outputs]
    parts += [wire.bytes_field(13, _ser_value_info(v)) for v in g.value_infos]
    return b"".join(parts)


def serialize_model(m: Model) -> bytes:
    parts = [wire.uint_field(1, m.ir_version)]
    if m.producer_name:
        parts.append(wire.string_field(2, m.producer_name))
    if m.producer_version:
        parts.append(wire.string_field(3, m.producer_version))
    if m.model_version:
        parts.append(wire.uint_field(5, m.model_version))
    if m.doc_string:
        parts.append(wire.string_field(6, m.doc_string))
    parts.append(wire.bytes_field(7, _ser_graph(m.graph)))
    parts.append(wire.bytes_field(8, wire.string_field(1, "") + wire.uint_field(2, m.opset_version)))
    for key in sorted(m.metadata):
        entry = wire.string_field(1, key) + wire.string_field(2, m.metadata[key])
        parts.append(wire.bytes_field(14, entry))
    return b"".join(parts)


# --- parsing ---------------------------------------------------------------


def _txt(value) -> str:
    return bytes(value).decode("utf-8")


def _parse_tensor(buf) -> TensorData:
    dims: list[int] = []
    data_type = FLOAT
    name = ""
    raw = b""
    floats: list[float] = []
    ints: list[int] = []
    for fieldno, wt, value in wire.iter_fields(buf):
        if fieldno == 1:
            dims.extend(wire.signed(v) for v in wire.decode_packed_varints(value, wt))
        elif fieldno == 2:
            data_type = value
        elif fieldno == 4:
            floats.extend(wire.decode_packed_floats(value, wt))
        elif fieldno in (5, 7):
            ints.extend(wire.signed(v) for v in wire.decode_packed_varints(value, wt))
        elif fieldno == 8:
            name = _txt(value)
        elif fieldno == 9:
            raw = bytes(value)
    if not raw and floats:
        raw = struct.pack(f"<{len(floats)}f", *floats)
    elif not raw and ints:
        dtype = _DTYPES.get(data_type, _DTYPES[INT64])
        raw = np.array(ints, dtype=dtype).tobytes()
    return TensorData(name=name, dims=tuple(dims), data_type=data_type, raw=raw)


def _parse_attribute(buf) -> Attribute:
    name = ""
    kind = 0
    single: object = None
    floats: list[float] = []
    ints: list[int] = []
    strings: list[str] = []
    tensor = None
    for fieldno, wt, value in wire.iter_fields(buf):
        if fieldno == 1:
            name = _txt(value)
        elif fieldno == 2:
            single = struct.unpack("<f", bytes(value))[0]
        elif fieldno == 3:
            single = wire.signed(value)
        elif fieldno == 4:
            single = _txt(value)
        elif fieldno == 5:
            tensor = _parse_tensor(value)
        elif fieldno == 7:
            floats.extend(wire.decode_packed_floats(value, wt))
        elif fieldno == 8:
            ints.extend(wire.signed(v) for v in wire.decode_packed_varints(value, wt))
        elif fieldno == 9:
            strings.append(_txt(value))
        elif fieldno == 20:
            kind = value
    if kind == 0:  # infer for writers that omit the type enum
        if tensor is not None:
            kind = ATTR_TENSOR
        elif strings:
            kind = ATTR_STRINGS
        elif floats:
            kind = ATTR_FLOATS
        elif ints:
            kind = ATTR_INTS
        elif isinstance(single, float):
            kind = ATTR_FLOAT
        elif isinstance(single, str):
            kind = ATTR_STRING
        else:
            kind = ATTR_INT
    value_by_kind = {
        ATTR_FLOAT: single,
        ATTR_INT: single if single is not None else 0,
        ATTR_STRING: single,
        ATTR_TENSOR: tensor,
        ATTR_FLOATS: floats,
        ATTR_INTS: ints,
        ATTR_STRINGS: strings,
    }
    if kind not in value_by_kind:
        raise MalformedGraphError(f"attribute {name}: unsupported kind {kind}")
    return Attribute(name=name, kind=kind, value=value_by_kind[kind])


def _parse_node(buf) -> Node:
    node = Node(op_type="", inputs=[], outputs=[])
    for fieldno, _wt, value in wire.iter_fields(buf):
        if fieldno == 1:
            node.inputs.append(_txt(value))
        elif fieldno == 2:
            node.outputs.append(_txt(value))
        elif fieldno == 3:
            node.name = _txt(value)
        elif fieldno == 4:
            node.op_type = _txt(value)
        elif fieldno == 5:
            attr = _parse_attribute(value)
            node.attributes[attr.name] = attr
    if not node.op_type:
        raise MalformedGraphError("node without op_type")
    return node


def _parse_value_info(buf) -> ValueInfo:
    info = ValueInfo(name="")
    for fieldno, _wt, value in wire.iter_fields(buf):
        if fieldno == 1:
            info.name = _txt(value)
        elif fieldno == 2:
            for f2, _w2, v2 in wire.iter_fields(value):
                if f2 != 1:  # only tensor types appear in our graphs
                    continue
                for f3, _w3, v3 in wire.iter_fields(v2):
                    if f3 == 1:
                        info.elem_type = v3
                    elif f3 == 2:
                        dims = []
                        for f4, _w4, v4 in wire.iter_fields(v3):
                            if f4 != 1:
                                continue
                            entry = None
                            for f5, _w5, v5 in wire.iter_fields(v4):
                                if f5 == 1:
                                    entry = wire.signed(v5)
                                elif f5 == 2:
                                    entry = _txt(v5)
                            dims.append(entry)
                        info.shape = tuple(dims)
    return info


def _parse_graph(buf) -> Graph:
    graph = Graph()
    for fieldno, _wt, value in wire.iter_fields(buf):
        if fieldno == 1:
            graph.nodes.append(_parse_node(value))
        elif fieldno == 2:
            graph.name = _txt(value)
        elif fieldno == 5:
            graph.initializers.append(_parse_tensor(value))
        elif fieldno == 11:
            graph.inputs.append(_parse_value_info(value))
        elif fieldno == 12:
            graph.outputs.append(_parse_value_info(value))
        elif fieldno == 13:
            graph.value_infos.append(_parse_value_info(value))
    return graph


def parse_model(data: bytes) -> Model:
    """Decode a serialized model; raises MalformedGraphError on junk."""
    graph = None
    model = Model(graph=Graph())
    try:
        for fieldno, _wt, value in wire.iter_fields(data):
            if fieldno == 1:
                model.ir_version = value
            elif fieldno == 2:
                model.producer_name = _txt(value)
            elif fieldno == 3:
                model.producer_version = _txt(value)
            elif fieldno == 5:
                model.model_version = wire.signed(value)
            elif fieldno == 6:
                model.doc_string = _txt(value)
            elif fieldno == 7:
                graph = _parse_graph(value)
            elif fieldno == 8:
                for f2, _w2, v2 in wire.iter_fields(value):
                    if f2 == 2:
                        model.opset_version = wire.signed(v2)
            elif fieldno == 14:
                key = val = ""
                for f2, _w2, v2 in wire.iter_fields(value):
                    if f2 == 1:
                        key = _txt(v2)
                    elif f2 == 2:
                        val = _txt(v2)
                model.metadata[key] = val
    except (wire.WireError, UnicodeDecodeError, struct.error) as exc:
        raise MalformedGraphError(f"cannot parse model: {exc}") from exc
    if graph is None or not graph.nodes:
        raise MalformedGraphError("model has no graph nodes")
    model.graph = graph
    return model
