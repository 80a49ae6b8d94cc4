"""Writer for the portable computation-graph container.

Builds the byte stream for a tapped inference graph: a single rank-4
input, a topologically ordered node list, float32 weight initializers,
and one declared output per tap tensor.  Only the writer lives here;
consumers load graphs through the verification CLI, never through this
package.

Serialization is canonical: fields in ascending field-number order,
node attributes sorted by name, metadata entries sorted by key, and
the opset entry pinned to the default operator domain.  Exporting the
same model twice therefore yields byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import wire

FLOAT = 1

ATTR_FLOAT = 1
ATTR_INT = 2
ATTR_STRING = 3
ATTR_FLOATS = 6
ATTR_INTS = 7


@dataclass(frozen=True)
class Attr:
    """A single node attribute with an explicit type code."""

    name: str
    kind: int
    value: object

    @classmethod
    def i(cls, name: str, value: int) -> "Attr":
        if isinstance(value, bool):
            raise ValueError(f"attribute {name}: booleans are not attribute ints")
        if value < 0:
            raise ValueError(f"attribute {name}: emitted graphs use non-negative ints")
        return cls(name, ATTR_INT, int(value))

    @classmethod
    def f(cls, name: str, value: float) -> "Attr":
        return cls(name, ATTR_FLOAT, float(value))

    @classmethod
    def s(cls, name: str, value: str) -> "Attr":
        return cls(name, ATTR_STRING, value)

    @classmethod
    def ints(cls, name: str, values) -> "Attr":
        vals = tuple(int(v) for v in values)
        if any(v < 0 for v in vals):
            raise ValueError(f"attribute {name}: emitted graphs use non-negative ints")
        return cls(name, ATTR_INTS, vals)

    @classmethod
    def floats(cls, name: str, values) -> "Attr":
        return cls(name, ATTR_FLOATS, tuple(float(v) for v in values))

    def serialize(self) -> bytes:
        parts = [wire.string_field(1, self.name)]
        if self.kind == ATTR_FLOAT:
            parts.append(wire.float_field(2, self.value))
        elif self.kind == ATTR_INT:
            parts.append(wire.uint_field(3, self.value))
        elif self.kind == ATTR_STRING:
            parts.append(wire.bytes_field(4, self.value.encode("utf-8")))
        elif self.kind == ATTR_FLOATS:
            parts.append(wire.packed_floats(7, self.value))
        elif self.kind == ATTR_INTS:
            parts.append(wire.packed_varints(8, self.value))
        else:
            raise ValueError(f"attribute {self.name}: unknown kind {self.kind}")
        parts.append(wire.uint_field(20, self.kind))
        return b"".join(parts)


@dataclass(frozen=True)
class Weight:
    """A named float32 constant shipped inside the graph file."""

    name: str
    dims: tuple[int, ...]
    raw: bytes

    @classmethod
    def of(cls, name: str, array: np.ndarray) -> "Weight":
        arr = np.ascontiguousarray(array, dtype=np.float32)
        return cls(name=name, dims=tuple(int(d) for d in arr.shape), raw=arr.tobytes())

    def serialize(self) -> bytes:
        parts = [wire.packed_varints(1, self.dims)] if self.dims else []
        parts.append(wire.uint_field(2, FLOAT))
        parts.append(wire.string_field(8, self.name))
        parts.append(wire.bytes_field(9, self.raw))
        return b"".join(parts)


@dataclass
class GraphNode:
    """One operator application; inputs and outputs name tensors."""

    op_type: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    name: str = ""
    attrs: tuple[Attr, ...] = ()

    def serialize(self) -> bytes:
        parts = [wire.string_field(1, s) for s in self.inputs]
        parts += [wire.string_field(2, s) for s in self.outputs]
        if self.name:
            parts.append(wire.string_field(3, self.name))
        parts.append(wire.string_field(4, self.op_type))
        parts += [
            wire.bytes_field(5, a.serialize())
            for a in sorted(self.attrs, key=lambda a: a.name)
        ]
        return b"".join(parts)


@dataclass(frozen=True)
class TensorDecl:
    """Declared tensor: name plus a shape of ints and symbolic dims."""

    name: str
    shape: tuple[object, ...]

    def serialize(self) -> bytes:
        dims = b""
        for d in self.shape:
            if isinstance(d, str):
                entry = wire.string_field(2, d)
            else:
                entry = wire.uint_field(1, int(d))
            dims += wire.bytes_field(1, entry)
        tensor_type = wire.uint_field(1, FLOAT) + wire.bytes_field(2, dims)
        type_proto = wire.bytes_field(1, tensor_type)
        return wire.string_field(1, self.name) + wire.bytes_field(2, type_proto)


@dataclass
class GraphFile:
    """Complete exportable graph plus container-level metadata."""

    name: str
    nodes: list[GraphNode] = field(default_factory=list)
    weights: list[Weight] = field(default_factory=list)
    inputs: list[TensorDecl] = field(default_factory=list)
    outputs: list[TensorDecl] = field(default_factory=list)
    ir_version: int = 8
    opset_version: int = 13
    producer_name: str = "modelexport"
    producer_version: str = "0.1.0"
    metadata: dict[str, str] = field(default_factory=dict)

    def _serialize_graph(self) -> bytes:
        parts = [wire.bytes_field(1, n.serialize()) for n in self.nodes]
        if self.name:
            parts.append(wire.string_field(2, self.name))
        parts += [wire.bytes_field(5, w.serialize()) for w in self.weights]
        parts += [wire.bytes_field(11, v.serialize()) for v in self.inputs]
        parts += [wire.bytes_field(12, v.serialize()) for v in self.outputs]
        return b"".join(parts)

    def serialize(self) -> bytes:
        parts = [wire.uint_field(1, self.ir_version)]
        if self.producer_name:
            parts.append(wire.string_field(2, self.producer_name))
        if self.producer_version:
            parts.append(wire.string_field(3, self.producer_version))
        parts.append(wire.bytes_field(7, self._serialize_graph()))
        opset = wire.string_field(1, "") + wire.uint_field(2, self.opset_version)
        parts.append(wire.bytes_field(8, opset))
        for key in sorted(self.metadata):
            entry = wire.string_field(1, key) + wire.string_field(2, self.metadata[key])
            parts.append(wire.bytes_field(14, entry))
        return b"".join(parts)
