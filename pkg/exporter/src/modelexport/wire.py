"""Low-level protobuf wire encoding for the graph container format.

The on-disk container is a small subset of the ONNX protobuf schema,
written canonically: within every message fields are emitted in
ascending field-number order, repeated fields in their semantic order,
and metadata entries sorted by key.  Canonical form means two exports
of the same model are byte-identical, which lets callers compare
graph files with a plain hash.
"""

from __future__ import annotations

import struct

WIRE_VARINT = 0
WIRE_FIXED64 = 1
WIRE_BYTES = 2
WIRE_FIXED32 = 5


def varint(value: int) -> bytes:
    """Encode a non-negative integer as a base-128 varint."""
    if value < 0:
        raise ValueError("varint fields must be non-negative")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def tag(field_number: int, wire_type: int) -> bytes:
    return varint((field_number << 3) | wire_type)


def uint_field(field_number: int, value: int) -> bytes:
    return tag(field_number, WIRE_VARINT) + varint(value)


def bytes_field(field_number: int, payload: bytes) -> bytes:
    return tag(field_number, WIRE_BYTES) + varint(len(payload)) + payload


def string_field(field_number: int, text: str) -> bytes:
    return bytes_field(field_number, text.encode("utf-8"))


def float_field(field_number: int, value: float) -> bytes:
    return tag(field_number, WIRE_FIXED32) + struct.pack("<f", value)


def packed_varints(field_number: int, values) -> bytes:
    payload = b"".join(varint(v) for v in values)
    return bytes_field(field_number, payload)


def packed_floats(field_number: int, values) -> bytes:
    payload = struct.pack(f"<{len(values)}f", *values)
    return bytes_field(field_number, payload)
