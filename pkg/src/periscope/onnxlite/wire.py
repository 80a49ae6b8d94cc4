"""Protobuf wire-format primitives (the encoding layer under the graph
format). Only what the graph schema needs: varints, 32-bit floats,
length-delimited fields, packed repeated numerics.

Writers emit fields in ascending field-number order and repeated entries
in list order, so serialization is a pure function of the content.
"""

from __future__ import annotations

import struct

VARINT = 0
FIXED64 = 1
LENGTH = 2
FIXED32 = 5

_U64_MASK = (1 << 64) - 1


class WireError(ValueError):
    pass


def encode_varint(value: int) -> bytes:
    if value < 0:
        value &= _U64_MASK  # two's complement, 10-byte form
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_varint(buf, offset: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if offset >= len(buf):
            raise WireError("truncated varint")
        byte = buf[offset]
        offset += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, offset
        shift += 7
        if shift > 63:
            raise WireError("varint too long")


def signed(value: int) -> int:
    """Reinterpret a decoded u64 varint as the int64 it encodes."""
    return value - (1 << 64) if value >= (1 << 63) else value


def tag(field: int, wire_type: int) -> bytes:
    return encode_varint((field << 3) | wire_type)


def uint_field(field: int, value: int) -> bytes:
    return tag(field, VARINT) + encode_varint(value)


def bytes_field(field: int, payload: bytes) -> bytes:
    return tag(field, LENGTH) + encode_varint(len(payload)) + payload


def string_field(field: int, value: str) -> bytes:
    return bytes_field(field, value.encode("utf-8"))


def float_field(field: int, value: float) -> bytes:
    return tag(field, FIXED32) + struct.pack("<f", value)


def packed_varints(field: int, values) -> bytes:
    payload = b"".join(encode_varint(v) for v in values)
    return bytes_field(field, payload)


def packed_floats(field: int, values) -> bytes:
    return bytes_field(field, struct.pack(f"<{len(values)}f", *values))


def iter_fields(buf):
    """Yield (field_number, wire_type, value) over a message buffer.

    Length-delimited values come back as memoryview slices (no copy);
    varints as unsigned ints; fixed32/64 as raw 4/8-byte memoryviews.
    """
    view = memoryview(buf)
    offset = 0
    end = len(view)
    while offset < end:
        key, offset = decode_varint(view, offset)
        field, wire_type = key >> 3, key & 0x7
        if wire_type == VARINT:
            value, offset = decode_varint(view, offset)
        elif wire_type == LENGTH:
            size, offset = decode_varint(view, offset)
            if offset + size > end:
                raise WireError(f"field {field}: length {size} overruns buffer")
            value = view[offset : offset + size]
            offset += size
        elif wire_type == FIXED32:
            if offset + 4 > end:
                raise WireError(f"field {field}: truncated fixed32")
            value = view[offset : offset + 4]
            offset += 4
        elif wire_type == FIXED64:
            if offset + 8 > end:
                raise WireError(f"field {field}: truncated fixed64")
            value = view[offset : offset + 8]
            offset += 8
        else:
            raise WireError(f"field {field}: unsupported wire type {wire_type}")
        yield field, wire_type, value


def decode_packed_varints(value, wire_type) -> list[int]:
    """A repeated int64 field: packed buffer or a single unpacked entry."""
    if wire_type == VARINT:
        return [value]
    out = []
    offset = 0
    while offset < len(value):
        item, offset = decode_varint(value, offset)
        out.append(item)
    return out


def decode_packed_floats(value, wire_type) -> list[float]:
    if wire_type == FIXED32:
        return [struct.unpack("<f", bytes(value))[0]]
    if len(value) % 4:
        raise WireError("packed float field not a multiple of 4 bytes")
    return list(struct.unpack(f"<{len(value) // 4}f", bytes(value)))
