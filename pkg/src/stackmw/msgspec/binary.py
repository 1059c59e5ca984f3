"""Compact binary encoding.

Layout: fields in declaration order, nested records inlined, little-endian
primitives with no padding. ``bool`` is one byte (0 or 1). Strings are a
uint32 byte count followed by UTF-8 bytes; dynamic arrays are a uint32
element count followed by the elements; fixed arrays carry no prefix.
"""

from __future__ import annotations

import math
import struct
from typing import Any

from ..errors import DecodeError
from .schema import DYNAMIC, SCALAR, FieldDescriptor, MessageSchema
from .values import ensure_valid

_STRUCTS = {
    "bool": struct.Struct("<B"),
    "int8": struct.Struct("<b"),
    "uint8": struct.Struct("<B"),
    "int16": struct.Struct("<h"),
    "uint16": struct.Struct("<H"),
    "int32": struct.Struct("<i"),
    "uint32": struct.Struct("<I"),
    "int64": struct.Struct("<q"),
    "uint64": struct.Struct("<Q"),
    "float32": struct.Struct("<f"),
    "float64": struct.Struct("<d"),
}
_COUNT = struct.Struct("<I")


def encode_binary(schema: MessageSchema, value: dict) -> bytes:
    ensure_valid(schema, value)
    out = bytearray()
    _encode_record(schema, value, out)
    return bytes(out)


def _encode_record(schema: MessageSchema, value: dict, out: bytearray) -> None:
    for f in schema.fields:
        v = value[f.name]
        if f.arity == SCALAR:
            _encode_element(f, v, out)
            continue
        if f.arity == DYNAMIC:
            out += _COUNT.pack(len(v))
        for item in v:
            _encode_element(f, item, out)


def _encode_element(f: FieldDescriptor, v: Any, out: bytearray) -> None:
    if f.nested is not None:
        _encode_record(f.nested, v, out)
    elif f.type_name == "string":
        raw = v.encode("utf-8")
        out += _COUNT.pack(len(raw))
        out += raw
    else:
        out += _STRUCTS[f.type_name].pack(v)


class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        end = self.pos + n
        if end > len(self.buf):
            raise DecodeError(f"truncated input reading {what} at offset {self.pos} "
                              f"(need {n} bytes, {len(self.buf) - self.pos} left)")
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def count(self, what: str, min_item: int) -> int:
        (n,) = _COUNT.unpack(self.take(4, f"{what} count"))
        if n * min_item > len(self.buf) - self.pos or (min_item == 0 and n > MAX_EMPTY_ELEMENTS):
            raise DecodeError(f"{what} count {n} exceeds remaining {len(self.buf) - self.pos} bytes")
        return n


def decode_binary(schema: MessageSchema, data: bytes) -> dict:
    """Inverse of :func:`encode_binary`. Raises :class:`DecodeError` on any malformed input."""
    r = _Reader(bytes(data))
    value = _decode_record(schema, r)
    if r.pos != len(r.buf):
        raise DecodeError(f"{len(r.buf) - r.pos} trailing bytes after {schema.name}")
    return value


# element count allowed for zero-size elements (arrays of empty records)
MAX_EMPTY_ELEMENTS = 1 << 20


def _min_size(f: FieldDescriptor) -> int:
    """Smallest possible encoding of one element of ``f``."""
    if f.nested is not None:
        total = 0
        for g in f.nested.fields:
            if g.arity == DYNAMIC:
                total += 4
            else:
                total += _min_size(g) * (g.length if g.arity != SCALAR else 1)
        return total
    if f.type_name == "string":
        return 4
    return _STRUCTS[f.type_name].size


def _decode_record(schema: MessageSchema, r: _Reader) -> dict:
    out = {}
    for f in schema.fields:
        if f.arity == SCALAR:
            out[f.name] = _decode_element(f, r)
            continue
        n = f.length if f.arity != DYNAMIC else r.count(f.name, _min_size(f))
        out[f.name] = [_decode_element(f, r) for _ in range(n)]
    return out


def _decode_element(f: FieldDescriptor, r: _Reader) -> Any:
    if f.nested is not None:
        return _decode_record(f.nested, r)
    if f.type_name == "string":
        n = r.count(f.name, 1)
        try:
            return str(r.take(n, f.name), "utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"field {f.name}: invalid UTF-8: {exc}") from None
    st = _STRUCTS[f.type_name]
    (v,) = st.unpack(r.take(st.size, f.name))
    if f.type_name == "bool":
        if v > 1:
            raise DecodeError(f"field {f.name}: bool byte {v} is not 0 or 1")
        return bool(v)
    if f.type_name in ("float32", "float64") and not f.nonfinite and not math.isfinite(v):
        raise DecodeError(f"field {f.name}: non-finite float {v}")
    return v
