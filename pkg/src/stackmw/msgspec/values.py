"""Value model: plain dict/list/scalar trees checked against a schema."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

from ..errors import ValidationError
from .schema import FIXED, FLOAT_TYPES, INT_BOUNDS, SCALAR, FieldDescriptor, MessageSchema

FLOAT32_MAX = 3.4028234663852886e38


@dataclass(frozen=True)
class Violation:
    path: str
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.path or '.'}: {self.code}: {self.message}"


def validate_value(schema: MessageSchema, value: Any) -> list[Violation]:
    """Return every violation of ``value`` against ``schema``; empty means valid."""
    out: list[Violation] = []
    _check_record(schema, value, "", out)
    return out


def ensure_valid(schema: MessageSchema, value: Any) -> None:
    report = validate_value(schema, value)
    if report:
        raise ValidationError(report)


def _kind(value: Any) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, dict):
        return "record"
    if isinstance(value, (list, tuple)):
        return "sequence"
    if value is None:
        return "null"
    return type(value).__name__


def _check_record(schema: MessageSchema, value: Any, path: str, out: list[Violation]) -> None:
    if not isinstance(value, dict):
        out.append(Violation(path, "type_mismatch", f"expected {schema.name} record, got {_kind(value)}"))
        return
    names = schema.field_names
    for key in value:
        if key not in names:
            out.append(Violation(f"{path}.{key}", "unknown_field", f"{schema.name} has no field {key!r}"))
    present = [n for n in names if n in value]
    for n in names:
        if n not in value:
            out.append(Violation(f"{path}.{n}", "missing_field", f"required field of {schema.name}"))
    if len(present) == len(value) and list(value) != present:
        out.append(Violation(path, "field_order", f"fields must appear in order {list(names)}"))
    for f in schema.fields:
        if f.name in value:
            _check_field(f, value[f.name], f"{path}.{f.name}", out)


def _check_field(f: FieldDescriptor, value: Any, path: str, out: list[Violation]) -> None:
    if f.arity == SCALAR:
        _check_element(f, value, path, out)
        return
    if not isinstance(value, (list, tuple)):
        out.append(Violation(path, "type_mismatch", f"expected sequence for {f.type_text()}, got {_kind(value)}"))
        return
    if f.arity == FIXED and len(value) != f.length:
        out.append(Violation(path, "arity", f"expected exactly {f.length} elements, got {len(value)}"))
    for i, item in enumerate(value):
        _check_element(f, item, f"{path}[{i}]", out)


def _check_element(f: FieldDescriptor, value: Any, path: str, out: list[Violation]) -> None:
    if f.nested is not None:
        _check_record(f.nested, value, path, out)
        return
    t = f.type_name
    if t == "bool":
        if not isinstance(value, bool):
            out.append(Violation(path, "type_mismatch", f"expected bool, got {_kind(value)}"))
    elif t == "string":
        if not isinstance(value, str):
            out.append(Violation(path, "type_mismatch", f"expected string, got {_kind(value)}"))
            return
        try:
            value.encode("utf-8")
        except UnicodeEncodeError:
            out.append(Violation(path, "encoding", "string is not encodable as UTF-8"))
    elif t in INT_BOUNDS:
        if isinstance(value, bool) or not isinstance(value, int):
            out.append(Violation(path, "type_mismatch", f"expected {t}, got {_kind(value)}"))
            return
        lo, hi = INT_BOUNDS[t]
        if not lo <= value <= hi:
            out.append(Violation(path, "range", f"{value} outside {t} range [{lo}, {hi}]"))
    elif t in FLOAT_TYPES:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            out.append(Violation(path, "type_mismatch", f"expected {t}, got {_kind(value)}"))
            return
        try:
            x = float(value)
        except OverflowError:
            out.append(Violation(path, "range", f"{value} does not fit {t}"))
            return
        if not math.isfinite(x):
            if not f.nonfinite:
                out.append(Violation(path, "non_finite", f"{x} not allowed (field is finite-only)"))
        elif t == "float32" and abs(x) > FLOAT32_MAX:
            out.append(Violation(path, "range", f"{x} outside float32 range"))


def normalize(schema: MessageSchema, value: dict) -> dict:
    """Copy of a valid value with floats as ``float`` and arrays as ``list``."""
    return {f.name: _norm_field(f, value[f.name]) for f in schema.fields}


def _norm_field(f: FieldDescriptor, value: Any) -> Any:
    if f.arity == SCALAR:
        return _norm_element(f, value)
    return [_norm_element(f, v) for v in value]


def _norm_element(f: FieldDescriptor, value: Any) -> Any:
    if f.nested is not None:
        return normalize(f.nested, value)
    if f.type_name in FLOAT_TYPES:
        return float(value)
    return value


def default_value(schema: MessageSchema) -> dict:
    """Zero value: 0 / 0.0 / false / "" leaves, empty dynamic arrays."""
    return {f.name: _default_field(f) for f in schema.fields}


def _default_element(f: FieldDescriptor) -> Any:
    if f.nested is not None:
        return default_value(f.nested)
    if f.type_name == "bool":
        return False
    if f.type_name == "string":
        return ""
    if f.type_name in FLOAT_TYPES:
        return 0.0
    return 0


def _default_field(f: FieldDescriptor) -> Any:
    if f.arity == SCALAR:
        return _default_element(f)
    if f.arity == FIXED:
        return [_default_element(f) for _ in range(f.length)]
    return []


def fill_defaults(schema: MessageSchema, value: Any) -> Any:
    """Complete a partial record with zero values, reordering keys to schema order.

    Unknown keys are kept so validation still reports them.
    """
    if not isinstance(value, dict):
        return value
    out: dict[str, Any] = {}
    for f in schema.fields:
        if f.name not in value:
            out[f.name] = _default_field(f)
        elif f.nested is not None and f.arity == SCALAR:
            out[f.name] = fill_defaults(f.nested, value[f.name])
        elif f.nested is not None and isinstance(value[f.name], (list, tuple)):
            out[f.name] = [fill_defaults(f.nested, v) for v in value[f.name]]
        else:
            out[f.name] = value[f.name]
    for k, v in value.items():
        if k not in out:
            out[k] = v
    return out


def reorder(schema: MessageSchema, value: Any) -> Any:
    """Put known keys in schema order (recursively); unknown keys trail."""
    if not isinstance(value, dict):
        return value
    out: dict[str, Any] = {}
    for f in schema.fields:
        if f.name in value:
            v = value[f.name]
            if f.nested is not None:
                v = reorder(f.nested, v) if f.arity == SCALAR else (
                    [reorder(f.nested, x) for x in v] if isinstance(v, list) else v)
            out[f.name] = v
    for k, v in value.items():
        if k not in out:
            out[k] = v
    return out
