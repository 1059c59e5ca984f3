"""Canonical YAML text and JSON object text for message values.

The renderer is hand-written so the output is byte-stable: block style,
two-space indent, keys in schema order, floats in shortest round-trip form
(always with a ``.`` so YAML 1.1 readers see a float), and strings quoted
only when a plain scalar would read back as something else.  Parsing goes
through PyYAML's safe loader.
"""

from __future__ import annotations

import json
import math
import re
from functools import lru_cache
from typing import Any

import yaml

from ..errors import UnknownKeyError, ValidationError, YamlSyntaxError
from .schema import MessageSchema
from .values import ensure_valid, fill_defaults, normalize, reorder, validate_value

_BaseLoader = getattr(yaml, "CSafeLoader", yaml.SafeLoader)


class _StrictLoader(_BaseLoader):
    """Safe loader that rejects duplicate mapping keys."""


def _construct_mapping(loader: yaml.SafeLoader, node: yaml.MappingNode, deep: bool = False) -> dict:
    loader.flatten_mapping(node)
    out = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in out:
            raise yaml.constructor.ConstructorError(
                None, None, f"duplicate key {key!r}", key_node.start_mark)
        out[key] = loader.construct_object(value_node, deep=deep)
    return out


_StrictLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def load_yaml(text: str) -> Any:
    try:
        return yaml.load(text, Loader=_StrictLoader)
    except yaml.YAMLError as exc:
        raise YamlSyntaxError(str(exc)) from None


# rendering -----------------------------------------------------------------

_PLAIN = re.compile(r"[A-Za-z_/(][A-Za-z0-9 _./()+-]*\Z")


def _printable(ch: str) -> bool:
    o = ord(ch)
    if 0x20 <= o <= 0x7E:
        return True
    if o in (0x2028, 0x2029, 0xFEFF):
        return False
    return 0xA0 <= o <= 0xD7FF or 0xE000 <= o <= 0xFFFD or 0x10000 <= o <= 0x10FFFF


@lru_cache(maxsize=4096)
def render_string(s: str) -> str:
    if _PLAIN.match(s) and not s.endswith(" "):
        try:
            if yaml.load(s, Loader=_BaseLoader) == s:
                return s
        except yaml.YAMLError:
            pass
    if all(_printable(c) for c in s):
        return "'" + s.replace("'", "''") + "'"
    return '"' + "".join(_escape(c) for c in s) + '"'


_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t", "\r": "\\r", "\0": "\\0"}


def _escape(c: str) -> str:
    if c in _ESCAPES:
        return _ESCAPES[c]
    if _printable(c):
        return c
    o = ord(c)
    if o < 0x100:
        return f"\\x{o:02X}"
    if o < 0x10000:
        return f"\\u{o:04X}"
    return f"\\U{o:08X}"


def render_float(x: float) -> str:
    if math.isnan(x):
        return ".nan"
    if math.isinf(x):
        return ".inf" if x > 0 else "-.inf"
    r = repr(x)
    mant, e, exp = r.partition("e")
    if e and "." not in mant:
        r = f"{mant}.0e{exp}"
    return r


def render_scalar(v: Any) -> str:
    if v is None:
        return "null"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return render_float(v)
    if isinstance(v, str):
        return render_string(v)
    raise TypeError(f"cannot render {type(v).__name__} as YAML")


def _emit(value: Any, indent: int, lines: list[str]) -> None:
    pad = " " * indent
    if isinstance(value, dict):
        for k, v in value.items():
            head = f"{pad}{render_string(str(k))}:"
            if isinstance(v, (dict, list)) and v:
                lines.append(head)
                _emit(v, indent + 2, lines)
            else:
                lines.append(f"{head} {_inline(v)}")
    else:
        for item in value:
            if isinstance(item, (dict, list)) and item:
                start = len(lines)
                _emit(item, indent + 2, lines)
                lines[start] = f"{pad}- {lines[start][indent + 2:]}"
            else:
                lines.append(f"{pad}- {_inline(item)}")


def _inline(v: Any) -> str:
    if isinstance(v, dict):
        return "{}"
    if isinstance(v, (list, tuple)):
        return "[]"
    return render_scalar(v)


def render_tree(value: Any) -> str:
    """Canonical block YAML for a plain dict/list/scalar tree (no trailing newline)."""
    if isinstance(value, tuple):
        value = list(value)
    if not isinstance(value, (dict, list)) or not value:
        return _inline(value)
    lines: list[str] = []
    _emit(value, 0, lines)
    return "\n".join(lines)


# codecs ----------------------------------------------------------------------


def to_yaml(schema: MessageSchema, value: dict) -> str:
    ensure_valid(schema, value)
    return render_tree(normalize(schema, value))


def from_yaml(schema: MessageSchema, text: str, fill: bool = False) -> dict:
    """Parse YAML text into a validated value.

    Mapping order in the text is not significant; the result is in schema
    order. With ``fill`` missing fields take zero values.
    """
    obj = load_yaml(text)
    if obj is None and not schema.fields:
        obj = {}
    if fill:
        obj = fill_defaults(schema, obj)
    obj = reorder(schema, obj)
    report = validate_value(schema, obj)
    if any(v.code == "unknown_field" for v in report):
        raise UnknownKeyError(report)
    if report:
        raise ValidationError(report)
    return normalize(schema, obj)


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def yaml_to_json(text: str) -> str:
    """Schema-less YAML -> compact JSON text, preserving key order."""
    return dumps_json(load_yaml(text))


def json_to_yaml(text: str) -> str:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise YamlSyntaxError(f"invalid JSON: {exc}") from None
    return render_tree(obj)


def to_json(schema: MessageSchema, value: dict) -> str:
    ensure_valid(schema, value)
    return dumps_json(normalize(schema, value))


def from_json(schema: MessageSchema, text: str) -> dict:
    return from_yaml(schema, json_to_yaml(text))
