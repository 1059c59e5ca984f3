"""Message definition language: ``.msg``-style parsing and the schema registry.

A definition is one field per line::

    # comment
    float64 x
    int32[3] triple
    string[] names
    Vector3 linear            # nested type, same package
    geometry_msgs/Vector3 v   # nested type, qualified
    float64 reading @nonfinite

``@nonfinite`` lets a float field hold NaN and infinities; every other float
leaf must be finite.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator

from ..errors import SchemaError, UnknownTypeError

INT_BOUNDS: dict[str, tuple[int, int]] = {}
for _bits in (8, 16, 32, 64):
    INT_BOUNDS[f"int{_bits}"] = (-(1 << (_bits - 1)), (1 << (_bits - 1)) - 1)
    INT_BOUNDS[f"uint{_bits}"] = (0, (1 << _bits) - 1)

FLOAT_TYPES = frozenset({"float32", "float64"})
PRIMITIVES = frozenset(INT_BOUNDS) | FLOAT_TYPES | {"bool", "string"}

SCALAR = "scalar"
FIXED = "fixed"
DYNAMIC = "dynamic"

_FIELD_NAME = re.compile(r"[a-z][a-z0-9_]*\Z")
_TYPE_NAME = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
_PACKAGE = re.compile(r"[a-z][a-z0-9_]*\Z")
_TYPE_TOKEN = re.compile(r"(?P<base>[^\[\]]+)(?:\[(?P<len>[^\]]*)\])?\Z")
_TOKEN = re.compile(r"\S+")


@dataclass(frozen=True)
class FieldDescriptor:
    name: str
    type_name: str
    arity: str = SCALAR
    length: int | None = None
    nested: "MessageSchema | None" = None
    nonfinite: bool = False

    @property
    def is_primitive(self) -> bool:
        return self.nested is None

    @property
    def is_array(self) -> bool:
        return self.arity != SCALAR

    def type_text(self) -> str:
        suffix = {SCALAR: "", DYNAMIC: "[]"}.get(self.arity, f"[{self.length}]")
        return self.type_name + suffix


@dataclass(frozen=True)
class MessageSchema:
    name: str
    fields: tuple[FieldDescriptor, ...]

    @property
    def package(self) -> str:
        return self.name.split("/", 1)[0]

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def field(self, name: str) -> FieldDescriptor:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def definition(self) -> str:
        """Render back to definition text (nested types package-qualified)."""
        lines = []
        for f in self.fields:
            line = f"{f.type_text()} {f.name}"
            if f.nonfinite:
                line += " @nonfinite"
            lines.append(line)
        return "\n".join(lines)


@dataclass(frozen=True)
class _RawField:
    name: str
    base: str
    arity: str
    length: int | None
    nonfinite: bool
    line: int
    type_col: int
    name_col: int


def check_type_name(name: str) -> None:
    pkg, sep, short = name.partition("/")
    if not sep or not _PACKAGE.match(pkg) or not _TYPE_NAME.match(short):
        raise SchemaError(f"bad qualified type name {name!r} (want package/Name)", 1, 1, kind="name")


def _parse_lines(source: str, origin: str | None) -> list[_RawField]:
    raw: list[_RawField] = []
    seen: set[str] = set()
    for lineno, line in enumerate(source.splitlines(), start=1):
        body = line.split("#", 1)[0]
        tokens = [(m.group(), m.start() + 1) for m in _TOKEN.finditer(body)]
        if not tokens:
            continue
        if len(tokens) < 2:
            raise SchemaError("expected '<type> <name>'", lineno, tokens[0][1], source=origin)
        nonfinite = False
        if len(tokens) == 3 and tokens[2][0] == "@nonfinite":
            nonfinite = True
        elif len(tokens) > 2:
            raise SchemaError(f"unexpected token {tokens[2][0]!r}", lineno, tokens[2][1], source=origin)
        (type_tok, type_col), (name_tok, name_col) = tokens[0], tokens[1]

        m = _TYPE_TOKEN.match(type_tok)
        if m is None:
            raise SchemaError(f"malformed type {type_tok!r}", lineno, type_col, source=origin)
        base, length_text = m.group("base"), m.group("len")
        arity, length = SCALAR, None
        if length_text is not None:
            if length_text == "":
                arity = DYNAMIC
            else:
                len_col = type_col + len(base) + 1
                if not length_text.isdigit():
                    raise SchemaError(f"array length {length_text!r} is not a positive integer",
                                      lineno, len_col, kind="arity", source=origin)
                length = int(length_text)
                if length < 1:
                    raise SchemaError("fixed array length must be >= 1", lineno, len_col,
                                      kind="arity", source=origin)
                arity = FIXED
        pkg, sep, short = base.partition("/")
        if base not in PRIMITIVES:
            if sep and not (_PACKAGE.match(pkg) and _TYPE_NAME.match(short)):
                raise SchemaError(f"malformed type {base!r}", lineno, type_col, source=origin)
            if not sep and not _TYPE_NAME.match(base):
                raise SchemaError(f"malformed type {base!r}", lineno, type_col, source=origin)

        if not _FIELD_NAME.match(name_tok):
            raise SchemaError(f"field name {name_tok!r} must match [a-z][a-z0-9_]*",
                              lineno, name_col, source=origin)
        if name_tok in seen:
            raise SchemaError(f"duplicate field {name_tok!r}", lineno, name_col,
                              kind="duplicate", source=origin)
        if nonfinite and base not in FLOAT_TYPES:
            raise SchemaError("@nonfinite only applies to float32/float64 fields",
                              lineno, tokens[2][1], source=origin)
        seen.add(name_tok)
        raw.append(_RawField(name_tok, base, arity, length, nonfinite, lineno, type_col, name_col))
    return raw


def _qualify(base: str, package: str) -> str:
    return base if "/" in base else f"{package}/{base}"


def _build(name: str, raw: Iterable[_RawField], lookup: Callable[[str, _RawField], MessageSchema]) -> MessageSchema:
    package = name.split("/", 1)[0]
    fields = []
    for r in raw:
        if r.base in PRIMITIVES:
            fields.append(FieldDescriptor(r.name, r.base, r.arity, r.length, None, r.nonfinite))
        else:
            nested = lookup(_qualify(r.base, package), r)
            fields.append(FieldDescriptor(r.name, nested.name, r.arity, r.length, nested))
    return MessageSchema(name, tuple(fields))


class SchemaRegistry:
    """Name -> schema table. Reads are lock-free; registration is serialized."""

    def __init__(self, schemas: Iterable[MessageSchema] = ()):
        self._schemas: dict[str, MessageSchema] = {}
        self._lock = threading.Lock()
        for s in schemas:
            self.register(s)

    def __contains__(self, name: object) -> bool:
        return name in self._schemas

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._schemas))

    def __len__(self) -> int:
        return len(self._schemas)

    def get(self, name: str) -> MessageSchema:
        try:
            return self._schemas[name]
        except KeyError:
            raise UnknownTypeError(f"unknown message type {name!r}") from None

    def register(self, schema: MessageSchema) -> MessageSchema:
        with self._lock:
            existing = self._schemas.get(schema.name)
            if existing is not None and existing != schema:
                raise SchemaError(f"{schema.name} already registered with a different definition",
                                  1, 1, kind="redefinition")
            self._schemas[schema.name] = schema
        return schema

    def parse(self, source: str, name: str, origin: str | None = None) -> MessageSchema:
        return parse_schema(source, name, self, origin=origin)

    def load_dir(self, root: str | Path) -> list[MessageSchema]:
        """Load every ``<package>/<Name>.msg`` below ``root``, in dependency order."""
        root = Path(root)
        pending: dict[str, tuple[list[_RawField], str]] = {}
        for path in sorted(root.rglob("*.msg")):
            name = f"{path.parent.name}/{path.stem}"
            check_type_name(name)
            pending[name] = (_parse_lines(path.read_text(encoding="utf-8"), str(path)), str(path))
        return self._resolve_pending(pending)

    def load_builtin(self) -> list[MessageSchema]:
        pending: dict[str, tuple[list[_RawField], str]] = {}
        base = resources.files(__package__).joinpath("msgs")
        for pkg in sorted(base.iterdir(), key=lambda p: p.name):
            if not pkg.is_dir():
                continue
            for entry in sorted(pkg.iterdir(), key=lambda p: p.name):
                if entry.name.endswith(".msg"):
                    name = f"{pkg.name}/{entry.name[:-4]}"
                    pending[name] = (_parse_lines(entry.read_text(encoding="utf-8"), name), name)
        return self._resolve_pending(pending)

    def _resolve_pending(self, pending: dict[str, tuple[list[_RawField], str]]) -> list[MessageSchema]:
        done: dict[str, MessageSchema] = {}
        active: list[str] = []

        def resolve(name: str) -> MessageSchema:
            if name in done:
                return done[name]
            raw, origin = pending[name]
            active.append(name)

            def lookup(ref: str, r: _RawField) -> MessageSchema:
                if ref in active:
                    raise SchemaError(f"cyclic reference to {ref}", r.line, r.type_col,
                                      kind="cycle", source=origin)
                if ref in pending:
                    return resolve(ref)
                if ref in self._schemas:
                    return self._schemas[ref]
                raise SchemaError(f"unknown type {ref!r}", r.line, r.type_col,
                                  kind="unknown_type", source=origin)

            schema = _build(name, raw, lookup)
            active.pop()
            done[name] = schema
            return schema

        for name in pending:
            resolve(name)
        return [self.register(done[name]) for name in pending]


def parse_schema(source: str, name: str, registry: SchemaRegistry | None = None,
                 origin: str | None = None) -> MessageSchema:
    """Parse one definition named ``name`` (``package/Type``) and register it.

    Nested references resolve against ``registry``; unqualified names are
    looked up in the new type's own package. A type may not refer to itself.
    """
    check_type_name(name)
    registry = registry if registry is not None else SchemaRegistry()
    raw = _parse_lines(source, origin)

    def lookup(ref: str, r: _RawField) -> MessageSchema:
        if ref == name:
            raise SchemaError(f"cyclic reference to {ref}", r.line, r.type_col, kind="cycle", source=origin)
        if ref not in registry:
            raise SchemaError(f"unknown type {ref!r}", r.line, r.type_col, kind="unknown_type", source=origin)
        return registry.get(ref)

    return registry.register(_build(name, raw, lookup))


def default_registry(search_paths: Iterable[str | Path] = ()) -> SchemaRegistry:
    """Fresh registry holding the bundled std_msgs/geometry_msgs/example_interfaces types."""
    reg = SchemaRegistry()
    reg.load_builtin()
    for p in search_paths:
        reg.load_dir(p)
    return reg


def service_types(service_type: str) -> tuple[str, str]:
    """Request/response message names for a service type (``T`` -> ``T_Request``, ``T_Response``)."""
    return f"{service_type}_Request", f"{service_type}_Response"
