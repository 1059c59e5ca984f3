"""Random schema/value generator shared by the codec tests and the acceptance suite."""

from __future__ import annotations

import math
import random
import string
import struct

from stackmw.msgspec import SchemaRegistry, default_registry, parse_schema

INTS = {
    f"{'u' if u else ''}int{b}": ((0, (1 << b) - 1) if u else (-(1 << (b - 1)), (1 << (b - 1)) - 1))
    for b in (8, 16, 32, 64)
    for u in (False, True)
}
PRIMS = sorted(INTS) + ["float32", "float64", "bool", "string"]
TRICKY_STRINGS = [
    "", " ", "yes", "No", "null", "~", "1e3", "0x1F", "-", "- a", "a: b", "#x", "x #y", "'q'", '"dq"',
    "tab\there", "line\nbreak", "trailing ", " leading", "Hello World: 1", "ünï©ødé", "\x00\x07", "…",
    "[1, 2]", "{a: 1}", "*ref", "&anc", "!tag", "%dir", "@at", "`tick", ".inf", ".nan", "0.5", "True",
    " ", "﻿bom", "a\\b", "/topic_a", "geometry_msgs/Twist",
]


def float32_exact(x: float) -> float:
    return struct.unpack("<f", struct.pack("<f", x))[0]


def rand_float(rng: random.Random, t: str, nonfinite: bool) -> float:
    r = rng.random()
    if nonfinite and r < 0.15:
        return rng.choice([math.inf, -math.inf, math.nan])
    if r < 0.3:
        x = rng.choice([0.0, -0.0, 1.0, -1.0, 0.1, 1e-5, 1e16, 2.5e-308, 5e-324, 1.7976931348623157e308])
    elif r < 0.6:
        x = rng.uniform(-1000, 1000)
    else:
        x = rng.choice([-1, 1]) * math.ldexp(rng.random(), rng.randint(-120, 120))
    if t == "float32":
        if not abs(x) < 3.4e38:
            x = 1.5
        x = float32_exact(x)
    return x


def rand_string(rng: random.Random) -> str:
    if rng.random() < 0.4:
        return rng.choice(TRICKY_STRINGS)
    alphabet = string.printable + "äß€😀 \x85"
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))


def rand_leaf(rng: random.Random, t: str, nonfinite: bool = False):
    if t in INTS:
        lo, hi = INTS[t]
        return rng.choice([lo, hi, 0, rng.randint(lo, hi)])
    if t == "bool":
        return rng.random() < 0.5
    if t == "string":
        return rand_string(rng)
    return rand_float(rng, t, nonfinite)


class Case:
    """A generated schema family plus a conforming value for the top type."""

    def __init__(self, registry: SchemaRegistry, name: str, value: dict, specs: dict):
        self.registry = registry
        self.name = name
        self.value = value
        self.specs = specs  # type name -> list of (field, base, arity, length, nonfinite)

    @property
    def schema(self):
        return self.registry.get(self.name)


def random_case(rng: random.Random, case_id: int = 0) -> Case:
    registry = default_registry()
    pkg = f"gen{case_id}"
    specs: dict[str, list] = {}
    names: list[str] = []
    for i in range(rng.randint(1, 3)):
        name = f"{pkg}/T{i}"
        fields = []
        for j in range(rng.randint(0 if i else 1, 5)):
            if names and rng.random() < 0.3:
                base = rng.choice(names)
            elif rng.random() < 0.05:
                base = "geometry_msgs/Twist"
            else:
                base = rng.choice(PRIMS)
            arity = rng.choice(["scalar", "scalar", "fixed", "dynamic"])
            length = rng.randint(1, 4) if arity == "fixed" else None
            nonfinite = base.startswith("float") and rng.random() < 0.3
            fields.append((f"f{j}_{base.split('/')[-1].lower()}", base, arity, length, nonfinite))
        lines = []
        for fname, base, arity, length, nonfinite in fields:
            ref = base.split("/")[1] if base.startswith(pkg + "/") and rng.random() < 0.5 else base
            suffix = {"scalar": "", "dynamic": "[]"}.get(arity, f"[{length}]")
            lines.append(f"{ref}{suffix} {fname}" + (" @nonfinite" if nonfinite else ""))
        if rng.random() < 0.3:
            lines.insert(0, "# generated")
        parse_schema("\n".join(lines), name, registry)
        specs[name] = fields
        names.append(name)
    top = names[-1]
    return Case(registry, top, rand_value(rng, registry, top, specs), specs)


def rand_value(rng: random.Random, registry: SchemaRegistry, name: str, specs: dict, depth: int = 0) -> dict:
    if name not in specs:  # bundled type
        schema = registry.get(name)
        fields = [(f.name, f.nested.name if f.nested else f.type_name, f.arity, f.length, f.nonfinite)
                  for f in schema.fields]
    else:
        fields = specs[name]
    out = {}
    for fname, base, arity, length, nonfinite in fields:
        def one():
            if base in PRIMS:
                return rand_leaf(rng, base, nonfinite)
            return rand_value(rng, registry, base, specs, depth + 1)

        if arity == "scalar":
            out[fname] = one()
        elif arity == "fixed":
            out[fname] = [one() for _ in range(length)]
        else:
            out[fname] = [one() for _ in range(rng.randint(0, 3 if depth < 2 else 1))]
    return out


def same(a, b) -> bool:
    """Structural equality where NaN equals NaN and -0.0 is distinct from 0.0."""
    if isinstance(a, float) and isinstance(b, float):
        if math.isnan(a) or math.isnan(b):
            return math.isnan(a) and math.isnan(b)
        return a == b and math.copysign(1, a) == math.copysign(1, b)
    if type(a) is not type(b):
        return False
    if isinstance(a, dict):
        return list(a) == list(b) and all(same(a[k], b[k]) for k in a)
    if isinstance(a, list):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    return a == b


def has_nonfinite(v) -> bool:
    if isinstance(v, float):
        return not math.isfinite(v)
    if isinstance(v, dict):
        return any(has_nonfinite(x) for x in v.values())
    if isinstance(v, list):
        return any(has_nonfinite(x) for x in v)
    return False
