"""Graph config file: ``router:``, ``schemas:``, ``nodes:`` and an optional ``bridge:``."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError, StackmwError
from .msgspec import SchemaRegistry, default_registry, load_yaml, service_types
from .nodehost import NodeSpec
from .router import RouterConfig

_DEFAULT_TYPES = {
    "talker": "std_msgs/String",
    "listener": "std_msgs/String",
    "service_server": "example_interfaces/AddTwoInts",
    "service_client": "example_interfaces/AddTwoInts",
}


@dataclass
class GraphConfig:
    router: RouterConfig = field(default_factory=RouterConfig)
    nodes: list[NodeSpec] = field(default_factory=list)
    schema_paths: list[Path] = field(default_factory=list)
    bridge: dict | None = None
    registry: SchemaRegistry | None = None

    def node_specs(self) -> list[NodeSpec]:
        """Nodes plus the bridge (as a ``device_bridge`` node) when configured."""
        specs = list(self.nodes)
        if self.bridge is not None:
            b = dict(self.bridge)
            name = b.pop("name", "bridge")
            specs.append(NodeSpec(name, "device_bridge", b))
        return specs


def parse_config(data: Any, base_dir: Path = Path(".")) -> GraphConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping with router/schemas/nodes sections")
    unknown = set(data) - {"router", "schemas", "nodes", "bridge"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    try:
        router = RouterConfig.from_dict(data.get("router"))
        paths = [base_dir / p for p in (data.get("schemas") or [])]
        registry = default_registry(paths)
        nodes = [NodeSpec.from_dict(n) for n in (data.get("nodes") or [])]
    except ConfigError:
        raise
    except (StackmwError, OSError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    cfg = GraphConfig(router, nodes, paths, data.get("bridge"), registry)
    _check(cfg)
    return cfg


def _check(cfg: GraphConfig) -> None:
    seen: set[str] = set()
    try:
        specs = cfg.node_specs()
    except StackmwError as exc:
        raise ConfigError(str(exc)) from None
    for spec in specs:
        if spec.name in seen:
            raise ConfigError(f"duplicate node name {spec.name!r}")
        seen.add(spec.name)
        type_name = spec.params.get("type", _DEFAULT_TYPES.get(spec.behavior))
        if type_name is None:
            continue
        needed = service_types(type_name) if spec.behavior.startswith("service_") else (type_name,)
        for t in needed:
            if t not in cfg.registry:
                raise ConfigError(f"node {spec.name}: unknown message type {t!r}")
    if cfg.bridge is not None:
        from .devbridge import BridgeMap

        try:
            bmap = BridgeMap.from_dict(cfg.bridge)
        except (StackmwError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad bridge section: {exc!r}") from None
        for m in bmap.mappings:
            if m.type_name not in cfg.registry:
                raise ConfigError(f"bridge topic {m.topic}: unknown message type {m.type_name!r}")


def load_config(path: str | Path) -> GraphConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = load_yaml(text)
    except StackmwError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, path.parent)
