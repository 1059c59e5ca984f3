"""The broker: participant registry, availability/graph queries and per-subscriber message stacks.

Every public method runs under one lock, so the router behaves as a single
ordered command stream no matter how many threads or wire sessions call it.
"""

from __future__ import annotations

import re
import threading
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, NamedTuple

from .errors import (
    ConfigError,
    CorrelationError,
    PatternError,
    PayloadError,
    RoleError,
    RouterError,
    SequenceError,
    StackmwError,
    TypeConflictError,
    UnknownGidError,
    UnknownTypeError,
)
from .msgspec import SchemaRegistry, default_registry, from_yaml, service_types

PUBLISHER = "publisher"
SUBSCRIBER = "subscriber"
SERVICE_SERVER = "service_server"
SERVICE_CLIENT = "service_client"
ROLES = (PUBLISHER, SUBSCRIBER, SERVICE_SERVER, SERVICE_CLIENT)
SERVICE_ROLES = (SERVICE_SERVER, SERVICE_CLIENT)

DEFAULT_CAPACITY = 1024
MAX_GID = (1 << 64) - 1


@dataclass(frozen=True)
class RouterConfig:
    capacity: int = DEFAULT_CAPACITY

    def __post_init__(self):
        if not isinstance(self.capacity, int) or isinstance(self.capacity, bool) or self.capacity < 1:
            raise ConfigError(f"capacity must be a positive integer, got {self.capacity!r}")

    @classmethod
    def from_dict(cls, data: dict | None) -> "RouterConfig":
        data = dict(data or {})
        unknown = set(data) - {"capacity"}
        if unknown:
            raise ConfigError(f"unknown router settings: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ParticipantRecord:
    gid: int
    name: str
    role: str
    topic: str
    type_name: str
    owner: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ParticipantRecord":
        return cls(d["gid"], d["name"], d["role"], d["topic"], d["type_name"], d.get("owner"))


class RequestId(NamedTuple):
    client_gid: int
    sequence: int


@dataclass(frozen=True)
class Envelope:
    sender_gid: int
    topic: str
    payload: str
    seq: int
    request_id: RequestId | None = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"sender_gid": self.sender_gid, "topic": self.topic,
                             "payload": self.payload, "seq": self.seq}
        if self.request_id is not None:
            d["request_id"] = list(self.request_id)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Envelope":
        rid = d.get("request_id")
        if rid is not None:
            if not (isinstance(rid, (list, tuple)) and len(rid) == 2
                    and all(isinstance(x, int) and not isinstance(x, bool) for x in rid)):
                raise CorrelationError(f"malformed request_id {rid!r}")
            rid = RequestId(*rid)
        try:
            return cls(d["sender_gid"], d["topic"], d["payload"], d["seq"], rid)
        except KeyError as exc:
            raise RouterError(f"envelope missing {exc.args[0]!r}") from None


def request_topic(service: str) -> str:
    return f"/{service.strip('/')}/request_topic"


def response_topic(service: str) -> str:
    return f"/{service.strip('/')}/response_topic"


@dataclass
class TopicStack:
    """Pending envelopes for one topic, one FIFO per subscriber.

    Despite the name, delivery is oldest-first. A full buffer drops its
    oldest entry and counts the drop.
    """

    topic: str
    capacity: int
    buffers: dict[int, deque] = field(default_factory=dict)
    dropped: dict[int, int] = field(default_factory=dict)

    def add(self, gid: int) -> None:
        self.buffers[gid] = deque()
        self.dropped[gid] = 0

    def remove(self, gid: int) -> None:
        self.buffers.pop(gid, None)
        self.dropped.pop(gid, None)

    def push(self, gid: int, env: Envelope) -> None:
        buf = self.buffers[gid]
        if len(buf) >= self.capacity:
            buf.popleft()
            self.dropped[gid] += 1
        buf.append(env)

    def drain(self, gid: int, limit: int | None) -> list[Envelope]:
        buf = self.buffers[gid]
        n = len(buf) if limit is None else min(limit, len(buf))
        return [buf.popleft() for _ in range(n)]


class Router:
    def __init__(self, config: RouterConfig | None = None, registry: SchemaRegistry | None = None):
        self.config = config or RouterConfig()
        self.registry = registry if registry is not None else default_registry()
        self._lock = threading.RLock()
        self._next_gid = 1
        self._records: dict[int, ParticipantRecord] = {}
        self._topic_types: dict[str, str] = {}
        self._service_types: dict[str, str] = {}
        self._stacks: dict[str, TopicStack] = {}
        self._last_seq: dict[int, int] = {}
        self.total_dropped = 0

    def __len__(self) -> int:
        return len(self._records)

    # registration ------------------------------------------------------------

    def register_participant(self, name: str, role: str, topic: str, type_name: str,
                             owner: int | None = None) -> int:
        with self._lock:
            if role not in ROLES:
                raise RoleError(f"unknown role {role!r}")
            if not isinstance(topic, str) or not topic:
                raise RouterError("topic/service name must be a non-empty string")
            if role in SERVICE_ROLES:
                for t in service_types(type_name):
                    if t not in self.registry:
                        raise UnknownTypeError(f"service type {type_name!r} needs {t!r}")
                bindings = self._service_types
            else:
                if type_name not in self.registry:
                    raise UnknownTypeError(f"unknown message type {type_name!r}")
                bindings = self._topic_types
            bound = bindings.get(topic)
            if bound is not None and bound != type_name:
                raise TypeConflictError(f"{topic!r} is bound to {bound}, not {type_name}")
            if owner is not None:
                parent = self._records.get(owner)
                if parent is None:
                    raise UnknownGidError(f"owner gid {owner} is not registered")
                if parent.role not in SERVICE_ROLES:
                    raise RoleError(f"owner gid {owner} is a {parent.role}, not a service participant")
            if self._next_gid > MAX_GID:
                raise RouterError("gid space exhausted")
            gid = self._next_gid
            self._next_gid += 1
            bindings[topic] = type_name
            self._records[gid] = ParticipantRecord(gid, name, role, topic, type_name, owner)
            if role == SUBSCRIBER:
                stack = self._stacks.get(topic)
                if stack is None:
                    stack = self._stacks[topic] = TopicStack(topic, self.config.capacity)
                stack.add(gid)
            return gid

    def deregister_participant(self, gid: int) -> list[int]:
        """Remove ``gid`` and any components it owns; returns every gid removed."""
        with self._lock:
            rec = self._records.get(gid)
            if rec is None:
                raise UnknownGidError(f"gid {gid} is not registered")
            removed = [g for g, r in self._records.items() if r.owner == gid] + [gid]
            for g in removed:
                self._drop(self._records.pop(g))
            return removed

    def _drop(self, rec: ParticipantRecord) -> None:
        self._last_seq.pop(rec.gid, None)
        if rec.role == SUBSCRIBER:
            stack = self._stacks[rec.topic]
            stack.remove(rec.gid)
            if not stack.buffers:
                del self._stacks[rec.topic]
        services = rec.role in SERVICE_ROLES
        if not any(r.topic == rec.topic and (r.role in SERVICE_ROLES) == services
                   for r in self._records.values()):
            (self._service_types if services else self._topic_types).pop(rec.topic, None)

    # traffic -------------------------------------------------------------------

    def route_publish(self, envelope: Envelope) -> int:
        with self._lock:
            rec = self._records.get(envelope.sender_gid)
            if rec is None:
                raise UnknownGidError(f"sender gid {envelope.sender_gid} is not registered")
            if rec.role != PUBLISHER:
                raise RoleError(f"gid {rec.gid} is a {rec.role}, not a publisher")
            if rec.topic != envelope.topic:
                raise RoleError(f"gid {rec.gid} publishes on {rec.topic!r}, not {envelope.topic!r}")
            seq = envelope.seq
            if isinstance(seq, bool) or not isinstance(seq, int):
                raise SequenceError(f"seq must be an integer, got {seq!r}")
            last = self._last_seq.get(rec.gid, 0)
            if seq <= last:
                raise SequenceError(f"seq {seq} not greater than previous {last} for gid {rec.gid}")
            owner = self._records.get(rec.owner) if rec.owner is not None else None
            rid = envelope.request_id
            if owner is not None:
                if rid is None:
                    raise CorrelationError(f"service traffic on {rec.topic!r} needs a request_id")
                if owner.role == SERVICE_CLIENT and rid.client_gid != owner.gid:
                    raise CorrelationError(f"request_id {tuple(rid)} not issued by client gid {owner.gid}")
            if not isinstance(envelope.payload, str):
                raise PayloadError("payload must be YAML text")
            try:
                from_yaml(self.registry.get(rec.type_name), envelope.payload)
            except StackmwError as exc:
                raise PayloadError(f"payload rejected for {rec.type_name}: {exc}") from None
            self._last_seq[rec.gid] = seq

            stack = self._stacks.get(envelope.topic)
            if stack is None:
                return 0
            delivered = 0
            for sub_gid in stack.buffers:
                if rid is not None and not self._wants_response(sub_gid, rid):
                    continue
                before = stack.dropped[sub_gid]
                stack.push(sub_gid, envelope)
                self.total_dropped += stack.dropped[sub_gid] - before
                delivered += 1
            return delivered

    def _wants_response(self, sub_gid: int, rid: RequestId) -> bool:
        sub = self._records[sub_gid]
        if sub.owner is None:
            return True
        owner = self._records[sub.owner]
        return owner.role != SERVICE_CLIENT or owner.gid == rid.client_gid

    def fetch_messages(self, gid: int, max: int | None = None) -> list[Envelope]:
        with self._lock:
            rec = self._records.get(gid)
            if rec is None:
                raise UnknownGidError(f"gid {gid} is not registered")
            if rec.role != SUBSCRIBER:
                raise RoleError(f"gid {gid} is a {rec.role}, not a subscriber")
            if max is not None and (isinstance(max, bool) or not isinstance(max, int) or max < 0):
                raise RouterError(f"max must be a non-negative integer, got {max!r}")
            return self._stacks[rec.topic].drain(gid, max)

    # queries -----------------------------------------------------------------

    def query_entities(self, role: str | None = None, name: str | None = None,
                       topic: str | None = None) -> list[ParticipantRecord]:
        """Snapshot of records matching every given filter; ``name`` is a full-match regex."""
        if role is not None and role not in ROLES:
            raise RoleError(f"unknown role {role!r}")
        pattern = None
        if name is not None:
            try:
                pattern = re.compile(name)
            except re.error as exc:
                raise PatternError(f"malformed name pattern {name!r}: {exc}") from None
        with self._lock:
            return [r for r in self._records.values()
                    if (role is None or r.role == role)
                    and (topic is None or r.topic == topic)
                    and (pattern is None or pattern.fullmatch(r.name))]

    def is_service_available(self, service: str) -> bool:
        return bool(self.query_entities(role=SERVICE_SERVER, topic=service))

    def graph_summary(self) -> dict:
        with self._lock:
            topics: dict[str, dict] = {}
            services: dict[str, dict] = {}
            for r in self._records.values():
                if r.role in SERVICE_ROLES:
                    entry = services.setdefault(r.topic, {"service": r.topic, "type": r.type_name,
                                                          "servers": 0, "clients": 0})
                    entry["servers" if r.role == SERVICE_SERVER else "clients"] += 1
                else:
                    entry = topics.setdefault(r.topic, {"topic": r.topic, "type": r.type_name,
                                                        "publishers": 0, "subscribers": 0})
                    entry["publishers" if r.role == PUBLISHER else "subscribers"] += 1
            return {"topics": [topics[k] for k in sorted(topics)],
                    "services": [services[k] for k in sorted(services)]}

    def stats(self) -> dict:
        """Buffer occupancy and drop counters per subscriber gid."""
        with self._lock:
            subs = {}
            for stack in self._stacks.values():
                for gid, buf in stack.buffers.items():
                    subs[gid] = {"topic": stack.topic, "buffered": len(buf), "dropped": stack.dropped[gid]}
            return {"participants": len(self._records), "total_dropped": self.total_dropped,
                    "subscribers": subs}

    # command stream --------------------------------------------------------------

    def execute(self, command: dict) -> dict:
        """Run one ``{"op": ..., "args": {...}}`` command; never raises for router errors."""
        op = command.get("op")
        args = command.get("args") or {}
        handler = _COMMANDS.get(op)
        try:
            if handler is None:
                raise RouterError(f"unknown op {op!r}")
            if not isinstance(args, dict):
                raise RouterError("args must be an object")
            return {"ok": True, "result": handler(self, args)}
        except StackmwError as exc:
            return {"ok": False, "error": {"code": exc.code, "message": str(exc)}}
        except (KeyError, TypeError, ValueError) as exc:
            return {"ok": False, "error": {"code": "router", "message": f"bad arguments for {op}: {exc!r}"}}


def _cmd_register(r: Router, a: dict) -> dict:
    return {"gid": r.register_participant(a["name"], a["role"], a["topic"], a["type_name"], a.get("owner"))}


def _cmd_deregister(r: Router, a: dict) -> dict:
    return {"removed": r.deregister_participant(a["gid"])}


def _cmd_publish(r: Router, a: dict) -> dict:
    return {"delivered": r.route_publish(Envelope.from_dict(a["envelope"]))}


def _cmd_fetch(r: Router, a: dict) -> dict:
    return {"envelopes": [e.to_dict() for e in r.fetch_messages(a["gid"], a.get("max"))]}


def _cmd_query(r: Router, a: dict) -> dict:
    recs = r.query_entities(a.get("role"), a.get("name"), a.get("topic"))
    return {"entities": [rec.to_dict() for rec in recs]}


def _cmd_graph(r: Router, a: dict) -> dict:
    return r.graph_summary()


def _cmd_stats(r: Router, a: dict) -> dict:
    s = r.stats()
    s["subscribers"] = {str(k): v for k, v in s["subscribers"].items()}
    return s


_COMMANDS = {
    "register": _cmd_register,
    "deregister": _cmd_deregister,
    "publish": _cmd_publish,
    "fetch": _cmd_fetch,
    "query": _cmd_query,
    "graph": _cmd_graph,
    "stats": _cmd_stats,
}

OPS: Iterable[str] = tuple(_COMMANDS)


def create_router(config: RouterConfig | dict | None = None, registry: SchemaRegistry | None = None) -> Router:
    if isinstance(config, dict):
        config = RouterConfig.from_dict(config)
    return Router(config, registry)
