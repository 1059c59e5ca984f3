"""Node host: one isolated context per node, plus a supervisor.

Two scheduling modes share one behavior model:

* threaded (default): every node runs on its own thread against the wall
  clock and reaches the router through its own command channel;
* virtual (``seed`` given): a discrete-event scheduler drives all nodes on a
  virtual clock. Ticks due at the same instant are ordered by a per-node
  pseudo-random key derived from ``(seed, node, tick)``, so a node's presence
  never perturbs the relative order of its siblings.

A behavior exception becomes a ``failed`` event; the supervisor then
deregisters whatever the node left registered. Nothing else is affected.
"""

from __future__ import annotations

import logging
import queue
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

from ..connection import Connection, LocalConnection, RouterService
from ..errors import NodeError, StackmwError
from ..msgspec import MessageSchema, SchemaRegistry, normalize, yaml_to_json
from ..msgspec.yamlcodec import dumps_json
from ..participant import ServiceClient, ServiceServer, create_publisher, create_service_client
from ..participant import create_service_server, create_subscriber
from ..router import Router
from .behaviors import Behavior, make_behavior
from .clock import VirtualClock, WallClock, iso_time

log = logging.getLogger(__name__)

STARTED = "started"
STOPPED = "stopped"
FAILED = "failed"


@dataclass(frozen=True)
class NodeSpec:
    name: str
    behavior: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name or any(c.isspace() for c in self.name):
            raise NodeError(f"node name must be a non-empty word, got {self.name!r}")
        period = self.params.get("period_ms")
        if period is not None and not (isinstance(period, (int, float)) and period > 0):
            raise NodeError(f"node {self.name}: period_ms must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "NodeSpec":
        if not isinstance(d, dict):
            raise NodeError(f"node entry must be a mapping, got {d!r}")
        unknown = set(d) - {"name", "behavior", "params"}
        if unknown:
            raise NodeError(f"unknown node keys {sorted(unknown)}")
        try:
            return cls(d["name"], d["behavior"], dict(d.get("params") or {}))
        except KeyError as exc:
            raise NodeError(f"node entry missing {exc.args[0]!r}") from None


@dataclass(frozen=True)
class NodeEvent:
    node: str
    kind: str
    detail: str
    timestamp: float

    def __post_init__(self):
        if self.kind == FAILED and not self.detail:
            raise ValueError("failed events need a detail")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail}


class Transcript:
    """Thread-safe line log: ``<iso-time> <node> <PUB|RECV|EVENT> <topic> <payload-json>``."""

    def __init__(self, sink: Callable[[str], None] | None = None):
        self.lines: list[str] = []
        self._lock = threading.Lock()
        self.sink = sink

    def write(self, t: float, node: str, kind: str, topic: str, payload_json: str) -> None:
        line = f"{iso_time(t)} {node} {kind} {topic} {payload_json}"
        with self._lock:
            self.lines.append(line)
            if self.sink is not None:
                self.sink(line)

    def for_node(self, node: str) -> list[str]:
        return [ln for ln in self.lines if ln.split(" ", 2)[1] == node]

    def text(self) -> str:
        return "\n".join(self.lines)


class NodeContext:
    """What a behavior sees: its clock, its participants, and its log."""

    def __init__(self, host: "NodeHost", name: str, connection: Connection):
        self.host = host
        self.name = name
        self.connection = connection
        self.registry: SchemaRegistry = connection.registry
        self.participants: list[Any] = []

    def now(self) -> float:
        return self.host.clock.now()

    def _track(self, p: Any) -> Any:
        self.participants.append(p)
        return p

    def create_publisher(self, topic: str, type_name: str):
        return self._track(create_publisher(self.connection, topic, type_name, self.name, self.registry))

    def create_subscriber(self, topic: str, type_name: str):
        return self._track(create_subscriber(self.connection, topic, type_name, self.name, self.registry))

    def create_service_server(self, service: str, type_name: str) -> ServiceServer:
        return self._track(create_service_server(self.connection, service, type_name, self.name, self.registry))

    def create_service_client(self, service: str, type_name: str) -> ServiceClient:
        return self._track(create_service_client(self.connection, service, type_name, self.name, self.registry))

    def log(self, kind: str, topic: str, payload_json: str) -> None:
        self.host.transcript.write(self.now(), self.name, kind, topic, payload_json)

    def log_message(self, kind: str, topic: str, schema: MessageSchema, value: dict) -> None:
        self.log(kind, topic, dumps_json(normalize(schema, value)))

    def log_yaml(self, kind: str, topic: str, payload: str) -> None:
        self.log(kind, topic, yaml_to_json(payload))

    def release(self) -> int:
        """Deregister every participant still registered; returns how many were removed."""
        n = 0
        for p in reversed(self.participants):
            if p.registered:
                try:
                    p.deregister()
                    n += 1
                except StackmwError as exc:
                    log.debug("release of %r failed: %s", p, exc)
        return n


class NodeHandle:
    def __init__(self, spec: NodeSpec, behavior: Behavior, ctx: NodeContext):
        self.spec = spec
        self.behavior = behavior
        self.ctx = ctx
        self.state = "starting"
        self.period_us = max(1, round(behavior.period_ms * 1000))
        self.ticks = 0
        self.thread: threading.Thread | None = None
        self.stop_flag = threading.Event()
        self.quiesced = threading.Event()
        self.finalize = threading.Event()
        self.done = threading.Event()
        self.started = threading.Event()

    @property
    def name(self) -> str:
        return self.spec.name

    def __repr__(self) -> str:
        return f"<NodeHandle {self.name} {self.spec.behavior} {self.state}>"


class NodeHost:
    def __init__(self, router: Router | None = None, *, connect: Callable[[str], Connection] | None = None,
                 seed: int | None = None, transcript: Transcript | None = None,
                 start_time: float = 0.0):
        if router is None and connect is None:
            router = Router()
        self.router = router
        self.seed = seed
        self.virtual = seed is not None
        self.clock = VirtualClock(start_time) if self.virtual else WallClock()
        self.transcript = transcript or Transcript()
        self.nodes: dict[str, NodeHandle] = {}
        self.events: list[NodeEvent] = []
        self._event_queue: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._closed = False
        self._service: RouterService | None = None
        if connect is not None:
            self._connect = connect
        elif self.virtual:
            self._connect = lambda name: LocalConnection(router)
        else:
            self._service = RouterService(router).start()
            self._connect = lambda name: self._service.connect()
        self._vstart_us = round(self.clock.now() * 1e6) if self.virtual else 0
        self._now_us = self._vstart_us
        self._notices: queue.Queue = queue.Queue()
        self._supervisor: threading.Thread | None = None
        if not self.virtual:
            self._supervisor = threading.Thread(target=self._supervise_loop, name="supervisor", daemon=True)
            self._supervisor.start()

    # events --------------------------------------------------------------------

    def _emit(self, node: str, kind: str, detail: str = "") -> NodeEvent:
        ev = NodeEvent(node, kind, detail, self.clock.now())
        with self._lock:
            self.events.append(ev)
        self._event_queue.put(ev)
        self.transcript.write(ev.timestamp, node, "EVENT", "-", dumps_json(ev.to_dict()))
        return ev

    def supervise(self, timeout: float | None = None) -> Iterator[NodeEvent]:
        """Yield node events in order until the host has shut down and the stream is drained."""
        while True:
            try:
                ev = self._event_queue.get(timeout=timeout)
            except queue.Empty:
                return
            if ev is None:
                self._event_queue.put(None)
                return
            yield ev

    @property
    def failures(self) -> list[NodeEvent]:
        return [e for e in self.events if e.kind == FAILED]

    # supervisor ------------------------------------------------------------------

    def _supervise_loop(self) -> None:
        while True:
            notice = self._notices.get()
            if notice is None:
                return
            handle, exc = notice
            self._handle_failure(handle, exc)

    def _handle_failure(self, handle: NodeHandle, exc: BaseException) -> None:
        handle.state = FAILED
        removed = handle.ctx.release()
        detail = ": ".join(filter(None, [type(exc).__name__, str(exc)]))
        log.warning("node %s failed (%s); released %d participants", handle.name, detail, removed)
        self._emit(handle.name, FAILED, detail)
        handle.done.set()

    def _fail(self, handle: NodeHandle, exc: BaseException) -> None:
        handle.state = FAILED
        if self.virtual:
            self._handle_failure(handle, exc)
        else:
            self._notices.put((handle, exc))

    # lifecycle -----------------------------------------------------------------

    def spawn_node(self, spec: NodeSpec | dict) -> NodeHandle:
        if isinstance(spec, dict):
            spec = NodeSpec.from_dict(spec)
        if self._closed:
            raise NodeError("host is shut down")
        with self._lock:
            if spec.name in self.nodes:
                raise NodeError(f"duplicate node name {spec.name!r}")
            behavior = make_behavior(spec.behavior, spec.params)
            handle = NodeHandle(spec, behavior, None)  # type: ignore[arg-type]
            self.nodes[spec.name] = handle
        try:
            handle.ctx = NodeContext(self, spec.name, self._connect(spec.name))
        except BaseException:
            with self._lock:
                del self.nodes[spec.name]
            raise
        if self.virtual:
            self._start(handle)
        else:
            handle.thread = threading.Thread(target=self._thread_main, args=(handle,),
                                             name=f"node-{spec.name}", daemon=True)
            handle.thread.start()
            handle.started.wait()
        return handle

    def _start(self, handle: NodeHandle) -> bool:
        try:
            handle.behavior.start(handle.ctx)
        except Exception as exc:
            self._fail(handle, exc)
            return False
        handle.state = "running"
        handle.base_us = self._now_us
        self._emit(handle.name, STARTED)
        return True

    def _thread_main(self, handle: NodeHandle) -> None:
        ok = self._start(handle)
        handle.started.set()
        if not ok:
            handle.quiesced.set()
            return
        period = handle.period_us / 1e6
        due = time.monotonic() + period
        while not handle.stop_flag.wait(max(0.0, due - time.monotonic())):
            try:
                handle.behavior.tick(handle.ctx)
            except Exception as exc:
                handle.quiesced.set()
                self._fail(handle, exc)
                return
            handle.ticks += 1
            due += period
        handle.quiesced.set()
        handle.finalize.wait()
        self._finish(handle)

    def _finish(self, handle: NodeHandle) -> None:
        try:
            handle.behavior.stop(handle.ctx)
        except Exception as exc:
            self._fail(handle, exc)
            return
        handle.ctx.release()
        handle.state = STOPPED
        self._emit(handle.name, STOPPED)
        handle.done.set()

    def stop_node(self, name: str) -> None:
        handle = self.nodes.get(name)
        if handle is None or handle.state != "running":
            raise NodeError(f"node {name!r} is not running")
        self._stop_handles([handle])

    def _stop_handles(self, handles: list[NodeHandle]) -> None:
        handles = [h for h in handles if h.state == "running"]
        if self.virtual:
            for h in handles:
                self._finish(h)
            return
        for h in handles:
            h.stop_flag.set()
        for h in handles:
            h.quiesced.wait()
        for h in handles:
            h.finalize.set()
        for h in handles:
            if h.thread is not None:
                h.thread.join()
            h.done.wait()

    # running ---------------------------------------------------------------------

    def _priority(self, handle: NodeHandle, tick: int) -> float:
        return random.Random(f"{self.seed}/{handle.name}/{tick}").random()

    def run_for(self, seconds: float) -> None:
        """Advance the host by ``seconds`` (virtual time, or a wall-clock sleep)."""
        if not self.virtual:
            time.sleep(seconds)
            return
        end_us = self._now_us + round(seconds * 1e6)
        while True:
            best = None
            for h in self.nodes.values():
                if h.state != "running":
                    continue
                due = h.base_us + (h.ticks + 1) * h.period_us
                if due > end_us:
                    continue
                key = (due, self._priority(h, h.ticks + 1))
                if best is None or key < best[0]:
                    best = (key, h)
            if best is None:
                break
            (due, _), h = best
            self._set_now(due)
            h.ticks += 1
            try:
                h.behavior.tick(h.ctx)
            except Exception as exc:
                self._fail(h, exc)
        self._set_now(end_us)

    def _set_now(self, us: int) -> None:
        self._now_us = us
        self.clock.set(us / 1e6)

    def shutdown(self) -> list[NodeEvent]:
        """Stop every running node (final drains included) and close the event stream."""
        if self._closed:
            return list(self.events)
        self._closed = True
        self._stop_handles(list(self.nodes.values()))
        if self._supervisor is not None:
            for h in self.nodes.values():
                if h.thread is not None:
                    h.thread.join()
            self._notices.put(None)
            self._supervisor.join()
        for h in self.nodes.values():
            try:
                h.ctx.connection.close()
            except Exception:
                pass
        if self._service is not None:
            self._service.stop()
        self._event_queue.put(None)
        return list(self.events)

    def __enter__(self) -> "NodeHost":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()


def spawn_node(host: NodeHost, spec: NodeSpec | dict) -> NodeHandle:
    return host.spawn_node(spec)


def stop_node(host: NodeHost, name: str) -> None:
    host.stop_node(name)


def supervise(host: NodeHost, timeout: float | None = None) -> Iterator[NodeEvent]:
    return host.supervise(timeout)
