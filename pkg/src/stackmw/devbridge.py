"""Bridge from middleware topics to a line-protocol device, plus a mock device.

Device protocol (UTF-8, one command per line, one reply per command)::

    LED <color>            ->  OK | ERR
    MOVE <linear> <angular> ->  OK | ERR
"""

from __future__ import annotations

import logging
import math
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from .connection import as_connection
from .errors import StackmwError, TranslationError
from .msgspec import ensure_valid
from .nodehost.behaviors import Behavior, register_behavior
from .participant import Subscriber
from .wire import parse_endpoint, format_endpoint

log = logging.getLogger(__name__)

LED_COLORS = ("off", "pink", "purple", "blue", "lightblue", "cyan", "green",
              "yellow", "orange", "red", "white")

TRANSLATOR_TYPES = {"led_color": "std_msgs/String", "twist_drive": "geometry_msgs/Twist"}


@dataclass(frozen=True)
class DeviceCommand:
    verb: str
    args: tuple

    def __post_init__(self):
        if self.verb == "LED":
            if len(self.args) != 1 or self.args[0] not in LED_COLORS:
                raise TranslationError(f"LED color must be one of {LED_COLORS}, got {self.args!r}")
        elif self.verb == "MOVE":
            if len(self.args) != 2 or not all(isinstance(a, float) and math.isfinite(a) for a in self.args):
                raise TranslationError(f"MOVE needs two finite floats, got {self.args!r}")
        else:
            raise TranslationError(f"unknown verb {self.verb!r}")

    def to_line(self) -> str:
        return " ".join([self.verb, *(a if isinstance(a, str) else repr(a) for a in self.args)]) + "\n"

    @classmethod
    def parse(cls, line: str) -> "DeviceCommand":
        parts = line.split()
        if not parts:
            raise TranslationError("empty command")
        verb, rest = parts[0], parts[1:]
        if verb == "MOVE":
            try:
                return cls(verb, tuple(float(p) for p in rest))
            except ValueError:
                raise TranslationError(f"MOVE arguments must be floats: {line!r}") from None
        return cls(verb, tuple(rest))

    def as_tuple(self) -> tuple:
        return (self.verb, *self.args)


def translate(value: dict, translator: str) -> DeviceCommand:
    """Map one topic message to one device command."""
    if translator == "led_color":
        color = value.get("data") if isinstance(value, dict) else None
        if not isinstance(color, str) or color not in LED_COLORS:
            raise TranslationError(f"color {color!r} is not in the allowed set")
        return DeviceCommand("LED", (color,))
    if translator == "twist_drive":
        try:
            lin = float(value["linear"]["x"])
            ang = float(value["angular"]["z"])
        except (KeyError, TypeError, ValueError):
            raise TranslationError(f"not a Twist: {value!r}") from None
        if not (math.isfinite(lin) and math.isfinite(ang)):
            raise TranslationError(f"non-finite velocity ({lin}, {ang})")
        return DeviceCommand("MOVE", (lin, ang))
    raise TranslationError(f"unknown translator {translator!r}")


# mock device -----------------------------------------------------------------


class MockDevice:
    """TCP/unix line server standing in for the robot; every accepted command is logged."""

    def __init__(self, endpoint: str = "tcp://127.0.0.1:0"):
        family, address = parse_endpoint(endpoint)
        self._sock = socket.socket(family, socket.SOCK_STREAM)
        if family == socket.AF_INET:
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(address)
        self._sock.listen()
        self._sock.settimeout(0.1)
        self.endpoint = format_endpoint(family, self._sock.getsockname())
        self.log: list[tuple] = []
        self.errors: list[str] = []
        self.led: str | None = None
        self.velocity: tuple[float, float] = (0.0, 0.0)
        self._lock = threading.Lock()
        self._conns: list[socket.socket] = []
        self._running = True
        self._thread = threading.Thread(target=self._accept_loop, name="mock-device", daemon=True)
        self._thread.start()

    def handle_line(self, line: str) -> str:
        try:
            cmd = DeviceCommand.parse(line)
        except TranslationError:
            with self._lock:
                self.errors.append(line)
            return "ERR"
        with self._lock:
            self.log.append(cmd.as_tuple())
            if cmd.verb == "LED":
                self.led = cmd.args[0]
            else:
                self.velocity = cmd.args
        return "OK"

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            with self._lock:
                self._conns.append(conn)
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        with conn, conn.makefile("rwb") as f:
            while True:
                try:
                    raw = f.readline()
                except OSError:
                    return
                if not raw:
                    return
                line = raw.decode("utf-8", "replace").rstrip("\r\n")
                try:
                    f.write((self.handle_line(line) + "\n").encode())
                    f.flush()
                except OSError:
                    return

    def snapshot(self) -> list[tuple]:
        with self._lock:
            return list(self.log)

    def drop_connections(self) -> None:
        with self._lock:
            conns, self._conns = self._conns, []
        for c in conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def close(self) -> None:
        self._running = False
        self._thread.join()
        self._sock.close()
        self.drop_connections()

    def __enter__(self) -> "MockDevice":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def mock_device(endpoint: str = "tcp://127.0.0.1:0") -> MockDevice:
    return MockDevice(endpoint)


# bridge ----------------------------------------------------------------------


@dataclass(frozen=True)
class BridgeMapping:
    topic: str
    translator: str
    type_name: str | None = None

    def __post_init__(self):
        if self.translator not in TRANSLATOR_TYPES:
            raise TranslationError(f"translator must be one of {sorted(TRANSLATOR_TYPES)}")
        if self.type_name is None:
            object.__setattr__(self, "type_name", TRANSLATOR_TYPES[self.translator])


@dataclass(frozen=True)
class BridgeMap:
    mappings: tuple[BridgeMapping, ...]
    device: str

    def __post_init__(self):
        topics = [m.topic for m in self.mappings]
        if len(set(topics)) != len(topics):
            raise TranslationError(f"bridge topics must be distinct: {topics}")

    @classmethod
    def from_dict(cls, d: dict) -> "BridgeMap":
        mappings = tuple(BridgeMapping(m["topic"], m["translator"], m.get("type"))
                         for m in d.get("mappings", []))
        return cls(mappings, d["device"])


@dataclass
class BridgeEvent:
    kind: str
    detail: str
    timestamp: float = field(default_factory=time.time)


class DeviceLink:
    """Client side of the device line protocol, reconnecting on demand."""

    def __init__(self, endpoint: str, timeout: float = 2.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._file = None

    @property
    def connected(self) -> bool:
        return self._sock is not None

    def connect(self) -> None:
        family, address = parse_endpoint(self.endpoint)
        sock = socket.socket(family, socket.SOCK_STREAM)
        sock.settimeout(self.timeout)
        try:
            sock.connect(address)
        except OSError:
            sock.close()
            raise
        self._sock = sock
        self._file = sock.makefile("rwb")

    def send(self, cmd: DeviceCommand) -> str:
        assert self._file is not None
        try:
            self._file.write(cmd.to_line().encode())
            self._file.flush()
            reply = self._file.readline()
        except OSError:
            self.close()
            raise
        if not reply:
            self.close()
            raise ConnectionError("device closed the connection")
        return reply.decode().strip()

    def close(self) -> None:
        for obj in (self._file, self._sock):
            if obj is not None:
                try:
                    obj.close()
                except OSError:
                    pass
        self._sock = self._file = None


class DeviceBridge:
    """Polls one subscriber per mapping and forwards translated commands in order.

    While the device is unreachable nothing is fetched, so messages wait in
    the router's per-subscriber buffers (bounded by router capacity).
    """

    def __init__(self, bridge_map: BridgeMap, router: Any, name: str = "bridge",
                 clock: Callable[[], float] = time.monotonic,
                 backoff: tuple[float, float] = (0.05, 2.0),
                 on_forward: Callable[[BridgeMapping, dict, DeviceCommand], None] | None = None):
        self.map = bridge_map
        self.connection = as_connection(router)
        self.clock = clock
        self.backoff_min, self.backoff_max = backoff
        self._backoff = self.backoff_min
        self._next_attempt = 0.0
        self.link = DeviceLink(bridge_map.device)
        self.on_forward = on_forward
        self.events: list[BridgeEvent] = []
        self.forwarded: dict[str, int] = {m.topic: 0 for m in bridge_map.mappings}
        self.errors: dict[str, int] = {m.topic: 0 for m in bridge_map.mappings}
        self._pending: list[tuple[BridgeMapping, dict, DeviceCommand]] = []
        self.subscribers: list[tuple[BridgeMapping, Subscriber]] = []
        for m in bridge_map.mappings:
            self.connection.registry.get(m.type_name)
            self.subscribers.append((m, Subscriber(self.connection, name, m.topic, m.type_name)))

    def _event(self, kind: str, detail: str) -> None:
        log.info("bridge %s: %s", kind, detail)
        self.events.append(BridgeEvent(kind, detail))

    def _ensure_link(self) -> bool:
        if self.link.connected:
            return True
        now = self.clock()
        if now < self._next_attempt:
            return False
        try:
            self.link.connect()
        except OSError as exc:
            self._event("retry", f"device {self.map.device} unreachable ({exc}); next try in {self._backoff:.2f}s")
            self._next_attempt = now + self._backoff
            self._backoff = min(self._backoff * 2, self.backoff_max)
            return False
        self._backoff = self.backoff_min
        self._event("connected", self.map.device)
        return True

    def poll(self) -> int:
        """One pass over every mapping; returns the number of commands delivered."""
        delivered = 0
        if not self._ensure_link():
            return 0
        if not self._flush():
            return 0
        for m, sub in self.subscribers:
            for env in sub.take_envelopes(None):
                try:
                    value = sub.decode(env)
                    ensure_valid(sub.schema, value)
                    cmd = translate(value, m.translator)
                except StackmwError as exc:
                    self.errors[m.topic] += 1
                    self._event("error", f"{m.topic}: {exc}")
                    continue
                self._pending.append((m, value, cmd))
            before = sum(self.forwarded.values())
            if not self._flush():
                break
            delivered += sum(self.forwarded.values()) - before
        return delivered

    def _flush(self) -> bool:
        while self._pending:
            m, value, cmd = self._pending[0]
            try:
                reply = self.link.send(cmd)
            except (OSError, ConnectionError) as exc:
                self._event("disconnected", f"{self.map.device}: {exc}")
                self._next_attempt = self.clock() + self._backoff
                return False
            self._pending.pop(0)
            if reply == "OK":
                self.forwarded[m.topic] += 1
                if self.on_forward is not None:
                    self.on_forward(m, value, cmd)
            else:
                self.errors[m.topic] += 1
                self._event("error", f"device rejected {cmd.to_line().strip()!r}: {reply}")
        return True

    def close(self) -> None:
        for _, sub in self.subscribers:
            if sub.registered:
                try:
                    sub.deregister()
                except StackmwError:
                    pass
        self.link.close()


class BridgeHandle:
    def __init__(self, bridge: DeviceBridge, period: float):
        self.bridge = bridge
        self.period = period
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="device-bridge", daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        while not self._stop.wait(self.period):
            self.bridge.poll()

    @property
    def forwarded(self) -> dict[str, int]:
        return dict(self.bridge.forwarded)

    @property
    def events(self) -> list[BridgeEvent]:
        return list(self.bridge.events)

    def stop(self, drain: bool = True) -> None:
        self._stop.set()
        self._thread.join()
        if drain:
            self.bridge.poll()
        self.bridge.close()


def run_bridge(bridge_map: BridgeMap | dict, router: Any, period: float = 0.02) -> BridgeHandle:
    if isinstance(bridge_map, dict):
        bridge_map = BridgeMap.from_dict(bridge_map)
    return BridgeHandle(DeviceBridge(bridge_map, router), period)


class BridgeBehavior(Behavior):
    """Node-host wrapper so a bridge can run inside a graph like any other node."""

    def __init__(self, device: str, mappings: list[dict], period_ms: float = 20.0):
        self.map = BridgeMap.from_dict({"device": device, "mappings": mappings})
        self.period_ms = float(period_ms)

    def start(self, ctx) -> None:
        def forwarded(m: BridgeMapping, value: dict, cmd: DeviceCommand) -> None:
            ctx.log_message("RECV", m.topic, ctx.registry.get(m.type_name), value)

        self.bridge = DeviceBridge(self.map, ctx.connection, name=ctx.name, clock=ctx.now,
                                   on_forward=forwarded)
        ctx.participants.extend(sub for _, sub in self.bridge.subscribers)

    def tick(self, ctx) -> None:
        self.bridge.poll()

    def stop(self, ctx) -> None:
        self.bridge.poll()
        self.bridge.close()


register_behavior("device_bridge", BridgeBehavior)
