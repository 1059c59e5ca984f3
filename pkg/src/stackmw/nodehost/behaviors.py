"""Built-in node behaviors.

A behavior is driven by its host: ``start`` once, ``tick`` every
``period_ms``, ``stop`` once on clean shutdown. Behaviors talk to the router
only through the participants their context creates.
"""

from __future__ import annotations

import importlib
from typing import TYPE_CHECKING, Any, Callable

from ..errors import NodeError

if TYPE_CHECKING:
    from .host import NodeContext


class Behavior:
    period_ms: float = 100.0

    def start(self, ctx: "NodeContext") -> None:
        pass

    def tick(self, ctx: "NodeContext") -> None:
        pass

    def stop(self, ctx: "NodeContext") -> None:
        pass


def _positive_period(value: Any, default: float) -> float:
    period = float(default if value is None else value)
    if not period > 0:
        raise NodeError(f"period_ms must be > 0, got {value!r}")
    return period


def fill_template(template: Any, **fields: Any) -> Any:
    """Format every string leaf of ``template`` with ``fields`` (e.g. ``{count}``)."""
    if isinstance(template, str):
        return template.format(**fields)
    if isinstance(template, dict):
        return {k: fill_template(v, **fields) for k, v in template.items()}
    if isinstance(template, list):
        return [fill_template(v, **fields) for v in template]
    return template


class Talker(Behavior):
    """Publishes ``payload`` (templated with ``{count}``) or cycles through ``values``."""

    def __init__(self, topic: str, type: str = "std_msgs/String", period_ms: float | None = None,
                 payload: Any = None, values: list | None = None, count: int | None = None):
        self.topic = topic
        self.type_name = type
        self.period_ms = _positive_period(period_ms, 500.0)
        self.payload = {"data": "Hello World: {count}"} if payload is None else payload
        if values is not None and not values:
            raise NodeError("values must be a non-empty list")
        self.values = values
        self.limit = count
        self.sent = 0

    def start(self, ctx: "NodeContext") -> None:
        self.pub = ctx.create_publisher(self.topic, self.type_name)

    def next_value(self) -> Any:
        if self.values is not None:
            return self.values[self.sent % len(self.values)]
        return fill_template(self.payload, count=self.sent + 1)

    def tick(self, ctx: "NodeContext") -> None:
        if self.limit is not None and self.sent >= self.limit:
            return
        value = self.next_value()
        self.pub.publish(value)
        self.sent += 1
        ctx.log_message("PUB", self.topic, self.pub.schema, value)


class Listener(Behavior):
    """Drains its subscription every tick and logs each message.

    ``fail_after=N`` raises while handling the Nth message (fault injection).
    """

    def __init__(self, topic: str, type: str = "std_msgs/String", period_ms: float | None = None,
                 fail_after: int | None = None):
        self.topic = topic
        self.type_name = type
        self.period_ms = _positive_period(period_ms, 100.0)
        self.fail_after = fail_after
        self.received = 0

    def start(self, ctx: "NodeContext") -> None:
        self.sub = ctx.create_subscriber(self.topic, self.type_name)

    def drain(self, ctx: "NodeContext") -> None:
        for env in self.sub.take_envelopes(None):
            value = self.sub.decode(env)
            self.received += 1
            if self.fail_after is not None and self.received >= self.fail_after:
                raise RuntimeError(f"injected fault on message {self.received}")
            ctx.log_message("RECV", self.topic, self.sub.schema, value)

    tick = drain
    stop = drain


def add_two_ints(request: dict) -> dict:
    return {"sum": request["a"] + request["b"]}


HANDLERS: dict[str, Callable[[dict], dict]] = {"add_two_ints": add_two_ints}


def _load_callable(ref: str) -> Callable:
    module, sep, attr = ref.partition(":")
    if not sep:
        raise NodeError(f"expected 'module:callable', got {ref!r}")
    try:
        return getattr(importlib.import_module(module), attr)
    except (ImportError, AttributeError) as exc:
        raise NodeError(f"cannot load {ref!r}: {exc}") from None


class ServiceServerBehavior(Behavior):
    def __init__(self, service: str, type: str = "example_interfaces/AddTwoInts",
                 handler: str = "add_two_ints", period_ms: float | None = None):
        self.service = service
        self.type_name = type
        self.handler = HANDLERS.get(handler) or _load_callable(handler)
        self.period_ms = _positive_period(period_ms, 50.0)

    def start(self, ctx: "NodeContext") -> None:
        self.server = ctx.create_service_server(self.service, self.type_name)

    def tick(self, ctx: "NodeContext") -> None:
        while (taken := self.server.take_request()) is not None:
            request, rid = taken
            ctx.log_message("RECV", self.server.request_topic, self.server.request_schema, request)
            response = self.handler(request)
            self.server.send_response(rid, response)
            ctx.log_message("PUB", self.server.response_topic, self.server.response_schema, response)


class ServiceClientBehavior(Behavior):
    """Waits for the service, then sends ``requests`` one per tick and logs the answers."""

    def __init__(self, service: str, type: str = "example_interfaces/AddTwoInts",
                 requests: list | None = None, period_ms: float | None = None):
        self.service = service
        self.type_name = type
        self.requests = list(requests) if requests is not None else [{"a": 2, "b": 3}]
        self.period_ms = _positive_period(period_ms, 100.0)
        self.next_index = 0
        self.responses: list[tuple[dict, Any]] = []

    def start(self, ctx: "NodeContext") -> None:
        self.client = ctx.create_service_client(self.service, self.type_name)

    def tick(self, ctx: "NodeContext") -> None:
        self.collect(ctx)
        if self.next_index < len(self.requests) and self.client.is_service_available():
            request = self.requests[self.next_index]
            self.client.send_request(request)
            self.next_index += 1
            ctx.log_message("PUB", self.client.request_topic, self.client.request_schema, request)

    def collect(self, ctx: "NodeContext") -> None:
        while (got := self.client.take_response()) is not None:
            self.responses.append(got)
            ctx.log_message("RECV", self.client.response_topic, self.client.response_schema, got[0])

    stop = collect


def _custom(factory: str, **params: Any) -> Behavior:
    return _load_callable(factory)(**params)


BEHAVIORS: dict[str, Callable[..., Behavior]] = {
    "talker": Talker,
    "listener": Listener,
    "service_server": ServiceServerBehavior,
    "service_client": ServiceClientBehavior,
    "custom": _custom,
}


def register_behavior(name: str, factory: Callable[..., Behavior]) -> None:
    BEHAVIORS[name] = factory


def make_behavior(name: str, params: dict) -> Behavior:
    factory = BEHAVIORS.get(name)
    if factory is None:
        raise NodeError(f"unknown behavior {name!r}; known: {sorted(BEHAVIORS)}")
    try:
        return factory(**params)
    except TypeError as exc:
        raise NodeError(f"bad parameters for {name}: {exc}") from None
