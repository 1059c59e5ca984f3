"""Command channels from a participant's context to the router.

Every channel speaks the same ``{"op", "args"}`` / ``{"ok", "result" | "error"}``
dialect as the wire protocol, so participants cannot tell whether the router
lives in the same thread, behind a queue, or in another process.
"""

from __future__ import annotations

import json
import queue
import threading
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from typing import Any, Protocol

from .errors import RouterUnreachable, error_from_code
from .msgspec import SchemaRegistry
from .router import Router


class Connection(Protocol):
    registry: SchemaRegistry

    def call(self, op: str, **args: Any) -> Any: ...

    def close(self) -> None: ...


def unwrap(reply: dict) -> Any:
    if reply.get("ok"):
        return reply.get("result")
    err = reply.get("error") or {}
    raise error_from_code(err.get("code", "error"), err.get("message", "unknown error"))


def _frozen(args: dict) -> dict:
    # commands cross a context boundary: never hand the router a caller-owned object
    return json.loads(json.dumps(args))


class LocalConnection:
    """Direct, synchronous calls into an in-process router."""

    def __init__(self, router: Router):
        self.router = router
        self.registry = router.registry
        self.closed = False

    def call(self, op: str, **args: Any) -> Any:
        if self.closed:
            raise RouterUnreachable("connection closed")
        return unwrap(self.router.execute({"op": op, "args": _frozen(args)}))

    def close(self) -> None:
        self.closed = True


class RouterService:
    """Runs a router on its own thread, fed by one ordered command queue."""

    def __init__(self, router: Router):
        self.router = router
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._loop, name="router", daemon=True)
        self._running = False

    def start(self) -> "RouterService":
        self._running = True
        self._thread.start()
        return self

    def submit(self, command: dict) -> Future:
        fut: Future = Future()
        if not self._running:
            fut.set_exception(RouterUnreachable("router service is not running"))
            return fut
        self._queue.put((command, fut))
        return fut

    def _loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                break
            command, fut = item
            fut.set_result(self.router.execute(command))
        while not self._queue.empty():
            item = self._queue.get_nowait()
            if item is not None:
                item[1].set_exception(RouterUnreachable("router service stopped"))

    def connect(self) -> "QueueConnection":
        return QueueConnection(self)

    def stop(self) -> None:
        if self._running:
            self._running = False
            self._queue.put(None)
            self._thread.join()

    def __enter__(self) -> "RouterService":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


class QueueConnection:
    def __init__(self, service: RouterService, timeout: float = 10.0):
        self.service = service
        self.registry = service.router.registry
        self.timeout = timeout
        self.closed = False

    def call(self, op: str, **args: Any) -> Any:
        if self.closed:
            raise RouterUnreachable("connection closed")
        fut = self.service.submit({"op": op, "args": _frozen(args)})
        try:
            reply = fut.result(self.timeout)
        except FutureTimeout:
            raise RouterUnreachable(f"router did not answer {op} within {self.timeout}s") from None
        return unwrap(reply)

    def close(self) -> None:
        self.closed = True


def as_connection(target: Any) -> Connection:
    """Accept a router, a router service, or anything already speaking ``call``."""
    if isinstance(target, Router):
        return LocalConnection(target)
    if isinstance(target, RouterService):
        return target.connect()
    if hasattr(target, "call"):
        return target
    raise TypeError(f"cannot use {type(target).__name__} as a router connection")
