"""``stackmw`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import os
import signal
import sys
import threading
import time
from typing import Callable, TextIO

from . import devbridge  # noqa: F401  (registers the device_bridge behavior)
from .config import load_config
from .errors import ConfigError, RouterUnreachable, StackmwError, ValidationError
from .msgspec import default_registry, from_yaml, service_types, to_yaml
from .nodehost import NodeHost, Transcript
from .participant import create_publisher, create_service_client, create_subscriber
from .router import Router, RouterConfig
from .wire import DEFAULT_ENDPOINT, WireClient, serve_router

OK, FAILURE, USAGE = 0, 1, 2
POLL = 0.02


def default_endpoint() -> str:
    return os.environ.get("STACKMW_ENDPOINT", DEFAULT_ENDPOINT)


def _err(msg: str) -> None:
    print(f"stackmw: {msg}", file=sys.stderr)


def _registry(paths):
    return default_registry(paths or [])


# run -------------------------------------------------------------------------


def run(config_path: str, duration: float | None = None, seed: int | None = None,
        endpoint: str | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return USAGE
    if seed is not None and duration is None:
        _err("--seed needs --duration (virtual time does not pass on its own)")
        return USAGE
    if duration is not None and duration < 0:
        _err("--duration must be >= 0")
        return USAGE

    def sink(line: str) -> None:
        out.write(line + "\n")
        out.flush()

    transcript = Transcript(sink)
    if endpoint is not None:
        registry = cfg.registry

        def connect(name: str) -> WireClient:
            return WireClient(endpoint, node=name, registry=registry)

        try:
            connect("probe").close()
        except (RouterUnreachable, StackmwError) as exc:
            _err(str(exc))
            return FAILURE
        host = NodeHost(connect=connect, seed=seed, transcript=transcript)
    else:
        host = NodeHost(Router(cfg.router, cfg.registry), seed=seed, transcript=transcript)

    try:
        for spec in cfg.node_specs():
            host.spawn_node(spec)
        if duration is not None:
            host.run_for(duration)
        else:
            _wait_for_signal()
    except StackmwError as exc:
        host.shutdown()
        _err(str(exc))
        return USAGE
    except KeyboardInterrupt:
        pass
    host.shutdown()
    failed = host.failures
    for ev in failed:
        _err(f"node {ev.node} failed: {ev.detail}")
    return FAILURE if failed else OK


def _wait_for_signal(duration: float | None = None) -> None:
    stop = threading.Event()
    previous = signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait(duration)
    except KeyboardInterrupt:
        pass
    finally:
        signal.signal(signal.SIGTERM, previous)


# topic / service / graph -------------------------------------------------------


def _connect(endpoint: str, node: str, schemas) -> WireClient:
    return WireClient(endpoint, node=node, registry=_registry(schemas))


def _release(participant) -> None:
    if participant is not None and participant.registered:
        try:
            participant.deregister()
        except StackmwError:
            pass


def topic_echo(endpoint: str, topic: str, count: int | None, type_name: str | None = None,
               timeout: float | None = None, schemas=None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    if count == 0:
        return OK
    try:
        client = _connect(endpoint, "topic_echo", schemas)
    except RouterUnreachable as exc:
        _err(str(exc))
        return FAILURE
    sub = None
    try:
        if type_name is None:
            known = {t["topic"]: t["type"] for t in client.call("graph")["topics"]}
            type_name = known.get(topic)
            if type_name is None:
                _err(f"unknown topic {topic!r}: no type bound (pass --type)")
                return FAILURE
        sub = create_subscriber(client, topic, type_name, "topic_echo")
        printed = 0
        deadline = None if timeout is None else time.monotonic() + timeout
        while count is None or printed < count:
            value = sub.get_message()
            if value is None:
                if deadline is not None and time.monotonic() > deadline:
                    _err(f"timed out after {printed} messages")
                    return FAILURE
                time.sleep(POLL)
                continue
            out.write(to_yaml(sub.schema, value) + "\n---\n")
            out.flush()
            printed += 1
        return OK
    except KeyboardInterrupt:
        return OK
    except StackmwError as exc:
        _err(str(exc))
        return FAILURE
    finally:
        _release(sub)
        client.close()


def topic_pub(endpoint: str, topic: str, type_name: str, payload: str, rate: float = 1.0,
              count: int = 1, schemas=None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    if not rate > 0:
        _err("--rate must be > 0")
        return USAGE
    if count < 0:
        _err("--count must be >= 0")
        return USAGE
    registry = _registry(schemas)
    try:
        value = from_yaml(registry.get(type_name), payload, fill=True)
    except StackmwError as exc:
        _err(f"invalid payload: {exc}")
        return USAGE
    try:
        client = WireClient(endpoint, node="topic_pub", registry=registry)
    except RouterUnreachable as exc:
        _err(str(exc))
        return FAILURE
    pub = None
    try:
        pub = create_publisher(client, topic, type_name, "topic_pub")
        for i in range(count):
            if i:
                time.sleep(1.0 / rate)
            pub.publish(value)
            out.write(f"published #{i + 1} on {topic}\n")
        out.flush()
        return OK
    except StackmwError as exc:
        _err(str(exc))
        return FAILURE
    finally:
        _release(pub)
        client.close()


def service_call(endpoint: str, service: str, type_name: str, request: str, timeout: float = 5.0,
                 schemas=None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    registry = _registry(schemas)
    try:
        req_type, _ = service_types(type_name)
        value = from_yaml(registry.get(req_type), request)
    except StackmwError as exc:
        _err(f"invalid request: {exc}")
        return USAGE
    try:
        client = WireClient(endpoint, node="service_call", registry=registry)
    except RouterUnreachable as exc:
        _err(str(exc))
        return FAILURE
    sc = None
    try:
        sc = create_service_client(client, service, type_name, "service_call")
        deadline = time.monotonic() + timeout
        while not sc.is_service_available():
            if time.monotonic() > deadline:
                _err(f"service unavailable: {service} (waited {timeout}s)")
                return FAILURE
            time.sleep(POLL)
        sc.send_request(value)
        while (got := sc.take_response()) is None:
            if time.monotonic() > deadline:
                _err(f"no response from {service} within {timeout}s")
                return FAILURE
            time.sleep(POLL)
        out.write(to_yaml(sc.response_schema, got[0]) + "\n")
        out.flush()
        return OK
    except StackmwError as exc:
        _err(str(exc))
        return FAILURE
    finally:
        _release(sc)
        client.close()


def format_graph(summary: dict) -> str:
    def table(headers: list[str], rows: list[list[str]]) -> list[str]:
        widths = [max(len(str(x)) for x in col) for col in zip(headers, *rows)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        return [fmt.format(*headers).rstrip()] + [fmt.format(*map(str, r)).rstrip() for r in rows]

    lines = table(["TOPIC", "TYPE", "PUBLISHERS", "SUBSCRIBERS"],
                  [[t["topic"], t["type"], t["publishers"], t["subscribers"]] for t in summary["topics"]])
    lines.append("")
    lines += table(["SERVICE", "TYPE", "SERVERS", "CLIENTS"],
                   [[s["service"], s["type"], s["servers"], s["clients"]] for s in summary["services"]])
    return "\n".join(lines)


def graph(endpoint: str, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    try:
        with WireClient(endpoint, node="graph") as client:
            summary = client.call("graph")
    except RouterUnreachable as exc:
        _err(str(exc))
        return FAILURE
    out.write(format_graph(summary) + "\n")
    out.flush()
    return OK


# long-running servers ------------------------------------------------------------


def serve(endpoint: str, capacity: int, schemas=None, duration: float | None = None,
          out: TextIO | None = None) -> int:
    out = out or sys.stdout
    try:
        router = Router(RouterConfig(capacity), _registry(schemas))
    except StackmwError as exc:
        _err(str(exc))
        return USAGE
    try:
        server = serve_router(router, endpoint)
    except RouterUnreachable as exc:
        _err(str(exc))
        return FAILURE
    out.write(f"listening on {server.endpoint}\n")
    out.flush()
    try:
        _wait_for_signal(duration)
    finally:
        server.close()
    return OK


def run_mock_device(endpoint: str, duration: float | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    try:
        dev = devbridge.MockDevice(endpoint)
    except OSError as exc:
        _err(f"cannot bind {endpoint}: {exc}")
        return FAILURE
    out.write(f"device listening on {dev.endpoint}\n")
    out.flush()
    try:
        _wait_for_signal(duration)
    finally:
        dev.close()
    for entry in dev.snapshot():
        out.write(" ".join(map(str, entry)) + "\n")
    return OK


# argument parsing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--endpoint", default=None,
                        help=f"router address (default: $STACKMW_ENDPOINT or {DEFAULT_ENDPOINT})")
    common.add_argument("--schemas", action="append", default=[], metavar="DIR",
                        help="extra .msg search path (repeatable)")

    p = argparse.ArgumentParser(prog="stackmw", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run a node graph from a config file")
    r.add_argument("config")
    r.add_argument("--duration", type=float, default=None, help="seconds to run (virtual with --seed)")
    r.add_argument("--seed", type=int, default=None, help="deterministic virtual-clock mode")

    topic = sub.add_parser("topic", help="topic tools").add_subparsers(dest="topic_command", required=True)
    e = topic.add_parser("echo", parents=[common], help="print messages from a topic")
    e.add_argument("topic")
    e.add_argument("--count", type=int, default=None)
    e.add_argument("--type", dest="type_name", default=None)
    e.add_argument("--timeout", type=float, default=None)
    pb = topic.add_parser("pub", parents=[common], help="publish a YAML payload")
    pb.add_argument("topic")
    pb.add_argument("type_name", metavar="type")
    pb.add_argument("payload")
    pb.add_argument("--rate", type=float, default=1.0, help="messages per second")
    pb.add_argument("--count", type=int, default=1)

    svc = sub.add_parser("service", help="service tools").add_subparsers(dest="service_command", required=True)
    c = svc.add_parser("call", parents=[common], help="call a service once")
    c.add_argument("service")
    c.add_argument("type_name", metavar="type")
    c.add_argument("request")
    c.add_argument("--timeout", type=float, default=5.0)

    sub.add_parser("graph", parents=[common], help="print topics and services")

    s = sub.add_parser("serve", parents=[common], help="run a router behind a wire endpoint")
    s.add_argument("--capacity", type=int, default=RouterConfig().capacity)
    s.add_argument("--duration", type=float, default=None)

    d = sub.add_parser("mock-device", help="run a line-protocol mock device")
    d.add_argument("--endpoint", default="tcp://127.0.0.1:7412")
    d.add_argument("--duration", type=float, default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    endpoint = getattr(args, "endpoint", None)
    resolved: Callable[[], str] = lambda: endpoint or default_endpoint()
    try:
        if args.command == "run":
            return run(args.config, args.duration, args.seed, endpoint)
        if args.command == "topic" and args.topic_command == "echo":
            return topic_echo(resolved(), args.topic, args.count, args.type_name, args.timeout, args.schemas)
        if args.command == "topic" and args.topic_command == "pub":
            return topic_pub(resolved(), args.topic, args.type_name, args.payload, args.rate, args.count,
                             args.schemas)
        if args.command == "service":
            return service_call(resolved(), args.service, args.type_name, args.request, args.timeout,
                                args.schemas)
        if args.command == "graph":
            return graph(resolved())
        if args.command == "serve":
            return serve(resolved(), args.capacity, args.schemas, args.duration)
        if args.command == "mock-device":
            return run_mock_device(args.endpoint, args.duration)
    except ValueError as exc:
        _err(str(exc))
        return USAGE
    return USAGE


if __name__ == "__main__":
    sys.exit(main())
