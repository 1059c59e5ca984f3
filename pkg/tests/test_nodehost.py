from __future__ import annotations

import json
import re
import time

import pytest

from stackmw.errors import NodeError
from stackmw.nodehost import NodeHost, NodeSpec
from stackmw.nodehost.behaviors import Behavior, register_behavior
from stackmw.nodehost.clock import iso_time
from stackmw.router import Router

LINE = re.compile(r"^(\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d\.\d{3}Z) (\S+) (PUB|RECV|EVENT) (\S+) (\{.*\})$")


def talker(name, topic, period_ms=500, **params):
    return {"name": name, "behavior": "talker", "params": {"topic": topic, "period_ms": period_ms, **params}}


def listener(name, topic, period_ms=100, **params):
    return {"name": name, "behavior": "listener", "params": {"topic": topic, "period_ms": period_ms, **params}}


def payloads(lines, kind, topic):
    out = []
    for ln in lines:
        m = LINE.match(ln)
        assert m, ln
        if m.group(3) == kind and m.group(4) == topic:
            out.append(json.loads(m.group(5))["data"])
    return out


def run_virtual(specs, seconds, seed=1):
    router = Router()
    host = NodeHost(router, seed=seed)
    for s in specs:
        host.spawn_node(s)
    host.run_for(seconds)
    host.shutdown()
    return host, router


def test_iso_time():
    assert iso_time(0) == "1970-01-01T00:00:00.000Z"
    assert iso_time(1.5) == "1970-01-01T00:00:01.500Z"


def test_nodespec_validation():
    with pytest.raises(NodeError):
        NodeSpec("has space", "talker")
    with pytest.raises(NodeError):
        NodeSpec.from_dict(talker("t", "x", period_ms=0))
    with pytest.raises(NodeError):
        NodeSpec.from_dict({"name": "x"})


def test_spawn_talker_registers_publisher():
    router = Router()
    host = NodeHost(router, seed=0)
    host.spawn_node(talker("talker", "topic_a", period_ms=500))
    assert [r.role for r in router.query_entities(topic="topic_a")] == ["publisher"]
    with pytest.raises(NodeError):
        host.spawn_node(talker("talker", "topic_b"))
    with pytest.raises(NodeError):
        host.spawn_node({"name": "x", "behavior": "juggler"})
    host.shutdown()
    assert len(router) == 0


def test_talker_listener_virtual_echo():
    host, _ = run_virtual([talker("talker", "topic_a"), listener("listener", "topic_a")], 3.0)
    lines = host.transcript.lines
    sent = payloads(lines, "PUB", "topic_a")
    assert sent == [f"Hello World: {i}" for i in range(1, 7)]
    assert payloads(lines, "RECV", "topic_a") == sent
    assert all(LINE.match(ln) for ln in lines)
    assert [e.kind for e in host.events].count("stopped") == 2


def test_seeded_runs_are_identical():
    specs = [talker("ta", "topic_a", 100), talker("tb", "topic_b", 100),
             listener("la", "topic_a", 100), listener("lb", "topic_b", 100)]
    a, _ = run_virtual(specs, 2.0, seed=42)
    b, _ = run_virtual(specs, 2.0, seed=42)
    assert a.transcript.text() == b.transcript.text()


def test_stop_node_and_buffer_audit():
    router = Router()
    host = NodeHost(router, seed=3)
    host.spawn_node(talker("t", "topic_a", 100))
    host.spawn_node(listener("l", "topic_a", 1000))
    host.run_for(0.5)
    host.stop_node("l")
    assert router.query_entities(role="subscriber") == []
    assert router.stats()["subscribers"] == {}
    host.stop_node("t")
    assert router.query_entities(role="publisher") == []
    with pytest.raises(NodeError):
        host.stop_node("t")
    host.shutdown()


def test_crash_isolated_in_virtual_mode():
    router = Router()
    host = NodeHost(router, seed=5)
    for s in (talker("t", "topic_a", 100), listener("l", "topic_a"), listener("crash", "topic_a", fail_after=5)):
        host.spawn_node(s)
    host.run_for(2.0)
    (failed,) = host.failures
    assert failed.node == "crash" and "5" in failed.detail
    assert [r.name for r in router.query_entities(role="subscriber")] == ["l"]
    host.shutdown()
    assert len(payloads(host.transcript.lines, "RECV", "topic_a")) >= 19


def test_threaded_mode_and_supervision():
    router = Router()
    host = NodeHost(router)
    host.spawn_node(talker("t", "topic_a", 20))
    host.spawn_node(listener("l", "topic_a", 10))
    host.spawn_node(listener("crash", "topic_a", 10, fail_after=3))
    deadline = time.monotonic() + 5
    while not host.failures and time.monotonic() < deadline:
        time.sleep(0.01)
    host.run_for(0.2)
    events = host.shutdown()
    kinds = [(e.node, e.kind) for e in events]
    assert ("crash", "failed") in kinds
    assert ("t", "stopped") in kinds and ("l", "stopped") in kinds
    assert len(router) == 0
    sent = payloads(host.transcript.for_node("t"), "PUB", "topic_a")
    assert payloads(host.transcript.for_node("l"), "RECV", "topic_a") == sent
    assert [e.kind for e in host.supervise(timeout=1)] == [e.kind for e in events]


def test_empty_host_stream():
    host = NodeHost(Router())
    assert host.shutdown() == []
    assert list(host.supervise(timeout=1)) == []


def test_service_behaviors_virtual():
    host, router = run_virtual([
        {"name": "srv", "behavior": "service_server", "params": {"service": "add_two_ints"}},
        {"name": "cli", "behavior": "service_client",
         "params": {"service": "add_two_ints", "requests": [{"a": 2, "b": 3}, {"a": -4, "b": 9}]}},
    ], 1.0)
    recv = [json.loads(LINE.match(ln).group(5)) for ln in host.transcript.for_node("cli") if " RECV " in ln]
    assert recv == [{"sum": 5}, {"sum": 5}]
    assert len(router) == 0


class _Counter(Behavior):
    period_ms = 250

    def __init__(self, topic):
        self.topic = topic

    def start(self, ctx):
        self.pub = ctx.create_publisher(self.topic, "std_msgs/Int32")
        self.n = 0

    def tick(self, ctx):
        self.n += 1
        self.pub.publish({"data": self.n})
        ctx.log_message("PUB", self.topic, self.pub.schema, {"data": self.n})


def test_custom_behaviors():
    register_behavior("counter", _Counter)
    host, _ = run_virtual([{"name": "c", "behavior": "counter", "params": {"topic": "n"}},
                           {"name": "f", "behavior": "custom",
                            "params": {"factory": "test_nodehost:_Counter", "topic": "m"}}], 1.0)
    assert payloads(host.transcript.lines, "PUB", "n") == [1, 2, 3, 4]
    assert payloads(host.transcript.lines, "PUB", "m") == [1, 2, 3, 4]
