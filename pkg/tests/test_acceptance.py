"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines inline;
they are also repeated in the terminal summary.
"""

from __future__ import annotations

import json
import random
import re
import signal
import subprocess
import sys
import time

import pytest

from gen import random_case, same
from procs import FIG1, cli, graph, router_process, wait_for, write_config
from refrouter import run_differential
from stackmw.devbridge import LED_COLORS, mock_device, run_bridge
from stackmw.msgspec import decode_binary, encode_binary, from_yaml, json_to_yaml, to_yaml, yaml_to_json
from stackmw.nodehost import NodeHost
from stackmw.participant import create_publisher, create_service_client, create_service_server
from stackmw.router import Router
from stackmw.wire import Frame, FrameDecoder, WireClient, encode_frame

RESULTS: list[str] = []
LINE = re.compile(r"^(\S+Z) (\S+) (PUB|RECV|EVENT) (\S+) (\{.*\})$")


def report(n: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def parse(text_or_lines):
    lines = text_or_lines.splitlines() if isinstance(text_or_lines, str) else text_or_lines
    out = []
    for ln in lines:
        m = LINE.match(ln)
        if m is None:
            raise AssertionError(f"unparseable transcript line {ln!r}")
        out.append((m.group(2), m.group(3), m.group(4), json.loads(m.group(5))))
    return out


def fig1_check(lines) -> tuple[bool, str]:
    """Exactly-once, in-order delivery per topic with zero cross-topic leakage."""
    rows = parse(lines)
    problems = []
    counts = {}
    for topic, talker, listener in (("topic_a", "talker_a", "listener_a"), ("topic_b", "talker_b", "listener_b")):
        sent = [p["data"] for node, kind, t, p in rows if node == talker and kind == "PUB"]
        got = [p["data"] for node, kind, t, p in rows if node == listener and kind == "RECV"]
        foreign = [t for node, kind, t, p in rows if node in (talker, listener) and kind != "EVENT" and t != topic]
        if not sent:
            problems.append(f"{talker} published nothing")
        if got != sent:
            problems.append(f"{listener} received {len(got)} of {len(sent)} or out of order")
        if foreign:
            problems.append(f"{len(foreign)} cross-topic lines for {topic}")
        counts[topic] = len(sent)
    return not problems, "; ".join(problems) or f"published/received {counts}"


# 1 -----------------------------------------------------------------------------------


def test_criterion_1_codec_round_trips():
    rng = random.Random(20240501)
    start = time.perf_counter()
    failures = []
    n = 1000
    for i in range(n):
        case = random_case(rng, i)
        s, v = case.schema, case.value
        text = to_yaml(s, v)
        checks = {
            "binary": same(decode_binary(s, encode_binary(s, v)), v),
            "yaml": same(from_yaml(s, text), v),
            "yaml-json-yaml": same(from_yaml(s, json_to_yaml(yaml_to_json(text))), v),
        }
        failures += [(i, k) for k, ok in checks.items() if not ok]
    elapsed = time.perf_counter() - start
    report(1, not failures and elapsed < 30.0,
           f"{n} random (schema, value) pairs x 3 round trips, {len(failures)} failures, {elapsed:.2f}s (< 30s)")


# 2 -----------------------------------------------------------------------------------


def fig1_run(tmp_path, seed=None, duration=5.0):
    args = ["run", str(write_config(tmp_path)), "--duration", str(duration)]
    if seed is not None:
        args += ["--seed", str(seed)]
    res = cli(*args)
    assert res.returncode == 0, res.stderr
    return res.stdout


def test_criterion_2_fig1_equivalence(tmp_path):
    wall_ok, wall = fig1_check(fig1_run(tmp_path).splitlines())
    virt_ok, virt = fig1_check(fig1_run(tmp_path, seed=2).splitlines())
    report(2, wall_ok and virt_ok, f"5 s wall-clock run: {wall}; 5 s seeded run: {virt}")


# 3 -----------------------------------------------------------------------------------


def test_criterion_3_service_protocol():
    rng = random.Random(99)
    router = Router()
    svc, typ = "add_two_ints", "example_interfaces/AddTwoInts"
    clients = [create_service_client(router, svc, typ, f"client{i}") for i in range(3)]
    availability = [clients[0].is_service_available()]
    server = create_service_server(router, svc, typ)
    availability.append(clients[0].is_service_available())

    issued: dict = {}  # request_id -> (client index, expected sum)
    answered: dict = {}  # request_id -> list of sums received
    wrong_client = 0
    to_send = 100
    while to_send or any(c.outstanding for c in clients):
        step = rng.random()
        if to_send and step < 0.4:
            i = rng.randrange(3)
            a, b = rng.randint(-2**40, 2**40), rng.randint(-2**40, 2**40)
            rid = clients[i].send_request({"a": a, "b": b})
            issued[rid] = (i, a + b)
            to_send -= 1
        elif step < 0.7:
            for _ in range(rng.randint(1, 4)):
                taken = server.take_request()
                if taken is None:
                    break
                req, rid = taken
                server.send_response(rid, {"sum": req["a"] + req["b"]})
        else:
            i = rng.randrange(3)
            got = clients[i].take_response()
            if got is not None:
                resp, rid = got
                if issued.get(rid, (None,))[0] != i:
                    wrong_client += 1
                answered.setdefault(rid, []).append(resp["sum"])
    server.deregister()
    availability.append(clients[0].is_service_available())

    correct = sum(1 for rid, sums in answered.items() if sums == [issued[rid][1]])
    bijection = set(answered) == set(issued) and all(len(v) == 1 for v in answered.values())
    ids_unique = len(issued) == 100
    ok = availability == [False, True, False] and correct == 100 and bijection and ids_unique and not wrong_client
    report(3, ok, f"availability {availability}; {correct}/100 correct sums from 3 clients; "
                  f"bijection={bijection}; misrouted={wrong_client}")


# 4 -----------------------------------------------------------------------------------


def test_criterion_4_router_properties():
    seeds = range(24)
    reps = [run_differential(s, n_ops=600) for s in seeds]
    total_ops = sum(r.ops for r in reps)
    dropped = sum(r.total_dropped for r in reps)
    bad = [(s, r) for s, r in zip(seeds, reps) if not r.ok]
    detail = (f"{len(reps)} sequences, {total_ops} ops vs reference router; mismatches "
              f"{sum(len(r.mismatches) for r in reps)}, fifo {sum(r.fifo_violations for r in reps)}, "
              f"dups {sum(r.duplicates for r in reps)}, late {sum(r.late for r in reps)}, "
              f"gid reuse {sum(r.reused_gids for r in reps)}, over-capacity {sum(r.over_capacity for r in reps)}, "
              f"drop-count mismatches {sum(r.drop_mismatches for r in reps)}; {dropped} counted drops")
    report(4, not bad and dropped > 0 and min(r.ops for r in reps) >= 500, detail)


# 5 -----------------------------------------------------------------------------------


def seeded_transcript(specs, seed, seconds):
    host = NodeHost(Router(), seed=seed)
    for s in specs:
        host.spawn_node(s)
    host.run_for(seconds)
    host.shutdown()
    return host


def fig1_specs():
    from stackmw.config import parse_config
    from stackmw.msgspec import load_yaml

    return parse_config(load_yaml(FIG1)).node_specs()


def test_criterion_5_isolation():
    from stackmw.nodehost import NodeSpec

    crasher = NodeSpec("crasher", "listener", {"topic": "topic_a", "period_ms": 70, "fail_after": 5})
    baseline = seeded_transcript(fig1_specs(), 5, 5.0)
    crashed = seeded_transcript(fig1_specs() + [crasher], 5, 5.0)
    failed = [e for e in crashed.events if e.kind == "failed"]
    siblings = [ln for ln in crashed.transcript.lines if ln.split(" ", 2)[1] != "crasher"]
    identical = "\n".join(siblings) == baseline.transcript.text()
    ok = len(failed) == 1 and failed[0].node == "crasher" and identical
    report(5, ok, f"failed events {[(e.node, e.detail) for e in failed]}; sibling transcript "
                  f"({len(siblings)} lines) byte-identical to crash-free run: {identical}")


# 6 -----------------------------------------------------------------------------------


def fuzz_splits(rng: random.Random, target: int) -> tuple[int, int]:
    splits = mismatches = 0
    while splits < target:
        frames = [Frame(rng.randint(1, 4), rng.randbytes(rng.choice([0, 1, 5, 40, 700])))
                  for _ in range(rng.randint(1, 8))]
        data = b"".join(encode_frame(f) for f in frames)
        cuts = sorted(rng.randint(0, len(data)) for _ in range(rng.randint(1, 20)))
        dec, got, prev = FrameDecoder(), [], 0
        for c in cuts + [len(data)]:
            got += dec.feed(data[prev:c])
            prev = c
        splits += len(cuts)
        if got != frames or dec.residual:
            mismatches += 1
    return splits, mismatches


def test_criterion_6_wire(tmp_path):
    splits, mismatches = fuzz_splits(random.Random(6), 10_000)

    cfg = write_config(tmp_path)
    with router_process() as ep:
        remote = cli("run", str(cfg), "--duration", "5", "--seed", "4", "--endpoint", ep)
        local = cli("run", str(cfg), "--duration", "5", "--seed", "4")
        same_transcript = remote.returncode == 0 and remote.stdout == local.stdout
        fig_ok, fig = fig1_check(remote.stdout.splitlines())

        # drop 1: a client socket closes without deregistering
        c = WireClient(ep, node="dropper")
        c.call("register", name="dropper", role="publisher", topic="topic_drop", type_name="std_msgs/String")
        c.call("register", name="dropper", role="subscriber", topic="topic_drop", type_name="std_msgs/String")
        seen = any(t["topic"] == "topic_drop" for t in graph(ep)["topics"])
        c.close()
        cleared_socket = wait_for(lambda: graph(ep) == {"topics": [], "services": []})

        # drop 2: a node-host process is killed mid-run
        proc = subprocess.Popen([sys.executable, "-m", "stackmw", "run", str(cfg), "--endpoint", ep],
                                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        try:
            up = wait_for(lambda: len(graph(ep)["topics"]) == 2, timeout=15)
        finally:
            proc.send_signal(signal.SIGKILL)
            proc.wait(10)
        cleared_kill = wait_for(lambda: graph(ep) == {"topics": [], "services": []})

    ok = (splits >= 10_000 and mismatches == 0 and same_transcript and fig_ok
          and seen and cleared_socket and up and cleared_kill)
    report(6, ok, f"{splits} fuzzed splits, {mismatches} mismatches; two-process transcript identical "
                  f"to in-process: {same_transcript} ({fig}); graph cleared after socket drop: "
                  f"{cleared_socket}, after SIGKILL of node process: {cleared_kill}")


# 7 -----------------------------------------------------------------------------------


def test_criterion_7_device_bridge():
    dev = mock_device()
    try:
        colors = [{"data": c} for c in LED_COLORS] * 2 + [{"data": "purple"}]
        host = NodeHost(Router(), seed=7)
        host.spawn_node({"name": "bridge", "behavior": "device_bridge",
                         "params": {"device": dev.endpoint,
                                    "mappings": [{"topic": "/led", "translator": "led_color"}]}})
        host.spawn_node({"name": "rainbow", "behavior": "talker",
                         "params": {"topic": "/led", "period_ms": 80, "values": colors, "count": len(colors)}})
        host.run_for(3.0)
        host.shutdown()
        published = [p["data"] for _, kind, _, p in parse(host.transcript.for_node("rainbow")) if kind == "PUB"]
        led_log = [c for verb, c in dev.snapshot() if verb == "LED"]
        final_led = dev.led
        rainbow_ok = led_log == published == [c["data"] for c in colors] and final_led == published[-1]
    finally:
        dev.close()

    dev = mock_device()
    try:
        rng = random.Random(77)
        router = Router()
        bridge = run_bridge({"device": dev.endpoint,
                             "mappings": [{"topic": "/cmd_vel", "translator": "twist_drive"}]}, router, period=0.005)
        pub = create_publisher(router, "/cmd_vel", "geometry_msgs/Twist")
        sent = []
        for i in range(50):
            lin = rng.choice([rng.uniform(-2, 2), 0.1, -0.0, 1 / 3, 1e-12])
            ang = rng.choice([rng.uniform(-3.2, 3.2), -0.5, 0.0, 2 / 7])
            pub.publish({"linear": {"x": lin, "y": rng.random(), "z": 0.0},
                         "angular": {"x": 0.0, "y": 0.0, "z": ang}})
            sent.append(("MOVE", lin, ang))
            if i % 7 == 0:
                time.sleep(0.01)
        wait_for(lambda: bridge.forwarded["/cmd_vel"] == 50)
        bridge.stop()
        move_log = dev.snapshot()
        exact = len(move_log) == 50 and all(
            a[0] == b[0] and a[1] == b[1] and a[2] == b[2] and str(a) == str(b) for a, b in zip(move_log, sent))
    finally:
        dev.close()
    report(7, rainbow_ok and exact,
           f"LED log of {len(led_log)} colors equals published sequence: {rainbow_ok} (final state "
           f"{final_led!r}, last published {published[-1]!r}); 50-message Twist MOVE log exact: {exact}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
