from __future__ import annotations

import pytest

from stackmw.errors import ParticipantError, UnknownGidError, UnknownRequestError, UnknownTypeError, ValidationError
from stackmw.participant import (
    create_publisher,
    create_service_client,
    create_service_server,
    create_subscriber,
)
from stackmw.router import RequestId, Router
from stackmw.connection import RouterService

S = "std_msgs/String"
ADD = "example_interfaces/AddTwoInts"


@pytest.fixture
def r():
    return Router()


def test_publisher_registration(r):
    p = create_publisher(r, "topic_a", S)
    q = create_publisher(r, "topic_a", S)
    assert p.registered and p.gid != q.gid
    with pytest.raises(UnknownTypeError):
        create_publisher(r, "topic_a", "x/Missing")


def test_echo_and_drain(r):
    sub = create_subscriber(r, "topic_a", S)
    pub = create_publisher(r, "topic_a", S)
    assert sub.get_message() is None
    assert pub.publish({"data": "Hello World: 1"}) == 1
    assert sub.get_message() == {"data": "Hello World: 1"}
    assert sub.get_message() is None


def test_invalid_publish_routes_nothing(r):
    sub = create_subscriber(r, "t", S)
    pub = create_publisher(r, "t", S)
    with pytest.raises(ValidationError):
        pub.publish({"data": 3})
    assert sub.get_message() is None
    pub.publish({"data": "ok"})  # seq unaffected by the failure
    assert sub.take_envelopes()[0].seq == 1


def test_hundred_in_order(r):
    sub = create_subscriber(r, "t", "std_msgs/Int32")
    pub = create_publisher(r, "t", "std_msgs/Int32")
    for i in range(100):
        pub.publish({"data": i})
    assert [m["data"] for m in sub.get_messages()] == list(range(100))


def test_topic_isolation(r):
    subs = {t: create_subscriber(r, t, S) for t in ("topic_a", "topic_b")}
    pubs = {t: create_publisher(r, t, S) for t in ("topic_a", "topic_b")}
    pubs["topic_a"].publish({"data": "A"})
    pubs["topic_b"].publish({"data": "B"})
    assert subs["topic_a"].get_messages() == [{"data": "A"}]
    assert subs["topic_b"].get_messages() == [{"data": "B"}]


def test_service_round_trip_and_availability(r):
    client = create_service_client(r, "add_two_ints", ADD)
    assert not client.is_service_available()
    server = create_service_server(r, "add_two_ints", ADD)
    assert client.is_service_available()
    assert server.take_request() is None

    rid = client.send_request({"a": 2, "b": 3})
    assert rid == RequestId(client.gid, 1)
    assert client.send_request({"a": 1, "b": 1}) == RequestId(client.gid, 2)
    assert client.take_response() is None

    req, got = server.take_request()
    assert (req, got) == ({"a": 2, "b": 3}, rid)
    server.send_response(got, {"sum": req["a"] + req["b"]})
    assert client.take_response() == ({"sum": 5}, rid)
    with pytest.raises(UnknownRequestError):
        server.send_response(got, {"sum": 5})
    with pytest.raises(UnknownRequestError):
        server.send_response(RequestId(client.gid, 99), {"sum": 0})

    server.deregister()
    assert not client.is_service_available()


def test_service_composition_records(r):
    client = create_service_client(r, "add_two_ints", ADD)
    server = create_service_server(r, "add_two_ints", ADD)
    by_gid = {rec.gid: rec for rec in r.query_entities()}
    assert by_gid[client.publisher.gid].topic == "/add_two_ints/request_topic"
    assert by_gid[client.publisher.gid].role == "publisher"
    assert by_gid[client.subscriber.gid].topic == "/add_two_ints/response_topic"
    assert by_gid[server.subscriber.gid].topic == "/add_two_ints/request_topic"
    assert by_gid[server.publisher.gid].role == "publisher"
    assert len(r) == 6
    client.deregister()
    server.deregister()
    assert len(r) == 0


def test_invalid_request_routes_nothing(r):
    client = create_service_client(r, "s", ADD)
    server = create_service_server(r, "s", ADD)
    with pytest.raises(ValidationError):
        client.send_request({"a": "two", "b": 3})
    assert server.take_request() is None
    assert client.send_request({"a": 1, "b": 1}) == RequestId(client.gid, 1)


def test_two_clients_see_only_their_responses(r):
    server = create_service_server(r, "s", ADD)
    c1, c2 = create_service_client(r, "s", ADD, "c1"), create_service_client(r, "s", ADD, "c2")
    r1 = c1.send_request({"a": 1, "b": 1})
    r2 = c2.send_request({"a": 10, "b": 10})
    ids = set()
    while (t := server.take_request()) is not None:
        ids.add(t[1])
        server.send_response(t[1], {"sum": t[0]["a"] + t[0]["b"]})
    assert ids == {r1, r2}
    assert c1.take_response() == ({"sum": 2}, r1) and c1.take_response() is None
    assert c2.take_response() == ({"sum": 20}, r2) and c2.take_response() is None


def test_duplicate_server_answers_are_dropped(r):
    s1, s2 = create_service_server(r, "s", ADD), create_service_server(r, "s", ADD)
    c = create_service_client(r, "s", ADD)
    rid = c.send_request({"a": 1, "b": 2})
    for s in (s1, s2):
        req, got = s.take_request()
        s.send_response(got, {"sum": 3})
    assert c.take_response() == ({"sum": 3}, rid)
    assert c.take_response() is None
    assert c.stray_responses == 1


def test_double_deregistration(r):
    p = create_publisher(r, "t", S)
    p.deregister()
    assert not p.registered
    with pytest.raises(ParticipantError):
        p.deregister()
    with pytest.raises(ParticipantError):
        p.publish({"data": "x"})


def test_via_service_thread():
    with RouterService(Router()) as svc:
        conn = svc.connect()
        sub = create_subscriber(conn, "t", S)
        create_publisher(svc.connect(), "t", S).publish({"data": "x"})
        assert sub.get_message() == {"data": "x"}
        with pytest.raises(UnknownGidError):
            conn.call("deregister", gid=999)
