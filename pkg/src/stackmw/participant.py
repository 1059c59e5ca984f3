"""Client-side participants: publisher, subscriber and the two service roles.

A service client is a publisher on ``/<service>/request_topic`` plus a
subscriber on ``/<service>/response_topic``; a server is the mirror pair.
Requests carry ``RequestId(client_gid, n)`` and the router only hands a
response to the client that issued its id.
"""

from __future__ import annotations

from typing import Any

from .connection import Connection, as_connection
from .errors import CorrelationError, ParticipantError, StackmwError, UnknownRequestError
from .msgspec import MessageSchema, SchemaRegistry, ensure_valid, from_yaml, service_types, to_yaml
from .router import (
    PUBLISHER,
    SERVICE_CLIENT,
    SERVICE_SERVER,
    SUBSCRIBER,
    Envelope,
    RequestId,
    request_topic,
    response_topic,
)


class Participant:
    role: str = ""

    def __init__(self, router: Any, name: str, topic: str, type_name: str,
                 registry: SchemaRegistry | None = None, owner: int | None = None):
        self.connection: Connection = as_connection(router)
        self.registry = registry if registry is not None else self.connection.registry
        self.name = name
        self.topic = topic
        self.type_name = type_name
        self.owner = owner
        self.gid: int | None = None
        self._resolve_schemas()
        args = {"name": name, "role": self.role, "topic": topic, "type_name": type_name}
        if owner is not None:
            args["owner"] = owner
        self.gid = self.connection.call("register", **args)["gid"]

    def _resolve_schemas(self) -> None:
        self.schema: MessageSchema = self.registry.get(self.type_name)

    @property
    def registered(self) -> bool:
        return self.gid is not None

    def _require(self) -> int:
        if self.gid is None:
            raise ParticipantError(f"{self.role} {self.name!r} is not registered")
        return self.gid

    def deregister(self) -> None:
        gid = self._require()
        self.gid = None
        self.connection.call("deregister", gid=gid)

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name!r} {self.topic!r} gid={self.gid}>"


class Publisher(Participant):
    role = PUBLISHER

    def __init__(self, *args, **kwargs):
        self._seq = 0
        super().__init__(*args, **kwargs)

    def publish(self, value: dict) -> int:
        """Validate, render to YAML and route; returns the number of subscribers reached."""
        self._require()
        payload = to_yaml(self.schema, value)
        return self.publish_yaml(payload)

    def publish_yaml(self, payload: str, request_id: RequestId | None = None) -> int:
        gid = self._require()
        self._seq += 1
        env = Envelope(gid, self.topic, payload, self._seq, request_id)
        return self.connection.call("publish", envelope=env.to_dict())["delivered"]


class Subscriber(Participant):
    role = SUBSCRIBER

    def take_envelopes(self, max: int | None = 1) -> list[Envelope]:
        gid = self._require()
        reply = self.connection.call("fetch", gid=gid, max=max)
        return [Envelope.from_dict(d) for d in reply["envelopes"]]

    def decode(self, env: Envelope) -> dict:
        try:
            return from_yaml(self.schema, env.payload)
        except StackmwError as exc:
            raise ParticipantError(f"payload on {self.topic!r} does not match {self.type_name}: {exc}") from None

    def get_message(self) -> dict | None:
        """Oldest pending message, or ``None``. Never blocks."""
        envs = self.take_envelopes(1)
        return self.decode(envs[0]) if envs else None

    def get_messages(self, max: int | None = None) -> list[dict]:
        return [self.decode(e) for e in self.take_envelopes(max)]


class _ServiceParticipant(Participant):
    def __init__(self, router: Any, service: str, type_name: str, name: str | None = None,
                 registry: SchemaRegistry | None = None):
        super().__init__(router, name or service, service, type_name, registry)
        self.service = service
        self.request_topic = request_topic(service)
        self.response_topic = response_topic(service)
        try:
            self._build_pair()
        except BaseException:
            self.connection.call("deregister", gid=self.gid)
            self.gid = None
            raise

    def _resolve_schemas(self) -> None:
        req, resp = service_types(self.type_name)
        self.request_schema = self.registry.get(req)
        self.response_schema = self.registry.get(resp)

    def _build_pair(self) -> None:
        raise NotImplementedError

    def deregister(self) -> None:
        # the router drops the owned publisher/subscriber with us
        super().deregister()
        self.publisher.gid = None
        self.subscriber.gid = None


class ServiceClient(_ServiceParticipant):
    role = SERVICE_CLIENT

    def _build_pair(self) -> None:
        req, resp = service_types(self.type_name)
        self.publisher = Publisher(self.connection, self.name, self.request_topic, req,
                                   self.registry, owner=self.gid)
        self.subscriber = Subscriber(self.connection, self.name, self.response_topic, resp,
                                     self.registry, owner=self.gid)
        self._counter = 0
        self.outstanding: set[RequestId] = set()
        self.stray_responses = 0

    def is_service_available(self) -> bool:
        self._require()
        return bool(self.connection.call("query", role=SERVICE_SERVER, topic=self.service)["entities"])

    def send_request(self, request: dict) -> RequestId:
        gid = self._require()
        ensure_valid(self.request_schema, request)
        payload = to_yaml(self.request_schema, request)
        rid = RequestId(gid, self._counter + 1)
        self.publisher.publish_yaml(payload, rid)
        self._counter += 1
        self.outstanding.add(rid)
        return rid

    def take_response(self) -> tuple[dict, RequestId] | None:
        """Oldest answer to one of our outstanding requests, or ``None``."""
        self._require()
        while True:
            envs = self.subscriber.take_envelopes(1)
            if not envs:
                return None
            env = envs[0]
            if env.request_id is None:
                raise CorrelationError(f"response on {self.response_topic!r} has no request_id")
            if env.request_id not in self.outstanding:
                # duplicate answer from a second server
                self.stray_responses += 1
                continue
            value = from_yaml(self.response_schema, env.payload)
            self.outstanding.discard(env.request_id)
            return value, env.request_id


class ServiceServer(_ServiceParticipant):
    role = SERVICE_SERVER

    def _build_pair(self) -> None:
        req, resp = service_types(self.type_name)
        self.subscriber = Subscriber(self.connection, self.name, self.request_topic, req,
                                     self.registry, owner=self.gid)
        self.publisher = Publisher(self.connection, self.name, self.response_topic, resp,
                                   self.registry, owner=self.gid)
        self.pending: set[RequestId] = set()

    def take_request(self) -> tuple[dict, RequestId] | None:
        self._require()
        envs = self.subscriber.take_envelopes(1)
        if not envs:
            return None
        env = envs[0]
        if env.request_id is None:
            raise CorrelationError(f"request on {self.request_topic!r} has no request_id")
        value = from_yaml(self.request_schema, env.payload)
        self.pending.add(env.request_id)
        return value, env.request_id

    def send_response(self, request_id: RequestId | tuple[int, int], response: dict) -> int:
        self._require()
        rid = RequestId(*request_id)
        if rid not in self.pending:
            raise UnknownRequestError(f"request {tuple(rid)} was not taken by this server or was already answered")
        ensure_valid(self.response_schema, response)
        delivered = self.publisher.publish_yaml(to_yaml(self.response_schema, response), rid)
        self.pending.discard(rid)
        return delivered


def create_publisher(router: Any, topic: str, type_name: str, name: str | None = None,
                     registry: SchemaRegistry | None = None) -> Publisher:
    return Publisher(router, name or topic, topic, type_name, registry)


def create_subscriber(router: Any, topic: str, type_name: str, name: str | None = None,
                      registry: SchemaRegistry | None = None) -> Subscriber:
    return Subscriber(router, name or topic, topic, type_name, registry)


def create_service_server(router: Any, service: str, type_name: str, name: str | None = None,
                          registry: SchemaRegistry | None = None) -> ServiceServer:
    return ServiceServer(router, service, type_name, name, registry)


def create_service_client(router: Any, service: str, type_name: str, name: str | None = None,
                          registry: SchemaRegistry | None = None) -> ServiceClient:
    return ServiceClient(router, service, type_name, name, registry)
