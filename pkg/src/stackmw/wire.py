"""Length-prefixed JSON frames over a local socket.

Frame layout (10-byte header, then body)::

    magic   4 bytes  b"RMWW"
    version uint8    1
    kind    uint8    1=hello 2=command 3=reply 4=event
    length  uint32   little-endian byte length of body
    body    UTF-8 JSON text

A session opens with a hello in each direction, then strictly alternates
command -> reply. Commands are ``{"token", "op", "args"}``; replies echo the
token. When a connection drops, the server deregisters every participant
that connection registered.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import struct
import threading
from dataclasses import dataclass
from enum import IntEnum
from typing import Any

from .connection import RouterService, unwrap
from .errors import ProtocolError, RouterUnreachable
from .msgspec import SchemaRegistry, default_registry
from .router import Router

log = logging.getLogger(__name__)

MAGIC = b"RMWW"
VERSION = 1
HEADER = struct.Struct("<4sBBI")
MAX_BODY = 16 * 1024 * 1024
DEFAULT_ENDPOINT = "tcp://127.0.0.1:7411"


class FrameKind(IntEnum):
    HELLO = 1
    COMMAND = 2
    REPLY = 3
    EVENT = 4


@dataclass(frozen=True)
class Frame:
    kind: int
    body: bytes = b""
    version: int = VERSION

    @classmethod
    def of(cls, kind: int, obj: Any) -> "Frame":
        return cls(kind, json.dumps(obj, separators=(",", ":")).encode("utf-8"))

    def json(self) -> Any:
        try:
            return json.loads(self.body.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise ProtocolError(f"frame body is not UTF-8 JSON: {exc}") from None


def encode_frame(frame: Frame) -> bytes:
    if frame.version != VERSION:
        raise ProtocolError(f"unsupported frame version {frame.version}")
    if frame.kind not in FrameKind._value2member_map_:
        raise ProtocolError(f"unknown frame kind {frame.kind}")
    if len(frame.body) > MAX_BODY:
        raise ProtocolError(f"frame body of {len(frame.body)} bytes exceeds {MAX_BODY}")
    return HEADER.pack(MAGIC, VERSION, frame.kind, len(frame.body)) + bytes(frame.body)


class FrameDecoder:
    """Incremental decoder. After one protocol error every later feed fails too."""

    def __init__(self):
        self._buf = bytearray()
        self.condemned: ProtocolError | None = None

    @property
    def residual(self) -> bytes:
        return bytes(self._buf)

    def feed(self, data: bytes) -> list[Frame]:
        if self.condemned is not None:
            raise self.condemned
        self._buf += data
        frames = []
        while True:
            if len(self._buf) >= 4 and self._buf[:4] != MAGIC:
                self._condemn(f"bad magic {bytes(self._buf[:4])!r}")
            elif 0 < len(self._buf) < 4 and not MAGIC.startswith(bytes(self._buf)):
                self._condemn(f"bad magic {bytes(self._buf)!r}")
            if len(self._buf) < HEADER.size:
                return frames
            _, version, kind, length = HEADER.unpack_from(self._buf)
            if version != VERSION:
                self._condemn(f"unsupported frame version {version}")
            if kind not in FrameKind._value2member_map_:
                self._condemn(f"unknown frame kind {kind}")
            if length > MAX_BODY:
                self._condemn(f"frame length {length} exceeds {MAX_BODY}")
            end = HEADER.size + length
            if len(self._buf) < end:
                return frames
            frames.append(Frame(kind, bytes(self._buf[HEADER.size:end])))
            del self._buf[:end]

    def _condemn(self, message: str) -> None:
        self.condemned = ProtocolError(message)
        raise self.condemned


def decode_frame(data: bytes) -> tuple[list[Frame], bytes]:
    """Decode every complete frame in ``data``; returns ``(frames, residual)``."""
    dec = FrameDecoder()
    frames = dec.feed(data)
    return frames, dec.residual


# endpoints -------------------------------------------------------------------


def parse_endpoint(endpoint: str) -> tuple[int, Any]:
    """``tcp://host:port``, ``host:port`` or ``unix:///path`` -> (family, address)."""
    if endpoint.startswith("unix://"):
        return socket.AF_UNIX, endpoint[len("unix://"):]
    rest = endpoint[len("tcp://"):] if endpoint.startswith("tcp://") else endpoint
    host, sep, port = rest.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"bad endpoint {endpoint!r}; expected tcp://host:port or unix:///path")
    return socket.AF_INET, (host or "127.0.0.1", int(port))


def format_endpoint(family: int, address: Any) -> str:
    if family == socket.AF_UNIX:
        return f"unix://{address}"
    return f"tcp://{address[0]}:{address[1]}"


def _send(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(encode_frame(frame))


def _error_reply(token: Any, message: str, code: str = "protocol") -> Frame:
    return Frame.of(FrameKind.REPLY, {"token": token, "ok": False, "error": {"code": code, "message": message}})


# server --------------------------------------------------------------------


class _Session:
    def __init__(self, server: "WireServer", sock: socket.socket, peer: Any):
        self.server = server
        self.sock = sock
        self.peer = peer
        self.node: str | None = None
        self.gids: set[int] = set()
        self.thread = threading.Thread(target=self.run, name=f"wire-session-{peer}", daemon=True)

    def run(self) -> None:
        dec = FrameDecoder()
        try:
            while True:
                try:
                    data = self.sock.recv(65536)
                except OSError:
                    break
                if not data:
                    break
                try:
                    frames = dec.feed(data)
                    for frame in frames:
                        self._handle(frame)
                except ProtocolError as exc:
                    log.warning("session %s condemned: %s", self.peer, exc)
                    try:
                        _send(self.sock, _error_reply(None, str(exc)))
                    except OSError:
                        pass
                    break
                except RouterUnreachable:
                    break
        finally:
            self._cleanup()

    def _handle(self, frame: Frame) -> None:
        if self.node is None:
            if frame.kind != FrameKind.HELLO:
                raise ProtocolError("expected hello frame first")
            hello = frame.json()
            if not isinstance(hello, dict) or hello.get("version") != VERSION:
                raise ProtocolError(f"unsupported hello version {hello.get('version') if isinstance(hello, dict) else hello!r}")
            node = hello.get("node")
            if not isinstance(node, str) or not node:
                raise ProtocolError("hello needs a non-empty node name")
            self.node = node
            _send(self.sock, Frame.of(FrameKind.HELLO, {"router": "stackmw", "version": VERSION}))
            return
        if frame.kind != FrameKind.COMMAND:
            raise ProtocolError(f"unexpected frame kind {frame.kind} after hello")
        cmd = frame.json()
        if not isinstance(cmd, dict) or "token" not in cmd:
            raise ProtocolError("command body needs a token")
        reply = self.server.service.submit({"op": cmd.get("op"), "args": cmd.get("args")}).result()
        if reply.get("ok"):
            if cmd.get("op") == "register":
                self.gids.add(reply["result"]["gid"])
            elif cmd.get("op") == "deregister":
                self.gids.difference_update(reply["result"]["removed"])
        reply = {"token": cmd["token"], **reply}
        _send(self.sock, Frame.of(FrameKind.REPLY, reply))

    def _cleanup(self) -> None:
        service = self.server.service
        for gid in sorted(self.gids, reverse=True):
            command = {"op": "deregister", "args": {"gid": gid}}
            try:
                service.submit(command).result()
            except RouterUnreachable:
                service.router.execute(command)
            # unknown-gid replies are expected for components already removed with their owner
        self.gids.clear()
        try:
            self.sock.close()
        except OSError:
            pass
        self.server._forget(self)


class WireServer:
    def __init__(self, router: Router | RouterService, endpoint: str = DEFAULT_ENDPOINT):
        if isinstance(router, RouterService):
            self.service, self._own_service = router, False
        else:
            self.service, self._own_service = RouterService(router), True
        family, address = parse_endpoint(endpoint)
        self._sock = socket.socket(family, socket.SOCK_STREAM)
        if family == socket.AF_INET:
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        elif os.path.exists(address):
            os.unlink(address)
        self._family = family
        try:
            self._sock.bind(address)
        except OSError as exc:
            self._sock.close()
            raise RouterUnreachable(f"cannot bind {endpoint}: {exc}") from None
        self._sock.listen()
        self._sock.settimeout(0.1)
        self.endpoint = format_endpoint(family, self._sock.getsockname())
        self._sessions: set[_Session] = set()
        self._lock = threading.Lock()
        self._running = False
        self._thread = threading.Thread(target=self._accept_loop, name="wire-acceptor", daemon=True)

    @property
    def router(self) -> Router:
        return self.service.router

    def start(self) -> "WireServer":
        if self._own_service:
            self.service.start()
        self._running = True
        self._thread.start()
        return self

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, peer = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            session = _Session(self, conn, peer or "unix")
            with self._lock:
                self._sessions.add(session)
            session.thread.start()

    def _forget(self, session: _Session) -> None:
        with self._lock:
            self._sessions.discard(session)

    @property
    def session_count(self) -> int:
        with self._lock:
            return len(self._sessions)

    def close(self) -> None:
        self._running = False
        if self._thread.is_alive():
            self._thread.join()
        self._sock.close()
        with self._lock:
            sessions = list(self._sessions)
        for s in sessions:
            try:
                s.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.thread.join(timeout=5)
        if self._own_service:
            self.service.stop()
        if self._family == socket.AF_UNIX:
            path = parse_endpoint(self.endpoint)[1]
            if os.path.exists(path):
                os.unlink(path)

    def __enter__(self) -> "WireServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serve_router(router: Router | RouterService, endpoint: str = DEFAULT_ENDPOINT) -> WireServer:
    return WireServer(router, endpoint).start()


# client ----------------------------------------------------------------------


class WireClient:
    """Blocking command channel to a remote router; safe to share between threads."""

    def __init__(self, endpoint: str = DEFAULT_ENDPOINT, node: str = "client",
                 registry: SchemaRegistry | None = None, timeout: float = 10.0):
        self.endpoint = endpoint
        self.node = node
        self.registry = registry if registry is not None else default_registry()
        family, address = parse_endpoint(endpoint)
        self._sock = socket.socket(family, socket.SOCK_STREAM)
        self._sock.settimeout(timeout)
        try:
            self._sock.connect(address)
        except OSError as exc:
            self._sock.close()
            raise RouterUnreachable(f"cannot connect to {endpoint}: {exc}") from None
        self._dec = FrameDecoder()
        self._pending: list[Frame] = []
        self._lock = threading.Lock()
        self._token = 0
        self.closed = False
        with self._lock:
            self._send(Frame.of(FrameKind.HELLO, {"node": node, "version": VERSION}))
            reply = self._next_frame()
        if reply.kind != FrameKind.HELLO:
            self.close()
            err = reply.json().get("error", {}) if reply.kind == FrameKind.REPLY else {}
            raise ProtocolError(f"handshake rejected: {err.get('message', reply.kind)}")

    def _send(self, frame: Frame) -> None:
        try:
            _send(self._sock, frame)
        except OSError as exc:
            self.closed = True
            raise RouterUnreachable(f"lost connection to {self.endpoint}: {exc}") from None

    def _next_frame(self) -> Frame:
        while not self._pending:
            try:
                data = self._sock.recv(65536)
            except OSError as exc:
                self.closed = True
                raise RouterUnreachable(f"lost connection to {self.endpoint}: {exc}") from None
            if not data:
                self.closed = True
                raise RouterUnreachable(f"{self.endpoint} closed the connection")
            self._pending.extend(self._dec.feed(data))
        return self._pending.pop(0)

    def call(self, op: str, **args: Any) -> Any:
        if self.closed:
            raise RouterUnreachable("connection closed")
        with self._lock:
            self._token += 1
            token = self._token
            self._send(Frame.of(FrameKind.COMMAND, {"token": token, "op": op, "args": args}))
            while True:
                frame = self._next_frame()
                if frame.kind == FrameKind.EVENT:
                    continue
                if frame.kind != FrameKind.REPLY:
                    raise ProtocolError(f"unexpected frame kind {frame.kind}")
                reply = frame.json()
                if reply.get("token") != token:
                    raise ProtocolError(f"reply token {reply.get('token')!r} does not match {token}")
                return unwrap(reply)

    def close(self) -> None:
        self.closed = True
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self) -> "WireClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
