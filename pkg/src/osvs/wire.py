"""Socket transport for live sessions: length-delimited JSON text frames.

Frame layout: the payload byte length in ASCII decimal, a newline, then
exactly that many bytes of compact JSON (an object with a "type" field).
The server drives timing; the client answers `ready`, `response`, and
`sync` messages. Clock synchronization uses four timestamps: the server
sends `sync_req {t0}`, the client replies `sync {t0, t1, t2}` stamped
with its own clock, and the server computes the offset on arrival.
"""

from __future__ import annotations

import json
import socket
import threading
from typing import Any, Optional

from .errors import WireError
from .protocol import SessionPlan
from .runtime import Clock, EventLog, PortDisconnected, WallClock, run_session

MAX_FRAME_BYTES = 1 << 16
RECV_CHUNK = 4096


def encode_message(msg: dict[str, Any]) -> bytes:
    if "type" not in msg:
        raise WireError("message lacks a type field")
    payload = json.dumps(msg, separators=(",", ":"), sort_keys=True).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise WireError(f"frame of {len(payload)} bytes exceeds {MAX_FRAME_BYTES}")
    return str(len(payload)).encode("ascii") + b"\n" + payload


class FrameDecoder:
    """Incremental decoder; tolerates arbitrary chunk boundaries."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[dict[str, Any]]:
        self._buf.extend(data)
        out: list[dict[str, Any]] = []
        while True:
            nl = self._buf.find(b"\n")
            if nl < 0:
                if len(self._buf) > 8:
                    raise WireError("frame header too long")
                return out
            header = bytes(self._buf[:nl])
            if not header.isdigit():
                raise WireError(f"bad frame header {header!r}")
            length = int(header)
            if length > MAX_FRAME_BYTES:
                raise WireError(f"frame of {length} bytes exceeds {MAX_FRAME_BYTES}")
            if len(self._buf) < nl + 1 + length:
                return out
            payload = bytes(self._buf[nl + 1:nl + 1 + length])
            del self._buf[:nl + 1 + length]
            try:
                msg = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise WireError(f"undecodable frame payload: {exc}") from exc
            if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
                raise WireError("frame payload is not an object with a type")
            out.append(msg)


class SocketPort:
    """Adapts a connected socket to the participant port interface."""

    def __init__(self, sock: socket.socket, clock: Clock) -> None:
        self._sock = sock
        self._clock = clock
        self._decoder = FrameDecoder()
        self._pending: list[dict[str, Any]] = []

    def send(self, message: dict[str, Any]) -> None:
        try:
            self._sock.sendall(encode_message(message))
        except OSError as exc:
            raise PortDisconnected(f"send failed: {exc}") from exc

    def recv_until(self, deadline_us: int) -> Optional[dict[str, Any]]:
        while True:
            if self._pending:
                return self._pending.pop(0)
            remaining_us = deadline_us - self._clock.now_us()
            if remaining_us <= 0:
                return None
            self._sock.settimeout(remaining_us / 1e6)
            try:
                data = self._sock.recv(RECV_CHUNK)
            except TimeoutError:
                return None
            except OSError as exc:
                raise PortDisconnected(f"recv failed: {exc}") from exc
            if not data:
                raise PortDisconnected("peer closed the connection")
            self._pending.extend(self._decoder.feed(data))


class SessionServer:
    """One-shot TCP server: accept a single client, run one session."""

    def __init__(self, plan: SessionPlan, host: str = "127.0.0.1", port: int = 0,
                 accept_timeout_s: float = 30.0) -> None:
        self.plan = plan
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(1)
        self._listener.settimeout(accept_timeout_s)
        self.address: tuple[str, int] = self._listener.getsockname()[:2]
        self._lock = threading.Lock()

    def run(self, participant: str = "anon", cue_mode: str = "confirm",
            cue_duration_ms: int = 2000) -> EventLog:
        with self._lock:
            try:
                conn, _peer = self._listener.accept()
            except TimeoutError:
                raise WireError("no client connected before the accept timeout") from None
            finally:
                self._listener.close()
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            clock = WallClock()
            port = SocketPort(conn, clock)
            try:
                return run_session(
                    self.plan, port, clock=clock, participant_id=participant,
                    cue_mode=cue_mode, cue_duration_ms=cue_duration_ms,
                )
            finally:
                conn.close()

    def close(self) -> None:
        self._listener.close()
