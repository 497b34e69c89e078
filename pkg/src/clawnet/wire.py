"""Framed wire protocol shared by the orchestrator, gateways and nodes.

One frame = 4-byte big-endian payload length + canonical JSON (sorted keys,
compact separators, ASCII). Frame kinds. REGISTER_NODE, DIRECTIVE,
DIRECTIVE_RESULT, SESSION_TURN, APPROVAL_EVENT, ESCALATION_EVENT, ABORT.
Request/response pairs correlate via msg_id / reply_to. Field layout is
documented in docs/wire-protocol.md.
"""

from __future__ import annotations

import json
import queue
import socket
import struct
import threading
from typing import Callable, Optional

FRAME_KINDS = frozenset(
    {
        "REGISTER_NODE",
        "DIRECTIVE",
        "DIRECTIVE_RESULT",
        "SESSION_TURN",
        "APPROVAL_EVENT",
        "ESCALATION_EVENT",
        "ABORT",
    }
)

MAX_FRAME = 16 * 1024 * 1024


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def encode_frame(frame: dict) -> bytes:
    payload = canonical_json(frame).encode("utf-8")
    if len(payload) > MAX_FRAME:
        raise ValueError("frame too large")
    return struct.pack(">I", len(payload)) + payload


def read_frame(sock: socket.socket) -> Optional[dict]:
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise ValueError("frame too large")
    payload = _read_exact(sock, length)
    if payload is None:
        return None
    return json.loads(payload.decode("utf-8"))


def _read_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class FrameConn:
    """Thread-safe framed connection with msg_id correlation.

    A background reader thread routes reply frames (reply_to set) to blocked
    requesters and everything else to the handler callback.
    """

    def __init__(self, sock: socket.socket, handler: Optional[Callable[[dict], None]] = None):
        self.sock = sock
        self.handler = handler
        self._write_lock = threading.Lock()
        self._waiters: dict[str, queue.Queue] = {}
        self._waiters_lock = threading.Lock()
        self._msg_counter = 0
        self._closed = threading.Event()
        self._reader: Optional[threading.Thread] = None

    def start(self) -> None:
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            while not self._closed.is_set():
                frame = read_frame(self.sock)
                if frame is None:
                    break
                reply_to = frame.get("reply_to")
                if reply_to:
                    with self._waiters_lock:
                        waiter = self._waiters.pop(reply_to, None)
                    if waiter is not None:
                        waiter.put(frame)
                        continue
                if self.handler is not None:
                    self.handler(frame)
        except (OSError, ValueError):
            pass
        finally:
            self._closed.set()
            with self._waiters_lock:
                for waiter in self._waiters.values():
                    waiter.put(None)
                self._waiters.clear()

    def send(self, frame: dict) -> None:
        data = encode_frame(frame)
        with self._write_lock:
            self.sock.sendall(data)

    def fresh_msg_id(self, prefix: str = "w") -> str:
        with self._write_lock:
            self._msg_counter += 1
            return f"{prefix}{self._msg_counter:06d}"

    def request(self, frame: dict, timeout: float = 10.0) -> dict:
        msg_id = frame.get("msg_id") or self.fresh_msg_id()
        frame["msg_id"] = msg_id
        waiter: queue.Queue = queue.Queue(maxsize=1)
        with self._waiters_lock:
            self._waiters[msg_id] = waiter
        self.send(frame)
        try:
            reply = waiter.get(timeout=timeout)
        except queue.Empty:
            with self._waiters_lock:
                self._waiters.pop(msg_id, None)
            raise TimeoutError(f"no reply to {msg_id} within {timeout}s") from None
        if reply is None:
            raise ConnectionError("connection closed while awaiting reply")
        return reply

    def close(self) -> None:
        self._closed.set()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    @property
    def closed(self) -> bool:
        return self._closed.is_set()
