"""Node endpoint socket client: registers, then serves directives.

Connection attempts retry with exponential backoff; no directive executes
while disconnected (execution only ever happens in response to a DIRECTIVE
frame on a live, registered connection).
"""

from __future__ import annotations

import socket
import threading
import time
from typing import Optional

from .governance import FILE_KINDS
from .node import NodeConfig, NodeEndpoint
from .wire import FrameConn


class NodeClient:
    def __init__(self, config: NodeConfig, max_attempts: int = 0, base_backoff: float = 0.5):
        self.config = config
        self.node = NodeEndpoint(config)
        self.max_attempts = max_attempts  # 0 = retry forever
        self.base_backoff = base_backoff
        self.conn: Optional[FrameConn] = None
        self._stop = threading.Event()
        self.registered = threading.Event()

    def _address(self) -> tuple[str, int]:
        host, _, port = self.config.server_address.partition(":")
        return host or "127.0.0.1", int(port)

    def connect_and_register(self) -> None:
        attempt = 0
        while not self._stop.is_set():
            attempt += 1
            try:
                sock = socket.create_connection(self._address(), timeout=5)
                break
            except OSError:
                if self.max_attempts and attempt >= self.max_attempts:
                    raise
                time.sleep(min(self.base_backoff * (2 ** (attempt - 1)), 10.0))
        else:
            return
        self.conn = FrameConn(sock, handler=self._on_frame)
        self.conn.start()
        ack = self.conn.request(
            {
                "kind": "REGISTER_NODE",
                "owner": self.config.owner,
                "node_id": self.config.node_id,
                "capabilities": sorted(FILE_KINDS),
            }
        )
        if not ack.get("ok"):
            raise ConnectionError(f"registration rejected: {ack.get('error')}")
        self.registered.set()

    def _on_frame(self, frame: dict) -> None:
        if frame.get("kind") != "DIRECTIVE":
            return
        result = self.node.handle_directive(frame)
        response = {"kind": "DIRECTIVE_RESULT", "reply_to": frame.get("msg_id", "")}
        response.update(result)
        assert self.conn is not None
        self.conn.send(response)

    def run_forever(self) -> None:
        while not self._stop.is_set():
            self.registered.clear()
            try:
                self.connect_and_register()
            except OSError:
                continue
            assert self.conn is not None
            while not self.conn.closed and not self._stop.is_set():
                time.sleep(0.2)

    def stop(self) -> None:
        self._stop.set()
        if self.conn is not None:
            self.conn.close()
