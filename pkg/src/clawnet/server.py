"""Real multi-threaded server: framed TCP for gateways/nodes, HTTP console.

The orchestrator core is the same object the simulator drives; this module
adds transports around it. Gateways and nodes register over a persistent
socket (REGISTER_NODE with a capability list; 'dialogue' marks a gateway).
Active sessions are pumped by per-session threads.
"""

from __future__ import annotations

import configparser
import os
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .errors import ClawNetError, PolicyFailure
from .governance import Operation
from .orchestrator import Clock, Orchestrator, SessionState
from .policy import HoldForApproval, TurnMsg
from .wire import FrameConn


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    wire_port: int = 7420
    http_port: int = 8420
    log_dir: str = ""
    durable: bool = False
    approval_deadline_ms: int = 24 * 3600 * 1000
    users: dict[str, list[str]] = field(default_factory=dict)
    tokens: dict[str, str] = field(default_factory=dict)  # token -> owner


def load_server_config(path: str) -> ServerConfig:
    parser = configparser.ConfigParser()
    if not parser.read(path) or "server" not in parser:
        raise ValueError(f"invalid server config: {path}")
    section = parser["server"]
    users = {}
    if "users" in parser:
        for name, roots in parser["users"].items():
            users[name] = [r.strip() for r in roots.split(",") if r.strip()]
    tokens = {}
    if "tokens" in parser:
        for name, token in parser["tokens"].items():
            tokens[token.strip()] = name
    return ServerConfig(
        host=section.get("host", "127.0.0.1"),
        wire_port=section.getint("wire_port", 7420),
        http_port=section.getint("http_port", 8420),
        log_dir=section.get("log_dir", ""),
        durable=section.getboolean("durable", fallback=False),
        approval_deadline_ms=section.getint("approval_deadline_ms", 24 * 3600 * 1000),
        users=users,
        tokens=tokens,
    )


class RemoteGateway:
    """Orchestrator-side proxy for a gateway connected over the wire.

    Exposes the runtime surface the dialogue loop needs; turn solicitations
    become SESSION_TURN request frames.
    """

    def __init__(self, owner: str, conn: FrameConn, timeout: float = 10.0):
        self.owner = owner
        self.conn = conn
        self.timeout = timeout
        self.store = None  # memory lives gateway-side

    def next_turn(self, identity, role_prompt, transcript, session, turn_index,
                  granted=frozenset(), rejected=frozenset()):
        reply = self.conn.request(
            {
                "kind": "SESSION_TURN",
                "phase": "solicit",
                "identity": identity,
                "role_prompt": role_prompt,
                "transcript": list(transcript),
                "session": session,
                "turn_index": turn_index,
                "granted": sorted(granted),
                "rejected": sorted(rejected),
            },
            timeout=self.timeout,
        )
        if reply.get("error"):
            raise PolicyFailure(reply.get("detail", reply["error"]))
        if "hold" in reply:
            return HoldForApproval(summary=reply["hold"]["summary"], key=reply["hold"]["key"])
        turn = reply["turn"]
        return TurnMsg(
            text=turn.get("text", ""),
            intent={str(k): str(v) for k, v in (turn.get("intent") or {}).items()},
            end=bool(turn.get("end", False)),
        )


class SocketNodeHandle:
    """Orchestrator-side handle for a node connected over the wire."""

    def __init__(self, owner: str, conn: FrameConn, trace=None, timeout: float = 10.0):
        self.owner = owner
        self.conn = conn
        self.trace = trace
        self.timeout = timeout

    def execute_directive(self, frame: dict) -> dict:
        if self.trace is not None:
            self.trace.emit(
                "frame.directive",
                scope=self.owner,
                msg_id=frame.get("msg_id", ""),
                kind=frame["op"]["kind"],
                targets=list(frame["op"]["targets"]),
            )
        request = dict(frame)
        request["kind"] = "DIRECTIVE"
        reply = self.conn.request(request, timeout=self.timeout)
        result = {k: v for k, v in reply.items() if k not in ("kind", "reply_to", "msg_id")}
        if self.trace is not None:
            self.trace.emit(
                "frame.directive_result",
                scope=self.owner,
                msg_id=frame.get("msg_id", ""),
                status=result.get("status", ""),
            )
        return result


class WireServer:
    """Accept loop plus per-connection reader threads and session pumps."""

    def __init__(self, orch: Orchestrator, host: str = "127.0.0.1", port: int = 0):
        self.orch = orch
        self.host = host
        self.port = port
        self._listener: Optional[socket.socket] = None
        self._threads: list[threading.Thread] = []
        self._conns: list[FrameConn] = []
        self._stop = threading.Event()
        self._pumps: dict[str, threading.Thread] = {}
        orch.on_session_active = self.pump_session

    def start(self) -> None:
        self._listener = socket.create_server((self.host, self.port))
        self.port = self._listener.getsockname()[1]
        accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        accept_thread.start()
        self._threads.append(accept_thread)

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except OSError:
                break
            conn_box: dict = {}
            conn = FrameConn(sock, handler=lambda f, box=conn_box: self._dispatch(box, f))
            conn_box["conn"] = conn
            self._conns.append(conn)
            conn.start()

    def _dispatch(self, box: dict, frame: dict) -> None:
        conn: FrameConn = box["conn"]
        kind = frame.get("kind")
        try:
            if kind == "REGISTER_NODE":
                owner = frame["owner"]
                capabilities = frame.get("capabilities", [])
                if "dialogue" in capabilities:
                    self.orch.runtimes[owner] = RemoteGateway(owner, conn)
                    self._subscribe_gateway(owner, conn)
                    ack = {"ok": True, "role": "gateway", "capabilities": capabilities}
                else:
                    handle = SocketNodeHandle(owner, conn, trace=self.orch.trace)
                    ack = self.orch.register_node(frame["node_id"], owner, capabilities, handle)
                    ack["role"] = "node"
                conn.send({"kind": "REGISTER_NODE", "reply_to": frame.get("msg_id", ""), **ack})
            elif kind == "DIRECTIVE":
                self._handle_gateway_directive(conn, frame)
            elif kind == "SESSION_TURN" and frame.get("phase") in ("spawn", "route"):
                self._handle_session_action(conn, frame)
            elif kind == "ABORT":
                self.orch.abort_session(frame["owner"], frame["session"])
                conn.send({"kind": "ABORT", "reply_to": frame.get("msg_id", ""), "ok": True})
            # DIRECTIVE_RESULT / SESSION_TURN replies carry reply_to and are
            # routed to waiters by FrameConn before reaching this handler.
        except ClawNetError as exc:
            conn.send(
                {
                    "kind": kind or "ERROR",
                    "reply_to": frame.get("msg_id", ""),
                    "error": exc.code,
                    "detail": str(exc),
                }
            )
        except Exception as exc:  # keep the reader alive; fail the one frame
            try:
                conn.send(
                    {
                        "kind": kind or "ERROR",
                        "reply_to": frame.get("msg_id", ""),
                        "error": "internal",
                        "detail": str(exc),
                    }
                )
            except OSError:
                pass

    def _handle_gateway_directive(self, conn: FrameConn, frame: dict) -> None:
        import base64

        op_spec = frame["op"]
        payload = base64.b64decode(frame["payload_b64"]) if "payload_b64" in frame else None
        digest = op_spec.get("payload_digest") or None
        op = Operation.file_op(
            op_spec["kind"],
            tuple(op_spec["targets"]),
            issuer=frame["issuer"],
            session=frame.get("session") or None,
            payload_digest=digest,
        )
        result = self.orch.proxy_directive(op, payload=payload)
        conn.send({"kind": "DIRECTIVE_RESULT", "reply_to": frame.get("msg_id", ""), **result})

    def _handle_session_action(self, conn: FrameConn, frame: dict) -> None:
        if frame["phase"] == "spawn":
            sid = self.orch.request_collaboration(
                frame["identity"],
                frame["responder"],
                frame.get("intent", ""),
                chain_parent=frame.get("chain_parent") or None,
            )
            conn.send(
                {
                    "kind": "SESSION_TURN",
                    "phase": "result",
                    "reply_to": frame.get("msg_id", ""),
                    "session": sid,
                }
            )
        else:  # route
            from .orchestrator import Envelope

            self.orch.route(
                Envelope(
                    from_identity=frame["identity"],
                    to=frame["to"],
                    session=frame.get("session") or None,
                )
            )
            conn.send(
                {
                    "kind": "SESSION_TURN",
                    "phase": "result",
                    "reply_to": frame.get("msg_id", ""),
                    "ok": True,
                }
            )

    def _subscribe_gateway(self, owner: str, conn: FrameConn) -> None:
        def push(event: dict) -> None:
            kind = "ESCALATION_EVENT" if event.get("event") == "escalation" else "APPROVAL_EVENT"
            try:
                conn.send({"kind": kind, "owner": owner, **event})
            except OSError:
                pass

        self.orch.subscribe(owner, push)

    # -- session pumping -----------------------------------------------------

    def pump_session(self, session_id: str) -> None:
        if session_id in self._pumps and self._pumps[session_id].is_alive():
            return
        thread = threading.Thread(target=self._pump_loop, args=(session_id,), daemon=True)
        self._pumps[session_id] = thread
        thread.start()

    def _pump_loop(self, session_id: str) -> None:
        while not self._stop.is_set():
            session = self.orch.sessions.get(session_id)
            if session is None or session.state is SessionState.TERMINATED:
                return
            progressed = self.orch.step_session(session_id)
            if not progressed:
                if session.state is SessionState.TERMINATED:
                    return
                time.sleep(0.02)  # waiting on owner input or live children

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            self._listener.close()
        for conn in self._conns:
            conn.close()


class WallClock(Clock):
    pass


class ServerApp:
    """Full server process: orchestrator + wire listener + console HTTP."""

    def __init__(self, config: ServerConfig, fixture: Optional[str] = None):
        self.config = config
        log_dir = config.log_dir or None
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        self.orch = Orchestrator(
            clock=WallClock(),
            log_dir=log_dir,
            durable_logs=config.durable,
            approval_deadline_ms=config.approval_deadline_ms,
        )
        for user, roots in config.users.items():
            self.orch.create_user(user, roots)
        self.wire = WireServer(self.orch, host=config.host, port=config.wire_port)
        self._uvicorn_server = None
        if fixture == "demo":
            from .fixture import load_demo_fixture

            load_demo_fixture(self)

    def serve_forever(self) -> None:
        self.wire.start()
        print(f"wire listening on {self.config.host}:{self.wire.port}")
        import uvicorn

        from .console import build_console_app

        app = build_console_app(self)
        config = uvicorn.Config(
            app, host=self.config.host, port=self.config.http_port, log_level="warning"
        )
        self._uvicorn_server = uvicorn.Server(config)
        print(f"console listening on {self.config.host}:{self.config.http_port}")
        self._uvicorn_server.run()

    def shutdown(self) -> None:
        self.wire.stop()
        if self._uvicorn_server is not None:
            self._uvicorn_server.should_exit = True
