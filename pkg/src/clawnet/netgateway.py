"""Gateway socket client: hosts one owner's agent runtime behind the wire.

Registers with capability "dialogue"; answers SESSION_TURN solicitations by
invoking the local runtime/policies. In-dialogue directives, chained
collaboration requests and routing probes travel back to the server as
DIRECTIVE frames and SESSION_TURN sub-requests (phases spawn/route).
"""

from __future__ import annotations

import base64
import hashlib
import socket
import threading
from typing import Optional

from .errors import PolicyFailure, StructurallyUnroutable
from .policy import HoldForApproval, TurnMsg
from .runtime import AgentRuntime
from .wire import FrameConn


class GatewayClient:
    def __init__(self, runtime: AgentRuntime, server_address: tuple[str, int]):
        self.runtime = runtime
        self.server_address = server_address
        self.conn: Optional[FrameConn] = None
        self.events: list[dict] = []  # approval/escalation pushes, owner-visible
        self._events_lock = threading.Lock()
        self._wire_runtime_hooks()

    def _wire_runtime_hooks(self) -> None:
        self.runtime.directive_hook = self._send_directive
        self.runtime.spawn_hook = self._send_spawn
        self.runtime.envelope_hook = self._send_route
        self.runtime.on_consult = lambda q, r: None  # consult log lives server-side in-proc mode

    def connect(self) -> None:
        sock = socket.create_connection(self.server_address, timeout=5)
        self.conn = FrameConn(sock, handler=self._on_frame)
        self.conn.start()
        ack = self.conn.request(
            {
                "kind": "REGISTER_NODE",
                "owner": self.runtime.owner,
                "node_id": f"gateway-{self.runtime.owner}",
                "capabilities": ["dialogue"],
            }
        )
        if not ack.get("ok"):
            raise ConnectionError(f"gateway registration rejected: {ack.get('error')}")

    def _on_frame(self, frame: dict) -> None:
        kind = frame.get("kind")
        if kind == "SESSION_TURN" and frame.get("phase") == "solicit":
            threading.Thread(target=self._answer_turn, args=(frame,), daemon=True).start()
        elif kind in ("APPROVAL_EVENT", "ESCALATION_EVENT"):
            with self._events_lock:
                self.events.append(frame)

    def _answer_turn(self, frame: dict) -> None:
        assert self.conn is not None
        reply = {"kind": "SESSION_TURN", "phase": "turn", "reply_to": frame.get("msg_id", "")}
        try:
            result = self.runtime.next_turn(
                frame["identity"],
                frame["role_prompt"],
                frame.get("transcript", []),
                frame.get("session", ""),
                int(frame.get("turn_index", 0)),
                granted=frozenset(frame.get("granted", [])),
                rejected=frozenset(frame.get("rejected", [])),
            )
            if isinstance(result, HoldForApproval):
                reply["hold"] = {"summary": result.summary, "key": result.key}
            else:
                assert isinstance(result, TurnMsg)
                reply["turn"] = {"text": result.text, "intent": result.intent, "end": result.end}
        except PolicyFailure as exc:
            reply["error"] = "policy_failure"
            reply["detail"] = str(exc)
        except Exception as exc:
            reply["error"] = "policy_failure"
            reply["detail"] = f"unexpected: {exc}"
        self.conn.send(reply)

    # -- runtime hooks travelling over the wire ---------------------------------

    def _send_directive(self, identity, session, kind, targets, payload) -> dict:
        assert self.conn is not None
        frame = {
            "kind": "DIRECTIVE",
            "issuer": identity,
            "session": session or "",
            "op": {
                "kind": kind,
                "targets": list(targets),
                "payload_digest": hashlib.sha256(payload).hexdigest() if payload else "",
            },
        }
        if payload is not None:
            frame["payload_b64"] = base64.b64encode(payload).decode("ascii")
        reply = self.conn.request(frame, timeout=15)
        return {k: v for k, v in reply.items() if k not in ("kind", "reply_to")}

    def _send_spawn(self, via_identity, responder, intent, parent_session) -> str:
        assert self.conn is not None
        reply = self.conn.request(
            {
                "kind": "SESSION_TURN",
                "phase": "spawn",
                "identity": via_identity,
                "responder": responder,
                "intent": intent,
                "chain_parent": parent_session,
            },
            timeout=15,
        )
        if reply.get("error"):
            raise PolicyFailure(f"spawn rejected: {reply['error']}")
        return reply["session"]

    def _send_route(self, from_identity, destination, session) -> None:
        assert self.conn is not None
        reply = self.conn.request(
            {
                "kind": "SESSION_TURN",
                "phase": "route",
                "identity": from_identity,
                "to": destination,
                "session": session or "",
            },
            timeout=15,
        )
        if reply.get("error") == "structurally_unroutable":
            raise StructurallyUnroutable(reply.get("detail", ""))

    def close(self) -> None:
        if self.conn is not None:
            self.conn.close()
