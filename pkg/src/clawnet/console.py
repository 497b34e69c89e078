"""Owner console HTTP API: request/response endpoints plus an SSE stream.

Every route is scoped to the bearer-token-authenticated owner; nothing here
widens authority beyond the orchestrator's own checks. Payload field names
are documented in docs/console-api.md.
"""

from __future__ import annotations

import asyncio
import json
import queue
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import StreamingResponse

from .errors import ClawNetError, NodeUnavailable
from .governance import AuditRecord, verify_log_file
from .model import AuthorizationScope


def _record_view(rec: AuditRecord) -> dict:
    return {
        "seq": rec.seq,
        "kind": rec.op.kind,
        "targets": list(rec.op.targets),
        "issuer": rec.op.issuer,
        "session": rec.op.session or "",
        "result": rec.result.value,
        "identity": rec.identity,
        "t": rec.timestamp_ms,
        "backup_ref": rec.backup_ref,
        "hash": rec.record_hash.hex(),
    }


def build_console_app(server) -> FastAPI:
    orch = server.orch
    tokens = dict(server.config.tokens)
    app = FastAPI(title="clawnet console", docs_url=None, redoc_url=None)

    def owner_of(request: Request) -> str:
        auth = request.headers.get("authorization", "")
        if not auth.lower().startswith("bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        owner = tokens.get(auth[7:].strip())
        if owner is None:
            raise HTTPException(status_code=401, detail="unknown token")
        return owner

    def translate(exc: ClawNetError) -> HTTPException:
        status = 403 if exc.code in ("not_owner", "not_approver") else 409
        return HTTPException(status_code=status, detail={"code": exc.code, "message": str(exc)})

    @app.get("/api/whoami")
    def whoami(owner: str = Depends(owner_of)):
        return {"owner": owner}

    # -- approvals -----------------------------------------------------------

    @app.get("/api/approvals")
    def approvals(owner: str = Depends(owner_of)):
        pending = orch.pending_approvals(owner)
        return {
            "approvals": [
                {
                    "request_id": r.request_id,
                    "session": r.session,
                    "role": r.role,
                    "summary": r.summary,
                    "deadline_ms": r.deadline_ms,
                    "state": r.state.value,
                }
                for r in pending
            ]
        }

    @app.post("/api/approvals/{request_id}")
    async def resolve(request_id: str, request: Request, owner: str = Depends(owner_of)):
        body = await request.json()
        decision = body.get("decision", "")
        if decision not in ("approve", "reject"):
            raise HTTPException(status_code=422, detail="decision must be approve|reject")
        try:
            state = orch.resolve_approval(request_id, decision, owner)
        except ClawNetError as exc:
            raise translate(exc) from exc
        return {"session_state": state}

    # -- escalations ------------------------------------------------------------

    @app.get("/api/escalations")
    def escalations(owner: str = Depends(owner_of), include_acknowledged: bool = True):
        center = orch.escalation_center(owner)
        return {
            "escalations": [
                {
                    "event_id": e.event_id,
                    "identity": e.identity,
                    "layer": e.violated_layer.value,
                    "op_kind": e.attempted_op.kind,
                    "targets": list(e.attempted_op.targets),
                    "t": e.timestamp_ms,
                    "acknowledged": e.acknowledged,
                }
                for e in center.events(include_acknowledged=include_acknowledged)
            ]
        }

    @app.post("/api/escalations/{event_id}/ack")
    def acknowledge(event_id: str, owner: str = Depends(owner_of)):
        center = orch.escalation_center(owner)
        try:
            event = center.acknowledge(event_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown event") from None
        return {"event_id": event.event_id, "acknowledged": event.acknowledged}

    # -- audit ---------------------------------------------------------------------

    @app.get("/api/audit")
    def audit(owner: str = Depends(owner_of), since: int = 0, limit: int = 100):
        log = orch.audit_log(owner)
        records = [r for r in log.records if r.seq >= since][: max(0, min(limit, 1000))]
        return {
            "records": [_record_view(r) for r in records],
            "head_seq": len(log) - 1,
        }

    @app.get("/api/audit/verify")
    def audit_verify(owner: str = Depends(owner_of)):
        if server.config.log_dir:
            path = f"{server.config.log_dir}/{owner}.audit"
            import os

            if os.path.exists(path):
                verdict = verify_log_file(path)
                return {"ok": verdict.ok, "broken_at": verdict.broken_at}
        verdict = orch.audit_log(owner).verify()
        return {"ok": verdict.ok, "broken_at": verdict.broken_at}

    # -- sessions ------------------------------------------------------------------

    @app.get("/api/sessions")
    def sessions(owner: str = Depends(owner_of)):
        return {"sessions": [orch.session_view(s) for s in orch.sessions_of(owner)]}

    @app.post("/api/sessions/{session_id}/abort")
    def abort(session_id: str, owner: str = Depends(owner_of)):
        try:
            orch.abort_session(owner, session_id)
        except ClawNetError as exc:
            raise translate(exc) from exc
        return {"session_state": orch.sessions[session_id].state.value}

    # -- identities and contacts ------------------------------------------------------

    @app.get("/api/identities")
    def identities(owner: str = Depends(owner_of)):
        return {
            "identities": [
                {
                    "id": a.id,
                    "context_tag": a.context_tag,
                    "status": a.status.value,
                    "permitted_peers": sorted(a.permitted_peers),
                    "scope": [
                        {"prefix": g.path_prefix, "class": g.op_class.value}
                        for g in a.scope.grants
                    ],
                }
                for a in orch.registry.identities_of(owner)
            ]
        }

    @app.post("/api/identities")
    async def create_identity(request: Request, owner: str = Depends(owner_of)):
        body = await request.json()
        try:
            scope = AuthorizationScope.of(
                *[(g["prefix"], g.get("class", "read_only")) for g in body.get("scope", [])]
            )
            agent = orch.create_identity(
                owner, body.get("tag", ""), scope, set(body.get("peers", []))
            )
        except (ClawNetError, ValueError) as exc:
            code = getattr(exc, "code", "invalid")
            raise HTTPException(status_code=409, detail={"code": code, "message": str(exc)})
        return {"id": agent.id}

    @app.post("/api/identities/retire")
    async def retire(request: Request, owner: str = Depends(owner_of)):
        body = await request.json()
        try:
            return orch.retire_identity(owner, body["id"])
        except ClawNetError as exc:
            raise translate(exc) from exc

    @app.get("/api/contacts")
    def contacts(owner: str = Depends(owner_of)):
        user = orch.registry.user(owner)
        return {
            "contacts": [
                {
                    "peer": rel.peer,
                    "state": rel.state.value,
                    "presented_identity": rel.presented_identity or "",
                }
                for rel in sorted(user.contacts.values(), key=lambda r: r.peer)
            ]
        }

    @app.post("/api/contacts/request")
    async def contact_request(request: Request, owner: str = Depends(owner_of)):
        body = await request.json()
        try:
            orch.registry.request_contact(owner, body["peer"])
        except ClawNetError as exc:
            raise translate(exc) from exc
        return {"ok": True}

    @app.post("/api/contacts/confirm")
    async def contact_confirm(request: Request, owner: str = Depends(owner_of)):
        body = await request.json()
        try:
            orch.registry.confirm_contact(owner, body["peer"])
        except ClawNetError as exc:
            raise translate(exc) from exc
        return {"ok": True}

    @app.post("/api/contacts/assign")
    async def contact_assign(request: Request, owner: str = Depends(owner_of)):
        body = await request.json()
        try:
            rel = orch.assign_contact_identity(owner, body["peer"], body["identity"])
        except ClawNetError as exc:
            raise translate(exc) from exc
        return {"peer": rel.peer, "presented_identity": rel.presented_identity}

    # -- node undo / rollback ------------------------------------------------------------

    @app.post("/api/node/undo")
    async def node_undo(request: Request, owner: str = Depends(owner_of)):
        body = await request.json()
        try:
            return orch.node_command(owner, "node.undo", int(body.get("n", 1)))
        except NodeUnavailable as exc:
            raise HTTPException(status_code=503, detail={"code": exc.code}) from exc

    @app.post("/api/node/rollback")
    async def node_rollback(request: Request, owner: str = Depends(owner_of)):
        body = await request.json()
        try:
            return orch.node_command(owner, "node.rollback", int(body.get("to_seq", -1)))
        except NodeUnavailable as exc:
            raise HTTPException(status_code=503, detail={"code": exc.code}) from exc

    # -- server push -------------------------------------------------------------------------

    @app.get("/api/events")
    async def events(request: Request, owner: str = Depends(owner_of)):
        channel: queue.Queue = queue.Queue()
        cancel = orch.subscribe(owner, channel.put)

        async def stream():
            try:
                yield "event: hello\ndata: {}\n\n"
                while True:
                    if await request.is_disconnected():
                        break
                    try:
                        event = channel.get_nowait()
                    except queue.Empty:
                        await asyncio.sleep(0.05)
                        continue
                    name = event.get("event", "message")
                    yield f"event: {name}\ndata: {json.dumps(event, sort_keys=True)}\n\n"
            finally:
                cancel()

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app
