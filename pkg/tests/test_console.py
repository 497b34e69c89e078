import json

import pytest
from fastapi.testclient import TestClient

from clawnet.console import build_console_app
from clawnet.server import ServerApp, ServerConfig

LI = {"Authorization": "Bearer token-li"}
CHEN = {"Authorization": "Bearer token-chen"}


@pytest.fixture
def fixture_server(tmp_path):
    app_ctx = ServerApp(ServerConfig(log_dir=str(tmp_path / "logs"), tokens={}), fixture="demo")
    return app_ctx, TestClient(build_console_app(app_ctx))


def test_requires_bearer_token(fixture_server):
    _, client = fixture_server
    assert client.get("/api/approvals").status_code == 401
    assert client.get("/api/approvals", headers={"Authorization": "Bearer nope"}).status_code == 401


def test_approvals_inbox_resolution_flow(fixture_server):
    app_ctx, client = fixture_server
    inbox = client.get("/api/approvals", headers=LI).json()["approvals"]
    assert len(inbox) == 1 and inbox[0]["role"] == "initiator"
    request_id = inbox[0]["request_id"]

    resolved = client.post(f"/api/approvals/{request_id}", headers=LI, json={"decision": "approve"})
    assert resolved.json()["session_state"] == "PendingResponderApproval"
    # now the responder sees a request; the initiator inbox is empty
    assert client.get("/api/approvals", headers=LI).json()["approvals"] == []
    chen_inbox = client.get("/api/approvals", headers=CHEN).json()["approvals"]
    assert len(chen_inbox) == 1 and chen_inbox[0]["role"] == "responder"

    again = client.post(f"/api/approvals/{request_id}", headers=LI, json={"decision": "approve"})
    assert again.status_code == 409  # AlreadyResolved surfaces as a conflict


def test_cross_owner_resolution_forbidden(fixture_server):
    _, client = fixture_server
    inbox = client.get("/api/approvals", headers=LI).json()["approvals"]
    attempt = client.post(
        f"/api/approvals/{inbox[0]['request_id']}", headers=CHEN, json={"decision": "approve"}
    )
    assert attempt.status_code == 403


def test_escalation_feed_and_idempotent_ack(fixture_server):
    _, client = fixture_server
    feed = client.get("/api/escalations", headers=LI).json()["escalations"]
    assert len(feed) == 1 and feed[0]["layer"] == "L1"
    event_id = feed[0]["event_id"]
    first = client.post(f"/api/escalations/{event_id}/ack", headers=LI).json()
    second = client.post(f"/api/escalations/{event_id}/ack", headers=LI).json()
    assert first["acknowledged"] and second["acknowledged"]
    # acknowledged events persist in the feed
    feed = client.get("/api/escalations", headers=LI).json()["escalations"]
    assert feed[0]["acknowledged"] is True
    # chen has no access to li's events
    assert client.get("/api/escalations", headers=CHEN).json()["escalations"] == []


def test_audit_pagination_and_ownership(fixture_server):
    _, client = fixture_server
    page = client.get("/api/audit", headers=LI, params={"since": 0, "limit": 3}).json()
    assert len(page["records"]) == 3
    assert page["records"][0]["seq"] == 0
    next_page = client.get("/api/audit", headers=LI, params={"since": 3, "limit": 100}).json()
    assert next_page["records"][0]["seq"] == 3
    # no record of another owner ever appears
    chen_page = client.get("/api/audit", headers=CHEN, params={"since": 0, "limit": 1000}).json()
    li_identities = {r["issuer"] for r in page["records"]}
    assert all(r["issuer"] not in li_identities or r["issuer"].startswith("owner:") for r in chen_page["records"])


def test_tampered_log_reports_break_seq(fixture_server):
    _, client = fixture_server
    clean = client.get("/api/audit/verify", headers=LI).json()
    assert clean == {"ok": True, "broken_at": None}
    tampered = client.get("/api/audit/verify", headers=CHEN).json()
    assert tampered["ok"] is False
    assert isinstance(tampered["broken_at"], int)


def test_identity_management_endpoints(fixture_server, tmp_path):
    app_ctx, client = fixture_server
    home = app_ctx.orch.registry.user("li").resource_roots
    root = sorted(home)[0]
    created = client.post(
        "/api/identities",
        headers=LI,
        json={"tag": "research", "scope": [{"prefix": f"{root}/work", "class": "read_only"}], "peers": ["chen"]},
    ).json()
    assert created["id"].startswith("li/research-")
    listing = client.get("/api/identities", headers=LI).json()["identities"]
    assert any(i["id"] == created["id"] for i in listing)
    retired = client.post("/api/identities/retire", headers=LI, json={"id": created["id"]}).json()
    assert retired["identity"] == created["id"]
    # scope outside R_u is rejected with a machine-readable code
    bad = client.post(
        "/api/identities",
        headers=LI,
        json={"tag": "bad", "scope": [{"prefix": "/somewhere/else", "class": "mutative"}], "peers": []},
    )
    assert bad.status_code == 409
    assert bad.json()["detail"]["code"] == "scope_exceeds_resources"


def test_session_views_and_abort(fixture_server):
    app_ctx, client = fixture_server
    sessions = client.get("/api/sessions", headers=LI).json()["sessions"]
    assert len(sessions) == 1
    sid = sessions[0]["id"]
    aborted = client.post(f"/api/sessions/{sid}/abort", headers=LI).json()
    assert aborted["session_state"] == "Terminated"
    view = client.get("/api/sessions", headers=LI).json()["sessions"][0]
    assert view["reason"] == "OwnerAbort"


def test_node_rollback_through_api(fixture_server):
    app_ctx, client = fixture_server
    result = client.post("/api/node/rollback", headers=LI, json={"to_seq": -1}).json()
    assert result["status"] == "allowed_executed"
    assert len(result["report"]["reversals"]) >= 2  # the two fixture writes
    # chen has no node attached
    missing = client.post("/api/node/undo", headers=CHEN, json={"n": 1})
    assert missing.status_code == 503


def test_event_stream_delivers_push_events(fixture_server, free_port):
    """SSE over a real HTTP server; a resolution lands within one push event."""
    import threading

    import httpx
    import uvicorn

    app_ctx, _ = fixture_server
    app = build_console_app(app_ctx)
    config = uvicorn.Config(app, host="127.0.0.1", port=free_port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{free_port}"
    for _ in range(200):
        try:
            httpx.get(base + "/api/whoami", headers=LI, timeout=1)
            break
        except httpx.TransportError:
            import time

            time.sleep(0.02)
    try:
        with httpx.stream("GET", base + "/api/events", headers=CHEN, timeout=10) as stream:
            lines = stream.iter_lines()
            assert next(lines).startswith("event: hello")
            inbox = httpx.get(base + "/api/approvals", headers=LI, timeout=5).json()["approvals"]
            resolved = httpx.post(
                base + f"/api/approvals/{inbox[0]['request_id']}",
                headers=LI,
                json={"decision": "approve"},
                timeout=5,
            )
            assert resolved.json()["session_state"] == "PendingResponderApproval"
            event_name, payload = None, None
            for line in lines:
                if line.startswith("event: "):
                    event_name = line.split(": ", 1)[1]
                elif line.startswith("data: ") and event_name == "approval_request":
                    payload = json.loads(line.split(": ", 1)[1])
                    break
            assert payload is not None
            assert payload["role"] == "responder"
    finally:
        server.should_exit = True
        thread.join(timeout=5)
