"""Demo fixture: preloads a server with enough state to exercise the console.

Creates two owners (li with a clean audit log and a live pending approval;
chen with a deliberately tampered persisted log), an escalation for li, and
an in-process node for li with a couple of executed mutations so the
rollback panel has something to reverse.
"""

from __future__ import annotations

import os

from .governance import Operation
from .memory import MemoryStore
from .model import AuthorizationScope
from .node import InMemoryNodeHandle, NodeConfig, NodeEndpoint
from .policy import ScriptedPolicy
from .runtime import AgentRuntime


def load_demo_fixture(server) -> dict:
    orch = server.orch
    base = server.config.log_dir or "."
    home = os.path.join(os.path.abspath(base), "fixture-home")

    for user in ("li", "chen"):
        if user not in orch.registry.users:
            orch.create_user(user, [os.path.join(home, user)])
        os.makedirs(os.path.join(home, user, "work"), exist_ok=True)
        store = MemoryStore(os.path.join(base, "fixture-mem", user))
        runtime = AgentRuntime(user, orch.registry, store)
        orch.attach_runtime(runtime)
        server.config.tokens.setdefault(f"token-{user}", user)

    buyer = orch.create_identity(
        "li",
        "procurement",
        AuthorizationScope.of((os.path.join(home, "li", "work"), "mutative")),
        {"chen"},
    )
    ceo = orch.create_identity("chen", "ceo", AuthorizationScope(), {"li"})
    orch.registry.request_contact("li", "chen")
    orch.registry.confirm_contact("chen", "li")
    orch.assign_contact_identity("li", "chen", buyer.id)
    orch.assign_contact_identity("chen", "li", ceo.id)

    orch.runtimes["li"].bind_policy(
        buyer.id, ScriptedPolicy([{"say": "hello"}, {"say": "bye", "end": True}])
    )
    orch.runtimes["chen"].bind_policy(
        ceo.id, ScriptedPolicy([{"say": "hi"}, {"say": "bye", "end": True}])
    )

    # li's node, with two executed mutations for the rollback panel
    config = NodeConfig(
        node_id="node-li",
        owner="li",
        whitelist=[os.path.join(home, "li")],
        staging_root=os.path.join(base, "fixture-safety", "staging"),
        backup_root=os.path.join(base, "fixture-safety", "backups"),
    )
    node = NodeEndpoint(config)
    orch.register_node(config.node_id, "li", ["read", "write"], InMemoryNodeHandle(node))
    target = os.path.join(home, "li", "work", "notes.txt")
    with open(target, "w") as fh:
        fh.write("v1")
    op = Operation.file_op("write", (target,), issuer=buyer.id, payload_digest="demo")
    orch.proxy_directive(op, payload=b"v2")
    orch.proxy_directive(op, payload=b"v3")

    # a denied directive gives li an escalation to triage
    bad = Operation.file_op("read", ("/etc/shadow",), issuer=buyer.id)
    orch.proxy_directive(bad)

    # one live collaboration awaiting li's approval
    session_id = orch.request_collaboration(buyer.id, "chen", "demo collaboration")

    # chen gets a tampered persisted log: flip one byte of record 1
    if server.config.log_dir:
        from .governance import AuditResult

        chen_log = orch.audit_log("chen")
        for i in range(3):
            orch._audit(
                "chen",
                Operation.admin("demo.mark", issuer="owner:chen", targets=(f"mark{i}",)),
                "owner:chen",
                AuditResult.ALLOWED_EXECUTED,
            )
        chen_log._fh.flush()
        path = os.path.join(server.config.log_dir, "chen.audit")
        with open(path, "rb") as fh:
            lines = fh.readlines()
        for i, line in enumerate(lines):
            idx = line.find(b"mark1")
            if idx != -1:
                mutated = bytearray(line)
                mutated[idx] ^= 0x01
                lines[i] = bytes(mutated)
                break
        with open(path, "wb") as fh:
            fh.writelines(lines)

    return {"session": session_id, "buyer": buyer.id, "ceo": ceo.id, "node": node}
