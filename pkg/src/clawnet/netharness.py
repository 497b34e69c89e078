"""Socket-lane scenario runner: the same scenario files, the real server.

Gateways and nodes talk to the orchestrator over loopback TCP with the
production framing; dialogue is driven by the server's pump threads instead
of the simulator's tick loop. Owner actions keep their file order; scenario
tick numbers become ordering constraints backed by wait-for-precondition
polling, since wall-clock interleaving is not deterministic here.
"""

from __future__ import annotations

import os
import time

from .errors import ClawNetError
from .governance import FILE_KINDS
from .memory import MemoryStore
from .model import AuthorizationScope
from .memory import MemoryLayer
from .netgateway import GatewayClient
from .netnode import NodeClient
from .node import NodeConfig, tree_hash
from .orchestrator import SessionState
from .policy import build_policy
from .runtime import AgentRuntime
from .server import WallClock, WireServer
from .sim import EventTrace, ExitReport, Scenario, ScenarioRun


class SocketScenarioRun(ScenarioRun):
    def __init__(self, scenario: Scenario, run_root: str):
        super().__init__(scenario, run_root)
        # wall clock and generous deadlines; expiry is not what this lane tests
        self.clock = WallClock()
        self.orch.clock = self.clock
        self.orch.approval_deadline_ms = 120_000
        self.gateways: dict[str, GatewayClient] = {}
        self.node_clients: dict[str, NodeClient] = {}
        self.wire: WireServer | None = None

    # -- wiring ----------------------------------------------------------------

    def setup(self) -> None:  # replaces the in-memory wiring entirely
        raw = self.scenario.raw
        self.wire = WireServer(self.orch, host="127.0.0.1", port=0)
        self.wire.start()
        address = ("127.0.0.1", self.wire.port)

        for user, spec in raw.get("users", {}).items():
            spec = spec or {}
            roots = [self.rebase(r) for r in spec.get("roots", [f"~{user}"])]
            for root in roots:
                os.makedirs(root, exist_ok=True)
            self.orch.create_user(user, roots)
            for rel, content in (spec.get("files") or {}).items():
                full = self.rebase(rel)
                os.makedirs(os.path.dirname(full), exist_ok=True)
                with open(full, "w", encoding="utf-8") as fh:
                    fh.write(content)
            store = MemoryStore(os.path.join(self.run_root, "mem", user))
            runtime = AgentRuntime(user, self.orch.registry, store)
            gateway = GatewayClient(runtime, address)
            gateway.connect()
            self.gateways[user] = gateway
            self.runtimes[user] = runtime

        for alias, spec in (raw.get("identities") or {}).items():
            owner = spec["owner"]
            scope = AuthorizationScope.of(
                *[(self.rebase(g["prefix"]), g.get("class", "read_only")) for g in spec.get("scope", [])]
            )
            agent = self.orch.create_identity(owner, spec["tag"], scope, set(spec.get("peers", [])))
            self.identity_ids[alias] = agent.id
            policy_spec = spec.get("policy", {"kind": "scripted", "steps": []})
            steps = self._rebase_steps(policy_spec.get("steps", []))
            policy = build_policy(policy_spec.get("kind", "scripted"), {**policy_spec, "steps": steps})
            self.runtimes[owner].bind_policy(agent.id, policy)
            for entry in spec.get("memory", []):
                self.runtimes[owner].remember(
                    agent.id, MemoryLayer(entry["layer"]), entry["key"], entry["value"]
                )

        for contact in raw.get("contacts", []):
            a, b = contact["a"], contact["b"]
            self.orch.registry.request_contact(a, b)
            self.orch.registry.confirm_contact(b, a)
            if contact.get("present_a"):
                self.orch.assign_contact_identity(a, b, self.identity_ids[contact["present_a"]])
            if contact.get("present_b"):
                self.orch.assign_contact_identity(b, a, self.identity_ids[contact["present_b"]])

        for user, spec in (raw.get("nodes") or {}).items():
            spec = spec or {}
            config = NodeConfig(
                node_id=f"node-{user}",
                owner=user,
                whitelist=[self.rebase(w) for w in spec.get("whitelist", [f"~{user}"])],
                staging_root=os.path.join(self.run_root, "safety", user, "staging"),
                backup_root=os.path.join(self.run_root, "safety", user, "backups"),
                server_address=f"127.0.0.1:{self.wire.port}",
            )
            client = NodeClient(config, max_attempts=3)
            client.connect_and_register()
            self.node_clients[user] = client
            self.nodes[user] = client.node

        for user in raw.get("users", {}):
            self.initial_tree_hash[user] = tree_hash(os.path.join(self.run_root, "home", user))

    # -- ordered actions with preconditions -----------------------------------------

    def _wait(self, predicate, timeout: float = 8.0, interval: float = 0.02) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if predicate():
                return True
            time.sleep(interval)
        return False

    def _precondition(self, action: dict) -> None:
        do = action["do"]
        if do == "collaborate" and action.get("chain_parent"):
            label = action["chain_parent"]
            self._wait(
                lambda: label in self.session_labels
                and self.orch.sessions[self.session_labels[label]].state is SessionState.ACTIVE
            )
        elif do in ("approve", "reject"):
            self._wait(lambda: bool(self.orch.pending_approvals(action["owner"])))
        elif do == "approve_all":
            self._wait(lambda: bool(self.orch.pending_approvals(action["owner"])))
            time.sleep(0.2)  # let sibling requests land before approving the batch
        elif do == "abort":
            label = action["session"]
            self._wait(lambda: label in self.session_labels or label in self.orch.sessions)

    def run(self) -> ExitReport:
        try:
            self.setup()
            self._resolve_spawn_aliases()
            for action in self.scenario.raw.get("actions", []):
                self._precondition(action)
                try:
                    self._do_action(action)
                except ClawNetError as exc:
                    self.trace.emit(
                        "action.rejected", scope=action.get("label", ""), code=exc.code,
                        do=action["do"],
                    )
            self._wait(
                lambda: all(
                    s.state is SessionState.TERMINATED for s in self.orch.sessions.values()
                ),
                timeout=30.0,
            )
            time.sleep(0.1)  # let trailing audit/result frames settle
            return self._evaluate()
        finally:
            self.teardown()

    def teardown(self) -> None:
        for gateway in self.gateways.values():
            gateway.close()
        for client in self.node_clients.values():
            client.stop()
        if self.wire is not None:
            self.wire.stop()
        for log in self.orch.audit_logs.values():
            log.close()


def run_scenario_over_sockets(path: str, run_root: str) -> tuple[EventTrace, ExitReport]:
    scenario = Scenario.load(path)
    run = SocketScenarioRun(scenario, run_root=run_root)
    report = run.run()
    return run.trace, report
