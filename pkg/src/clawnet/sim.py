"""Deterministic scenario simulator.

Runs an in-process orchestrator, per-owner runtimes and node endpoints over
in-memory handles under an integer virtual clock. Scenario files are YAML
with the sections documented in docs/scenario-format.md; paths are written
as ``~user/...`` and rebased under a per-run fixture root, which the trace
serializer substitutes back so golden traces stay portable. Same scenario,
same seed: byte-identical serialized trace.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .errors import (
    ClawNetError,
    ExpectationFailed,
    ScenarioParseError,
)
from .governance import FILE_KINDS, READ_ONLY_KINDS, AuditResult, verify_log_file
from .memory import MemoryLayer, MemoryStore
from .model import AuthorizationScope
from .node import InMemoryNodeHandle, NodeConfig, NodeEndpoint, tree_hash
from .orchestrator import IdFactory, Orchestrator, SessionState
from .policy import build_policy
from .runtime import AgentRuntime

ROOT_TOKEN = "${ROOT}"


class VirtualClock:
    """Integer ticks; time advances only when the scheduler says so."""

    def __init__(self, start: int = 0):
        self.tick = start

    def now_ms(self) -> int:
        return self.tick

    def advance(self, n: int = 1) -> int:
        self.tick += n
        return self.tick


class EventTrace:
    """Totally ordered record of everything observable in a run."""

    def __init__(self, root: str = ""):
        self.root = root
        self.events: list[dict] = []

    def emit(self, event: str, scope: str = "", **fields) -> None:
        entry = {"n": len(self.events), "event": event, "scope": scope}
        entry.update(fields)
        self.events.append(entry)

    def _substitute(self, text: str) -> str:
        return text.replace(self.root, ROOT_TOKEN) if self.root else text

    def serialize(self) -> str:
        lines = []
        for event in self.events:
            line = json.dumps(event, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
            lines.append(self._substitute(line))
        return "\n".join(lines) + ("\n" if lines else "")

    @staticmethod
    def parse(text: str) -> list[dict]:
        return [json.loads(line) for line in text.splitlines() if line.strip()]


def diff_trace(actual: list[dict], golden: list[dict], permutation_tolerant: bool = False) -> list[str]:
    """Structural diff; empty list means the traces match.

    Permutation-tolerant mode treats events in different scopes as
    independent: each scope's subsequence must match exactly, but
    interleaving across scopes may differ.
    """

    def canon(events: list[dict], drop_n: bool) -> list[str]:
        out = []
        for e in events:
            e = dict(e)
            if drop_n:
                e.pop("n", None)
            out.append(json.dumps(e, sort_keys=True, separators=(",", ":")))
        return out

    if not permutation_tolerant:
        a, g = canon(actual, drop_n=False), canon(golden, drop_n=False)
        if a == g:
            return []
        import difflib

        return [
            line
            for line in difflib.unified_diff(g, a, "golden", "actual", lineterm="", n=0)
            if line.startswith(("+", "-")) and not line.startswith(("+++", "---"))
        ]

    diffs: list[str] = []
    scopes = sorted(
        {e.get("scope", "") for e in actual} | {e.get("scope", "") for e in golden}
    )
    for scope in scopes:
        a = canon([e for e in actual if e.get("scope", "") == scope], drop_n=True)
        g = canon([e for e in golden if e.get("scope", "") == scope], drop_n=True)
        if a != g:
            import difflib

            for line in difflib.unified_diff(g, a, f"golden[{scope}]", f"actual[{scope}]", lineterm="", n=0):
                if line.startswith(("+", "-")) and not line.startswith(("+++", "---")):
                    diffs.append(line)
    return diffs


@dataclass
class ExitReport:
    ok: bool
    failures: list[str]
    stats: dict

    def summary(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        lines = [f"[{status}] scenario run: {len(self.failures)} failed expectation(s)"]
        lines += [f"  - {f}" for f in self.failures]
        return "\n".join(lines)


@dataclass
class Scenario:
    name: str
    raw: dict
    path: str = ""

    @classmethod
    def load(cls, path: str) -> "Scenario":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ScenarioParseError(f"no such scenario: {path}") from None
        except yaml.YAMLError as exc:
            raise ScenarioParseError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict) or "users" not in raw:
            raise ScenarioParseError(f"{path}: scenario must be a mapping with a users section")
        return cls(name=raw.get("name", os.path.basename(path)), raw=raw, path=path)


class ScenarioRun:
    """One deterministic execution of a scenario under a run root."""

    def __init__(self, scenario: Scenario, run_root: str, seed: int = 0):
        self.scenario = scenario
        self.run_root = os.path.abspath(run_root)
        self.seed = seed
        self.trace = EventTrace(root=self.run_root)
        self.clock = VirtualClock()
        params = scenario.raw.get("params", {})
        self.orch = Orchestrator(
            clock=self.clock,
            max_depth=int(params.get("d_max", 3)),
            max_turns=int(params.get("max_turns", 20)),
            approval_deadline_ms=int(params.get("approval_deadline", 100)),
            log_dir=os.path.join(self.run_root, "logs"),
            trace=self.trace,
            ids=IdFactory(),
        )
        self.runtimes: dict[str, AgentRuntime] = {}
        self.nodes: dict[str, NodeEndpoint] = {}
        self.node_handles: dict[str, InMemoryNodeHandle] = {}
        self.identity_ids: dict[str, str] = {}  # scenario alias -> identity id
        self.session_labels: dict[str, str] = {}  # action label -> session id
        self.initial_tree_hash: dict[str, str] = {}
        self.max_ticks = int(params.get("max_ticks", 500))

    # -- path rebasing -------------------------------------------------------

    def rebase(self, path: str) -> str:
        """Expand ~user/... into an absolute path under the run root."""
        if path.startswith("~"):
            user, _, rest = path[1:].partition("/")
            base = os.path.join(self.run_root, "home", user)
            return os.path.join(base, rest) if rest else base
        if path.startswith("/"):
            return self.run_root + path
        raise ScenarioParseError(f"scenario paths must start with ~user/ or /: {path!r}")

    # -- setup ------------------------------------------------------------------

    def setup(self) -> None:
        raw = self.scenario.raw
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
            store = MemoryStore(
                os.path.join(self.run_root, "mem", user), clock_ms=self.clock.now_ms
            )
            runtime = AgentRuntime(user, self.orch.registry, store, clock_ms=self.clock.now_ms)
            self.orch.attach_runtime(runtime)
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
            )
            node = NodeEndpoint(config, clock_ms=self.clock.now_ms)
            handle = InMemoryNodeHandle(node, trace=self.trace)
            self.orch.register_node(config.node_id, user, list(FILE_KINDS), handle)
            self.nodes[user] = node
            self.node_handles[user] = handle

        for user in raw.get("users", {}):
            self.initial_tree_hash[user] = tree_hash(os.path.join(self.run_root, "home", user))

    def _rebase_steps(self, steps: list[dict]) -> list[dict]:
        out = []
        for step in steps:
            step = dict(step)
            if "ops" in step:
                rebased_ops = []
                for op in step["ops"]:
                    op = dict(op)
                    op["targets"] = [self.rebase(t) for t in op["targets"]]
                    rebased_ops.append(op)
                step["ops"] = rebased_ops
            if "spawn" in step:
                spawns = step["spawn"]
                step["spawn"] = [dict(s) for s in (spawns if isinstance(spawns, list) else [spawns])]
            out.append(step)
        return out

    # -- scheduling -------------------------------------------------------------------

    def _do_action(self, action: dict) -> None:
        kind = action["do"]
        if kind == "collaborate":
            initiator = self.identity_ids[action["identity"]]
            parent = None
            if action.get("chain_parent"):
                parent = self.session_labels[action["chain_parent"]]
            try:
                sid = self.orch.request_collaboration(
                    initiator, action["responder"], action.get("intent", ""), chain_parent=parent
                )
                if action.get("label"):
                    self.session_labels[action["label"]] = sid
            except ClawNetError as exc:
                self.trace.emit(
                    "action.rejected", scope=action.get("label", ""), code=exc.code, do=kind
                )
        elif kind == "approve" or kind == "reject":
            owner = action["owner"]
            pending = self.orch.pending_approvals(owner)
            if action.get("request"):
                pending = [p for p in pending if p.request_id == action["request"]]
            for request in pending[: int(action.get("count", 1)) or len(pending)]:
                self.orch.resolve_approval(request.request_id, kind, owner)
        elif kind == "approve_all":
            owner = action["owner"]
            for request in self.orch.pending_approvals(owner):
                self.orch.resolve_approval(request.request_id, "approve", owner)
        elif kind == "abort":
            sid = self.session_labels.get(action["session"], action["session"])
            self.orch.abort_session(action["owner"], sid)
        elif kind == "retire":
            self.orch.retire_identity(action["owner"], self.identity_ids[action["identity"]])
        elif kind == "probe_manager":
            # adversarial: raw external envelope aimed at a manager agent
            from .errors import StructurallyUnroutable
            from .orchestrator import Envelope

            try:
                self.orch.route(
                    Envelope(
                        from_identity=self.identity_ids[action["identity"]],
                        to=f"manager:{action['target']}",
                    )
                )
            except StructurallyUnroutable:
                pass
        elif kind == "undo":
            self.nodes[action["owner"]].undo(int(action.get("n", 1)))
        elif kind == "rollback":
            self.nodes[action["owner"]].rollback(int(action.get("to_seq", -1)))
        else:
            raise ScenarioParseError(f"unknown owner action: {kind}")

    def _resolve_spawn_aliases(self) -> None:
        """Rewrite scenario identity aliases in spawn steps to real ids."""
        for runtime in self.runtimes.values():
            for binding in runtime.bindings.values():
                steps = getattr(binding.policy, "steps", None)
                if steps:
                    for step in steps:
                        for spawn in step.get("spawn", []):
                            if spawn["identity"] in self.identity_ids:
                                spawn["identity"] = self.identity_ids[spawn["identity"]]

    def run(self) -> ExitReport:
        self.setup()
        self._resolve_spawn_aliases()

        actions = sorted(
            enumerate(self.scenario.raw.get("actions", [])),
            key=lambda pair: (int(pair[1].get("at", 0)), pair[0]),
        )
        queue = [(int(a.get("at", 0)), a) for _, a in actions]
        idle_ticks = 0
        while self.clock.tick <= self.max_ticks:
            progressed = False
            while queue and queue[0][0] <= self.clock.tick:
                _, action = queue.pop(0)
                self._do_action(action)
                progressed = True
            self.orch.expire_due()
            for sid in sorted(self.orch.sessions):
                before = self.orch.sessions[sid].turn_count
                self.orch.step_session(sid)
                if self.orch.sessions[sid].turn_count != before:
                    progressed = True
            pending = any(
                r.state.value == "pending" for r in self.orch.approvals.values()
            )
            live = any(
                s.state in (SessionState.ACTIVE, SessionState.PENDING_INITIATOR_APPROVAL,
                            SessionState.PENDING_RESPONDER_APPROVAL)
                for s in self.orch.sessions.values()
            )
            if not progressed:
                idle_ticks += 1
            else:
                idle_ticks = 0
            if not queue and not live:
                break
            if not queue and not pending and idle_ticks > 3 and not self._any_session_can_step():
                break  # quiescent: only stuck sessions remain
            self.clock.advance()
        report = self._evaluate()
        for log in self.orch.audit_logs.values():
            log.close()
        return report

    def _any_session_can_step(self) -> bool:
        return any(
            s.state is SessionState.ACTIVE and s.pending_decision is None
            for s in self.orch.sessions.values()
        )

    # -- expectations ----------------------------------------------------------------------

    def _evaluate(self) -> ExitReport:
        raw = self.scenario.raw.get("expect", {}) or {}
        failures: list[str] = []
        stats = self._stats()

        for label, want in (raw.get("sessions") or {}).items():
            sid = self.session_labels.get(label)
            if sid is None:
                if want.get("state") == "NotCreated":
                    continue
                failures.append(f"session {label}: never created")
                continue
            session = self.orch.sessions[sid]
            if "state" in want and session.state.value != want["state"]:
                failures.append(f"session {label}: state {session.state.value} != {want['state']}")
            reason = session.termination_reason.value if session.termination_reason else ""
            if "reason" in want and reason != want["reason"]:
                failures.append(f"session {label}: reason {reason} != {want['reason']}")
            if "turns" in want and session.turn_count != int(want["turns"]):
                failures.append(f"session {label}: turns {session.turn_count} != {want['turns']}")
            if "depth" in want and session.depth != int(want["depth"]):
                failures.append(f"session {label}: depth {session.depth} != {want['depth']}")

        for owner, layers in (raw.get("escalations") or {}).items():
            center = self.orch.escalation_center(owner)
            for layer, count in layers.items():
                from .governance import ViolatedLayer

                have = center.count(ViolatedLayer(layer))
                if have != int(count):
                    failures.append(f"escalations {owner}/{layer}: {have} != {count}")

        for marker in raw.get("no_cross_user_marker", []):
            hits = [
                e
                for e in self.trace.events
                if e["event"] == "turn"
                and e.get("from_owner") != e.get("to_owner")
                and marker in e.get("text", "")
            ]
            if hits:
                failures.append(f"marker {marker!r} crossed a user boundary in {len(hits)} frame(s)")

        for check in raw.get("opacity", []):
            sid = self.session_labels.get(check["session"], check["session"])
            root = os.path.join(self.run_root, "home", check["forbidden_user"])
            bad = [
                e
                for e in self.trace.events
                if e["event"] == "audit"
                and e.get("session") == sid
                and e.get("kind") in FILE_KINDS
                and any(t.startswith(root) for t in e.get("targets", []))
            ]
            if bad:
                failures.append(
                    f"opacity: session {check['session']} reached into {check['forbidden_user']}'s files"
                )

        for label, want in (raw.get("children_of") or {}).items():
            sid = self.session_labels.get(label, label)
            children = [s for s in self.orch.sessions.values() if s.chain_parent == sid]
            if "count" in want and len(children) != int(want["count"]):
                failures.append(f"children_of {label}: {len(children)} != {want['count']}")
            for child in children:
                if "state" in want and child.state.value != want["state"]:
                    failures.append(f"child {child.id}: state {child.state.value} != {want['state']}")
                reason = child.termination_reason.value if child.termination_reason else ""
                if "reason" in want and reason != want["reason"]:
                    failures.append(f"child {child.id}: reason {reason} != {want['reason']}")

        for check in raw.get("turn_contains", []):
            sid = self.session_labels.get(check["session"], check["session"])
            session = self.orch.sessions.get(sid)
            idx = int(check["turn"]) - 1
            if session is None or idx >= len(session.transcript):
                failures.append(f"turn_contains: no turn {check['turn']} in {check['session']}")
            elif check["contains"] not in session.transcript[idx].text:
                failures.append(
                    f"turn_contains: turn {check['turn']} of {check['session']} "
                    f"lacks {check['contains']!r}"
                )

        for user in raw.get("tree_unchanged", []):
            now = tree_hash(os.path.join(self.run_root, "home", user))
            if now != self.initial_tree_hash[user]:
                failures.append(f"tree of {user} changed")

        for rel, content in (raw.get("files") or {}).items():
            full = self.rebase(rel)
            if not os.path.exists(full):
                failures.append(f"expected file missing: {rel}")
            elif open(full, encoding="utf-8").read() != content:
                failures.append(f"file content mismatch: {rel}")

        for rel in raw.get("files_absent", []):
            if os.path.exists(self.rebase(rel)):
                failures.append(f"file should be absent: {rel}")

        if raw.get("reconcile", True):
            failures.extend(self.reconcile())

        for key, want in (raw.get("counts") or {}).items():
            if stats.get(key) != int(want):
                failures.append(f"count {key}: {stats.get(key)} != {want}")

        order = raw.get("ordering")
        if order:
            failures.extend(self._check_ordering(order))

        return ExitReport(ok=not failures, failures=failures, stats=stats)

    def _check_ordering(self, order: list[dict]) -> list[str]:
        """Each entry: {before: <event match>, after: <event match>}."""

        def first_index(match: dict) -> Optional[int]:
            for e in self.trace.events:
                if all(e.get(k) == v for k, v in match.items()):
                    return e["n"]
            return None

        failures = []
        for rule in order:
            b, a = first_index(rule["before"]), first_index(rule["after"])
            if b is None or a is None or b >= a:
                failures.append(f"ordering violated: {rule}")
        return failures

    def _stats(self) -> dict:
        executed_mutative = sum(
            1
            for e in self.trace.events
            if e["event"] == "directive.result"
            and e.get("status") == "allowed_executed"
            and e.get("kind") in FILE_KINDS - READ_ONLY_KINDS
        )
        node_mutative_records = sum(
            1
            for node in self.nodes.values()
            for r in node.audit.records
            if r.result is AuditResult.ALLOWED_EXECUTED and r.op.mutative
        )
        denied = {"L1": 0, "L2": 0}
        for log in self.orch.audit_logs.values():
            for r in log.records:
                if r.result is AuditResult.DENIED_L1:
                    denied["L1"] += 1
                elif r.result is AuditResult.DENIED_L2:
                    denied["L2"] += 1
        escalated = {"L1": 0, "L2": 0, "routing": 0, "session": 0}
        for center in self.orch.escalations.values():
            for event in center.events():
                escalated[event.violated_layer.value] += 1
        return {
            "ticks": getattr(self.clock, "tick", -1),
            "events": len(self.trace.events),
            "sessions": len(self.orch.sessions),
            "executed_mutative": executed_mutative,
            "node_mutative_records": node_mutative_records,
            "denied_l1": denied["L1"],
            "denied_l2": denied["L2"],
            "escalated_l1": escalated["L1"],
            "escalated_l2": escalated["L2"],
            "escalated_routing": escalated["routing"],
            "manager_deliveries": sum(self.orch.manager_deliveries.values()),
            "depth_rejected": sum(
                1
                for e in self.trace.events
                if e["event"] == "action.rejected" and e.get("code") == "depth_exceeded"
            ),
        }

    def reconcile(self) -> list[str]:
        """Global accountability arithmetic plus chain verification."""
        failures = []
        stats = self._stats()
        if stats["executed_mutative"] != stats["node_mutative_records"]:
            failures.append(
                "reconcile: executed mutative directives "
                f"{stats['executed_mutative']} != node allowed_executed {stats['node_mutative_records']}"
            )
        if stats["denied_l1"] != stats["escalated_l1"]:
            failures.append(
                f"reconcile: denied_l1 {stats['denied_l1']} != L1 escalations {stats['escalated_l1']}"
            )
        if stats["denied_l2"] != stats["escalated_l2"]:
            failures.append(
                f"reconcile: denied_l2 {stats['denied_l2']} != L2 escalations {stats['escalated_l2']}"
            )
        for owner, log in self.orch.audit_logs.items():
            verdict = log.verify()
            if not verdict.ok:
                failures.append(f"reconcile: audit chain of {owner} broken at {verdict.broken_at}")
        log_dir = os.path.join(self.run_root, "logs")
        if os.path.isdir(log_dir):
            for name in sorted(os.listdir(log_dir)):
                verdict = verify_log_file(os.path.join(log_dir, name))
                if not verdict.ok:
                    failures.append(f"reconcile: persisted log {name} broken at {verdict.broken_at}")
        for owner, node in self.nodes.items():
            verdict = node.audit.verify()
            if not verdict.ok:
                failures.append(f"reconcile: node log of {owner} broken at {verdict.broken_at}")
        return failures


def run_scenario(path: str, run_root: str, seed: int = 0) -> tuple[EventTrace, ExitReport]:
    scenario = Scenario.load(path)
    run = ScenarioRun(scenario, run_root=run_root, seed=seed)
    report = run.run()
    return run.trace, report
