"""Per-owner gateway runtime: hosts the manager agent and identity agents.

One runtime per owner. It enforces memory namespace isolation between the
owner's identities, answers internal advisor queries by aggregating over all
of the owner's namespaces, and dispatches turn solicitations to the policy
bound to each identity. Cross-owner calls are rejected structurally.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .errors import ForeignNamespace, IdentityRetired, PolicyFailure, StructurallyUnroutable
from .memory import MemoryEntry, MemoryLayer, MemoryStore
from .model import IdentityAgent, IdentityId, Registry, UserId
from .policy import (
    AdvisorQuery,
    AdvisorResponse,
    HoldForApproval,
    Policy,
    TurnMsg,
)


def _tokens(text: str) -> set[str]:
    return set(re.findall(r"[a-z0-9]+", text.lower()))


def context_filter(entries: list[MemoryEntry], question: str, context_tag: str) -> list[MemoryEntry]:
    """Deterministic retrieval rule for advisor queries.

    An entry is retrievable iff the query names its key verbatim, or the key
    shares at least one token with the query text + asking context tag after
    lowercase tokenization. Deliberately simple so tests have an oracle.
    """
    effective = f"{question} {context_tag}"
    query_tokens = _tokens(effective)
    lowered = effective.lower()
    picked = []
    for entry in entries:
        if entry.key.lower() in lowered or (_tokens(entry.key) & query_tokens):
            picked.append(entry)
    return picked


@dataclass
class PolicyBinding:
    identity: IdentityId
    policy: Policy
    config: dict = field(default_factory=dict)


class _TurnContext:
    """Capability surface handed to a policy for one turn; see PolicyContext."""

    def __init__(
        self,
        runtime: "AgentRuntime",
        agent: IdentityAgent,
        role_prompt: str,
        transcript: Sequence[dict],
        session: str,
        turn_index: int,
        decisions: tuple[frozenset, frozenset],
    ):
        self._runtime = runtime
        self._agent = agent
        self.identity = agent.id
        self.role_prompt = role_prompt
        self.transcript = transcript
        self.session = session
        self.turn_index = turn_index
        self._granted, self._rejected = decisions

    def memory(self, layer: Optional[MemoryLayer] = None) -> list[MemoryEntry]:
        return self._runtime.recall(self.identity, layer)

    def remember(self, layer: MemoryLayer, key: str, value: str) -> None:
        self._runtime.remember(self.identity, layer, key, value)

    def consult(self, question: str) -> AdvisorResponse:
        return self._runtime.consult_manager(
            AdvisorQuery(identity=self.identity, context_tag=self._agent.context_tag, question=question)
        )

    def directive(self, kind: str, targets: Sequence[str], payload: Optional[bytes] = None) -> dict:
        return self._runtime.issue_directive(self.identity, self.session, kind, list(targets), payload)

    def spawn(self, via_identity: str, responder: str, intent: str) -> str:
        return self._runtime.spawn_collaboration(via_identity, responder, intent, self.session)

    def probe_manager(self, owner: str) -> None:
        self._runtime.send_external(self.identity, f"manager:{owner}", self.session)

    def decision_granted(self, key: str) -> bool:
        return key in self._granted

    def decision_rejected(self, key: str) -> bool:
        return key in self._rejected


class AgentRuntime:
    """Gateway runtime for one owner's agent system."""

    def __init__(
        self,
        owner: UserId,
        registry: Registry,
        store: MemoryStore,
        clock_ms: Callable[[], int] = lambda: 0,
    ):
        self.owner = owner
        self.registry = registry
        self.store = store
        self.clock_ms = clock_ms
        self.bindings: dict[IdentityId, PolicyBinding] = {}
        # Hooks wired by the orchestrator attachment (or socket gateway client).
        self.on_consult: Optional[Callable[[AdvisorQuery, AdvisorResponse], None]] = None
        self.directive_hook: Optional[Callable[[IdentityId, str, str, list[str], Optional[bytes]], dict]] = None
        self.spawn_hook: Optional[Callable[[IdentityId, UserId, str, str], str]] = None
        self.envelope_hook: Optional[Callable[[IdentityId, str, str], None]] = None

    # -- policy management ---------------------------------------------------

    def bind_policy(self, identity: IdentityId, policy: Policy, config: Optional[dict] = None) -> None:
        agent = self.registry.identity(identity)
        if agent.owner != self.owner:
            raise StructurallyUnroutable(f"{identity} does not belong to {self.owner}")
        self.bindings[identity] = PolicyBinding(identity=identity, policy=policy, config=config or {})

    def _agent(self, identity: IdentityId) -> IdentityAgent:
        agent = self.registry.identity(identity)
        if agent.owner != self.owner:
            raise StructurallyUnroutable(f"{identity} does not belong to {self.owner}")
        return agent

    # -- three-layer memory ----------------------------------------------------

    def remember(
        self,
        identity: IdentityId,
        layer: MemoryLayer,
        key: str,
        value: str,
        namespace: Optional[str] = None,
    ) -> MemoryEntry:
        agent = self._agent(identity)
        if not agent.active:
            raise IdentityRetired(identity)
        if namespace is not None and namespace != agent.memory_ns:
            raise ForeignNamespace(f"{identity} may not write namespace {namespace}")
        return self.store.put(agent.memory_ns, layer, key, value)

    def recall(
        self,
        identity: IdentityId,
        layer: Optional[MemoryLayer] = None,
        key_prefix: Optional[str] = None,
    ) -> list[MemoryEntry]:
        agent = self._agent(identity)
        if not agent.active:
            # archived namespaces stay readable for the owner and manager only
            raise IdentityRetired(identity)
        return self.store.get(agent.memory_ns, layer, key_prefix)

    def owner_recall(
        self,
        namespace: str,
        layer: Optional[MemoryLayer] = None,
        key_prefix: Optional[str] = None,
    ) -> list[MemoryEntry]:
        """Owner/manager read path; works on archived namespaces too."""
        if not any(a.memory_ns == namespace for a in self.registry.identities_of(self.owner)):
            raise ForeignNamespace(namespace)
        return self.store.get(namespace, layer, key_prefix)

    # -- internal advisor ---------------------------------------------------------

    def consult_manager(self, query: AdvisorQuery) -> AdvisorResponse:
        """Aggregate over all of the owner's namespaces, filtered by context.

        The response goes only to the asking identity and is logged to the
        owner; it is never placed in a cross-user envelope by this layer.
        """
        agent = self.registry.identity(query.identity)
        if agent.owner != self.owner:
            raise StructurallyUnroutable("manager consultation is same-owner only")
        if not agent.active:
            raise IdentityRetired(query.identity)
        matched: list[MemoryEntry] = []
        for other in sorted(self.registry.identities_of(self.owner), key=lambda a: a.memory_ns):
            entries = self.store.get(other.memory_ns)
            matched.extend(context_filter(entries, query.question, query.context_tag))
        matched.sort(key=lambda e: (e.namespace, e.layer.value, e.key))
        advice = "\n".join(f"[{e.namespace}] {e.layer.value} {e.key}: {e.value}" for e in matched)
        response = AdvisorResponse(
            advice=advice or "no relevant knowledge",
            source_namespaces=tuple(sorted({e.namespace for e in matched})),
        )
        if self.on_consult is not None:
            self.on_consult(query, response)
        return response

    # -- dialogue ---------------------------------------------------------------------

    def compose_prompt(self, identity: IdentityId, base_prompt: str) -> str:
        """Append the identity's value-layer constraints to the role prompt."""
        values = self.store.get(self.registry.identity(identity).memory_ns, MemoryLayer.VALUE)
        if not values:
            return base_prompt
        lines = "; ".join(f"{e.key}: {e.value}" for e in values)
        return f"{base_prompt} Hard constraints: {lines}"

    def next_turn(
        self,
        identity: IdentityId,
        role_prompt: str,
        transcript: Sequence[dict],
        session: str,
        turn_index: int,
        granted: frozenset = frozenset(),
        rejected: frozenset = frozenset(),
    ) -> TurnMsg | HoldForApproval:
        agent = self._agent(identity)
        if not agent.active:
            raise IdentityRetired(identity)
        binding = self.bindings.get(identity)
        if binding is None:
            raise PolicyFailure(f"no policy bound for {identity}")
        ctx = _TurnContext(
            self,
            agent,
            self.compose_prompt(identity, role_prompt),
            transcript,
            session,
            turn_index,
            (granted, rejected),
        )
        result = binding.policy.next_turn(ctx)
        if not isinstance(result, (TurnMsg, HoldForApproval)):
            raise PolicyFailure(f"policy returned {type(result).__name__}")
        return result

    # -- orchestrator-facing hooks -----------------------------------------------------

    def issue_directive(
        self,
        identity: IdentityId,
        session: str,
        kind: str,
        targets: list[str],
        payload: Optional[bytes],
    ) -> dict:
        if self.directive_hook is None:
            raise PolicyFailure("runtime not attached to an orchestrator")
        return self.directive_hook(identity, session, kind, targets, payload)

    def spawn_collaboration(
        self, via_identity: IdentityId, responder: UserId, intent: str, parent_session: str
    ) -> str:
        if self.spawn_hook is None:
            raise PolicyFailure("runtime not attached to an orchestrator")
        return self.spawn_hook(via_identity, responder, intent, parent_session)

    def send_external(self, from_identity: IdentityId, destination: str, session: str) -> None:
        if self.envelope_hook is None:
            raise PolicyFailure("runtime not attached to an orchestrator")
        self.envelope_hook(from_identity, destination, session)


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
