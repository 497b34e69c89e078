"""Central orchestration engine.

Owns the authoritative registry, per-owner audit logs and escalation feeds,
the collaboration session state machine (bilateral approval, bounded
multi-turn dialogue, bounded recursion chains), identity-based message
routing with structural manager isolation, and the L1 checkpoint on the
directive path to node endpoints.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .errors import (
    AlreadyResolved,
    DepthExceeded,
    Expired,
    NoAssignedIdentity,
    NoContact,
    NotApprover,
    NotOwner,
    NotInSession,
    PeerNotPermitted,
    PolicyFailure,
    SessionNotActive,
    StructurallyUnroutable,
    UnknownDestination,
    UnknownIdentity,
    UnknownSession,
    UnknownUser,
)
from .governance import (
    AuditLog,
    AuditResult,
    Decision,
    EscalationCenter,
    Operation,
    ViolatedLayer,
    authorize_l1,
)
from .model import AuthorizationScope, IdentityAgent, IdentityId, Registry, SessionId, UserId
from .policy import HoldForApproval, TurnMsg
from .runtime import AgentRuntime, digest_text

DEFAULT_MAX_DEPTH = 3
DEFAULT_MAX_TURNS = 20
DEFAULT_APPROVAL_DEADLINE_MS = 24 * 3600 * 1000


class Clock:
    def now_ms(self) -> int:
        import time

        return int(time.time() * 1000)


class SessionState(str, Enum):
    PENDING_INITIATOR_APPROVAL = "PendingInitiatorApproval"
    PENDING_RESPONDER_APPROVAL = "PendingResponderApproval"
    ACTIVE = "Active"
    TERMINATED = "Terminated"


class TerminationReason(str, Enum):
    COMPLETED = "Completed"
    TURN_LIMIT = "TurnLimit"
    OWNER_ABORT = "OwnerAbort"
    REJECTED_BY_INITIATOR = "RejectedByInitiator"
    REJECTED_BY_RESPONDER = "RejectedByResponder"
    APPROVAL_TIMEOUT = "ApprovalTimeout"
    IDENTITY_RETIRED = "IdentityRetired"
    CONTACT_REMOVED = "ContactRemoved"
    FAULT = "Fault"


@dataclass
class Turn:
    speaker: IdentityId
    text: str
    intent: dict[str, str]
    end_marker: bool
    timestamp_ms: int

    def view(self) -> dict:
        return {
            "speaker": self.speaker,
            "text": self.text,
            "intent": dict(self.intent),
            "end": self.end_marker,
        }


@dataclass
class CollaborationSession:
    id: SessionId
    initiator_owner: UserId
    initiator_identity: IdentityId
    responder_owner: UserId
    responder_identity: IdentityId
    state: SessionState
    max_turns: int
    chain_parent: Optional[SessionId] = None
    depth: int = 0
    turn_count: int = 0
    transcript: list[Turn] = field(default_factory=list)
    termination_reason: Optional[TerminationReason] = None
    ended_sides: set[IdentityId] = field(default_factory=set)
    abort_requested: bool = False
    pending_decision: Optional[str] = None
    decision_grants: set[str] = field(default_factory=set)
    decision_rejects: set[str] = field(default_factory=set)

    def participants(self) -> tuple[IdentityId, IdentityId]:
        return (self.initiator_identity, self.responder_identity)

    def owners(self) -> tuple[UserId, UserId]:
        return (self.initiator_owner, self.responder_owner)

    def owner_side(self, identity: IdentityId) -> UserId:
        if identity == self.initiator_identity:
            return self.initiator_owner
        if identity == self.responder_identity:
            return self.responder_owner
        raise NotInSession(identity)

    def counterpart(self, identity: IdentityId) -> IdentityId:
        if identity == self.initiator_identity:
            return self.responder_identity
        return self.initiator_identity


class ApprovalState(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"
    EXPIRED = "expired"


@dataclass
class ApprovalRequest:
    request_id: str
    session: SessionId
    approver: UserId
    role: str  # "initiator" | "responder" | "decision"
    summary: str
    deadline_ms: int
    state: ApprovalState = ApprovalState.PENDING
    decision_key: str = ""


@dataclass(frozen=True)
class Envelope:
    from_identity: IdentityId
    to: str  # "identity:<id>" or "manager:<owner>"
    session: Optional[SessionId] = None
    content: str = ""


@dataclass(frozen=True)
class DeliveryResult:
    delivered: bool
    destination: str


class IdFactory:
    """Deterministic id source: per-prefix counters, shared by a whole run."""

    def __init__(self):
        self._counts: dict[str, int] = {}
        self._lock = threading.Lock()

    def next(self, prefix: str, width: int = 4) -> str:
        with self._lock:
            n = self._counts.get(prefix, 0) + 1
            self._counts[prefix] = n
        return f"{prefix}{n:0{width}d}"

    def suffix_source(self) -> Callable[[], int]:
        def fresh() -> int:
            with self._lock:
                n = self._counts.get("_ident", 0) + 1
                self._counts["_ident"] = n
            return n

        return fresh


class Orchestrator:
    """Single-authority server core. Transport-agnostic: gateways and nodes
    attach through handles, so the same logic runs in-memory (simulator) and
    behind sockets (real server). Mutations are serialized by one lock, which
    subsumes the per-user serialization the model layer requires."""

    def __init__(
        self,
        clock: Optional[Clock] = None,
        max_depth: int = DEFAULT_MAX_DEPTH,
        max_turns: int = DEFAULT_MAX_TURNS,
        approval_deadline_ms: int = DEFAULT_APPROVAL_DEADLINE_MS,
        log_dir: Optional[str] = None,
        durable_logs: bool = False,
        trace=None,
        ids: Optional[IdFactory] = None,
    ):
        self.clock = clock or Clock()
        self.max_depth = max_depth
        self.max_turns = max_turns
        self.approval_deadline_ms = approval_deadline_ms
        self.trace = trace
        self.ids = ids or IdFactory()
        self.registry = Registry(suffix_source=self.ids.suffix_source())
        self.registry.on_event = self._on_registry_event
        self._log_dir = log_dir
        self._durable = durable_logs
        self._lock = threading.RLock()
        self.audit_logs: dict[UserId, AuditLog] = {}
        self.escalations: dict[UserId, EscalationCenter] = {}
        self.sessions: dict[SessionId, CollaborationSession] = {}
        self.approvals: dict[str, ApprovalRequest] = {}
        self.runtimes: dict[UserId, AgentRuntime] = {}
        self.nodes: dict[UserId, "NodeHandle"] = {}
        self.manager_deliveries: dict[UserId, int] = {}
        self._subscribers: dict[UserId, list[Callable[[dict], None]]] = {}
        self.on_session_active: Optional[Callable[[SessionId], None]] = None
        self.l1_override: Optional[bool] = None  # test hook: force L1 verdict

    # -- plumbing -----------------------------------------------------------

    def _emit(self, event: str, scope: str, **fields) -> None:
        if self.trace is not None:
            self.trace.emit(event, scope=scope, **fields)

    def audit_log(self, owner: UserId) -> AuditLog:
        if owner not in self.audit_logs:
            path = f"{self._log_dir}/{owner}.audit" if self._log_dir else None
            self.audit_logs[owner] = AuditLog(path=path, durable=self._durable)
        return self.audit_logs[owner]

    def escalation_center(self, owner: UserId) -> EscalationCenter:
        if owner not in self.escalations:
            self.escalations[owner] = EscalationCenter(owner)
        return self.escalations[owner]

    def _audit(
        self,
        owner: UserId,
        op: Operation,
        identity: IdentityId,
        result: AuditResult,
        backup_ref: str = "",
    ) -> None:
        rec = self.audit_log(owner).record(
            op, owner, identity, result, self.clock.now_ms(), backup_ref
        )
        self._emit(
            "audit",
            scope=owner,
            owner=owner,
            seq=rec.seq,
            kind=op.kind,
            result=result.value,
            targets=list(op.targets),
            identity=identity,
            session=op.session or "",
        )

    def _on_registry_event(self, owner: UserId, kind: str, subject: str) -> None:
        identity = subject.split("->", 1)[0] if kind.startswith("identity.") else f"owner:{owner}"
        op = Operation.admin(kind, issuer=f"owner:{owner}", targets=(subject,))
        self._audit(owner, op, identity, AuditResult.ALLOWED_EXECUTED)

    def subscribe(self, owner: UserId, callback: Callable[[dict], None]) -> Callable[[], None]:
        """Register a console push listener; returns an unsubscribe thunk."""
        self._subscribers.setdefault(owner, []).append(callback)

        def cancel():
            subs = self._subscribers.get(owner, [])
            if callback in subs:
                subs.remove(callback)

        return cancel

    def _push(self, owner: UserId, event: dict) -> None:
        for callback in list(self._subscribers.get(owner, [])):
            callback(dict(event))

    def _escalate(
        self, owner: UserId, identity: IdentityId, op: Operation, layer: ViolatedLayer
    ) -> None:
        event = self.escalation_center(owner).raise_event(
            self.ids.next("e"), identity, op, layer, self.clock.now_ms()
        )
        self._audit(owner, op, identity, AuditResult.ESCALATED)
        self._emit(
            "escalation",
            scope=owner,
            owner=owner,
            event_id=event.event_id,
            layer=layer.value,
            kind=op.kind,
        )
        self._push(
            owner,
            {
                "event": "escalation",
                "event_id": event.event_id,
                "layer": layer.value,
                "identity": identity,
                "op_kind": op.kind,
                "targets": list(op.targets),
            },
        )

    # -- identity lifecycle (model ops + session/memory consequences) ---------

    def create_user(self, user_id: UserId, resource_roots) -> None:
        with self._lock:
            self.registry.create_user(user_id, resource_roots)

    def create_identity(
        self, owner: UserId, context_tag: str, scope: AuthorizationScope, permitted_peers
    ) -> IdentityAgent:
        with self._lock:
            return self.registry.create_identity(owner, context_tag, scope, permitted_peers)

    def retire_identity(self, owner: UserId, identity: IdentityId) -> dict:
        """Retire and archive: terminate its sessions, clear assignments,
        mark its memory namespace read-only for the owner and manager."""
        with self._lock:
            agent = self.registry.retire_identity(owner, identity)
            terminated = []
            for session in self.sessions.values():
                if session.state is SessionState.TERMINATED:
                    continue
                if identity in session.participants():
                    self._terminate(session, TerminationReason.IDENTITY_RETIRED)
                    terminated.append(session.id)
            user = self.registry.user(owner)
            for peer, rel in list(user.contacts.items()):
                if rel.presented_identity == identity:
                    user.contacts[peer] = rel.__class__(
                        peer=rel.peer, state=rel.state, presented_identity=None
                    )
            store = getattr(self.runtimes.get(owner), "store", None)
            if store is not None:
                store.archive(agent.memory_ns)
            return {"identity": identity, "terminated_sessions": terminated}

    def assign_contact_identity(self, owner: UserId, peer: UserId, identity: IdentityId):
        with self._lock:
            return self.registry.assign_contact_identity(owner, peer, identity)

    # -- attachment -------------------------------------------------------------

    def attach_runtime(self, runtime: AgentRuntime) -> None:
        self.runtimes[runtime.owner] = runtime
        runtime.directive_hook = self._runtime_directive
        runtime.spawn_hook = self._runtime_spawn
        runtime.envelope_hook = self._runtime_envelope
        runtime.on_consult = lambda query, response: self._log_consult(runtime.owner, query, response)

    def _log_consult(self, owner: UserId, query, response) -> None:
        op = Operation.admin(
            "advisor.consult",
            issuer=query.identity,
            targets=(query.identity,),
            payload_digest=digest_text(query.question),
        )
        self._audit(owner, op, query.identity, AuditResult.ALLOWED_EXECUTED)
        self._push(
            owner,
            {
                "event": "advisor",
                "identity": query.identity,
                "question": query.question,
                "sources": list(response.source_namespaces),
            },
        )

    def _runtime_directive(self, identity, session, kind, targets, payload) -> dict:
        digest = None
        if payload is not None:
            import hashlib

            digest = hashlib.sha256(payload).hexdigest()
        op = Operation.file_op(kind, targets, issuer=identity, session=session, payload_digest=digest)
        return self.proxy_directive(op, payload=payload)

    def _runtime_spawn(self, via_identity, responder, intent, parent_session) -> str:
        return self.request_collaboration(via_identity, responder, intent, chain_parent=parent_session)

    def _runtime_envelope(self, from_identity, destination, session) -> None:
        self.route(Envelope(from_identity=from_identity, to=destination, session=session))

    def register_node(self, node_id: str, owner: UserId, capabilities: list[str], handle) -> dict:
        from .errors import DuplicateNode, OwnerMismatch

        with self._lock:
            user = self.registry.user(owner)
            if owner in self.nodes and self.nodes[owner] is not handle:
                raise DuplicateNode(f"{owner} already has a connected node")
            if user.registered_node is not None and user.registered_node != node_id:
                raise OwnerMismatch(f"{owner} is bound to node {user.registered_node}")
            user.registered_node = node_id
            self.nodes[owner] = handle
            op = Operation.admin("node.register", issuer=f"owner:{owner}", targets=(node_id,))
            self._audit(owner, op, f"owner:{owner}", AuditResult.ALLOWED_EXECUTED)
            return {"ok": True, "node_id": node_id, "capabilities": list(capabilities)}

    def detach_node(self, owner: UserId) -> None:
        self.nodes.pop(owner, None)

    # -- collaboration lifecycle ---------------------------------------------------

    def request_collaboration(
        self,
        initiator_identity: IdentityId,
        responder_user: UserId,
        intent: str,
        chain_parent: Optional[SessionId] = None,
    ) -> SessionId:
        with self._lock:
            ident = self.registry.active_identity(initiator_identity)
            u = ident.owner
            if responder_user not in self.registry.users:
                raise UnknownUser(responder_user)
            if not self.registry.contacts_confirmed(u, responder_user):
                raise NoContact(f"{u} and {responder_user} are not contacts")
            presented = self.registry.presented_identity(responder_user, toward=u)
            if presented is None:
                raise NoAssignedIdentity(f"{responder_user} presents no identity toward {u}")
            responder_ident = self.registry.active_identity(presented)
            # The two membership conjuncts of the connection predicate.
            if u not in responder_ident.permitted_peers or responder_user not in ident.permitted_peers:
                op = Operation.admin(
                    "session.request", issuer=initiator_identity, targets=(responder_user,)
                )
                self._escalate(u, initiator_identity, op, ViolatedLayer.SESSION)
                raise PeerNotPermitted(
                    f"peer membership missing between {initiator_identity} and {presented}"
                )
            depth = 0
            if chain_parent is not None:
                parent = self._session(chain_parent)
                if parent.state is SessionState.TERMINATED:
                    raise SessionNotActive(chain_parent)
                depth = parent.depth + 1
                if depth >= self.max_depth:
                    raise DepthExceeded(f"depth {depth} >= d_max {self.max_depth}")
            session = CollaborationSession(
                id=self.ids.next("s"),
                initiator_owner=u,
                initiator_identity=initiator_identity,
                responder_owner=responder_user,
                responder_identity=presented,
                state=SessionState.PENDING_INITIATOR_APPROVAL,
                max_turns=self.max_turns,
                chain_parent=chain_parent,
                depth=depth,
            )
            self.sessions[session.id] = session
            op = Operation.admin(
                "session.request",
                issuer=initiator_identity,
                targets=(responder_user,),
                session=session.id,
            )
            self._audit(u, op, initiator_identity, AuditResult.ALLOWED_EXECUTED)
            self._emit(
                "session.state",
                scope=session.id,
                session=session.id,
                state=session.state.value,
                depth=depth,
                parent=chain_parent or "",
                initiator=initiator_identity,
                responder=presented,
            )
            self._queue_approval(session, approver=u, role="initiator", summary=intent)
            return session.id

    def _queue_approval(
        self,
        session: CollaborationSession,
        approver: UserId,
        role: str,
        summary: str,
        decision_key: str = "",
    ) -> ApprovalRequest:
        if role != "decision":
            for req in self.approvals.values():
                if (
                    req.session == session.id
                    and req.approver == approver
                    and req.state is ApprovalState.PENDING
                ):
                    return req  # one pending request per (session, approver)
        request = ApprovalRequest(
            request_id=self.ids.next("a"),
            session=session.id,
            approver=approver,
            role=role,
            summary=summary,
            deadline_ms=self.clock.now_ms() + self.approval_deadline_ms,
            decision_key=decision_key,
        )
        self.approvals[request.request_id] = request
        self._emit(
            "approval",
            scope=session.id,
            request=request.request_id,
            session=session.id,
            approver=approver,
            role=role,
            state="pending",
        )
        self._push(
            approver,
            {
                "event": "approval_request",
                "request_id": request.request_id,
                "session": session.id,
                "role": role,
                "summary": summary,
            },
        )
        return request

    def pending_approvals(self, owner: UserId) -> list[ApprovalRequest]:
        self.expire_due()
        return [
            r
            for r in self.approvals.values()
            if r.approver == owner and r.state is ApprovalState.PENDING
        ]

    def resolve_approval(self, request_id: str, decision: str, actor: UserId) -> str:
        with self._lock:
            request = self.approvals.get(request_id)
            if request is None:
                raise AlreadyResolved(request_id)
            if request.approver != actor:
                raise NotApprover(f"{actor} is not the approver of {request_id}")
            if request.state is not ApprovalState.PENDING:
                raise AlreadyResolved(request_id)
            session = self._session(request.session)
            if self.clock.now_ms() > request.deadline_ms:
                self._expire_request(request, session)
                raise Expired(request_id)
            approve = decision == "approve"
            request.state = ApprovalState.APPROVED if approve else ApprovalState.REJECTED
            op = Operation.admin(
                "session.approve" if approve else "session.reject",
                issuer=f"owner:{actor}",
                targets=(request.request_id,),
                session=session.id,
            )
            self._audit(actor, op, f"owner:{actor}", AuditResult.ALLOWED_EXECUTED)
            self._emit(
                "approval",
                scope=session.id,
                request=request.request_id,
                session=session.id,
                approver=actor,
                role=request.role,
                state=request.state.value,
            )

            if request.role == "decision":
                if approve:
                    session.decision_grants.add(request.decision_key)
                else:
                    session.decision_rejects.add(request.decision_key)
                session.pending_decision = None
                self._push_session_state(session)
                return session.state.value

            if not approve:
                reason = (
                    TerminationReason.REJECTED_BY_INITIATOR
                    if request.role == "initiator"
                    else TerminationReason.REJECTED_BY_RESPONDER
                )
                self._terminate(session, reason)
                return session.state.value

            if request.role == "initiator":
                session.state = SessionState.PENDING_RESPONDER_APPROVAL
                self._emit_session_state(session)
                self._queue_approval(
                    session,
                    approver=session.responder_owner,
                    role="responder",
                    summary=request.summary,
                )
            else:
                session.state = SessionState.ACTIVE
                self._emit_session_state(session)
                for owner in session.owners():
                    op = Operation.admin(
                        "session.activate",
                        issuer=f"owner:{owner}",
                        targets=(session.id,),
                        session=session.id,
                    )
                    self._audit(owner, op, f"owner:{owner}", AuditResult.ALLOWED_EXECUTED)
                self._push_session_state(session)
                if self.on_session_active is not None:
                    self.on_session_active(session.id)
            return session.state.value

    def expire_due(self) -> None:
        now = self.clock.now_ms()
        with self._lock:
            for request in list(self.approvals.values()):
                if request.state is ApprovalState.PENDING and now > request.deadline_ms:
                    self._expire_request(request, self._session(request.session))

    def _expire_request(self, request: ApprovalRequest, session: CollaborationSession) -> None:
        request.state = ApprovalState.EXPIRED
        self._emit(
            "approval",
            scope=session.id,
            request=request.request_id,
            session=session.id,
            approver=request.approver,
            role=request.role,
            state="expired",
        )
        if request.role == "decision":
            session.decision_rejects.add(request.decision_key)
            session.pending_decision = None
        elif session.state is not SessionState.TERMINATED:
            self._terminate(session, TerminationReason.APPROVAL_TIMEOUT)

    def abort_session(self, owner: UserId, session_id: SessionId) -> None:
        with self._lock:
            session = self._session(session_id)
            if owner not in session.owners():
                raise NotOwner(f"{owner} is not a participant owner of {session_id}")
            if session.state is SessionState.TERMINATED:
                return
            op = Operation.admin(
                "session.abort", issuer=f"owner:{owner}", targets=(session_id,), session=session_id
            )
            self._audit(owner, op, f"owner:{owner}", AuditResult.ALLOWED_EXECUTED)
            self._terminate(session, TerminationReason.OWNER_ABORT)

    def _session(self, session_id: SessionId) -> CollaborationSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(session_id) from None

    def _terminate(self, session: CollaborationSession, reason: TerminationReason) -> None:
        session.state = SessionState.TERMINATED
        session.termination_reason = reason
        session.pending_decision = None
        for request in self.approvals.values():
            if request.session == session.id and request.state is ApprovalState.PENDING:
                request.state = ApprovalState.EXPIRED
        for owner in set(session.owners()):
            op = Operation.admin(
                "session.terminate",
                issuer=f"owner:{owner}",
                targets=(reason.value,),
                session=session.id,
            )
            self._audit(owner, op, f"owner:{owner}", AuditResult.ALLOWED_EXECUTED)
        self._emit_session_state(session)
        self._push_session_state(session)

    def _emit_session_state(self, session: CollaborationSession) -> None:
        self._emit(
            "session.state",
            scope=session.id,
            session=session.id,
            state=session.state.value,
            reason=session.termination_reason.value if session.termination_reason else "",
            turn_count=session.turn_count,
        )

    def _push_session_state(self, session: CollaborationSession) -> None:
        for owner in set(session.owners()):
            self._push(
                owner,
                {
                    "event": "session",
                    "session": session.id,
                    "state": session.state.value,
                    "reason": session.termination_reason.value
                    if session.termination_reason
                    else "",
                    "turn_count": session.turn_count,
                },
            )

    # -- dialogue --------------------------------------------------------------------

    def role_prompt(self, session: CollaborationSession, identity: IdentityId) -> str:
        agent = self.registry.identity(identity)
        peer = self.registry.identity(session.counterpart(identity))
        return (
            f"Session {session.id}, turn {session.turn_count}. "
            f"You are '{agent.context_tag}', an identity of {agent.owner}, "
            f"speaking with '{peer.context_tag}' of {peer.owner}. "
            "Stay in role. Share only knowledge belonging to this identity. "
            "Escalate decisions outside your mandate to your owner. "
            "Conclude with an end marker once your objective is met."
        )

    def _next_speaker(self, session: CollaborationSession) -> IdentityId:
        if not session.transcript:
            return session.initiator_identity
        return session.counterpart(session.transcript[-1].speaker)

    def step_session(self, session_id: SessionId) -> bool:
        """Advance one turn. Returns True if the session can still make
        progress without external input (approval, abort).

        The policy solicitation happens outside the orchestrator lock: turns
        may themselves issue directives, spawn chained sessions or consult
        routing, all of which re-enter the orchestrator (over the wire, on a
        different thread). State is re-validated before the turn commits.
        """
        with self._lock:
            session = self._session(session_id)
            if session.state is not SessionState.ACTIVE:
                return False
            if session.pending_decision is not None:
                return False  # waiting on the owner
            if any(
                s.chain_parent == session.id and s.state is not SessionState.TERMINATED
                for s in self.sessions.values()
            ):
                return False  # parent pauses (but does not block) while children run
            speaker = self._next_speaker(session)
            owner = session.owner_side(speaker)

            # Per-turn identity verification and authorization checks.
            agent = self.registry.identity(speaker)
            peer_agent = self.registry.identity(session.counterpart(speaker))
            if not agent.active or not peer_agent.active:
                self._terminate(session, TerminationReason.IDENTITY_RETIRED)
                return False
            if not self.registry.contacts_confirmed(*session.owners()):
                self._terminate(session, TerminationReason.CONTACT_REMOVED)
                return False

            runtime = self.runtimes.get(owner)
            if runtime is None:
                self._terminate(session, TerminationReason.FAULT)
                return False
            prompt = self.role_prompt(session, speaker)
            transcript_view = [t.view() for t in session.transcript]
            expected_turns = session.turn_count
            granted = frozenset(session.decision_grants)
            rejected = frozenset(session.decision_rejects)

        try:
            result = runtime.next_turn(
                speaker,
                prompt,
                transcript_view,
                session.id,
                expected_turns,
                granted=granted,
                rejected=rejected,
            )
        except PolicyFailure:
            with self._lock:
                if session.state is SessionState.ACTIVE:
                    op = Operation.admin("session.turn", issuer=speaker, session=session.id)
                    self._escalate(owner, speaker, op, ViolatedLayer.SESSION)
                    self._terminate(session, TerminationReason.FAULT)
            return False

        with self._lock:
            if session.state is not SessionState.ACTIVE:
                return False  # aborted/retired while the policy was thinking
            if session.turn_count != expected_turns:
                return False  # lost a race with another pump; drop the stale turn

            if isinstance(result, HoldForApproval):
                request = self._queue_approval(
                    session,
                    approver=owner,
                    role="decision",
                    summary=result.summary,
                    decision_key=result.key,
                )
                session.pending_decision = request.request_id
                return False

            assert isinstance(result, TurnMsg)
            end = result.end or speaker in session.ended_sides
            turn = Turn(
                speaker=speaker,
                text=result.text,
                intent=result.intent,
                end_marker=end,
                timestamp_ms=self.clock.now_ms(),
            )
            session.transcript.append(turn)
            session.turn_count += 1
            if end:
                session.ended_sides.add(speaker)
            op = Operation.admin(
                "session.turn",
                issuer=speaker,
                session=session.id,
                payload_digest=digest_text(result.text),
            )
            self._audit(owner, op, speaker, AuditResult.ALLOWED_EXECUTED)
            self._emit(
                "turn",
                scope=session.id,
                session=session.id,
                speaker=speaker,
                from_owner=owner,
                to_owner=session.owner_side(session.counterpart(speaker)),
                text=result.text,
                end=end,
                turn=session.turn_count,
            )

            prior = session.transcript[-2] if len(session.transcript) >= 2 else None
            if end and prior is not None and prior.end_marker:
                self._terminate(session, TerminationReason.COMPLETED)
                return False
            if session.turn_count >= session.max_turns:
                self._terminate(session, TerminationReason.TURN_LIMIT)
                return False
            return True

    def run_dialogue(self, session_id: SessionId) -> TerminationReason:
        """Drive an active session until it terminates or needs owner input."""
        session = self._session(session_id)
        if session.state is not SessionState.ACTIVE:
            if session.state is SessionState.TERMINATED and session.termination_reason:
                return session.termination_reason
            raise SessionNotActive(session_id)
        while self.step_session(session_id):
            pass
        session = self._session(session_id)
        if session.termination_reason is not None:
            return session.termination_reason
        raise SessionNotActive(f"{session_id} paused awaiting owner input")

    # -- routing ---------------------------------------------------------------------

    def route(self, envelope: Envelope) -> DeliveryResult:
        """Identity-based routing. Managers are structurally unreachable from
        outside their owner's agent system: the check sits in the routing
        table itself, before any policy or session lookup."""
        origin = self.registry.identity(envelope.from_identity)
        kind, _, rest = envelope.to.partition(":")
        if kind == "manager":
            target_owner = rest
            if target_owner not in self.registry.users:
                raise UnknownDestination(envelope.to)
            if origin.owner != target_owner:
                op = Operation.admin(
                    "route.deny",
                    issuer=envelope.from_identity,
                    targets=(envelope.to,),
                    session=envelope.session,
                )
                self._escalate(target_owner, envelope.from_identity, op, ViolatedLayer.ROUTING)
                raise StructurallyUnroutable(f"manager of {target_owner} is not externally routable")
            self.manager_deliveries[target_owner] = self.manager_deliveries.get(target_owner, 0) + 1
            self._emit(
                "route",
                scope=target_owner,
                frm=envelope.from_identity,
                to=envelope.to,
                delivered=True,
            )
            return DeliveryResult(True, envelope.to)
        if kind != "identity":
            raise UnknownDestination(envelope.to)
        dest = rest
        if dest not in self.registry.identities:
            raise UnknownDestination(dest)
        dest_agent = self.registry.identity(dest)
        if dest_agent.owner == origin.owner:
            self._emit("route", scope=origin.owner, frm=origin.id, to=dest, delivered=True)
            return DeliveryResult(True, dest)  # within-owner internal address
        session = self.sessions.get(envelope.session or "")
        if (
            session is None
            or session.state is not SessionState.ACTIVE
            or origin.id not in session.participants()
            or dest not in session.participants()
        ):
            raise NotInSession(f"{origin.id} -> {dest}")
        self._emit(
            "route",
            scope=session.id,
            frm=origin.id,
            to=dest,
            session=session.id,
            delivered=True,
        )
        return DeliveryResult(True, dest)

    # -- directive path (server-side L1 checkpoint) --------------------------------------

    def proxy_directive(self, op: Operation, payload: Optional[bytes] = None) -> dict:
        if not op.is_file_op and op.kind not in ("node.undo", "node.rollback"):
            raise ValueError(f"not a directive kind: {op.kind}")
        ident = self.registry.identity(op.issuer)
        owner = ident.owner

        if op.is_file_op:
            decision = authorize_l1(op, ident)
            if self.l1_override is True:
                decision = Decision.allow()
            if not decision.allowed:
                self._audit(owner, op, ident.id, AuditResult.DENIED_L1)
                self._escalate(owner, ident.id, op, ViolatedLayer.L1)
                return {
                    "status": "denied_l1",
                    "reason": decision.reason.value if decision.reason else "",
                }

        handle = self.nodes.get(owner)
        if handle is None:
            self._audit(owner, op, ident.id, AuditResult.FAILED_EXEC)
            return {"status": "failed_exec", "reason": "node_unavailable"}

        frame = {
            "kind": "DIRECTIVE",
            "msg_id": self.ids.next("m", width=6),
            "session": op.session or "",
            "issuer": op.issuer,
            "op": {
                "kind": op.kind,
                "targets": list(op.targets),
                "payload_digest": op.payload_digest or "",
            },
        }
        if payload is not None:
            import base64

            frame["payload_b64"] = base64.b64encode(payload).decode("ascii")
        try:
            result = handle.execute_directive(frame)
        except Exception:
            self._audit(owner, op, ident.id, AuditResult.FAILED_EXEC)
            return {"status": "failed_exec", "reason": "node_error"}

        status = result.get("status", "failed_exec")
        backup_ref = result.get("backup_ref", "")
        if status == "allowed_executed":
            self._audit(owner, op, ident.id, AuditResult.ALLOWED_EXECUTED, backup_ref=backup_ref)
        elif status == "denied_l2":
            self._audit(owner, op, ident.id, AuditResult.DENIED_L2)
            self._escalate(owner, ident.id, op, ViolatedLayer.L2)
        else:
            self._audit(owner, op, ident.id, AuditResult.FAILED_EXEC)
        self._emit(
            "directive.result",
            scope=owner,
            msg_id=frame["msg_id"],
            status=status,
            kind=op.kind,
            targets=list(op.targets),
            session=op.session or "",
        )
        return result

    def node_command(self, owner: UserId, kind: str, arg: int) -> dict:
        """Owner-invoked undo/rollback relayed to the owner's node."""
        handle = self.nodes.get(owner)
        if handle is None:
            from .errors import NodeUnavailable

            raise NodeUnavailable(owner)
        frame = {
            "kind": "DIRECTIVE",
            "msg_id": self.ids.next("m", width=6),
            "issuer": f"owner:{owner}",
            "op": {"kind": kind, "targets": [str(arg)], "payload_digest": ""},
        }
        op = Operation.admin(kind, issuer=f"owner:{owner}", targets=(str(arg),))
        result = handle.execute_directive(frame)
        self._audit(owner, op, f"owner:{owner}", AuditResult.ALLOWED_EXECUTED)
        return result

    # -- console queries -------------------------------------------------------------

    def sessions_of(self, owner: UserId) -> list[CollaborationSession]:
        return [s for s in self.sessions.values() if owner in s.owners()]

    def session_view(self, session: CollaborationSession) -> dict:
        return {
            "id": session.id,
            "state": session.state.value,
            "reason": session.termination_reason.value if session.termination_reason else "",
            "initiator": session.initiator_identity,
            "responder": session.responder_identity,
            "turn_count": session.turn_count,
            "max_turns": session.max_turns,
            "depth": session.depth,
            "chain_parent": session.chain_parent or "",
        }
