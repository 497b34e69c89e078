"""Domain model: users, identity agents, scopes, contacts.

Identifiers are plain strings. An identity id embeds its owner:
``<owner>/<slug-of-context-tag>-<4 hex>`` so audit lines stay human-legible.
All model values are immutable; mutation happens by replacing entries in the
Registry, which validates every invariant before storing anything.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Optional

from . import paths
from .errors import (
    AlreadyRetired,
    IdentityRetired,
    NoConfirmedContact,
    NotOwner,
    PeerNotPermitted,
    ScopeExceedsResources,
    SelfInPeers,
    UnknownIdentity,
    UnknownOwner,
    UnknownUser,
)

UserId = str
IdentityId = str
NodeId = str
SessionId = str


class OpClass(str, Enum):
    READ_ONLY = "read_only"
    MUTATIVE = "mutative"


@dataclass(frozen=True)
class Grant:
    """One scope entry: a normalized absolute path prefix plus an op class.

    A mutative grant implies read access on the same prefix.
    """

    path_prefix: str
    op_class: OpClass

    def __post_init__(self):
        object.__setattr__(self, "path_prefix", paths.normalize(self.path_prefix))
        object.__setattr__(self, "op_class", OpClass(self.op_class))

    def covers(self, path: str, mutative: bool) -> bool:
        if not paths.is_within(path, self.path_prefix):
            return False
        return self.op_class is OpClass.MUTATIVE or not mutative


@dataclass(frozen=True)
class AuthorizationScope:
    """Ordered grant list; an empty list denies everything."""

    grants: tuple[Grant, ...] = ()

    @classmethod
    def of(cls, *entries: tuple[str, str | OpClass]) -> "AuthorizationScope":
        return cls(tuple(Grant(p, OpClass(c)) for p, c in entries))

    def prefixes(self) -> tuple[str, ...]:
        return tuple(g.path_prefix for g in self.grants)


class IdentityStatus(str, Enum):
    ACTIVE = "active"
    RETIRED = "retired"


@dataclass(frozen=True)
class IdentityAgent:
    """Context-scoped outward projection of one owner.

    Carries the context tag, the scoped authorization boundary, the memory
    namespace key and the set of peers permitted to interact with it.
    """

    id: IdentityId
    owner: UserId
    context_tag: str
    scope: AuthorizationScope
    memory_ns: str
    permitted_peers: frozenset[UserId]
    status: IdentityStatus = IdentityStatus.ACTIVE

    @property
    def active(self) -> bool:
        return self.status is IdentityStatus.ACTIVE


@dataclass(frozen=True)
class ManagerAgent:
    """Per-owner internal advisor. No scope, no peers, no external address."""

    owner: UserId


class ContactState(str, Enum):
    PENDING_OUT = "pending_out"
    PENDING_IN = "pending_in"
    CONFIRMED = "confirmed"


@dataclass(frozen=True)
class ContactRelationship:
    peer: UserId
    state: ContactState
    presented_identity: Optional[IdentityId] = None


@dataclass
class User:
    id: UserId
    resource_roots: frozenset[str]
    registered_node: Optional[NodeId] = None
    contacts: dict[UserId, ContactRelationship] = field(default_factory=dict)


def _slug(tag: str) -> str:
    s = re.sub(r"[^a-z0-9]+", "-", tag.lower()).strip("-")
    return s or "role"


def owner_of(identity_id: IdentityId) -> UserId:
    return identity_id.split("/", 1)[0]


class Registry:
    """Authoritative store of users, identities and contact relationships.

    Operations are validating constructors: a call either stores a value that
    satisfies every invariant or raises without storing anything. The
    orchestrator serializes calls per user and layers auditing on top via the
    `on_event` callback (owner, action kind, subject id).
    """

    def __init__(self, suffix_source: Optional[Callable[[], int]] = None):
        self.users: dict[UserId, User] = {}
        self.identities: dict[IdentityId, IdentityAgent] = {}
        self.managers: dict[UserId, ManagerAgent] = {}
        self.on_event: Optional[Callable[[UserId, str, str], None]] = None
        self._suffix_source = suffix_source or self._counter_suffix().__next__

    @staticmethod
    def _counter_suffix():
        n = 0
        while True:
            n = (n + 1) % 0x10000
            yield n

    def _emit(self, owner: UserId, kind: str, subject: str) -> None:
        if self.on_event is not None:
            self.on_event(owner, kind, subject)

    # -- users / contacts ----------------------------------------------------

    def create_user(self, user_id: UserId, resource_roots: Iterable[str]) -> User:
        if not user_id:
            raise UnknownUser("empty user id")
        if user_id in self.users:
            raise ValueError(f"user exists: {user_id}")
        roots = frozenset(paths.normalize(r) for r in resource_roots)
        user = User(id=user_id, resource_roots=roots)
        self.users[user_id] = user
        self.managers[user_id] = ManagerAgent(owner=user_id)
        return user

    def user(self, user_id: UserId) -> User:
        try:
            return self.users[user_id]
        except KeyError:
            raise UnknownUser(user_id) from None

    def request_contact(self, requester: UserId, peer: UserId) -> None:
        u, v = self.user(requester), self.user(peer)
        u.contacts[peer] = ContactRelationship(peer=peer, state=ContactState.PENDING_OUT)
        v.contacts[requester] = ContactRelationship(peer=requester, state=ContactState.PENDING_IN)
        self._emit(requester, "contact.request", peer)

    def confirm_contact(self, confirmer: UserId, peer: UserId) -> None:
        """Flip both records to confirmed atomically (single-threaded store)."""
        u, v = self.user(confirmer), self.user(peer)
        rel = u.contacts.get(peer)
        if rel is None or rel.state is not ContactState.PENDING_IN:
            raise NoConfirmedContact(f"no pending request from {peer}")
        u.contacts[peer] = replace(rel, state=ContactState.CONFIRMED)
        v.contacts[confirmer] = replace(v.contacts[confirmer], state=ContactState.CONFIRMED)
        self._emit(confirmer, "contact.confirm", peer)

    def contacts_confirmed(self, a: UserId, b: UserId) -> bool:
        ra = self.users.get(a) and self.users[a].contacts.get(b)
        rb = self.users.get(b) and self.users[b].contacts.get(a)
        return bool(
            ra and rb
            and ra.state is ContactState.CONFIRMED
            and rb.state is ContactState.CONFIRMED
        )

    def remove_contact(self, remover: UserId, peer: UserId) -> None:
        self.user(remover).contacts.pop(peer, None)
        self.user(peer).contacts.pop(remover, None)
        self._emit(remover, "contact.remove", peer)

    # -- identities ------------------------------------------------------------

    def create_identity(
        self,
        owner: UserId,
        context_tag: str,
        scope: AuthorizationScope,
        permitted_peers: Iterable[UserId],
    ) -> IdentityAgent:
        if owner not in self.users:
            raise UnknownOwner(owner)
        peers = frozenset(permitted_peers)
        if owner in peers:
            raise SelfInPeers(owner)
        roots = self.users[owner].resource_roots
        for grant in scope.grants:
            if not any(paths.is_within(grant.path_prefix, root) for root in roots):
                raise ScopeExceedsResources(grant.path_prefix)
        ident_id = self._fresh_id(owner, context_tag)
        agent = IdentityAgent(
            id=ident_id,
            owner=owner,
            context_tag=context_tag,
            scope=scope,
            memory_ns=ident_id,
            permitted_peers=peers,
        )
        self.identities[ident_id] = agent
        self._emit(owner, "identity.create", ident_id)
        return agent

    def _fresh_id(self, owner: UserId, tag: str) -> IdentityId:
        base = f"{owner}/{_slug(tag)}"
        while True:
            candidate = f"{base}-{self._suffix_source() & 0xFFFF:04x}"
            if candidate not in self.identities:
                return candidate

    def identity(self, ident_id: IdentityId) -> IdentityAgent:
        try:
            return self.identities[ident_id]
        except KeyError:
            raise UnknownIdentity(ident_id) from None

    def active_identity(self, ident_id: IdentityId) -> IdentityAgent:
        agent = self.identity(ident_id)
        if not agent.active:
            raise IdentityRetired(ident_id)
        return agent

    def retire_identity(self, owner: UserId, ident_id: IdentityId) -> IdentityAgent:
        agent = self.identity(ident_id)
        if agent.owner != owner:
            raise NotOwner(f"{ident_id} not owned by {owner}")
        if not agent.active:
            raise AlreadyRetired(ident_id)
        retired = replace(agent, status=IdentityStatus.RETIRED)
        self.identities[ident_id] = retired
        self._emit(owner, "identity.retire", ident_id)
        return retired

    def update_identity_peers(
        self, owner: UserId, ident_id: IdentityId, permitted_peers: Iterable[UserId]
    ) -> IdentityAgent:
        """Adjust P_i. Existing contact assignments are left in place; the
        orchestrator re-validates peer membership at collaboration time, so a
        stale assignment fails there rather than silently widening access."""
        agent = self.identity(ident_id)
        if agent.owner != owner:
            raise NotOwner(f"{ident_id} not owned by {owner}")
        if not agent.active:
            raise IdentityRetired(ident_id)
        peers = frozenset(permitted_peers)
        if owner in peers:
            raise SelfInPeers(owner)
        updated = replace(agent, permitted_peers=peers)
        self.identities[ident_id] = updated
        self._emit(owner, "identity.update", ident_id)
        return updated

    def assign_contact_identity(
        self, owner: UserId, peer: UserId, ident_id: IdentityId
    ) -> ContactRelationship:
        user = self.user(owner)
        rel = user.contacts.get(peer)
        if rel is None or rel.state is not ContactState.CONFIRMED:
            raise NoConfirmedContact(f"{owner} and {peer} are not confirmed contacts")
        agent = self.identity(ident_id)
        if agent.owner != owner:
            raise NotOwner(f"{ident_id} not owned by {owner}")
        if not agent.active:
            raise IdentityRetired(ident_id)
        if peer not in agent.permitted_peers:
            raise PeerNotPermitted(f"{peer} not in permitted peers of {ident_id}")
        updated = replace(rel, presented_identity=ident_id)
        user.contacts[peer] = updated
        self._emit(owner, "identity.assign", f"{ident_id}->{peer}")
        return updated

    def presented_identity(self, owner: UserId, toward: UserId) -> Optional[IdentityId]:
        rel = self.user(owner).contacts.get(toward)
        if rel is None or rel.state is not ContactState.CONFIRMED:
            return None
        return rel.presented_identity

    def identities_of(self, owner: UserId) -> list[IdentityAgent]:
        return [a for a in self.identities.values() if a.owner == owner]
