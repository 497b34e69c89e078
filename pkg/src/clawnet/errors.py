"""Exception taxonomy. Every error carries a stable machine-readable code."""

from __future__ import annotations


class ClawNetError(Exception):
    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


# --- identity model ---------------------------------------------------------

class UnknownUser(ClawNetError):
    code = "unknown_user"


class UnknownOwner(UnknownUser):
    code = "unknown_owner"


class UnknownIdentity(ClawNetError):
    code = "unknown_identity"


class ScopeExceedsResources(ClawNetError):
    code = "scope_exceeds_resources"


class SelfInPeers(ClawNetError):
    code = "self_in_peers"


class NotOwner(ClawNetError):
    code = "not_owner"


class AlreadyRetired(ClawNetError):
    code = "already_retired"


class IdentityRetired(ClawNetError):
    code = "identity_retired"


class PeerNotPermitted(ClawNetError):
    code = "peer_not_permitted"


class NoConfirmedContact(ClawNetError):
    code = "no_confirmed_contact"


class NoContact(NoConfirmedContact):
    code = "no_contact"


class NoAssignedIdentity(ClawNetError):
    code = "no_assigned_identity"


# --- sessions / orchestration -----------------------------------------------

class DepthExceeded(ClawNetError):
    code = "depth_exceeded"


class NotApprover(ClawNetError):
    code = "not_approver"


class AlreadyResolved(ClawNetError):
    code = "already_resolved"


class Expired(ClawNetError):
    code = "expired"


class StructurallyUnroutable(ClawNetError):
    code = "structurally_unroutable"


class NotInSession(ClawNetError):
    code = "not_in_session"


class UnknownDestination(ClawNetError):
    code = "unknown_destination"


class UnknownSession(ClawNetError):
    code = "unknown_session"


class SessionNotActive(ClawNetError):
    code = "session_not_active"


class PolicyFailure(ClawNetError):
    code = "policy_failure"


# --- node / directives --------------------------------------------------------

class NodeUnavailable(ClawNetError):
    code = "node_unavailable"


class DirectiveTimeout(ClawNetError):
    code = "directive_timeout"


class OwnerMismatch(ClawNetError):
    code = "owner_mismatch"


class DuplicateNode(ClawNetError):
    code = "duplicate_node"


class ExecNotFound(ClawNetError):
    code = "not_found"


class ExecAlreadyExists(ClawNetError):
    code = "already_exists"


class ExecFailure(ClawNetError):
    code = "exec_failure"


class ChainBroken(ClawNetError):
    code = "chain_broken"


# --- storage / memory ---------------------------------------------------------

class StorageFailure(ClawNetError):
    code = "storage_failure"


class ForeignNamespace(ClawNetError):
    code = "foreign_namespace"


# --- harness -------------------------------------------------------------------

class ScenarioParseError(ClawNetError):
    code = "scenario_parse_error"


class ExpectationFailed(ClawNetError):
    code = "expectation_failed"

    def __init__(self, failures: list[str]):
        self.failures = failures
        super().__init__("; ".join(failures))
