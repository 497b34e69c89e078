"""ClawNet: identity-governed cross-user agent collaboration.

Per-owner agent systems (one isolated manager agent plus context-scoped
identity agents) collaborate through a central orchestrator that enforces
identity binding, dual-layer scoped authorization, bilateral approval,
bounded recursive delegation, and hash-chained action-level accountability.
An edge node endpoint executes reversible, audited file operations.
"""

from .governance import (
    AuditLog,
    AuditRecord,
    AuditResult,
    Decision,
    DenyReason,
    EscalationCenter,
    Operation,
    ViolatedLayer,
    authorize_l1,
    verify_log_file,
)
from .memory import MemoryEntry, MemoryLayer, MemoryStore
from .model import (
    AuthorizationScope,
    ContactRelationship,
    Grant,
    IdentityAgent,
    ManagerAgent,
    OpClass,
    Registry,
    User,
)
from .node import NodeConfig, NodeEndpoint, authorize_l2, tree_hash
from .orchestrator import (
    CollaborationSession,
    Orchestrator,
    SessionState,
    TerminationReason,
)
from .policy import EchoPolicy, LlmAdapterPolicy, LoopPolicy, ScriptedPolicy, TurnMsg
from .runtime import AgentRuntime

__version__ = "0.1.0"

__all__ = [
    "AgentRuntime",
    "AuditLog",
    "AuditRecord",
    "AuditResult",
    "AuthorizationScope",
    "CollaborationSession",
    "ContactRelationship",
    "Decision",
    "DenyReason",
    "EchoPolicy",
    "EscalationCenter",
    "Grant",
    "IdentityAgent",
    "LlmAdapterPolicy",
    "LoopPolicy",
    "ManagerAgent",
    "MemoryEntry",
    "MemoryLayer",
    "MemoryStore",
    "NodeConfig",
    "NodeEndpoint",
    "OpClass",
    "Operation",
    "Orchestrator",
    "Registry",
    "ScriptedPolicy",
    "SessionState",
    "TerminationReason",
    "TurnMsg",
    "User",
    "ViolatedLayer",
    "authorize_l1",
    "authorize_l2",
    "tree_hash",
    "verify_log_file",
]
