"""Governance primitives: scope evaluation (L1), accountability log, escalation.

The audit log is an append-only hash chain. Each record is serialized
canonically (UTF-8, fields in declared order, newline-free, length-prefixed)
and hashed with SHA-256 over that serialization including the previous
record's hash; see docs/audit-log-format.md for the bit-exact grammar.
"""

from __future__ import annotations

import hashlib
import io
import os
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Union

from . import paths
from .errors import StorageFailure
from .model import IdentityAgent, IdentityId, UserId

GENESIS_HASH = b"\x00" * 32

FILE_KINDS = frozenset(
    {"read", "list", "stat", "write", "move", "rename", "copy", "mkdir", "delete"}
)
READ_ONLY_KINDS = frozenset({"read", "list", "stat"})
TWO_TARGET_KINDS = frozenset({"move", "rename", "copy"})


class DenyReason(str, Enum):
    # L1 reasons
    OUT_OF_SCOPE = "out_of_scope"
    CLASS_INSUFFICIENT = "class_insufficient"
    IDENTITY_RETIRED = "identity_retired"
    MALFORMED_PATH = "malformed_path"
    INTERNAL_ERROR = "internal_error"
    # L2 reasons
    OUTSIDE_WHITELIST = "outside_whitelist"
    SYMLINK_ESCAPE = "symlink_escape"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: Optional[DenyReason] = None

    @staticmethod
    def allow() -> "Decision":
        return Decision(True)

    @staticmethod
    def deny(reason: DenyReason) -> "Decision":
        return Decision(False, reason)


@dataclass(frozen=True)
class Operation:
    """A governed action: one of the nine file verbs, or an admin event.

    File kinds carry 1 target (2 for move/rename/copy), absolute paths only.
    Admin kinds are dot-namespaced ("identity.create", "session.turn", ...) so
    lifecycle and routing events land in the same hash-chained log; they never
    collide with file verbs and are excluded from file-op reconciliation.
    """

    kind: str
    targets: tuple[str, ...]
    issuer: IdentityId
    session: Optional[str] = None
    payload_digest: Optional[str] = None

    def __post_init__(self):
        if self.kind in FILE_KINDS:
            want = 2 if self.kind in TWO_TARGET_KINDS else 1
            if len(self.targets) != want:
                raise ValueError(f"{self.kind} takes {want} target(s)")
        for value in (self.kind, self.issuer, self.session, self.payload_digest, *self.targets):
            if value is not None and ("\n" in value or "\r" in value):
                raise ValueError("newline in operation field")

    @property
    def is_file_op(self) -> bool:
        return self.kind in FILE_KINDS

    @property
    def mutative(self) -> bool:
        return self.kind in FILE_KINDS and self.kind not in READ_ONLY_KINDS

    @classmethod
    def file_op(
        cls,
        kind: str,
        targets: tuple[str, ...] | list[str],
        issuer: IdentityId,
        session: Optional[str] = None,
        payload_digest: Optional[str] = None,
    ) -> "Operation":
        if kind not in FILE_KINDS:
            raise ValueError(f"unknown file op kind: {kind}")
        return cls(kind, tuple(targets), issuer, session, payload_digest)

    @classmethod
    def admin(
        cls,
        kind: str,
        issuer: IdentityId,
        targets: tuple[str, ...] = (),
        session: Optional[str] = None,
        payload_digest: Optional[str] = None,
    ) -> "Operation":
        if kind in FILE_KINDS or "." not in kind:
            raise ValueError(f"admin kinds are dot-namespaced, got {kind!r}")
        return cls(kind, tuple(targets), issuer, session, payload_digest)


def authorize_l1(op: Operation, identity: IdentityAgent) -> Decision:
    """Server-side scope check: every target must sit under a covering grant.

    Pure and total: any internal failure collapses to Deny(internal_error),
    never an exception and never an Allow.
    """
    try:
        if not identity.active:
            return Decision.deny(DenyReason.IDENTITY_RETIRED)
        if op.issuer != identity.id:
            return Decision.deny(DenyReason.INTERNAL_ERROR)
        if not op.is_file_op:
            return Decision.deny(DenyReason.INTERNAL_ERROR)
        mutative = op.mutative
        for target in op.targets:
            try:
                norm = paths.normalize(target)
            except paths.MalformedPath:
                return Decision.deny(DenyReason.MALFORMED_PATH)
            in_prefix = False
            covered = False
            for grant in identity.scope.grants:
                if paths.is_within(norm, grant.path_prefix):
                    in_prefix = True
                    if grant.covers(norm, mutative):
                        covered = True
                        break
            if not covered:
                if in_prefix and mutative:
                    return Decision.deny(DenyReason.CLASS_INSUFFICIENT)
                return Decision.deny(DenyReason.OUT_OF_SCOPE)
        return Decision.allow()
    except Exception:
        return Decision.deny(DenyReason.INTERNAL_ERROR)


class AuditResult(str, Enum):
    ALLOWED_EXECUTED = "allowed_executed"
    DENIED_L1 = "denied_l1"
    DENIED_L2 = "denied_l2"
    FAILED_EXEC = "failed_exec"
    ESCALATED = "escalated"


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    op: Operation
    owner: UserId
    identity: IdentityId
    result: AuditResult
    timestamp_ms: int
    prev_hash: bytes
    record_hash: bytes
    backup_ref: str = ""  # node logs: backup id, "created-fresh", or ""


def _encode_fields(fields: list[str]) -> bytes:
    out = bytearray()
    for f in fields:
        raw = f.encode("utf-8")
        out += str(len(raw)).encode("ascii") + b":" + raw
    return bytes(out)


def _decode_fields(blob: bytes) -> list[str]:
    fields = []
    i = 0
    while i < len(blob):
        j = blob.index(b":", i)
        n = int(blob[i:j])
        start = j + 1
        if start + n > len(blob):
            raise ValueError("truncated field")
        fields.append(blob[start : start + n].decode("utf-8"))
        i = start + n
    return fields


def canonical_fields(rec: AuditRecord) -> list[str]:
    op = rec.op
    return [
        str(rec.seq),
        op.kind,
        str(len(op.targets)),
        *op.targets,
        op.issuer,
        op.session or "",
        op.payload_digest or "",
        rec.owner,
        rec.identity,
        rec.result.value,
        rec.backup_ref,
        str(rec.timestamp_ms),
        rec.prev_hash.hex(),
    ]


def canonical_bytes(rec: AuditRecord) -> bytes:
    return _encode_fields(canonical_fields(rec))


def record_from_fields(fields: list[str], record_hash: bytes) -> AuditRecord:
    seq = int(fields[0])
    kind = fields[1]
    n_targets = int(fields[2])
    targets = tuple(fields[3 : 3 + n_targets])
    rest = fields[3 + n_targets :]
    issuer, session, digest, owner, identity, result, backup_ref, ts, prev_hex = rest
    op = Operation(
        kind=kind,
        targets=targets,
        issuer=issuer,
        session=session or None,
        payload_digest=digest or None,
    )
    return AuditRecord(
        seq=seq,
        op=op,
        owner=owner,
        identity=identity,
        result=AuditResult(result),
        timestamp_ms=int(ts),
        prev_hash=bytes.fromhex(prev_hex),
        record_hash=record_hash,
        backup_ref=backup_ref,
    )


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    broken_at: Optional[int] = None

    def __str__(self) -> str:
        return "ok" if self.ok else f"broken_at({self.broken_at})"


class AuditLog:
    """One owner's append-only hash-chained log, optionally file-backed.

    Appends are serialized by an internal lock; append returns only after the
    line has been flushed to the OS (fsync when durable=True). A failed append
    raises StorageFailure and the guarded operation must be treated as failed.
    """

    def __init__(self, path: Optional[str] = None, durable: bool = False):
        self._lock = threading.Lock()
        self._records: list[AuditRecord] = []
        self._path = path
        self._durable = durable
        self._fh: Optional[io.BufferedWriter] = None
        if path and os.path.exists(path):
            self._load(path)
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            self._fh = open(path, "ab")

    def _load(self, path: str) -> None:
        with open(path, "rb") as fh:
            for line in fh:
                line = line.rstrip(b"\n")
                if not line:
                    continue
                body, _, hash_hex = line.rpartition(b" ")
                rec = record_from_fields(_decode_fields(body), bytes.fromhex(hash_hex.decode()))
                self._records.append(rec)

    @property
    def records(self) -> list[AuditRecord]:
        return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def head_hash(self) -> bytes:
        return self._records[-1].record_hash if self._records else GENESIS_HASH

    def record(
        self,
        op: Operation,
        owner: UserId,
        identity: IdentityId,
        result: AuditResult,
        timestamp_ms: int,
        backup_ref: str = "",
    ) -> AuditRecord:
        with self._lock:
            prev = self.head_hash()
            rec = AuditRecord(
                seq=len(self._records),
                op=op,
                owner=owner,
                identity=identity,
                result=result,
                timestamp_ms=timestamp_ms,
                prev_hash=prev,
                record_hash=b"",
                backup_ref=backup_ref,
            )
            digest = hashlib.sha256(canonical_bytes(rec)).digest()
            rec = replace(rec, record_hash=digest)
            if self._fh is not None:
                try:
                    self._fh.write(canonical_bytes(rec) + b" " + digest.hex().encode() + b"\n")
                    self._fh.flush()
                    if self._durable:
                        os.fsync(self._fh.fileno())
                except (OSError, ValueError) as exc:
                    raise StorageFailure(str(exc)) from exc
            self._records.append(rec)
            return rec

    def verify(self) -> VerifyResult:
        return verify_records(self._records)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def verify_records(records: list[AuditRecord]) -> VerifyResult:
    prev = GENESIS_HASH
    for i, rec in enumerate(records):
        if rec.seq != i or rec.prev_hash != prev:
            return VerifyResult(False, i)
        if hashlib.sha256(canonical_bytes(rec)).digest() != rec.record_hash:
            return VerifyResult(False, i)
        prev = rec.record_hash
    return VerifyResult(True)


def verify_log_file(path: str) -> VerifyResult:
    """Recompute every hash in a persisted log; report the first mismatch.

    Strict: each line must be the byte-exact canonical re-encoding of its
    parsed record, so corrupted length prefixes or hex-case flips cannot
    survive a decode/re-encode round trip.
    """
    records: list[AuditRecord] = []
    with open(path, "rb") as fh:
        for i, line in enumerate(fh):
            line = line.rstrip(b"\n")
            if not line:
                continue
            try:
                body, sep, hash_hex = line.rpartition(b" ")
                if not sep:
                    return VerifyResult(False, i)
                rec = record_from_fields(_decode_fields(body), bytes.fromhex(hash_hex.decode()))
                reencoded = canonical_bytes(rec) + b" " + rec.record_hash.hex().encode("ascii")
                if reencoded != line:
                    return VerifyResult(False, i)
            except Exception:
                return VerifyResult(False, i)
            records.append(rec)
    return verify_records(records)


def read_log_file(path: str) -> list[AuditRecord]:
    log = AuditLog()
    log._load(path)
    return log.records


class ViolatedLayer(str, Enum):
    L1 = "L1"
    L2 = "L2"
    ROUTING = "routing"
    SESSION = "session"


@dataclass
class EscalationEvent:
    event_id: str
    owner: UserId
    identity: IdentityId
    attempted_op: Operation
    violated_layer: ViolatedLayer
    timestamp_ms: int
    acknowledged: bool = False


class EscalationCenter:
    """Per-owner security event feed. Events are acknowledged, never deleted."""

    def __init__(self, owner: UserId):
        self.owner = owner
        self._events: dict[str, EscalationEvent] = {}
        self._order: list[str] = []
        self.on_event: Optional[Callable[[EscalationEvent], None]] = None

    def raise_event(
        self,
        event_id: str,
        identity: IdentityId,
        op: Operation,
        layer: ViolatedLayer,
        timestamp_ms: int,
    ) -> EscalationEvent:
        event = EscalationEvent(
            event_id=event_id,
            owner=self.owner,
            identity=identity,
            attempted_op=op,
            violated_layer=layer,
            timestamp_ms=timestamp_ms,
        )
        self._events[event_id] = event
        self._order.append(event_id)
        if self.on_event is not None:
            self.on_event(event)
        return event

    def acknowledge(self, event_id: str) -> EscalationEvent:
        event = self._events[event_id]
        event.acknowledged = True  # idempotent
        return event

    def events(self, include_acknowledged: bool = True) -> list[EscalationEvent]:
        evs = [self._events[i] for i in self._order]
        if not include_acknowledged:
            evs = [e for e in evs if not e.acknowledged]
        return evs

    def count(self, layer: Optional[ViolatedLayer] = None) -> int:
        return sum(
            1 for e in self._events.values() if layer is None or e.violated_layer == layer
        )
