"""Edge node endpoint: the terminal execution environment for directives.

Enforces the second, independent authorization layer (owner whitelist with
symlink resolution), executes the eight file primitives plus stat with
pre-execution backup and trash-staged deletion, keeps a hash-chained local
audit log plus a backup index, and supports single-step undo and batch
rollback. The node never trusts the server's L1 verdict.
"""

from __future__ import annotations

import base64
import hashlib
import os
import shutil
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import paths
from .errors import (
    ChainBroken,
    ExecAlreadyExists,
    ExecFailure,
    ExecNotFound,
)
from .governance import (
    AuditLog,
    AuditResult,
    Decision,
    DenyReason,
    Operation,
    _decode_fields,
    _encode_fields,
)

CAPABILITIES = ["read", "list", "stat", "write", "move", "rename", "copy", "mkdir", "delete"]

CREATED_FRESH = "created-fresh"


class SimulatedCrash(Exception):
    """Raised by the test fault hook to model a crash at a fault point."""


@dataclass
class NodeConfig:
    node_id: str
    owner: str
    whitelist: list[str]
    staging_root: str
    backup_root: str
    server_address: str = ""
    durable: bool = False
    # Misconfigured whitelists (safety roots inside an entry) can be modeled
    # by disabling validation; authorize_l2 still hard-denies the safety roots.
    validate_safety: bool = True

    def __post_init__(self):
        self.whitelist = [paths.normalize(p) for p in self.whitelist]
        self.staging_root = paths.normalize(self.staging_root)
        self.backup_root = paths.normalize(self.backup_root)
        if not self.validate_safety:
            return
        for safety in (self.staging_root, self.backup_root):
            for entry in self.whitelist:
                if paths.is_within(safety, entry):
                    raise ValueError(
                        f"safety root {safety} must lie outside whitelist entry {entry}"
                    )


@dataclass(frozen=True)
class BackupRecord:
    backup_id: str
    seq: int
    msg_id: str
    op_kind: str
    original_path: str
    dest_path: str  # second target for move/copy, else ""
    backup_path: str  # "-" when nothing pre-existing was touched
    pre_hash: str  # "-" when created fresh
    post_hash: str  # expected post-mutation state, for conflict detection
    timestamp_ms: int

    def encode(self) -> bytes:
        return _encode_fields(
            [
                self.backup_id,
                str(self.seq),
                self.msg_id,
                self.op_kind,
                self.original_path,
                self.dest_path,
                self.backup_path,
                self.pre_hash,
                self.post_hash,
                str(self.timestamp_ms),
            ]
        )

    @classmethod
    def decode(cls, blob: bytes) -> "BackupRecord":
        f = _decode_fields(blob)
        return cls(f[0], int(f[1]), f[2], f[3], f[4], f[5], f[6], f[7], f[8], int(f[9]))


def file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_hash(root: str) -> str:
    """Deterministic recursive hash of a directory tree (paths + bytes)."""
    h = hashlib.sha256()
    root = os.path.abspath(root)
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        rel = os.path.relpath(dirpath, root)
        h.update(f"d:{rel}\n".encode())
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            rel_file = os.path.relpath(full, root)
            if os.path.islink(full):
                h.update(f"l:{rel_file}:{os.readlink(full)}\n".encode())
            else:
                h.update(f"f:{rel_file}:{file_hash(full)}\n".encode())
    return h.hexdigest()


def path_state_hash(path: str) -> str:
    """State marker for conflict detection: file hash, tree hash, or absent."""
    if not os.path.lexists(path):
        return "absent"
    if os.path.isdir(path) and not os.path.islink(path):
        return "tree:" + tree_hash(path)
    return file_hash(path)


def resolve_physical(path: str) -> str:
    """Resolve symlinks in every existing ancestor, lexically append the rest.

    The deepest existing prefix is realpath'd; non-existing tail segments
    cannot hide links, so lexical handling of the tail is sound.
    """
    norm = paths.normalize(path)
    probe = norm
    tail: list[str] = []
    while probe != "/" and not os.path.exists(probe):
        probe, base = os.path.split(probe)
        tail.append(base)
    resolved = os.path.realpath(probe)
    for seg in reversed(tail):
        resolved = os.path.join(resolved, seg)
    return resolved


def authorize_l2(op: Operation, config: NodeConfig) -> Decision:
    """Client-side whitelist check, independent of L1 and fail-closed.

    Targets must resolve (symlinks included) under a whitelist entry, and may
    never touch the staging or backup roots, whatever the whitelist says.
    """
    try:
        if not op.is_file_op:
            return Decision.deny(DenyReason.MALFORMED)
        real_whitelist = [os.path.realpath(w) for w in config.whitelist]
        protected = [os.path.realpath(config.staging_root), os.path.realpath(config.backup_root)]
        for target in op.targets:
            try:
                lexical = paths.normalize(target)
            except paths.MalformedPath:
                return Decision.deny(DenyReason.MALFORMED)
            resolved = resolve_physical(lexical)
            if any(paths.is_within(resolved, p) for p in protected):
                return Decision.deny(DenyReason.OUTSIDE_WHITELIST)
            if not any(paths.is_within(resolved, w) for w in real_whitelist):
                lexically_inside = any(paths.is_within(lexical, w) for w in config.whitelist)
                if lexically_inside:
                    return Decision.deny(DenyReason.SYMLINK_ESCAPE)
                return Decision.deny(DenyReason.OUTSIDE_WHITELIST)
        return Decision.allow()
    except Exception:
        return Decision.deny(DenyReason.INTERNAL_ERROR)


class NodeEndpoint:
    """Serialized executor for one owner's device.

    Every mutative directive runs backup-then-mutate, in that order, with the
    backup durable before the mutation begins. Every directive appends one
    local audit record before its result is returned.
    """

    def __init__(
        self,
        config: NodeConfig,
        clock_ms: Callable[[], int] = None,
        fault_hook: Optional[Callable[[str, Operation], None]] = None,
    ):
        self.config = config
        self.clock_ms = clock_ms or (lambda: 0)
        self.fault_hook = fault_hook
        os.makedirs(config.staging_root, exist_ok=True)
        os.makedirs(config.backup_root, exist_ok=True)
        self.audit = AuditLog(
            path=os.path.join(config.backup_root, "node-audit.log"), durable=config.durable
        )
        self._index_path = os.path.join(config.backup_root, "backups.idx")
        self._index: dict[int, BackupRecord] = {}
        self._load_index()

    # -- backup index -----------------------------------------------------------

    def _load_index(self) -> None:
        if not os.path.exists(self._index_path):
            return
        with open(self._index_path, "rb") as fh:
            for line in fh:
                line = line.rstrip(b"\n")
                if line:
                    rec = BackupRecord.decode(line)
                    self._index[rec.seq] = rec

    def _append_index(self, rec: BackupRecord) -> None:
        with open(self._index_path, "ab") as fh:
            fh.write(rec.encode() + b"\n")
            fh.flush()
        self._index[rec.seq] = rec

    def backup_records(self) -> list[BackupRecord]:
        return [self._index[k] for k in sorted(self._index)]

    # -- directive entry point -----------------------------------------------------

    def handle_directive(self, frame: dict) -> dict:
        op_spec = frame["op"]
        kind = op_spec["kind"]
        issuer = frame.get("issuer", "")
        if kind == "node.undo":
            report = self.undo(int(op_spec["targets"][0]))
            return {"status": "allowed_executed", "report": report, "msg_id": frame.get("msg_id", "")}
        if kind == "node.rollback":
            report = self.rollback(int(op_spec["targets"][0]))
            return {"status": "allowed_executed", "report": report, "msg_id": frame.get("msg_id", "")}
        op = Operation.file_op(
            kind,
            tuple(op_spec["targets"]),
            issuer=issuer,
            session=frame.get("session") or None,
            payload_digest=op_spec.get("payload_digest") or None,
        )
        payload = None
        if "payload_b64" in frame:
            payload = base64.b64decode(frame["payload_b64"])
        decision = authorize_l2(op, self.config)
        if not decision.allowed:
            self._record(op, issuer, AuditResult.DENIED_L2)
            return {
                "status": "denied_l2",
                "reason": decision.reason.value if decision.reason else "",
                "msg_id": frame.get("msg_id", ""),
            }
        return self.execute(op, payload, frame.get("msg_id", ""))

    def _record(self, op: Operation, issuer: str, result: AuditResult, backup_ref: str = "") -> int:
        rec = self.audit.record(
            op, self.config.owner, issuer or "unknown", result, self.clock_ms(), backup_ref
        )
        return rec.seq

    # -- execution --------------------------------------------------------------------

    def execute(self, op: Operation, payload: Optional[bytes], msg_id: str = "") -> dict:
        """Run one L2-approved directive. Mutatives: backup, mutate, audit."""
        try:
            if op.kind == "read":
                data = self._read(op.targets[0])
                self._record(op, op.issuer, AuditResult.ALLOWED_EXECUTED)
                return {
                    "status": "allowed_executed",
                    "content_b64": base64.b64encode(data).decode("ascii"),
                    "digest": hashlib.sha256(data).hexdigest(),
                    "msg_id": msg_id,
                }
            if op.kind == "list":
                entries = self._list(op.targets[0])
                self._record(op, op.issuer, AuditResult.ALLOWED_EXECUTED)
                return {"status": "allowed_executed", "entries": entries, "msg_id": msg_id}
            if op.kind == "stat":
                st = self._stat(op.targets[0])
                self._record(op, op.issuer, AuditResult.ALLOWED_EXECUTED)
                return {"status": "allowed_executed", "stat": st, "msg_id": msg_id}
            return self._execute_mutative(op, payload, msg_id)
        except (ExecNotFound, ExecAlreadyExists, ExecFailure) as exc:
            self._record(op, op.issuer, AuditResult.FAILED_EXEC)
            return {"status": "failed_exec", "reason": exc.code, "detail": str(exc), "msg_id": msg_id}

    def _read(self, path: str) -> bytes:
        if not os.path.isfile(path):
            raise ExecNotFound(path)
        with open(path, "rb") as fh:
            return fh.read()

    def _list(self, path: str) -> list[dict]:
        if not os.path.isdir(path):
            raise ExecNotFound(path)
        out = []
        for name in sorted(os.listdir(path)):
            full = os.path.join(path, name)
            out.append({"name": name, "kind": "dir" if os.path.isdir(full) else "file"})
        return out

    def _stat(self, path: str) -> dict:
        if not os.path.lexists(path):
            raise ExecNotFound(path)
        st = os.stat(path)
        kind = "dir" if os.path.isdir(path) else "file"
        return {"size": st.st_size, "kind": kind, "modified_ms": int(st.st_mtime * 1000)}

    def _durable_copy(self, src: str, dst: str) -> None:
        os.makedirs(os.path.dirname(dst), exist_ok=True)
        if os.path.isdir(src) and not os.path.islink(src):
            shutil.copytree(src, dst, symlinks=True)
            return
        with open(src, "rb") as rfh, open(dst, "wb") as wfh:
            shutil.copyfileobj(rfh, wfh)
            wfh.flush()
            os.fsync(wfh.fileno())

    def _next_backup_paths(self, original: str) -> tuple[str, str]:
        seq = len(self.audit)
        backup_id = f"b{seq:06d}"
        from datetime import datetime, timezone

        day = datetime.fromtimestamp(self.clock_ms() / 1000, tz=timezone.utc).strftime("%Y-%m-%d")
        backup_path = os.path.join(
            self.config.backup_root, day, f"{seq:06d}-{os.path.basename(original)}"
        )
        return backup_id, backup_path

    def _staging_path(self, origin: str) -> str:
        bucket = f"{self.clock_ms():013d}-{len(self.audit):06d}"
        rel = paths.normalize(origin).lstrip("/")
        return os.path.join(self.config.staging_root, bucket, rel)

    def _fault(self, point: str, op: Operation) -> None:
        if self.fault_hook is not None:
            self.fault_hook(point, op)

    def _execute_mutative(self, op: Operation, payload: Optional[bytes], msg_id: str) -> dict:
        kind = op.kind
        src = op.targets[0]
        dst = op.targets[1] if len(op.targets) > 1 else ""
        backup_id, backup_path, pre_hash = "", "-", "-"
        staged = ""

        # Phase 1: validate and back up whatever pre-existing state is touched.
        if kind == "write":
            if payload is None:
                raise ExecFailure("write without payload")
            if os.path.isdir(src):
                raise ExecFailure(f"target is a directory: {src}")
            parent = os.path.dirname(src)
            if not os.path.isdir(parent):
                raise ExecNotFound(f"parent missing: {parent}")
            if os.path.lexists(src):
                pre_hash = path_state_hash(src)
                backup_id, backup_path = self._next_backup_paths(src)
                self._durable_copy(src, backup_path)
        elif kind in ("move", "rename"):
            if not os.path.lexists(src):
                raise ExecNotFound(src)
            if os.path.lexists(dst):
                raise ExecAlreadyExists(dst)
            if not os.path.isdir(os.path.dirname(dst)):
                raise ExecNotFound(f"parent missing: {os.path.dirname(dst)}")
            pre_hash = path_state_hash(src)
            backup_id, backup_path = self._next_backup_paths(src)
            self._durable_copy(src, backup_path)
        elif kind == "copy":
            if not os.path.lexists(src):
                raise ExecNotFound(src)
            if os.path.lexists(dst):
                raise ExecAlreadyExists(dst)
            if not os.path.isdir(os.path.dirname(dst)):
                raise ExecNotFound(f"parent missing: {os.path.dirname(dst)}")
        elif kind == "mkdir":
            if os.path.lexists(src):
                raise ExecAlreadyExists(src)
            if not os.path.isdir(os.path.dirname(src)):
                raise ExecNotFound(f"parent missing: {os.path.dirname(src)}")
        elif kind == "delete":
            if not os.path.lexists(src):
                raise ExecNotFound(src)
            pre_hash = path_state_hash(src)
            staged = self._staging_path(src)
            backup_id, backup_path = f"b{len(self.audit):06d}", staged
        else:
            raise ExecFailure(f"unsupported kind {kind}")

        self._fault("between_backup_and_mutate", op)

        # Phase 2: mutate; on failure restore from the fresh backup.
        try:
            if kind == "write":
                with open(src, "wb") as fh:
                    fh.write(payload)
                    fh.flush()
                post_hash = path_state_hash(src)
            elif kind in ("move", "rename"):
                shutil.move(src, dst)
                post_hash = path_state_hash(dst)
            elif kind == "copy":
                if os.path.isdir(src) and not os.path.islink(src):
                    shutil.copytree(src, dst, symlinks=True)
                else:
                    shutil.copy2(src, dst)
                post_hash = path_state_hash(dst)
            elif kind == "mkdir":
                os.mkdir(src)
                post_hash = "dir"
            else:  # delete
                os.makedirs(os.path.dirname(staged), exist_ok=True)
                shutil.move(src, staged)
                post_hash = "absent"
        except OSError as exc:
            self._restore_partial(kind, src, dst, backup_path)
            raise ExecFailure(f"{kind} failed: {exc}") from exc

        seq = len(self.audit)
        index_rec = BackupRecord(
            backup_id=backup_id or CREATED_FRESH,
            seq=seq,
            msg_id=msg_id,
            op_kind=kind,
            original_path=src,
            dest_path=dst,
            backup_path=backup_path,
            pre_hash=pre_hash,
            post_hash=post_hash,
            timestamp_ms=self.clock_ms(),
        )
        self._append_index(index_rec)
        self._record(op, op.issuer, AuditResult.ALLOWED_EXECUTED, backup_ref=backup_id or CREATED_FRESH)
        return {
            "status": "allowed_executed",
            "backup_ref": backup_id or CREATED_FRESH,
            "node_seq": seq,
            "msg_id": msg_id,
        }

    def _restore_partial(self, kind: str, src: str, dst: str, backup_path: str) -> None:
        """Best-effort restoration of the pre-state after a failed mutation."""
        try:
            if kind == "write" and backup_path != "-" and os.path.exists(backup_path):
                shutil.copyfile(backup_path, src)
            elif kind in ("move", "rename"):
                if not os.path.lexists(src) and os.path.lexists(dst):
                    shutil.move(dst, src)
            elif kind == "copy" and os.path.lexists(dst):
                if os.path.isdir(dst) and not os.path.islink(dst):
                    shutil.rmtree(dst)
                else:
                    os.unlink(dst)
        except OSError:
            pass

    # -- undo / rollback -----------------------------------------------------------------

    def _reversed_seqs(self) -> set[int]:
        out = set()
        for rec in self.audit.records:
            if rec.backup_ref.startswith("undo-of:"):
                out.add(int(rec.backup_ref.split(":", 1)[1]))
        return out

    def _undo_candidates(self) -> list:
        done = self._reversed_seqs()
        return [
            rec
            for rec in self.audit.records
            if rec.result is AuditResult.ALLOWED_EXECUTED
            and rec.op.mutative
            and rec.seq not in done
        ]

    def undo(self, last_n: int) -> dict:
        candidates = self._undo_candidates()
        return self._reverse([r.seq for r in candidates[-last_n:]] if last_n > 0 else [])

    def rollback(self, to_seq: int) -> dict:
        """Reverse every un-reversed mutation with seq > to_seq (newest first)."""
        candidates = [r.seq for r in self._undo_candidates() if r.seq > to_seq]
        return self._reverse(candidates)

    def _reverse(self, seqs: list[int]) -> dict:
        verdict = self.audit.verify()
        if not verdict.ok:
            raise ChainBroken(f"local audit chain broken at {verdict.broken_at}")
        report = {"reversals": [], "skipped": []}
        for seq in sorted(seqs, reverse=True):
            rec = next(r for r in self.audit.records if r.seq == seq)
            entry = self._index.get(seq)
            if entry is None:
                report["skipped"].append({"seq": seq, "reason": "no_backup_index_entry"})
                continue
            status, detail = self._reverse_one(entry)
            line = {"seq": seq, "kind": entry.op_kind, "status": status, "detail": detail}
            if status == "reversed":
                undo_op = Operation.admin(
                    f"undo.{entry.op_kind}",
                    issuer=f"owner:{self.config.owner}",
                    targets=tuple(t for t in (entry.original_path, entry.dest_path) if t),
                )
                self._record(
                    undo_op,
                    f"owner:{self.config.owner}",
                    AuditResult.ALLOWED_EXECUTED,
                    backup_ref=f"undo-of:{seq}",
                )
                report["reversals"].append(line)
            else:
                report["skipped"].append(line)
        return report

    def _reverse_one(self, entry: BackupRecord) -> tuple[str, str]:
        kind = entry.op_kind
        src, dst = entry.original_path, entry.dest_path
        try:
            if kind == "write":
                if path_state_hash(src) != entry.post_hash:
                    return "skipped", "conflicting_later_edit"
                if entry.backup_path == "-":
                    os.unlink(src)  # undo a fresh creation
                    return "reversed", "removed created file"
                shutil.copyfile(entry.backup_path, src)
                return "reversed", "restored from backup"
            if kind in ("move", "rename"):
                if path_state_hash(dst) != entry.post_hash or os.path.lexists(src):
                    return "skipped", "conflicting_later_edit"
                shutil.move(dst, src)
                return "reversed", "moved back"
            if kind == "copy":
                if path_state_hash(dst) != entry.post_hash:
                    return "skipped", "conflicting_later_edit"
                if os.path.isdir(dst) and not os.path.islink(dst):
                    shutil.rmtree(dst)
                else:
                    os.unlink(dst)
                return "reversed", "removed copy"
            if kind == "mkdir":
                if not os.path.isdir(src):
                    return "skipped", "conflicting_later_edit"
                if os.listdir(src):
                    return "skipped", "directory_not_empty"
                os.rmdir(src)
                return "reversed", "removed directory"
            if kind == "delete":
                if not os.path.lexists(entry.backup_path):
                    return "skipped", "staged_copy_missing"
                if os.path.lexists(src):
                    return "skipped", "conflicting_later_edit"
                os.makedirs(os.path.dirname(src), exist_ok=True)
                shutil.move(entry.backup_path, src)
                return "reversed", "restored from staging"
            return "skipped", f"unknown kind {kind}"
        except OSError as exc:
            return "skipped", f"io_error: {exc}"


class InMemoryNodeHandle:
    """Orchestrator-side handle over an in-process node; counts frames so
    tests can prove L1 denials never reach the node channel."""

    def __init__(self, node: NodeEndpoint, trace=None):
        self.node = node
        self.trace = trace
        self.frames_in = 0
        self.dropped = False

    def execute_directive(self, frame: dict) -> dict:
        if self.dropped:
            raise ConnectionError("channel dropped")
        self.frames_in += 1
        if self.trace is not None:
            self.trace.emit(
                "frame.directive",
                scope=self.node.config.owner,
                msg_id=frame.get("msg_id", ""),
                kind=frame["op"]["kind"],
                targets=list(frame["op"]["targets"]),
            )
        result = self.node.handle_directive(frame)
        if self.trace is not None:
            self.trace.emit(
                "frame.directive_result",
                scope=self.node.config.owner,
                msg_id=frame.get("msg_id", ""),
                status=result.get("status", ""),
            )
        return result


def load_node_config(path: str, overrides: Optional[dict] = None) -> NodeConfig:
    """Read the INI-style node config (see docs/node-config.md)."""
    import configparser

    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read or "node" not in parser:
        raise ValueError(f"invalid node config: {path}")
    section = parser["node"]
    overrides = overrides or {}
    whitelist = [
        line.strip()
        for line in (overrides.get("whitelist") or section.get("whitelist", "")).splitlines()
        if line.strip()
    ]
    return NodeConfig(
        node_id=overrides.get("node_id") or section.get("node_id", ""),
        owner=overrides.get("owner") or section.get("owner", ""),
        whitelist=whitelist,
        staging_root=overrides.get("staging_root") or section.get("staging_root", ""),
        backup_root=overrides.get("backup_root") or section.get("backup_root", ""),
        server_address=overrides.get("server_address") or section.get("server_address", ""),
        durable=section.getboolean("durable", fallback=False),
    )
