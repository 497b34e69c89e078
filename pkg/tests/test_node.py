import os
import random

import pytest
from hypothesis import given, settings, strategies as st

from clawnet.errors import ChainBroken
from clawnet.governance import AuditResult, DenyReason, Operation
from clawnet.node import (
    CREATED_FRESH,
    NodeConfig,
    NodeEndpoint,
    SimulatedCrash,
    authorize_l2,
    load_node_config,
    tree_hash,
)

from oracles import snapshot_tree


def make_node(tmp_path, whitelist=None, fault_hook=None):
    work = tmp_path / "home" / "li" / "work"
    work.mkdir(parents=True, exist_ok=True)
    config = NodeConfig(
        node_id="n1",
        owner="li",
        whitelist=[str(p) for p in (whitelist or [tmp_path / "home" / "li"])],
        staging_root=str(tmp_path / "safety" / "staging"),
        backup_root=str(tmp_path / "safety" / "backups"),
    )
    ticks = iter(range(1, 10_000_000))
    return NodeEndpoint(config, clock_ms=lambda: next(ticks), fault_hook=fault_hook), str(work)


def fop(kind, *targets, digest=None):
    return Operation.file_op(kind, targets, issuer="li/work-0001", payload_digest=digest)


def run(node, kind, *targets, payload=None):
    frame = {
        "kind": "DIRECTIVE",
        "msg_id": "m1",
        "issuer": "li/work-0001",
        "op": {"kind": kind, "targets": list(targets), "payload_digest": ""},
    }
    if payload is not None:
        import base64

        frame["payload_b64"] = base64.b64encode(payload).decode()
    return node.handle_directive(frame)


# -- L2 authorization ----------------------------------------------------------


def test_l2_allows_whitelisted_write(tmp_path):
    node, work = make_node(tmp_path)
    decision = authorize_l2(fop("write", work + "/a.txt"), node.config)
    assert decision.allowed


def test_l2_denies_outside_whitelist(tmp_path):
    node, _ = make_node(tmp_path)
    decision = authorize_l2(fop("write", "/etc/passwd"), node.config)
    assert not decision.allowed
    assert decision.reason is DenyReason.OUTSIDE_WHITELIST
    result = run(node, "write", "/etc/passwd", payload=b"x")
    assert result["status"] == "denied_l2"
    assert node.audit.records[-1].result is AuditResult.DENIED_L2


def test_l2_denies_symlink_escape(tmp_path):
    node, work = make_node(tmp_path)
    private = tmp_path / "home" / "li-private"
    private.mkdir(parents=True)
    os.symlink(str(private), work + "/link")
    decision = authorize_l2(fop("write", work + "/link/x"), node.config)
    assert not decision.allowed
    assert decision.reason is DenyReason.SYMLINK_ESCAPE
    # oracle: canonical path containment, segment-aware
    resolved = os.path.realpath(work + "/link/x")
    root = os.path.realpath(str(tmp_path / "home" / "li"))
    assert os.path.commonpath([os.path.dirname(resolved), root]) != root


def test_l2_denies_safety_roots_even_if_whitelisted(tmp_path):
    work = tmp_path / "home" / "li" / "work"
    work.mkdir(parents=True)
    config = NodeConfig(
        node_id="n1",
        owner="li",
        whitelist=["/"],  # owner misconfiguration: everything whitelisted
        staging_root=str(tmp_path / "safety" / "staging"),
        backup_root=str(tmp_path / "safety" / "backups"),
        validate_safety=False,
    )
    node = NodeEndpoint(config)
    staged = os.path.join(config.staging_root, "x")
    backed = os.path.join(config.backup_root, "y")
    assert not authorize_l2(fop("write", staged), config).allowed
    assert not authorize_l2(fop("delete", backed), config).allowed
    assert authorize_l2(fop("write", str(work / "ok.txt")), config).allowed


def test_l2_fail_closed_on_malformed(tmp_path):
    node, _ = make_node(tmp_path)
    for bad in ["", "relative", "/a/../../b"]:
        op = Operation("write", (bad,), issuer="i")
        decision = authorize_l2(op, node.config)
        assert not decision.allowed


def test_safety_roots_may_not_sit_inside_whitelist(tmp_path):
    with pytest.raises(ValueError):
        NodeConfig(
            node_id="n1",
            owner="li",
            whitelist=[str(tmp_path)],
            staging_root=str(tmp_path / "staging"),
            backup_root=str(tmp_path / "backups"),
        )


# -- execution -----------------------------------------------------------------


def test_overwrite_preserves_original(tmp_path):
    node, work = make_node(tmp_path)
    target = work + "/f.txt"
    with open(target, "w") as fh:
        fh.write("v1")
    result = run(node, "write", target, payload=b"v2")
    assert result["status"] == "allowed_executed"
    assert open(target).read() == "v2"
    backup_ref = result["backup_ref"]
    assert backup_ref != CREATED_FRESH
    entry = node.backup_records()[-1]
    assert entry.backup_id == backup_ref
    assert open(entry.backup_path).read() == "v1"
    assert node.audit.records[-1].backup_ref == backup_ref


def test_fresh_write_marks_created_fresh(tmp_path):
    node, work = make_node(tmp_path)
    result = run(node, "write", work + "/new.txt", payload=b"hello")
    assert result["backup_ref"] == CREATED_FRESH
    assert node.audit.records[-1].backup_ref == CREATED_FRESH


def test_delete_relocates_to_staging(tmp_path):
    node, work = make_node(tmp_path)
    target = work + "/a.txt"
    with open(target, "w") as fh:
        fh.write("keep me")
    result = run(node, "delete", target)
    assert result["status"] == "allowed_executed"
    assert not os.path.exists(target)
    staged = node.backup_records()[-1].backup_path
    assert staged.startswith(node.config.staging_root)
    # staging layout mirrors the origin path
    assert staged.endswith(os.path.join(*target.lstrip("/").split("/")))
    assert open(staged).read() == "keep me"


def test_copy_missing_source_fails_without_backup(tmp_path):
    node, work = make_node(tmp_path)
    before = len(node.backup_records())
    result = run(node, "copy", work + "/missing.txt", work + "/dst.txt")
    assert result["status"] == "failed_exec"
    assert result["reason"] == "not_found"
    assert len(node.backup_records()) == before
    assert node.audit.records[-1].result is AuditResult.FAILED_EXEC


def test_read_list_stat(tmp_path):
    node, work = make_node(tmp_path)
    with open(work + "/f.txt", "w") as fh:
        fh.write("hello")
    os.mkdir(work + "/sub")
    read = run(node, "read", work + "/f.txt")
    import base64

    assert base64.b64decode(read["content_b64"]) == b"hello"
    listing = run(node, "list", work)
    assert [(e["name"], e["kind"]) for e in listing["entries"]] == [
        ("f.txt", "file"),
        ("sub", "dir"),
    ]
    stat = run(node, "stat", work + "/f.txt")
    assert stat["stat"]["size"] == 5
    assert stat["stat"]["kind"] == "file"
    assert set(stat["stat"].keys()) == {"size", "kind", "modified_ms"}


def test_mkdir_and_already_exists(tmp_path):
    node, work = make_node(tmp_path)
    assert run(node, "mkdir", work + "/d")["status"] == "allowed_executed"
    second = run(node, "mkdir", work + "/d")
    assert second["status"] == "failed_exec"
    assert second["reason"] == "already_exists"


def test_move_and_rename(tmp_path):
    node, work = make_node(tmp_path)
    with open(work + "/a", "w") as fh:
        fh.write("data")
    assert run(node, "move", work + "/a", work + "/b")["status"] == "allowed_executed"
    assert open(work + "/b").read() == "data"
    assert not os.path.exists(work + "/a")


# -- undo / rollback -----------------------------------------------------------


def seed_tree(work):
    os.makedirs(work + "/docs", exist_ok=True)
    with open(work + "/a.txt", "w") as fh:
        fh.write("alpha")
    with open(work + "/docs/b.txt", "w") as fh:
        fh.write("bravo")


def test_rollback_restores_byte_identical_tree(tmp_path):
    node, work = make_node(tmp_path)
    seed_tree(work)
    before_snapshot = snapshot_tree(work)
    before_hash = tree_hash(work)

    run(node, "write", work + "/a.txt", payload=b"ALPHA2")
    run(node, "move", work + "/docs/b.txt", work + "/docs/c.txt")
    run(node, "delete", work + "/a.txt")
    assert tree_hash(work) != before_hash

    report = node.rollback(-1)
    assert report["skipped"] == []
    assert len(report["reversals"]) == 3
    assert snapshot_tree(work) == before_snapshot
    assert tree_hash(work) == before_hash
    assert node.audit.verify().ok


def test_undo_single_step(tmp_path):
    node, work = make_node(tmp_path)
    with open(work + "/f.txt", "w") as fh:
        fh.write("original")
    run(node, "write", work + "/f.txt", payload=b"changed")
    report = node.undo(1)
    assert len(report["reversals"]) == 1
    assert open(work + "/f.txt").read() == "original"


def test_undo_skips_conflicting_later_edit(tmp_path):
    node, work = make_node(tmp_path)
    with open(work + "/f.txt", "w") as fh:
        fh.write("original")
    run(node, "write", work + "/f.txt", payload=b"by-agent")
    with open(work + "/f.txt", "w") as fh:
        fh.write("by-human")  # external edit outside the log
    report = node.undo(1)
    assert report["reversals"] == []
    assert report["skipped"][0]["detail"] == "conflicting_later_edit"
    assert open(work + "/f.txt").read() == "by-human"  # never clobbered


def test_undo_refuses_tampered_chain(tmp_path):
    node, work = make_node(tmp_path)
    run(node, "write", work + "/f.txt", payload=b"x")
    node.audit._records[0] = node.audit._records[0].__class__(
        **{**node.audit._records[0].__dict__, "timestamp_ms": 999999}
    )
    with pytest.raises(ChainBroken):
        node.undo(1)


def test_undo_twice_walks_backwards(tmp_path):
    node, work = make_node(tmp_path)
    with open(work + "/f.txt", "w") as fh:
        fh.write("v1")
    run(node, "write", work + "/f.txt", payload=b"v2")
    run(node, "write", work + "/f.txt", payload=b"v3")
    node.undo(1)
    assert open(work + "/f.txt").read() == "v2"
    node.undo(1)
    assert open(work + "/f.txt").read() == "v1"


def test_crash_between_backup_and_mutate_preserves_original(tmp_path):
    crashes = []

    def fault(point, op):
        if point == "between_backup_and_mutate" and not crashes:
            crashes.append(op)
            raise SimulatedCrash(point)

    node, work = make_node(tmp_path, fault_hook=fault)
    with open(work + "/f.txt", "w") as fh:
        fh.write("precious")
    with pytest.raises(SimulatedCrash):
        node.execute(fop("write", work + "/f.txt"), b"overwrite", "m9")
    assert open(work + "/f.txt").read() == "precious"
    # the backup of the original was already durable when the crash hit
    day_dirs = [d for d in os.listdir(node.config.backup_root) if not d.endswith((".log", ".idx"))]
    assert day_dirs


def test_exec_failure_rolls_back_partial_state(tmp_path):
    node, work = make_node(tmp_path)
    os.mkdir(work + "/d")
    with open(work + "/d/inner", "w") as fh:
        fh.write("z")
    # write onto a directory target fails cleanly
    result = run(node, "write", work + "/d", payload=b"oops")
    assert result["status"] == "failed_exec"
    assert os.path.isdir(work + "/d")
    assert open(work + "/d/inner").read() == "z"


def test_restart_preserves_chain_and_undo(tmp_path):
    node, work = make_node(tmp_path)
    with open(work + "/f.txt", "w") as fh:
        fh.write("original")
    run(node, "write", work + "/f.txt", payload=b"changed")
    node.audit.close()

    # a fresh endpoint over the same roots picks up the log and backup index
    reopened = NodeEndpoint(node.config, clock_ms=iter(range(10_000, 20_000)).__next__)
    assert reopened.audit.verify().ok
    assert len(reopened.audit) == len(node.audit)
    report = reopened.undo(1)
    assert len(report["reversals"]) == 1
    assert open(work + "/f.txt").read() == "original"


# -- randomized reversibility ---------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_random_mutation_sequences_roll_back(seed):
    import tempfile
    from pathlib import Path

    tmp_path = Path(tempfile.mkdtemp(prefix="rev"))
    node, work = make_node(tmp_path)
    rng = random.Random(seed)
    seed_tree(work)
    baseline = snapshot_tree(work)
    files = [work + "/a.txt", work + "/docs/b.txt"]
    next_id = [0]

    def fresh_name():
        next_id[0] += 1
        return f"{work}/gen{next_id[0]}"

    for _ in range(rng.randrange(1, 24)):
        choice = rng.random()
        existing = [f for f in files if os.path.exists(f)]
        if choice < 0.35 or not existing:
            target = rng.choice(existing) if existing and rng.random() < 0.5 else fresh_name()
            run(node, "write", target, payload=rng.randbytes(rng.randrange(0, 64)))
            if target not in files:
                files.append(target)
        elif choice < 0.55:
            src = rng.choice(existing)
            dst = fresh_name()
            run(node, "move", src, dst)
            files.append(dst)
        elif choice < 0.7:
            src = rng.choice(existing)
            dst = fresh_name()
            run(node, "copy", src, dst)
            files.append(dst)
        elif choice < 0.85:
            run(node, "delete", rng.choice(existing))
        else:
            run(node, "mkdir", fresh_name())

    report = node.rollback(-1)
    assert report["skipped"] == []
    assert snapshot_tree(work) == baseline


# -- config file ------------------------------------------------------------------


def test_load_node_config_with_overrides(tmp_path):
    cfg = tmp_path / "node.ini"
    cfg.write_text(
        "[node]\n"
        "node_id = edge-1\n"
        "owner = li\n"
        "server_address = 127.0.0.1:7420\n"
        f"staging_root = {tmp_path}/safety/staging\n"
        f"backup_root = {tmp_path}/safety/backups\n"
        "whitelist =\n"
        f"    {tmp_path}/home/li/work\n"
        f"    {tmp_path}/home/li/docs\n"
    )
    config = load_node_config(str(cfg))
    assert config.node_id == "edge-1"
    assert len(config.whitelist) == 2
    overridden = load_node_config(str(cfg), overrides={"owner": "someone"})
    assert overridden.owner == "someone"
