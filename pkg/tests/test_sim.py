import os

import pytest

from clawnet.cli import main as cli_main
from clawnet.errors import ScenarioParseError
from clawnet.sim import EventTrace, Scenario, diff_trace, run_scenario

SCENARIOS = os.path.join(os.path.dirname(__file__), "..", "scenarios")
ALL = ["procurement", "leak_probe", "manager_probe", "chain_bound"]


def scenario_path(name):
    return os.path.join(SCENARIOS, f"{name}.scenario")


def golden_path(name):
    return os.path.join(SCENARIOS, f"{name}.golden")


@pytest.mark.parametrize("name", ALL)
def test_scenario_passes_expectations(name, tmp_path):
    trace, report = run_scenario(scenario_path(name), str(tmp_path))
    assert report.ok, report.failures


@pytest.mark.parametrize("name", ALL)
def test_same_seed_byte_identical_trace(name, tmp_path):
    t1, _ = run_scenario(scenario_path(name), str(tmp_path / "a"), seed=7)
    t2, _ = run_scenario(scenario_path(name), str(tmp_path / "b"), seed=7)
    assert t1.serialize() == t2.serialize()


@pytest.mark.parametrize("name", ALL)
def test_matches_committed_golden(name, tmp_path):
    trace, report = run_scenario(scenario_path(name), str(tmp_path))
    assert report.ok
    with open(golden_path(name), encoding="utf-8") as fh:
        golden = EventTrace.parse(fh.read())
    actual = EventTrace.parse(trace.serialize())
    assert diff_trace(actual, golden, permutation_tolerant=True) == []


def test_procurement_escalation_precedes_final_execution(tmp_path):
    trace, report = run_scenario(scenario_path("procurement"), str(tmp_path))
    assert report.ok
    decision_n = next(
        e["n"]
        for e in trace.events
        if e["event"] == "approval" and e.get("role") == "decision" and e.get("state") == "approved"
    )
    write_n = next(
        e["n"] for e in trace.events if e["event"] == "audit" and e.get("kind") == "write"
    )
    assert decision_n < write_n


def test_leak_probe_marker_never_crosses(tmp_path):
    trace, report = run_scenario(scenario_path("leak_probe"), str(tmp_path))
    assert report.ok
    cross = [
        e
        for e in trace.events
        if e["event"] == "turn" and e.get("from_owner") != e.get("to_owner")
    ]
    assert cross, "expected cross-user turns"
    assert all("FLOOR-8800" not in e.get("text", "") for e in cross)


def test_manager_probe_zero_deliveries(tmp_path):
    trace, report = run_scenario(scenario_path("manager_probe"), str(tmp_path))
    assert report.ok
    assert report.stats["manager_deliveries"] == 0
    assert report.stats["escalated_routing"] == 2


# -- diff_trace ------------------------------------------------------------------


def ev(n, event, scope, **fields):
    return {"n": n, "event": event, "scope": scope, **fields}


def test_diff_identical_traces_empty():
    a = [ev(0, "turn", "s1", text="x"), ev(1, "audit", "u1", kind="read")]
    assert diff_trace(a, list(a)) == []
    assert diff_trace(a, list(a), permutation_tolerant=True) == []


def test_diff_reports_single_insertion():
    golden = [ev(0, "turn", "s1", text="x")]
    actual = golden + [ev(1, "escalation", "u1", layer="L1")]
    diffs = diff_trace(actual, golden)
    assert len(diffs) == 1
    assert diffs[0].startswith("+")
    assert "escalation" in diffs[0]


def test_diff_permutation_tolerance_on_independent_scopes():
    a = [ev(0, "turn", "s1", text="x"), ev(1, "turn", "s2", text="y")]
    b = [ev(0, "turn", "s2", text="y"), ev(1, "turn", "s1", text="x")]
    assert diff_trace(a, b) != []  # strict order differs
    assert diff_trace(a, b, permutation_tolerant=True) == []
    # but reordering within one scope is still a difference
    c = [ev(0, "turn", "s1", text="x"), ev(1, "turn", "s1", text="y")]
    d = [ev(0, "turn", "s1", text="y"), ev(1, "turn", "s1", text="x")]
    assert diff_trace(c, d, permutation_tolerant=True) != []


# -- scenario parsing ----------------------------------------------------------------


def test_missing_scenario_raises_parse_error(tmp_path):
    with pytest.raises(ScenarioParseError):
        Scenario.load(str(tmp_path / "missing.scenario"))


def test_invalid_yaml_raises_parse_error(tmp_path):
    bad = tmp_path / "bad.scenario"
    bad.write_text("users: [unclosed")
    with pytest.raises(ScenarioParseError):
        Scenario.load(str(bad))


def test_non_mapping_scenario_rejected(tmp_path):
    bad = tmp_path / "bad.scenario"
    bad.write_text("- just\n- a list\n")
    with pytest.raises(ScenarioParseError):
        Scenario.load(str(bad))


# -- CLI ---------------------------------------------------------------------------------


def test_cli_sim_run_golden_exit_zero(tmp_path, capsys):
    code = cli_main(
        [
            "sim",
            "run",
            scenario_path("leak_probe"),
            "--golden",
            golden_path("leak_probe"),
            "--run-root",
            str(tmp_path),
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "[PASS] golden trace match" in out


def test_cli_sim_missing_scenario_exit_two(tmp_path):
    assert cli_main(["sim", "run", str(tmp_path / "nope.scenario")]) == 2


def test_cli_sim_sockets_transport(tmp_path, capsys):
    code = cli_main(
        [
            "sim",
            "run",
            scenario_path("leak_probe"),
            "--transport",
            "sockets",
            "--run-root",
            str(tmp_path),
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "[PASS]" in out


def test_cli_audit_verify_exit_codes(tmp_path, capsys):
    from clawnet.governance import AuditLog, AuditResult, Operation

    path = str(tmp_path / "log")
    log = AuditLog(path=path)
    for i in range(4):
        log.record(
            Operation.file_op("read", (f"/f{i}",), issuer="u/x-0001"),
            "u",
            "u/x-0001",
            AuditResult.ALLOWED_EXECUTED,
            i,
        )
    log.close()
    assert cli_main(["audit", "verify", path]) == 0

    data = bytearray(open(path, "rb").read())
    data[data.find(b"/f2")] ^= 0x02
    open(path, "wb").write(bytes(data))
    code = cli_main(["audit", "verify", path])
    out = capsys.readouterr().out
    assert code == 1
    assert "broken_at(2)" in out


def test_cli_audit_show(tmp_path, capsys):
    from clawnet.governance import AuditLog, AuditResult, Operation

    path = str(tmp_path / "log")
    log = AuditLog(path=path)
    for i in range(5):
        log.record(
            Operation.file_op("read", (f"/f{i}",), issuer="u/x-0001"),
            "u",
            "u/x-0001",
            AuditResult.ALLOWED_EXECUTED,
            i,
        )
    log.close()
    assert cli_main(["audit", "show", path, "--since", "3"]) == 0
    out = capsys.readouterr().out
    assert "/f3" in out and "/f4" in out and "/f2" not in out


def test_cli_node_undo_roundtrip(tmp_path, capsys):
    work = tmp_path / "home" / "li" / "work"
    work.mkdir(parents=True)
    cfg = tmp_path / "node.ini"
    cfg.write_text(
        "[node]\n"
        "node_id = n1\n"
        "owner = li\n"
        f"staging_root = {tmp_path}/safety/staging\n"
        f"backup_root = {tmp_path}/safety/backups\n"
        f"whitelist =\n    {tmp_path}/home/li\n"
    )
    from clawnet.node import NodeEndpoint, load_node_config

    node = NodeEndpoint(load_node_config(str(cfg)))
    target = str(work / "f.txt")
    open(target, "w").write("original")
    from clawnet.governance import Operation

    node.execute(Operation.file_op("write", (target,), issuer="li/w-0001"), b"changed", "m1")
    node.audit.close()
    assert cli_main(["node", "undo", "1", "--config", str(cfg)]) == 0
    assert open(target).read() == "original"
