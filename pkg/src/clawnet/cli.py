"""Command-line surface.

    clawnet server --config FILE [--fixture demo]
    clawnet node --config FILE
    clawnet node undo N --config FILE
    clawnet node rollback SEQ --config FILE
    clawnet sim run SCENARIO [--golden FILE] [--seed N] [--record FILE]
                             [--transport memory|sockets] [--trace-out FILE]
    clawnet audit verify LOG
    clawnet audit show LOG [--since SEQ] [--limit N]

Exit codes: 0 success, 1 verification/expectation failure, 2 usage or parse
error.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile

from .errors import ScenarioParseError
from .governance import read_log_file, verify_log_file
from .sim import EventTrace, diff_trace, run_scenario


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="clawnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_server = sub.add_parser("server", help="run the orchestrator server")
    p_server.add_argument("--config", required=True)
    p_server.add_argument("--fixture", choices=["demo"], help="preload demo fixture data")

    p_node = sub.add_parser("node", help="run the node endpoint, or undo/rollback")
    p_node.add_argument("action", nargs="?", choices=["undo", "rollback"])
    p_node.add_argument("arg", nargs="?", type=int)
    p_node.add_argument("--config", required=True)

    p_sim = sub.add_parser("sim", help="deterministic scenario simulator")
    sim_sub = p_sim.add_subparsers(dest="sim_command", required=True)
    p_run = sim_sub.add_parser("run", help="execute a scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--golden", help="diff the trace against this golden file")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--record", help="write the serialized trace to this file")
    p_run.add_argument("--trace-out", help="also dump the trace here")
    p_run.add_argument("--transport", choices=["memory", "sockets"], default="memory")
    p_run.add_argument("--run-root", help="fixture root (default: fresh temp dir)")
    p_run.add_argument(
        "--strict-order",
        action="store_true",
        help="golden diff without permutation tolerance",
    )

    p_audit = sub.add_parser("audit", help="inspect and verify audit logs")
    audit_sub = p_audit.add_subparsers(dest="audit_command", required=True)
    p_verify = audit_sub.add_parser("verify")
    p_verify.add_argument("log")
    p_show = audit_sub.add_parser("show")
    p_show.add_argument("log")
    p_show.add_argument("--since", type=int, default=0)
    p_show.add_argument("--limit", type=int, default=50)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    if args.command == "audit":
        return _cmd_audit(args)
    if args.command == "sim":
        return _cmd_sim(args)
    if args.command == "node":
        return _cmd_node(args)
    if args.command == "server":
        return _cmd_server(args)
    return 2


def _cmd_audit(args) -> int:
    if args.audit_command == "verify":
        try:
            verdict = verify_log_file(args.log)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(str(verdict))
        return 0 if verdict.ok else 1
    # show
    try:
        records = read_log_file(args.log)
    except Exception as exc:
        print(f"error: cannot read log: {exc}", file=sys.stderr)
        return 2
    shown = 0
    for rec in records:
        if rec.seq < args.since:
            continue
        if shown >= args.limit:
            break
        targets = " ".join(rec.op.targets)
        print(
            f"{rec.seq:6d} t={rec.timestamp_ms} {rec.result.value:<18} "
            f"{rec.op.kind:<18} {rec.identity:<28} {targets}"
        )
        shown += 1
    return 0


def _cmd_sim(args) -> int:
    run_root = args.run_root or tempfile.mkdtemp(prefix="clawnet-sim-")
    try:
        if args.transport == "sockets":
            from .netharness import run_scenario_over_sockets

            trace, report = run_scenario_over_sockets(args.scenario, run_root)
        else:
            trace, report = run_scenario(args.scenario, run_root, seed=args.seed)
    except ScenarioParseError as exc:
        print(f"scenario parse error: {exc}", file=sys.stderr)
        return 2
    serialized = trace.serialize()
    if args.record:
        with open(args.record, "w", encoding="utf-8") as fh:
            fh.write(serialized)
        print(f"recorded golden trace: {args.record}")
    if args.trace_out:
        with open(args.trace_out, "w", encoding="utf-8") as fh:
            fh.write(serialized)
    print(report.summary())
    for key, value in sorted(report.stats.items()):
        print(f"  {key}: {value}")
    ok = report.ok
    if args.golden:
        with open(args.golden, "r", encoding="utf-8") as fh:
            golden = EventTrace.parse(fh.read())
        diffs = diff_trace(
            EventTrace.parse(serialized), golden, permutation_tolerant=not args.strict_order
        )
        if diffs:
            ok = False
            print(f"[FAIL] golden diff: {len(diffs)} difference(s)")
            for line in diffs[:40]:
                print(f"  {line}")
        else:
            print("[PASS] golden trace match")
    return 0 if ok else 1


def _cmd_node(args) -> int:
    from .node import NodeEndpoint, load_node_config

    try:
        config = load_node_config(args.config)
    except Exception as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.action in ("undo", "rollback"):
        if args.arg is None:
            print(f"node {args.action} requires an integer argument", file=sys.stderr)
            return 2
        node = NodeEndpoint(config)
        report = node.undo(args.arg) if args.action == "undo" else node.rollback(args.arg)
        print(json.dumps(report, indent=2, sort_keys=True))
        return 0 if not report["skipped"] else 1
    from .netnode import NodeClient

    client = NodeClient(config)
    try:
        client.run_forever()
    except KeyboardInterrupt:
        pass
    return 0


def _cmd_server(args) -> int:
    from .server import ServerApp, load_server_config

    try:
        config = load_server_config(args.config)
    except Exception as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    app = ServerApp(config, fixture=args.fixture)
    try:
        app.serve_forever()
    except KeyboardInterrupt:
        app.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
