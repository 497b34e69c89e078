"""Slower lane: the same scenario files against the real multi-threaded
server over loopback sockets, plus transport-level behaviors."""

import os
import threading
import time

import pytest

from clawnet.netharness import run_scenario_over_sockets
from clawnet.netnode import NodeClient
from clawnet.node import NodeConfig

SCENARIOS = os.path.join(os.path.dirname(__file__), "..", "scenarios")
ALL = ["procurement", "leak_probe", "manager_probe", "chain_bound"]


@pytest.mark.parametrize("name", ALL)
def test_scenario_passes_over_sockets(name, tmp_path):
    trace, report = run_scenario_over_sockets(
        os.path.join(SCENARIOS, f"{name}.scenario"), str(tmp_path)
    )
    assert report.ok, report.failures


def test_node_retries_with_backoff_and_executes_nothing(tmp_path):
    config = NodeConfig(
        node_id="n1",
        owner="li",
        whitelist=[str(tmp_path / "home")],
        staging_root=str(tmp_path / "safety" / "staging"),
        backup_root=str(tmp_path / "safety" / "backups"),
        server_address="127.0.0.1:1",  # nothing listens here
    )
    client = NodeClient(config, max_attempts=3, base_backoff=0.01)
    started = time.monotonic()
    with pytest.raises(OSError):
        client.connect_and_register()
    elapsed = time.monotonic() - started
    assert elapsed >= 0.03  # two backoff sleeps at least
    assert not client.registered.is_set()
    assert len(client.node.audit) == 0  # no directive executed while unreachable


def test_gateway_receives_push_frames(tmp_path):
    from clawnet.memory import MemoryStore
    from clawnet.model import AuthorizationScope
    from clawnet.netgateway import GatewayClient
    from clawnet.orchestrator import Orchestrator
    from clawnet.runtime import AgentRuntime
    from clawnet.server import WireServer

    orch = Orchestrator()
    orch.create_user("li", [str(tmp_path / "li")])
    orch.create_user("chen", [str(tmp_path / "chen")])
    buyer = orch.create_identity("li", "work", AuthorizationScope(), {"chen"})
    ceo = orch.create_identity("chen", "ceo", AuthorizationScope(), {"li"})
    orch.registry.request_contact("li", "chen")
    orch.registry.confirm_contact("chen", "li")
    orch.assign_contact_identity("li", "chen", buyer.id)
    orch.assign_contact_identity("chen", "li", ceo.id)

    wire = WireServer(orch, port=0)
    wire.start()
    gateway = GatewayClient(
        AgentRuntime("li", orch.registry, MemoryStore()), ("127.0.0.1", wire.port)
    )
    gateway.connect()
    try:
        orch.request_collaboration(buyer.id, "chen", "ping")
        deadline = time.monotonic() + 3
        while time.monotonic() < deadline and not gateway.events:
            time.sleep(0.01)
        kinds = [f["kind"] for f in gateway.events]
        assert "APPROVAL_EVENT" in kinds
    finally:
        gateway.close()
        wire.stop()
