import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from dataclasses import dataclass, field

import pytest

from clawnet.memory import MemoryStore
from clawnet.model import AuthorizationScope
from clawnet.node import InMemoryNodeHandle, NodeConfig, NodeEndpoint
from clawnet.orchestrator import Orchestrator
from clawnet.runtime import AgentRuntime


class TickClock:
    """Integer virtual clock; tests advance it explicitly."""

    def __init__(self, start: int = 0):
        self.t = start

    def now_ms(self) -> int:
        return self.t

    def advance(self, n: int = 1) -> int:
        self.t += n
        return self.t


@dataclass
class World:
    orch: Orchestrator
    clock: TickClock
    root: str
    runtimes: dict = field(default_factory=dict)
    nodes: dict = field(default_factory=dict)
    node_handles: dict = field(default_factory=dict)
    identities: dict = field(default_factory=dict)

    def home(self, user: str) -> str:
        return f"{self.root}/home/{user}"


def build_world(tmp_path, users=("li", "chen"), approval_deadline_ms=1000) -> World:
    clock = TickClock()
    orch = Orchestrator(clock=clock, approval_deadline_ms=approval_deadline_ms)
    world = World(orch=orch, clock=clock, root=str(tmp_path))
    for user in users:
        home = world.home(user)
        os.makedirs(home + "/work", exist_ok=True)
        orch.create_user(user, [home])
        store = MemoryStore(f"{world.root}/mem/{user}", clock_ms=clock.now_ms)
        runtime = AgentRuntime(user, orch.registry, store, clock_ms=clock.now_ms)
        orch.attach_runtime(runtime)
        world.runtimes[user] = runtime
    return world


def add_identity(world: World, owner: str, tag: str, peers, scope=None):
    scope = scope or AuthorizationScope.of((world.home(owner) + "/work", "mutative"))
    agent = world.orch.create_identity(owner, tag, scope, set(peers))
    world.identities[f"{owner}.{tag}"] = agent
    return agent


def connect(world: World, a: str, b: str, present_a=None, present_b=None):
    world.orch.registry.request_contact(a, b)
    world.orch.registry.confirm_contact(b, a)
    if present_a is not None:
        world.orch.assign_contact_identity(a, b, present_a.id)
    if present_b is not None:
        world.orch.assign_contact_identity(b, a, present_b.id)


def add_node(world: World, owner: str):
    config = NodeConfig(
        node_id=f"node-{owner}",
        owner=owner,
        whitelist=[world.home(owner)],
        staging_root=f"{world.root}/safety/{owner}/staging",
        backup_root=f"{world.root}/safety/{owner}/backups",
    )
    node = NodeEndpoint(config, clock_ms=world.clock.now_ms)
    handle = InMemoryNodeHandle(node, trace=world.orch.trace)
    world.orch.register_node(config.node_id, owner, list("rwx"), handle)
    world.nodes[owner] = node
    world.node_handles[owner] = handle
    return node, handle


@pytest.fixture
def free_port():
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def procurement_pair(tmp_path):
    """li (buyer) and chen (supplier CEO), contacts with mutual assignments."""
    world = build_world(tmp_path)
    buyer = add_identity(world, "li", "procurement", {"chen"})
    ceo = add_identity(world, "chen", "ceo", {"li"})
    connect(world, "li", "chen", present_a=buyer, present_b=ceo)
    return world, buyer, ceo
