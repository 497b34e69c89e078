import itertools

import pytest
from hypothesis import given, settings, strategies as st

from clawnet.errors import ForeignNamespace, IdentityRetired, PolicyFailure, StructurallyUnroutable
from clawnet.memory import MemoryLayer, MemoryStore
from clawnet.model import AuthorizationScope, Registry
from clawnet.policy import AdvisorQuery, ScriptedPolicy, EchoPolicy, LlmAdapterPolicy, TurnMsg
from clawnet.runtime import AgentRuntime, context_filter

from oracles import oracle_context_filter


@pytest.fixture
def world(tmp_path):
    reg = Registry()
    reg.create_user("li", ["/home/li"])
    reg.create_user("chen", ["/home/chen"])
    work = reg.create_identity("li", "work", AuthorizationScope.of(("/home/li/work", "mutative")), {"chen"})
    academic = reg.create_identity("li", "academic", AuthorizationScope(), {"chen"})
    foreign = reg.create_identity("chen", "ceo", AuthorizationScope(), {"li"})
    store = MemoryStore(str(tmp_path / "mem"), clock_ms=itertools.count().__next__)
    rt = AgentRuntime("li", reg, store)
    return reg, store, rt, work, academic, foreign


def test_remember_and_restart_recall(world, tmp_path):
    reg, store, rt, work, academic, _ = world
    rt.remember(work.id, MemoryLayer.FACTUAL, "req_doc", "/home/li/work/requirements.md")
    fresh_store = MemoryStore(str(tmp_path / "mem"))
    fresh_rt = AgentRuntime("li", reg, fresh_store)
    entries = fresh_rt.recall(work.id)
    assert [(e.key, e.value) for e in entries] == [("req_doc", "/home/li/work/requirements.md")]


def test_remember_foreign_namespace_rejected(world):
    _, _, rt, work, academic, _ = world
    with pytest.raises(ForeignNamespace):
        rt.remember(work.id, MemoryLayer.FACTUAL, "k", "v", namespace=academic.memory_ns)


def test_remember_retired_rejected(world):
    reg, _, rt, work, _, _ = world
    reg.retire_identity("li", work.id)
    with pytest.raises(IdentityRetired):
        rt.remember(work.id, MemoryLayer.FACTUAL, "k", "v")


def test_recall_isolation_between_identities(world):
    _, _, rt, work, academic, _ = world
    rt.remember(academic.id, MemoryLayer.FACTUAL, "paper", "draft.tex")
    assert rt.recall(work.id) == []


def test_recall_layer_filter(world):
    _, _, rt, work, _, _ = world
    for layer in MemoryLayer:
        for k in ("a", "b"):
            rt.remember(work.id, layer, f"{layer.value}-{k}", "x")
    got = rt.recall(work.id, layer=MemoryLayer.VALUE)
    assert [e.key for e in got] == ["value-a", "value-b"]


def test_retired_identity_cannot_recall_but_owner_can(world):
    reg, store, rt, work, _, _ = world
    rt.remember(work.id, MemoryLayer.FACTUAL, "k", "v")
    reg.retire_identity("li", work.id)
    store.archive(work.memory_ns)
    with pytest.raises(IdentityRetired):
        rt.recall(work.id)
    assert [e.value for e in rt.owner_recall(work.memory_ns)] == ["v"]


def test_consult_manager_aggregates_across_namespaces(world):
    _, _, rt, work, academic, _ = world
    rt.remember(academic.id, MemoryLayer.FACTUAL, "conference deadline", "March 3")
    query = AdvisorQuery(identity=work.id, context_tag="work", question="when is the conference deadline?")
    response = rt.consult_manager(query)
    assert "March 3" in response.advice
    assert response.source_namespaces == (academic.memory_ns,)


def test_consult_manager_cross_owner_unroutable(world):
    _, _, rt, _, _, foreign = world
    with pytest.raises(StructurallyUnroutable):
        rt.consult_manager(AdvisorQuery(identity=foreign.id, context_tag="ceo", question="hi"))


def test_consult_context_filter_excludes_unrelated(world):
    _, _, rt, work, academic, _ = world
    rt.remember(academic.id, MemoryLayer.FACTUAL, "grant budget", "100k")
    rt.remember(academic.id, MemoryLayer.FACTUAL, "vacation plans", "alps")
    response = rt.consult_manager(
        AdvisorQuery(identity=work.id, context_tag="work", question="what is the grant budget")
    )
    assert "100k" in response.advice
    assert "alps" not in response.advice


@settings(max_examples=80, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.sampled_from(["floor_price", "grant budget", "req doc", "alps trip", "x"]),
            st.sampled_from(["factual", "pattern", "value"]),
        ),
        max_size=6,
    ),
    st.sampled_from(["what is the floor price", "budget?", "tell me about req", "hello"]),
    st.sampled_from(["work", "finance", "travel"]),
)
def test_context_filter_matches_rule_oracle(entries_spec, question, tag):
    store = MemoryStore()
    for i, (key, layer) in enumerate(entries_spec):
        store.put("ns", MemoryLayer(layer), key, f"v{i}")
    entries = store.get("ns")
    impl = context_filter(entries, question, tag)
    oracle = oracle_context_filter(entries, question, tag)
    assert [(e.layer, e.key) for e in impl] == [(e.layer, e.key) for e in oracle]


# -- policies ---------------------------------------------------------------


class StubCtx:
    def __init__(self, identity="li/work-0001", transcript=(), session="s0001", turn_index=0):
        self.identity = identity
        self.role_prompt = "prompt"
        self.transcript = list(transcript)
        self.session = session
        self.turn_index = turn_index
        self.remembered = []
        self.directives = []

    def memory(self, layer=None):
        return []

    def remember(self, layer, key, value):
        self.remembered.append((layer, key, value))

    def consult(self, question):
        from clawnet.policy import AdvisorResponse

        return AdvisorResponse(advice="ADVICE", source_namespaces=())

    def directive(self, kind, targets, payload=None):
        self.directives.append((kind, tuple(targets)))
        return {"status": "allowed_executed"}

    def spawn(self, via_identity, responder, intent):
        return "s-child"

    def probe_manager(self, owner):
        raise StructurallyUnroutable(owner)

    def decision_granted(self, key):
        return False

    def decision_rejected(self, key):
        return False


def test_scripted_buyer_first_turn_issues_read_then_request():
    policy = ScriptedPolicy(
        [
            {
                "say": "requesting a quote for 500 units",
                "intent": {"kind": "procurement_request"},
                "ops": [{"kind": "read", "targets": ["/home/li/work/requirements.md"]}],
            }
        ]
    )
    ctx = StubCtx()
    turn = policy.next_turn(ctx)
    assert isinstance(turn, TurnMsg)
    assert ctx.directives == [("read", ("/home/li/work/requirements.md",))]
    assert turn.intent["kind"] == "procurement_request"
    assert not turn.end


def test_echo_policy_repeats_counterpart_and_ends():
    policy = EchoPolicy(end_after=2)
    transcript = [{"speaker": "other", "text": "marco", "intent": {}, "end": False}]
    first = policy.next_turn(StubCtx(transcript=transcript))
    assert first.text == "marco" and not first.end
    second = policy.next_turn(StubCtx(transcript=transcript))
    assert second.end


def test_script_exhausted_raises_policy_failure():
    policy = ScriptedPolicy([{"say": "a"}, {"say": "b"}])
    ctx = StubCtx()
    policy.next_turn(ctx)
    policy.next_turn(ctx)
    with pytest.raises(PolicyFailure):
        policy.next_turn(ctx)


def test_llm_adapter_stub_errors_unless_configured():
    with pytest.raises(PolicyFailure):
        LlmAdapterPolicy().next_turn(StubCtx())
    configured = LlmAdapterPolicy(complete=lambda prompt, transcript: TurnMsg(text="hi"))
    assert configured.next_turn(StubCtx()).text == "hi"


def test_value_layer_constraints_surface_in_prompt(world):
    _, _, rt, work, _, _ = world
    rt.remember(work.id, MemoryLayer.VALUE, "never_share", "floor price")
    composed = rt.compose_prompt(work.id, "base")
    assert composed.startswith("base")
    assert "never_share: floor price" in composed


# -- randomized isolation interleavings ---------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["wa", "wb", "ra", "rb"]), max_size=20))
def test_memory_isolation_under_interleavings(ops):
    reg = Registry()
    reg.create_user("li", ["/home/li"])
    a = reg.create_identity("li", "aa", AuthorizationScope(), {"x"})
    b = reg.create_identity("li", "bb", AuthorizationScope(), {"x"})
    reg.create_user("x", ["/home/x"])
    rt = AgentRuntime("li", reg, MemoryStore())
    wrote_a, wrote_b = set(), set()
    for i, op in enumerate(ops):
        if op == "wa":
            rt.remember(a.id, MemoryLayer.FACTUAL, f"k{i}", "A")
            wrote_a.add(f"k{i}")
        elif op == "wb":
            rt.remember(b.id, MemoryLayer.FACTUAL, f"k{i}", "B")
            wrote_b.add(f"k{i}")
        elif op == "ra":
            assert {e.key for e in rt.recall(a.id)} == wrote_a
        else:
            assert {e.key for e in rt.recall(b.id)} == wrote_b
