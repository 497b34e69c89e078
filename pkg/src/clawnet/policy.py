"""Pluggable reasoning policies.

A policy turns (role prompt, own memory view, transcript) into the next
dialogue turn. Scripted policies make the governance layer fully
deterministic and testable; the LLM adapter is a documented extension point
that never performs network calls unless explicitly configured.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol, Sequence

from .errors import PolicyFailure, StructurallyUnroutable
from .memory import MemoryEntry, MemoryLayer


@dataclass(frozen=True)
class TurnMsg:
    """Structured dialogue message: text plus optional intent fields."""

    text: str
    intent: dict[str, str] = field(default_factory=dict)
    end: bool = False


@dataclass(frozen=True)
class HoldForApproval:
    """Policy wants the owner's sign-off before this turn is emitted."""

    summary: str
    key: str


class PolicyContext(Protocol):
    """Capabilities handed to a policy for one turn. Implemented by the
    runtime; a policy sees only its own identity's memory and session."""

    identity: str
    role_prompt: str
    transcript: Sequence[dict]
    turn_index: int

    def memory(self, layer: Optional[MemoryLayer] = None) -> list[MemoryEntry]: ...
    def remember(self, layer: MemoryLayer, key: str, value: str) -> None: ...
    def consult(self, question: str) -> "AdvisorResponse": ...
    def directive(self, kind: str, targets: Sequence[str], payload: Optional[bytes] = None) -> dict: ...
    def spawn(self, via_identity: str, responder: str, intent: str) -> str: ...
    def probe_manager(self, owner: str) -> None: ...
    def decision_granted(self, key: str) -> bool: ...
    def decision_rejected(self, key: str) -> bool: ...


@dataclass(frozen=True)
class AdvisorQuery:
    identity: str
    context_tag: str
    question: str


@dataclass(frozen=True)
class AdvisorResponse:
    advice: str
    source_namespaces: tuple[str, ...]


class Policy(Protocol):
    name: str

    def next_turn(self, ctx: PolicyContext) -> TurnMsg | HoldForApproval: ...


class EchoPolicy:
    """Returns the counterpart's last content verbatim; ends after n turns."""

    name = "echo"

    def __init__(self, end_after: int = 3):
        self.end_after = end_after
        self._spoken: dict[str, int] = {}

    def next_turn(self, ctx: PolicyContext) -> TurnMsg:
        key = getattr(ctx, "session", "")
        count = self._spoken.get(key, 0) + 1
        self._spoken[key] = count
        last = ""
        for turn in reversed(ctx.transcript):
            if turn["speaker"] != ctx.identity:
                last = turn["text"]
                break
        return TurnMsg(text=last, end=count >= self.end_after)


class LoopPolicy:
    """Never terminates on its own; exercises the system-layer turn bound."""

    name = "loop"

    def next_turn(self, ctx: PolicyContext) -> TurnMsg:
        return TurnMsg(text=f"still negotiating ({ctx.turn_index})")


class LlmAdapterPolicy:
    """Extension point for model-backed reasoning.

    `complete` must map (role_prompt, transcript) to a TurnMsg. The stub is
    deliberately unusable until configured; tests never reach a network.
    """

    name = "llm-adapter"

    def __init__(self, complete: Optional[Callable[[str, Sequence[dict]], TurnMsg]] = None):
        self._complete = complete

    def next_turn(self, ctx: PolicyContext) -> TurnMsg:
        if self._complete is None:
            raise PolicyFailure("llm adapter not configured")
        return self._complete(ctx.role_prompt, ctx.transcript)


class ScriptedPolicy:
    """Deterministic policy driven by an ordered list of step dicts.

    Step fields (all optional unless noted):
      say: str                    turn text
      answer_from_memory: {key, fallback}   text from own namespace, or fallback
      intent: {str: str}          structured intent fields
      end: bool                   end-of-dialogue marker
      remember: [{layer, key, value}]
      consult: str                ask own manager; advice is NOT restated unless
      say_advice: bool            ... say_advice is true
      ops: [{kind, targets, content?}]      file directives via the orchestrator
      spawn: {identity, responder, intent}  chained collaboration request
      probe_manager: str          attempt an external envelope to that owner's manager
      ask_owner: str              hold the turn until the owner approves

    One step is consumed per emitted turn, per session. A policy asked for
    more turns than it has steps fails (PolicyFailure).
    """

    name = "scripted"

    def __init__(self, steps: Sequence[dict]):
        self.steps = list(steps)
        self._cursor: dict[str, int] = {}

    def next_turn(self, ctx: PolicyContext) -> TurnMsg | HoldForApproval:
        session = getattr(ctx, "session", "")
        idx = self._cursor.get(session, 0)
        if idx >= len(self.steps):
            raise PolicyFailure(f"script exhausted at step {idx}")
        step = self.steps[idx]

        if "ask_owner" in step:
            key = f"{session}:{idx}"
            if ctx.decision_rejected(key):
                self._cursor[session] = idx + 1
                return TurnMsg(text="owner declined; closing", end=True)
            if not ctx.decision_granted(key):
                return HoldForApproval(summary=str(step["ask_owner"]), key=key)

        for item in step.get("remember", []):
            ctx.remember(MemoryLayer(item["layer"]), item["key"], item["value"])

        advice_text = None
        if "consult" in step:
            advice_text = ctx.consult(str(step["consult"])).advice

        for op in step.get("ops", []):
            payload = op.get("content")
            ctx.directive(
                op["kind"],
                list(op["targets"]),
                payload.encode("utf-8") if isinstance(payload, str) else payload,
            )

        if "spawn" in step:
            spawns = step["spawn"]
            if isinstance(spawns, dict):
                spawns = [spawns]
            for spawn in spawns:
                ctx.spawn(spawn["identity"], spawn["responder"], spawn.get("intent", ""))

        if "probe_manager" in step:
            try:
                ctx.probe_manager(str(step["probe_manager"]))
            except StructurallyUnroutable:
                pass  # the violation is escalated orchestrator-side; dialogue continues

        text = step.get("say", "")
        if "answer_from_memory" in step:
            spec = step["answer_from_memory"]
            found = [e for e in ctx.memory() if e.key == spec["key"]]
            text = found[0].value if found else spec.get("fallback", "")
        if step.get("say_advice") and advice_text is not None:
            text = (text + " " if text else "") + advice_text

        self._cursor[session] = idx + 1
        return TurnMsg(
            text=text,
            intent={str(k): str(v) for k, v in step.get("intent", {}).items()},
            end=bool(step.get("end", False)),
        )


def build_policy(name: str, config: Optional[dict] = None) -> Any:
    config = config or {}
    if name == "scripted":
        return ScriptedPolicy(config.get("steps", []))
    if name == "echo":
        return EchoPolicy(end_after=int(config.get("end_after", 3)))
    if name == "loop":
        return LoopPolicy()
    if name == "llm-adapter":
        return LlmAdapterPolicy(config.get("complete"))
    raise ValueError(f"unknown policy: {name}")
