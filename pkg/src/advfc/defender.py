"""Defender (function-calling model): simulated weakness profile and external adapter."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Iterable, Protocol

import numpy as np

from .arbiter import tool_call_message_to_answer
from .callspec import REFUSAL, CanonicalAnswer, CanonicalCall, Calls, Refusal
from .corpus import SeedRecord
from .game import DefenseOutcome
from .operators import OPERATOR_NAMES, PASSTHROUGH
from .remote import Endpoint, chat_completion
from .rewriter import RewrittenQuery

DEFAULT_SYSTEM_PROMPT = (
    "You are a function-calling assistant. Call the appropriate tool with correct arguments, "
    "or answer without a tool call if none of the tools applies."
)


@dataclass(frozen=True)
class WeaknessProfile:
    failure_prob: dict
    base_failure: float = 0.0
    rng_seed: int = 0
    composition: str = "product"  # or "max"

    def __post_init__(self):
        probs = {name: float(self.failure_prob.get(name, 0.0)) for name in OPERATOR_NAMES}
        unknown = set(self.failure_prob) - set(OPERATOR_NAMES)
        if unknown:
            raise ValueError(f"unknown operators in weakness profile: {sorted(unknown)}")
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"failure probability for {name} outside [0, 1]: {p}")
        if not 0.0 <= self.base_failure <= 1.0:
            raise ValueError("base failure outside [0, 1]")
        if self.composition not in ("product", "max"):
            raise ValueError(f"unknown composition {self.composition!r}")
        object.__setattr__(self, "failure_prob", probs)

    def success_probability(self, actions) -> float:
        ops = [a for a in actions if a not in PASSTHROUGH]
        if self.composition == "max":
            worst = max((self.failure_prob[a] for a in ops), default=0.0)
            return (1.0 - worst) * (1.0 - self.base_failure)
        p = 1.0 - self.base_failure
        for a in ops:
            p *= 1.0 - self.failure_prob[a]
        return p

    def to_json(self) -> dict:
        return {
            "failure_prob": dict(self.failure_prob), "base_failure": self.base_failure,
            "rng_seed": self.rng_seed, "composition": self.composition,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WeaknessProfile":
        return cls(dict(obj.get("failure_prob", {})), obj.get("base_failure", 0.0),
                   obj.get("rng_seed", 0), obj.get("composition", "product"))


def _trial_uniform(rng_seed: int, trial: int, rewritten: RewrittenQuery) -> float:
    digest = hashlib.blake2b(
        "\x1f".join([rewritten.seed_id, rewritten.text, *rewritten.actions]).encode("utf-8"),
        digest_size=8,
    ).digest()
    key = int.from_bytes(digest, "little")
    return float(np.random.default_rng([rng_seed, trial, key]).random())


def _perturb(value):
    if isinstance(value, bool):
        return not value
    if isinstance(value, (int, float)):
        return value + 1
    if isinstance(value, str):
        return value + " (approx.)"
    if isinstance(value, list):
        return value[:-1] if value else [None]
    if isinstance(value, dict):
        return {**value, "_unexpected": True}
    return "unexpected"


def corrupt_answer(seed: SeedRecord, actions) -> CanonicalAnswer:
    """Deterministic wrong answer for a failed response."""
    if isinstance(seed.answer, Refusal):
        name = seed.tools[0].name if seed.tools else "unknown_tool"
        return Calls((CanonicalCall(name, {}),))
    calls = list(seed.answer.calls)
    first = calls[0]
    if "InjectDistractor" in actions:
        used = set(seed.answer.tool_names())
        spare = [t.name for t in seed.tools if t.name not in used]
        wrong = spare[0] if spare else first.tool_name + "_v2"
        calls[0] = CanonicalCall(wrong, first.arguments)
    elif first.arguments:
        key = sorted(first.arguments)[0]
        calls[0] = CanonicalCall(first.tool_name, {**first.arguments, key: _perturb(first.arguments[key])})
    else:
        calls[0] = CanonicalCall(first.tool_name, {"_unexpected": True})
    return Calls(tuple(calls))


class Defender(Protocol):
    def respond(self, rewritten: RewrittenQuery, seed: SeedRecord, trial: int = 0) -> CanonicalAnswer: ...


@dataclass
class SimulatedDefender:
    profile: WeaknessProfile

    def succeeds(self, rewritten: RewrittenQuery, trial: int = 0) -> bool:
        u = _trial_uniform(self.profile.rng_seed, trial, rewritten)
        return u < self.profile.success_probability(rewritten.actions)

    def respond(self, rewritten: RewrittenQuery, seed: SeedRecord, trial: int = 0) -> CanonicalAnswer:
        if self.succeeds(rewritten, trial):
            return seed.answer
        return corrupt_answer(seed, rewritten.actions)


@dataclass
class RefusingDefender:
    """Baseline that never calls a tool."""

    def respond(self, rewritten: RewrittenQuery, seed: SeedRecord, trial: int = 0) -> CanonicalAnswer:
        return REFUSAL


@dataclass
class ExternalDefender:
    endpoint: Endpoint
    system_prompt: str = DEFAULT_SYSTEM_PROMPT

    def respond(self, rewritten: RewrittenQuery, seed: SeedRecord, trial: int = 0) -> CanonicalAnswer:
        return external_defender_adapter(self.endpoint, rewritten, seed, self.system_prompt)


def respond(backend: Defender, rewritten: RewrittenQuery, seed: SeedRecord, trial: int = 0) -> CanonicalAnswer:
    return backend.respond(rewritten, seed, trial)


def external_defender_adapter(endpoint: Endpoint, rewritten: RewrittenQuery, seed: SeedRecord,
                              system_prompt: str = DEFAULT_SYSTEM_PROMPT) -> CanonicalAnswer:
    messages = [
        {"role": "system", "content": system_prompt},
        {"role": "user", "content": rewritten.text},
    ]
    message = chat_completion(endpoint, messages, tools=[t.to_openai() for t in seed.tools])
    return tool_call_message_to_answer(message)


def _decay(profile: WeaknessProfile, exposures: Iterable[Iterable[str]], eta: float) -> WeaknessProfile:
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    counts = {name: 0 for name in OPERATOR_NAMES}
    for actions in exposures:
        for a in set(actions):
            if a in counts:
                counts[a] += 1
    probs = {name: p * (1.0 - eta) ** counts[name] for name, p in profile.failure_prob.items()}
    return replace(profile, failure_prob=probs)


def rl_update(profile: WeaknessProfile, outcomes: Iterable[tuple[RewrittenQuery, DefenseOutcome]], eta: float) -> WeaknessProfile:
    """Shrink failure probabilities of operators present in each failed response."""
    return _decay(profile, (rq.actions for rq, out in outcomes if out.r_f == -1), eta)


def sft_update(profile: WeaknessProfile, dataset: Iterable, eta: float) -> WeaknessProfile:
    """Same decay, counting every training record as one failure exposure.

    Records may be ``BadCase`` objects, rewrites, or bad-case JSON dicts.
    """
    def actions_of(rec):
        if isinstance(rec, dict):
            return rec.get("actions", ())
        if hasattr(rec, "rewritten"):
            return rec.rewritten.actions
        return getattr(rec, "actions", ())

    return _decay(profile, (actions_of(r) for r in dataset), eta)


def build_defender(kind: str, profile: WeaknessProfile | None = None, endpoint: Endpoint | None = None) -> Defender:
    if kind == "simulated":
        return SimulatedDefender(profile or WeaknessProfile({}))
    if kind == "refuse":
        return RefusingDefender()
    if kind == "external":
        if endpoint is None:
            raise ValueError("external defender needs an endpoint")
        return ExternalDefender(endpoint)
    raise ValueError(f"unknown defender kind {kind!r}")

