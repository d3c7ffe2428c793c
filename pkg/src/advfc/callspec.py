"""Canonical function-call answers and their equality semantics."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Union

NUMERIC_DECIMALS = 9

DEFAULT_REFUSAL_PHRASES = (
    "i cannot help with that",
    "i can't help with that",
    "none of the available tools",
    "no suitable tool",
    "no relevant function",
    "cannot be answered with the provided tools",
)


class AnswerParseError(ValueError):
    """Raised when an answer payload is not well-formed JSON."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class AnswerFormatError(ValueError):
    """Raised when an answer payload parses but has an unknown shape."""


def canonical_value(value: Any) -> Any:
    """Normalize an argument value.

    Numbers are rounded to ``NUMERIC_DECIMALS`` places and integral floats
    collapse to ints, strings are trimmed, lists keep their order and dicts
    are rebuilt with sorted keys.
    """
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise AnswerFormatError(f"non-finite numeric argument {value!r}")
        rounded = round(float(value), NUMERIC_DECIMALS)
        if rounded == int(rounded) and abs(rounded) < 2**53:
            return int(rounded)
        return rounded
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, (list, tuple)):
        return [canonical_value(v) for v in value]
    if isinstance(value, dict):
        return {str(k): canonical_value(value[k]) for k in sorted(value, key=str)}
    raise AnswerFormatError(f"unsupported argument value type {type(value).__name__}")


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class CanonicalCall:
    tool_name: str
    arguments: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.tool_name, str) or not self.tool_name.strip():
            raise AnswerFormatError("call tool name must be a non-empty string")
        object.__setattr__(self, "tool_name", self.tool_name.strip())
        object.__setattr__(self, "arguments", canonical_value(dict(self.arguments)))

    def to_json(self) -> dict:
        return {"name": self.tool_name, "arguments": self.arguments}

    def key(self) -> str:
        return _dumps(self.to_json())

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True, eq=False)
class Calls:
    calls: tuple[CanonicalCall, ...]

    def __post_init__(self):
        object.__setattr__(self, "calls", tuple(self.calls))
        if not self.calls:
            raise AnswerFormatError("a Calls answer needs at least one call")

    def tool_names(self) -> list[str]:
        return [c.tool_name for c in self.calls]

    def to_json(self) -> dict:
        # Sorted so that serializations are equal iff answers are equal.
        return {"calls": [c.to_json() for c in sorted(self.calls, key=CanonicalCall.key)]}

    def __eq__(self, other):
        if not isinstance(other, Calls):
            return NotImplemented
        return serialize_answer(self) == serialize_answer(other)

    def __hash__(self):
        return hash(serialize_answer(self))


@dataclass(frozen=True)
class Refusal:
    def to_json(self) -> dict:
        return {"refusal": True}


CanonicalAnswer = Union[Calls, Refusal]
REFUSAL = Refusal()


def serialize_answer(answer: CanonicalAnswer) -> str:
    return _dumps(answer.to_json())


def answer_from_json(obj: Any) -> CanonicalAnswer:
    """Build a canonical answer from an already-decoded JSON object."""
    if not isinstance(obj, dict):
        raise AnswerFormatError(f"answer must be a JSON object, got {type(obj).__name__}")
    if set(obj) == {"refusal"}:
        if obj["refusal"] is not True:
            raise AnswerFormatError('"refusal" must be true')
        return REFUSAL
    if set(obj) == {"calls"}:
        raw_calls = obj["calls"]
        if not isinstance(raw_calls, list) or not raw_calls:
            raise AnswerFormatError('"calls" must be a non-empty list')
        calls = []
        for i, raw in enumerate(raw_calls):
            if not isinstance(raw, dict) or "name" not in raw:
                raise AnswerFormatError(f"calls[{i}] must be an object with a name")
            extra = set(raw) - {"name", "arguments"}
            if extra:
                raise AnswerFormatError(f"calls[{i}] has unknown keys {sorted(extra)}")
            args = raw.get("arguments", {})
            if isinstance(args, str):
                # OpenAI-style tool calls carry arguments as a JSON string.
                args = _loads(args)
            if not isinstance(args, dict):
                raise AnswerFormatError(f"calls[{i}].arguments must be an object")
            calls.append(CanonicalCall(raw["name"], args))
        return Calls(tuple(calls))
    raise AnswerFormatError(f"unknown answer shape with keys {sorted(obj)}")


def _loads(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        offset = len(raw[: exc.pos].encode("utf-8"))
        raise AnswerParseError(exc.msg, offset) from None


def parse_answer(raw: str, refusal_phrases: Iterable[str] = DEFAULT_REFUSAL_PHRASES) -> CanonicalAnswer:
    """Parse a raw answer string into canonical form.

    Plain-text replies matching one of ``refusal_phrases`` (case-insensitive
    substring) map to a refusal; anything else must be answer JSON.
    """
    text = raw.strip()
    if not text.startswith(("{", "[")):
        lowered = text.lower()
        if any(p.lower() in lowered for p in refusal_phrases):
            return REFUSAL
    return answer_from_json(_loads(raw))


def answers_equal(y: CanonicalAnswer, y_hat: CanonicalAnswer) -> bool:
    if isinstance(y, Refusal) or isinstance(y_hat, Refusal):
        return isinstance(y, Refusal) and isinstance(y_hat, Refusal)
    return Counter(c.key() for c in y.calls) == Counter(c.key() for c in y_hat.calls)


def tool_names_match(y: CanonicalAnswer, y_hat: CanonicalAnswer) -> bool:
    if isinstance(y, Refusal) or isinstance(y_hat, Refusal):
        return isinstance(y, Refusal) and isinstance(y_hat, Refusal)
    return Counter(y.tool_names()) == Counter(y_hat.tool_names())


@dataclass(frozen=True)
class CallDiff:
    kind: str  # equal | tool_mismatch | missing_call | extra_call | arg_mismatch | variant_mismatch
    paths: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind == "equal" and self.paths:
            raise ValueError("an equal diff carries no paths")


def _value_paths(a: Any, b: Any, prefix: str) -> list[str]:
    if isinstance(a, dict) and isinstance(b, dict):
        out = []
        for k in sorted(set(a) | set(b)):
            p = f"{prefix}.{k}"
            if k not in a or k not in b:
                out.append(p)
            else:
                out.extend(_value_paths(a[k], b[k], p))
        return out
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            return [prefix]
        out = []
        for i, (x, z) in enumerate(zip(a, b)):
            out.extend(_value_paths(x, z, f"{prefix}[{i}]"))
        return out
    if type(a) is not type(b) and not (
        isinstance(a, (int, float)) and isinstance(b, (int, float))
        and not isinstance(a, bool) and not isinstance(b, bool)
    ):
        return [prefix]
    return [] if a == b else [prefix]


def diff_answers(y: CanonicalAnswer, y_hat: CanonicalAnswer) -> CallDiff:
    """Describe how ``y`` departs from the reference ``y_hat``.

    Argument paths are indexed by the reference call position, e.g.
    ``calls[0].arguments.city``.
    """
    if isinstance(y, Refusal) != isinstance(y_hat, Refusal):
        return CallDiff("variant_mismatch")
    if answers_equal(y, y_hat):
        return CallDiff("equal")
    if len(y.calls) < len(y_hat.calls):
        return CallDiff("missing_call")
    if len(y.calls) > len(y_hat.calls):
        return CallDiff("extra_call")
    if not tool_names_match(y, y_hat):
        return CallDiff("tool_mismatch")

    remaining = list(y.calls)
    paths: list[str] = []
    for i, ref in enumerate(y_hat.calls):
        candidates = [c for c in remaining if c.tool_name == ref.tool_name]
        best = min(
            candidates,
            key=lambda c: len(_value_paths(c.arguments, ref.arguments, "")),
        )
        remaining.remove(best)
        paths.extend(_value_paths(best.arguments, ref.arguments, f"calls[{i}].arguments"))
    return CallDiff("arg_mismatch", tuple(paths))
