"""Two-stage judging of rewritten queries."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .callspec import (
    REFUSAL,
    AnswerFormatError,
    AnswerParseError,
    CanonicalAnswer,
    CanonicalCall,
    Calls,
    serialize_answer,
    tool_names_match,
)
from .corpus import SeedRecord
from .operators import ASSISTANT_PERSPECTIVE_PATTERNS, BY_NAME, PASSTHROUGH
from .remote import BackendError, Endpoint, MalformedPayload, chat_completion
from .rewriter import RewrittenQuery

DISTRACTOR_TOOL = "__unrelated_request__"


class JudgeError(RuntimeError):
    def __init__(self, message: str, rewritten_id: str):
        super().__init__(f"judge failed on {rewritten_id}: {message}")
        self.rewritten_id = rewritten_id


@dataclass(frozen=True)
class JudgeVerdict:
    stage1_pass: bool
    stage2_valid: bool
    r_judge: int
    rationale: str = ""

    def __post_init__(self):
        if self.r_judge != (1 if self.stage1_pass and self.stage2_valid else -1):
            raise ValueError("r_judge must be +1 exactly when both stages pass")
        if not self.stage1_pass and self.stage2_valid:
            raise ValueError("stage 2 is not evaluated when stage 1 fails")


class Judge(Protocol):
    def reconstruct(self, rewritten: RewrittenQuery, seed: SeedRecord) -> CanonicalAnswer: ...

    def validate(self, rewritten: RewrittenQuery, seed: SeedRecord) -> bool: ...


def _traceable(actions) -> bool:
    return all(a in PASSTHROUGH or BY_NAME[a].stage1_traceable for a in actions)


def rule_checks(text: str, seed: SeedRecord, patterns=ASSISTANT_PERSPECTIVE_PATTERNS) -> str | None:
    """Return the first failed stage-2 rule, or None."""
    for pattern in patterns:
        if re.search(pattern, text, flags=re.IGNORECASE):
            return f"assistant-perspective phrasing /{pattern}/"
    if isinstance(seed.answer, Calls):
        lowered = text.lower()
        for call in seed.answer.calls:
            schema = seed.tool(call.tool_name)
            for name, value in call.arguments.items():
                p = schema.param(name) if schema else None
                if p is None or not p.required or not isinstance(value, str):
                    continue
                if value in seed.query and value.lower() not in lowered:
                    return f"required field {name}={value!r} no longer mentioned"
    return None


class SimulatedJudge:
    """Deterministic judge driven by operator flags plus rule checks."""

    def __init__(self, patterns=ASSISTANT_PERSPECTIVE_PATTERNS):
        self.patterns = tuple(patterns)

    def reconstruct(self, rewritten: RewrittenQuery, seed: SeedRecord) -> CanonicalAnswer:
        if _traceable(rewritten.actions):
            return seed.answer
        return Calls((CanonicalCall(DISTRACTOR_TOOL, {}),))

    def validate(self, rewritten: RewrittenQuery, seed: SeedRecord) -> bool:
        return self.explain_invalid(rewritten, seed) is None

    def explain_invalid(self, rewritten: RewrittenQuery, seed: SeedRecord) -> str | None:
        bad = [a for a in rewritten.actions if a not in PASSTHROUGH and not BY_NAME[a].stage2_valid]
        if bad:
            return f"invalidating operator {bad[0]}"
        return rule_checks(rewritten.text, seed, self.patterns)


def tool_call_message_to_answer(message: dict) -> CanonicalAnswer:
    """Turn a chat ``message`` into an answer; no tool calls means refusal."""
    tool_calls = message.get("tool_calls") or []
    if not tool_calls:
        return REFUSAL
    calls = []
    for tc in tool_calls:
        fn = tc.get("function") if isinstance(tc, dict) else None
        if not isinstance(fn, dict) or "name" not in fn:
            raise AnswerFormatError("tool call without a function name")
        args = fn.get("arguments", "{}")
        if isinstance(args, str):
            try:
                args = json.loads(args) if args.strip() else {}
            except json.JSONDecodeError as exc:
                raise AnswerParseError(exc.msg, exc.pos) from None
        if not isinstance(args, dict):
            raise AnswerFormatError("tool call arguments must be an object")
        calls.append(CanonicalCall(fn["name"], args))
    return Calls(tuple(calls))


DEFAULT_STAGE2_TEMPLATE = (
    "You check rewritten user queries for a function-calling dataset.\n"
    "Original query: {query}\n"
    "Rewritten query: {rewritten}\n"
    "Expected answer: {answer}\n\n"
    "Is the rewritten query still posed from the user's perspective and does it keep every key "
    "field needed for the expected answer? Think it through, then end with exactly one word: "
    "VALID or INVALID."
)

_VERDICT = re.compile(r"\b(VALID|INVALID)\W*$")


class ExternalJudge:
    """Judge backed by a remote chat model for both stages."""

    def __init__(self, endpoint: Endpoint, template_path: str | Path | None = None):
        self.endpoint = endpoint
        self.template = Path(template_path).read_text(encoding="utf-8") if template_path else DEFAULT_STAGE2_TEMPLATE

    def reconstruct(self, rewritten: RewrittenQuery, seed: SeedRecord) -> CanonicalAnswer:
        messages = [{"role": "user", "content": rewritten.text}]
        message = chat_completion(self.endpoint, messages, tools=[t.to_openai() for t in seed.tools])
        return tool_call_message_to_answer(message)

    def validate(self, rewritten: RewrittenQuery, seed: SeedRecord) -> bool:
        prompt = self.template.format(query=seed.query, rewritten=rewritten.text, answer=serialize_answer(seed.answer))
        message = chat_completion(self.endpoint, [{"role": "user", "content": prompt}])
        content = (message.get("content") or "").strip()
        m = _VERDICT.search(content)
        if not m:
            raise MalformedPayload("judge reply does not end with VALID or INVALID", url=self.endpoint.url, attempts=1)
        return m.group(1) == "VALID"


def stage1_reconstruct(judge: Judge, rewritten: RewrittenQuery, seed: SeedRecord) -> CanonicalAnswer:
    try:
        return judge.reconstruct(rewritten, seed)
    except (BackendError, AnswerParseError, AnswerFormatError) as exc:
        raise JudgeError(f"stage 1: {type(exc).__name__}: {exc}", rewritten.id) from exc


def stage2_validate(rewritten: RewrittenQuery, seed: SeedRecord, judge: Judge | None = None) -> bool:
    judge = judge or SimulatedJudge()
    try:
        return judge.validate(rewritten, seed)
    except BackendError as exc:
        raise JudgeError(f"stage 2: {exc}", rewritten.id) from exc


def judge(rewritten: RewrittenQuery, seed: SeedRecord, backend: Judge | None = None) -> JudgeVerdict:
    backend = backend or SimulatedJudge()
    y_prime = stage1_reconstruct(backend, rewritten, seed)
    if not tool_names_match(y_prime, seed.answer):
        return JudgeVerdict(False, False, -1, "stage 1: rewrite no longer maps to the original tool")
    if isinstance(backend, SimulatedJudge):
        why = backend.explain_invalid(rewritten, seed)
    else:
        why = None if stage2_validate(rewritten, seed, backend) else "judged invalid"
    if why is not None:
        return JudgeVerdict(True, False, -1, f"stage 2: {why}")
    return JudgeVerdict(True, True, 1, "valid")
