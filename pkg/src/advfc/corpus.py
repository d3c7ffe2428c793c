"""Seed data loading, prompt templating and curriculum composition."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .callspec import (
    AnswerFormatError,
    Calls,
    CanonicalAnswer,
    Refusal,
    answer_from_json,
    serialize_answer,
)

log = logging.getLogger(__name__)

COMPLEXITIES = ("single", "parallel", "multiple", "irrelevant")
LANGUAGES = ("en", "zh", "other")
PARAM_TYPES = ("string", "integer", "number", "boolean", "array", "object", "enum")

# Aliases seen in xlam-style tool descriptions ("str, optional", "List[int]", ...).
_TYPE_ALIASES = {
    "str": "string", "string": "string",
    "int": "integer", "integer": "integer",
    "float": "number", "number": "number", "double": "number",
    "bool": "boolean", "boolean": "boolean",
    "list": "array", "array": "array", "tuple": "array",
    "dict": "object", "object": "object",
    "enum": "enum",
}

DEFAULT_DIRECTIVES = (
    "Rewrite the user query so that it keeps the same intent and still maps to the "
    "same tool call, but phrase it differently. Reply with the rewritten query only."
)


class SeedDataError(ValueError):
    """A seed file failed to parse or validate.

    ``failures`` holds ``(line_number, record_id, reason)`` triples.
    """

    def __init__(self, failures: list[tuple[int, str | None, str]]):
        self.failures = failures
        head = "; ".join(
            f"line {ln}" + (f" (record {rid!r})" if rid else "") + f": {why}"
            for ln, rid, why in failures[:5]
        )
        more = f" (+{len(failures) - 5} more)" if len(failures) > 5 else ""
        super().__init__(head + more)


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str
    required: bool = False
    description: str = ""
    enum: tuple = ()


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    parameters: tuple[ToolParam, ...] = ()

    def __post_init__(self):
        if not self.name or not str(self.name).strip():
            raise ValueError("tool name must be non-empty")
        names = [p.name for p in self.parameters]
        dup = [n for n, c in Counter(names).items() if c > 1]
        if dup:
            raise ValueError(f"tool {self.name!r} repeats parameter names {dup}")
        for p in self.parameters:
            if p.type not in PARAM_TYPES:
                raise ValueError(f"tool {self.name!r} parameter {p.name!r} has unknown type {p.type!r}")
            if p.type == "enum" and not p.enum:
                raise ValueError(f"tool {self.name!r} enum parameter {p.name!r} has no values")

    def param(self, name: str) -> ToolParam | None:
        return next((p for p in self.parameters if p.name == name), None)

    def to_json(self) -> dict:
        props = {}
        for p in self.parameters:
            spec: dict[str, Any] = {"type": p.type, "description": p.description}
            if p.enum:
                spec["enum"] = list(p.enum)
            props[p.name] = spec
        return {
            "name": self.name,
            "description": self.description,
            "parameters": {
                "type": "object",
                "properties": props,
                "required": [p.name for p in self.parameters if p.required],
            },
        }

    def to_openai(self) -> dict:
        """Tool block for an OpenAI-compatible ``tools`` array."""
        body = self.to_json()
        for spec in body["parameters"]["properties"].values():
            if spec["type"] == "enum":
                spec["type"] = "string"
        return {"type": "function", "function": body}


def _normalize_type(raw: Any) -> str:
    if not isinstance(raw, str):
        raise ValueError(f"parameter type must be a string, got {raw!r}")
    base = raw.split(",")[0].strip().lower()
    base = base.split("[")[0]
    if base not in _TYPE_ALIASES:
        raise ValueError(f"unknown parameter type {raw!r}")
    return _TYPE_ALIASES[base]


def tool_from_json(obj: Any) -> ToolSchema:
    if not isinstance(obj, dict) or "name" not in obj:
        raise ValueError("tool must be an object with a name")
    raw_params = obj.get("parameters") or {}
    if not isinstance(raw_params, dict):
        raise ValueError(f"tool {obj['name']!r}: parameters must be an object")
    params = []
    if "properties" in raw_params:
        required = set(raw_params.get("required", []))
        items = raw_params["properties"].items()
    else:
        # xlam shape: {"param": {"type": "str, optional", "description": ...}}
        required = None
        items = raw_params.items()
    for pname, spec in items:
        if not isinstance(spec, dict):
            raise ValueError(f"tool {obj['name']!r}: parameter {pname!r} must be an object")
        ptype = "enum" if spec.get("enum") else _normalize_type(spec.get("type", "string"))
        if required is None:
            is_required = spec.get("required", "optional" not in str(spec.get("type", "")) and "default" not in spec)
        else:
            is_required = pname in required
        params.append(ToolParam(
            name=pname,
            type=ptype,
            required=bool(is_required),
            description=str(spec.get("description", "")),
            enum=tuple(spec.get("enum", ())),
        ))
    return ToolSchema(str(obj["name"]), str(obj.get("description", "")), tuple(params))


@dataclass(frozen=True)
class SeedRecord:
    id: str
    query: str
    tools: tuple[ToolSchema, ...]
    answer: CanonicalAnswer
    complexity: str
    language: str = "en"

    def __post_init__(self):
        object.__setattr__(self, "tools", tuple(self.tools))
        if not self.id:
            raise ValueError("record id must be non-empty")
        if not isinstance(self.query, str) or not self.query.strip():
            raise ValueError("query must be a non-empty string")
        if self.complexity not in COMPLEXITIES:
            raise ValueError(f"unknown complexity {self.complexity!r}")
        if self.language not in LANGUAGES:
            raise ValueError(f"unknown language {self.language!r}")
        if self.complexity == "irrelevant":
            if not isinstance(self.answer, Refusal):
                raise ValueError("irrelevant records must have a refusal answer")
        else:
            if not isinstance(self.answer, Calls):
                raise ValueError(f"{self.complexity} records need at least one call")
            known = {t.name for t in self.tools}
            missing = [n for n in self.answer.tool_names() if n not in known]
            if missing:
                raise ValueError(f"answer calls tools absent from the tool list: {missing}")
        names = [t.name for t in self.tools]
        if len(set(names)) != len(names):
            raise ValueError("duplicate tool names in tool list")

    def tool(self, name: str) -> ToolSchema | None:
        return next((t for t in self.tools if t.name == name), None)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "query": self.query,
            "tools": [t.to_json() for t in self.tools],
            "answer": self.answer.to_json(),
            "complexity": self.complexity,
            "language": self.language,
        }


def record_from_json(obj: Any) -> SeedRecord:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    for key in ("id", "query", "tools", "answer", "complexity"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    if not isinstance(obj["tools"], list):
        raise ValueError("tools must be a list")
    try:
        answer = answer_from_json(obj["answer"])
    except AnswerFormatError as exc:
        raise ValueError(f"bad answer: {exc}") from None
    return SeedRecord(
        id=str(obj["id"]),
        query=obj["query"],
        tools=tuple(tool_from_json(t) for t in obj["tools"]),
        answer=answer,
        complexity=obj["complexity"],
        language=obj.get("language", "en"),
    )


@dataclass
class RecordCheck:
    line: int
    record_id: str | None
    ok: bool
    reason: str = ""


def check_seed_lines(lines: Iterable[str]) -> tuple[list[SeedRecord], list[RecordCheck]]:
    """Validate JSONL lines, returning the valid records and one check per line."""
    records: list[SeedRecord] = []
    checks: list[RecordCheck] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            checks.append(RecordCheck(lineno, None, False, f"parse error: {exc.msg} at column {exc.colno}"))
            continue
        rid = str(obj.get("id")) if isinstance(obj, dict) and "id" in obj else None
        try:
            rec = record_from_json(obj)
        except ValueError as exc:
            checks.append(RecordCheck(lineno, rid, False, str(exc)))
            continue
        if rec.id in seen:
            checks.append(RecordCheck(lineno, rec.id, False, "duplicate id"))
            continue
        seen.add(rec.id)
        records.append(rec)
        checks.append(RecordCheck(lineno, rec.id, True))
    return records, checks


def load_seed_dataset(path: str | Path) -> list[SeedRecord]:
    with open(path, encoding="utf-8") as fh:
        records, checks = check_seed_lines(fh)
    failures = [(c.line, c.record_id, c.reason) for c in checks if not c.ok]
    if failures:
        raise SeedDataError(failures)
    return records


def dump_seed_dataset(records: Iterable[SeedRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class QueryPrompt:
    """Attacker input rendered from one seed record.

    Besides the rendered text it keeps the fields the rewrite policy and its
    text operators condition on.
    """

    seed_id: str
    rendered_context: str
    directives: str
    query: str
    complexity: str
    language: str
    tool_count: int
    slot_values: tuple[str, ...] = ()
    optional_values: tuple[str, ...] = ()
    other_tools: tuple[str, ...] = ()


def _argument_strings(record: SeedRecord) -> tuple[tuple[str, ...], tuple[str, ...]]:
    if not isinstance(record.answer, Calls):
        return (), ()
    required, optional = [], []
    for call in record.answer.calls:
        schema = record.tool(call.tool_name)
        for name, value in call.arguments.items():
            if isinstance(value, bool) or not isinstance(value, (str, int, float)):
                continue
            text = str(value)
            if text not in record.query:
                continue
            p = schema.param(name) if schema else None
            (optional if p is not None and not p.required else required).append(text)
    return tuple(dict.fromkeys(required)), tuple(dict.fromkeys(optional))


def build_query_prompt(record: SeedRecord, directives: str = DEFAULT_DIRECTIVES) -> QueryPrompt:
    tool_lines = "\n".join(
        f"- {t.name}: {t.description}" for t in record.tools
    ) or "- (none)"
    rendered = (
        f"[seed {record.id}]\n"
        f"Original query:\n{record.query}\n\n"
        f"Available tools:\n{tool_lines}\n\n"
        f"Ground-truth answer:\n{serialize_answer(record.answer)}\n\n"
        f"Instructions:\n{directives}"
    )
    required, optional = _argument_strings(record)
    used = set(record.answer.tool_names()) if isinstance(record.answer, Calls) else set()
    return QueryPrompt(
        seed_id=record.id,
        rendered_context=rendered,
        directives=directives,
        query=record.query,
        complexity=record.complexity,
        language=record.language,
        tool_count=len(record.tools),
        slot_values=required,
        optional_values=optional,
        other_tools=tuple(t.description or t.name for t in record.tools if t.name not in used),
    )


@dataclass(frozen=True)
class RoundMix:
    fractions: dict
    count: int

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("round count must be positive")
        bad = [c for c in self.fractions if c not in COMPLEXITIES]
        if bad:
            raise ValueError(f"unknown complexity classes {bad}")
        if any(not 0.0 <= f <= 1.0 for f in self.fractions.values()):
            raise ValueError("fractions must lie in [0, 1]")
        if abs(sum(self.fractions.values()) - 1.0) > 1e-9:
            raise ValueError(f"fractions sum to {sum(self.fractions.values())}, expected 1")

    def quotas(self) -> dict[str, int]:
        """Integer per-class counts summing to ``count`` (largest remainder)."""
        classes = [c for c in COMPLEXITIES if self.fractions.get(c, 0.0) > 0]
        exact = {c: self.fractions[c] * self.count for c in classes}
        quotas = {c: int(np.floor(v)) for c, v in exact.items()}
        short = self.count - sum(quotas.values())
        by_rem = sorted(classes, key=lambda c: (-(exact[c] - quotas[c]), COMPLEXITIES.index(c)))
        for c in by_rem[:short]:
            quotas[c] += 1
        return quotas

    def to_json(self) -> dict:
        return {"fractions": dict(self.fractions), "count": self.count}


@dataclass(frozen=True)
class CurriculumSchedule:
    rounds: tuple[RoundMix, ...] = field(default_factory=tuple)

    @classmethod
    def from_json(cls, obj: Sequence[dict]) -> "CurriculumSchedule":
        return cls(tuple(RoundMix(dict(r["fractions"]), int(r["count"])) for r in obj))

    def to_json(self) -> list:
        return [r.to_json() for r in self.rounds]


def compose_round_dataset(
    seeds: Sequence[SeedRecord],
    schedule: CurriculumSchedule,
    round_index: int,
    rng_seed: int,
    directives: str = DEFAULT_DIRECTIVES,
) -> list[QueryPrompt]:
    if not 0 <= round_index < len(schedule.rounds):
        raise IndexError(f"round {round_index} outside schedule of {len(schedule.rounds)} rounds")
    mix = schedule.rounds[round_index]
    pools = {c: [s for s in seeds if s.complexity == c] for c in COMPLEXITIES}
    rng = np.random.default_rng([rng_seed, round_index])
    chosen: list[SeedRecord] = []
    for cls_name, quota in mix.quotas().items():
        pool = pools[cls_name]
        if not pool:
            raise ValueError(f"no seeds of complexity {cls_name!r} for round {round_index}")
        if len(pool) < quota:
            log.warning("round %d: %d %s seeds for a quota of %d, sampling with replacement",
                        round_index, len(pool), cls_name, quota)
            idx = rng.integers(0, len(pool), size=quota)
        else:
            idx = rng.choice(len(pool), size=quota, replace=False)
        chosen.extend(pool[i] for i in idx)
    order = rng.permutation(len(chosen))
    return [build_query_prompt(chosen[i], directives) for i in order]
