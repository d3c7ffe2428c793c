"""Rule-based query rewrite operators available to the attacker."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

from .corpus import QueryPrompt

_NUMBER_WORDS = {
    0: "zero", 1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six",
    7: "seven", 8: "eight", 9: "nine", 10: "ten", 11: "eleven", 12: "twelve",
    15: "fifteen", 20: "twenty", 25: "twenty-five", 30: "thirty", 40: "forty",
    45: "forty-five", 50: "fifty", 60: "sixty", 90: "ninety", 100: "a hundred",
}

_PARAPHRASES = [
    (r"^what(?:'s| is) ", "Could you tell me "),
    (r"^can you ", "Would you mind if you "),
    (r"^could you ", "Can you "),
    (r"^please ", "Kindly "),
    (r"^find ", "Look up "),
    (r"^get ", "Fetch "),
    (r"^set ", "Go ahead and set "),
    (r"^book ", "Reserve "),
    (r"^send ", "Shoot off "),
    (r"^play ", "Put on "),
    (r"^schedule ", "Arrange "),
    (r"^calculate ", "Work out "),
    (r"^convert ", "Turn "),
    (r"^how much ", "What amount "),
    (r"^how far ", "What distance "),
]

_SYNONYMS = [
    (r"\bweather\b", "meteorological conditions"),
    (r"\btimer\b", "countdown"),
    (r"\bflights?\b", "air connections"),
    (r"\bmessage\b", "note"),
    (r"\bmeeting\b", "get-together"),
    (r"\btable\b", "reservation slot"),
    (r"\bstock\b", "share"),
    (r"\btip\b", "gratuity"),
    (r"\bsong\b", "track"),
    (r"\bbill\b", "check"),
]

_UNIT_WORDS = r"(minutes?|hours?|km|kilometers?|miles?|kg|kilograms?|days?)"
_QUANTITY = re.compile(r"(\d+(?:\.\d+)?)[\s-]*" + _UNIT_WORDS + r"\b", re.IGNORECASE)

ASSISTANT_PERSPECTIVE_PATTERNS = (
    r"^\s*as your (?:assistant|ai)\b",
    r"\bI will now\b",
    r"\bI'll go ahead and\b",
    r"\bhere is what I, the assistant\b",
)


def _shift_quantity(m: re.Match) -> str:
    value = float(m.group(1))
    unit = m.group(2).lower().rstrip("s")
    if unit == "minute":
        if value == 30:
            return "half an hour"
        if value == 15:
            return "a quarter of an hour"
        if value % 60 == 0:
            h = int(value // 60)
            return f"{h} hour" + ("s" if h != 1 else "")
        return f"{value * 60:g} seconds"
    if unit == "hour":
        return f"{value * 60:g} minutes"
    if unit in ("km", "kilometer"):
        return f"{value * 1000:g} meters"
    if unit == "mile":
        return f"{value * 5280:g} feet"
    if unit in ("kg", "kilogram"):
        return f"{value * 1000:g} grams"
    if unit == "day":
        return f"{value * 24:g} hours"
    return m.group(0)


def _first_lower(text: str) -> str:
    if len(text) > 1 and text[1].isupper():
        return text
    return text[:1].lower() + text[1:]


def paraphrase_light(text: str, prompt: QueryPrompt) -> str:
    for pattern, repl in _PARAPHRASES:
        new, n = re.subn(pattern, repl, text, count=1, flags=re.IGNORECASE)
        if n:
            return new
    return "Please, " + _first_lower(text)


def synonym_tool_terms(text: str, prompt: QueryPrompt) -> str:
    protected = {v.lower() for v in prompt.slot_values}
    for pattern, repl in _SYNONYMS:
        m = re.search(pattern, text, flags=re.IGNORECASE)
        if m and m.group(0).lower() not in protected:
            return text[: m.start()] + repl + text[m.end():]
    return text.rstrip() + " Use whichever service fits best."


def drop_optional_param(text: str, prompt: QueryPrompt) -> str:
    for value in prompt.optional_values:
        if value and value in text:
            new = re.sub(r"\s*(?:in|by|with|as|labeled|called)?\s*" + re.escape(value), "", text, count=1)
            if new.strip():
                return new
    return text


def implicit_param(text: str, prompt: QueryPrompt) -> str:
    def words(m: re.Match) -> str:
        n = int(m.group(0))
        return _NUMBER_WORDS.get(n, m.group(0))

    new = re.sub(r"(?<![\d.$])\b\d+\b(?![.\d])", words, text, count=1)
    if new != text:
        return new
    return "Going with the details I gave you before, " + _first_lower(text)


def inject_distractor(text: str, prompt: QueryPrompt) -> str:
    topic = prompt.other_tools[0] if prompt.other_tools else "something unrelated"
    topic = topic.rstrip(".")
    return f"{text.rstrip()} By the way, I was also thinking about this: {_first_lower(topic)}, but that can wait."


def unit_shift(text: str, prompt: QueryPrompt) -> str:
    new = _QUANTITY.sub(_shift_quantity, text, count=1)
    if new != text:
        return new
    new = re.sub(r"\$(\d+(?:\.\d+)?)", lambda m: f"{m.group(1)} dollars", text, count=1)
    if new != text:
        return new
    return text.rstrip() + " Give any amounts in metric units."


def perspective_flip(text: str, prompt: QueryPrompt) -> str:
    return f"As your assistant, I will now take care of this for you: {_first_lower(text)}"


def semantic_drift(text: str, prompt: QueryPrompt) -> str:
    subject = prompt.slot_values[0] if prompt.slot_values else "this topic"
    return f"Actually, never mind the request. Just tell me a fun fact about {subject}."


def drop_required_field(text: str, prompt: QueryPrompt) -> str:
    for value in prompt.slot_values:
        if value and value in text:
            return text.replace(value, "somewhere" if value[:1].isupper() else "something", 1)
    new = re.sub(r"\d+(?:\.\d+)?", "some", text, count=1)
    if new != text:
        return new
    return "Do the usual thing for me."


@dataclass(frozen=True)
class RewriteOperator:
    name: str
    stage1_traceable: bool
    stage2_valid: bool
    difficulty: float
    transform: Callable[[str, QueryPrompt], str]

    def apply(self, text: str, prompt: QueryPrompt) -> str:
        out = self.transform(text, prompt)
        return out if out.strip() else text


OPERATORS: tuple[RewriteOperator, ...] = (
    RewriteOperator("ParaphraseLight", True, True, 0.1, paraphrase_light),
    RewriteOperator("SynonymToolTerms", True, True, 0.3, synonym_tool_terms),
    RewriteOperator("DropOptionalParam", True, True, 0.3, drop_optional_param),
    RewriteOperator("ImplicitParam", True, True, 0.5, implicit_param),
    RewriteOperator("InjectDistractor", True, True, 0.6, inject_distractor),
    RewriteOperator("UnitShift", True, True, 0.6, unit_shift),
    RewriteOperator("PerspectiveFlip", True, False, 0.7, perspective_flip),
    RewriteOperator("SemanticDrift", False, True, 0.8, semantic_drift),
    RewriteOperator("DropRequiredField", True, False, 0.8, drop_required_field),
)
OPERATOR_NAMES: tuple[str, ...] = tuple(op.name for op in OPERATORS)
OPERATOR_INDEX = {name: i for i, name in enumerate(OPERATOR_NAMES)}
BY_NAME = {op.name: op for op in OPERATORS}

# Labels that are not operators: a rewrite from an external model, and an
# unmodified seed query. Both are neutral for judging and weakness lookups.
EXTERNAL = "External"
ORIGINAL = "Original"
PASSTHROUGH = frozenset({EXTERNAL, ORIGINAL})
