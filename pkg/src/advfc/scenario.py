"""Synthetic seed data and the canonical simulated scenario."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .callspec import REFUSAL, CanonicalCall, Calls
from .corpus import SeedRecord, ToolParam, ToolSchema

S, I, N, E = "string", "integer", "number", "enum"

CATALOG: dict[str, ToolSchema] = {t.name: t for t in (
    ToolSchema("get_weather", "Get the current weather for a city.", (
        ToolParam("city", S, True, "City name"),
        ToolParam("unit", E, False, "Temperature unit", ("celsius", "fahrenheit")),
    )),
    ToolSchema("set_timer", "Start a countdown timer.", (
        ToolParam("duration_minutes", I, True, "Length of the timer in minutes"),
        ToolParam("label", S, False, "Optional timer label"),
    )),
    ToolSchema("convert_distance", "Convert a distance between units.", (
        ToolParam("value", N, True, "Distance to convert"),
        ToolParam("from_unit", S, True, "Source unit"),
        ToolParam("to_unit", S, True, "Target unit"),
    )),
    ToolSchema("book_restaurant", "Reserve a table at a restaurant.", (
        ToolParam("restaurant", S, True, "Restaurant name"),
        ToolParam("party_size", I, True, "Number of guests"),
        ToolParam("time", S, True, "Reservation time"),
    )),
    ToolSchema("send_message", "Send a text message to a contact.", (
        ToolParam("recipient", S, True, "Contact name"),
        ToolParam("text", S, True, "Message body"),
    )),
    ToolSchema("search_flights", "Search for flights between two cities.", (
        ToolParam("origin", S, True, "Departure city"),
        ToolParam("destination", S, True, "Arrival city"),
        ToolParam("date", S, True, "Travel date"),
    )),
    ToolSchema("get_stock_price", "Look up the latest stock price for a ticker.", (
        ToolParam("symbol", S, True, "Ticker symbol"),
    )),
    ToolSchema("play_music", "Play a song on the user's speaker.", (
        ToolParam("song", S, True, "Song title"),
        ToolParam("artist", S, False, "Artist name"),
    )),
    ToolSchema("schedule_meeting", "Put a meeting on the calendar.", (
        ToolParam("title", S, True, "Meeting title"),
        ToolParam("duration_minutes", I, True, "Meeting length in minutes"),
        ToolParam("attendee", S, True, "Person to invite"),
    )),
    ToolSchema("calculate_tip", "Compute the tip for a restaurant bill.", (
        ToolParam("bill_amount", N, True, "Bill total in dollars"),
        ToolParam("percent", I, True, "Tip percentage"),
    )),
)}

CITIES = ["Paris", "Tokyo", "Berlin", "Lima", "Cairo", "Oslo", "Seoul", "Madrid", "Toronto", "Nairobi"]
PEOPLE = ["Alice", "Bob", "Chen", "Dana", "Emeka", "Farah", "Goran", "Hana"]
RESTAURANTS = ["Luigi's", "Blue Lotus", "The Oak Room", "Casa Verde", "Sakura House"]
SONGS = [("Yesterday", "The Beatles"), ("Hurt", "Johnny Cash"), ("Clocks", "Coldplay"), ("Hallelujah", "Leonard Cohen")]
SYMBOLS = ["AAPL", "MSFT", "NVDA", "TSLA", "AMZN"]
DATES = ["March 3", "April 12", "May 20", "June 1", "July 15"]
TITLES = ["budget review", "design sync", "quarterly planning", "hiring debrief"]
TEXTS = ["running late", "see you at noon", "call me back", "happy birthday"]
UNITS = [("km", "miles"), ("miles", "km")]

Filler = Callable[[np.random.Generator], tuple[str, str, dict]]


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _weather(rng):
    city = _pick(rng, CITIES)
    if rng.random() < 0.4:
        unit = _pick(rng, ["celsius", "fahrenheit"])
        return f"What is the weather in {city} in {unit}?", f"{city}的天气怎么样？", {"city": city, "unit": unit}
    return f"What's the weather like in {city} today?", f"{city}今天天气怎么样？", {"city": city}


def _timer(rng):
    minutes = int(_pick(rng, [5, 10, 15, 20, 30, 45, 60, 90]))
    if rng.random() < 0.4:
        label = _pick(rng, ["pasta", "laundry", "tea"])
        return (f"Set a timer for {minutes} minutes labeled {label}.", f"设置一个{minutes}分钟的计时器，标签是{label}。",
                {"duration_minutes": minutes, "label": label})
    return f"Set a timer for {minutes} minutes.", f"设置一个{minutes}分钟的计时器。", {"duration_minutes": minutes}


def _distance(rng):
    value = int(_pick(rng, [3, 5, 10, 21, 42]))
    src, dst = _pick(rng, UNITS)
    return (f"Convert {value} {src} to {dst}.", f"把{value} {src}换算成{dst}。",
            {"value": value, "from_unit": src, "to_unit": dst})


def _restaurant(rng):
    name = _pick(rng, RESTAURANTS)
    size = int(rng.integers(2, 9))
    time = _pick(rng, ["7 pm", "8:30 pm", "noon", "6 pm"])
    return (f"Book a table at {name} for {size} people at {time}.", f"在{name}订一张{size}人的桌子，时间是{time}。",
            {"restaurant": name, "party_size": size, "time": time})


def _message(rng):
    who = _pick(rng, PEOPLE)
    text = _pick(rng, TEXTS)
    return (f"Send a message to {who} saying {text}.", f"给{who}发消息说{text}。", {"recipient": who, "text": text})


def _flights(rng):
    a, b = rng.choice(len(CITIES), size=2, replace=False)
    date = _pick(rng, DATES)
    return (f"Find flights from {CITIES[a]} to {CITIES[b]} on {date}.", f"查找{date}从{CITIES[a]}到{CITIES[b]}的航班。",
            {"origin": CITIES[a], "destination": CITIES[b], "date": date})


def _stock(rng):
    sym = _pick(rng, SYMBOLS)
    return f"What is the current price of {sym} stock?", f"{sym}的股价是多少？", {"symbol": sym}


def _music(rng):
    song, artist = _pick(rng, SONGS)
    if rng.random() < 0.5:
        return f"Play {song} by {artist}.", f"播放{artist}的{song}。", {"song": song, "artist": artist}
    return f"Play {song}.", f"播放{song}。", {"song": song}


def _meeting(rng):
    title = _pick(rng, TITLES)
    minutes = int(_pick(rng, [15, 30, 45, 60, 90]))
    who = _pick(rng, PEOPLE)
    return (f"Schedule a {minutes} minutes {title} with {who}.", f"安排一个{minutes}分钟的{title}，邀请{who}。",
            {"title": title, "duration_minutes": minutes, "attendee": who})


def _tip(rng):
    amount = int(_pick(rng, [40, 65, 80, 120]))
    pct = int(_pick(rng, [10, 15, 18, 20]))
    return (f"Calculate a {pct}% tip on a ${amount} bill.", f"计算{amount}美元账单的{pct}%小费。",
            {"bill_amount": amount, "percent": pct})


FILLERS: dict[str, Filler] = {
    "get_weather": _weather, "set_timer": _timer, "convert_distance": _distance,
    "book_restaurant": _restaurant, "send_message": _message, "search_flights": _flights,
    "get_stock_price": _stock, "play_music": _music, "schedule_meeting": _meeting,
    "calculate_tip": _tip,
}

IRRELEVANT_QUERIES = [
    "Tell me a joke about penguins.",
    "Who wrote the novel Middlemarch?",
    "Explain how photosynthesis works in simple terms.",
    "What is the capital of Australia?",
    "Write a haiku about autumn leaves.",
    "Why is the sky blue?",
]
IRRELEVANT_ZH = ["给我讲个笑话。", "为什么天空是蓝色的？"]


def _tool_list(rng, needed: list[str], tool_count: int) -> tuple[ToolSchema, ...]:
    others = [n for n in CATALOG if n not in needed]
    extra = max(0, tool_count - len(needed))
    picks = list(needed) + [others[i] for i in rng.choice(len(others), size=min(extra, len(others)), replace=False)]
    order = rng.permutation(len(picks))
    return tuple(CATALOG[picks[i]] for i in order)


def make_record(rng: np.random.Generator, rid: str, complexity: str, language: str = "en",
                tool_count: int | None = None, tools: list[str] | None = None) -> SeedRecord:
    names = list(CATALOG)
    if tool_count is None:
        tool_count = int(_pick(rng, [1, 2, 3, 4, 5]))
    if complexity == "irrelevant":
        query = _pick(rng, IRRELEVANT_ZH if language == "zh" else IRRELEVANT_QUERIES)
        chosen = _tool_list(rng, [], max(1, tool_count))
        return SeedRecord(rid, query, chosen, REFUSAL, complexity, language)

    def one(name):
        en, zh, args = FILLERS[name](rng)
        return (zh if language == "zh" else en), CanonicalCall(name, args)

    if complexity == "single":
        name = tools[0] if tools else _pick(rng, names)
        q, call = one(name)
        return SeedRecord(rid, q, _tool_list(rng, [name], tool_count), Calls((call,)), complexity, language)
    if complexity == "parallel":
        name = tools[0] if tools else _pick(rng, names)
        (q1, c1), (q2, c2) = one(name), one(name)
        while c2 == c1:
            q2, c2 = one(name)
        joiner = "另外，" if language == "zh" else " Also, "
        q = q1 + joiner + (q2 if language == "zh" else q2[0].lower() + q2[1:])
        return SeedRecord(rid, q, _tool_list(rng, [name], tool_count), Calls((c1, c2)), complexity, language)
    if complexity == "multiple":
        a, b = tools[:2] if tools else [names[i] for i in rng.choice(len(names), size=2, replace=False)]
        (q1, c1), (q2, c2) = one(a), one(b)
        joiner = "然后，" if language == "zh" else " Then "
        q = q1 + joiner + (q2 if language == "zh" else q2[0].lower() + q2[1:])
        return SeedRecord(rid, q, _tool_list(rng, [a, b], max(2, tool_count)), Calls((c1, c2)), complexity, language)
    raise ValueError(f"unknown complexity {complexity!r}")


def synthetic_seed_dataset(
    counts: dict[str, int],
    rng_seed: int = 0,
    zh_fraction: float = 0.0,
    tool_count: int | None = None,
    tools: list[str] | None = None,
    prefix: str = "seed",
) -> list[SeedRecord]:
    """Generate ``counts[complexity]`` records per class with deterministic ids."""
    rng = np.random.default_rng(rng_seed)
    out = []
    for complexity, n in counts.items():
        for i in range(n):
            lang = "zh" if rng.random() < zh_fraction else "en"
            out.append(make_record(rng, f"{prefix}-{complexity}-{i:05d}", complexity, lang, tool_count, tools))
    return out


@dataclass(frozen=True)
class Scenario:
    """Seeds plus the config overrides that make up a named simulated setup."""

    seeds: list
    config: dict


def canonical_scenario(rng_seed: int = 0) -> Scenario:
    """Round 1 uses single-call seeds; round 2 mixes in parallel-call seeds.

    The defender is weak on unit rewrites and only mildly weak elsewhere.
    """
    seeds = synthetic_seed_dataset({"single": 200}, rng_seed=1000 + rng_seed, tool_count=1, prefix="internal")
    seeds += synthetic_seed_dataset({"parallel": 80}, rng_seed=2000 + rng_seed, tool_count=1, prefix="xlam")
    config = {
        "rounds": 2,
        "batch_size": 32,
        "max_timesteps": 150,
        # Batch means of +-1 rewards are flat and noisy before the policy
        # moves, so the 0.2 threshold would stop most runs near timestep 11.
        "early_stop": False,
        "learning_rate": 0.1,
        "eta": 0.005,
        "curriculum": [
            {"fractions": {"single": 1.0}, "count": 128},
            {"fractions": {"single": 0.5, "parallel": 0.5}, "count": 128},
        ],
        "backends": {"defender": {
            "kind": "simulated",
            "failure_prob": {**{op: 0.05 for op in (
                "ParaphraseLight", "SynonymToolTerms", "DropOptionalParam", "ImplicitParam",
                "InjectDistractor", "PerspectiveFlip", "SemanticDrift", "DropRequiredField")},
                "UnitShift": 0.9},
            "base_failure": 0.0,
        }},
        "rng_seed": rng_seed,
    }
    return Scenario(seeds, config)
