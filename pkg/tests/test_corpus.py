import json
from collections import Counter

import pytest

from advfc.callspec import serialize_answer, REFUSAL
from advfc.corpus import (
    CurriculumSchedule,
    RoundMix,
    SeedDataError,
    build_query_prompt,
    check_seed_lines,
    compose_round_dataset,
    dump_seed_dataset,
    load_seed_dataset,
    record_from_json,
    tool_from_json,
)
from advfc.scenario import CATALOG, synthetic_seed_dataset

from conftest import record


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs), encoding="utf-8")
    return path


def test_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert load_seed_dataset(p) == []


def test_invalid_record_named(tmp_path):
    good = record("good").to_json()
    bad = record("bad").to_json()
    bad["answer"] = {"calls": [{"name": "launch_rocket", "arguments": {}}]}
    p = write_lines(tmp_path / "two.jsonl", [good, bad])
    with pytest.raises(SeedDataError) as ei:
        load_seed_dataset(p)
    assert ei.value.failures[0][:2] == (2, "bad")
    assert "launch_rocket" in str(ei.value)
    records, checks = check_seed_lines(p.read_text().splitlines())
    assert [r.id for r in records] == ["good"]
    assert [c.ok for c in checks] == [True, False]


def test_1700_records(tmp_path):
    seeds = synthetic_seed_dataset({"single": 1300, "parallel": 300, "irrelevant": 100}, rng_seed=3, zh_fraction=0.2)
    p = tmp_path / "internal.jsonl"
    dump_seed_dataset(seeds, p)
    loaded = load_seed_dataset(p)
    assert len(loaded) == 1700
    assert loaded == seeds


def test_duplicate_ids_and_parse_errors():
    r = json.dumps(record("x").to_json())
    _, checks = check_seed_lines([r, r, "{not json", ""])
    assert [(c.line, c.ok) for c in checks] == [(1, True), (2, False), (3, False)]
    assert checks[1].reason == "duplicate id"
    assert "parse error" in checks[2].reason


def test_irrelevant_needs_refusal():
    obj = record("r").to_json()
    obj["complexity"] = "irrelevant"
    with pytest.raises(ValueError, match="refusal"):
        record_from_json(obj)


def test_xlam_tool_shape():
    t = tool_from_json({
        "name": "get_weather", "description": "weather",
        "parameters": {"city": {"type": "str", "description": "c"}, "unit": {"type": "str, optional", "default": "c"}},
    })
    assert [(p.name, p.type, p.required) for p in t.parameters] == [("city", "string", True), ("unit", "string", False)]


def test_json_schema_tool_round_trip():
    t = CATALOG["get_weather"]
    assert tool_from_json(t.to_json()) == t
    assert t.to_openai()["type"] == "function"


def test_prompt_deterministic_and_lists_tools(timer_seed):
    rec = record(extra=("get_weather", "play_music"))
    a, b = build_query_prompt(rec), build_query_prompt(rec)
    assert a == b
    for name in ("set_timer", "get_weather", "play_music"):
        assert name in a.rendered_context
    assert a.tool_count == 3


def test_prompt_for_refusal(irrelevant_seed):
    p = build_query_prompt(irrelevant_seed)
    assert serialize_answer(REFUSAL) in p.rendered_context
    assert p.slot_values == ()


def test_prompt_slot_values(weather_prompt):
    assert weather_prompt.slot_values == ("Paris",)
    assert weather_prompt.optional_values == ("celsius",)
    assert weather_prompt.other_tools == ("Start a countdown timer.",)


def test_quotas_largest_remainder():
    assert RoundMix({"single": 1 / 3, "parallel": 1 / 3, "irrelevant": 1 / 3}, 10).quotas() == {
        "single": 4, "parallel": 3, "irrelevant": 3}
    with pytest.raises(ValueError):
        RoundMix({"single": 0.5}, 10)


@pytest.fixture(scope="module")
def pool():
    return synthetic_seed_dataset({"single": 50, "parallel": 30}, rng_seed=5)


def test_degenerate_mix(pool):
    out = compose_round_dataset(pool, CurriculumSchedule((RoundMix({"single": 1.0}, 10),)), 0, 1)
    assert len(out) == 10
    assert {p.complexity for p in out} == {"single"}


def test_round_two_adds_parallel(pool):
    sched = CurriculumSchedule((RoundMix({"single": 1.0}, 20), RoundMix({"single": 0.5, "parallel": 0.5}, 20)))
    out = compose_round_dataset(pool, sched, 1, 1)
    assert Counter(p.complexity for p in out) == {"single": 10, "parallel": 10}
    assert compose_round_dataset(pool, sched, 1, 1) == out
    assert compose_round_dataset(pool, sched, 1, 2) != out


def test_short_pool_warns(pool, caplog):
    sched = CurriculumSchedule((RoundMix({"parallel": 1.0}, 40),))
    out = compose_round_dataset(pool, sched, 0, 0)
    assert len(out) == 40
    assert "sampling with replacement" in caplog.text


def test_round_out_of_range(pool):
    with pytest.raises(IndexError):
        compose_round_dataset(pool, CurriculumSchedule((RoundMix({"single": 1.0}, 5),)), 1, 0)


def test_missing_class(pool):
    with pytest.raises(ValueError, match="irrelevant"):
        compose_round_dataset(pool, CurriculumSchedule((RoundMix({"irrelevant": 1.0}, 5),)), 0, 0)
