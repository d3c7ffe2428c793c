import json

import pytest
from hypothesis import given, strategies as st

from advfc.callspec import (
    REFUSAL,
    AnswerFormatError,
    AnswerParseError,
    CanonicalCall,
    Calls,
    Refusal,
    answer_from_json,
    answers_equal,
    canonical_value,
    diff_answers,
    parse_answer,
    serialize_answer,
    tool_names_match,
)


def calls(*pairs):
    return Calls(tuple(CanonicalCall(n, a) for n, a in pairs))


def test_call_order_and_key_order_ignored():
    a = parse_answer('{"calls": [{"name": "f", "arguments": {"x": 1, "y": 2}}, {"name": "g", "arguments": {}}]}')
    b = parse_answer('{"calls": [{"name": "g", "arguments": {}}, {"name": "f", "arguments": {"y": 2, "x": 1}}]}')
    assert answers_equal(a, b)
    assert serialize_answer(a) == serialize_answer(b)


def test_numeric_formatting_variants():
    assert answers_equal(calls(("f", {"x": 1})), calls(("f", {"x": 1.0})))
    assert answers_equal(calls(("f", {"x": 0.1 + 0.2})), calls(("f", {"x": 0.3})))
    assert not answers_equal(calls(("f", {"x": 1})), calls(("f", {"x": 2})))


def test_large_ints_kept_exact():
    big = 2**60 + 1
    assert canonical_value(big) == big
    assert not answers_equal(calls(("f", {"x": big})), calls(("f", {"x": big + 1})))


def test_strings_stripped():
    assert answers_equal(calls(("f", {"city": " Paris "})), calls(("f", {"city": "Paris"})))


def test_refusal_variants():
    assert answers_equal(REFUSAL, Refusal())
    assert not answers_equal(REFUSAL, calls(("f", {})))
    assert not tool_names_match(REFUSAL, calls(("f", {})))
    assert parse_answer("Sorry, I cannot help with that.") == REFUSAL
    assert parse_answer('{"refusal": true}') == REFUSAL


def test_duplicate_calls_count():
    one = calls(("f", {"x": 1}))
    two = calls(("f", {"x": 1}), ("f", {"x": 1}))
    assert not answers_equal(one, two)
    assert not tool_names_match(one, two)


def test_string_arguments_decoded():
    a = answer_from_json({"calls": [{"name": "f", "arguments": '{"x": 1}'}]})
    assert a == calls(("f", {"x": 1}))


def test_parse_error_has_byte_offset():
    with pytest.raises(AnswerParseError) as ei:
        parse_answer('{"calls": [é')
    assert ei.value.offset == len('{"calls": ['.encode())


@pytest.mark.parametrize("obj", [
    {"calls": []},
    {"refusal": False},
    {"calls": [{"name": "f", "args": {}}]},
    {"answer": 1},
    [1, 2],
])
def test_format_errors(obj):
    with pytest.raises(AnswerFormatError):
        answer_from_json(obj)


def test_non_finite_rejected():
    with pytest.raises(AnswerFormatError):
        canonical_value(float("nan"))


def test_diff_kinds():
    ref = calls(("get_weather", {"city": "Paris", "unit": "celsius"}))
    assert diff_answers(ref, ref).kind == "equal"
    assert diff_answers(REFUSAL, ref).kind == "variant_mismatch"
    assert diff_answers(calls(("get_time", {"city": "Paris"})), ref).kind == "tool_mismatch"
    assert diff_answers(calls(("get_weather", {"city": "Paris"}), ("x", {})), ref).kind == "extra_call"
    d = diff_answers(calls(("get_weather", {"city": "Lyon", "unit": "celsius"})), ref)
    assert d.kind == "arg_mismatch"
    assert d.paths == ("calls[0].arguments.city",)


def test_diff_missing_call():
    ref = calls(("f", {"x": 1}), ("f", {"x": 2}))
    assert diff_answers(calls(("f", {"x": 1})), ref).kind == "missing_call"


def test_diff_paths_follow_reference_positions():
    ref = calls(("f", {"x": 1}), ("g", {"y": {"z": [1, 2]}}))
    got = calls(("g", {"y": {"z": [1, 3]}}), ("f", {"x": 1}))
    assert diff_answers(got, ref).paths == ("calls[1].arguments.y.z[1]",)


json_scalars = st.one_of(
    st.integers(-1000, 1000), st.text(max_size=5), st.booleans(), st.none(),
    st.floats(-1e6, 1e6, allow_nan=False).map(lambda x: round(x, 3)),
)
args_st = st.dictionaries(st.text(min_size=1, max_size=4), json_scalars, max_size=4)
answer_st = st.one_of(
    st.just(REFUSAL),
    st.lists(st.tuples(st.sampled_from(["f", "g", "h"]), args_st), min_size=1, max_size=3).map(lambda xs: calls(*xs)),
)


@given(answer_st)
def test_serialize_round_trip(a):
    back = answer_from_json(json.loads(serialize_answer(a)))
    assert answers_equal(a, back)
    assert serialize_answer(back) == serialize_answer(a)


@given(answer_st, answer_st)
def test_equality_symmetric_and_matches_serialization(a, b):
    assert answers_equal(a, b) == answers_equal(b, a)
    assert answers_equal(a, b) == (serialize_answer(a) == serialize_answer(b))
    if answers_equal(a, b):
        assert tool_names_match(a, b)
        assert diff_answers(a, b).kind == "equal"
