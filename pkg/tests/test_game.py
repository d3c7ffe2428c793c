import itertools

from hypothesis import given, strategies as st

from advfc.arbiter import JudgeVerdict
from advfc.callspec import REFUSAL, CanonicalCall, Calls
from advfc.game import BadCase, adversarial_reward, defense_reward, is_bad_case
from advfc.rewriter import RewrittenQuery

Y_HAT = Calls((CanonicalCall("get_weather", {"city": "Paris"}),))
WRONG_ARG = Calls((CanonicalCall("get_weather", {"city": "Lyon"}),))
WRONG_TOOL = Calls((CanonicalCall("get_time", {"city": "Paris"}),))

PASS = JudgeVerdict(True, True, 1)
FAIL1 = JudgeVerdict(False, False, -1)
FAIL2 = JudgeVerdict(True, False, -1)


def test_adversarial_branches():
    assert adversarial_reward(PASS, WRONG_ARG, Y_HAT).r_adv == 1
    assert adversarial_reward(PASS, Y_HAT, Y_HAT).r_adv == -1
    assert adversarial_reward(FAIL1, WRONG_ARG, Y_HAT).r_adv == -1
    assert adversarial_reward(FAIL2, WRONG_TOOL, Y_HAT).r_adv == -1


def test_defense_branches():
    assert defense_reward(Y_HAT, Y_HAT).r_f == 1
    assert defense_reward(WRONG_TOOL, Y_HAT).r_f == -1
    assert defense_reward(WRONG_ARG, Y_HAT).r_f == -1
    assert defense_reward(REFUSAL, Y_HAT).r_f == -1


def test_bad_case_predicate():
    assert is_bad_case(adversarial_reward(PASS, WRONG_ARG, Y_HAT))
    assert not is_bad_case(adversarial_reward(FAIL1, WRONG_ARG, Y_HAT))
    assert not is_bad_case(adversarial_reward(PASS, Y_HAT, Y_HAT))


def test_truth_table_exhaustive():
    for s1, s2, eq in itertools.product([False, True], repeat=3):
        v = JudgeVerdict(s1, s1 and s2, 1 if s1 and s2 else -1)
        y = Y_HAT if eq else WRONG_ARG
        out = adversarial_reward(v, y, Y_HAT)
        assert out.r_adv == (1 if (s1 and s2 and not eq) else -1)
        if v.r_judge == 1:
            assert out.r_adv == -defense_reward(y, Y_HAT).r_f


@given(st.booleans(), st.booleans(), st.sampled_from([Y_HAT, WRONG_ARG, WRONG_TOOL, REFUSAL]))
def test_zero_sum_on_valid(s1, s2, y):
    v = JudgeVerdict(s1, s1 and s2, 1 if s1 and s2 else -1)
    out = adversarial_reward(v, y, Y_HAT)
    if v.r_judge == 1:
        assert out.r_adv == -defense_reward(y, Y_HAT).r_f
    else:
        assert out.r_adv == -1


def test_bad_case_round_trip():
    rw = RewrittenQuery("s1", "Weather for Paris?", ("ParaphraseLight", "UnitShift"), -2.5, 77)
    case = BadCase(rw, Y_HAT, 1, 4, 12)
    back = BadCase.from_json(case.to_json())
    assert back == case
    assert case.to_json()["rewritten_query"] == "Weather for Paris?"
