import pytest

from advfc.callspec import REFUSAL, CanonicalCall, Calls
from advfc.corpus import SeedRecord, build_query_prompt
from advfc.scenario import CATALOG


def record(rid="s1", query="Set a timer for 30 minutes.", tool="set_timer", args=None, extra=("get_weather",),
           complexity="single", language="en"):
    args = {"duration_minutes": 30} if args is None else args
    tools = (CATALOG[tool],) + tuple(CATALOG[t] for t in extra)
    return SeedRecord(rid, query, tools, Calls((CanonicalCall(tool, args),)), complexity, language)


@pytest.fixture
def timer_seed():
    return record()


@pytest.fixture
def weather_seed():
    return record("w1", "What's the weather in Paris in celsius?", "get_weather",
                  {"city": "Paris", "unit": "celsius"}, extra=("set_timer",))


@pytest.fixture
def irrelevant_seed():
    return SeedRecord("i1", "Tell me a joke about penguins.", (CATALOG["get_weather"],), REFUSAL, "irrelevant")


@pytest.fixture
def timer_prompt(timer_seed):
    return build_query_prompt(timer_seed)


@pytest.fixture
def weather_prompt(weather_seed):
    return build_query_prompt(weather_seed)


def softmax_expectation_gradient(params, prompt, reward_fn):
    """Closed form for a one-step softmax policy: dE/dz_j = p_j (r_j - E), shared by both logit rows."""
    import numpy as np

    from advfc.operators import OPERATOR_NAMES
    from advfc.rewriter import N_CONTEXT, N_PARAMS, action_distribution, context_bucket, prefix_state

    p = action_distribution(params, prompt)
    r = np.array([reward_fn((a,)) for a in OPERATOR_NAMES])
    gz = p * (r - p @ r) / params.temperature
    g = np.zeros(N_PARAMS)
    g.reshape(-1, 9)[context_bucket(prompt)] += gz
    g.reshape(-1, 9)[N_CONTEXT + prefix_state(())] += gz
    return g


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
