import itertools
import math
from collections import Counter

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advfc.corpus import build_query_prompt
from advfc.operators import EXTERNAL, OPERATOR_INDEX, OPERATOR_NAMES
from advfc.remote import Endpoint, MalformedPayload, TransportFailure
from advfc.rewriter import (
    N_CONTEXT,
    N_OPS,
    N_PARAMS,
    PolicyParams,
    RewrittenQuery,
    action_distribution,
    context_bucket,
    entropy,
    external_rewriter_adapter,
    grad_logprob,
    logprob_of,
    sample_rewrite,
)

from conftest import record


def forced(op, bucket, value=1e6, seq_len=1):
    p = PolicyParams.zeros(seq_len=seq_len)
    p.context_logits[bucket, OPERATOR_INDEX[op]] = value
    return p


def test_uniform(timer_prompt):
    np.testing.assert_allclose(action_distribution(PolicyParams.zeros(), timer_prompt), np.full(9, 1 / 9))
    assert entropy(PolicyParams.zeros(), timer_prompt) == pytest.approx(math.log(9))


def test_softmax_hand_value(timer_prompt):
    p = PolicyParams.zeros()
    p.context_logits[context_bucket(timer_prompt), 0] = 1.0
    dist = action_distribution(p, timer_prompt)
    assert dist[0] == pytest.approx(math.e / (math.e + 8), abs=1e-15)


def test_temperature_scales_logits(timer_prompt):
    p = PolicyParams.zeros(temperature=2.0)
    p.context_logits[context_bucket(timer_prompt), 0] = 2.0
    assert action_distribution(p, timer_prompt)[0] == pytest.approx(math.e / (math.e + 8))


def test_large_logit(timer_prompt):
    p = forced("UnitShift", context_bucket(timer_prompt))
    assert action_distribution(p, timer_prompt)[OPERATOR_INDEX["UnitShift"]] >= 1 - 1e-6


def test_forced_paraphrase(timer_prompt):
    rw = sample_rewrite(forced("ParaphraseLight", context_bucket(timer_prompt)), timer_prompt, 3)
    assert rw.actions == ("ParaphraseLight",)
    assert rw.text != timer_prompt.query


def test_uniform_logprobs(timer_prompt):
    assert logprob_of(PolicyParams.zeros(seq_len=1), timer_prompt, ("UnitShift",)) == pytest.approx(-2.1972, abs=1e-4)
    assert logprob_of(PolicyParams.zeros(), timer_prompt, ("UnitShift", "ImplicitParam")) == pytest.approx(2 * math.log(1 / 9))
    rw = sample_rewrite(PolicyParams.zeros(seq_len=1), timer_prompt, 0)
    assert rw.logprob == pytest.approx(math.log(1 / 9))


def test_sampling_deterministic(timer_prompt):
    params = PolicyParams(np.random.default_rng(1).normal(size=N_PARAMS))
    assert sample_rewrite(params, timer_prompt, 42) == sample_rewrite(params, timer_prompt, 42)


def test_sample_logprob_matches_logprob_of(timer_prompt):
    params = PolicyParams(np.random.default_rng(2).normal(size=N_PARAMS), temperature=0.7, seq_len=3)
    for s in range(50):
        rw = sample_rewrite(params, timer_prompt, s)
        assert rw.logprob == pytest.approx(logprob_of(params, timer_prompt, rw.actions), abs=1e-12)


def _frequency_z(params, prompt, n):
    counts = Counter(sample_rewrite(params, prompt, s).actions for s in range(n))
    seqs = list(itertools.product(OPERATOR_NAMES, repeat=params.seq_len))
    p = np.array([math.exp(logprob_of(params, prompt, q)) for q in seqs])
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    freq = np.array([counts[q] for q in seqs]) / n
    return (freq - p) / np.sqrt(p * (1 - p) / n)


def test_frequency_matches_exp_logprob(timer_prompt):
    """100k samples of a one-step policy: each operator within 3 standard errors."""
    params = PolicyParams(np.random.default_rng(4).normal(size=N_PARAMS), seq_len=1)
    assert np.abs(_frequency_z(params, timer_prompt, 100_000)).max() <= 3


def test_frequency_two_step_joint(timer_prompt):
    # 81 cells: a 4 standard-error bound keeps the family-wise false alarm rate near 0.5%.
    params = PolicyParams(np.random.default_rng(4).normal(size=N_PARAMS))
    assert np.abs(_frequency_z(params, timer_prompt, 100_000)).max() <= 4


def test_context_buckets_distinct():
    seen = set()
    for complexity in ("single", "parallel", "irrelevant"):
        for language in ("en", "zh"):
            for n in (1, 2, 5):
                p = build_query_prompt(record(complexity="single", language=language,
                                              extra=("get_weather", "play_music", "send_message", "book_restaurant")[: n - 1]))
                p = p.__class__(**{**p.__dict__, "complexity": complexity})
                seen.add(context_bucket(p))
    assert seen == set(range(N_CONTEXT))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=N_OPS, max_size=N_OPS), st.sampled_from(OPERATOR_NAMES),
       st.sampled_from(OPERATOR_NAMES))
def test_grad_logprob_fd(row, a, b):
    prompt = build_query_prompt(record())
    theta = np.zeros(N_PARAMS)
    theta[: N_OPS] = row
    theta[N_CONTEXT * N_OPS:] = np.linspace(-1, 1, N_PARAMS - N_CONTEXT * N_OPS)
    params = PolicyParams(theta)
    g = grad_logprob(params, prompt, (a, b))
    h = 1e-6
    for i in np.flatnonzero(g):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        num = (logprob_of(PolicyParams(up), prompt, (a, b)) - logprob_of(PolicyParams(dn), prompt, (a, b))) / (2 * h)
        assert g[i] == pytest.approx(num, abs=1e-6)


def test_params_round_trip():
    p = PolicyParams(np.arange(N_PARAMS) / 7.0, 0.5, 3)
    q = PolicyParams.from_json(p.to_json())
    assert np.array_equal(p.theta, q.theta) and (q.temperature, q.seq_len) == (0.5, 3)


def test_rewritten_query_invariants():
    with pytest.raises(ValueError):
        RewrittenQuery("s", "t", (), None, 0)
    with pytest.raises(ValueError):
        RewrittenQuery("s", "t", ("UnitShift",), 0.5, 0)


def _chat_transport(content):
    def handler(request):
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})
    return httpx.MockTransport(handler)


def test_external_echo(timer_prompt):
    ep = Endpoint("http://stub", transport=_chat_transport("Start a half-hour countdown."))
    rw = external_rewriter_adapter(ep, timer_prompt, 9)
    assert rw.text == "Start a half-hour countdown."
    assert rw.actions == (EXTERNAL,) and rw.logprob is None


def test_external_empty(timer_prompt):
    ep = Endpoint("http://stub", transport=_chat_transport(""))
    with pytest.raises(MalformedPayload):
        external_rewriter_adapter(ep, timer_prompt)


def test_external_unreachable(timer_prompt):
    ep = Endpoint("http://127.0.0.1:9", retries=2, backoff=0, timeout=2)
    with pytest.raises(TransportFailure) as ei:
        external_rewriter_adapter(ep, timer_prompt)
    assert ei.value.attempts == 3
