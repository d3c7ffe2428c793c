"""Attacker policy: an autoregressive softmax policy over rewrite operators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import QueryPrompt
from .operators import BY_NAME, EXTERNAL, OPERATOR_INDEX, OPERATOR_NAMES
from .remote import Endpoint, MalformedPayload, chat_completion

N_OPS = len(OPERATOR_NAMES)
N_CONTEXT = 18
N_PREFIX = N_OPS + 1  # start state plus "last action was op i"
N_PARAMS = (N_CONTEXT + N_PREFIX) * N_OPS


def context_bucket(prompt: QueryPrompt) -> int:
    """Map (complexity group, language group, tool-count bucket) to 0..17."""
    cgroup = {"single": 0, "parallel": 1, "multiple": 1, "irrelevant": 2}[prompt.complexity]
    lgroup = 0 if prompt.language == "en" else 1
    n = prompt.tool_count
    tgroup = 0 if n <= 1 else 1 if n <= 3 else 2
    return (cgroup * 2 + lgroup) * 3 + tgroup


def prefix_state(prefix) -> int:
    return 0 if not prefix else 1 + OPERATOR_INDEX[prefix[-1]]


@dataclass
class PolicyParams:
    """Flat logit vector: 18 context rows then 10 prefix rows, 9 operators each."""

    theta: np.ndarray
    temperature: float = 1.0
    seq_len: int = 2

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(N_PARAMS)
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("policy logits must be finite")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.seq_len < 1:
            raise ValueError("sequence length must be at least 1")

    @classmethod
    def zeros(cls, temperature: float = 1.0, seq_len: int = 2) -> "PolicyParams":
        return cls(np.zeros(N_PARAMS), temperature, seq_len)

    @property
    def context_logits(self) -> np.ndarray:
        return self.theta[: N_CONTEXT * N_OPS].reshape(N_CONTEXT, N_OPS)

    @property
    def prefix_logits(self) -> np.ndarray:
        return self.theta[N_CONTEXT * N_OPS:].reshape(N_PREFIX, N_OPS)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.theta.copy(), self.temperature, self.seq_len)

    def to_json(self) -> dict:
        return {"theta": self.theta.tolist(), "temperature": self.temperature, "seq_len": self.seq_len}

    @classmethod
    def from_json(cls, obj: dict) -> "PolicyParams":
        return cls(np.array(obj["theta"], dtype=float), obj["temperature"], obj["seq_len"])


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum())


def _step_logits(params: PolicyParams, bucket: int, state: int) -> np.ndarray:
    z = (params.context_logits[bucket] + params.prefix_logits[state]) / params.temperature
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    return z


def action_distribution(params: PolicyParams, prompt: QueryPrompt, prefix=()) -> np.ndarray:
    if len(prefix) >= params.seq_len:
        raise ValueError(f"prefix of length {len(prefix)} reaches the maximum sequence length {params.seq_len}")
    z = _step_logits(params, context_bucket(prompt), prefix_state(prefix))
    return np.exp(_log_softmax(z))


def logprob_of(params: PolicyParams, prompt: QueryPrompt, actions) -> float:
    for a in actions:
        if a not in OPERATOR_INDEX:
            raise KeyError(f"unknown action {a!r}")
    if len(actions) > params.seq_len:
        raise ValueError("action sequence longer than the policy's sequence length")
    bucket = context_bucket(prompt)
    total = 0.0
    for t, a in enumerate(actions):
        lp = _log_softmax(_step_logits(params, bucket, prefix_state(actions[:t])))
        total += float(lp[OPERATOR_INDEX[a]])
    return total


def grad_logprob(params: PolicyParams, prompt: QueryPrompt, actions) -> np.ndarray:
    """Gradient of ``logprob_of`` with respect to ``params.theta``."""
    grad = np.zeros(N_PARAMS)
    ctx = grad[: N_CONTEXT * N_OPS].reshape(N_CONTEXT, N_OPS)
    pre = grad[N_CONTEXT * N_OPS:].reshape(N_PREFIX, N_OPS)
    bucket = context_bucket(prompt)
    for t, a in enumerate(actions):
        state = prefix_state(actions[:t])
        p = np.exp(_log_softmax(_step_logits(params, bucket, state)))
        g = -p
        g[OPERATOR_INDEX[a]] += 1.0
        g /= params.temperature
        ctx[bucket] += g
        pre[state] += g
    return grad


def entropy(params: PolicyParams, prompt: QueryPrompt) -> float:
    """Entropy of the first-step action distribution for this prompt."""
    p = action_distribution(params, prompt)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass(frozen=True)
class RewrittenQuery:
    seed_id: str
    text: str
    actions: tuple[str, ...]
    logprob: float | None
    rng_seed: int

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise ValueError("a rewrite needs at least one action")
        if self.logprob is not None and self.logprob > 0:
            raise ValueError("log-probability must be <= 0")

    @property
    def id(self) -> str:
        return f"{self.seed_id}#{self.rng_seed}"

    def to_json(self) -> dict:
        return {
            "seed_id": self.seed_id, "text": self.text, "actions": list(self.actions),
            "logprob": self.logprob, "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RewrittenQuery":
        return cls(obj["seed_id"], obj["text"], tuple(obj["actions"]), obj["logprob"], obj["rng_seed"])


def apply_actions(prompt: QueryPrompt, actions) -> str:
    text = prompt.query
    for a in actions:
        text = BY_NAME[a].apply(text, prompt)
    return text


def sample_rewrite(params: PolicyParams, prompt: QueryPrompt, rng_seed: int) -> RewrittenQuery:
    rng = np.random.default_rng(rng_seed)
    bucket = context_bucket(prompt)
    actions: list[str] = []
    total = 0.0
    for _ in range(params.seq_len):
        lp = _log_softmax(_step_logits(params, bucket, prefix_state(actions)))
        cdf = np.cumsum(np.exp(lp))
        i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), N_OPS - 1)
        actions.append(OPERATOR_NAMES[i])
        total += float(lp[i])
    return RewrittenQuery(prompt.seed_id, apply_actions(prompt, actions), tuple(actions), total, rng_seed)


def external_rewriter_adapter(endpoint: Endpoint, prompt: QueryPrompt, rng_seed: int = 0) -> RewrittenQuery:
    """Ask a remote chat model for a rewrite; the result carries no log-probability."""
    messages = [
        {"role": "system", "content": prompt.directives},
        {"role": "user", "content": prompt.rendered_context},
    ]
    message = chat_completion(endpoint, messages)
    text = message.get("content")
    if not isinstance(text, str) or not text.strip():
        raise MalformedPayload("remote rewrite is empty", url=endpoint.url, attempts=1)
    return RewrittenQuery(prompt.seed_id, text.strip(), (EXTERNAL,), None, rng_seed)
