"""Policy optimization: SFT loss, score-function gradients, clipped variant, early stop."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import QueryPrompt
from .operators import OPERATOR_NAMES
from .rewriter import PolicyParams, RewrittenQuery, entropy, grad_logprob, logprob_of

DEFAULT_WINDOW = 10
DEFAULT_EPSILON = 0.2
DEFAULT_LEARNING_RATE = 0.1


@dataclass(frozen=True)
class RolloutEntry:
    prompt: QueryPrompt
    rewritten: RewrittenQuery
    reward: float
    bonus: float = 0.0

    @property
    def shaped_reward(self) -> float:
        return self.reward + self.bonus


@dataclass
class RolloutBatch:
    entries: list

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a rollout batch needs at least one entry")

    @property
    def batch_size(self) -> int:
        return len(self.entries)

    def shaped_rewards(self) -> np.ndarray:
        return np.array([e.shaped_reward for e in self.entries], dtype=float)


@dataclass
class RewardHistory:
    per_timestep_mean: list = field(default_factory=list)
    window: int = DEFAULT_WINDOW
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be at least 2")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def append(self, mean: float) -> None:
        self.per_timestep_mean.append(float(mean))

    def to_json(self) -> dict:
        return {"per_timestep_mean": list(self.per_timestep_mean), "window": self.window, "epsilon": self.epsilon}

    @classmethod
    def from_json(cls, obj: dict) -> "RewardHistory":
        return cls(list(obj["per_timestep_mean"]), obj["window"], obj["epsilon"])


@dataclass(frozen=True)
class TrainStepReport:
    objective_estimate: float
    gradient_norm: float
    entropy: float
    updated: bool


def sft_loss(params: PolicyParams, dataset: Sequence[tuple[QueryPrompt, Sequence[str]]]) -> float:
    """Mean negative log-likelihood of the target action sequences."""
    if not dataset:
        raise ValueError("SFT loss over an empty dataset")
    return float(np.mean([-logprob_of(params, prompt, tuple(actions)) for prompt, actions in dataset]))


def estimate_objective(batch: RolloutBatch) -> float:
    return float(batch.shaped_rewards().mean())


def _advantages(batch: RolloutBatch, baseline: str) -> np.ndarray:
    rewards = batch.shaped_rewards()
    if baseline == "none":
        return rewards
    if baseline == "batch_mean":
        return rewards - rewards.mean()
    raise ValueError(f"unknown baseline {baseline!r}")


def score_function_gradient(params: PolicyParams, batch: RolloutBatch, baseline: str = "batch_mean") -> np.ndarray:
    """Monte-Carlo estimate of the gradient of the expected shaped reward."""
    adv = _advantages(batch, baseline)
    grad = np.zeros_like(params.theta)
    for a, e in zip(adv, batch.entries):
        if e.rewritten.logprob is None:
            raise ValueError(f"rollout {e.rewritten.id} has no log-probability; external rewrites are not trainable")
        if a != 0.0:
            grad += a * grad_logprob(params, e.prompt, e.rewritten.actions)
    return grad / batch.batch_size


def _clipped_gradient(params: PolicyParams, entries, adv, clip: float) -> np.ndarray:
    grad = np.zeros_like(params.theta)
    for a, e in zip(adv, entries):
        ratio = np.exp(logprob_of(params, e.prompt, e.rewritten.actions) - e.rewritten.logprob)
        # The min() in the surrogate has zero gradient once the ratio leaves the trust band
        # in the direction the advantage pushes it.
        if (a > 0 and ratio > 1.0 + clip) or (a < 0 and ratio < 1.0 - clip):
            continue
        grad += a * ratio * grad_logprob(params, e.prompt, e.rewritten.actions)
    return grad / len(entries)


def _mean_entropy(params: PolicyParams, batch: RolloutBatch) -> float:
    return float(np.mean([entropy(params, e.prompt) for e in batch.entries]))


def policy_gradient_step(
    params: PolicyParams,
    batch: RolloutBatch,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    baseline: str = "batch_mean",
    method: str = "reinforce",
    clip: float = 0.2,
    minibatches: int = 4,
) -> tuple[PolicyParams, TrainStepReport]:
    """One ascent step on the batch.

    ``method="clipped"`` runs a single epoch of clipped-surrogate updates over
    ``minibatches`` contiguous slices instead of one plain score-function step.
    """
    objective = estimate_objective(batch)
    ent = _mean_entropy(params, batch)
    if method == "reinforce":
        grad = score_function_gradient(params, batch, baseline)
        new = PolicyParams(params.theta + learning_rate * grad, params.temperature, params.seq_len)
        norm = float(np.linalg.norm(grad))
    elif method == "clipped":
        for e in batch.entries:
            if e.rewritten.logprob is None:
                raise ValueError(f"rollout {e.rewritten.id} has no log-probability")
        adv = _advantages(batch, baseline)
        new = params.copy()
        norm_sq = 0.0
        for idx in np.array_split(np.arange(batch.batch_size), max(1, min(minibatches, batch.batch_size))):
            g = _clipped_gradient(new, [batch.entries[i] for i in idx], adv[idx], clip)
            norm_sq += float(g @ g)
            new = PolicyParams(new.theta + learning_rate * g, new.temperature, new.seq_len)
        norm = float(np.sqrt(norm_sq))
    else:
        raise ValueError(f"unknown method {method!r}")
    updated = bool(norm > 0 and learning_rate != 0)
    return new, TrainStepReport(objective, norm, ent, updated)


def enumerate_action_sequences(length: int):
    return itertools.product(OPERATOR_NAMES, repeat=length)


def expected_reward(params: PolicyParams, prompt: QueryPrompt, reward_fn: Callable[[tuple], float]) -> float:
    """Exact expectation over every action sequence of the policy's length."""
    total = 0.0
    for seq in enumerate_action_sequences(params.seq_len):
        total += np.exp(logprob_of(params, prompt, seq)) * reward_fn(seq)
    return float(total)


def expected_reward_gradient(params: PolicyParams, prompt: QueryPrompt, reward_fn: Callable[[tuple], float]) -> np.ndarray:
    """Exhaustive score-function gradient: sum of p(a) r(a) grad log p(a)."""
    grad = np.zeros_like(params.theta)
    for seq in enumerate_action_sequences(params.seq_len):
        p = np.exp(logprob_of(params, prompt, seq))
        grad += p * reward_fn(seq) * grad_logprob(params, prompt, seq)
    return grad


def finite_difference_check(
    params: PolicyParams,
    objective: Callable[[PolicyParams], float],
    gradient: Callable[[PolicyParams], np.ndarray],
    epsilon_fd: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Max coordinate-wise relative error between ``gradient`` and central differences.

    The denominator is ``max(|analytic|, |numeric|, floor)`` so coordinates
    where both are essentially zero do not blow up the ratio.
    """
    analytic = np.asarray(gradient(params), dtype=float)
    worst = 0.0
    for i in range(params.theta.size):
        up = params.theta.copy()
        down = params.theta.copy()
        up[i] += epsilon_fd
        down[i] -= epsilon_fd
        num = (objective(PolicyParams(up, params.temperature, params.seq_len))
               - objective(PolicyParams(down, params.temperature, params.seq_len))) / (2 * epsilon_fd)
        denom = max(abs(analytic[i]), abs(num), floor)
        worst = max(worst, abs(analytic[i] - num) / denom)
    return worst


def should_stop(history: RewardHistory) -> bool:
    """True once the last ``window`` consecutive changes in mean reward are all below epsilon."""
    means = history.per_timestep_mean
    if len(means) < history.window + 1:
        return False
    recent = means[-(history.window + 1):]
    return all(abs(b - a) < history.epsilon for a, b in zip(recent, recent[1:]))
