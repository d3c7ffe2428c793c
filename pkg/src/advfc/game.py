"""Zero-sum reward coupling between attacker and defender."""
from __future__ import annotations

from dataclasses import dataclass

from .arbiter import JudgeVerdict
from .callspec import CanonicalAnswer, answer_from_json, answers_equal
from .rewriter import RewrittenQuery


@dataclass(frozen=True)
class AttackOutcome:
    rewritten_id: str
    verdict: JudgeVerdict
    defender_answer: CanonicalAnswer
    r_adv: int


@dataclass(frozen=True)
class DefenseOutcome:
    rewritten_id: str
    answer: CanonicalAnswer
    r_f: int


def adversarial_reward(verdict: JudgeVerdict, y: CanonicalAnswer, y_hat: CanonicalAnswer, rewritten_id: str = "") -> AttackOutcome:
    """+1 only for a judge-valid rewrite that the defender got wrong."""
    r_adv = 1 if verdict.r_judge == 1 and not answers_equal(y, y_hat) else -1
    return AttackOutcome(rewritten_id, verdict, y, r_adv)


def defense_reward(y: CanonicalAnswer, y_hat: CanonicalAnswer, rewritten_id: str = "") -> DefenseOutcome:
    return DefenseOutcome(rewritten_id, y, 1 if answers_equal(y, y_hat) else -1)


def is_bad_case(outcome: AttackOutcome) -> bool:
    return outcome.r_adv == 1


@dataclass(frozen=True)
class BadCase:
    """A judge-valid rewrite the defender failed on, paired with the ground truth."""

    rewritten: RewrittenQuery
    ground_truth: CanonicalAnswer
    round: int
    timestep: int
    trial: int

    def key(self) -> tuple[str, str]:
        return (self.rewritten.seed_id, self.rewritten.text)

    def to_json(self) -> dict:
        return {
            "rewritten_query": self.rewritten.text,
            "seed_id": self.rewritten.seed_id,
            "actions": list(self.rewritten.actions),
            "ground_truth": self.ground_truth.to_json(),
            "round": self.round,
            "timestep": self.timestep,
            "rng_seed": self.rewritten.rng_seed,
            "logprob": self.rewritten.logprob,
            "trial": self.trial,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BadCase":
        rewritten = RewrittenQuery(
            obj["seed_id"], obj["rewritten_query"], tuple(obj["actions"]),
            obj.get("logprob"), obj.get("rng_seed", 0),
        )
        return cls(rewritten, answer_from_json(obj["ground_truth"]), obj["round"], obj["timestep"], obj.get("trial", 0))
