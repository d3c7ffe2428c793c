"""Alternating attacker/defender training, bad-case collection and evaluation."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import arbiter
from .callspec import Calls, Refusal, answers_equal
from .config import RunConfig, embed_dim
from .corpus import QueryPrompt, SeedRecord, compose_round_dataset, record_from_json
from .defender import (
    Defender,
    SimulatedDefender,
    WeaknessProfile,
    build_defender,
    rl_update,
    sft_update,
)
from .diversity import RemoteEmbedder, batch_diversity, embed_batch, per_sample_diversity_bonuses
from .game import BadCase, adversarial_reward, defense_reward, is_bad_case
from .operators import OPERATOR_NAMES, ORIGINAL
from .optim import RewardHistory, RolloutBatch, RolloutEntry, policy_gradient_step, should_stop
from .remote import BackendError
from .rewriter import PolicyParams, RewrittenQuery, action_distribution, external_rewriter_adapter, sample_rewrite

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# Stream tags for derived RNG seeds.
_PROMPTS, _REWRITE, _TRIAL, _MIX, _FROZEN, _FROZEN_TRIAL, _DEF_TRIAL = range(1, 8)


class PhaseError(RuntimeError):
    """A phase aborted; ``checkpoint`` (if set) resumes at ``round``/``phase``/``timestep``."""

    def __init__(self, message: str, round: int, phase: str, timestep: int, checkpoint: Path | None):
        where = f"round {round}, {phase} phase, timestep {timestep}"
        super().__init__(f"{message} ({where}; resume from {checkpoint})" if checkpoint else f"{message} ({where})")
        self.round = round
        self.phase = phase
        self.timestep = timestep
        self.checkpoint = checkpoint


@dataclass
class RoundDatasets:
    attacker_train: list = field(default_factory=list)
    bad_cases: list = field(default_factory=list)
    _keys: set = field(default_factory=set, repr=False)

    def add(self, case: BadCase, dedup: bool) -> bool:
        """Add a bad case; returns False when dropped as a duplicate."""
        if dedup and case.key() in self._keys:
            return False
        self._keys.add(case.key())
        self.bad_cases.append(case)
        return True


@dataclass
class LoopState:
    round: int
    timestep: int
    attacker_params: PolicyParams
    defender: Defender
    reward_history: RewardHistory
    collected: RoundDatasets
    phase: str = "attacker"  # attacker | defender | done
    stats: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)


def _new_stats() -> dict:
    return {
        "rewrites": 0, "judge_pass": 0, "stage1_fail": 0, "stage2_fail": 0, "attack_success": 0,
        "bad_case_hits": 0, "dedup_removed": 0, "diversity_distance_sum": 0.0, "diversity_bonus_sum": 0.0,
        "timesteps_run": 0, "stop_timestep": None, "entropy": None,
    }


def _ratio(num, den):
    return num / den if den else None


@dataclass
class EvalRecord:
    record: SeedRecord
    category: str
    actions: tuple = (ORIGINAL,)


EVAL_CATEGORIES = ("non_live", "live", "relevance", "irrelevance")


def evaluate(defender: Defender, eval_set: Sequence[EvalRecord | SeedRecord]) -> dict:
    """Category accuracies in the style of function-calling leaderboards.

    Call categories score AST equality, ``relevance`` scores whether any call
    was made, ``irrelevance`` whether the model refused. Empty categories are
    reported as ``None``; ``overall`` pools every record.
    """
    hits = Counter()
    counts = Counter()
    for i, item in enumerate(eval_set):
        if isinstance(item, SeedRecord):
            item = EvalRecord(item, "irrelevance" if item.complexity == "irrelevant" else "non_live")
        if item.category not in EVAL_CATEGORIES:
            raise ValueError(f"unknown eval category {item.category!r}")
        rec = item.record
        rq = RewrittenQuery(rec.id, rec.query, item.actions, None, 0)
        y = defender.respond(rq, rec, i)
        if item.category == "relevance":
            ok = isinstance(y, Calls)
        elif item.category == "irrelevance":
            ok = isinstance(y, Refusal)
        else:
            ok = answers_equal(y, rec.answer)
        counts[item.category] += 1
        hits[item.category] += int(ok)
    metrics = {c: _ratio(hits[c], counts[c]) for c in EVAL_CATEGORIES}
    metrics["overall"] = _ratio(sum(hits.values()), sum(counts.values()))
    metrics["counts"] = {c: counts[c] for c in EVAL_CATEGORIES}
    return metrics


def load_eval_set(path: str | Path) -> list[EvalRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            category = obj.pop("category", None)
            if category is None:
                raise ValueError(f"line {lineno}: missing category tag")
            if category not in EVAL_CATEGORIES:
                raise ValueError(f"line {lineno}: unknown category {category!r}")
            actions = tuple(obj.pop("actions", (ORIGINAL,))) or (ORIGINAL,)
            out.append(EvalRecord(record_from_json(obj), category, actions))
    return out


class Arena:
    """Owns one run: config, seeds, backends and the output directory."""

    def __init__(
        self,
        config: RunConfig,
        seeds: Sequence[SeedRecord],
        out_dir: str | Path | None = None,
        judge: arbiter.Judge | None = None,
        defender: Defender | None = None,
        embedder: Callable | None = None,
    ):
        self.cfg = config
        self.seeds = list(seeds)
        self.by_id = {s.id: s for s in self.seeds}
        self.out_dir = Path(out_dir) if out_dir else None
        self.judge = judge or self._build_judge()
        self._defender_override = defender
        self.embedder = embedder or self._build_embedder()
        attacker = config.backend("attacker")
        self.attacker_endpoint = attacker.endpoint if attacker.kind == "external" else None

    def _build_judge(self) -> arbiter.Judge:
        b = self.cfg.backend("judge")
        if b.kind == "external":
            return arbiter.ExternalJudge(b.endpoint, b.options.get("template_path"))
        patterns = b.options.get("patterns")
        return arbiter.SimulatedJudge(patterns) if patterns else arbiter.SimulatedJudge()

    def _build_embedder(self) -> Callable:
        b = self.cfg.backend("embedder")
        if b.kind == "external":
            return RemoteEmbedder(b.endpoint)
        dim = embed_dim(self.cfg)
        return lambda texts: embed_batch(texts, dim)

    def initial_defender(self) -> Defender:
        if self._defender_override is not None:
            return self._defender_override
        b = self.cfg.backend("defender")
        profile = None
        if b.kind == "simulated":
            profile = WeaknessProfile(
                dict(b.options.get("failure_prob", {})), b.options.get("base_failure", 0.0),
                self.cfg.rng_seed, b.options.get("composition", "product"),
            )
        return build_defender(b.kind, profile, b.endpoint)

    def initial_state(self) -> LoopState:
        opts = self.cfg.backend("attacker").options
        params = PolicyParams.zeros(opts.get("temperature", 1.0), opts.get("seq_len", 2))
        return LoopState(0, 0, params, self.initial_defender(), self._history(), RoundDatasets(), "attacker", _new_stats())

    def _history(self) -> RewardHistory:
        return RewardHistory([], self.cfg.window, self.cfg.epsilon)

    def _seed(self, *parts: int) -> int:
        return int(np.random.SeedSequence([self.cfg.rng_seed, *parts]).generate_state(1)[0])

    # -- persistence -------------------------------------------------------

    def _round_dir(self, k: int) -> Path | None:
        if self.out_dir is None:
            return None
        d = self.out_dir / f"round_{k}"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _append_log(self, row: dict) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / "train_log.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    def save_checkpoint(self, state: LoopState) -> Path | None:
        if self.out_dir is None:
            return None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        profile = state.defender.profile.to_json() if isinstance(state.defender, SimulatedDefender) else None
        body = {
            "version": CHECKPOINT_VERSION,
            "round": state.round,
            "timestep": state.timestep,
            "phase": state.phase,
            "attacker_params": state.attacker_params.to_json(),
            "weakness_profile": profile,
            "reward_history": state.reward_history.to_json(),
            "bad_cases": [c.to_json() for c in state.collected.bad_cases],
            "stats": state.stats,
            "reports": state.reports,
        }
        path = self.out_dir / "checkpoint.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(body, sort_keys=True), encoding="utf-8")
        tmp.replace(path)
        return path

    def load_checkpoint(self, path: str | Path) -> LoopState:
        body = json.loads(Path(path).read_text(encoding="utf-8"))
        if body.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {body.get('version')!r}")
        defender = self.initial_defender()
        if body["weakness_profile"] is not None:
            defender = SimulatedDefender(WeaknessProfile.from_json(body["weakness_profile"]))
        collected = RoundDatasets()
        for c in body["bad_cases"]:
            collected.add(BadCase.from_json(c), dedup=False)
        state = LoopState(
            body["round"], body["timestep"], PolicyParams.from_json(body["attacker_params"]), defender,
            RewardHistory.from_json(body["reward_history"]), collected, body["phase"], body["stats"], body["reports"],
        )
        if state.round < self.cfg.rounds and state.phase != "done":
            state.collected.attacker_train = self.compose(state.round)
        return state

    # -- phases ------------------------------------------------------------

    def compose(self, k: int) -> list[QueryPrompt]:
        return compose_round_dataset(self.seeds, self.cfg.curriculum, k, self.cfg.rng_seed, self.cfg.directives)

    def _rewrite(self, params: PolicyParams, prompt: QueryPrompt, rng_seed: int) -> RewrittenQuery:
        if self.attacker_endpoint is not None:
            return external_rewriter_adapter(self.attacker_endpoint, prompt, rng_seed)
        return sample_rewrite(params, prompt, rng_seed)

    def attacker_phase(self, state: LoopState) -> tuple[LoopState, list[BadCase]]:
        cfg = self.cfg
        k = state.round
        train = state.collected.attacker_train
        if not train:
            raise ValueError(f"round {k}: attacker training set is empty")
        stats = state.stats
        added: list[BadCase] = []
        B = cfg.batch_size
        tau = state.timestep
        while tau < cfg.max_timesteps:
            try:
                rng = np.random.default_rng(self._seed(_PROMPTS, k, tau))
                prompts = [train[i] for i in rng.integers(0, len(train), size=B)]
                rewrites = [self._rewrite(state.attacker_params, p, self._seed(_REWRITE, k, tau, i))
                            for i, p in enumerate(prompts)]
                seeds = [self.by_id[p.seed_id] for p in prompts]
                verdicts = [arbiter.judge(rw, s, self.judge) for rw, s in zip(rewrites, seeds)]
                trials = [self._seed(_TRIAL, k, tau, i) for i in range(B)]
                answers = [state.defender.respond(rw, s, t) for rw, s, t in zip(rewrites, seeds, trials)]
                embeddings = self.embedder([rw.text for rw in rewrites])
            except (BackendError, arbiter.JudgeError) as exc:
                state.timestep = tau
                ckpt = self.save_checkpoint(state)
                raise PhaseError(str(exc), k, "attacker", tau, ckpt) from exc

            outcomes = [adversarial_reward(v, y, s.answer, rw.id)
                        for v, y, s, rw in zip(verdicts, answers, seeds, rewrites)]
            for rw, s, out, t in zip(rewrites, seeds, outcomes, trials):
                stats["rewrites"] += 1
                stats["judge_pass"] += out.verdict.r_judge == 1
                stats["stage1_fail"] += not out.verdict.stage1_pass
                stats["stage2_fail"] += out.verdict.stage1_pass and not out.verdict.stage2_valid
                if is_bad_case(out):
                    stats["attack_success"] += 1
                    stats["bad_case_hits"] += 1
                    case = BadCase(rw, s.answer, k, tau, t)
                    if state.collected.add(case, cfg.dedup):
                        added.append(case)
                    else:
                        stats["dedup_removed"] += 1

            bonuses = per_sample_diversity_bonuses(embeddings, cfg.alpha)
            div = batch_diversity(embeddings, cfg.alpha)
            stats["diversity_distance_sum"] += float(div.mean_pairwise_distance)
            stats["diversity_bonus_sum"] += float(div.bonus)
            batch = RolloutBatch([
                RolloutEntry(p, rw, float(out.r_adv), float(b))
                for p, rw, out, b in zip(prompts, rewrites, outcomes, bonuses)
            ])
            raw_mean = float(np.mean([o.r_adv for o in outcomes]))
            if self.attacker_endpoint is None:
                state.attacker_params, rep = policy_gradient_step(
                    state.attacker_params, batch, cfg.learning_rate, cfg.baseline, cfg.optimizer, cfg.clip)
                shaped_mean, ent = rep.objective_estimate, rep.entropy
            else:
                shaped_mean, ent = float(batch.shaped_rewards().mean()), None
            state.reward_history.append(shaped_mean)
            stats["entropy"] = ent
            tau += 1
            state.timestep = tau
            stats["timesteps_run"] = tau
            stop = cfg.early_stop and should_stop(state.reward_history)
            self._append_log({
                "round": k, "timestep": tau - 1, "mean_reward": shaped_mean, "mean_raw_reward": raw_mean,
                "diversity_bonus": float(div.bonus), "entropy": ent, "stopped": stop,
            })
            if stop:
                stats["stop_timestep"] = tau - 1
                break
        state.phase = "defender"
        self.save_checkpoint(state)
        return state, added

    def _frozen_rewrites(self, params: PolicyParams, train: list[QueryPrompt], k: int):
        """Judge-valid rewrites drawn from a snapshot of the attacker, with fixed trial ids."""
        if self.cfg.frozen_eval_samples == 0 or self.attacker_endpoint is not None:
            return []
        rng = np.random.default_rng(self._seed(_FROZEN, k))
        out = []
        for i, j in enumerate(rng.integers(0, len(train), size=self.cfg.frozen_eval_samples)):
            prompt = train[j]
            rw = sample_rewrite(params, prompt, self._seed(_FROZEN, k, i))
            seed = self.by_id[prompt.seed_id]
            if arbiter.judge(rw, seed, self.judge).r_judge == 1:
                out.append((rw, seed, self._seed(_FROZEN_TRIAL, k, i)))
        return out

    @staticmethod
    def _failure_rate(defender: Defender, frozen) -> float | None:
        if not frozen:
            return None
        fails = sum(not answers_equal(defender.respond(rw, s, t), s.answer) for rw, s, t in frozen)
        return fails / len(frozen)

    def defender_phase(self, state: LoopState) -> LoopState:
        cfg = self.cfg
        k = state.round
        cases = [c for c in state.collected.bad_cases if cfg.accumulate or c.round == k]
        if not cases:
            log.warning("round %d: no bad cases collected, skipping the defender update", k)
            state.stats["defender_train_rewritten"] = 0
            state.stats["defender_train_seed"] = 0
        elif isinstance(state.defender, SimulatedDefender):
            items = [(c.rewritten, self.by_id[c.rewritten.seed_id]) for c in cases]
            n_seed = int(round(cfg.defender_train_mix * len(cases)))
            pool = sorted({p.seed_id for p in state.collected.attacker_train})
            rng = np.random.default_rng(self._seed(_MIX, k))
            for j in rng.integers(0, len(pool), size=n_seed) if pool else []:
                s = self.by_id[pool[j]]
                items.append((RewrittenQuery(s.id, s.query, (ORIGINAL,), None, 0), s))
            state.stats["defender_train_rewritten"] = len(cases)
            state.stats["defender_train_seed"] = n_seed
            profile = state.defender.profile
            for tau in range(cfg.defender_timesteps):
                defender = SimulatedDefender(profile)
                if cfg.defender_update == "sft":
                    profile = sft_update(profile, [rw for rw, _ in items], cfg.eta)
                    continue
                outcomes = []
                for i, (rw, s) in enumerate(items):
                    y = defender.respond(rw, s, self._seed(_DEF_TRIAL, k, tau, i))
                    outcomes.append((rw, defense_reward(y, s.answer, rw.id)))
                profile = rl_update(profile, outcomes, cfg.eta)
            state.defender = SimulatedDefender(profile)
        else:
            log.warning("round %d: %s cannot be updated in place; bad cases are exported only",
                        k, type(state.defender).__name__)
        state.phase = "done"
        return state

    # -- full loop ---------------------------------------------------------

    def _round_report(self, state: LoopState, before, after, acc_before, acc_after) -> dict:
        s = state.stats
        k = state.round
        cases = [c for c in state.collected.bad_cases if c.round == k]
        train = state.collected.attacker_train
        op_counts = Counter(a for c in cases for a in set(c.rewritten.actions))
        probe = train[0] if train and self.attacker_endpoint is None else None
        mass = (dict(zip(OPERATOR_NAMES, map(float, action_distribution(state.attacker_params, probe))))
                if probe else None)
        steps = s["timesteps_run"]
        return {
            "round": k,
            "attacker_train_size": len(train),
            "attacker_train_composition": dict(sorted(Counter(p.complexity for p in train).items())),
            "timesteps_run": steps,
            "stop_timestep": s["stop_timestep"],
            "rewrites": s["rewrites"],
            "judge_pass_rate": _ratio(s["judge_pass"], s["rewrites"]),
            "stage1_fail": s["stage1_fail"],
            "stage2_fail": s["stage2_fail"],
            "attack_success_rate": _ratio(s["attack_success"], s["judge_pass"]),
            "raw_attack_rate": _ratio(s["attack_success"], s["rewrites"]),
            "bad_case_hits": s["bad_case_hits"],
            "dedup_removed": s["dedup_removed"],
            "bad_case_count": len(cases),
            "bad_case_operator_counts": dict(sorted(op_counts.items())),
            "mean_pairwise_distance": s["diversity_distance_sum"] / steps if steps else None,
            "mean_diversity_bonus": s["diversity_bonus_sum"] / steps if steps else None,
            "final_entropy": s["entropy"],
            "first_step_policy": mass,
            "defender_train_rewritten": s.get("defender_train_rewritten", 0),
            "defender_train_seed": s.get("defender_train_seed", 0),
            "frozen_failure_before": before,
            "frozen_failure_after": after,
            "defender_accuracy_before": acc_before,
            "defender_accuracy_after": acc_after,
        }

    def _write_round(self, state: LoopState) -> None:
        d = self._round_dir(state.round)
        if d is None:
            return
        with open(d / "bad_cases.jsonl", "w", encoding="utf-8") as fh:
            for c in state.collected.bad_cases:
                if c.round == state.round:
                    fh.write(json.dumps(c.to_json(), sort_keys=True, ensure_ascii=False) + "\n")
        with open(d / "attacker_train.jsonl", "w", encoding="utf-8") as fh:
            for p in state.collected.attacker_train:
                fh.write(json.dumps({"seed_id": p.seed_id, "complexity": p.complexity}, sort_keys=True) + "\n")

    def _defender_snapshot(self, state: LoopState):
        return state.defender.profile.to_json() if isinstance(state.defender, SimulatedDefender) else None

    def run(self, resume: str | Path | None = None) -> dict:
        cfg = self.cfg
        if resume:
            state = self.load_checkpoint(resume)
            if state.phase == "done":
                state = self._next_round(state)
        else:
            if self.out_dir is not None and (self.out_dir / "train_log.jsonl").exists():
                (self.out_dir / "train_log.jsonl").unlink()
            state = self.initial_state()
            if cfg.rounds > 0:
                state.collected.attacker_train = self.compose(0)
        while state.round < cfg.rounds:
            if state.phase == "attacker":
                state, _ = self.attacker_phase(state)
            train = state.collected.attacker_train
            frozen = self._frozen_rewrites(state.attacker_params, train, state.round)
            eval_seeds = [self.by_id[sid] for sid in sorted({p.seed_id for p in train})]
            before = self._failure_rate(state.defender, frozen)
            acc_before = evaluate(state.defender, eval_seeds)["overall"] if eval_seeds else None
            try:
                state = self.defender_phase(state)
            except (BackendError, arbiter.JudgeError) as exc:
                ckpt = self.save_checkpoint(state)
                raise PhaseError(str(exc), state.round, "defender", 0, ckpt) from exc
            after = self._failure_rate(state.defender, frozen)
            acc_after = evaluate(state.defender, eval_seeds)["overall"] if eval_seeds else None
            state.reports.append(self._round_report(state, before, after, acc_before, acc_after))
            self._write_round(state)
            self.save_checkpoint(state)
            state = self._next_round(state)
        report = {
            "rounds": state.reports,
            "final_defender": self._defender_snapshot(state),
            "final_attacker_params": state.attacker_params.to_json(),
            "rng_seed": cfg.rng_seed,
        }
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
            with open(self.out_dir / "bad_cases.jsonl", "w", encoding="utf-8") as fh:
                for k in range(cfg.rounds):
                    part = self.out_dir / f"round_{k}" / "bad_cases.jsonl"
                    if part.exists():
                        fh.write(part.read_text(encoding="utf-8"))
        return report

    def _next_round(self, state: LoopState) -> LoopState:
        k = state.round + 1
        collected = state.collected if self.cfg.accumulate else RoundDatasets()
        state = LoopState(k, 0, state.attacker_params, state.defender, self._history(), collected,
                          "attacker", _new_stats(), state.reports)
        if k < self.cfg.rounds:
            state.collected.attacker_train = self.compose(k)
        return state


def run(config: RunConfig, seeds: Sequence[SeedRecord], out_dir: str | Path | None = None, **backends) -> dict:
    return Arena(config, seeds, out_dir, **backends).run()
