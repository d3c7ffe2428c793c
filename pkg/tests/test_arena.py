import json

import numpy as np
import pytest

from advfc import arbiter
from advfc.arena import Arena, EvalRecord, PhaseError, evaluate, load_eval_set
from advfc.config import RunConfig
from advfc.defender import RefusingDefender, SimulatedDefender, WeaknessProfile
from advfc.game import BadCase, adversarial_reward
from advfc.remote import TransportFailure
from advfc.rewriter import RewrittenQuery
from advfc.scenario import canonical_scenario


def small(**over):
    sc = canonical_scenario(0)
    cfg = {**sc.config, "max_timesteps": 12, "batch_size": 16, "frozen_eval_samples": 128, **over}
    return RunConfig.from_json(cfg), sc.seeds


def defender_cfg(failure_prob, base=0.0):
    return {"backends": {"defender": {"kind": "simulated", "failure_prob": failure_prob, "base_failure": base}}}


def test_zero_timesteps():
    cfg, seeds = small(max_timesteps=0)
    arena = Arena(cfg, seeds)
    state = arena.initial_state()
    state.collected.attacker_train = arena.compose(0)
    theta = state.attacker_params.theta.copy()
    state, added = arena.attacker_phase(state)
    assert added == [] and np.array_equal(state.attacker_params.theta, theta)
    assert state.stats["rewrites"] == 0


def test_degenerate_game_stops(tmp_path):
    cfg, seeds = small(max_timesteps=200, early_stop=True, **defender_cfg({}))
    arena = Arena(cfg, seeds, tmp_path)
    state = arena.initial_state()
    state.collected.attacker_train = arena.compose(0)
    state, added = arena.attacker_phase(state)
    assert added == []
    rows = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert all(r["mean_raw_reward"] == -1.0 for r in rows)
    assert state.stats["stop_timestep"] == cfg.window
    assert rows[-1]["stopped"] and len(rows) == cfg.window + 1


def test_unitshift_only_bad_cases():
    cfg, seeds = small(**defender_cfg({"UnitShift": 0.9}))
    arena = Arena(cfg, seeds)
    state = arena.initial_state()
    state.collected.attacker_train = arena.compose(0)
    _, added = arena.attacker_phase(state)
    assert added
    assert all("UnitShift" in c.rewritten.actions for c in added)


def test_at_most_b_judged_per_timestep():
    cfg, seeds = small(max_timesteps=1)
    arena = Arena(cfg, seeds)
    state = arena.initial_state()
    state.collected.attacker_train = arena.compose(0)
    state, _ = arena.attacker_phase(state)
    assert state.stats["rewrites"] <= cfg.batch_size


def _phase_state(cfg, seeds, cases_actions):
    arena = Arena(cfg, seeds)
    state = arena.initial_state()
    state.collected.attacker_train = arena.compose(0)
    for i, actions in enumerate(cases_actions):
        s = seeds[i]
        state.collected.add(BadCase(RewrittenQuery(s.id, f"rewrite {i}", actions, -1.0, i), s.answer, 0, 0, i), True)
    return arena, state


def test_defender_phase_empty(caplog):
    cfg, seeds = small()
    arena, state = _phase_state(cfg, seeds, [])
    before = state.defender.profile
    state = arena.defender_phase(state)
    assert state.defender.profile == before
    assert "no bad cases" in caplog.text


def test_defender_phase_hardens_unitshift():
    cfg, seeds = small(eta=0.1)
    arena, state = _phase_state(cfg, seeds, [("UnitShift",)] * 20)
    before = state.defender.profile.failure_prob["UnitShift"]
    state = arena.defender_phase(state)
    assert state.defender.profile.failure_prob["UnitShift"] < before
    assert state.stats["defender_train_rewritten"] == 20
    assert abs(state.stats["defender_train_seed"] - 20) <= 1


def test_defender_phase_sft():
    cfg, seeds = small(eta=0.1, defender_update="sft", defender_timesteps=1)
    arena, state = _phase_state(cfg, seeds, [("UnitShift",)] * 3)
    state = arena.defender_phase(state)
    assert state.defender.profile.failure_prob["UnitShift"] == pytest.approx(0.9 * 0.9**3)


def test_zero_rounds():
    cfg, seeds = small(rounds=0)
    report = Arena(cfg, seeds).run()
    assert report["rounds"] == []
    assert report["final_defender"]["failure_prob"]["UnitShift"] == 0.9


def test_report_consistency_and_replay(tmp_path):
    cfg, seeds = small()
    report = Arena(cfg, seeds, tmp_path).run()
    by_id = {s.id: s for s in seeds}
    initial = SimulatedDefender(WeaknessProfile(cfg.backend("defender").options["failure_prob"], 0.0, cfg.rng_seed))
    for r in report["rounds"]:
        assert r["bad_case_count"] == r["bad_case_hits"] - r["dedup_removed"]
        for key in ("judge_pass_rate", "attack_success_rate", "raw_attack_rate"):
            assert r[key] is None or 0 <= r[key] <= 1
    round0 = [BadCase.from_json(json.loads(line)) for line in (tmp_path / "round_0" / "bad_cases.jsonl").open()]
    assert len(round0) == report["rounds"][0]["bad_case_count"]
    for case in round0:
        seed = by_id[case.rewritten.seed_id]
        verdict = arbiter.judge(case.rewritten, seed)
        y = initial.respond(case.rewritten, seed, case.trial)
        assert adversarial_reward(verdict, y, case.ground_truth).r_adv == 1
    for line in (tmp_path / "round_1" / "attacker_train.jsonl").open():
        assert json.loads(line)["seed_id"] in by_id


def test_frozen_failure_non_increasing():
    cfg, seeds = small()
    for r in Arena(cfg, seeds).run()["rounds"]:
        if r["frozen_failure_before"] is not None:
            assert r["frozen_failure_after"] <= r["frozen_failure_before"]


def test_deterministic_report(tmp_path):
    cfg, seeds = small()
    Arena(cfg, seeds, tmp_path / "a").run()
    Arena(cfg, seeds, tmp_path / "b").run()
    for name in ("report.json", "bad_cases.jsonl", "train_log.jsonl", "round_1/attacker_train.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class FlakyDefender(SimulatedDefender):
    def __init__(self, profile, fail_after):
        super().__init__(profile)
        self.remaining = fail_after

    def respond(self, rewritten, seed, trial=0):
        self.remaining -= 1
        if self.remaining < 0:
            raise TransportFailure("connection reset", url="http://defender", attempts=3)
        return super().respond(rewritten, seed, trial)


def test_resume_after_backend_failure(tmp_path):
    cfg, seeds = small()
    clean = Arena(cfg, seeds, tmp_path / "clean").run()
    profile = WeaknessProfile(cfg.backend("defender").options["failure_prob"], 0.0, cfg.rng_seed)
    # The attacker phase asks the defender exactly B times per timestep.
    flaky = FlakyDefender(profile, fail_after=3 * cfg.batch_size + 5)
    with pytest.raises(PhaseError) as ei:
        Arena(cfg, seeds, tmp_path / "resumed", defender=flaky).run()
    err = ei.value
    assert (err.round, err.phase, err.timestep) == (0, "attacker", 3)
    assert err.checkpoint == tmp_path / "resumed" / "checkpoint.json"
    resumed = Arena(cfg, seeds, tmp_path / "resumed").run(resume=err.checkpoint)
    assert json.dumps(resumed, sort_keys=True) == json.dumps(clean, sort_keys=True)
    assert (tmp_path / "resumed" / "bad_cases.jsonl").read_bytes() == (tmp_path / "clean" / "bad_cases.jsonl").read_bytes()


def test_evaluate_categories(timer_seed, irrelevant_seed):
    perfect = SimulatedDefender(WeaknessProfile({}))
    eval_set = [EvalRecord(timer_seed, "non_live"), EvalRecord(timer_seed, "live"),
                EvalRecord(timer_seed, "relevance"), EvalRecord(irrelevant_seed, "irrelevance")]
    m = evaluate(perfect, eval_set)
    assert all(m[c] == 1.0 for c in ("non_live", "live", "relevance", "irrelevance", "overall"))
    r = evaluate(RefusingDefender(), eval_set)
    assert r["irrelevance"] == 1.0 and r["relevance"] == 0.0


def test_evaluate_forced_failure(timer_seed, irrelevant_seed):
    forced = EvalRecord(timer_seed, "live", ("UnitShift",))
    d = SimulatedDefender(WeaknessProfile({"UnitShift": 1.0}))
    eval_set = [EvalRecord(timer_seed, "non_live"), forced, EvalRecord(timer_seed, "relevance"),
                EvalRecord(irrelevant_seed, "irrelevance")]
    m = evaluate(d, eval_set)
    assert m["overall"] == 0.75 and m["live"] == 0.0


def test_evaluate_empty_category(timer_seed):
    m = evaluate(SimulatedDefender(WeaknessProfile({})), [EvalRecord(timer_seed, "non_live")])
    assert m["live"] is None and m["counts"]["live"] == 0


def test_load_eval_set(tmp_path, timer_seed):
    p = tmp_path / "eval.jsonl"
    p.write_text(json.dumps({**timer_seed.to_json(), "category": "live"}) + "\n")
    assert load_eval_set(p)[0].category == "live"
    p.write_text(json.dumps(timer_seed.to_json()) + "\n")
    with pytest.raises(ValueError, match="missing category"):
        load_eval_set(p)
