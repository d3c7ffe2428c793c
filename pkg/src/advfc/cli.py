"""Command-line entry point: ``advfc validate|run|attack|eval|scenario``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .arena import Arena, PhaseError, evaluate, load_eval_set
from .arbiter import JudgeError
from .config import ConfigError, RunConfig, load_config
from .corpus import SeedDataError, check_seed_lines, dump_seed_dataset, load_seed_dataset
from .remote import BackendError

EXIT_OK, EXIT_INVALID, EXIT_BACKEND = 0, 1, 2

log = logging.getLogger("advfc")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _load(args) -> tuple[RunConfig, list]:
    cfg = load_config(args.config)
    if args.rng_seed is not None:
        cfg.rng_seed = args.rng_seed
        cfg.validate()
    if not cfg.seed_path:
        raise ConfigError("seed_path", "required")
    return cfg, load_seed_dataset(cfg.seed_path)


def _run_dir(base: Path, cfg: RunConfig, prefix: str) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S")
    d = base / f"{prefix}-{stamp}-seed{cfg.rng_seed}"
    n = 1
    while d.exists():
        n += 1
        d = base / f"{prefix}-{stamp}-seed{cfg.rng_seed}-{n}"
    d.mkdir(parents=True)
    return d


def cmd_validate(args) -> int:
    path = Path(args.seed_path)
    try:
        with open(path, encoding="utf-8") as fh:
            records, checks = check_seed_lines(fh)
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    failures = [c for c in checks if not c.ok]
    if not args.quiet:
        for c in checks:
            status = "ok  " if c.ok else "FAIL"
            rid = c.record_id or "-"
            print(f"{status} line {c.line} {rid}" + (f": {c.reason}" if c.reason else ""))
    if not checks:
        print(f"warning: {path} contains no records", file=sys.stderr)
    print(f"{len(records)} valid, {len(failures)} invalid")
    return EXIT_INVALID if failures else EXIT_OK


def cmd_run(args) -> int:
    cfg, seeds = _load(args)
    out = _run_dir(Path(args.out_dir), cfg, "run") if not args.resume else Path(args.resume).parent
    _write_json(out / "config.json", cfg.to_json())
    arena = Arena(cfg, seeds, out)
    report = arena.run(resume=args.resume)
    if not args.quiet:
        for r in report["rounds"]:
            asr = r["attack_success_rate"]
            print(f"round {r['round']}: {r['timesteps_run']} timesteps, "
                  f"attack success {'n/a' if asr is None else f'{asr:.3f}'}, "
                  f"{r['bad_case_count']} bad cases")
    print(out)
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg, seeds = _load(args)
    out = _run_dir(Path(args.out_dir), cfg, "attack")
    _write_json(out / "config.json", cfg.to_json())
    arena = Arena(cfg, seeds, out)
    state = arena.initial_state()
    state.collected.attacker_train = arena.compose(0)
    state, added = arena.attacker_phase(state)
    with open(out / "bad_cases.jsonl", "w", encoding="utf-8") as fh:
        for c in added:
            fh.write(json.dumps(c.to_json(), sort_keys=True, ensure_ascii=False) + "\n")
    s = state.stats
    summary = {
        "timesteps_run": s["timesteps_run"], "stop_timestep": s["stop_timestep"], "rewrites": s["rewrites"],
        "judge_pass": s["judge_pass"], "attack_success": s["attack_success"],
        "bad_case_count": len(added), "dedup_removed": s["dedup_removed"],
    }
    _write_json(out / "attack_summary.json", summary)
    if not args.quiet:
        print(f"{len(added)} bad cases from {s['rewrites']} rewrites over {s['timesteps_run']} timesteps")
    print(out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    try:
        eval_set = load_eval_set(args.eval_path)
    except (ValueError, KeyError) as exc:
        print(f"eval set error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    arena = Arena(cfg, [])
    metrics = evaluate(arena.initial_defender(), eval_set)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_scenario(args) -> int:
    """Write the canonical synthetic scenario (seeds, config, eval set) to a directory."""
    from .scenario import canonical_scenario, synthetic_seed_dataset

    out = Path(args.directory)
    out.mkdir(parents=True, exist_ok=True)
    sc = canonical_scenario(args.rng_seed or 0)
    dump_seed_dataset(sc.seeds, out / "seeds.jsonl")
    cfg = RunConfig.from_json({**sc.config, "seed_path": "seeds.jsonl"})
    _write_json(out / "config.json", cfg.to_json())
    categories = {"single": "non_live", "parallel": "live", "irrelevant": "irrelevance"}
    held_out = synthetic_seed_dataset({"single": 40, "parallel": 20, "irrelevant": 20}, rng_seed=99, prefix="eval")
    with open(out / "eval.jsonl", "w", encoding="utf-8") as fh:
        for rec in held_out:
            fh.write(json.dumps({**rec.to_json(), "category": categories[rec.complexity]}, ensure_ascii=False) + "\n")
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advfc", description="Adversarial data augmentation for function-calling models.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default="runs", help="directory for run outputs")
    common.add_argument("--rng-seed", type=int, default=None, help="override the config rng_seed")
    common.add_argument("--quiet", action="store_true", help="only print the output location / result")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="validate a seed JSONL file")
    p.add_argument("seed_path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", parents=[common], help="run the full alternating loop")
    p.add_argument("config")
    p.add_argument("--resume", default=None, help="checkpoint.json to resume from")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attack", parents=[common], help="run one attacker phase and export bad cases")
    p.add_argument("config")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", parents=[common], help="evaluate the configured defender")
    p.add_argument("config")
    p.add_argument("eval_path")
    p.set_defaults(func=cmd_eval, out_dir=None)

    p = sub.add_parser("scenario", parents=[common], help="write the canonical synthetic scenario")
    p.add_argument("directory")
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SeedDataError as exc:
        print(f"seed data error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (PhaseError, BackendError, JudgeError) as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
