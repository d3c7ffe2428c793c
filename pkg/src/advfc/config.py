"""Run configuration: JSON schema, defaults and validation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .corpus import DEFAULT_DIRECTIVES, CurriculumSchedule, RoundMix
from .diversity import DEFAULT_ALPHA, DEFAULT_DIM
from .optim import DEFAULT_EPSILON, DEFAULT_LEARNING_RATE, DEFAULT_WINDOW
from .remote import Endpoint

CONFIG_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


_BACKEND_KINDS = {
    "attacker": ("simulated", "external"),
    "judge": ("simulated", "external"),
    "defender": ("simulated", "refuse", "external"),
    "embedder": ("simulated", "external"),
}
_BACKEND_OPTIONS = {
    "attacker": {"temperature", "seq_len"},
    "judge": {"template_path", "patterns"},
    "defender": {"failure_prob", "base_failure", "composition"},
    "embedder": {"dim"},
}


@dataclass
class Backend:
    kind: str = "simulated"
    endpoint: Endpoint | None = None
    options: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, **self.options}
        if self.endpoint is not None:
            out["endpoint"] = self.endpoint.to_json()
        return out


def _backend_from_json(role: str, obj: Any) -> Backend:
    path = f"backends.{role}"
    if not isinstance(obj, dict):
        raise ConfigError(path, "must be an object")
    kind = obj.get("kind", "simulated")
    if kind not in _BACKEND_KINDS[role]:
        raise ConfigError(f"{path}.kind", f"must be one of {_BACKEND_KINDS[role]}, got {kind!r}")
    options = {k: v for k, v in obj.items() if k not in ("kind", "endpoint")}
    unknown = set(options) - _BACKEND_OPTIONS[role]
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown option")
    endpoint = None
    if kind == "external":
        if "endpoint" not in obj:
            raise ConfigError(f"{path}.endpoint", "required for external backends")
        try:
            endpoint = Endpoint.from_json(obj["endpoint"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.endpoint", str(exc)) from None
    elif "endpoint" in obj:
        raise ConfigError(f"{path}.endpoint", "only valid for external backends")
    return Backend(kind, endpoint, options)


def _default_backends() -> dict:
    return {role: Backend() for role in _BACKEND_KINDS}


def _default_curriculum() -> CurriculumSchedule:
    return CurriculumSchedule((RoundMix({"single": 1.0}, 128), RoundMix({"single": 0.5, "parallel": 0.5}, 128)))


@dataclass
class RunConfig:
    seed_path: str | None = None
    rounds: int = 2
    batch_size: int = 32
    max_timesteps: int = 200
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    window: int = DEFAULT_WINDOW
    early_stop: bool = True
    learning_rate: float = DEFAULT_LEARNING_RATE
    baseline: str = "batch_mean"
    optimizer: str = "reinforce"
    clip: float = 0.2
    eta: float = 0.02
    defender_update: str = "rl"
    defender_timesteps: int = 3
    curriculum: CurriculumSchedule = field(default_factory=_default_curriculum)
    defender_train_mix: float = 1.0
    dedup: bool = True
    accumulate: bool = False
    frozen_eval_samples: int = 1024
    directives: str = DEFAULT_DIRECTIVES
    backends: dict = field(default_factory=_default_backends)
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def check(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        check(isinstance(self.rounds, int) and self.rounds >= 0, "rounds", "must be an integer >= 0")
        check(isinstance(self.batch_size, int) and self.batch_size >= 2, "batch_size", "must be an integer >= 2")
        check(isinstance(self.max_timesteps, int) and self.max_timesteps >= 0, "max_timesteps", "must be an integer >= 0")
        check(self.alpha >= 0, "alpha", "must be >= 0")
        check(self.epsilon > 0, "epsilon", "must be > 0")
        check(isinstance(self.window, int) and self.window >= 2, "window", "must be an integer >= 2")
        check(self.learning_rate >= 0, "learning_rate", "must be >= 0")
        check(self.baseline in ("none", "batch_mean"), "baseline", "must be 'none' or 'batch_mean'")
        check(self.optimizer in ("reinforce", "clipped"), "optimizer", "must be 'reinforce' or 'clipped'")
        check(0 < self.clip < 1, "clip", "must lie in (0, 1)")
        check(0 < self.eta < 1, "eta", "must lie in (0, 1)")
        check(self.defender_update in ("rl", "sft"), "defender_update", "must be 'rl' or 'sft'")
        check(isinstance(self.defender_timesteps, int) and self.defender_timesteps >= 1, "defender_timesteps", "must be an integer >= 1")
        check(self.defender_train_mix >= 0, "defender_train_mix", "must be >= 0")
        check(isinstance(self.frozen_eval_samples, int) and self.frozen_eval_samples >= 0, "frozen_eval_samples", "must be an integer >= 0")
        check(isinstance(self.rng_seed, int) and self.rng_seed >= 0, "rng_seed", "must be a non-negative integer")
        check(len(self.curriculum.rounds) >= self.rounds, "curriculum", f"needs at least {self.rounds} round mixes")
        for role in _BACKEND_KINDS:
            check(role in self.backends, f"backends.{role}", "missing")

    def backend(self, role: str) -> Backend:
        return self.backends[role]

    def to_json(self) -> dict:
        out: dict[str, Any] = {"version": CONFIG_VERSION}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "curriculum":
                value = value.to_json()
            elif f.name == "backends":
                value = {role: b.to_json() for role, b in value.items()}
            out[f.name] = value
        return out

    @classmethod
    def from_json(cls, obj: Any) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        version = obj.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError("version", f"unsupported config version {version!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known - {"version"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        kwargs = {k: v for k, v in obj.items() if k in known}
        if "curriculum" in kwargs:
            raw = kwargs["curriculum"]
            if not isinstance(raw, list):
                raise ConfigError("curriculum", "must be a list of round mixes")
            mixes = []
            for i, r in enumerate(raw):
                try:
                    mixes.append(RoundMix(dict(r["fractions"]), int(r["count"])))
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigError(f"curriculum[{i}]", str(exc)) from None
            kwargs["curriculum"] = CurriculumSchedule(tuple(mixes))
        backends = _default_backends()
        raw_backends = kwargs.get("backends", {})
        if not isinstance(raw_backends, dict):
            raise ConfigError("backends", "must be an object")
        for role, spec in raw_backends.items():
            if role not in _BACKEND_KINDS:
                raise ConfigError(f"backends.{role}", "unknown backend role")
            backends[role] = _backend_from_json(role, spec)
        kwargs["backends"] = backends
        for name in ("alpha", "epsilon", "learning_rate", "clip", "eta", "defender_train_mix"):
            if name in kwargs and (isinstance(kwargs[name], bool) or not isinstance(kwargs[name], (int, float))):
                raise ConfigError(name, "must be a number")
        return cls(**kwargs)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True, ensure_ascii=False)


def load_config(path: str | Path) -> RunConfig:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    cfg = RunConfig.from_json(obj)
    if cfg.seed_path and not Path(cfg.seed_path).is_absolute():
        cfg.seed_path = str((Path(path).parent / cfg.seed_path).resolve())
    return cfg


def embed_dim(cfg: RunConfig) -> int:
    return int(cfg.backend("embedder").options.get("dim", DEFAULT_DIM))
