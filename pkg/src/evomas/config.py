"""Experiment configuration: a flat YAML mapping with dotted keys.

Example::

    env.stages: [Retrieve, Compute, Verify]
    env.required_roles: {Retrieve: [WebSearch], Compute: [MultiGenerate], Verify: [SelfRefine]}
    env.pool: seven
    adapter.temperature: 0.2
    train.total_trajectories: 3000

Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

import yaml

from evomas.core import POOL_PRESETS, RoleTag
from evomas.env import EnvConfig
from evomas.experiments import three_stage_env
from evomas.trainer import AdapterConfig, BaselineMode, RewardMode, TrainConfig

SEED_ENV_VAR = "EVOMAS_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OracleCheckConfig:
    max_agents: int = 5
    cases: int = 5
    rho_choices: tuple[float, ...] = (0.3, 0.5, 0.7, 0.9, 1.0)
    mc_samples: int = 100_000
    grad_instances: int = 20
    dp_episodes: int = 1_000_000
    seed: int = 0
    # test hook: perturb one enumerated probability so the checks must fail
    corrupt: bool = False


def _to_bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    raise ConfigError(f"expected true/false, got {v!r}")


def _to_int(v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {v!r}")
    return v


def _to_float(v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}")
    return float(v)


def _to_opt_int(v: Any) -> int | None:
    return None if v is None else _to_int(v)


def _to_opt_float(v: Any) -> float | None:
    return None if v is None else _to_float(v)


def _to_str(v: Any) -> str:
    if not isinstance(v, str):
        raise ConfigError(f"expected a string, got {v!r}")
    return v


def _to_stages(v: Any) -> tuple[str, ...]:
    if not isinstance(v, list) or not v or not all(isinstance(s, str) for s in v):
        raise ConfigError(f"expected a non-empty list of stage names, got {v!r}")
    return tuple(v)


def _to_roles(v: Any) -> dict[str, tuple[str, ...]]:
    if not isinstance(v, dict):
        raise ConfigError(f"expected a mapping stage -> list of roles, got {v!r}")
    out = {}
    for stage, roles in v.items():
        if not isinstance(roles, list):
            raise ConfigError(f"roles for {stage!r} must be a list")
        for r in roles:
            _check_role(r)
        out[str(stage)] = tuple(roles)
    return out


def _to_capability(v: Any) -> float | dict[str, float]:
    if isinstance(v, dict):
        return {str(k): _to_float(x) for k, x in v.items()}
    return _to_float(v)


def _to_pool(v: Any) -> str | tuple[str, ...]:
    """A preset name, or an explicit list of roles."""
    if isinstance(v, list):
        if not v:
            raise ConfigError("an explicit pool needs at least one role")
        for r in v:
            _check_role(r)
        return tuple(v)
    v = _to_str(v).lower()
    if v not in POOL_PRESETS:
        raise ConfigError(f"unknown pool {v!r}; expected one of {POOL_PRESETS} or a list of roles")
    return v


def _check_role(r: Any) -> None:
    try:
        RoleTag(r)
    except ValueError:
        raise ConfigError(f"unknown role {r!r}; expected one of {[t.value for t in RoleTag]}") from None


def _to_enum(enum_cls):
    def cast(v: Any):
        try:
            return enum_cls(v)
        except ValueError:
            raise ConfigError(f"expected one of {[e.value for e in enum_cls]}, got {v!r}") from None

    return cast


def _to_floats(v: Any) -> tuple[float, ...]:
    if not isinstance(v, list) or not v:
        raise ConfigError(f"expected a non-empty list of numbers, got {v!r}")
    return tuple(_to_float(x) for x in v)


# dotted key -> (section, field name, caster)
KEYS: dict[str, tuple[str, str, Any]] = {
    "env.stages": ("env", "stage_types", _to_stages),
    "env.required_roles": ("env", "required_roles", _to_roles),
    "env.pool": ("env", "pool", _to_pool),
    "env.capability": ("env", "capability", _to_capability),
    "env.ensemble_bonus": ("env", "ensemble_bonus", _to_float),
    "env.distractor_penalty": ("env", "distractor_penalty", _to_float),
    "env.noise": ("env", "noise", _to_float),
    "env.max_refines": ("env", "max_refines", _to_int),
    "env.max_steps": ("env", "max_steps", _to_opt_int),
    "env.train_tasks": ("env", "train_tasks", _to_int),
    "env.val_tasks": ("env", "val_tasks", _to_int),
    "adapter.dim": ("adapter", "dim", _to_int),
    "adapter.temperature": ("adapter", "temperature", _to_float),
    "adapter.mass_threshold": ("adapter", "mass_threshold", _to_float),
    "adapter.layers": ("adapter", "layers", _to_int),
    "adapter.scale_attention": ("adapter", "scale_attention", _to_bool),
    "adapter.init_scale": ("adapter", "init_scale", _to_float),
    "adapter.init_spread": ("adapter", "init_spread", _to_opt_float),
    "adapter.encoder_seed": ("adapter", "encoder_seed", _to_int),
    "train.learning_rate": ("train", "learning_rate", _to_float),
    "train.batch_size": ("train", "batch_size", _to_int),
    "train.total_trajectories": ("train", "total_trajectories", _to_int),
    "train.reward_mode": ("train", "reward_mode", _to_enum(RewardMode)),
    "train.prm_weight": ("train", "prm_weight", _to_float),
    "train.baseline_mode": ("train", "baseline_mode", _to_enum(BaselineMode)),
    "train.eval_every": ("train", "eval_every", _to_int),
    "train.eval_episodes": ("train", "eval_episodes", _to_int),
    "train.checkpoint_every": ("train", "checkpoint_every", _to_int),
    "train.seed": ("train", "seed", _to_int),
    "oracle.max_agents": ("oracle", "max_agents", _to_int),
    "oracle.cases": ("oracle", "cases", _to_int),
    "oracle.rho_choices": ("oracle", "rho_choices", _to_floats),
    "oracle.mc_samples": ("oracle", "mc_samples", _to_int),
    "oracle.grad_instances": ("oracle", "grad_instances", _to_int),
    "oracle.dp_episodes": ("oracle", "dp_episodes", _to_int),
    "oracle.seed": ("oracle", "seed", _to_int),
    "oracle.corrupt": ("oracle", "corrupt", _to_bool),
}


def _jsonable(v: Any) -> Any:
    if dataclasses.is_dataclass(v):
        return {f.name: _jsonable(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, Mapping):
        return {str(k): _jsonable(x) for k, x in sorted(v.items())}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "value"):
        return v.value
    return v


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=three_stage_env)
    adapter: AdapterConfig = AdapterConfig()
    train: TrainConfig = TrainConfig()
    oracle: OracleCheckConfig = OracleCheckConfig()

    def to_flat(self) -> dict[str, Any]:
        return {key: _jsonable(getattr(getattr(self, sec), name)) for key, (sec, name, _) in KEYS.items()}

    def config_hash(self) -> str:
        text = json.dumps(self.to_flat(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> ExperimentConfig:
        return dataclasses.replace(self, train=dataclasses.replace(self.train, seed=seed))

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> ExperimentConfig:
        unknown = sorted(set(flat) - set(KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        sections: dict[str, dict[str, Any]] = {"env": {}, "adapter": {}, "train": {}, "oracle": {}}
        for key, value in flat.items():
            sec, name, cast = KEYS[key]
            try:
                sections[sec][name] = cast(value)
            except ConfigError as err:
                raise ConfigError(f"{key}: {err}") from None
        default = cls()
        try:
            env = dataclasses.replace(default.env, **sections["env"])
            missing = [s for s in env.stage_types if s not in env.required_roles]
            if missing:
                raise ConfigError(f"env.required_roles has no entry for stages {missing}")
            return cls(
                env=env,
                adapter=dataclasses.replace(default.adapter, **sections["adapter"]),
                train=dataclasses.replace(default.train, **sections["train"]),
                oracle=dataclasses.replace(default.oracle, **sections["oracle"]),
            )
        except (TypeError, ValueError) as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(str(err)) from None


def seed_override(explicit: int | None = None) -> int | None:
    """The explicit seed if given, else EVOMAS_SEED if set, else None."""
    if explicit is not None:
        return explicit
    raw = os.environ.get(SEED_ENV_VAR)
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None


def load_config(path=None, seed: int | None = None) -> ExperimentConfig:
    """Read a config file (defaults if ``path`` is None); ``seed`` or EVOMAS_SEED overrides train.seed."""
    if path is None:
        config = ExperimentConfig()
    else:
        with open(path) as fh:
            try:
                data = yaml.safe_load(fh)
            except yaml.YAMLError as err:
                raise ConfigError(f"cannot parse {path}: {err}") from None
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping of dotted keys to values")
        config = ExperimentConfig.from_flat(data)
    seed = seed_override(seed)
    return config.with_seed(seed) if seed is not None else config
