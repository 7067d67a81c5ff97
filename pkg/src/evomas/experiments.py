"""Named synthetic environments and the controlled experiments run on them."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from evomas.env import EnvConfig
from evomas.oracle import FixedPolicy, exact_policy_success
from evomas.trainer import AdapterConfig, CurvePoint, RewardMode, TrainConfig, train


def three_stage_env(pool: str = "seven") -> EnvConfig:
    """Retrieve -> Compute -> Verify, one required role per stage, noise-free."""
    return EnvConfig(
        stage_types=("Retrieve", "Compute", "Verify"),
        required_roles={"Retrieve": ["WebSearch"], "Compute": ["MultiGenerate"], "Verify": ["SelfRefine"]},
        pool=pool,
    )


def very_hard_env() -> EnvConfig:
    """Four stages, each needing a different agent, so that a uniform policy
    almost never finishes (exact success about 4e-4)."""
    return EnvConfig(
        stage_types=("Retrieve", "Browse", "Compute", "Verify"),
        required_roles={
            "Retrieve": ["WebSearch"],
            "Browse": ["WebBrowser"],
            "Compute": ["MultiGenerate"],
            "Verify": ["SelfRefine"],
        },
        pool="seven",
    )


def rich_pool_env(pool: str = "seven") -> EnvConfig:
    """Stages whose required roles exist only in the seven-agent preset."""
    return EnvConfig(
        stage_types=("Browse", "Compute", "Verify"),
        required_roles={"Browse": ["WebBrowser"], "Compute": ["MultiGenerate"], "Verify": ["SelfRefine"]},
        pool=pool,
    )


def uniform_success(env: EnvConfig, adapter: AdapterConfig = AdapterConfig()) -> float:
    """Exact success of the policy that draws every layer from a uniform distribution."""
    pool = env.build_pool()
    policy = FixedPolicy.uniform(len(pool), adapter.mass_threshold, adapter.layers)
    return exact_policy_success(policy, env.train_templates()[0], env.outcome_model(), env.t_max, pool)


def first_nonzero(curve: Sequence[CurvePoint]) -> float:
    """Trajectory count of the first evaluation with non-zero success (inf if none)."""
    for point in curve:
        if point.validation_success > 0:
            return float(point.trajectories)
    return float("inf")


@dataclass(frozen=True)
class BreakthroughPair:
    seed: int
    terminal_only: float
    with_process: float

    @property
    def process_earlier(self) -> bool:
        return self.with_process < self.terminal_only


def breakthrough_pairs(
    env: EnvConfig,
    seeds: Sequence[int],
    base: TrainConfig,
    prm_weight: float = 1.0,
    adapter: AdapterConfig = AdapterConfig(),
) -> list[BreakthroughPair]:
    """Train terminal-only and terminal-plus-process runs from identical seeds
    and record when each first shows non-zero validation success."""
    pairs = []
    for seed in seeds:
        terminal = replace(base, seed=seed, reward_mode=RewardMode.TERMINAL_ONLY, prm_weight=0.0)
        process = replace(base, seed=seed, reward_mode=RewardMode.TERMINAL_PLUS_PROCESS, prm_weight=prm_weight)
        pairs.append(BreakthroughPair(
            seed,
            first_nonzero(train(env, terminal, adapter).curve),
            first_nonzero(train(env, process, adapter).curve),
        ))
    return pairs


def trained_success(env: EnvConfig, config: TrainConfig, adapter: AdapterConfig = AdapterConfig()) -> float:
    result = train(env, config, adapter)
    return result.curve[-1].validation_success if result.curve else float("nan")


def mean_and_sigma(successes: Sequence[float], episodes: int) -> tuple[float, float]:
    p = float(np.mean(successes))
    return p, float(np.sqrt(max(p * (1 - p), 1e-12) / episodes))
