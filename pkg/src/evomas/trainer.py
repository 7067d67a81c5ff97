"""REINFORCE training of the workflow adapter."""

from __future__ import annotations

import enum
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from evomas.adapter import PARAM_NAMES, AdapterParams, EncoderConfig
from evomas.autograd import ParamGradients, grad_log_prob
from evomas.core import AgentPool, Trajectory
from evomas.env import EnvConfig, OutcomeModel, TaskTemplate, rollout

log = logging.getLogger(__name__)


class RewardMode(str, enum.Enum):
    TERMINAL_ONLY = "TerminalOnly"
    TERMINAL_PLUS_PROCESS = "TerminalPlusProcess"


class BaselineMode(str, enum.Enum):
    NONE = "None"
    BATCH_MEAN = "BatchMean"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 8
    total_trajectories: int = 2000
    reward_mode: RewardMode = RewardMode.TERMINAL_ONLY
    prm_weight: float = 0.0
    baseline_mode: BaselineMode = BaselineMode.NONE
    eval_every: int = 200
    eval_episodes: int = 200
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "reward_mode", RewardMode(self.reward_mode))
        object.__setattr__(self, "baseline_mode", BaselineMode(self.baseline_mode))
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.prm_weight < 0:
            raise ValueError("process-reward weight must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.total_trajectories < 0 or self.eval_every < 1 or self.eval_episodes < 1:
            raise ValueError("trajectory budget and evaluation cadence must be positive")


@dataclass(frozen=True)
class AdapterConfig:
    dim: int = 16
    temperature: float = 0.2
    mass_threshold: float = 0.5
    layers: int = 3
    scale_attention: bool = True
    init_scale: float = 1.0
    init_spread: float | None = 0.3
    encoder_seed: int = 0

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(dim=self.dim, seed=self.encoder_seed)

    def init_params(self, n_agents: int, rng: np.random.Generator) -> AdapterParams:
        return AdapterParams.init(
            n_agents,
            self.dim,
            rng,
            init_scale=self.init_scale,
            spread=self.init_spread,
            temperature=self.temperature,
            mass_threshold=self.mass_threshold,
            max_layers=self.layers,
            scale_attention=self.scale_attention,
        )


# =============================================================================
# RETURNS AND UPDATES
# =============================================================================


def trajectory_return(trajectory: Trajectory, config: TrainConfig) -> float:
    """Terminal utility, plus the budget-normalized process reward in PRM mode."""
    ret = trajectory.utility
    if config.reward_mode is RewardMode.TERMINAL_PLUS_PROCESS:
        ret += config.prm_weight * sum(trajectory.step_rewards) / trajectory.budget
    return float(ret)


def policy_gradient(params: AdapterParams, batch: Sequence[Trajectory], config: TrainConfig) -> ParamGradients:
    """Mean over the batch of (return - baseline) * sum_t grad log P(workflow_t | state_t)."""
    if not batch:
        raise ValueError("cannot update from an empty batch")
    returns = np.array([trajectory_return(t, config) for t in batch])
    baseline = returns.mean() if config.baseline_mode is BaselineMode.BATCH_MEAN else 0.0
    total = ParamGradients.zeros_like(params)
    for traj, ret in zip(batch, returns):
        advantage = ret - baseline
        if advantage == 0.0:
            continue
        for step in traj.steps:
            total = total + grad_log_prob(step.encoding, params, step.workflow).scale(advantage)
    return total.scale(1.0 / len(batch))


def reinforce_update(
    params: AdapterParams, batch: Sequence[Trajectory], config: TrainConfig
) -> tuple[AdapterParams, float]:
    """One plain gradient-ascent step; returns the new parameters and the update's L2 norm."""
    grad = policy_gradient(params, batch, config)
    step = grad.scale(config.learning_rate)
    norm = step.norm()
    if norm == 0.0:
        return params, 0.0
    updated = {name: getattr(params, name) + delta for name, delta in step.arrays().items()}
    return params.with_arrays(**updated), norm


# =============================================================================
# EVALUATION
# =============================================================================


def evaluate(
    params: AdapterParams,
    templates: Sequence[TaskTemplate],
    episodes: int,
    rng: np.random.Generator,
    pool: AgentPool,
    model: OutcomeModel,
    t_max: int,
    encoder: EncoderConfig | None = None,
) -> float:
    """Mean terminal utility over ``episodes`` rollouts, cycling through ``templates``."""
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    wins = 0.0
    for k in range(episodes):
        wins += rollout(templates[k % len(templates)], params, rng, t_max, pool, model, encoder).utility
    return wins / episodes


# =============================================================================
# CHECKPOINTS
# =============================================================================

CHECKPOINT_MAGIC = b"EVOMAS-CHECKPOINT\n"
CHECKPOINT_VERSION = 1


class ChecksumError(ValueError):
    """Checkpoint payload does not match its recorded digest."""


@dataclass(frozen=True, eq=False)
class Checkpoint:
    params: AdapterParams
    counter: int
    rng_digest: str
    config_hash: str
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        arrays = self.params.arrays()
        payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())
        header = {
            "version": CHECKPOINT_VERSION,
            "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()],
            "hyper": self.params.hyper(),
            "counter": self.counter,
            "config_hash": self.config_hash,
            "rng_digest": self.rng_digest,
            "meta": self.meta,
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        }
        return CHECKPOINT_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> Checkpoint:
        if not blob.startswith(CHECKPOINT_MAGIC):
            raise ValueError("not a checkpoint file")
        stream = io.BytesIO(blob[len(CHECKPOINT_MAGIC):])
        header = json.loads(stream.readline())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        payload = stream.read()
        if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
            raise ChecksumError("checkpoint payload digest mismatch")
        arrays, offset = {}, 0
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            size = int(np.prod(shape)) * 8
            arrays[entry["name"]] = np.frombuffer(payload[offset:offset + size], dtype="<f8").reshape(shape)
            offset += size
        if offset != len(payload) or set(arrays) != set(PARAM_NAMES):
            raise ChecksumError("checkpoint payload does not match its header")
        params = AdapterParams(**arrays, **header["hyper"])
        return cls(params, header["counter"], header["rng_digest"], header["config_hash"], header.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> Checkpoint:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def rng_digest(seed: int, counter: int) -> str:
    """Trajectory streams are derived from (seed, index), so this pins the sampler state."""
    return hashlib.sha256(f"{seed}:{counter}".encode()).hexdigest()[:16]


# =============================================================================
# TRAINING LOOP
# =============================================================================


@dataclass(frozen=True)
class CurvePoint:
    trajectories: int
    mean_return: float
    validation_success: float
    update_norm: float


@dataclass(frozen=True, eq=False)
class TrainResult:
    params: AdapterParams
    curve: tuple[CurvePoint, ...]
    checkpoint: Checkpoint


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, index])


def eval_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2])


def train(
    env_config: EnvConfig,
    train_config: TrainConfig,
    adapter_config: AdapterConfig = AdapterConfig(),
    config_hash: str = "",
    params: AdapterParams | None = None,
    on_trajectory: Callable[[int, Trajectory, float], None] | None = None,
    on_point: Callable[[CurvePoint], None] | None = None,
    on_checkpoint: Callable[[Checkpoint], None] | None = None,
) -> TrainResult:
    """Alternate batched rollouts and REINFORCE updates, evaluating every
    ``eval_every`` trajectories on the held-out templates."""
    cfg = train_config
    pool = env_config.build_pool()
    model = env_config.outcome_model()
    t_max = env_config.t_max
    encoder = adapter_config.encoder()
    train_templates = env_config.train_templates()
    val_templates = env_config.val_templates()
    if params is None:
        params = adapter_config.init_params(len(pool), np.random.default_rng([cfg.seed, 0]))

    curve: list[CurvePoint] = []
    done = 0
    returns_since: list[float] = []
    last_norm = 0.0

    def checkpoint() -> Checkpoint:
        meta = {"pool": env_config.pool, "encoder_seed": adapter_config.encoder_seed, "seed": cfg.seed}
        return Checkpoint(params, done, rng_digest(cfg.seed, done), config_hash, meta)

    while done < cfg.total_trajectories:
        size = min(cfg.batch_size, cfg.total_trajectories - done)
        batch = []
        for k in range(done, done + size):
            rng = trajectory_rng(cfg.seed, k)
            template = train_templates[int(rng.integers(len(train_templates)))]
            traj = rollout(template, params, rng, t_max, pool, model, encoder)
            ret = trajectory_return(traj, cfg)
            batch.append(traj)
            returns_since.append(ret)
            if on_trajectory is not None:
                on_trajectory(k, traj, ret)
        params, last_norm = reinforce_update(params, batch, cfg)
        prev, done = done, done + size

        if done // cfg.eval_every > prev // cfg.eval_every or done == cfg.total_trajectories:
            success = evaluate(params, val_templates, cfg.eval_episodes, eval_rng(cfg.seed), pool, model, t_max, encoder)
            point = CurvePoint(done, float(np.mean(returns_since)), success, last_norm)
            returns_since = []
            curve.append(point)
            log.info("trajectories=%d mean_return=%.3f validation=%.3f", done, point.mean_return, success)
            if on_point is not None:
                on_point(point)
        if cfg.checkpoint_every and on_checkpoint is not None:
            if done // cfg.checkpoint_every > prev // cfg.checkpoint_every:
                on_checkpoint(checkpoint())

    return TrainResult(params, tuple(curve), checkpoint())
