"""Learned construction of layered multi-agent workflows, trained with REINFORCE."""

from evomas.adapter import (
    AdapterParams,
    EncoderConfig,
    build_workflow,
    encode_state,
    greedy_workflow,
    probability_snapshot,
    sample_cumulative,
    sequence_log_prob,
    workflow_log_prob,
)
from evomas.autograd import finite_diff_check, grad_log_prob
from evomas.config import ExperimentConfig, load_config
from evomas.core import AgentPool, LayeredWorkflow, RoleTag, TaskState, Trajectory, pool_preset
from evomas.env import EnvConfig, OutcomeModel, TaskTemplate, rollout
from evomas.oracle import best_deterministic_sequence, enumerate_stopped_sequences, exact_policy_success
from evomas.trainer import AdapterConfig, Checkpoint, TrainConfig, evaluate, reinforce_update, train

__all__ = [
    "AdapterConfig",
    "AdapterParams",
    "AgentPool",
    "Checkpoint",
    "EncoderConfig",
    "EnvConfig",
    "ExperimentConfig",
    "LayeredWorkflow",
    "OutcomeModel",
    "RoleTag",
    "TaskState",
    "TaskTemplate",
    "TrainConfig",
    "Trajectory",
    "best_deterministic_sequence",
    "build_workflow",
    "encode_state",
    "enumerate_stopped_sequences",
    "evaluate",
    "exact_policy_success",
    "finite_diff_check",
    "grad_log_prob",
    "greedy_workflow",
    "load_config",
    "pool_preset",
    "probability_snapshot",
    "reinforce_update",
    "rollout",
    "sample_cumulative",
    "sequence_log_prob",
    "train",
    "workflow_log_prob",
]
