"""Synthetic long-horizon environment.

Workflow execution is replaced by a parametric outcome model over the role
tags present in the workflow, and the evaluator by a noisy verdict oracle.
The planner/evaluator/updater transition is applied to the structured
:class:`TaskState` exactly as the real system would apply it to its text
state, so the meta-level dynamics are preserved while optimal policies stay
computable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from evomas.adapter import AdapterParams, EncoderConfig, build_workflow, encode_state
from evomas.core import (
    AgentPool,
    EvaluatorAssessment,
    ExecutionRecord,
    LayeredWorkflow,
    RoleTag,
    Status,
    Step,
    SubtaskPlan,
    TaskState,
    Trajectory,
    Verdict,
    custom_pool,
    pool_preset,
)
from evomas.errors import StateError

FEEDBACK_DIM = 4


@dataclass(frozen=True)
class TaskTemplate:
    stage_types: tuple[str, ...]
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_types", tuple(self.stage_types))
        if not self.stage_types:
            raise ValueError("a task needs at least one stage")
        if not 0.0 <= self.noise < 0.5:
            raise ValueError(f"evaluator noise must lie in [0, 0.5), got {self.noise}")

    @property
    def objective_id(self) -> int:
        return self.seed


@dataclass(frozen=True)
class OutcomeModel:
    """Stage success as a function of the role tags present in a workflow.

    A stage succeeds with probability 0 unless some agent with a required role
    is present. Otherwise the base probability is the best capability among
    the present required agents, plus ``ensemble_bonus`` when an Ensemble agent
    co-occurs, minus ``distractor_penalty`` per agent occurrence whose role is
    neither required nor Ensemble. The result is clamped to [0, 1].
    """

    required_roles: Mapping[str, frozenset[RoleTag]]
    ensemble_bonus: float = 0.0
    distractor_penalty: float = 0.0
    # consecutive Refine verdicts tolerated before a failure becomes Fail
    max_refines: int = 2

    def __post_init__(self):
        object.__setattr__(self, "required_roles", {
            str(stage): frozenset(RoleTag(r) for r in roles) for stage, roles in self.required_roles.items()
        })
        if self.max_refines < 0:
            raise ValueError("max_refines must be non-negative")

    def roles_for(self, stage_type: str) -> frozenset[RoleTag]:
        return self.required_roles.get(stage_type, frozenset())

    def success_probability(self, stage_type: str, pool: AgentPool, agent_counts: Sequence[int]) -> float:
        """Success probability given how many times each agent appears in the workflow."""
        required = self.roles_for(stage_type)
        base = 0.0
        hit = False
        ensemble = False
        distractors = 0
        for agent, count in zip(pool, agent_counts):
            if count == 0:
                continue
            if agent.role_tag in required:
                hit = True
                base = max(base, agent.capability(stage_type))
            elif agent.role_tag is RoleTag.ENSEMBLE:
                ensemble = True
            else:
                distractors += count
        if not hit:
            return 0.0
        prob = base + (self.ensemble_bonus if ensemble else 0.0) - self.distractor_penalty * distractors
        return float(min(1.0, max(0.0, prob)))


def agent_counts(workflow: LayeredWorkflow, n_agents: int) -> tuple[int, ...]:
    counts = [0] * n_agents
    for i in workflow.agents():
        counts[i] += 1
    return tuple(counts)


def triggers_early_exit(workflow: LayeredWorkflow, pool: AgentPool) -> bool:
    return any(pool[i].role_tag is RoleTag.EARLY_EXIT for i in workflow.agents())


def init_state(template: TaskTemplate) -> TaskState:
    plan = SubtaskPlan(tuple((s, Status.PENDING) for s in template.stage_types), 0)
    return TaskState(objective_id=template.objective_id, plan=plan)


def artifact_token(objective_id: int, subtask: int) -> int:
    return (objective_id * 7919 + subtask * 104729) % 1000


def make_assessment(state: TaskState, observed_success: bool, model: OutcomeModel, noise: float) -> EvaluatorAssessment:
    """Evaluator verdict for the active subtask given the (possibly flipped) outcome."""
    if observed_success:
        verdict = Verdict.SUCCESS
    elif state.refine_count >= model.max_refines:
        verdict = Verdict.FAIL
    else:
        verdict = Verdict.REFINE
    refines = state.refine_count + (verdict is Verdict.REFINE)
    feedback = (
        float(verdict is Verdict.SUCCESS),
        float(verdict is Verdict.REFINE),
        float(verdict is Verdict.FAIL),
        refines / max(model.max_refines, 1),
    )
    return EvaluatorAssessment(verdict, 1.0 - noise, feedback)


def build_record(
    state: TaskState,
    workflow: LayeredWorkflow,
    pool: AgentPool,
    model: OutcomeModel,
    observed_success: bool,
    noise: float = 0.0,
) -> ExecutionRecord:
    required = model.roles_for(state.active_stage_type)
    outputs = tuple(
        tuple(1 if pool[i].role_tag in required else 2 if pool[i].role_tag is RoleTag.ENSEMBLE else 0 for i in layer)
        for layer in workflow.layers
    )
    assessment = make_assessment(state, observed_success, model, noise)
    return ExecutionRecord(
        per_layer_outputs=outputs,
        early_exit_triggered=triggers_early_exit(workflow, pool),
        assessment=assessment,
        step_reward=1.0 if assessment.verdict is Verdict.SUCCESS else 0.0,
    )


def execute_workflow(
    state: TaskState,
    workflow: LayeredWorkflow,
    pool: AgentPool,
    model: OutcomeModel,
    rng: np.random.Generator,
    noise: float = 0.0,
) -> ExecutionRecord:
    """Run one meta-step: sample stage success, then the noisy evaluator verdict."""
    if state.is_terminal:
        raise StateError("cannot execute a workflow on a terminal task state")
    workflow.validate(len(pool))
    prob = model.success_probability(state.active_stage_type, pool, agent_counts(workflow, len(pool)))
    success = bool(rng.random() < prob)
    if noise > 0 and rng.random() < noise:
        success = not success
    return build_record(state, workflow, pool, model, success, noise)


def update_state(state: TaskState, workflow: LayeredWorkflow, record: ExecutionRecord) -> TaskState:
    """Planner/updater transition driven by the evaluator verdict."""
    active = state.plan.active_index
    if active is None:
        raise StateError("terminal task state has no active subtask to update")
    verdict = record.assessment.verdict
    if verdict is Verdict.SUCCESS:
        plan = state.plan.with_status(active, Status.COMPLETED)
        artifacts = state.completed_artifacts + ((active, artifact_token(state.objective_id, active)),)
        refines = 0
    elif verdict is Verdict.FAIL:
        plan = state.plan.with_status(active, Status.FAILED)
        artifacts = state.completed_artifacts
        refines = 0
    else:
        plan = state.plan
        artifacts = state.completed_artifacts
        refines = state.refine_count + 1
    return TaskState(
        objective_id=state.objective_id,
        plan=plan,
        completed_artifacts=artifacts,
        last_assessment=record.assessment,
        stage=state.stage + 1,
        refine_count=refines,
    )


def state_after_successes(template: TaskTemplate, model: OutcomeModel, completed: int) -> TaskState:
    """The state reached when the first ``completed`` subtasks each succeed at the first attempt."""
    if not 0 <= completed <= len(template.stage_types):
        raise ValueError(f"completed must lie in [0, {len(template.stage_types)}], got {completed}")
    state = init_state(template)
    for _ in range(completed):
        record = ExecutionRecord((), False, make_assessment(state, True, model, template.noise), 1.0)
        state = update_state(state, LayeredWorkflow(((0,),)), record)
    return state


def terminal_utility(trajectory_or_state: Trajectory | TaskState) -> float:
    """1.0 iff every subtask ended Completed, else 0.0."""
    state = getattr(trajectory_or_state, "final_state", trajectory_or_state)
    return 1.0 if state.all_completed else 0.0


def final_answer(state: TaskState) -> int | None:
    return state.completed_artifacts[-1][1] if state.completed_artifacts else None


Policy = Callable[[TaskState, np.ndarray, np.random.Generator], LayeredWorkflow]


def adapter_policy(params: AdapterParams) -> Policy:
    def policy(state, X, rng):
        return build_workflow(X, params, rng)

    return policy


def rollout(
    template: TaskTemplate,
    params: AdapterParams | Policy,
    rng: np.random.Generator,
    t_max: int,
    pool: AgentPool,
    model: OutcomeModel,
    encoder: EncoderConfig | None = None,
) -> Trajectory:
    """Unroll one task: encode, build a workflow, execute, update; stop on
    completion, early exit or budget exhaustion.

    ``params`` is either adapter parameters or any policy callable
    ``(state, encoding, rng) -> LayeredWorkflow``.
    """
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    if isinstance(params, AdapterParams):
        if params.n_agents != len(pool):
            raise ValueError(f"adapter has {params.n_agents} agent embeddings, pool has {len(pool)} agents")
        encoder = encoder or EncoderConfig(dim=params.dim)
        policy = adapter_policy(params)
    else:
        policy = params
    encoder = encoder or EncoderConfig()
    state = init_state(template)
    steps = []
    for _ in range(t_max):
        X = encode_state(state, encoder)
        workflow = policy(state, X, rng)
        record = execute_workflow(state, workflow, pool, model, rng, template.noise)
        steps.append(Step(state, X, workflow, record))
        state = update_state(state, workflow, record)
        if state.is_terminal or record.early_exit_triggered:
            break
    return Trajectory(
        steps=tuple(steps),
        utility=terminal_utility(state),
        final_state=state,
        budget=t_max,
        final_answer=final_answer(state),
        template_seed=template.seed,
    )


# =============================================================================
# ENVIRONMENT CONFIGURATION
# =============================================================================


@dataclass(frozen=True)
class EnvConfig:
    """Everything that defines a task distribution."""

    stage_types: tuple[str, ...]
    required_roles: Mapping[str, Sequence[str]]
    pool: str | tuple[str, ...] = "seven"
    capability: float | Mapping[str, float] = 1.0
    ensemble_bonus: float = 0.0
    distractor_penalty: float = 0.0
    noise: float = 0.0
    max_refines: int = 2
    max_steps: int | None = None
    train_tasks: int = 16
    val_tasks: int = 8

    def __post_init__(self):
        object.__setattr__(self, "stage_types", tuple(self.stage_types))
        object.__setattr__(self, "required_roles", {k: tuple(v) for k, v in self.required_roles.items()})
        if not isinstance(self.pool, str):
            object.__setattr__(self, "pool", tuple(self.pool))
        if self.train_tasks < 1 or self.val_tasks < 1:
            raise ValueError("need at least one training and one validation task")

    @property
    def t_max(self) -> int:
        return self.max_steps if self.max_steps is not None else 2 * len(self.stage_types)

    def build_pool(self) -> AgentPool:
        if isinstance(self.pool, str):
            return pool_preset(self.pool, self.stage_types, self.capability)
        return custom_pool(self.pool, self.stage_types, self.capability)

    def outcome_model(self) -> OutcomeModel:
        return OutcomeModel(
            required_roles={s: frozenset(RoleTag(r) for r in roles) for s, roles in self.required_roles.items()},
            ensemble_bonus=self.ensemble_bonus,
            distractor_penalty=self.distractor_penalty,
            max_refines=self.max_refines,
        )

    def train_templates(self) -> list[TaskTemplate]:
        return [TaskTemplate(self.stage_types, self.noise, seed) for seed in range(self.train_tasks)]

    def val_templates(self) -> list[TaskTemplate]:
        start = self.train_tasks
        return [TaskTemplate(self.stage_types, self.noise, seed) for seed in range(start, start + self.val_tasks)]
