"""Domain types for the meta-level decision process.

Everything here is an immutable value object: agents and pools, layered
workflows (the meta-action), the structured task state and the records
produced while a trajectory unrolls.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class RoleTag(str, Enum):
    IO = "IO"
    MULTI_GENERATE = "MultiGenerate"
    SELF_REFINE = "SelfRefine"
    WEB_SEARCH = "WebSearch"
    WEB_BROWSER = "WebBrowser"
    EARLY_EXIT = "EarlyExit"
    ENSEMBLE = "Ensemble"
    CUSTOM = "Custom"


class Status(str, Enum):
    PENDING = "Pending"
    COMPLETED = "Completed"
    FAILED = "Failed"


class Verdict(str, Enum):
    SUCCESS = "Success"
    FAIL = "Fail"
    REFINE = "Refine"


# =============================================================================
# AGENTS
# =============================================================================


@dataclass(frozen=True)
class AgentSpec:
    id: int
    name: str
    role_tag: RoleTag
    # stage type -> success probability; only read by the synthetic environment
    capability_profile: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "role_tag", RoleTag(self.role_tag))
        object.__setattr__(self, "capability_profile", dict(self.capability_profile))
        for stage, prob in self.capability_profile.items():
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"capability of {self.name!r} for {stage!r} outside [0, 1]: {prob}")

    def capability(self, stage_type: str) -> float:
        """Success probability when this agent covers ``stage_type`` (1.0 if unset)."""
        return self.capability_profile.get(stage_type, 1.0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "role_tag": self.role_tag.value,
            "capability_profile": dict(sorted(self.capability_profile.items())),
        }


@dataclass(frozen=True)
class AgentPool:
    agents: tuple[AgentSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.agents:
            raise ValueError("agent pool must be non-empty")
        for pos, agent in enumerate(self.agents):
            if agent.id != pos:
                raise ValueError(f"agent {agent.name!r} has id {agent.id}, expected {pos}")

    def __len__(self) -> int:
        return len(self.agents)

    def __getitem__(self, index: int) -> AgentSpec:
        return self.agents[index]

    def __iter__(self):
        return iter(self.agents)

    @property
    def roles(self) -> tuple[RoleTag, ...]:
        return tuple(a.role_tag for a in self.agents)

    def indices_with_role(self, role: RoleTag | str) -> tuple[int, ...]:
        role = RoleTag(role)
        return tuple(a.id for a in self.agents if a.role_tag is role)

    def to_dict(self) -> dict[str, Any]:
        return {"agents": [a.to_dict() for a in self.agents]}


_PRESET_ROLES = {
    "four": (RoleTag.IO, RoleTag.EARLY_EXIT, RoleTag.WEB_SEARCH, RoleTag.ENSEMBLE),
    "seven": (
        RoleTag.IO,
        RoleTag.MULTI_GENERATE,
        RoleTag.SELF_REFINE,
        RoleTag.WEB_SEARCH,
        RoleTag.WEB_BROWSER,
        RoleTag.EARLY_EXIT,
        RoleTag.ENSEMBLE,
    ),
}

_PRESET_NAMES = {
    RoleTag.IO: "io",
    RoleTag.MULTI_GENERATE: "multi_generate",
    RoleTag.SELF_REFINE: "self_refine",
    RoleTag.WEB_SEARCH: "web_search",
    RoleTag.WEB_BROWSER: "web_browser",
    RoleTag.EARLY_EXIT: "early_exit",
    RoleTag.ENSEMBLE: "ensemble",
}

POOL_PRESETS = tuple(_PRESET_ROLES)


def pool_preset(
    name: str,
    stage_types: Iterable[str] = (),
    capability: float | Mapping[str, float] = 1.0,
) -> AgentPool:
    """Build one of the named candidate pools ("four" or "seven").

    ``capability`` fills every agent's capability profile for ``stage_types``:
    either one probability for all stages or a per-stage mapping.
    """
    key = name.lower()
    if key not in _PRESET_ROLES:
        raise ValueError(f"unknown pool preset {name!r}; expected one of {POOL_PRESETS}")
    profile = _capability_profile(stage_types, capability)
    return AgentPool(tuple(
        AgentSpec(i, _PRESET_NAMES[role], role, profile)
        for i, role in enumerate(_PRESET_ROLES[key])
    ))


def custom_pool(
    roles: Sequence[RoleTag | str],
    stage_types: Iterable[str] = (),
    capability: float | Mapping[str, float] = 1.0,
) -> AgentPool:
    """A pool with one agent per entry of ``roles``, in order."""
    profile = _capability_profile(stage_types, capability)
    return AgentPool(tuple(
        AgentSpec(i, f"{RoleTag(r).value.lower()}_{i}", RoleTag(r), profile)
        for i, r in enumerate(roles)
    ))


def _capability_profile(stage_types: Iterable[str], capability: float | Mapping[str, float]) -> dict[str, float]:
    if isinstance(capability, Mapping):
        return {s: float(capability.get(s, 1.0)) for s in stage_types}
    return {s: float(capability) for s in stage_types}


# =============================================================================
# WORKFLOWS
# =============================================================================


@dataclass(frozen=True)
class LayeredWorkflow:
    """Per-layer ordered agent-index sequences; edges are implied, never stored."""

    layers: tuple[tuple[int, ...], ...]
    log_prob: float = 0.0
    per_layer_fallback: tuple[bool, ...] = ()
    # full per-layer categorical distributions at sampling time, when recorded
    layer_probs: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        layers = tuple(tuple(int(i) for i in layer) for layer in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ValueError("workflow needs at least one layer")
        for pos, layer in enumerate(layers, start=1):
            if not layer:
                raise ValueError(f"layer {pos} is empty")
            if len(set(layer)) != len(layer):
                raise ValueError(f"layer {pos} repeats an agent: {layer}")
            if min(layer) < 0:
                raise ValueError(f"layer {pos} has a negative agent index")
        fallback = tuple(bool(f) for f in self.per_layer_fallback) or (False,) * len(layers)
        if len(fallback) != len(layers):
            raise ValueError("per_layer_fallback length must match the layer count")
        object.__setattr__(self, "per_layer_fallback", fallback)
        probs = tuple(tuple(float(x) for x in p) for p in self.layer_probs)
        if probs and len(probs) != len(layers):
            raise ValueError("layer_probs length must match the layer count")
        object.__setattr__(self, "layer_probs", probs)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def agents(self) -> tuple[int, ...]:
        """All agent occurrences, layer by layer (with repeats across layers)."""
        return tuple(itertools.chain.from_iterable(self.layers))

    def validate(self, n_agents: int, max_layers: int | None = None) -> None:
        if max_layers is not None and self.depth > max_layers:
            raise ValueError(f"workflow has {self.depth} layers, limit is {max_layers}")
        if max(self.agents()) >= n_agents:
            raise ValueError(f"agent index out of range for a pool of {n_agents}")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "layers": [list(layer) for layer in self.layers],
            "log_prob": self.log_prob,
            "fallback": list(self.per_layer_fallback),
        }
        if self.layer_probs:
            out["layer_probs"] = [list(p) for p in self.layer_probs]
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> LayeredWorkflow:
        return cls(
            layers=tuple(tuple(layer) for layer in data["layers"]),
            log_prob=float(data.get("log_prob", 0.0)),
            per_layer_fallback=tuple(data.get("fallback", ())),
            layer_probs=tuple(tuple(p) for p in data.get("layer_probs", ())),
        )


def bipartite_edges(workflow: LayeredWorkflow, layer: int) -> list[tuple[int, int]]:
    """Edges from ``layer`` to ``layer + 1`` (1-based): the full Cartesian product."""
    if not 1 <= layer < workflow.depth:
        raise IndexError(f"layer {layer} has no downstream layer in a {workflow.depth}-layer workflow")
    upstream, downstream = workflow.layers[layer - 1], workflow.layers[layer]
    return list(itertools.product(upstream, downstream))


# =============================================================================
# TASK STATE
# =============================================================================


@dataclass(frozen=True)
class SubtaskPlan:
    subtasks: tuple[tuple[str, Status], ...]
    active_index: int | None = None

    def __post_init__(self):
        subtasks = tuple((str(s), Status(st)) for s, st in self.subtasks)
        object.__setattr__(self, "subtasks", subtasks)
        if self.active_index is not None:
            if not 0 <= self.active_index < len(subtasks):
                raise ValueError(f"active index {self.active_index} out of range")
            if subtasks[self.active_index][1] is Status.COMPLETED:
                raise ValueError("the active subtask cannot already be completed")

    def __len__(self) -> int:
        return len(self.subtasks)

    @property
    def stage_types(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.subtasks)

    @property
    def statuses(self) -> tuple[Status, ...]:
        return tuple(st for _, st in self.subtasks)

    def next_pending(self) -> int | None:
        for i, (_, st) in enumerate(self.subtasks):
            if st is Status.PENDING:
                return i
        return None

    def with_status(self, index: int, status: Status) -> SubtaskPlan:
        subtasks = list(self.subtasks)
        subtasks[index] = (subtasks[index][0], status)
        plan = SubtaskPlan(tuple(subtasks), None)
        return SubtaskPlan(plan.subtasks, plan.next_pending())


@dataclass(frozen=True)
class EvaluatorAssessment:
    verdict: Verdict
    confidence: float
    # numeric stand-in for the evaluator's free-text feedback
    feedback: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "verdict", Verdict(self.verdict))
        object.__setattr__(self, "feedback", tuple(float(x) for x in self.feedback))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence outside [0, 1]: {self.confidence}")

    def to_dict(self) -> dict[str, Any]:
        return {"verdict": self.verdict.value, "confidence": self.confidence, "feedback": list(self.feedback)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvaluatorAssessment:
        return cls(Verdict(data["verdict"]), float(data["confidence"]), tuple(data.get("feedback", ())))


@dataclass(frozen=True)
class TaskState:
    objective_id: int
    plan: SubtaskPlan
    completed_artifacts: tuple[tuple[int, int], ...] = ()
    last_assessment: EvaluatorAssessment | None = None
    stage: int = 0
    # consecutive Refine verdicts on the active subtask (failure context)
    refine_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "completed_artifacts", tuple((int(i), int(a)) for i, a in self.completed_artifacts))
        if self.stage < 0:
            raise ValueError("stage counter must be non-negative")
        for idx, _ in self.completed_artifacts:
            if self.plan.subtasks[idx][1] is not Status.COMPLETED:
                raise ValueError(f"artifact recorded for subtask {idx} which is not completed")

    @property
    def is_terminal(self) -> bool:
        return self.plan.active_index is None

    @property
    def all_completed(self) -> bool:
        return all(st is Status.COMPLETED for st in self.plan.statuses)

    @property
    def active_stage_type(self) -> str | None:
        if self.plan.active_index is None:
            return None
        return self.plan.subtasks[self.plan.active_index][0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "objective_id": self.objective_id,
            "subtasks": [[s, st.value] for s, st in self.plan.subtasks],
            "active_index": self.plan.active_index,
            "completed_artifacts": [list(x) for x in self.completed_artifacts],
            "last_assessment": None if self.last_assessment is None else self.last_assessment.to_dict(),
            "stage": self.stage,
            "refine_count": self.refine_count,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TaskState:
        assessment = data.get("last_assessment")
        return cls(
            objective_id=int(data["objective_id"]),
            plan=SubtaskPlan(tuple((s, Status(st)) for s, st in data["subtasks"]), data.get("active_index")),
            completed_artifacts=tuple(tuple(x) for x in data.get("completed_artifacts", ())),
            last_assessment=None if assessment is None else EvaluatorAssessment.from_dict(assessment),
            stage=int(data.get("stage", 0)),
            refine_count=int(data.get("refine_count", 0)),
        )


# =============================================================================
# EXECUTION RECORDS AND TRAJECTORIES
# =============================================================================


@dataclass(frozen=True)
class ExecutionRecord:
    per_layer_outputs: tuple[tuple[int, ...], ...]
    early_exit_triggered: bool
    assessment: EvaluatorAssessment
    step_reward: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "outputs": [list(x) for x in self.per_layer_outputs],
            "early_exit": self.early_exit_triggered,
            "assessment": self.assessment.to_dict(),
            "step_reward": self.step_reward,
        }


def _frozen_array(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Step:
    state: TaskState
    encoding: np.ndarray
    workflow: LayeredWorkflow
    record: ExecutionRecord

    def __post_init__(self):
        object.__setattr__(self, "encoding", _frozen_array(self.encoding))

    def to_dict(self, with_encoding: bool = False) -> dict[str, Any]:
        out = {
            "stage": self.state.stage,
            "active_index": self.state.plan.active_index,
            "workflow": self.workflow.to_dict(),
            "record": self.record.to_dict(),
        }
        if with_encoding:
            out["encoding"] = self.encoding.tolist()
        return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    steps: tuple[Step, ...]
    utility: float
    final_state: TaskState
    budget: int
    final_answer: int | None = None
    template_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if len(self.steps) > self.budget:
            raise ValueError(f"trajectory has {len(self.steps)} steps, budget is {self.budget}")
        for step in self.steps[:-1]:
            if step.record.early_exit_triggered:
                raise ValueError("early exit must end the trajectory")
        if self.utility not in (0.0, 1.0):
            raise ValueError(f"terminal utility must be 0 or 1, got {self.utility}")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def step_rewards(self) -> tuple[float, ...]:
        return tuple(s.record.step_reward for s in self.steps)

    def to_dict(self, with_encoding: bool = False) -> dict[str, Any]:
        return {
            "template_seed": self.template_seed,
            "utility": self.utility,
            "final_answer": self.final_answer,
            "budget": self.budget,
            "length": len(self.steps),
            "steps": [s.to_dict(with_encoding) for s in self.steps],
            "final_state": self.final_state.to_dict(),
        }
