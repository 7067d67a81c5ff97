"""Brute-force ground truth for small instances.

* every stopped sampling sequence and its probability, by depth-first search;
* exact success probability of a policy, by dynamic programming over task
  states with the per-step workflow distribution marginalized exactly;
* the best deterministic single-agent-per-layer policy, by exhaustive search;
* a vectorized Monte Carlo simulator (Gumbel top-k sampling) that shares no
  code with the sequential sampler, used to cross-check the dynamic program.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from evomas.adapter import (
    PROB_FLOOR,
    AdapterParams,
    EncoderConfig,
    encode_state,
    layer_distribution,
    sample_cumulative,
)
from evomas.core import AgentPool, LayeredWorkflow, RoleTag, TaskState
from evomas.env import OutcomeModel, TaskTemplate, agent_counts, build_record, init_state, update_state
from evomas.errors import CapacityError

MAX_ENUM_AGENTS = 8
MAX_STAGES = 6
MAX_STEPS = 16


def enumerate_stopped_sequences(p: Sequence[float], rho: float) -> list[tuple[tuple[int, ...], float]]:
    """All ordered draws that stop exactly when their mass reaches ``rho``.

    Probabilities below the sampler's floor are treated as zero and the rest
    renormalized, so each factor is p_j / (S - mass drawn so far) with S the
    retained total.
    """
    p = [float(x) for x in p]
    if len(p) > MAX_ENUM_AGENTS:
        raise CapacityError(f"enumeration is limited to {MAX_ENUM_AGENTS} agents, got {len(p)}")
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    keep = [x if x >= PROB_FLOOR else 0.0 for x in p]
    total = sum(keep)
    out: list[tuple[tuple[int, ...], float]] = []

    def visit(prefix: tuple[int, ...], mass: float, prob: float) -> None:
        rest = [j for j in range(len(p)) if j not in prefix and keep[j] > 0]
        if prefix and (mass >= rho or not rest):
            out.append((prefix, prob))
            return
        for j in rest:
            visit(prefix + (j,), mass + p[j], prob * keep[j] / (total - mass))

    visit((), 0.0, 1.0)
    return out


def stopped_set_distribution(p: Sequence[float], rho: float) -> dict[frozenset[int], float]:
    dist: dict[frozenset[int], float] = defaultdict(float)
    for seq, prob in enumerate_stopped_sequences(p, rho):
        dist[frozenset(seq)] += prob
    return dict(dist)


# =============================================================================
# POLICIES
# =============================================================================


@dataclass(frozen=True, eq=False)
class FixedPolicy:
    """State-independent layer distributions, optionally one per stage type."""

    probs: Mapping[str, tuple[float, ...]] | tuple[float, ...]
    mass_threshold: float = 0.5
    max_layers: int = 3

    @classmethod
    def uniform(cls, n_agents: int, mass_threshold: float = 0.5, max_layers: int = 3) -> FixedPolicy:
        return cls(tuple([1.0 / n_agents] * n_agents), mass_threshold, max_layers)

    def distribution(self, state: TaskState) -> np.ndarray:
        if isinstance(self.probs, Mapping):
            return np.asarray(self.probs[state.active_stage_type], dtype=float)
        return np.asarray(self.probs, dtype=float)

    def cache_key(self, state: TaskState, X: np.ndarray):
        return state.active_stage_type if isinstance(self.probs, Mapping) else None

    def layer_probs(self, state: TaskState, X: np.ndarray, prior: frozenset[int]) -> np.ndarray:
        return self.distribution(state)

    def __call__(self, state: TaskState, X: np.ndarray, rng: np.random.Generator) -> LayeredWorkflow:
        p = self.distribution(state)
        layers, total = [], 0.0
        for _ in range(self.max_layers):
            out = sample_cumulative(p, self.mass_threshold, rng)
            layers.append(out.ordered_indices)
            total += out.log_prob
        return LayeredWorkflow(tuple(layers), total)


@dataclass(frozen=True, eq=False)
class _AdapterView:
    params: AdapterParams

    @property
    def mass_threshold(self) -> float:
        return self.params.mass_threshold

    @property
    def max_layers(self) -> int:
        return self.params.max_layers

    def cache_key(self, state: TaskState, X: np.ndarray):
        return X.tobytes()

    def layer_probs(self, state: TaskState, X: np.ndarray, prior: frozenset[int]) -> np.ndarray:
        return layer_distribution(X, self.params, prior)


# =============================================================================
# EXACT POLICY SUCCESS
# =============================================================================


def _check_capacity(template: TaskTemplate, pool: AgentPool, t_max: int) -> None:
    if len(pool) > MAX_ENUM_AGENTS:
        raise CapacityError(f"exact evaluation is limited to {MAX_ENUM_AGENTS} agents, got {len(pool)}")
    if len(template.stage_types) > MAX_STAGES:
        raise CapacityError(f"exact evaluation is limited to {MAX_STAGES} stages")
    if t_max > MAX_STEPS:
        raise CapacityError(f"exact evaluation is limited to {MAX_STEPS} meta-steps")


def _counts_workflow(counts: tuple[int, ...]) -> LayeredWorkflow:
    present = tuple(i for i, c in enumerate(counts) if c)
    return LayeredWorkflow((present,))


class _StateDP:
    """Shared value recursion; subclasses supply the per-step choices."""

    def __init__(self, template, model, t_max, pool):
        self.template, self.model, self.t_max, self.pool = template, model, t_max, pool
        self.noise = template.noise
        self.memo: dict[TaskState, float] = {}
        self.ee = tuple(a.role_tag is RoleTag.EARLY_EXIT for a in pool)

    def outcome_value(self, state: TaskState, counts: tuple[int, ...]) -> float:
        """Expected utility after executing a workflow with these agent counts."""
        s = self.model.success_probability(state.active_stage_type, self.pool, counts)
        p_obs = s * (1 - self.noise) + (1 - s) * self.noise
        exits = any(c and e for c, e in zip(counts, self.ee))
        wf = _counts_workflow(counts)
        value = 0.0
        for observed, q in ((True, p_obs), (False, 1.0 - p_obs)):
            if q <= 0:
                continue
            record = build_record(state, wf, self.pool, self.model, observed, self.noise)
            nxt = update_state(state, wf, record)
            value += q * (float(nxt.all_completed) if exits else self.value(nxt))
        return value

    def value(self, state: TaskState) -> float:
        if state.all_completed:
            return 1.0
        if state.is_terminal or state.stage >= self.t_max:
            return 0.0
        if state not in self.memo:
            self.memo[state] = self.step_value(state)
        return self.memo[state]

    def step_value(self, state: TaskState) -> float:
        raise NotImplementedError


class _PolicyDP(_StateDP):
    def __init__(self, policy, template, model, t_max, pool, encoder):
        super().__init__(template, model, t_max, pool)
        self.policy, self.encoder = policy, encoder
        self.step_cache: dict = {}

    def count_distribution(self, state: TaskState) -> dict[tuple[int, ...], float]:
        X = encode_state(state, self.encoder)
        key = self.policy.cache_key(state, X)
        if key in self.step_cache:
            return self.step_cache[key]
        n = len(self.pool)
        frontier: dict[tuple[frozenset[int], tuple[int, ...]], float] = {(frozenset(), (0,) * n): 1.0}
        set_cache: dict[frozenset[int], dict[frozenset[int], float]] = {}
        for _ in range(self.policy.max_layers):
            nxt: dict = defaultdict(float)
            for (prior, counts), mass in frontier.items():
                if prior not in set_cache:
                    p = self.policy.layer_probs(state, X, prior)
                    set_cache[prior] = stopped_set_distribution(p, self.policy.mass_threshold)
                for chosen, q in set_cache[prior].items():
                    new_counts = tuple(c + (i in chosen) for i, c in enumerate(counts))
                    nxt[(prior | chosen, new_counts)] += mass * q
            frontier = nxt
        dist: dict[tuple[int, ...], float] = defaultdict(float)
        for (_, counts), mass in frontier.items():
            dist[counts] += mass
        self.step_cache[key] = dict(dist)
        return self.step_cache[key]

    def step_value(self, state: TaskState) -> float:
        return sum(m * self.outcome_value(state, c) for c, m in self.count_distribution(state).items())


def exact_policy_success(
    policy: AdapterParams | FixedPolicy,
    template: TaskTemplate,
    model: OutcomeModel,
    t_max: int,
    pool: AgentPool,
    encoder: EncoderConfig | None = None,
) -> float:
    """Expected terminal utility of ``policy`` on ``template``, computed exactly."""
    _check_capacity(template, pool, t_max)
    if isinstance(policy, AdapterParams):
        if policy.n_agents != len(pool):
            raise ValueError("adapter and pool disagree on the number of agents")
        encoder = encoder or EncoderConfig(dim=policy.dim)
        view = _AdapterView(policy)
    else:
        view = policy
    dp = _PolicyDP(view, template, model, t_max, pool, encoder or EncoderConfig())
    return dp.value(init_state(template))


class _ClosedLoopDP(_StateDP):
    def __init__(self, choose, template, model, t_max, pool):
        super().__init__(template, model, t_max, pool)
        self.choose = choose

    def step_value(self, state: TaskState) -> float:
        wf = self.choose(state)
        wf.validate(len(self.pool))
        return self.outcome_value(state, agent_counts(wf, len(self.pool)))


def exact_workflow_success(
    choose: Callable[[TaskState], LayeredWorkflow],
    template: TaskTemplate,
    model: OutcomeModel,
    t_max: int,
    pool: AgentPool,
) -> float:
    """Exact success of a deterministic policy that maps each state to one workflow."""
    _check_capacity(template, pool, t_max)
    return _ClosedLoopDP(choose, template, model, t_max, pool).value(init_state(template))


# =============================================================================
# BEST DETERMINISTIC POLICY
# =============================================================================


@dataclass(frozen=True, eq=False)
class DeterministicPlan:
    success: float
    # workflows along the branch where every step that can succeed does
    sequence: tuple[LayeredWorkflow, ...]
    table: Mapping[TaskState, LayeredWorkflow]


class _BestDP(_StateDP):
    def __init__(self, template, model, t_max, pool, candidates):
        super().__init__(template, model, t_max, pool)
        self.candidates = candidates
        self.choice: dict[TaskState, LayeredWorkflow] = {}

    def step_value(self, state: TaskState) -> float:
        # ties go to the workflow most likely to finish the active stage now
        best, best_wf = (-1.0, -1.0), None
        for counts, wf in self.candidates:
            key = (self.outcome_value(state, counts),
                   self.model.success_probability(state.active_stage_type, self.pool, counts))
            if key[0] > best[0] + 1e-15 or (abs(key[0] - best[0]) <= 1e-15 and key[1] > best[1]):
                best, best_wf = key, wf
        self.choice[state] = best_wf
        return best[0]


def best_deterministic_sequence(
    template: TaskTemplate,
    model: OutcomeModel,
    t_max: int,
    pool: AgentPool,
    layers: int = 3,
    allowed: Sequence[int] | None = None,
) -> DeterministicPlan:
    """Exhaustive search over closed-loop policies that put one agent in each layer."""
    _check_capacity(template, pool, t_max)
    if layers > 4:
        raise CapacityError("deterministic search is limited to 4 layers")
    agents = tuple(range(len(pool))) if allowed is None else tuple(allowed)
    seen: dict[tuple[int, ...], LayeredWorkflow] = {}
    for combo in itertools.product(agents, repeat=layers):
        counts = tuple(combo.count(i) for i in range(len(pool)))
        seen.setdefault(counts, LayeredWorkflow(tuple((i,) for i in combo)))
    dp = _BestDP(template, model, t_max, pool, tuple(seen.items()))
    state = init_state(template)
    success = dp.value(state)

    path = []
    while state in dp.choice:
        wf = dp.choice[state]
        path.append(wf)
        stage_success = model.success_probability(state.active_stage_type, pool, agent_counts(wf, len(pool))) > 0
        record = build_record(state, wf, pool, model, stage_success, template.noise)
        if record.early_exit_triggered:
            break
        state = update_state(state, wf, record)
    return DeterministicPlan(success, tuple(path), dict(dp.choice))


# =============================================================================
# VECTORIZED MONTE CARLO
# =============================================================================


def _gumbel_stopped_sets(p: np.ndarray, rho: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, N) boolean membership of stopped draws, via Gumbel top-k ordering."""
    with np.errstate(divide="ignore"):
        logp = np.where(p >= PROB_FLOOR, np.log(p), -np.inf)
    keys = logp[None, :] + rng.gumbel(size=(n, p.size))
    order = np.argsort(-keys, axis=1)
    cum = np.cumsum(p[order], axis=1)
    # position k is drawn iff the mass before it is still short of rho
    before = np.concatenate([np.zeros((n, 1)), cum[:, :-1]], axis=1)
    drawn = (before < rho) & np.isfinite(np.take_along_axis(keys, order, axis=1))
    member = np.zeros((n, p.size), dtype=bool)
    np.put_along_axis(member, order, drawn, axis=1)
    return member


def monte_carlo_success(
    policy: FixedPolicy,
    template: TaskTemplate,
    model: OutcomeModel,
    t_max: int,
    pool: AgentPool,
    episodes: int,
    rng: np.random.Generator,
) -> float:
    """Success rate of a fixed policy over ``episodes`` independent simulated tasks."""
    H, N = len(template.stage_types), len(pool)
    roles = [a.role_tag for a in pool]
    ee = np.array([r is RoleTag.EARLY_EXIT for r in roles])
    ens = np.array([r is RoleTag.ENSEMBLE for r in roles])
    # per stage: required mask and capability vector
    req = np.array([[r in model.roles_for(s) for r in roles] for s in template.stage_types])
    cap = np.array([[a.capability(s) for a in pool] for s in template.stage_types])
    dists = []
    for s in template.stage_types:
        probe = init_state(TaskTemplate((s,), template.noise, template.seed))
        dists.append(np.asarray(policy.distribution(probe), float))

    active = np.zeros(episodes, dtype=int)
    refines = np.zeros(episodes, dtype=int)
    completed = np.zeros(episodes, dtype=int)
    failed = np.zeros(episodes, dtype=bool)
    running = np.ones(episodes, dtype=bool)
    for _ in range(t_max):
        idx = np.flatnonzero(running)
        if idx.size == 0:
            break
        stage = active[idx]
        counts = np.zeros((idx.size, N), dtype=int)
        for h in range(H):
            rows = np.flatnonzero(stage == h)
            for _layer in range(policy.max_layers):
                counts[rows] += _gumbel_stopped_sets(dists[h], policy.mass_threshold, rows.size, rng)
        present = counts > 0
        r = req[stage]
        hit = np.any(present & r, axis=1)
        base = np.max(np.where(present & r, cap[stage], 0.0), axis=1)
        bonus = np.any(present & ens & ~r, axis=1) * model.ensemble_bonus
        distract = np.sum(np.where(~r & ~ens, counts, 0), axis=1) * model.distractor_penalty
        prob = np.where(hit, np.clip(base + bonus - distract, 0.0, 1.0), 0.0)
        success = rng.random(idx.size) < prob
        flip = rng.random(idx.size) < template.noise
        success ^= flip
        give_up = ~success & (refines[idx] >= model.max_refines)
        refines[idx] = np.where(success | give_up, 0, refines[idx] + 1)
        completed[idx] += success
        failed[idx] |= give_up
        active[idx] += success | give_up
        exited = np.any(present & ee, axis=1)
        running[idx] = (active[idx] < H) & ~exited
    return float(np.mean((completed == H) & ~failed))
