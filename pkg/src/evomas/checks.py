"""Self-certification: compare the sampler, the analytic log-probabilities,
the manual gradients and the rollout simulator against brute-force ground truth."""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np

from evomas.adapter import AdapterParams, build_workflow, sample_cumulative, sequence_log_prob
from evomas.autograd import finite_diff_check
from evomas.core import pool_preset
from evomas.env import OutcomeModel, TaskTemplate
from evomas.errors import CapacityError
from evomas.oracle import MAX_ENUM_AGENTS, FixedPolicy, enumerate_stopped_sequences, exact_policy_success, monte_carlo_success


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<22} {self.detail}  ({self.seconds:.1f}s)"


@dataclass(frozen=True)
class SamplingCase:
    p: tuple[float, ...]
    rho: float


def random_cases(count: int, max_agents: int, rho_choices, rng: np.random.Generator) -> list[SamplingCase]:
    """Dirichlet probability vectors cycling N through 2..max_agents."""
    if max_agents > MAX_ENUM_AGENTS:
        raise CapacityError(f"oracle checks enumerate at most {MAX_ENUM_AGENTS} agents, got {max_agents}")
    if max_agents < 2:
        raise ValueError("need at least two agents")
    cases = []
    for k in range(count):
        n = 2 + k % (max_agents - 1)
        p = rng.dirichlet(np.ones(n))
        cases.append(SamplingCase(tuple(float(x) for x in p), float(rho_choices[k % len(rho_choices)])))
    return cases


def _enumerate(case: SamplingCase, corrupt: bool):
    seqs = enumerate_stopped_sequences(case.p, case.rho)
    if corrupt:
        seq, prob = seqs[0]
        seqs[0] = (seq, prob * 1.01)
    return seqs


def check_sum_to_one(cases, corrupt=False, tol=1e-9) -> tuple[bool, str]:
    worst = max(abs(sum(prob for _, prob in _enumerate(c, corrupt)) - 1.0) for c in cases)
    return worst <= tol, f"max |sum-1| = {worst:.2e} (tol {tol:g})"


def check_log_prob(cases, corrupt=False, tol=1e-12) -> tuple[bool, str]:
    worst = 0.0
    for c in cases:
        for seq, prob in _enumerate(c, corrupt):
            worst = max(worst, abs(math.exp(sequence_log_prob(c.p, seq)) - prob))
    return worst <= tol, f"max |exp(logp)-enum| = {worst:.2e} (tol {tol:g})"


def check_sampler(cases, samples: int, rng: np.random.Generator, corrupt=False, min_prob=0.01, sigmas=3.0):
    """Empirical sequence frequencies of the sampler against enumerated probabilities."""
    worst, failures = 0.0, 0
    for c in cases:
        p = np.asarray(c.p)
        freq = Counter(sample_cumulative(p, c.rho, rng).ordered_indices for _ in range(samples))
        for seq, prob in _enumerate(c, corrupt):
            if prob < min_prob:
                continue
            sigma = math.sqrt(prob * (1 - prob) / samples)
            z = abs(freq[seq] / samples - prob) / sigma if sigma > 0 else 0.0
            worst = max(worst, z)
            failures += z > sigmas
    return failures == 0, f"worst z = {worst:.2f}, {failures} sequences beyond {sigmas:g} sigma"


def check_gradients(instances: int, rng: np.random.Generator, tol=1e-4, n_agents=4, dim=8, tokens=3):
    worst, failures = 0.0, 0
    for _ in range(instances):
        params = AdapterParams.init(n_agents, dim, rng)
        X = rng.standard_normal((tokens, dim))
        wf = build_workflow(X, params, rng)
        err = finite_diff_check(X, params, wf)
        worst = max(worst, err)
        failures += err >= tol
    return failures == 0, f"max rel err = {worst:.2e} over {instances} instances, {failures} above {tol:g}"


def fixture_envs() -> list[tuple[str, TaskTemplate, OutcomeModel, object]]:
    """Small environments with exactly computable uniform-policy success."""
    four = pool_preset("four", ("Retrieve", "Answer"))
    noisy = pool_preset("four", ("Retrieve", "Answer"), capability=0.8)
    seven = pool_preset("seven", ("Retrieve",))
    return [
        ("four/H=2", TaskTemplate(("Retrieve", "Answer")),
         OutcomeModel({"Retrieve": ["WebSearch"], "Answer": ["IO"]}), four),
        ("four/H=2/bonus", TaskTemplate(("Retrieve", "Answer")),
         OutcomeModel({"Retrieve": ["WebSearch"], "Answer": ["IO"]}, ensemble_bonus=0.1), noisy),
        ("seven/H=1", TaskTemplate(("Retrieve",)), OutcomeModel({"Retrieve": ["WebSearch"]}), seven),
    ]


def check_dp_vs_monte_carlo(episodes: int, rng: np.random.Generator, rho=0.5, sigmas=3.0):
    details, ok = [], True
    for name, template, model, pool in fixture_envs():
        policy = FixedPolicy.uniform(len(pool), rho)
        t_max = 2 * len(template.stage_types)
        exact = exact_policy_success(policy, template, model, t_max, pool)
        mc = monte_carlo_success(policy, template, model, t_max, pool, episodes, rng)
        sigma = math.sqrt(max(exact * (1 - exact), 1e-12) / episodes)
        ok &= abs(mc - exact) <= sigmas * sigma
        details.append(f"{name}: exact {exact:.4f} mc {mc:.4f}")
    return ok, "; ".join(details)


def run_checks(oracle_config, progress: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    cfg = oracle_config
    cases = random_cases(cfg.cases, cfg.max_agents, cfg.rho_choices, np.random.default_rng([cfg.seed, 0]))

    def stream(k: int) -> np.random.Generator:
        return np.random.default_rng([cfg.seed, k])

    plan = [
        ("sum-to-one", lambda: check_sum_to_one(cases, cfg.corrupt)),
        ("log-prob agreement", lambda: check_log_prob(cases, cfg.corrupt)),
        ("sampler agreement", lambda: check_sampler(cases, cfg.mc_samples, stream(1), cfg.corrupt)),
        ("gradient finite-diff", lambda: check_gradients(cfg.grad_instances, stream(2))),
        ("exact DP vs simulation", lambda: check_dp_vs_monte_carlo(cfg.dp_episodes, stream(3))),
    ]
    results = []
    for name, fn in plan:
        start = time.perf_counter()
        passed, detail = fn()
        result = CheckResult(name, bool(passed), detail, time.perf_counter() - start)
        results.append(result)
        if progress is not None:
            progress(result)
    return results
