import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evomas.adapter import AdapterParams, sequence_log_prob
from evomas.checks import check_sampler, fixture_envs, random_cases
from evomas.core import RoleTag, custom_pool, pool_preset
from evomas.env import OutcomeModel, TaskTemplate
from evomas.errors import CapacityError
from evomas.oracle import (
    FixedPolicy,
    best_deterministic_sequence,
    enumerate_stopped_sequences,
    exact_policy_success,
    monte_carlo_success,
    stopped_set_distribution,
)


def probability_vectors(min_size=1, max_size=6):
    weights = st.lists(st.floats(0.001, 10), min_size=min_size, max_size=max_size)
    return weights.map(lambda w: tuple(np.asarray(w) / np.sum(w)))


class TestEnumeration:
    def test_single_agent(self):
        assert enumerate_stopped_sequences([1.0], 0.5) == [((0,), 1.0)]

    def test_two_halves(self):
        assert sorted(enumerate_stopped_sequences([0.5, 0.5], 0.5)) == [((0,), 0.5), ((1,), 0.5)]

    def test_three_agent_example(self):
        got = dict(enumerate_stopped_sequences([0.7, 0.2, 0.1], 0.6))
        expected = {
            (0,): 0.7,
            (1, 0): 0.2 * 0.7 / 0.8,
            (1, 2, 0): 0.2 * 0.1 / 0.8,
            (2, 0): 0.1 * 0.7 / 0.9,
            (2, 1, 0): 0.1 * 0.2 / 0.9,
        }
        assert got.keys() == expected.keys()
        for seq, prob in expected.items():
            assert got[seq] == pytest.approx(prob, abs=1e-15)
        assert sum(got.values()) == pytest.approx(1.0, abs=1e-12)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            enumerate_stopped_sequences([1 / 9] * 9, 0.5)

    @settings(max_examples=150, deadline=None)
    @given(probability_vectors(), st.floats(0.01, 1.0))
    def test_sum_to_one_and_log_prob_agreement(self, p, rho):
        seqs = enumerate_stopped_sequences(p, rho)
        assert sum(prob for _, prob in seqs) == pytest.approx(1.0, abs=1e-9)
        for seq, prob in seqs:
            assert abs(math.exp(sequence_log_prob(p, seq)) - prob) <= 1e-12
            assert len(set(seq)) == len(seq)

    def test_sampler_frequencies(self):
        cases = random_cases(4, 4, (0.4, 0.7, 1.0), np.random.default_rng(1))
        passed, detail = check_sampler(cases, 20_000, np.random.default_rng(2))
        assert passed, detail


class TestExactPolicySuccess:
    def test_forced_success(self):
        pool = custom_pool([RoleTag.IO], ("A", "B"))
        model = OutcomeModel({"A": ["IO"], "B": ["IO"]})
        assert exact_policy_success(FixedPolicy.uniform(1), TaskTemplate(("A", "B")), model, 4, pool) == 1.0

    def test_impossible(self):
        pool = pool_preset("four", ("A",))
        model = OutcomeModel({"A": ["SelfRefine"]})
        assert exact_policy_success(FixedPolicy.uniform(4), TaskTemplate(("A",)), model, 2, pool) == 0.0

    def test_capacity(self):
        with pytest.raises(CapacityError):
            exact_policy_success(FixedPolicy.uniform(9), TaskTemplate(("A",)), OutcomeModel({"A": ["IO"]}), 2,
                                 custom_pool(["IO"] * 9, ("A",)))
        with pytest.raises(CapacityError):
            exact_policy_success(FixedPolicy.uniform(4), TaskTemplate(tuple("ABCDEFG")), OutcomeModel({}), 14,
                                 pool_preset("four"))

    @pytest.mark.parametrize("index", range(3))
    def test_matches_simulation(self, index):
        name, template, model, pool = fixture_envs()[index]
        policy = FixedPolicy.uniform(len(pool))
        t_max = 2 * len(template.stage_types)
        exact = exact_policy_success(policy, template, model, t_max, pool)
        episodes = 1_000_000
        mc = monte_carlo_success(policy, template, model, t_max, pool, episodes, np.random.default_rng(index))
        assert abs(mc - exact) <= 3 * math.sqrt(exact * (1 - exact) / episodes), name

    def test_uniform_adapter_equals_uniform_fixed_policy(self):
        name, template, model, pool = fixture_envs()[0]
        params = AdapterParams.uniform(len(pool), 8)
        a = exact_policy_success(params, template, model, 4, pool)
        b = exact_policy_success(FixedPolicy.uniform(len(pool)), template, model, 4, pool)
        assert a == pytest.approx(b, abs=1e-12)

    def test_stopped_sets_merge_orders(self):
        dist = stopped_set_distribution([0.25] * 4, 0.5)
        assert set(map(len, dist)) == {2}
        assert all(v == pytest.approx(1 / 6) for v in dist.values())


class TestBestDeterministic:
    def test_solvable(self):
        template = TaskTemplate(("Retrieve", "Answer"))
        model = OutcomeModel({"Retrieve": ["WebSearch"], "Answer": ["IO"]})
        pool = pool_preset("four", template.stage_types)
        plan = best_deterministic_sequence(template, model, 4, pool)
        assert plan.success == 1.0
        assert len(plan.sequence) == 2
        for wf, role in zip(plan.sequence, (RoleTag.WEB_SEARCH, RoleTag.IO)):
            assert role in {pool[i].role_tag for i in wf.agents()}

    def test_required_role_absent(self):
        template = TaskTemplate(("Verify",))
        plan = best_deterministic_sequence(template, OutcomeModel({"Verify": ["SelfRefine"]}), 2, pool_preset("four"))
        assert plan.success == 0.0

    def test_ensemble_bonus_margin(self):
        template = TaskTemplate(("Retrieve", "Answer"))
        model = OutcomeModel({"Retrieve": ["WebSearch"], "Answer": ["IO"]}, ensemble_bonus=0.2)
        pool = pool_preset("four", template.stage_types, 0.7)
        best = best_deterministic_sequence(template, model, 2, pool)
        without = best_deterministic_sequence(template, model, 2, pool, allowed=[0, 1, 2])
        assert best.success == pytest.approx(0.9**2)
        assert without.success == pytest.approx(0.7**2)
        ens = pool.indices_with_role(RoleTag.ENSEMBLE)[0]
        assert all(ens in wf.agents() for wf in best.sequence)
