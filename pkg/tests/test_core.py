import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evomas.core import (
    AgentPool,
    AgentSpec,
    EvaluatorAssessment,
    LayeredWorkflow,
    RoleTag,
    Status,
    SubtaskPlan,
    TaskState,
    Verdict,
    bipartite_edges,
    custom_pool,
    pool_preset,
)


def layered_workflows(max_agents=8, max_layers=4):
    layer = st.lists(st.integers(0, max_agents - 1), min_size=1, max_size=max_agents, unique=True)
    return st.lists(layer, min_size=1, max_size=max_layers).map(lambda ls: LayeredWorkflow(tuple(map(tuple, ls))))


class TestBipartiteEdges:
    def test_two_into_one(self):
        wf = LayeredWorkflow(((0, 1), (2,)))
        assert bipartite_edges(wf, 1) == [(0, 2), (1, 2)]

    def test_single_layer_has_no_edges(self):
        wf = LayeredWorkflow(((3,),))
        for layer in (0, 1, 2):
            with pytest.raises(IndexError):
                bipartite_edges(wf, layer)

    def test_agent_may_repeat_across_layers(self):
        assert bipartite_edges(LayeredWorkflow(((0,), (0,))), 1) == [(0, 0)]

    @settings(max_examples=1000, deadline=None)
    @given(layered_workflows())
    def test_edge_count_is_product_of_layer_sizes(self, wf):
        for layer in range(1, wf.depth):
            edges = bipartite_edges(wf, layer)
            assert len(edges) == len(wf.layers[layer - 1]) * len(wf.layers[layer])
            assert len(set(edges)) == len(edges)


class TestLayeredWorkflow:
    def test_rejects_empty_layer(self):
        with pytest.raises(ValueError):
            LayeredWorkflow(((0,), ()))

    def test_rejects_repeat_within_layer(self):
        with pytest.raises(ValueError):
            LayeredWorkflow(((1, 1),))

    def test_rejects_no_layers(self):
        with pytest.raises(ValueError):
            LayeredWorkflow(())

    def test_validate_layer_limit_and_range(self):
        wf = LayeredWorkflow(((0,), (1,), (2,), (0,)))
        with pytest.raises(ValueError):
            wf.validate(3, max_layers=3)
        with pytest.raises(ValueError):
            wf.validate(2)
        wf.validate(3, max_layers=4)

    @given(layered_workflows())
    def test_dict_round_trip(self, wf):
        again = LayeredWorkflow.from_dict(json.loads(json.dumps(wf.to_dict())))
        assert again == wf


class TestPools:
    def test_four(self):
        pool = pool_preset("four")
        assert len(pool) == 4
        assert set(pool.roles) == {RoleTag.IO, RoleTag.EARLY_EXIT, RoleTag.WEB_SEARCH, RoleTag.ENSEMBLE}

    def test_seven(self):
        pool = pool_preset("seven")
        assert len(pool) == 7
        assert set(pool_preset("four").roles) <= set(pool.roles)
        assert {RoleTag.MULTI_GENERATE, RoleTag.SELF_REFINE, RoleTag.WEB_BROWSER} <= set(pool.roles)

    def test_ids_match_positions(self):
        for name in ("four", "seven"):
            assert [a.id for a in pool_preset(name)] == list(range(len(pool_preset(name))))

    def test_capability_profile(self):
        pool = pool_preset("four", ("A", "B"), {"A": 0.3})
        assert pool[0].capability("A") == 0.3
        assert pool[0].capability("B") == 1.0

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            pool_preset("nine")

    def test_custom_pool(self):
        pool = custom_pool(["IO", RoleTag.ENSEMBLE], ("A",), 0.5)
        assert pool.roles == (RoleTag.IO, RoleTag.ENSEMBLE)
        assert pool.indices_with_role("Ensemble") == (1,)

    def test_rejects_misnumbered_agents(self):
        with pytest.raises(ValueError):
            AgentPool((AgentSpec(1, "x", RoleTag.IO, {}),))

    def test_rejects_bad_probability(self):
        with pytest.raises(ValueError):
            AgentSpec(0, "x", RoleTag.IO, {"A": 1.5})


class TestTaskState:
    def plan(self):
        return SubtaskPlan((("A", Status.PENDING), ("B", Status.PENDING)), 0)

    def test_with_status_advances(self):
        plan = self.plan().with_status(0, Status.COMPLETED)
        assert plan.active_index == 1
        assert plan.with_status(1, Status.FAILED).active_index is None

    def test_active_cannot_be_completed(self):
        with pytest.raises(ValueError):
            SubtaskPlan((("A", Status.COMPLETED),), 0)

    def test_artifacts_must_reference_completed(self):
        with pytest.raises(ValueError):
            TaskState(0, self.plan(), ((0, 5),))

    def test_round_trip(self):
        plan = self.plan().with_status(0, Status.COMPLETED)
        state = TaskState(3, plan, ((0, 17),), EvaluatorAssessment(Verdict.SUCCESS, 0.9, (1.0, 0.0)), 4, 1)
        again = TaskState.from_dict(json.loads(json.dumps(state.to_dict())))
        assert again == state
        assert hash(again) == hash(state)

    def test_confidence_range(self):
        with pytest.raises(ValueError):
            EvaluatorAssessment(Verdict.FAIL, 1.2)
