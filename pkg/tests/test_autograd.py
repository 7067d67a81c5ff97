import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evomas.adapter import AdapterParams, build_workflow, sequence_log_prob, softmax_temperature, workflow_log_prob
from evomas.autograd import (
    ParamGradients,
    finite_diff_check,
    grad_log_prob,
    grad_log_prob_wrt_scores,
    numeric_gradient,
    record_forward,
)
from evomas.core import LayeredWorkflow
from evomas.errors import ShapeError


def instance(seed, n=4, d=8, m=3, **hyper):
    rng = np.random.default_rng(seed)
    params = AdapterParams.init(n, d, rng, **hyper)
    X = rng.standard_normal((m, d))
    return X, params, build_workflow(X, params, rng)


def score_log_prob(alpha, lam, seq):
    return sequence_log_prob(softmax_temperature(alpha, lam), seq)


def numeric_score_grad(alpha, lam, seq, step=1e-6):
    g = np.zeros_like(alpha)
    for i in range(alpha.size):
        a, b = alpha.copy(), alpha.copy()
        a[i] += step
        b[i] -= step
        g[i] = (score_log_prob(a, lam, seq) - score_log_prob(b, lam, seq)) / (2 * step)
    return g


class TestGradLogProb:
    def test_single_agent_is_zero(self):
        X, params, wf = instance(0, n=1)
        grads = grad_log_prob(X, params, wf)
        assert grads.norm() == 0.0
        assert finite_diff_check(X, params, wf) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        X, params, wf = instance(seed)
        assert finite_diff_check(X, params, wf) < 1e-4

    def test_without_attention_scaling(self):
        X, params, wf = instance(11, scale_attention=False)
        assert finite_diff_check(X, params, wf) < 1e-4

    def test_value_ablation_zeroes_value_gradient(self):
        X, params, _ = instance(3)
        params = AdapterParams(*params.arrays().values(), value_projection=False)
        wf = build_workflow(X, params, np.random.default_rng(0))
        grads = grad_log_prob(X, params, wf)
        assert not grads.w_value.any()
        assert finite_diff_check(X, params, wf) < 1e-4

    def test_fallback_layer(self):
        X, params, _ = instance(4)
        wf = LayeredWorkflow(((2,), (0, 1), (3,)), per_layer_fallback=(True, False, False))
        assert finite_diff_check(X, params, wf) < 1e-4

    def test_deterministic(self):
        X, params, wf = instance(5)
        a, b = grad_log_prob(X, params, wf), grad_log_prob(X, params, wf)
        assert a.flat().tobytes() == b.flat().tobytes()

    def test_smaller_step_is_more_accurate(self):
        X, params, wf = instance(6)
        assert finite_diff_check(X, params, wf, step=1e-2) > finite_diff_check(X, params, wf, step=1e-5)

    def test_shape_mismatch(self):
        X, params, wf = instance(7)
        with pytest.raises(ShapeError):
            grad_log_prob(X[:, :4], params, wf)

    def test_bad_step(self):
        X, params, wf = instance(8)
        with pytest.raises(ValueError):
            finite_diff_check(X, params, wf, step=0.0)

    def test_tape_reproduces_forward(self):
        X, params, wf = instance(9)
        tape = record_forward(X, params, wf)
        assert tape.log_prob == workflow_log_prob(X, params, wf)
        assert len(tape.layers) == wf.depth


class TestScoreGradient:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=2, max_size=5), st.floats(0.1, 2.0), st.randoms(use_true_random=False))
    def test_doubling_temperature_halves_gradient(self, alpha, lam, rnd):
        alpha = np.asarray(alpha)
        order = list(range(alpha.size))
        rnd.shuffle(order)
        seq = tuple(order[: rnd.randint(1, alpha.size)])
        g1 = grad_log_prob_wrt_scores(alpha, lam, seq)
        g2 = grad_log_prob_wrt_scores(2 * alpha, 2 * lam, seq)
        np.testing.assert_allclose(g2, g1 / 2, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(g1, numeric_score_grad(alpha, lam, seq), rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(g2, numeric_score_grad(2 * alpha, 2 * lam, seq), rtol=1e-5, atol=1e-7)


class TestParamGradients:
    def test_arithmetic(self):
        X, params, wf = instance(10)
        g = grad_log_prob(X, params, wf)
        np.testing.assert_allclose((g + g).flat(), g.scale(2.0).flat())
        assert ParamGradients.zeros_like(params).norm() == 0.0
        assert g.norm() == pytest.approx(np.linalg.norm(g.flat()))

    def test_numeric_gradient_shapes(self):
        X, params, wf = instance(12, n=2, d=3, m=2)
        g = numeric_gradient(X, params, wf)
        for name, a in g.arrays().items():
            assert a.shape == getattr(params, name).shape
