"""Reverse-mode gradients of the workflow log-probability.

The sampled orders are constants (score-function estimator); only log P of
the realized sequences is differentiated. The backward pass mirrors
``adapter.layer_forward`` line by line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evomas.adapter import (
    PARAM_NAMES,
    PROB_FLOOR,
    AdapterParams,
    LayerTape,
    _attention_scale,
    layer_forward,
    workflow_log_prob,
)
from evomas.core import LayeredWorkflow
from evomas.errors import ShapeError


@dataclass(frozen=True, eq=False)
class ParamGradients:
    agent_embeddings: np.ndarray
    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray

    @classmethod
    def zeros_like(cls, params: AdapterParams) -> ParamGradients:
        return cls(*(np.zeros_like(getattr(params, n)) for n in PARAM_NAMES))

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def __add__(self, other: ParamGradients) -> ParamGradients:
        return ParamGradients(*(getattr(self, n) + getattr(other, n) for n in PARAM_NAMES))

    def scale(self, factor: float) -> ParamGradients:
        return ParamGradients(*(factor * getattr(self, n) for n in PARAM_NAMES))

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays().values())))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])


@dataclass(frozen=True, eq=False)
class ForwardTape:
    layers: tuple[LayerTape, ...]
    sequences: tuple[tuple[int, ...], ...]
    fallback: tuple[bool, ...]
    log_prob: float


def record_forward(X: np.ndarray, params: AdapterParams, workflow: LayeredWorkflow) -> ForwardTape:
    tapes = []
    prior: set[int] = set()
    for layer in workflow.layers:
        tapes.append(layer_forward(X, params, prior))
        prior.update(layer)
    return ForwardTape(
        tuple(tapes),
        workflow.layers,
        workflow.per_layer_fallback,
        workflow_log_prob(X, params, workflow),
    )


def grad_sequence_wrt_probs(p: np.ndarray, seq: tuple[int, ...], fell_back: bool = False) -> np.ndarray:
    """d log P(seq) / d p, with the candidate sets of each pick held fixed."""
    g = np.zeros_like(p)
    if fell_back:
        g[seq[0]] = 1.0 / p[seq[0]]
        return g
    available = p >= PROB_FLOOR
    for i in seq:
        cand = available.copy()
        g[i] += 1.0 / p[i]
        g[cand] -= 1.0 / p[cand].sum()
        available[i] = False
    return g


def grad_log_prob_wrt_scores(
    alpha: np.ndarray, temperature: float, seq: tuple[int, ...], fell_back: bool = False
) -> np.ndarray:
    """d log P(seq) / d alpha for p = softmax(alpha / temperature)."""
    alpha = np.asarray(alpha, float)
    z = alpha / temperature
    p = np.exp(z - z.max())
    p /= p.sum()
    gp = grad_sequence_wrt_probs(p, seq, fell_back)
    gz = p * (gp - gp @ p)
    return gz / temperature


def _layer_backward(tape: LayerTape, seq, fell_back, params: AdapterParams, grads: dict[str, np.ndarray]) -> None:
    E = params.agent_embeddings
    s = _attention_scale(params)

    dalpha = grad_log_prob_wrt_scores(tape.scores, params.temperature, seq, fell_back)

    # cosine scores
    h = tape.pooled
    h_norm = np.linalg.norm(h)
    e_norms = np.linalg.norm(E, axis=1)
    alpha = tape.scores
    dh = (dalpha / (e_norms * h_norm)) @ E - (dalpha @ alpha) * h / h_norm**2
    grads["agent_embeddings"] += (dalpha / (e_norms * h_norm))[:, None] * h[None, :] \
        - (dalpha * alpha / e_norms**2)[:, None] * E

    # mean pool over token rows
    rows = tape.hidden.shape[0]
    dH = np.broadcast_to(dh / rows, tape.hidden.shape)

    # H = A V
    A = tape.attention
    dA = dH @ tape.value.T
    dV = A.T @ dH
    dS = A * (dA - np.sum(dA * A, axis=1, keepdims=True))

    # S = s Q K^T
    dQ = s * dS @ tape.key
    dK = s * dS.T @ tape.query

    grads["w_query"] += tape.x_tilde.T @ dQ
    grads["w_key"] += E.T @ dK
    grads["agent_embeddings"] += dK @ params.w_key.T
    if params.value_projection:
        grads["w_value"] += E.T @ dV
        grads["agent_embeddings"] += dV @ params.w_value.T
    else:
        grads["agent_embeddings"] += dV

    # context row c = mean(E[prior])
    if tape.prior:
        dc = (dQ @ params.w_query.T)[-1]
        grads["agent_embeddings"][list(tape.prior)] += dc / len(tape.prior)


def grad_log_prob(X: np.ndarray, params: AdapterParams, workflow: LayeredWorkflow) -> ParamGradients:
    """Gradient of the workflow's log-probability with respect to all parameters."""
    X = np.asarray(X, float)
    if X.ndim != 2 or X.shape[1] != params.dim:
        raise ShapeError(f"state encoding must be (M, {params.dim}), got {X.shape}")
    workflow.validate(params.n_agents)
    grads = {n: np.zeros_like(getattr(params, n)) for n in PARAM_NAMES}
    if params.n_agents == 1:
        return ParamGradients(**grads)
    prior: set[int] = set()
    for seq, fell_back in zip(workflow.layers, workflow.per_layer_fallback):
        tape = layer_forward(X, params, prior)
        _layer_backward(tape, seq, fell_back, params, grads)
        prior.update(seq)
    return ParamGradients(**grads)


def numeric_gradient(X: np.ndarray, params: AdapterParams, workflow: LayeredWorkflow, step: float = 1e-6) -> ParamGradients:
    """Central finite differences over every scalar parameter."""
    out = {}
    for name in PARAM_NAMES:
        base = np.array(getattr(params, name))
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += step
            minus[idx] -= step
            f_plus = workflow_log_prob(X, params.with_arrays(**{name: plus}), workflow)
            f_minus = workflow_log_prob(X, params.with_arrays(**{name: minus}), workflow)
            g[idx] = (f_plus - f_minus) / (2 * step)
        out[name] = g
    return ParamGradients(**out)


def finite_diff_check(X: np.ndarray, params: AdapterParams, workflow: LayeredWorkflow, step: float = 1e-6) -> float:
    """Max over parameters of |analytic - numeric| / max(|numeric|, 1e-8)."""
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    analytic = grad_log_prob(X, params, workflow).flat()
    numeric = numeric_gradient(X, params, workflow, step).flat()
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)))
