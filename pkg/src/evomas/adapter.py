"""The workflow adapter: state encoding, cross-attention scoring and
cumulative-mass sampling of layered workflows.

One layer of the forward pass::

    c   = mean(E[previously selected])          (zero for the first layer)
    X~  = [X; c]
    H   = softmax(X~ W_Q (E W_K)^T / sqrt(d)) (E W_V)
    h   = mean of the rows of H
    a_i = cos(h, e_i)
    p   = softmax(a / temperature)

after which agents are drawn without replacement from ``p`` until the
selected set holds at least ``mass_threshold`` of the original mass.
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from evomas.core import LayeredWorkflow, Status, TaskState
from evomas.errors import DegenerateVectorError, ShapeError

# probabilities below this are never drawn and drop out of residual renormalization
PROB_FLOOR = 1e-12

PARAM_NAMES = ("agent_embeddings", "w_query", "w_key", "w_value")

# Encoder token rows, in order.
TOKEN_FIELDS = ("objective", "active_subtask", "status_histogram", "assessment", "stage")

# Alias: an (M, d) float64 matrix, one token row per state field group.
StateEncoding = np.ndarray


def _readonly(a, shape=None) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    if shape is not None and a.shape != shape:
        raise ShapeError(f"expected shape {shape}, got {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class AdapterParams:
    """Learnable adapter parameters plus the sampling hyperparameters.

    ``scale_attention`` toggles the 1/sqrt(d) factor on attention logits.
    ``value_projection=False`` is a diagnostic ablation that uses V = E, which
    takes ``w_value`` off the computation path.
    """

    agent_embeddings: np.ndarray
    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray
    temperature: float = 0.2
    mass_threshold: float = 0.5
    max_layers: int = 3
    scale_attention: bool = True
    value_projection: bool = True

    def __post_init__(self):
        E = _readonly(self.agent_embeddings)
        if E.ndim != 2 or E.shape[0] < 1 or E.shape[1] < 1:
            raise ShapeError(f"agent embeddings must be a non-empty (N, d) matrix, got {E.shape}")
        d = E.shape[1]
        object.__setattr__(self, "agent_embeddings", E)
        for name in PARAM_NAMES[1:]:
            object.__setattr__(self, name, _readonly(getattr(self, name), (d, d)))
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0 < self.mass_threshold <= 1:
            raise ValueError(f"mass threshold must lie in (0, 1], got {self.mass_threshold}")
        if self.max_layers < 1:
            raise ValueError("max_layers must be at least 1")

    @property
    def n_agents(self) -> int:
        return self.agent_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.agent_embeddings.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def hyper(self) -> dict:
        return {
            "temperature": self.temperature,
            "mass_threshold": self.mass_threshold,
            "max_layers": self.max_layers,
            "scale_attention": self.scale_attention,
            "value_projection": self.value_projection,
        }

    def with_arrays(self, **arrays: np.ndarray) -> AdapterParams:
        return replace(self, **arrays)

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in PARAM_NAMES:
            h.update(np.ascontiguousarray(getattr(self, name), dtype="<f8").tobytes())
        h.update(repr(sorted(self.hyper().items())).encode())
        return h.hexdigest()

    @classmethod
    def init(
        cls,
        n_agents: int,
        dim: int,
        rng: np.random.Generator,
        init_scale: float = 1.0,
        spread: float | None = None,
        **hyper,
    ) -> AdapterParams:
        """Random initialization.

        With ``spread`` set, embeddings are one shared unit direction plus
        per-agent noise of that scale, which starts every layer close to
        uniform; otherwise they are independent Gaussian rows. Query/key maps
        are small Gaussians and the value map is identity plus noise.
        """
        noise = rng.standard_normal((n_agents, dim)) / np.sqrt(dim)
        if spread is None:
            E = noise
        else:
            shared = rng.standard_normal(dim)
            E = shared / np.linalg.norm(shared) + spread * noise
        wq = init_scale * rng.standard_normal((dim, dim)) / np.sqrt(dim)
        wk = init_scale * rng.standard_normal((dim, dim)) / np.sqrt(dim)
        wv = np.eye(dim) + 0.1 * init_scale * rng.standard_normal((dim, dim)) / np.sqrt(dim)
        return cls(E, wq, wk, wv, **hyper)

    @classmethod
    def uniform(cls, n_agents: int, dim: int, **hyper) -> AdapterParams:
        """Identical embeddings for every agent, so every layer distribution is uniform."""
        e = np.zeros(dim)
        e[0] = 1.0
        E = np.tile(e, (n_agents, 1))
        return cls(E, np.eye(dim), np.eye(dim), np.eye(dim), **hyper)


# =============================================================================
# STATE ENCODER
# =============================================================================


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 16
    seed: int = 0
    # cap on the stage counter that receives a distinct token
    max_stage: int = 64


@functools.lru_cache(maxsize=4096)
def _hashed_unit(key: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}|{key}".encode(), digest_size=8).digest()
    v = np.random.default_rng(int.from_bytes(digest, "little")).standard_normal(dim)
    v /= np.linalg.norm(v)
    v.flags.writeable = False
    return v


def _bounded(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1.0 else v


def encode_state(state: TaskState, config: EncoderConfig = EncoderConfig()) -> np.ndarray:
    """Deterministic feature-hashing encoder: one token row per field group.

    Each row has L2 norm at most 1. A missing assessment or a terminal plan
    (no active subtask) encodes to an all-zero row.
    """
    d, seed = config.dim, config.seed
    X = np.zeros((len(TOKEN_FIELDS), d))

    X[0] = _hashed_unit(f"objective:{state.objective_id}", d, seed)

    if state.active_stage_type is not None:
        X[1] = _hashed_unit(f"active:{state.active_stage_type}", d, seed)

    H = len(state.plan)
    for status in Status:
        count = sum(st is status for st in state.plan.statuses)
        X[2] += (count / H) * _hashed_unit(f"status:{status.value}", d, seed)
    X[2] = _bounded(X[2])

    a = state.last_assessment
    if a is not None:
        row = a.confidence * _hashed_unit(f"verdict:{a.verdict.value}", d, seed)
        for k, f in enumerate(a.feedback):
            row = row + f * _hashed_unit(f"feedback:{k}", d, seed)
        X[3] = _bounded(row)

    X[4] = _hashed_unit(f"stage:{min(state.stage, config.max_stage)}", d, seed)
    return X


# =============================================================================
# FORWARD PASS
# =============================================================================


def layer_context(previously_selected: Iterable[int], E: np.ndarray) -> np.ndarray:
    """Mean embedding of the agents chosen in earlier layers (set semantics)."""
    chosen = sorted(set(int(i) for i in previously_selected))
    if not chosen:
        return np.zeros(E.shape[1])
    return E[chosen].mean(axis=0)


def _row_softmax(S: np.ndarray) -> np.ndarray:
    S = S - S.max(axis=1, keepdims=True)
    W = np.exp(S)
    return W / W.sum(axis=1, keepdims=True)


def _attention_scale(params: AdapterParams) -> float:
    return 1.0 / np.sqrt(params.dim) if params.scale_attention else 1.0


def _check_attention_shapes(X_tilde: np.ndarray, E: np.ndarray, params: AdapterParams) -> None:
    d = params.dim
    if X_tilde.ndim != 2 or X_tilde.shape[1] != d:
        raise ShapeError(f"state tokens must be (M+1, {d}), got {X_tilde.shape}")
    if E.ndim != 2 or E.shape[1] != d:
        raise ShapeError(f"agent embeddings must be (N, {d}), got {E.shape}")


def attention_weights(X_tilde: np.ndarray, E: np.ndarray, params: AdapterParams) -> np.ndarray:
    """Row-stochastic (M+1, N) matrix of attention from state tokens to agents."""
    X_tilde, E = np.asarray(X_tilde, float), np.asarray(E, float)
    _check_attention_shapes(X_tilde, E, params)
    Q = X_tilde @ params.w_query
    K = E @ params.w_key
    return _row_softmax(_attention_scale(params) * Q @ K.T)


def cross_attention(X_tilde: np.ndarray, E: np.ndarray, params: AdapterParams) -> np.ndarray:
    E = np.asarray(E, float)
    A = attention_weights(X_tilde, E, params)
    V = E @ params.w_value if params.value_projection else E
    return A @ V


def pool_query(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, float)
    if H.ndim != 2 or H.shape[0] == 0:
        raise ShapeError(f"cannot pool an empty token matrix of shape {H.shape}")
    return H.mean(axis=0)


def score_agents(h: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Cosine similarity of the query ``h`` with every agent embedding."""
    h, E = np.asarray(h, float), np.asarray(E, float)
    h_norm = np.linalg.norm(h)
    e_norms = np.linalg.norm(E, axis=1)
    if not (np.isfinite(h_norm) and h_norm > 0):
        raise DegenerateVectorError("query vector has zero norm")
    bad = np.flatnonzero(~(np.isfinite(e_norms) & (e_norms > 0)))
    if bad.size:
        raise DegenerateVectorError(f"agent embeddings with zero norm: {bad.tolist()}")
    return np.clip(E @ h / (e_norms * h_norm), -1.0, 1.0)


def softmax_temperature(alpha: np.ndarray, temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(alpha, float) / temperature
    w = np.exp(z - z.max())
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class LayerTape:
    """Intermediates of one layer's forward pass."""

    prior: tuple[int, ...]
    context: np.ndarray
    x_tilde: np.ndarray
    query: np.ndarray
    key: np.ndarray
    value: np.ndarray
    attention: np.ndarray
    hidden: np.ndarray
    pooled: np.ndarray
    scores: np.ndarray
    probs: np.ndarray


def layer_forward(X: np.ndarray, params: AdapterParams, prior: Iterable[int] = ()) -> LayerTape:
    """Forward pass for one layer given the agents selected in earlier layers."""
    X = np.asarray(X, float)
    E = params.agent_embeddings
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeError(f"state encoding must be a non-empty (M, d) matrix, got {X.shape}")
    prior = tuple(sorted(set(int(i) for i in prior)))
    c = layer_context(prior, E)
    Xt = np.vstack([X, c])
    _check_attention_shapes(Xt, E, params)
    Q = Xt @ params.w_query
    K = E @ params.w_key
    V = E @ params.w_value if params.value_projection else E
    A = _row_softmax(_attention_scale(params) * Q @ K.T)
    H = A @ V
    h = H.mean(axis=0)
    alpha = score_agents(h, E)
    p = softmax_temperature(alpha, params.temperature)
    return LayerTape(prior, c, Xt, Q, K, V, A, H, h, alpha, p)


def layer_distribution(X: np.ndarray, params: AdapterParams, prior: Iterable[int] = ()) -> np.ndarray:
    return layer_forward(X, params, prior).probs


# =============================================================================
# CUMULATIVE-MASS SAMPLING
# =============================================================================


@dataclass(frozen=True)
class SamplingOutcome:
    ordered_indices: tuple[int, ...]
    pick_probs: tuple[float, ...]
    cumulative_mass: float
    fallback_used: bool
    log_prob: float
    # agents kept out of renormalization because p < PROB_FLOOR
    excluded: tuple[int, ...] = ()


def _check_distribution(p: np.ndarray) -> None:
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"probabilities must be a non-empty vector, got shape {p.shape}")
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum():.12g}, not 1")


def _fallback(p: np.ndarray) -> SamplingOutcome:
    scores = np.where(np.isfinite(p), p, -np.inf)
    i = int(np.argmax(scores)) if np.any(np.isfinite(scores)) else 0
    pi = float(p[i])
    log_prob = float(np.log(pi)) if np.isfinite(pi) and 0 < pi <= 1 else 0.0
    mass = pi if np.isfinite(pi) else 0.0
    return SamplingOutcome((i,), (1.0,), mass, True, log_prob)


def sample_cumulative(p: Sequence[float], rho: float, rng: np.random.Generator) -> SamplingOutcome:
    """Draw agents without replacement until their original mass reaches ``rho``.

    Each pick is categorical over the remaining candidates, renormalized by
    their residual mass. Drawing also stops when no candidates remain, which
    only matters when ``rho`` is 1 and the mass falls short by rounding.
    Non-finite probabilities fall back to the single most probable agent.
    """
    p = np.asarray(p, dtype=np.float64)
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if p.ndim == 1 and p.size and not np.all(np.isfinite(p)):
        return _fallback(p)
    _check_distribution(p)

    available = p >= PROB_FLOOR
    excluded = tuple(np.flatnonzero(~available).tolist())
    seq: list[int] = []
    picks: list[float] = []
    mass = 0.0
    log_prob = 0.0
    while mass < rho:
        cand = np.flatnonzero(available)
        if cand.size == 0:
            break
        residual = p[cand].sum()
        if not residual > 0:
            break
        q = p[cand] / residual
        k = int(np.searchsorted(np.cumsum(q), rng.random(), side="right"))
        k = min(k, cand.size - 1)
        i = int(cand[k])
        seq.append(i)
        picks.append(float(q[k]))
        log_prob += np.log(p[i]) - np.log(residual)
        mass += p[i]
        available[i] = False
    if not seq:
        return _fallback(p)
    return SamplingOutcome(tuple(seq), tuple(picks), float(mass), False, float(log_prob), excluded)


def sequence_log_prob(p: Sequence[float], ordered_indices: Sequence[int]) -> float:
    """Log-probability of drawing ``ordered_indices`` in that order.

    Each factor is p_i over the residual mass of agents not yet drawn, with
    sub-floor probabilities left out of the residual (same measure as
    :func:`sample_cumulative`).
    """
    p = np.asarray(p, dtype=np.float64)
    seq = [int(i) for i in ordered_indices]
    if len(set(seq)) != len(seq):
        raise ValueError(f"sequence repeats an index: {seq}")
    if any(not 0 <= i < p.size for i in seq):
        raise ValueError(f"sequence index out of range for {p.size} agents")
    available = p >= PROB_FLOOR
    total = 0.0
    for i in seq:
        total += np.log(p[i]) - np.log(p[available].sum())
        available[i] = False
    return float(total)


def greedy_sequence(p: Sequence[float], rho: float) -> tuple[int, ...]:
    """Most probable agents first (lowest index on ties) until mass reaches ``rho``."""
    p = np.asarray(p, dtype=np.float64)
    order = np.argsort(-p, kind="stable")
    seq, mass = [], 0.0
    for i in order:
        if mass >= rho or p[i] < PROB_FLOOR:
            break
        seq.append(int(i))
        mass += p[i]
    return tuple(seq) or (int(order[0]),)


# =============================================================================
# WORKFLOW CONSTRUCTION
# =============================================================================


def build_workflow(X: np.ndarray, params: AdapterParams, rng: np.random.Generator) -> LayeredWorkflow:
    """Sample one layered workflow; always ``params.max_layers`` layers deep."""
    layers, fallback, probs = [], [], []
    prior: set[int] = set()
    total = 0.0
    for _ in range(params.max_layers):
        p = layer_forward(X, params, prior).probs
        out = sample_cumulative(p, params.mass_threshold, rng)
        layers.append(out.ordered_indices)
        fallback.append(out.fallback_used)
        probs.append(tuple(p))
        total += out.log_prob
        prior.update(out.ordered_indices)
    return LayeredWorkflow(tuple(layers), total, tuple(fallback), tuple(probs))


def greedy_workflow(X: np.ndarray, params: AdapterParams) -> LayeredWorkflow:
    """Deterministic workflow taking the most probable agents in each layer."""
    layers, probs = [], []
    prior: set[int] = set()
    total = 0.0
    for _ in range(params.max_layers):
        p = layer_forward(X, params, prior).probs
        seq = greedy_sequence(p, params.mass_threshold)
        layers.append(seq)
        probs.append(tuple(p))
        total += sequence_log_prob(p, seq)
        prior.update(seq)
    return LayeredWorkflow(tuple(layers), total, (), tuple(probs))


def workflow_log_prob(X: np.ndarray, params: AdapterParams, workflow: LayeredWorkflow) -> float:
    """Recompute the log-probability of a recorded workflow under ``params``."""
    total = 0.0
    prior: set[int] = set()
    for layer, fell_back in zip(workflow.layers, workflow.per_layer_fallback):
        p = layer_forward(X, params, prior).probs
        if fell_back:
            total += float(np.log(p[layer[0]]))
        else:
            total += sequence_log_prob(p, layer)
        prior.update(layer)
    return total


def probability_snapshot(
    X: np.ndarray,
    params: AdapterParams,
    workflow: LayeredWorkflow,
    meta_step: int = 0,
    agent_names: Sequence[str] | None = None,
) -> list[dict]:
    """One record per layer: the full distribution and the agents selected."""
    records = []
    prior: set[int] = set()
    for pos, layer in enumerate(workflow.layers, start=1):
        p = layer_forward(X, params, prior).probs
        rec = {"meta_step": meta_step, "layer": pos, "probs": [float(x) for x in p], "selected": list(layer)}
        if agent_names is not None:
            rec["agents"] = list(agent_names)
        records.append(rec)
        prior.update(layer)
    return records
