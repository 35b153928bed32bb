"""Attention-only stacks of conditioning heads.

Each layer forms its own associations over the residual stream of the layer
below, so a later layer can key on what an earlier one retrieved. This
module holds the causal forward pass, a hand-wired two-layer routing demo,
and a Monte Carlo study of how retrieval failures compound with depth.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .capacity import resolve_threads, wilson_halfwidth
from .core import Activation, Norm, apply_activation, as_matrix, stream_rng, unit_rows
from .kernels import HeadConfig, ProjectionSet, linear_attention_batch

PROPAGATION_STREAM = 2
SMALL_ERROR = 0.2


@dataclass(frozen=True)
class LayerSpec:
    heads: tuple
    model_dim: int

    def __post_init__(self):
        heads = tuple((p, c) for p, c in self.heads)
        if not heads:
            raise ValueError("a layer needs at least one head")
        m = self.model_dim
        for i, (proj, cfg) in enumerate(heads):
            if not isinstance(proj, ProjectionSet) or not isinstance(cfg, HeadConfig):
                raise TypeError(f"head {i} must be a (ProjectionSet, HeadConfig) pair")
            if not proj.W_Q.shape[0] == proj.W_K.shape[0] == proj.W_V.shape[0] == m:
                raise ValueError(f"head {i}: projections must read {m}-dim rows")
            out_dim = m if proj.W_O is None else proj.W_O.shape[1]
            if proj.W_O is None and proj.d_v != m:
                raise ValueError(f"head {i}: identity W_O needs d_v = {m}, got {proj.d_v}")
            if out_dim != m:
                raise ValueError(f"head {i}: W_O must write {m}-dim rows, got {out_dim}")
        object.__setattr__(self, "heads", heads)


@dataclass(frozen=True)
class StackedNetwork:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        if len({layer.model_dim for layer in layers}) != 1:
            raise ValueError("all layers must share the residual width")
        object.__setattr__(self, "layers", layers)

    @property
    def model_dim(self) -> int:
        return self.layers[0].model_dim


def head_output(Y: np.ndarray, proj: ProjectionSet, cfg: HeadConfig) -> np.ndarray:
    """Causal ``Norm(f(y_i W_Q) S_i)`` for every position, before ``W_O``."""
    Q = apply_activation(cfg.f, Y @ proj.W_Q)
    K = apply_activation(cfg.f, Y @ proj.W_K)
    V = cfg.alpha * apply_activation(cfg.g, Y @ proj.W_V)
    return linear_attention_batch(Q, K, V, Activation.IDENTITY, cfg.norm)


def forward_stack(net: StackedNetwork, X) -> np.ndarray:
    """Residual stream after every layer: ``y <- y + sum_h o_h W_O``."""
    Y = as_matrix(X, "X")
    if Y.shape[1] != net.model_dim:
        raise ValueError(f"input rows must have {net.model_dim} entries, got {Y.shape[1]}")
    for layer in net.layers:
        update = np.zeros_like(Y)
        for proj, cfg in layer.heads:
            o = head_output(Y, proj, cfg)
            update += o if proj.W_O is None else o @ proj.W_O
        Y = Y + update
    return Y


# Residual layout of the routing demo (m = 16):
#   0-4   concept slot: animal, mammal, reptile, dog, lizard
#   5-6   category paired with the subject (read as values by layer 1)
#   7-8   instance paired with the category (read as values by layer 2)
#   9-10  category recalled by layer 1 (keys and queries of layer 2)
CONCEPTS = ("animal", "mammal", "reptile", "dog", "lizard")
CHAIN_DIM = 16
_CATEGORY_SLOT = {"mammal": 5, "reptile": 6}
_INSTANCE_SLOT = {"dog": 7, "lizard": 8}
_RECALLED_SLOT = (9, 10)
_READOUT_GAIN = 100.0
_ROUTES = {"mammal": "dog", "reptile": "lizard"}


def concept_vectors() -> dict:
    eye = np.eye(CHAIN_DIM)
    return {name: eye[i] for i, name in enumerate(CONCEPTS)}


def _selector(rows: Sequence[int]) -> np.ndarray:
    W = np.zeros((CHAIN_DIM, len(rows)))
    W[list(rows), np.arange(len(rows))] = 1.0
    return W


def _writer(cols: Sequence[int], gain: float = 1.0) -> np.ndarray:
    W = np.zeros((len(cols), CHAIN_DIM))
    W[np.arange(len(cols)), list(cols)] = gain
    return W


def chain_network() -> StackedNetwork:
    cfg = HeadConfig(Activation.IDENTITY, Activation.IDENTITY, 1.0, Norm.RMS)
    # Layer 1: subject concept -> paired category, written to the recalled slot.
    layer1 = ProjectionSet(
        W_Q=_selector(range(5)),
        W_K=_selector(range(5)),
        W_V=_selector(list(_CATEGORY_SLOT.values())),
        W_O=_writer(_RECALLED_SLOT),
    )
    # Layer 2: recalled category -> paired instance, written back as a concept.
    layer2 = ProjectionSet(
        W_Q=_selector(_RECALLED_SLOT),
        W_K=_selector(_RECALLED_SLOT),
        W_V=_selector(list(_INSTANCE_SLOT.values())),
        W_O=_writer([CONCEPTS.index("dog"), CONCEPTS.index("lizard")], _READOUT_GAIN),
    )
    return StackedNetwork((
        LayerSpec(((layer1, cfg),), CHAIN_DIM),
        LayerSpec(((layer2, cfg),), CHAIN_DIM),
    ))


def chain_sequence(context: Optional[str]) -> np.ndarray:
    """Token rows for "if an animal is a <category>, check whether it is a <instance>".

    ``context=None`` drops both pairings and leaves only subject tokens.
    The last row is the query token.
    """
    c = concept_vectors()
    if context is None:
        return np.stack([c["animal"], c["animal"], c["animal"]])
    if context not in _ROUTES:
        raise ValueError(f"context must be one of {sorted(_ROUTES)} or None")
    premise = c["animal"].copy()
    premise[_CATEGORY_SLOT[context]] = 1.0
    check = c["animal"].copy()
    check[_INSTANCE_SLOT[_ROUTES[context]]] = 1.0
    return np.stack([premise, check, c["animal"]])


def build_chain_demo(context: Optional[str] = "mammal"):
    """Return ``(network, tokens, expected)`` for the two-layer routing demo.

    The network is the same for every context; only the token sequence
    changes. ``expected`` is the concept the query token should end on, or
    ``None`` when there is no premise.
    """
    X = chain_sequence(context)
    expected = None if context is None else concept_vectors()[_ROUTES[context]]
    return chain_network(), X, expected


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def run_chain_demo(threshold: float = 0.99, reject: float = 0.1) -> list:
    """Cosine of the final query token with ``dog`` and ``lizard`` per context."""
    c = concept_vectors()
    rows = []
    for context in ("mammal", "reptile", None):
        net, X, expected = build_chain_demo(context)
        y = forward_stack(net, X)[-1]
        cos_dog, cos_lizard = cosine(y, c["dog"]), cosine(y, c["lizard"])
        if context is None:
            passed = cos_dog < reject and cos_lizard < reject
            target = "none"
        else:
            target = _ROUTES[context]
            passed = cosine(y, expected) > threshold
        rows.append({
            "context": context or "none",
            "expected": target,
            "cos_dog": cos_dog,
            "cos_lizard": cos_lizard,
            "passed": passed,
        })
    return rows


@dataclass(frozen=True)
class PropagationConfig:
    L: int
    H: int
    n: int
    d_k: int
    delta: float = 0.5
    trials: int = 20_000
    seed: int = 0

    def __post_init__(self):
        for name in ("L", "H", "n", "d_k", "trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @property
    def head_bound(self) -> float:
        return self.n / (self.delta * self.d_k)


@dataclass(frozen=True)
class PropagationResult:
    config: PropagationConfig
    empirical_error_rate: float
    ci_halfwidth: float
    bound: float
    approx_bound: float
    vacuous: bool
    head_failure_rate: float
    per_layer_rates: tuple = field(default_factory=tuple)

    @property
    def within_bound(self) -> bool:
        return self.empirical_error_rate <= self.bound + 3 * self.ci_halfwidth


def propagation_bounds(cfg: PropagationConfig):
    """Closed bound ``1 - (1 - x^H)^L`` and first-order ``L x^H``, ``x = n/(delta d_k)``."""
    x = cfg.head_bound
    vacuous = x >= 1.0
    bound = 1.0 if vacuous else 1.0 - (1.0 - x ** cfg.H) ** cfg.L
    return bound, cfg.L * x ** cfg.H, vacuous


def _head_failures(cfg: PropagationConfig, start: int, stop: int) -> np.ndarray:
    """Boolean array (trials, L, H): did the designated retrieval fail."""
    L, H, n, d = cfg.L, cfg.H, cfg.n, cfg.d_k
    count = (stop - start) * L * H
    K = np.empty((count, n, d))
    V = np.empty((count, n, d))
    target = np.empty(count, dtype=np.int64)
    i = 0
    for t in range(start, stop):
        for layer in range(L):
            for head in range(H):
                rng = stream_rng(cfg.seed, PROPAGATION_STREAM, d, n, t, layer, head)
                K[i] = unit_rows(rng, n, d)
                V[i] = unit_rows(rng, n, d)
                target[i] = rng.integers(n)
                i += 1
    rows = np.arange(count)
    probe = K[rows, target]
    c = np.einsum("bnd,bd->bn", K, probe)
    signal = c[rows, target][:, None] * V[rows, target]
    c[rows, target] = 0.0
    noise = np.einsum("bn,bnd->bd", c, V)
    fail = np.einsum("bd,bd->b", noise, noise) >= cfg.delta * np.einsum("bd,bd->b", signal, signal)
    return fail.reshape(stop - start, L, H)


def error_propagation_experiment(cfg: PropagationConfig,
                                 threads: Optional[int] = None) -> PropagationResult:
    """Network error rate when every layer must retrieve one association.

    Each head of each layer holds its own independent memory of ``n`` unit
    key/value pairs. A head fails under the same noise condition as the
    capacity experiments, a layer fails when all of its heads fail, and the
    network fails when any layer fails.
    """
    threads = resolve_threads(threads)
    per_trial = cfg.L * cfg.H * cfg.n * 2 * cfg.d_k
    size = max(1, min(4096, 2_000_000 // per_trial))
    bounds = [(s, min(s + size, cfg.trials)) for s in range(0, cfg.trials, size)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        fails = np.concatenate(list(pool.map(lambda b: _head_failures(cfg, *b), bounds)))
    layer_fail = fails.all(axis=2)
    net_fail = layer_fail.any(axis=1)
    errors = int(net_fail.sum())
    bound, approx, vacuous = propagation_bounds(cfg)
    return PropagationResult(
        config=cfg,
        empirical_error_rate=errors / cfg.trials,
        ci_halfwidth=wilson_halfwidth(errors, cfg.trials),
        bound=bound,
        approx_bound=approx,
        vacuous=vacuous,
        head_failure_rate=float(fails.mean()),
        per_layer_rates=tuple(float(r) for r in layer_fail.mean(axis=0)),
    )


@dataclass(frozen=True)
class ScalingFit:
    axis: str
    slope: float
    predicted_slope: float
    intercept: float
    residual: float
    law_residual: float
    points_used: int
    excluded: tuple

    @property
    def large_residual(self) -> bool:
        """The data sit far (over 0.25 in log units, RMS) from the predicted law."""
        return self.law_residual > 0.25


_AXES = ("L", "n", "d_k", "H")


def scaling_fit(results: Sequence[PropagationResult], axis: str) -> ScalingFit:
    """Least-squares slope of log error rate against the chosen axis.

    ``L``, ``n`` and ``d_k`` are fitted log-log, ``H`` log-linear. Points with
    a zero rate or a rate at or above 0.2 are dropped with a warning. The
    predicted slopes are +1 for ``L``, +H for ``n``, -H for ``d_k`` and
    ``log(n / (delta d_k))`` for ``H``.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {_AXES}, got {axis!r}")
    results = list(results)
    if not results:
        raise ValueError("no results to fit")
    fixed = [a for a in _AXES if a != axis] + ["delta"]
    for a in fixed:
        if len({getattr(r.config, a) for r in results}) > 1:
            raise ValueError(f"{a} must be held fixed along the {axis} axis")

    used, excluded = [], []
    for r in results:
        rate = r.empirical_error_rate
        if 0.0 < rate < SMALL_ERROR:
            used.append(r)
        else:
            excluded.append(getattr(r.config, axis))
    if excluded:
        warnings.warn(
            f"excluded {len(excluded)} point(s) outside the small-error regime "
            f"(0 < rate < {SMALL_ERROR}) at {axis} = {excluded}",
            RuntimeWarning,
            stacklevel=2,
        )
    if len(used) < 2:
        raise ValueError(f"need at least 2 usable points along {axis}, got {len(used)}")
    if len(used) < 4:
        warnings.warn(f"fit along {axis} uses only {len(used)} points", RuntimeWarning, stacklevel=2)

    cfg = used[0].config
    x = np.array([getattr(r.config, axis) for r in used], dtype=np.float64)
    if axis != "H":
        x = np.log(x)
    y = np.log([r.empirical_error_rate for r in used])
    predicted = {
        "L": 1.0,
        "n": float(cfg.H),
        "d_k": -float(cfg.H),
        "H": math.log(cfg.n / (cfg.delta * cfg.d_k)),
    }[axis]

    if np.ptp(x) == 0:
        raise ValueError(f"all usable points share the same {axis}")
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    law_intercept = np.mean(y - predicted * x)
    law_residual = float(np.sqrt(np.mean((y - (predicted * x + law_intercept)) ** 2)))
    return ScalingFit(
        axis=axis,
        slope=float(slope),
        predicted_slope=predicted,
        intercept=float(intercept),
        residual=residual,
        law_residual=law_residual,
        points_used=len(used),
        excluded=tuple(excluded),
    )
