"""Hebbian association, retrieval and the attention forms it reproduces."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from .core import Activation, Norm, apply_activation, as_matrix, as_row, normalize

# Denominators with absolute value below this are treated as zero.
DENOM_EPS = 1e-12


class DegenerateDenominatorWarning(RuntimeWarning):
    """Raised (as a warning) when denominator-normalised rows are zeroed."""


@dataclass(frozen=True)
class HeadConfig:
    f: Activation = Activation.IDENTITY
    g: Activation = Activation.IDENTITY
    alpha: float = 1.0
    norm: Norm = Norm.NONE

    def __post_init__(self):
        object.__setattr__(self, "f", Activation(self.f))
        object.__setattr__(self, "g", Activation(self.g))
        object.__setattr__(self, "norm", Norm(self.norm))
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")


@dataclass(frozen=True)
class ProjectionSet:
    """Projections of one head. ``W_O`` of ``None`` means identity."""

    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_O: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("W_Q", "W_K", "W_V"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        if self.W_Q.shape[1] != self.W_K.shape[1]:
            raise ValueError(
                f"W_Q and W_K must share d_k, got {self.W_Q.shape[1]} and {self.W_K.shape[1]}"
            )
        if self.W_O is not None:
            W_O = as_matrix(self.W_O, "W_O")
            if W_O.shape[0] != self.d_v:
                raise ValueError(f"W_O must have {self.d_v} rows, got {W_O.shape[0]}")
            object.__setattr__(self, "W_O", W_O)

    @property
    def d_k(self) -> int:
        return self.W_K.shape[1]

    @property
    def d_v(self) -> int:
        return self.W_V.shape[1]


@dataclass(frozen=True)
class AssociativeState:
    """Synaptic matrix ``S`` (d_k x d_v) and the number of updates applied.

    States are immutable; every update returns a new state.
    """

    S: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        S = np.array(self.S, dtype=np.float64)
        if S.ndim != 2:
            raise ValueError(f"S must be 2-D, got shape {S.shape}")
        if not np.all(np.isfinite(S)):
            raise FloatingPointError("associative state became non-finite")
        S.flags.writeable = False
        object.__setattr__(self, "S", S)

    @classmethod
    def zeros(cls, d_k: int, d_v: int) -> "AssociativeState":
        return cls(np.zeros((d_k, d_v)), 0)

    @property
    def d_k(self) -> int:
        return self.S.shape[0]

    @property
    def d_v(self) -> int:
        return self.S.shape[1]


def project(X, W) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    W = as_matrix(W, "W")
    if X.shape[-1] != W.shape[0]:
        raise ValueError(f"cannot project {X.shape} by {W.shape}")
    return X @ W


def _pair_rows(keys, values, d_k=None, d_v=None):
    K = np.asarray(keys, dtype=np.float64)
    V = np.asarray(values, dtype=np.float64)
    if K.size == 0 and V.size == 0 and K.ndim < 2:
        if d_k is None or d_v is None:
            raise ValueError("d_k and d_v are required for an empty pair list")
        return np.zeros((0, d_k)), np.zeros((0, d_v))
    if K.ndim != 2 or V.ndim != 2:
        raise ValueError("keys and values must be sequences of row vectors")
    if K.shape[0] != V.shape[0]:
        raise ValueError(f"got {K.shape[0]} keys but {V.shape[0]} values")
    if (d_k is not None and K.shape[1] != d_k) or (d_v is not None and V.shape[1] != d_v):
        raise ValueError("key/value dimensions do not match the requested state shape")
    return K, V


def hebbian_accumulate(keys, values, cfg: HeadConfig, d_k=None, d_v=None) -> AssociativeState:
    """``S = alpha * sum_j f(k_j)^T g(v_j)`` over all pairs.

    ``d_k``/``d_v`` are only needed to shape the zero state when no pairs
    are given.
    """
    K, V = _pair_rows(keys, values, d_k, d_v)
    S = cfg.alpha * (apply_activation(cfg.f, K).T @ apply_activation(cfg.g, V))
    return AssociativeState(S, K.shape[0])


def _check_query(q, state: AssociativeState) -> np.ndarray:
    q = as_row(q, "q")
    if q.shape[0] != state.d_k:
        raise ValueError(f"query has dim {q.shape[0]}, state expects {state.d_k}")
    return q


def retrieve(q, state: AssociativeState, cfg: HeadConfig) -> np.ndarray:
    """Similarity-weighted recall ``r = f(q) S``."""
    q = _check_query(q, state)
    return apply_activation(cfg.f, q) @ state.S


def conditioning_output(q, state: AssociativeState, cfg: HeadConfig) -> np.ndarray:
    return normalize(cfg.norm, retrieve(q, state, cfg))


def _check_qkv(Q, K, V):
    Q, K, V = as_matrix(Q, "Q"), as_matrix(K, "K"), as_matrix(V, "V")
    if not Q.shape[0] == K.shape[0] == V.shape[0]:
        raise ValueError(f"Q, K, V must have equal row counts, got {Q.shape}, {K.shape}, {V.shape}")
    if Q.shape[1] != K.shape[1]:
        raise ValueError(f"Q and K must share their width, got {Q.shape[1]} and {K.shape[1]}")
    return Q, K, V


def _warn_degenerate(count: int):
    if count:
        warnings.warn(
            f"{count} denominator-normalised row(s) had a zero denominator and were set to zero",
            DegenerateDenominatorWarning,
            stacklevel=3,
        )


def linear_attention_batch(Q, K, V, phi=Activation.ELU_PLUS_ONE, norm=Norm.RMS, *,
                           return_degenerate: bool = False):
    """Causal linear attention computed from the masked ``phi(Q) phi(K)^T`` matrix.

    With ``norm="denominator"`` each row is divided by its attention-weight
    sum; rows whose sum vanishes come back as zeros and are counted. When
    ``return_degenerate`` is true the count is returned alongside the output.
    """
    Q, K, V = _check_qkv(Q, K, V)
    norm = Norm(norm)
    A = np.tril(apply_activation(phi, Q) @ apply_activation(phi, K).T)
    out = A @ V
    degenerate = 0
    if norm is Norm.DENOMINATOR:
        den = A.sum(axis=1)
        bad = np.abs(den) < DENOM_EPS
        degenerate = int(bad.sum())
        out = np.divide(out, den[:, None], out=np.zeros_like(out), where=~bad[:, None])
        _warn_degenerate(degenerate)
    else:
        out = normalize(norm, out)
    if return_degenerate:
        return out, degenerate
    return out


class RecurrentLinearAttention:
    """Constant-memory causal linear attention, one token at a time.

    Keeps ``S_i = S_{i-1} + phi(k_i)^T v_i`` and, for denominator
    normalisation, the running key sum.
    """

    def __init__(self, phi=Activation.ELU_PLUS_ONE, norm=Norm.RMS):
        self.phi = Activation(phi)
        self.norm = Norm(norm)
        self.S = None
        self.z = None
        self.steps = 0
        self.degenerate = 0

    def step(self, q, k, v) -> np.ndarray:
        q, k, v = as_row(q, "q"), as_row(k, "k"), as_row(v, "v")
        fk = apply_activation(self.phi, k)
        if self.S is None:
            if q.shape != k.shape:
                raise ValueError("q and k must share their dimension")
            self.S = np.zeros((k.shape[0], v.shape[0]))
            self.z = np.zeros(k.shape[0])
        elif q.shape[0] != self.S.shape[0] or k.shape[0] != self.S.shape[0] or v.shape[0] != self.S.shape[1]:
            raise ValueError("inconsistent dimensions within the stream")
        self.S += np.outer(fk, v)
        self.z += fk
        self.steps += 1
        fq = apply_activation(self.phi, q)
        num = fq @ self.S
        if self.norm is Norm.DENOMINATOR:
            den = fq @ self.z
            if abs(den) < DENOM_EPS:
                self.degenerate += 1
                _warn_degenerate(1)
                return np.zeros_like(num)
            return num / den
        return normalize(self.norm, num)


def linear_attention_recurrent(stream: Iterable, phi=Activation.ELU_PLUS_ONE,
                               norm=Norm.RMS) -> Iterator[np.ndarray]:
    """Yield one output row per ``(q, k, v)`` triple of ``stream``."""
    cell = RecurrentLinearAttention(phi, norm)
    for q, k, v in stream:
        yield cell.step(q, k, v)


def softmax_attention_reference(Q, K, V, *, return_weights: bool = False):
    """Causal ``softmax(Q K^T / sqrt(d_k)) V`` with explicit scaling."""
    Q, K, V = _check_qkv(Q, K, V)
    n, d_k = K.shape
    logits = (Q @ K.T) / np.sqrt(d_k)
    logits[np.triu_indices(n, 1)] = -np.inf
    logits -= logits.max(axis=1, keepdims=True)
    W = np.exp(logits)
    W /= W.sum(axis=1, keepdims=True)
    out = W @ V
    if return_weights:
        return out, W
    return out


def theorem1_equivalence_check(X, proj: ProjectionSet, phi=Activation.ELU_PLUS_ONE,
                               norm=Norm.RMS, cfg: Optional[HeadConfig] = None) -> float:
    """Max absolute deviation between the conditioning pipeline and linear attention.

    The conditioning side stores ``f(k_j)^T g(v_j)`` token by token and reads
    out with ``Norm(f(q_i) S_i)``; the attention side is
    :func:`linear_attention_batch`. The comparison is only defined when
    ``f = phi``, ``g = identity``, ``alpha = 1``, one input feeds all three
    pathways and ``d_k = d_v``; anything else raises ``ValueError``.
    """
    X = as_matrix(X, "X")
    phi, norm = Activation(phi), Norm(norm)
    if cfg is None:
        cfg = HeadConfig(f=phi, g=Activation.IDENTITY, alpha=1.0, norm=norm)
    if cfg.f is not phi or cfg.g is not Activation.IDENTITY:
        raise ValueError("equivalence requires f = phi and g = identity")
    if cfg.alpha != 1.0:
        raise ValueError(f"equivalence requires alpha = 1, got {cfg.alpha}")
    if cfg.norm is not norm:
        raise ValueError("head config and attention must use the same normalisation")
    if norm is Norm.DENOMINATOR:
        raise ValueError("the conditioning readout has no denominator form")
    if proj.d_k != proj.d_v:
        raise ValueError(f"equivalence requires d_k = d_v, got {proj.d_k} and {proj.d_v}")
    if not (proj.W_Q.shape[0] == proj.W_K.shape[0] == proj.W_V.shape[0] == X.shape[1]):
        raise ValueError("self-attention requires every projection to read the same input")

    Q, K, V = project(X, proj.W_Q), project(X, proj.W_K), project(X, proj.W_V)

    S = np.zeros((proj.d_k, proj.d_v))
    conditioned = np.empty((X.shape[0], proj.d_v))
    fK = apply_activation(cfg.f, K)
    gV = apply_activation(cfg.g, V)
    for i in range(X.shape[0]):
        S += cfg.alpha * np.outer(fK[i], gV[i])
        state = AssociativeState(S, i + 1)
        conditioned[i] = conditioning_output(Q[i], state, cfg)

    attended = linear_attention_batch(Q, K, V, phi, norm)
    if conditioned.size == 0:
        return 0.0
    return float(np.max(np.abs(conditioned - attended)))
