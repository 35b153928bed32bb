"""Single-step plasticity rules acting on an :class:`AssociativeState`.

Every step is a pure function: it takes a state and one ``(k, v)`` pair and
returns the next state with ``step_index`` advanced by one. ``k`` passes
through ``cfg.f`` and ``v`` through ``cfg.g`` before the update.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import apply_activation, as_row
from .kernels import AssociativeState, HeadConfig, _pair_rows

RULES = ("hebbian", "decay", "delta", "oja", "bcm")
DEFAULT_TAU = 32.0


@dataclass(frozen=True)
class PlasticityRule:
    tag: str = "hebbian"
    alpha: float = 1.0
    gamma: Optional[float] = None
    tau: Optional[float] = None

    def __post_init__(self):
        if self.tag not in RULES:
            raise ValueError(f"unknown rule {self.tag!r}; expected one of {RULES}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if (self.gamma is not None) != (self.tag == "decay"):
            raise ValueError("gamma is required for the decay rule and only for it")
        if (self.tau is not None) != (self.tag == "bcm"):
            raise ValueError("tau is required for the bcm rule and only for it")
        if self.gamma is not None:
            _check_gamma(self.gamma)
        if self.tau is not None:
            _check_tau(self.tau)


@dataclass(frozen=True)
class BcmThresholdState:
    """Per-output-neuron sliding thresholds (length d_v)."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        if theta.ndim != 1 or not np.all(np.isfinite(theta)):
            raise ValueError("theta must be a finite 1-D array")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, d_v: int) -> "BcmThresholdState":
        return cls(np.zeros(d_v))


def _check_gamma(gamma: float):
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")


def _check_tau(tau: float):
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")


def _encode(state: AssociativeState, k, v, cfg: HeadConfig):
    fk = apply_activation(cfg.f, as_row(k, "k"))
    gv = apply_activation(cfg.g, as_row(v, "v"))
    if fk.shape[0] != state.d_k or gv.shape[0] != state.d_v:
        raise ValueError(
            f"pair dims ({fk.shape[0]}, {gv.shape[0]}) do not match state ({state.d_k}, {state.d_v})"
        )
    return fk, gv


def step_hebbian(state: AssociativeState, k, v, cfg: HeadConfig) -> AssociativeState:
    fk, gv = _encode(state, k, v, cfg)
    return AssociativeState(state.S + cfg.alpha * np.outer(fk, gv), state.step_index + 1)


def step_decay(state: AssociativeState, k, v, cfg: HeadConfig, gamma: float) -> AssociativeState:
    """``S <- gamma S + f(k)^T g(v)``; the decay replaces ``alpha``."""
    _check_gamma(gamma)
    fk, gv = _encode(state, k, v, cfg)
    return AssociativeState(gamma * state.S + np.outer(fk, gv), state.step_index + 1)


def decay_closed_form(keys, values, cfg: HeadConfig, gamma: float,
                      d_k=None, d_v=None) -> AssociativeState:
    """``S = sum_j gamma^(n-j) f(k_j)^T g(v_j)`` evaluated directly."""
    _check_gamma(gamma)
    K, V = _pair_rows(keys, values, d_k, d_v)
    n = K.shape[0]
    weights = gamma ** np.arange(n - 1, -1, -1, dtype=np.float64)
    fK = apply_activation(cfg.f, K)
    gV = apply_activation(cfg.g, V)
    return AssociativeState((fK * weights[:, None]).T @ gV, n)


def step_delta(state: AssociativeState, k, v, cfg: HeadConfig) -> AssociativeState:
    """Error-correcting write ``S <- S + alpha f(k)^T [g(v) - f(k) S]``.

    For ``alpha = 1`` and unit-norm ``f(k)`` the old association for ``k`` is
    overwritten exactly.
    """
    fk, gv = _encode(state, k, v, cfg)
    error = gv - fk @ state.S
    return AssociativeState(state.S + cfg.alpha * np.outer(fk, error), state.step_index + 1)


def step_oja(state: AssociativeState, k, v, cfg: HeadConfig) -> AssociativeState:
    """``S <- S (I - alpha diag(g(v)^2)) + alpha f(k)^T g(v)``.

    Column j shrinks by ``1 - alpha g(v)[j]^2`` before the Hebbian write.
    """
    fk, gv = _encode(state, k, v, cfg)
    shrunk = state.S * (1.0 - cfg.alpha * gv * gv)[None, :]
    return AssociativeState(shrunk + cfg.alpha * np.outer(fk, gv), state.step_index + 1)


def bcm_modulation(y, theta) -> np.ndarray:
    """``y (y - theta)``: positive above threshold, negative between 0 and it."""
    y = np.asarray(y, dtype=np.float64)
    return y * (y - np.asarray(theta, dtype=np.float64))


def step_bcm(state: AssociativeState, thresholds: BcmThresholdState, k, v,
             cfg: HeadConfig, tau: float = DEFAULT_TAU):
    """BCM update with a sliding threshold.

    The write uses the thresholds *before* this step; afterwards each
    threshold moves toward the squared activity of its neuron as an
    exponential moving average with time constant ``tau``.
    """
    _check_tau(tau)
    fk, gv = _encode(state, k, v, cfg)
    theta = thresholds.theta
    if theta.shape != (state.d_v,):
        raise ValueError(f"thresholds must have length {state.d_v}, got {theta.shape[0]}")
    psi = bcm_modulation(gv, theta)
    new_state = AssociativeState(state.S + cfg.alpha * np.outer(fk, psi), state.step_index + 1)
    rate = 1.0 / tau
    new_theta = (1.0 - rate) * theta + rate * gv * gv
    return new_state, BcmThresholdState(new_theta)


def run_rule(rule: PlasticityRule, keys, values, cfg: Optional[HeadConfig] = None,
             state: Optional[AssociativeState] = None):
    """Apply ``rule`` over a sequence of pairs.

    ``cfg.alpha`` is replaced by ``rule.alpha``. Returns the final state,
    plus the final thresholds for the BCM rule.
    """
    K, V = _pair_rows(keys, values)
    cfg = HeadConfig(cfg.f, cfg.g, rule.alpha, cfg.norm) if cfg else HeadConfig(alpha=rule.alpha)
    if state is None:
        state = AssociativeState.zeros(K.shape[1], V.shape[1])
    thresholds = BcmThresholdState.zeros(state.d_v)
    for k, v in zip(K, V):
        if rule.tag == "hebbian":
            state = step_hebbian(state, k, v, cfg)
        elif rule.tag == "decay":
            state = step_decay(state, k, v, cfg, rule.gamma)
        elif rule.tag == "delta":
            state = step_delta(state, k, v, cfg)
        elif rule.tag == "oja":
            state = step_oja(state, k, v, cfg)
        else:
            state, thresholds = step_bcm(state, thresholds, k, v, cfg, rule.tau)
    if rule.tag == "bcm":
        return state, thresholds
    return state
