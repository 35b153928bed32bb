"""Monte Carlo capacity experiments for a Hebbian key/value memory.

The memory model: ``n`` keys and ``n`` values drawn uniformly from the unit
spheres in ``d_k`` and ``d_v`` dimensions, ``S = sum_j k_j^T v_j`` with
identity activations and unit strength. Querying with ``k_m`` returns the
stored value (signal) plus a similarity-weighted sum of every other value
(interference). A retrieval fails when the interference power reaches
``delta`` times the signal power.

Trial ``t`` draws from its own generator keyed by ``(seed, d_k, d_v, n, t)``,
so results are independent of threading and of the block size used to
batch trials together.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from .core import stream_rng, unit_rows

CAPACITY_STREAM = 1
Z95 = NormalDist().inv_cdf(0.975)
# Soft cap on doubles held per block of trials.
_BLOCK_BUDGET = 4_000_000


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        return os.cpu_count() or 1
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return int(threads)


def wilson_halfwidth(failures: int, trials: int, z: float = Z95) -> float:
    """Half-width of the Wilson score interval for ``failures / trials``."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = failures / trials
    denom = 1.0 + z * z / trials
    return z * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials)) / denom


@dataclass(frozen=True)
class CapacityTrialConfig:
    d_k: int
    n: int
    delta: float = 0.5
    trials: int = 10_000
    seed: int = 0
    d_v: Optional[int] = None
    orthogonal_keys: bool = False

    def __post_init__(self):
        if self.d_v is None:
            object.__setattr__(self, "d_v", self.d_k)
        if self.d_k < 1 or self.d_v < 1:
            raise ValueError(f"dimensions must be positive, got d_k={self.d_k}, d_v={self.d_v}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.orthogonal_keys and self.n > self.d_k:
            raise ValueError("orthogonal keys need n <= d_k")


@dataclass(frozen=True)
class SnrReport:
    mean_signal_power: float
    mean_noise_power: float
    empirical_snr: float
    predicted_snr: float
    predicted_noise_power: float
    trials: int


@dataclass(frozen=True)
class FailureReport:
    """Failure rates with Wilson 95% half-widths and the analytic bounds.

    Bounds are reported as computed and may exceed 1.
    """

    single_failure_rate: float
    single_halfwidth: float
    markov_bound: float
    any_failure_rate: float
    any_halfwidth: float
    union_bound: float
    trials: int

    @property
    def markov_compliant(self) -> bool:
        return self.single_failure_rate <= self.markov_bound + 3 * self.single_halfwidth

    @property
    def union_compliant(self) -> bool:
        return self.any_failure_rate <= min(1.0, self.union_bound) + 3 * self.any_halfwidth


@dataclass
class RetrievalTrials:
    """Per-trial outcomes of the memory model.

    ``noise_ratio`` is interference power over signal power for the target
    retrieval; ``max_ratio`` is the largest such ratio over all ``n``
    retrievals of the same memory. ``stopped_early`` is set when a run was
    cut short once its failure count passed a requested limit.
    """

    config: CapacityTrialConfig
    target: np.ndarray
    signal_power: np.ndarray
    noise_power: np.ndarray
    max_ratio: np.ndarray
    stopped_early: bool = False

    @property
    def noise_ratio(self) -> np.ndarray:
        return self.noise_power / self.signal_power

    def rows(self, delta: Optional[float] = None):
        delta = self.config.delta if delta is None else delta
        for t in range(len(self.target)):
            yield {
                "trial": t,
                "target": int(self.target[t]),
                "signal_power": float(self.signal_power[t]),
                "noise_power": float(self.noise_power[t]),
                "single_failure": bool(self.noise_power[t] >= delta * self.signal_power[t]),
                "any_failure": bool(self.max_ratio[t] >= delta),
            }


def signal_noise_decompose(keys, values, m: int):
    """Split the recall ``k_m S`` into the stored value and the interference.

    ``m`` is a 0-based index. Keys must have unit norm to within 1e-9.
    """
    K = np.asarray(keys, dtype=np.float64)
    V = np.asarray(values, dtype=np.float64)
    if K.ndim != 2 or V.ndim != 2 or K.shape[0] != V.shape[0]:
        raise ValueError("keys and values must be equal-length sequences of row vectors")
    n = K.shape[0]
    if not 0 <= m < n:
        raise ValueError(f"index m must lie in [0, {n}), got {m}")
    if np.any(np.abs(np.linalg.norm(K, axis=1) - 1.0) > 1e-9):
        raise ValueError("signal/noise decomposition assumes unit-norm keys")
    c = K @ K[m]
    signal = c[m] * V[m]
    mask = np.arange(n) != m
    noise = c[mask] @ V[mask]
    return signal, noise


def _block_size(cfg: CapacityTrialConfig) -> int:
    per_trial = cfg.n * (cfg.d_k + 2 * cfg.d_v + cfg.n)
    return max(1, min(1024, _BLOCK_BUDGET // per_trial))


def _draw(cfg: CapacityTrialConfig, t: int):
    rng = stream_rng(cfg.seed, CAPACITY_STREAM, cfg.d_k, cfg.d_v, cfg.n, t)
    if cfg.orthogonal_keys:
        q, _ = np.linalg.qr(rng.standard_normal((cfg.d_k, cfg.n)))
        keys = q.T
    else:
        keys = unit_rows(rng, cfg.n, cfg.d_k)
    values = unit_rows(rng, cfg.n, cfg.d_v)
    target = int(rng.integers(cfg.n))
    return keys, values, target


def _run_block(cfg: CapacityTrialConfig, start: int, stop: int, worst_case: bool = True):
    draws = [_draw(cfg, t) for t in range(start, stop)]
    K = np.stack([d[0] for d in draws])
    V = np.stack([d[1] for d in draws])
    target = np.array([d[2] for d in draws])
    rows = np.arange(len(draws))

    if not worst_case:
        # Only the target recall: one row of the Gram matrix per trial.
        c = np.einsum("bnd,bd->bn", K, K[rows, target])
        self_sim = c[rows, target].copy()
        c[rows, target] = 0.0
        noise = np.einsum("bn,bnd->bd", c, V)
        v = V[rows, target]
        signal_pow = self_sim ** 2 * np.einsum("bd,bd->b", v, v)
        return target, signal_pow, np.einsum("bd,bd->b", noise, noise), np.full(len(draws), np.nan)

    C = K @ K.transpose(0, 2, 1)
    self_sim = np.diagonal(C, axis1=1, axis2=2).copy()
    idx = np.arange(cfg.n)
    C[:, idx, idx] = 0.0
    noise = C @ V
    noise_pow = np.einsum("bnd,bnd->bn", noise, noise)
    signal_pow = self_sim ** 2 * np.einsum("bnd,bnd->bn", V, V)
    ratios = noise_pow / signal_pow
    return (target, signal_pow[rows, target], noise_pow[rows, target], ratios.max(axis=1))


def simulate_retrievals(cfg: CapacityTrialConfig, threads: Optional[int] = None,
                        stop_after_any_failures: Optional[int] = None,
                        worst_case: bool = True) -> RetrievalTrials:
    """Draw ``cfg.trials`` memories and record target and worst-case outcomes.

    With ``stop_after_any_failures`` the run ends as soon as more than that
    many trials have had some failing retrieval at ``cfg.delta``; the
    returned arrays then cover only the trials processed. ``worst_case=False``
    skips the all-retrieval pass (``max_ratio`` is then NaN), which turns an
    O(n^2 d) trial into O(n d).
    """
    if stop_after_any_failures is not None and not worst_case:
        raise ValueError("early stopping needs the worst-case pass")
    threads = resolve_threads(threads)
    size = _block_size(cfg)
    bounds = [(s, min(s + size, cfg.trials)) for s in range(0, cfg.trials, size)]
    parts = []
    failures = 0
    stopped = False
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for c in range(0, len(bounds), threads):
            chunk = bounds[c:c + threads]
            for part in pool.map(lambda b: _run_block(cfg, *b, worst_case), chunk):
                parts.append(part)
                failures += int(np.count_nonzero(part[3] >= cfg.delta))
            if stop_after_any_failures is not None and failures > stop_after_any_failures:
                stopped = c + threads < len(bounds)
                break
    target, sig, noise, worst = (np.concatenate(x) for x in zip(*parts))
    return RetrievalTrials(cfg, target, sig, noise, worst, stopped)


def snr_report(trials: RetrievalTrials) -> SnrReport:
    cfg = trials.config
    ps = float(np.mean(trials.signal_power))
    pn = float(np.mean(trials.noise_power))
    return SnrReport(
        mean_signal_power=ps,
        mean_noise_power=pn,
        empirical_snr=ps / pn if pn > 0 else math.inf,
        predicted_snr=cfg.d_k / (cfg.n - 1) if cfg.n > 1 else math.inf,
        predicted_noise_power=(cfg.n - 1) / cfg.d_k,
        trials=len(trials.target),
    )


def failure_report(trials: RetrievalTrials, delta: Optional[float] = None) -> FailureReport:
    """Evaluate failure rates at ``delta`` (defaults to the config's)."""
    cfg = trials.config
    delta = cfg.delta if delta is None else delta
    T = len(trials.target)
    single = int(np.count_nonzero(trials.noise_power >= delta * trials.signal_power))
    anyf = int(np.count_nonzero(trials.max_ratio >= delta))
    return FailureReport(
        single_failure_rate=single / T,
        single_halfwidth=wilson_halfwidth(single, T),
        markov_bound=(cfg.n - 1) / (delta * cfg.d_k),
        any_failure_rate=anyf / T,
        any_halfwidth=wilson_halfwidth(anyf, T),
        union_bound=cfg.n * (cfg.n - 1) / (delta * cfg.d_k),
        trials=T,
    )


def _require_interference(cfg: CapacityTrialConfig):
    if cfg.n < 2:
        raise ValueError(f"n must be >= 2 for interference to exist, got {cfg.n}")


def empirical_snr(cfg: CapacityTrialConfig, threads: Optional[int] = None) -> SnrReport:
    _require_interference(cfg)
    return snr_report(simulate_retrievals(cfg, threads, worst_case=False))


def retrieval_failure_rate(cfg: CapacityTrialConfig, threads: Optional[int] = None) -> FailureReport:
    """Single-retrieval failure rate against the Markov bound ``(n-1)/(delta d_k)``.

    The report also carries the all-retrieval rate measured on the same draws.
    """
    _require_interference(cfg)
    return failure_report(simulate_retrievals(cfg, threads))


def any_failure_rate(cfg: CapacityTrialConfig, threads: Optional[int] = None) -> FailureReport:
    """Rate of memories with at least one failed retrieval, against ``n(n-1)/(delta d_k)``."""
    return failure_report(simulate_retrievals(cfg, threads))


@dataclass(frozen=True)
class FrontierPoint:
    d_k: int
    n_max: int
    saturated: bool
    sqrt_reference: float
    average_n_max: int
    average_saturated: bool
    average_reference: float


@dataclass(frozen=True)
class FrontierResult:
    points: list = field(default_factory=list)
    epsilon: float = 0.05
    delta: float = 0.5
    gamma_snr: float = 4.0
    trials: int = 0
    worst_case_slope: float = math.nan
    average_case_slope: float = math.nan

    @property
    def monotone(self) -> bool:
        n = [p.n_max for p in self.points]
        return all(a <= b for a, b in zip(n, n[1:]))


def _largest_passing(ok, ceiling: int):
    """Largest ``n`` in ``[1, ceiling]`` with ``ok(n)``, assuming ``ok`` is monotone.

    Doubles from 1 to bracket the frontier, then bisects. Returns
    ``(n, saturated)`` where ``saturated`` means the ceiling itself passed.
    """
    lo, hi = 1, 2
    while hi < ceiling and ok(hi):
        lo, hi = hi, hi * 2
    if hi >= ceiling:
        if ok(ceiling):
            return ceiling, True
        hi = ceiling
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo, False


def _loglog_slope(x, y) -> float:
    x = np.log(np.asarray(x, dtype=np.float64))
    y = np.log(np.asarray(y, dtype=np.float64))
    if len(x) < 2:
        return math.nan
    return float(np.polyfit(x, y, 1)[0])


def capacity_frontier(d_k_list: Sequence[int], epsilon: float, delta: float, trials: int,
                      seed: int, gamma_snr: float = 4.0,
                      threads: Optional[int] = None) -> FrontierResult:
    """Largest reliably stored ``n`` for each key dimension.

    Two frontiers are searched over ``n`` in ``[1, 4 d_k]``, each candidate
    on fresh draws:

    * worst case: any-failure rate at ``delta`` stays at or below ``epsilon``;
    * average case: empirical SNR stays at or above ``gamma_snr``.

    Log-log slopes of both against ``d_k`` are returned; the square-root
    reference ``sqrt(epsilon delta d_k)`` and the average-case reference
    ``1 + d_k / gamma_snr`` are reported per point.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not delta > 0 or not gamma_snr > 0:
        raise ValueError("delta and gamma_snr must be positive")
    d_k_list = [int(d) for d in d_k_list]
    if not d_k_list or any(b <= a for a, b in zip(d_k_list, d_k_list[1:])):
        raise ValueError("d_k_list must be non-empty and strictly ascending")

    limit = int(math.floor(epsilon * trials))
    points = []
    for d_k in d_k_list:
        def worst_ok(n, d_k=d_k):
            cfg = CapacityTrialConfig(d_k, n, delta, trials, seed)
            run = simulate_retrievals(cfg, threads, stop_after_any_failures=limit)
            fails = int(np.count_nonzero(run.max_ratio >= delta))
            return fails <= limit

        def average_ok(n, d_k=d_k):
            if n < 2:
                return True
            cfg = CapacityTrialConfig(d_k, n, delta, trials, seed)
            return empirical_snr(cfg, threads).empirical_snr >= gamma_snr

        n_max, sat = _largest_passing(worst_ok, 4 * d_k)
        n_avg, avg_sat = _largest_passing(average_ok, 4 * d_k)
        points.append(FrontierPoint(
            d_k=d_k,
            n_max=n_max,
            saturated=sat,
            sqrt_reference=math.sqrt(epsilon * delta * d_k),
            average_n_max=n_avg,
            average_saturated=avg_sat,
            average_reference=1.0 + d_k / gamma_snr,
        ))
    return FrontierResult(
        points=points,
        epsilon=epsilon,
        delta=delta,
        gamma_snr=gamma_snr,
        trials=trials,
        worst_case_slope=_loglog_slope([p.d_k for p in points], [p.n_max for p in points]),
        average_case_slope=_loglog_slope([p.d_k for p in points], [p.average_n_max for p in points]),
    )
