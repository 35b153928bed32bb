"""Acceptance suite: every criterion at its stated size and tolerance.

Each check records one PASS/FAIL line; the lines are printed as they happen
and again in the pytest terminal summary.
"""
import math
import time
import warnings

import numpy as np
import pytest

from condattn.capacity import (
    CapacityTrialConfig,
    capacity_frontier,
    empirical_snr,
    failure_report,
    simulate_retrievals,
)
from condattn.cli import main
from condattn.core import sample_unit_sphere, stream_rng
from condattn.kernels import (
    AssociativeState,
    HeadConfig,
    ProjectionSet,
    linear_attention_batch,
    linear_attention_recurrent,
    retrieve,
    theorem1_equivalence_check,
)
from condattn.rules import (
    BcmThresholdState,
    bcm_modulation,
    decay_closed_form,
    step_bcm,
    step_decay,
    step_delta,
    step_hebbian,
    step_oja,
)
from condattn.stacked import (
    PropagationConfig,
    build_chain_demo,
    concept_vectors,
    cosine,
    error_propagation_experiment,
    forward_stack,
    scaling_fit,
)

REPORT = []


def record(label, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
    REPORT.append(line)
    print(line)
    return passed


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


# 1 --------------------------------------------------------------------------

def test_01_conditioning_equals_linear_attention():
    n, d = 32, 16
    worst = {}
    with Timer() as t:
        for i in range(100):
            rng = np.random.default_rng([1, i])
            X = rng.standard_normal((n, d))
            proj = ProjectionSet(*(rng.standard_normal((d, d)) / math.sqrt(d) for _ in range(3)))
            for phi in ("identity", "elu-plus-one"):
                for norm in ("none", "rms"):
                    dev = theorem1_equivalence_check(X, proj, phi, norm)
                    worst[phi, norm] = max(worst.get((phi, norm), 0.0), dev)
    dev = max(worst.values())
    ok = dev <= 1e-12 and t.seconds < 10
    record("1 equivalence", ok, f"max deviation {dev:.2e} (tol 1e-12) over 400 runs, {t.seconds:.2f}s (< 10s)")
    assert ok


# 2 --------------------------------------------------------------------------

def test_02_batch_matches_recurrent():
    worst = 0.0
    combos = [(p, m) for p in ("identity", "relu", "elu-plus-one")
              for m in ("none", "rms", "layer")] + [("elu-plus-one", "denominator")]
    with Timer() as t:
        for i in range(100):
            rng = np.random.default_rng([2, i])
            n, d_k, d_v = int(rng.integers(1, 257)), int(rng.integers(1, 65)), int(rng.integers(1, 65))
            Q, K = rng.standard_normal((n, d_k)), rng.standard_normal((n, d_k))
            V = rng.standard_normal((n, d_v))
            phi, norm = combos[i % len(combos)]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                batch = linear_attention_batch(Q, K, V, phi, norm)
                rec = np.array(list(linear_attention_recurrent(zip(Q, K, V), phi, norm)))
            scale = max(np.max(np.abs(rec)), np.finfo(float).tiny)
            worst = max(worst, float(np.max(np.abs(batch - rec)) / scale))
    ok = worst <= 1e-10 and t.seconds < 30
    record("2 batch vs recurrent", ok, f"max relative deviation {worst:.2e} (tol 1e-10), {t.seconds:.2f}s (< 30s)")
    assert ok


# 3 --------------------------------------------------------------------------

def test_03_snr_law():
    with Timer() as t:
        rep = empirical_snr(CapacityTrialConfig(d_k=256, n=17, trials=10_000, seed=3))
        half = empirical_snr(CapacityTrialConfig(d_k=128, n=17, trials=10_000, seed=3))
    ratio = half.mean_noise_power / rep.mean_noise_power
    ok = (abs(rep.mean_noise_power / 0.0625 - 1) <= 0.05 and abs(rep.empirical_snr / 16 - 1) <= 0.05
          and abs(ratio - 2) <= 0.2 and t.seconds < 60)
    record("3 SNR law", ok, f"noise power {rep.mean_noise_power:.5f} (0.0625 ±5%), SNR {rep.empirical_snr:.3f} "
           f"(16 ±5%), halving ratio {ratio:.3f} (2 ±10%), {t.seconds:.1f}s (< 60s)")
    assert ok


# 4 --------------------------------------------------------------------------

def test_04_bound_compliance():
    violations = []
    points = 0
    with Timer() as t:
        for d_k in (64, 256, 1024):
            for n in (5, 11, 33):
                run = simulate_retrievals(CapacityTrialConfig(d_k, n, trials=100_000, seed=4))
                for delta in (0.25, 0.5):
                    rep = failure_report(run, delta)
                    points += 1
                    if not (rep.markov_compliant and rep.union_compliant):
                        violations.append((d_k, n, delta))
    ok = not violations and t.seconds < 600
    record("4 bound compliance", ok, f"{len(violations)} of {points} grid points violate "
           f"(1e5 trials each) {violations or ''}, {t.seconds:.0f}s (< 600s)")
    assert ok


# 5 --------------------------------------------------------------------------

FRONTIER_DK = (64, 128, 256, 512, 1024)


@pytest.fixture(scope="module")
def frontier():
    with Timer() as t:
        res = capacity_frontier(FRONTIER_DK, epsilon=0.05, delta=0.5, trials=2000, seed=5)
    return res, t.seconds


def test_05a_frontier_monotone(frontier):
    res, seconds = frontier
    n = [p.n_max for p in res.points]
    ok = res.monotone and seconds < 1800
    record("5 frontier monotone", ok, f"worst-case n_max {n} for d_k {list(FRONTIER_DK)}, {seconds:.0f}s (< 1800s)")
    assert ok


def test_05b_frontier_fits_reported(frontier):
    res, _ = frontier
    ok = math.isfinite(res.worst_case_slope) and math.isfinite(res.average_case_slope)
    record("5 frontier fits reported", ok, f"worst-case slope {res.worst_case_slope:.3f}, "
           f"average-case slope {res.average_case_slope:.3f} "
           f"(average n_max {[p.average_n_max for p in res.points]})")
    assert ok


def test_05c_worst_case_slope_range(frontier):
    res, _ = frontier
    ok = 0.4 <= res.worst_case_slope <= 0.75
    record("5 worst-case slope in [0.4, 0.75]", ok, f"slope {res.worst_case_slope:.3f}")
    assert ok


# 6 --------------------------------------------------------------------------

PROP = dict(delta=0.5, trials=20_000, seed=6)


@pytest.fixture(scope="module")
def propagation():
    with Timer() as t:
        runs = {
            "L": [error_propagation_experiment(PropagationConfig(L, 1, 16, 512, **PROP)) for L in (1, 2, 4, 8)],
            "n": [error_propagation_experiment(PropagationConfig(4, 2, n, 512, **PROP)) for n in (8, 16, 32)],
            "d_k": [error_propagation_experiment(PropagationConfig(1, 1, 16, d, **PROP))
                    for d in (128, 256, 512, 1024)],
        }
    return runs, t.seconds


def _fit_line(runs, axis, target, tol):
    rates = [f"{r.empirical_error_rate:.2e}" for r in runs]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = scaling_fit(runs, axis)
    except ValueError as exc:
        return False, f"no fit ({exc}); rates {rates}"
    ok = abs(fit.slope - target) <= tol
    return ok, f"slope {fit.slope:.3f} (target {target} ±{tol}) from {fit.points_used} points; rates {rates}"


def test_06a_slope_vs_layers(propagation):
    runs, _ = propagation
    ok, detail = _fit_line(runs["L"], "L", 1.0, 0.2)
    record("6a slope vs L", ok, detail)
    assert ok


def test_06b_slope_vs_n(propagation):
    runs, _ = propagation
    ok, detail = _fit_line(runs["n"], "n", 2.0, 0.4)
    record("6b slope vs n", ok, detail)
    assert ok


def test_06c_slope_vs_dk(propagation):
    runs, _ = propagation
    ok, detail = _fit_line(runs["d_k"], "d_k", -1.0, 0.2)
    record("6c slope vs d_k", ok, detail)
    assert ok


def test_06d_rates_within_bound(propagation):
    runs, seconds = propagation
    every = [r for group in runs.values() for r in group]
    bad = [(r.config.L, r.config.H, r.config.n, r.config.d_k) for r in every if not r.within_bound]
    ok = not bad and seconds < 900
    record("6d within closed bound", ok, f"{len(bad)} of {len(every)} runs exceed bound + 3 CI, "
           f"{seconds:.0f}s (< 900s)")
    assert ok


# 7 --------------------------------------------------------------------------

def test_07_delta_overwrite():
    worst = 0.0
    cfg = HeadConfig(alpha=1.0)
    with Timer() as t:
        for i in range(1000):
            rng = np.random.default_rng([7, i])
            d_k, d_v = int(rng.integers(1, 33)), int(rng.integers(1, 33))
            state = AssociativeState(rng.standard_normal((d_k, d_v)))
            k = sample_unit_sphere(d_k, 1, i)[0]
            v = rng.standard_normal(d_v)
            worst = max(worst, float(np.max(np.abs(retrieve(k, step_delta(state, k, v, cfg), cfg) - v))))
    ok = worst <= 1e-12 and t.seconds < 5
    record("7 delta overwrite", ok, f"max error {worst:.2e} (tol 1e-12) over 1000 triples, {t.seconds:.2f}s (< 5s)")
    assert ok


# 8 --------------------------------------------------------------------------

def test_08_decay_closed_form():
    worst = 0.0
    cfg = HeadConfig()
    with Timer() as t:
        for i in range(100):
            rng = np.random.default_rng([8, i])
            n = int(rng.integers(1, 129))
            K, V = rng.standard_normal((n, 8)), rng.standard_normal((n, 6))
            gamma = (0.9, 0.99)[i % 2]
            s = AssociativeState.zeros(8, 6)
            for k, v in zip(K, V):
                s = step_decay(s, k, v, cfg, gamma)
            worst = max(worst, float(np.max(np.abs(s.S - decay_closed_form(K, V, cfg, gamma).S))))
    ok = worst <= 1e-12 and t.seconds < 5
    record("8 decay closed form", ok, f"max deviation {worst:.2e} (tol 1e-12), {t.seconds:.2f}s (< 5s)")
    assert ok


# 9 --------------------------------------------------------------------------

def _oja_vs_hebbian():
    K, V = sample_unit_sphere(16, 10_000, 91), sample_unit_sphere(16, 10_000, 92)
    cfg = HeadConfig(alpha=0.1)
    hebb, oja = AssociativeState.zeros(16, 16), AssociativeState.zeros(16, 16)
    marks = (100, 1000, 10_000)
    h, o = [], []
    for t, (k, v) in enumerate(zip(K, V), start=1):
        hebb, oja = step_hebbian(hebb, k, v, cfg), step_oja(oja, k, v, cfg)
        if t in marks:
            h.append(np.linalg.norm(hebb.S))
            o.append(np.linalg.norm(oja.S))
    hebb_slope = float(np.polyfit(np.log(marks), np.log(h), 1)[0])
    oja_slope = float(np.polyfit(np.log(marks), np.log(o), 1)[0])
    ok = 0.4 <= hebb_slope <= 0.6 and oja_slope < 0.1 and o[-1] < h[-1]
    return ok, f"Hebbian norm slope {hebb_slope:.3f} (√n: 0.5), Oja slope {oja_slope:.3f}, final {o[-1]:.3f} < {h[-1]:.3f}"


def _bcm_threshold(tau=32.0):
    rng = stream_rng(9, 9)
    scale = np.array([0.5, 1.0, 2.0, 3.0])
    s, th = AssociativeState.zeros(3, 4), BcmThresholdState.zeros(4)
    total, steps = np.zeros(4), int(20 * tau)
    for _ in range(steps):
        v = scale * rng.choice([-1.0, 1.0], 4) * rng.uniform(0.95, 1.05, 4)
        total += v * v
        s, th = step_bcm(s, th, 0.1 * rng.standard_normal(3), v, HeadConfig(alpha=0.01), tau)
    rel = float(np.max(np.abs(th.theta / (total / steps) - 1)))
    theta = np.array([0.3, 1.0, 4.0])
    psi = bcm_modulation(np.stack([theta * (1 - 1e-9), theta, theta * (1 + 1e-9)]), theta)
    sign_ok = bool(np.all(psi[0] < 0) and np.all(psi[1] == 0) and np.all(psi[2] > 0))
    return rel <= 0.05 and sign_ok, f"BCM threshold within {rel:.2%} of mean square (tol 5%), ψ sign flip at θ {sign_ok}"


def test_09_oja_bcm():
    with Timer() as t:
        oja_ok, oja_detail = _oja_vs_hebbian()
        bcm_ok, bcm_detail = _bcm_threshold()
    ok = oja_ok and bcm_ok and t.seconds < 30
    record("9 Oja/BCM", ok, f"{oja_detail}; {bcm_detail}; {t.seconds:.1f}s (< 30s)")
    assert ok


# 10 -------------------------------------------------------------------------

def test_10_chain_demo():
    c = concept_vectors()
    with Timer() as t:
        nets, cos = [], {}
        for context in ("mammal", "reptile", None):
            net, X, _ = build_chain_demo(context)
            nets.append(net)
            y = forward_stack(net, X)[-1]
            cos[context] = (cosine(y, c["dog"]), cosine(y, c["lizard"]))
    same = all(
        all(np.array_equal(getattr(pa, w), getattr(pb, w)) for w in ("W_Q", "W_K", "W_V", "W_O"))
        for net in nets[1:]
        for la, lb in zip(nets[0].layers, net.layers)
        for (pa, _), (pb, _) in zip(la.heads, lb.heads)
    )
    ok = (cos["mammal"][0] > 0.99 and cos["reptile"][1] > 0.99 and max(cos[None]) < 0.1
          and same and t.seconds < 1)
    record("10 chain demo", ok, f"mammal→dog {cos['mammal'][0]:.5f}, reptile→lizard {cos['reptile'][1]:.5f}, "
           f"no premise max {max(cos[None]):.3f}, same network {same}, {t.seconds:.3f}s (< 1s)")
    assert ok


# 11 -------------------------------------------------------------------------

SMALL_RUNS = {
    "equivalence": ["--dk", "8", "--n", "12", "--instances", "5"],
    "snr": ["--dk", "32", "--n", "5", "--trials", "2000"],
    "failure": ["--dk", "16,32", "--n", "5,9", "--delta", "0.25,0.5", "--trials", "2000"],
    "frontier": ["--dk", "16,32", "--epsilon", "0.1", "--trials", "300"],
    "errors": ["--L", "1,2", "--H", "1,2", "--n", "8", "--dk", "16", "--trials", "2000"],
    "rules": ["--dk", "16", "--n", "500"],
    "chain": [],
}


def test_11_cli_determinism(tmp_path):
    same, total = [], 0
    for command, extra in SMALL_RUNS.items():
        outputs = []
        for fmt in ("csv", "json"):
            for threads in (1, 3):
                path = tmp_path / f"{command}-{fmt}-{threads}"
                code = main([command, "--seed", "11", *extra, "--format", fmt,
                             "--threads", str(threads), "--out", str(path)])
                outputs.append(path.read_bytes() if code == 0 else None)
        total += 2
        for a, b in (outputs[:2], outputs[2:]):
            if a is not None and a == b:
                same.append(command)
    ok = len(same) == total
    record("11 CLI determinism", ok, f"{len(same)} of {total} command/format pairs byte-identical "
           f"across --threads 1 and 3")
    assert ok
