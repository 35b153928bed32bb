"""How many associations fit in one head before retrieval breaks down?

Random unit keys interfere: each extra pair adds noise of power about 1/d_k
to every recall. The SNR therefore falls like d_k / (n - 1), and the
Markov and union bounds cap the failure rates.
"""
from condattn import CapacityTrialConfig, capacity_frontier, empirical_snr, retrieval_failure_rate

print("Signal-to-noise ratio of a single recall (2000 trials)")
for d_k, n in [(64, 9), (128, 17), (256, 17)]:
    rep = empirical_snr(CapacityTrialConfig(d_k, n, trials=2000, seed=0))
    print(f"  d_k={d_k:<4} n={n:<3} SNR {rep.empirical_snr:6.2f}  predicted {rep.predicted_snr:6.2f}")

print("\nFailure rates against their bounds (delta = 0.5)")
for d_k, n in [(64, 5), (64, 17), (128, 33)]:
    rep = retrieval_failure_rate(CapacityTrialConfig(d_k, n, delta=0.5, trials=4000, seed=1))
    print(f"  d_k={d_k:<4} n={n:<3} single {rep.single_failure_rate:.4f} <= {rep.markov_bound:.3f}"
          f"   any {rep.any_failure_rate:.4f} <= {min(1, rep.union_bound):.3f}")

print("\nLargest n with any-failure rate <= 5% (400 trials per candidate)")
res = capacity_frontier([32, 64, 128], epsilon=0.05, delta=0.5, trials=400, seed=2)
for p in res.points:
    print(f"  d_k={p.d_k:<4} worst case n_max={p.n_max:<4} SNR>=4 n_max={p.average_n_max}")
print(f"  log-log slopes: worst case {res.worst_case_slope:.2f}, average case {res.average_case_slope:.2f}")
