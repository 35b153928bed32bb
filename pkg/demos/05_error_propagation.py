"""Retrieval errors compound with depth and are damped by redundant heads.

Every layer must retrieve one association; a layer fails only if all of its
heads fail. Small d_k makes the failures common enough to measure.
"""
from condattn import PropagationConfig, error_propagation_experiment

print(f"{'L':>2} {'H':>2} {'empirical':>10} {'bound':>8}")
for L, H in [(1, 1), (2, 1), (4, 1), (8, 1), (4, 2), (8, 2)]:
    r = error_propagation_experiment(PropagationConfig(L, H, n=16, d_k=64, trials=3000, seed=0))
    print(f"{L:>2} {H:>2} {r.empirical_error_rate:10.4f} {r.bound:8.3f}")
