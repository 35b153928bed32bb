"""Swapping the plasticity rule changes what the memory keeps.

Plain Hebbian storage grows without bound, decay forgets geometrically, the
delta rule overwrites, Oja normalises, and BCM adapts a sliding threshold.
"""
import numpy as np

from condattn import HeadConfig, PlasticityRule, retrieve, run_rule, sample_unit_sphere

steps, d = 2000, 32
K = sample_unit_sphere(d, steps, 1)
V = sample_unit_sphere(d, steps, 2)
head = HeadConfig(alpha=0.1)

rules = [
    PlasticityRule("hebbian", 0.1),
    PlasticityRule("decay", 0.1, gamma=0.95),
    PlasticityRule("delta", 0.1),
    PlasticityRule("oja", 0.1),
    PlasticityRule("bcm", 0.1, tau=32),
]
print(f"{steps} random unit key/value pairs, d = {d}")
print(f"{'rule':<8} {'|S|_F':>9} {'recall error (last pair)':>26}")
for rule in rules:
    out = run_rule(rule, K, V, head)
    state = out[0] if rule.tag == "bcm" else out
    err = np.linalg.norm(retrieve(K[-1], state, head) - V[-1])
    print(f"{rule.tag:<8} {np.linalg.norm(state.S):9.3f} {err:26.3f}")

# The delta rule with alpha = 1 stores a new association exactly.
exact = run_rule(PlasticityRule("delta", 1.0), K[:50], V[:50])
print(f"\ndelta rule, alpha=1: last pair recalled with error "
      f"{np.linalg.norm(retrieve(K[49], exact, HeadConfig()) - V[49]):.1e}")
