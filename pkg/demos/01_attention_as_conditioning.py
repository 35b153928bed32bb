"""Linear attention is a Hebbian memory read out by the current query.

Each token writes the outer product of its key and value into a matrix S.
Reading S with the query reproduces causal linear attention exactly, up to
floating-point rounding.
"""
import numpy as np

from condattn import ProjectionSet, linear_attention_batch, theorem1_equivalence_check

rng = np.random.default_rng(0)
n, d = 32, 16
X = rng.standard_normal((n, d))
proj = ProjectionSet(*(rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(3)))

print("Token-by-token Hebbian storage vs. batch linear attention")
for phi in ("identity", "elu-plus-one"):
    for norm in ("none", "rms", "layer"):
        dev = theorem1_equivalence_check(X, proj, phi, norm)
        print(f"  phi={phi:<13} norm={norm:<6} max |difference| = {dev:.1e}")

# The denominator-normalised variant is the classic linear-attention form.
out = linear_attention_batch(X @ proj.W_Q, X @ proj.W_K, X @ proj.W_V, norm="denominator")
print(f"\nDenominator-normalised output shape: {out.shape}")
