"""Two stacked heads chain associations: animal -> category -> instance.

Layer 1 recalls which category the context paired with "animal"; layer 2
uses that recalled category as a cue for the instance paired with it. The
weights never change, only the context does.
"""
from condattn import run_chain_demo

for row in run_chain_demo():
    print(f"context={row['context']:<8} expected={row['expected']:<7} "
          f"cos(dog)={row['cos_dog']:.4f} cos(lizard)={row['cos_lizard']:.4f} "
          f"{'ok' if row['passed'] else 'FAILED'}")
