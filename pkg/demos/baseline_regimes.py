"""How much does the momentum reward baseline change the spread of the
per-batch policy-gradient loss?  It depends on how good the policy is.

The reward of a prediction is its own probability scaled by the true-class
weight, so reward and log-probability move together.  For an uninformative
policy the baseline term b * log pi adds spread instead of removing it.  Being
accurate is not enough either: the baseline only pays off once the chosen
class also carries most of the probability mass (margin 5 and up below).

Run from the repository root:  python3 demos/baseline_regimes.py
"""
import numpy as np

from vulnassess.synthetic import random_policy_batches
from vulnassess.trainer import policy_loss_trace

print(f"{'margin':>6} {'accuracy':>9} {'var b=0':>10} {'var b_t':>10} {'ratio':>7}")
for margin in (0.0, 2.0, 4.0, 5.0, 6.0, 8.0):
    probs, labels = random_policy_batches(1000, 16, seed=0, margin=margin)
    acc = np.mean(probs.argmax(axis=-1) == labels)
    with_b = policy_loss_trace(probs, labels).var()
    without = policy_loss_trace(probs, labels, use_baseline=False).var()
    print(f"{margin:>6.1f} {acc:>9.3f} {without:>10.5f} {with_b:>10.5f} {with_b / without:>7.3f}")
