"""How the confidence margin ramps up over training.

A class whose labeled samples are predicted with mean confidence T gets the
threshold B*T/(1 + gamma^-t) at epoch t: half of B*T at the start, rising
towards B*T. Early in training, when predictions are poor, more unlabeled
samples therefore clear the bar; later only confident ones do.

    python demos/margin_schedule.py
"""
import numpy as np

from adacm.margin import ConfidenceMargin, partition_batch

margin = ConfidenceMargin(np.array([0.8, 0.95, 0.6]), B=0.97, gamma=np.e)
print("t   " + "  ".join(f"class {k}" for k in range(3)))
for t in range(0, 11):
    print(f"{t:<3d} " + "  ".join(f"{v:7.4f}" for v in margin.effective(t)))

# the same batch of averaged predictions partitioned early and late
rng = np.random.default_rng(0)
probs = rng.dirichlet(np.full(3, 0.7), size=1000)
for t in (0, 2, 10):
    part = partition_batch(probs, margin, t)
    print(f"t={t:2d}: {part.n_high:4d} pseudo-labeled, {part.n_low:4d} left for the contrastive term")
