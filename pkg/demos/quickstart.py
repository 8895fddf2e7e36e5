"""Train the adaptive-margin classifier on the synthetic benchmark, one seed.

Builds a 4-class, 16-dimensional benchmark, keeps 40 labels and treats the
rest as unlabeled, then trains for a few epochs and prints the per-epoch
trajectory: losses, learned margins, how much of each batch was confident
enough to pseudo-label, and test accuracy.

    python demos/quickstart.py [epochs]
"""
import sys
from dataclasses import replace

from adacm.config import default_config_text, parse_config
from adacm.experiment import build_split, run_one

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5
cfg = parse_config(default_config_text())
split = build_split(cfg)
print(f"{len(split.labeled)} labeled, {len(split.unlabeled)} unlabeled, {len(split.test)} test samples")

result = run_one(replace(cfg.train, epochs=epochs, seed=0), split)
print("epoch  l_total  subset I  pseudo prec  eff margins            test acc")
for row in result.metrics.rows:
    margins = " ".join(f"{m:.3f}" for m in row.margin_eff)
    prec = "   n/a" if row.pseudo_precision is None else f"{row.pseudo_precision:6.3f}"
    print(f"{row.epoch:5d}  {row.l_total:7.4f}  {row.subset1_frac:8.3f}  {prec:>11}  {margins}  {row.test_acc:.4f}")
