"""Ablation table: supervised only, fixed thresholds, and the adaptive margin
with and without the contrastive term, averaged over seeds.

Equivalent to ``adacm compare`` with the default config. The full run (7
modes x 5 seeds x 20 epochs) takes several minutes; pass fewer epochs or
set ADACM_THREADS to parallelise.

    python demos/ablation_table.py [epochs]
"""
import math
import sys

from adacm.config import default_config_text, parse_config
from adacm.experiment import compare

overrides = {"epochs": int(sys.argv[1])} if len(sys.argv) > 1 else None
cfg = parse_config(default_config_text(), overrides)
reports, _ = compare(cfg)
width = max(len(r.mode) for r in reports)
for r in reports:
    std = "" if math.isnan(r.std) else f" +/- {100 * r.std:.2f}"
    print(f"{r.mode:<{width}}  {100 * r.mean:6.2f}{std}")
