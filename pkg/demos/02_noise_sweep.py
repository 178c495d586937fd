"""Robustness of the hybrid features to a noisy health estimate.

White noise at a chosen signal-to-noise ratio is added to the tracked
health modifiers before the detectors are trained and scored.  Accuracy
is expected to fall as the ratio drops.

    python demos/02_noise_sweep.py [runs]
"""

import math
import sys

from hybridfdi.harness import ExperimentConfig, noise_sweep

runs = int(sys.argv[1]) if len(sys.argv) > 1 else 2
cfg = ExperimentConfig(seeds=tuple(range(runs)))
table = noise_sweep(cfg, snr_list_db=(math.inf, 30.0, 20.0, 10.0, 0.0), models=("ae", "ocsvm"))

print(f"{'SNR dB':>8} {'model':>6} {'accuracy %':>10} {'+/-':>7}")
for snr in table.snr_db:
    for m in table.models:
        print(f"{snr:>8g} {m:>6} {table.mean(snr, m):>10.1f} {table.half_width(snr, m):>7.1f}")
for m in table.models:
    print(f"rank correlation of SNR with accuracy, {m}: {table.spearman(m):+.2f}")
