"""Train on a restricted flight envelope.

Keeps only snapshots above an altitude limit, retrains the autoencoder
pipeline on the sensor-only features and compares accuracy with the
unrestricted run.  Faults with no snapshot left are reported as not
evaluable.

    python demos/03_envelope.py [altitude_ft] [runs]
"""

import sys

from hybridfdi.harness import ExperimentConfig, altitude_above, envelope_restriction

limit = float(sys.argv[1]) if len(sys.argv) > 1 else 25000.0
runs = int(sys.argv[2]) if len(sys.argv) > 2 else 2
res = envelope_restriction(ExperimentConfig(seeds=tuple(range(runs))), altitude_above(limit))

print(f"unrestricted accuracy {res.baseline_mean:.1f}%")
r = res.restricted_mean
print(f"above {limit:g} ft     {'n/a' if r is None else f'{r:.1f}%'}")
for f in sorted(res.fault_counts):
    acc = res.fault_accuracy.get(f)
    status = f"{acc:.1f}" if acc is not None else "not evaluable"
    print(f"  fault {f}: {res.fault_counts[f]} snapshots kept, {status}")
