"""Walk through one run: data, calibration, detection and isolation.

Generates the default dataset for one seed, tracks the health modifiers
with the unscented filter, then trains a one-class SVM and an autoencoder
pipeline on the hybrid features and prints what each of them finds.

    python demos/01_single_run.py [seed]
"""

import sys

import numpy as np

from hybridfdi import baseline_ocsvm as ocsvm
from hybridfdi.calibration import calibrate_bundle
from hybridfdi.dataset import (FEATURE_IDS, HYBRID_HPC_EFF_COLUMN, assemble_features, generate_dataset,
                               normalize_fit)
from hybridfdi.detection import detect, fit_embedding, fit_heads, fit_threshold, similarity
from hybridfdi.harness import TEST_SPLITS, accuracy, cell_seed, per_fault_accuracy
from hybridfdi.isolation import fit_nu, isolation_report, summarize_by_fault
from hybridfdi.plant import HPC_EFF, Plant

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
plant = Plant()

bundle = generate_dataset(seed=seed, plant=plant)
print(f"{len(bundle)} snapshots; split sizes:",
      {s: int(bundle.mask(s).sum()) for s in ("S_T", "S_V", "D_U", "D_T")})

# health tracking: the HPC efficiency estimate should move only for fault 4
trace = calibrate_bundle(bundle, plant)
print("\nmean HPC efficiency estimate per fault class")
for f in np.unique(bundle.fault_id):
    rows = bundle.fault_id == f
    print(f"  fault {f}: {trace.theta_hat[rows, HPC_EFF].mean():+.4f}")

X = assemble_features(bundle, trace, "hybrid", plant)
norm = normalize_fit(X[bundle.mask("S_T")])
Xn = norm.apply(X)
train, val, test = bundle.mask("S_T"), bundle.mask("S_V"), bundle.mask(*TEST_SPLITS)
h_true, fid = bundle.h_s[test], bundle.fault_id[test]

svm = ocsvm.fit(Xn[train], seed=cell_seed(seed, "hybrid", "ocsvm"))
h_svm = ocsvm.predict(svm, Xn[test])
print(f"\none-class SVM: {len(svm.alpha)} support vectors, accuracy {accuracy(h_true, h_svm):.1f}%")
print("  per fault:", {f: round(a, 1) for f, a in per_fault_accuracy(h_true, h_svm, fid).items()})

pipe = fit_embedding(Xn[train], "ae", cell_seed(seed, "hybrid", "ae"))
fit_heads([pipe], [Xn[train]])
fit_threshold(pipe, Xn[val])
h_ae = detect(similarity(pipe, Xn[test]))
print(f"\nautoencoder pipeline: threshold {pipe.beta:.4g}, accuracy {accuracy(h_true, h_ae):.1f}%")
print("  per fault:", {f: round(a, 1) for f, a in per_fault_accuracy(h_true, h_ae, fid).items()})

# isolation uses the autoencoder alone, independent of the detection head
nu = fit_nu(pipe.embedder, Xn[val])
rep = isolation_report(pipe.embedder, Xn[test], nu, FEATURE_IDS["hybrid"], bundle.keys()[test], fid)
print("\nisolation: most frequent top-ranked column per fault")
for s in summarize_by_fault(rep):
    print(f"  fault {s.fault_id}: column {s.top_column} ({s.top_share:.0%} of snapshots), "
          f"columns affected in most snapshots: {' '.join(s.majority_affected) or '-'}")
print(f"  column {FEATURE_IDS['hybrid'][HYBRID_HPC_EFF_COLUMN]} carries the HPC efficiency estimate")
