"""Per-column reconstruction deviations and ranking of affected signals."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .dataset import nearest_rank_percentile
from .errors import ConfigError

PERCENTILE = 99.9
FLOOR = 1e-9


def _reconstruct(F, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if callable(F) and not hasattr(F, "reconstruct"):
        return np.atleast_2d(F(x))
    return F.reconstruct(x)


@dataclass(frozen=True)
class IsolationThresholds:
    nu: np.ndarray

    def __post_init__(self):
        if np.any(self.nu <= 0):
            raise ConfigError("isolation thresholds must be positive")


def nu_from_errors(errors, percentile=PERCENTILE, floor=FLOOR, margin=1.0):
    """Column-wise nearest-rank percentile of absolute errors times
    ``margin``, floored."""
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    if errors.shape[0] == 0:
        raise ConfigError("isolation thresholds need at least one validation row")
    if margin <= 0:
        raise ConfigError("isolation margin must be positive")
    return np.maximum(margin * nearest_rank_percentile(errors, percentile), floor)


def fit_nu(F, X_val, percentile=PERCENTILE, margin=1.0):
    """Per-column thresholds from validation reconstructions.

    ``F`` is any object with ``reconstruct`` (or a plain callable).  The
    default ``margin`` of 1 uses the bare percentile; a detection-style
    safety factor can be passed instead.
    """
    X_val = np.atleast_2d(np.asarray(X_val, dtype=float))
    if X_val.shape[0] == 0 or X_val.size == 0:
        raise ConfigError("validation set is empty")
    return IsolationThresholds(nu_from_errors(np.abs(X_val - _reconstruct(F, X_val)), percentile,
                                              margin=margin))


def isolation_scores(F, x, nu):
    """``|x_k - F(x)_k| / nu_k`` for every column of every row."""
    nu = nu.nu if isinstance(nu, IsolationThresholds) else np.asarray(nu, dtype=float)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    d = np.abs(np.atleast_2d(x) - _reconstruct(F, x)) / nu
    return d[0] if single else d


def rank_affected(d, ids=None):
    """Columns with score above 1, by decreasing score then increasing
    position.  Returns positions, or the matching entries of ``ids``."""
    d = np.asarray(d, dtype=float)
    cols = np.flatnonzero(d > 1.0)
    cols = cols[np.lexsort((cols, -d[cols]))]
    if ids is None:
        return [int(c) for c in cols]
    return [ids[c] for c in cols]


@dataclass
class IsolationReport:
    keys: np.ndarray
    scores: np.ndarray          # (N, n_features)
    ids: tuple
    fault_id: np.ndarray

    def affected(self, i):
        return rank_affected(self.scores[i], self.ids)

    def top(self):
        """Column id with the largest score per row (ties: lowest position)."""
        return [self.ids[int(np.argmax(row))] for row in self.scores]

    def affected_sizes(self):
        return (self.scores > 1.0).sum(axis=1)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["flight_cycle", "index_in_flight"] + [f"d_{c}" for c in self.ids]
                       + ["fault_id", "affected"])
            for i in range(len(self.scores)):
                w.writerow([int(self.keys[i, 0]), int(self.keys[i, 1])]
                           + [f"{v:.17g}" for v in self.scores[i]]
                           + [int(self.fault_id[i]), " ".join(self.affected(i))])


def isolation_report(F, x, nu, ids, keys=None, fault_id=None):
    d = isolation_scores(F, np.atleast_2d(x), nu)
    n = len(d)
    keys = np.zeros((n, 2), dtype=int) if keys is None else np.asarray(keys)
    fault_id = np.zeros(n, dtype=int) if fault_id is None else np.asarray(fault_id)
    return IsolationReport(keys, d, tuple(str(i) for i in ids), fault_id)


@dataclass(frozen=True)
class FaultSummary:
    fault_id: int
    n_snapshots: int
    top_column: str             # most frequent top-ranked column
    top_share: float            # fraction of snapshots where it ranks first
    majority_affected: tuple    # columns affected in more than half the snapshots
    mean_affected: float

    def to_dict(self):
        return {"fault_id": self.fault_id, "n_snapshots": self.n_snapshots,
                "top_column": self.top_column, "top_share": self.top_share,
                "majority_affected": list(self.majority_affected),
                "mean_affected": self.mean_affected}


def summarize_by_fault(rep: IsolationReport, faults=None):
    """Per-fault majority summary over the faulty snapshots of a report."""
    faults = sorted(set(int(f) for f in rep.fault_id if f > 0)) if faults is None else faults
    tops = rep.top()
    out = []
    for f in faults:
        rows = np.flatnonzero(rep.fault_id == f)
        if len(rows) == 0:
            continue
        counts = Counter(tops[i] for i in rows)
        # deterministic: highest count, then first column position
        best = min(counts, key=lambda c: (-counts[c], rep.ids.index(c)))
        hit = rep.scores[rows] > 1.0
        frac = hit.mean(axis=0)
        med = np.median(rep.scores[rows], axis=0)
        cols = np.flatnonzero(frac > 0.5)
        cols = cols[np.lexsort((cols, -med[cols]))]
        out.append(FaultSummary(int(f), int(len(rows)), best, counts[best] / len(rows),
                                tuple(rep.ids[c] for c in cols), float(hit.sum(axis=1).mean())))
    return out
