"""One-class support vector machine with an RBF kernel (non-deep baseline).

The dual problem

    minimise  0.5 * a' K a   subject to  0 <= a_i <= 1 / (nu n),  sum(a) = 1

is solved by working-pair coordinate steps on the maximal violating pair.
The decision value of ``x`` is ``sum_i a_i k(x_i, x) - rho``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import Normalizer
from .errors import ConfigError, OptimizationError, ShapeError

NU = 0.001
GAMMA_RBF = 0.1
TOL = 1e-4
MAX_ITER = 1_000_000
DENSE_LIMIT = 6000      # above this many rows kernel columns are computed on demand
SV_EPS = 1e-12


def rbf_kernel(A, B, gamma):
    """``exp(-gamma * ||a - b||^2)`` for every row pair."""
    return np.exp(-gamma * cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean"))


@dataclass(frozen=True)
class OcsvmModel:
    support: np.ndarray         # (m, d) support vectors
    alpha: np.ndarray           # (m,) dual coefficients, all positive
    rho: float
    gamma: float
    nu: float
    n_train: int
    iterations: int = 0
    gap: float = 0.0

    def decision(self, x):
        return decision(self, x)

    def predict(self, x):
        return predict(self, x)


class _Kernel:
    """Kernel columns, from a dense matrix or computed lazily with a small cache."""

    def __init__(self, X, gamma):
        self.X, self.gamma, self.n = X, gamma, len(X)
        self.dense = rbf_kernel(X, X, gamma) if self.n <= DENSE_LIMIT else None
        self.cache = {}

    def col(self, i):
        if self.dense is not None:
            return self.dense[:, i]
        c = self.cache.get(i)
        if c is None:
            if len(self.cache) > 256:
                self.cache.clear()
            c = self.cache[i] = rbf_kernel(self.X, self.X[i:i + 1], self.gamma)[:, 0]
        return c

    def matvec(self, a):
        if self.dense is not None:
            return self.dense @ a
        out = np.zeros(self.n)
        for i in np.flatnonzero(a):
            out += a[i] * self.col(i)
        return out


def _initial_alpha(n, C, seed):
    """Feasible start: full boxes on a seeded subset, remainder on one more point."""
    order = np.random.default_rng(seed).permutation(n)
    alpha = np.zeros(n)
    mass = 1.0
    for i in order:
        step = min(C, mass)
        alpha[i] = step
        mass -= step
        if mass <= 0.0:
            break
    return alpha


def _rho(alpha, g, C):
    # free vectors share one gradient value at the optimum; the smallest
    # keeps every margin vector on the inlier side of the boundary
    free = (alpha > SV_EPS) & (alpha < C - SV_EPS)
    if free.any():
        return float(g[free].min())
    ub = g[alpha < C - SV_EPS].min(initial=np.inf)     # lower-bound points need g >= rho
    lb = g[alpha > SV_EPS].max(initial=-np.inf)        # upper-bound points need g <= rho
    if not np.isfinite(ub):
        return float(lb)
    if not np.isfinite(lb):
        return float(ub)
    return 0.5 * float(ub + lb)


def fit(X, nu=NU, gamma=GAMMA_RBF, tol=TOL, seed=0, max_iter=MAX_ITER):
    """Solve the one-class dual.

    Parameters
    ----------
    X : (n, d) array
        Normalised healthy features.
    nu : float
        Upper bound on the training outlier fraction, in (0, 1].
    gamma : float
        RBF width.
    tol : float
        Stopping gap between the most violating gradient entries.

    Raises
    ------
    OptimizationError
        If the gap is still above ``tol`` after ``max_iter`` pair updates.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = len(X)
    if n < 2:
        raise ConfigError("one-class SVM needs at least two training rows")
    if not 0.0 < nu <= 1.0:
        raise ConfigError(f"nu must lie in (0, 1], got {nu}")
    if gamma <= 0 or tol <= 0:
        raise ConfigError("gamma and tol must be positive")
    C = 1.0 / (nu * n)
    K = _Kernel(X, gamma)
    alpha = _initial_alpha(n, C, seed)
    g = K.matvec(alpha)
    it, gap = 0, np.inf
    while True:
        up = alpha < C - SV_EPS
        down = alpha > SV_EPS
        gu = np.where(up, g, np.inf)
        gd = np.where(down, g, -np.inf)
        i, j = int(np.argmin(gu)), int(np.argmax(gd))
        gap = gd[j] - gu[i]
        if gap <= tol:
            break
        if it >= max_iter:
            raise OptimizationError(f"one-class SVM did not converge in {max_iter} pair updates", gap)
        ki, kj = K.col(i), K.col(j)
        eta = max(ki[i] + kj[j] - 2.0 * ki[j], 1e-12)
        t = min(gap / eta, C - alpha[i], alpha[j])
        alpha[i] += t
        alpha[j] -= t
        g += t * (ki - kj)
        it += 1
    rho = _rho(alpha, g, C)
    sv = np.flatnonzero(alpha > SV_EPS)
    return OcsvmModel(X[sv].copy(), alpha[sv].copy(), rho, float(gamma), float(nu), n, it, float(gap))


def decision(model: OcsvmModel, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.support.shape[1]:
        raise ShapeError(f"expected {model.support.shape[1]} features, got {x.shape[1]}")
    return rbf_kernel(x, model.support, model.gamma) @ model.alpha - model.rho


def predict(model: OcsvmModel, x):
    """1 (inlier) where the decision value is non-negative, else 0."""
    return (decision(model, x) >= 0.0).astype(int)


def write_report(path, keys, values, h_hat, h_true, fault_id, split):
    """Detection-report CSV with the raw decision value as the score column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flight_cycle", "index_in_flight", "decision", "h_hat", "h_true", "fault_id",
                    "split_tag"])
        for i in range(len(values)):
            w.writerow([int(keys[i, 0]), int(keys[i, 1]), f"{values[i]:.17g}", int(h_hat[i]),
                        int(h_true[i]), int(fault_id[i]), str(split[i])])


def save_model(model: OcsvmModel, path, normalizer=None, variant=None):
    """Write the model (and optionally the input normaliser and variant) to ``.npz``."""
    extra = {}
    if normalizer is not None:
        extra["norm_lo"], extra["norm_hi"] = normalizer.lo, normalizer.hi
    if variant is not None:
        extra["variant"] = np.array(str(variant))
    with open(path, "wb") as fh:
        np.savez(fh, support=model.support, alpha=model.alpha,
                 scalars=np.array([model.rho, model.gamma, model.nu, model.n_train,
                                   model.iterations, model.gap]), **extra)


def load_model(path):
    with np.load(path) as d:
        rho, gamma, nu, n, it, gap = d["scalars"]
        return OcsvmModel(d["support"], d["alpha"], float(rho), float(gamma), float(nu), int(n),
                          int(it), float(gap))


def load_extras(path):
    """``(normalizer or None, variant or None)`` stored next to a model."""
    with np.load(path) as d:
        norm = Normalizer(d["norm_lo"], d["norm_hi"]) if "norm_lo" in d.files else None
        variant = str(d["variant"]) if "variant" in d.files else None
    return norm, variant


__all__ = ["NU", "GAMMA_RBF", "OcsvmModel", "rbf_kernel", "fit", "decision", "predict",
           "write_report", "save_model", "load_model", "load_extras"]
