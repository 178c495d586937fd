"""Unscented Kalman filter over a random-walk health-parameter state."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericError, ParseError
from .plant import N_THETA, SENSOR_NAMES, THETA_NAMES, VIRTUAL_NAMES, Plant

JITTERS = (0.0, 1e-12, 1e-9, 1e-6)


@dataclass(frozen=True)
class UkfConfig:
    """Unscented-transform scaling and noise levels.

    ``Q`` and ``R`` may be given explicitly.  When ``R`` is None the
    measurement noise is relative: ``(measurement_rel_std * |baseline|)**2``
    per sensor at the current operating point.
    """

    alpha: float = 0.5
    kappa: float = 0.0
    beta_ut: float = 2.0
    process_std: float = 2e-4
    measurement_rel_std: float = 1e-3
    init_std: float = 5e-3
    Q: np.ndarray | None = None
    R: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.process_std < 0 or self.measurement_rel_std <= 0 or self.init_std < 0:
            raise ConfigError("noise scales must be positive")
        for name in ("Q", "R"):
            m = getattr(self, name)
            if m is None:
                continue
            m = np.asarray(m, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-14):
                raise ConfigError(f"{name} must be a symmetric square matrix")
            if np.linalg.eigvalsh(m).min() < (0.0 if name == "Q" else 1e-300):
                raise ConfigError(f"{name} must be positive (semi)definite")
            object.__setattr__(self, name, m)

    def process_cov(self, n):
        if self.Q is not None:
            return self.Q
        return self.process_std ** 2 * np.eye(n)

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("alpha", "kappa", "beta_ut", "process_std",
                                            "measurement_rel_std", "init_std")}
        d["Q"] = None if self.Q is None else self.Q.tolist()
        d["R"] = None if self.R is None else self.R.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**dict(d))
        except TypeError as exc:
            raise ConfigError(f"bad UKF config: {exc}") from None


@dataclass(frozen=True)
class UkfState:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def initial(cls, cfg: UkfConfig | None = None, n=N_THETA, mean=None):
        cfg = cfg or UkfConfig()
        m = np.zeros(n) if mean is None else np.asarray(mean, dtype=float).copy()
        return cls(m, cfg.init_std ** 2 * np.eye(n))


class SigmaPoints(NamedTuple):
    points: np.ndarray      # (2n+1, n)
    wm: np.ndarray
    wc: np.ndarray
    jitter: float


def ut_weights(n, cfg: UkfConfig):
    lam = cfg.alpha ** 2 * (n + cfg.kappa) - n
    wm = np.full(2 * n + 1, 0.5 / (n + lam))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + (1.0 - cfg.alpha ** 2 + cfg.beta_ut)
    return lam, wm, wc


def sigma_points(state: UkfState, cfg: UkfConfig) -> SigmaPoints:
    """Symmetric sigma set around ``state.mean``.

    The covariance square root is a Cholesky factor; if the factorisation
    fails, diagonal jitter from :data:`JITTERS` is added in turn.
    """
    n = len(state.mean)
    lam, wm, wc = ut_weights(n, cfg)
    for jitter in JITTERS:
        try:
            root = linalg.cholesky((n + lam) * (state.cov + jitter * np.eye(n)), lower=True)
            break
        except linalg.LinAlgError:
            continue
    else:
        raise NumericError("covariance square root failed after maximum jitter")
    pts = np.empty((2 * n + 1, n))
    pts[0] = state.mean
    pts[1:n + 1] = state.mean + root.T
    pts[n + 1:] = state.mean - root.T
    return SigmaPoints(pts, wm, wc, jitter)


def predict(state: UkfState, cfg: UkfConfig) -> UkfState:
    """Random-walk time update: mean kept, ``cov + Q``."""
    return UkfState(state.mean.copy(), state.cov + cfg.process_cov(len(state.mean)))


@dataclass(frozen=True)
class UpdateResult:
    state: UkfState
    innovation: np.ndarray
    innovation_cov: np.ndarray
    predicted: np.ndarray


def ut_update(state: UkfState, measure: Callable, y, R, cfg: UkfConfig) -> UpdateResult:
    """Measurement update with an arbitrary vectorised measurement function.

    ``measure`` maps an ``(k, n)`` array of states to ``(k, m)`` outputs.
    """
    sp = sigma_points(state, cfg)
    Y = np.asarray(measure(sp.points), dtype=float)
    y_mean = sp.wm @ Y
    dY = Y - y_mean
    dX = sp.points - state.mean
    S = (dY.T * sp.wc) @ dY + R
    S = 0.5 * (S + S.T)
    Pxy = (dX.T * sp.wc) @ dY
    try:
        cho = linalg.cho_factor(S)
    except linalg.LinAlgError:
        raise NumericError(f"singular innovation covariance (cond={np.linalg.cond(S):.3e})") from None
    K = linalg.cho_solve(cho, Pxy.T).T
    innov = np.asarray(y, dtype=float) - y_mean
    mean = state.mean + K @ innov
    cov = state.cov - K @ S @ K.T
    cov = 0.5 * (cov + cov.T)
    return UpdateResult(UkfState(mean, cov), innov, S, y_mean)


def update(state: UkfState, w, x_s, plant: Plant, cfg: UkfConfig) -> UkfState:
    """Plant measurement update for one snapshot."""
    return _plant_update(state, w, x_s, plant, cfg).state


def _plant_update(state, w, x_s, plant, cfg):
    w = np.asarray(w.as_array() if hasattr(w, "as_array") else w, dtype=float)
    scale = plant.baseline_arrays(w[None])[0][0]
    # work in units relative to the nominal sensor magnitude
    y = np.asarray(x_s, dtype=float) / scale

    def measure(pts):
        xs, _ = plant.simulate_arrays(w[0], w[1], w[2], pts, check=False)
        return xs / scale

    if cfg.R is not None:
        R = cfg.R / np.outer(scale, scale)
    else:
        R = cfg.measurement_rel_std ** 2 * np.eye(len(scale))
    return ut_update(state, measure, y, R, cfg)


@dataclass
class CalibrationTrace:
    """Per-snapshot calibration outputs (rows follow the input order)."""

    keys: np.ndarray            # (N, 2) flight_cycle, index_in_flight
    w: np.ndarray
    theta_hat: np.ndarray
    xs_hat: np.ndarray
    xv_hat: np.ndarray
    innovation: np.ndarray      # relative units
    innovation_cov_trace: np.ndarray
    final_state: UkfState | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.theta_hat)

    def row(self, i):
        return {"theta_hat": self.theta_hat[i], "xs_hat": self.xs_hat[i], "xv_hat": self.xv_hat[i]}

    @property
    def innovation_norm(self):
        return np.linalg.norm(self.innovation, axis=1)

    def with_theta(self, theta_hat, plant: Plant | None = None):
        """Copy with new ``theta_hat`` and model outputs recomputed from it."""
        plant = plant or Plant()
        xs, xv = plant.simulate_arrays(self.w[:, 0], self.w[:, 1], self.w[:, 2], theta_hat, check=False)
        return replace(self, theta_hat=theta_hat, xs_hat=xs, xv_hat=xv)


def calibrate_series(w, xs, plant: Plant | None = None, init: UkfState | None = None,
                     cfg: UkfConfig | None = None, keys=None) -> CalibrationTrace:
    """Run predict/update over a time-ordered series of snapshots.

    Parameters
    ----------
    w : (N, 3) array
        Operating conditions (altitude, Mach, power lever).
    xs : (N, 14) array
        Measured sensors.
    keys : (N, 2) array, optional
        Snapshot keys copied into the trace.
    """
    plant = plant or Plant()
    cfg = cfg or UkfConfig()
    w = np.asarray(w, dtype=float).reshape(-1, 3)
    xs = np.asarray(xs, dtype=float).reshape(-1, len(SENSOR_NAMES))
    n = len(w)
    state = init or UkfState.initial(cfg)
    dim = len(state.mean)
    theta = np.empty((n, dim))
    innov = np.empty((n, xs.shape[1]))
    s_tr = np.empty(n)
    for t in range(n):
        state = predict(state, cfg)
        try:
            res = _plant_update(state, w[t], xs[t], plant, cfg)
        except NumericError as exc:
            raise NumericError(f"snapshot {t}: {exc}") from exc
        state = res.state
        theta[t] = state.mean
        innov[t] = res.innovation
        s_tr[t] = np.trace(res.innovation_cov)
    if n:
        xs_hat, xv_hat = plant.simulate_arrays(w[:, 0], w[:, 1], w[:, 2], theta, check=False)
    else:
        xs_hat, xv_hat = np.empty((0, len(SENSOR_NAMES))), np.empty((0, len(VIRTUAL_NAMES)))
    keys = np.zeros((n, 2), dtype=int) if keys is None else np.asarray(keys, dtype=int)
    return CalibrationTrace(keys, w, theta, xs_hat, xv_hat, innov, s_tr, state)


def calibrate_bundle(bundle, plant: Plant | None = None, cfg: UkfConfig | None = None):
    """Calibrate every snapshot of a dataset bundle in row order."""
    return calibrate_series(bundle.w, bundle.xs, plant, None, cfg, keys=bundle.keys())


def contaminate(trace: CalibrationTrace, snr_db, seed=0, plant: Plant | None = None):
    """Add white noise to every estimated health parameter.

    Per component the noise variance is ``mean(theta_k**2) / 10**(snr_db/10)``.
    Components with zero power pass through unchanged; ``snr_db = inf``
    returns the trace as is.
    """
    snr_db = float(snr_db)
    if np.isnan(snr_db):
        raise ConfigError("snr_db must be a number or +inf")
    if np.isinf(snr_db) and snr_db > 0:
        return trace
    power = np.mean(trace.theta_hat ** 2, axis=0)
    std = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(trace.theta_hat.shape) * std
    return trace.with_theta(trace.theta_hat + noise, plant)


CALIBRATION_COLUMNS = (
    ("flight_cycle", "index_in_flight") + THETA_NAMES + SENSOR_NAMES + VIRTUAL_NAMES
    + ("innovation_norm",)
)


def write_calibration_csv(trace: CalibrationTrace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CALIBRATION_COLUMNS)
        norms = trace.innovation_norm
        for i in range(len(trace)):
            vals = np.concatenate([trace.theta_hat[i], trace.xs_hat[i], trace.xv_hat[i], [norms[i]]])
            writer.writerow([int(trace.keys[i, 0]), int(trace.keys[i, 1])] + [f"{v:.17g}" for v in vals])


def read_calibration_csv(path, w=None):
    """Read ``calibration.csv``.  Operating conditions are not stored in the
    file; pass ``w`` to attach them."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty calibration file", line=1)
        for name in CALIBRATION_COLUMNS:
            if name not in header:
                raise ParseError(f"header is missing column {name!r}", line=1, column=name)
        pos = [header.index(c) for c in CALIBRATION_COLUMNS]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(row[p]) for p in pos])
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), line=lineno) from None
    a = np.asarray(rows, dtype=float).reshape(-1, len(CALIBRATION_COLUMNS))
    n = len(a)
    k0, k1 = 2, 2 + N_THETA
    k2 = k1 + len(SENSOR_NAMES)
    k3 = k2 + len(VIRTUAL_NAMES)
    w = np.full((n, 3), np.nan) if w is None else np.asarray(w, dtype=float)
    innov = np.zeros((n, len(SENSOR_NAMES)))
    innov[:, 0] = a[:, k3]   # only the norm is persisted
    return CalibrationTrace(a[:, :2].astype(int), w, a[:, k0:k1], a[:, k1:k2], a[:, k2:k3],
                            innov, np.full(n, np.nan))
