"""Synthetic study dataset: flights, staged faults, input spaces, CSV I/O."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, DependencyError, ParseError
from .plant import (
    HPC_EFF, N_THETA, SENSOR_NAMES, THETA_NAMES, THETA_RANGE, VIRTUAL_NAMES,
    W_NAMES, OperatingPoint, Plant,
)

SPLITS = ("S_T", "S_V", "D_U", "D_T")
VARIANTS = ("cm", "residual", "hybrid")
VARIANT_LABELS = {"cm": "CMBD", "residual": "Residual", "hybrid": "Hybrid"}
DELTA_NAMES = tuple("delta_" + s for s in SENSOR_NAMES)

FEATURE_NAMES = {
    "cm": W_NAMES + SENSOR_NAMES,
    "residual": W_NAMES + SENSOR_NAMES + DELTA_NAMES,
    "hybrid": W_NAMES + SENSOR_NAMES + VIRTUAL_NAMES + THETA_NAMES,
}
# identifiers used when reporting affected signals (table ids, deltas as dN)
FEATURE_IDS = {
    "cm": tuple(str(i) for i in range(1, 18)),
    "residual": tuple(str(i) for i in range(1, 18)) + tuple(f"d{i}" for i in range(4, 18)),
    "hybrid": tuple(str(i) for i in range(1, 46)),
}
HYBRID_HPC_EFF_COLUMN = FEATURE_NAMES["hybrid"].index("HPC_eff_mod")

SNAPSHOT_COLUMNS = (
    ("flight_cycle", "index_in_flight") + W_NAMES + SENSOR_NAMES
    + ("h_s", "fault_id") + THETA_NAMES + ("split_tag",)
)


def variant_from_name(name):
    key = str(name).lower()
    aliases = {"cmbd": "cm", "cm": "cm", "residual": "residual", "hybrid": "hybrid", "cbhd": "hybrid"}
    if key not in aliases:
        raise ConfigError(f"unknown input variant {name!r}; expected one of {VARIANTS}")
    return aliases[key]


@dataclass(frozen=True)
class FaultSpec:
    fault_id: int
    magnitude: float            # fraction, -0.005 == -0.5 %
    target: int = HPC_EFF       # theta index
    split: str = "D_U"


def default_faults():
    return (
        FaultSpec(1, -0.005, HPC_EFF, "D_U"),
        FaultSpec(2, -0.010, HPC_EFF, "D_U"),
        FaultSpec(3, -0.015, HPC_EFF, "D_T"),
        FaultSpec(4, -0.020, HPC_EFF, "D_T"),
    )


def validate_faults(faults):
    if not faults:
        return
    ids = [f.fault_id for f in faults]
    if ids != sorted(ids) or len(set(ids)) != len(ids) or min(ids) < 1:
        raise ConfigError("fault ids must be distinct, positive and increasing")
    for f in faults:
        if not (isinstance(f.target, (int, np.integer)) and 0 <= f.target < N_THETA):
            raise ConfigError(f"fault {f.fault_id} targets unknown theta index {f.target!r}")
        if f.split not in ("D_U", "D_T"):
            raise ConfigError(f"fault {f.fault_id} has invalid destination split {f.split!r}")
        if not THETA_RANGE[0] <= f.magnitude <= THETA_RANGE[1]:
            raise ConfigError(f"fault {f.fault_id} magnitude {f.magnitude} outside theta range")
    if len({f.target for f in faults}) != 1:
        raise ConfigError("all faults must target the same theta component (single fault mode)")
    mags = [f.magnitude for f in faults]
    if any(b >= a for a, b in zip(mags, mags[1:])):
        raise ConfigError("fault magnitudes must be strictly decreasing with fault id")


@dataclass(frozen=True)
class GenerationConfig:
    n_healthy_flights: int = 20
    snapshots_per_flight: int = 175
    n_initial_healthy: int = 60
    theta_noise: float = 0.002
    sensor_noise: float = 0.0           # relative std, off by default
    faults: tuple = field(default_factory=default_faults)
    min_altitude: float = 10000.0
    cruise_altitude: tuple = (20000.0, 38000.0)
    validation_fraction: float = 0.06

    def __post_init__(self):
        validate_faults(self.faults)
        if self.n_healthy_flights < 1 or self.snapshots_per_flight < 4:
            raise ConfigError("need at least one healthy flight of 4+ snapshots")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["faults"] = [asdict(f) for f in self.faults]
        d["cruise_altitude"] = list(self.cruise_altitude)
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "faults" in data:
            try:
                data["faults"] = tuple(FaultSpec(**f) for f in data["faults"])
            except TypeError as exc:
                raise ConfigError(f"bad fault schedule: {exc}") from None
        if "cruise_altitude" in data:
            data["cruise_altitude"] = tuple(data["cruise_altitude"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad generation config: {exc}") from None

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Snapshot:
    flight_cycle: int
    index_in_flight: int
    w: OperatingPoint
    x_s: np.ndarray
    h_s: int
    fault_id: int
    true_theta: np.ndarray
    split_tag: str


@dataclass
class Normalizer:
    """Per-column min/max map onto [-1, 1]; constant columns map to 0."""

    lo: np.ndarray
    hi: np.ndarray

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        out = 2.0 * (x - self.lo) / safe - 1.0
        return np.where(span > 0, out, 0.0)

    def invert(self, v):
        v = np.asarray(v, dtype=float)
        span = self.hi - self.lo
        return np.where(span > 0, (v + 1.0) * 0.5 * span + self.lo, self.lo)

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))


def normalize_fit(train):
    train = np.asarray(train, dtype=float)
    if train.ndim != 2 or len(train) == 0:
        raise ConfigError("normalize_fit needs a non-empty 2-D feature matrix")
    return Normalizer(train.min(axis=0), train.max(axis=0))


def normalize_apply(n: Normalizer, v):
    return n.apply(v)


@dataclass
class DatasetBundle:
    """Column-oriented store of every snapshot (rows in chronological order)."""

    flight_cycle: np.ndarray
    index_in_flight: np.ndarray
    w: np.ndarray
    xs: np.ndarray
    h_s: np.ndarray
    fault_id: np.ndarray
    theta: np.ndarray
    split: np.ndarray
    provenance: dict = field(default_factory=dict)
    normalizers: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.h_s)

    def mask(self, *splits):
        return np.isin(self.split, splits)

    def snapshot(self, i):
        return Snapshot(int(self.flight_cycle[i]), int(self.index_in_flight[i]),
                        OperatingPoint(*self.w[i]), self.xs[i].copy(), int(self.h_s[i]),
                        int(self.fault_id[i]), self.theta[i].copy(), str(self.split[i]))

    def subset(self, rows):
        rows = np.asarray(rows)
        return DatasetBundle(self.flight_cycle[rows], self.index_in_flight[rows], self.w[rows],
                             self.xs[rows], self.h_s[rows], self.fault_id[rows], self.theta[rows],
                             self.split[rows], dict(self.provenance))

    def keys(self):
        return np.stack([self.flight_cycle, self.index_in_flight], axis=1)

    def to_csv_text(self):
        buf = io.StringIO()
        _write_snapshots(self, buf)
        return buf.getvalue()

    def content_hash(self):
        return hashlib.sha256(self.to_csv_text().encode()).hexdigest()


# ---------------------------------------------------------------- generation

def flight_profile(rng, n, cfg: GenerationConfig):
    """Randomised climb / cruise / descent profile with ``alt > min_altitude``."""
    lo_alt = cfg.min_altitude + rng.uniform(300.0, 2000.0, size=2)
    cruise = rng.uniform(*cfg.cruise_altitude)
    f_climb = rng.uniform(0.2, 0.3)
    f_desc = rng.uniform(0.2, 0.3)
    n_climb = max(1, int(round(f_climb * n)))
    n_desc = max(1, int(round(f_desc * n)))
    n_cruise = max(1, n - n_climb - n_desc)
    n_desc = n - n_climb - n_cruise

    m_lo = rng.uniform(0.40, 0.50, size=2)
    m_cruise = rng.uniform(0.70, 0.85)
    tra_climb = rng.uniform(85.0, 98.0)
    tra_cruise = rng.uniform(62.0, 80.0)
    tra_desc = rng.uniform(25.0, 45.0)

    alt = np.concatenate([
        np.linspace(lo_alt[0], cruise, n_climb, endpoint=False),
        np.full(n_cruise, cruise),
        np.linspace(cruise, lo_alt[1], n_desc),
    ])
    mach = np.concatenate([
        np.linspace(m_lo[0], m_cruise, n_climb, endpoint=False),
        np.full(n_cruise, m_cruise),
        np.linspace(m_cruise, m_lo[1], n_desc),
    ])
    tra = np.concatenate([
        np.full(n_climb, tra_climb), np.full(n_cruise, tra_cruise), np.full(n_desc, tra_desc),
    ])
    alt = alt + rng.normal(0.0, 150.0, n)
    mach = mach + rng.normal(0.0, 0.005, n)
    tra = tra + rng.normal(0.0, 1.5, n)
    alt = np.clip(alt, cfg.min_altitude + 1.0, 40000.0)
    mach = np.clip(mach, 0.0, 0.9)
    tra = np.clip(tra, 20.0, 100.0)
    return np.stack([alt, mach, tra], axis=1)


def generate_dataset(cfg: GenerationConfig | None = None, seed: int = 0, plant: Plant | None = None):
    """Healthy flights (D_L), initial healthy snapshots plus faults 1-2 (D_U),
    faults 3-4 (D_T).  Faulty flights hold the fault magnitude on the target
    modifier for the whole flight; the other modifiers keep the healthy
    white noise."""
    cfg = cfg or GenerationConfig()
    plant = plant or Plant()
    rng = np.random.default_rng(seed)

    segments = []   # (n, fault_id, split)
    for _ in range(cfg.n_healthy_flights):
        segments.append((cfg.snapshots_per_flight, 0, "D_L"))
    if cfg.n_initial_healthy > 0:
        segments.append((cfg.n_initial_healthy, 0, "D_U"))
    for f in cfg.faults:
        segments.append((cfg.snapshots_per_flight, f.fault_id, f.split))
    faults = {f.fault_id: f for f in cfg.faults}

    cols = {k: [] for k in ("cycle", "idx", "w", "theta", "fault", "split")}
    for cycle, (n, fid, split) in enumerate(segments, start=1):
        w = flight_profile(rng, n, cfg)
        theta = rng.normal(0.0, cfg.theta_noise, size=(n, N_THETA))
        theta = np.clip(theta, *THETA_RANGE)
        if fid:
            theta[:, faults[fid].target] = faults[fid].magnitude
        cols["cycle"].append(np.full(n, cycle))
        cols["idx"].append(np.arange(n))
        cols["w"].append(w)
        cols["theta"].append(theta)
        cols["fault"].append(np.full(n, fid))
        cols["split"].append(np.full(n, split, dtype=object))

    w = np.concatenate(cols["w"])
    theta = np.concatenate(cols["theta"])
    xs, _ = plant.simulate_arrays(w[:, 0], w[:, 1], w[:, 2], theta)
    if cfg.sensor_noise > 0:
        xs = xs * (1.0 + rng.normal(0.0, cfg.sensor_noise, size=xs.shape))
    fault = np.concatenate(cols["fault"])
    split = np.concatenate(cols["split"]).astype("<U3")

    labeled = np.flatnonzero(split == "D_L")
    train_idx, val_idx = split_labeled(labeled, cfg.validation_fraction, seed)
    split[train_idx] = "S_T"
    split[val_idx] = "S_V"

    bundle = DatasetBundle(
        flight_cycle=np.concatenate(cols["cycle"]),
        index_in_flight=np.concatenate(cols["idx"]),
        w=w, xs=xs, h_s=(fault == 0).astype(int), fault_id=fault, theta=theta, split=split,
        provenance={"seed": int(seed), "config_hash": cfg.digest()},
    )
    fit_normalizers(bundle, plant)
    return bundle


def split_labeled(labeled, fraction=0.06, seed=0):
    """Seeded split of labelled row indices into (S_T, S_V);
    ``|S_V| = round(fraction * |D_L|)``."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError("fraction must lie in (0, 1)")
    labeled = np.asarray(labeled)
    n_val = int(round(fraction * len(labeled)))
    rng = np.random.default_rng([int(seed), 6])
    perm = rng.permutation(len(labeled))
    val = np.sort(labeled[perm[:n_val]])
    train = np.sort(labeled[perm[n_val:]])
    return train, val


def fit_normalizers(bundle: DatasetBundle, plant: Plant | None = None):
    """Fit the calibration-free normalizers (cm, residual) on S_T."""
    train = bundle.mask("S_T")
    for variant in ("cm", "residual"):
        feats = assemble_features(bundle, None, variant, plant)
        bundle.normalizers[variant] = normalize_fit(feats[train])
    return bundle.normalizers


# ---------------------------------------------------------------- features

def compute_residuals(snap: Snapshot, plant: Plant, theta_healthy=None):
    """``delta = x_s - S(w, theta_healthy)`` in sensor order (14 values)."""
    theta_healthy = np.zeros(N_THETA) if theta_healthy is None else np.asarray(theta_healthy, float)
    xs_hat, _ = plant.simulate(snap.w, theta_healthy)
    return snap.x_s - xs_hat


def residual_matrix(w, xs, plant: Plant | None = None, theta_healthy=None):
    plant = plant or Plant()
    theta_healthy = np.zeros(N_THETA) if theta_healthy is None else np.asarray(theta_healthy, float)
    th = np.broadcast_to(theta_healthy, (len(w), N_THETA))
    xs_hat, _ = plant.simulate_arrays(w[:, 0], w[:, 1], w[:, 2], th)
    return xs - xs_hat


def assemble_input(snap: Snapshot, calib_row=None, variant="hybrid", plant: Plant | None = None):
    """Feature vector of one snapshot.

    ``calib_row`` is a mapping/object with ``theta_hat``, ``xs_hat`` and
    ``xv_hat`` (e.g. ``CalibrationTrace.row(i)``); required for hybrid.
    """
    variant = variant_from_name(variant)
    w = snap.w.as_array()
    if variant == "cm":
        return np.concatenate([w, snap.x_s])
    if variant == "residual":
        return np.concatenate([w, snap.x_s, compute_residuals(snap, plant or Plant())])
    if calib_row is None:
        raise DependencyError("hybrid features need a calibration row")
    return np.concatenate([w, calib_row["xs_hat"], calib_row["xv_hat"], calib_row["theta_hat"]])


def assemble_features(bundle: DatasetBundle, trace=None, variant="hybrid", plant: Plant | None = None):
    """Feature matrix (rows = bundle rows) in the fixed column order of
    :data:`FEATURE_NAMES`."""
    variant = variant_from_name(variant)
    if variant == "cm":
        return np.hstack([bundle.w, bundle.xs])
    if variant == "residual":
        return np.hstack([bundle.w, bundle.xs, residual_matrix(bundle.w, bundle.xs, plant)])
    if trace is None:
        raise DependencyError("hybrid features need a calibration trace")
    if len(trace) != len(bundle):
        raise DependencyError(f"calibration trace has {len(trace)} rows, bundle has {len(bundle)}")
    return np.hstack([bundle.w, trace.xs_hat, trace.xv_hat, trace.theta_hat])


# ---------------------------------------------------------------- CSV

def _fmt(v):
    return f"{v:.17g}"


def _write_snapshots(bundle: DatasetBundle, fh):
    if bundle.provenance:
        fh.write("# " + json.dumps(bundle.provenance, sort_keys=True) + "\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SNAPSHOT_COLUMNS)
    for i in range(len(bundle)):
        writer.writerow(
            [int(bundle.flight_cycle[i]), int(bundle.index_in_flight[i])]
            + [_fmt(v) for v in bundle.w[i]] + [_fmt(v) for v in bundle.xs[i]]
            + [int(bundle.h_s[i]), int(bundle.fault_id[i])]
            + [_fmt(v) for v in bundle.theta[i]] + [str(bundle.split[i])]
        )


def write_csv(bundle: DatasetBundle, path):
    with open(path, "w", newline="") as fh:
        _write_snapshots(bundle, fh)


def _read_table(path, required):
    """Return (header, rows, first_data_line, comment) with header validation."""
    text = Path(path).read_text()
    lines = text.splitlines()
    comment = None
    start = 0
    if lines and lines[0].startswith("#"):
        comment = lines[0][1:].strip()
        start = 1
    if start >= len(lines):
        raise ParseError("missing header", line=start + 1)
    reader = csv.reader(lines[start:])
    header = next(reader)
    for name in required:
        if name not in header:
            raise ParseError(f"header is missing column {name!r}", line=start + 1, column=name)
    rows = list(reader)
    return header, rows, start + 2, comment


def read_csv(path, plant: Plant | None = None):
    """Inverse of :func:`write_csv`."""
    header, rows, first, comment = _read_table(path, SNAPSHOT_COLUMNS)
    pos = {name: header.index(name) for name in SNAPSHOT_COLUMNS}
    n = len(rows)
    num = np.empty((n, len(SNAPSHOT_COLUMNS) - 1))
    split = np.empty(n, dtype="<U3")
    numeric_cols = SNAPSHOT_COLUMNS[:-1]
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=first + r)
        try:
            num[r] = [float(row[pos[c]]) for c in numeric_cols]
        except ValueError as exc:
            raise ParseError(str(exc), line=first + r) from None
        tag = row[pos["split_tag"]]
        if tag not in SPLITS:
            raise ParseError(f"unknown split tag {tag!r}", line=first + r)
        split[r] = tag
    c = {name: k for k, name in enumerate(numeric_cols)}
    idx = lambda names: [c[x] for x in names]  # noqa: E731
    provenance = {}
    if comment:
        try:
            provenance = json.loads(comment)
        except json.JSONDecodeError:
            raise ParseError("bad provenance comment", line=1) from None
    bundle = DatasetBundle(
        flight_cycle=num[:, c["flight_cycle"]].astype(int),
        index_in_flight=num[:, c["index_in_flight"]].astype(int),
        w=num[:, idx(W_NAMES)], xs=num[:, idx(SENSOR_NAMES)],
        h_s=num[:, c["h_s"]].astype(int), fault_id=num[:, c["fault_id"]].astype(int),
        theta=num[:, idx(THETA_NAMES)], split=split, provenance=provenance,
    )
    if np.any((bundle.h_s == 1) != (bundle.fault_id == 0)):
        raise ParseError("h_s inconsistent with fault_id")
    fit_normalizers(bundle, plant)
    return bundle


@dataclass
class FeatureTable:
    """Raw (unnormalised) features of one input variant plus row metadata."""

    variant: str
    values: np.ndarray
    flight_cycle: np.ndarray
    index_in_flight: np.ndarray
    h_s: np.ndarray
    fault_id: np.ndarray
    split: np.ndarray

    @property
    def names(self):
        return FEATURE_NAMES[self.variant]

    def __len__(self):
        return len(self.values)

    def mask(self, *splits):
        return np.isin(self.split, splits)

    def subset(self, rows):
        return FeatureTable(self.variant, self.values[rows], self.flight_cycle[rows],
                            self.index_in_flight[rows], self.h_s[rows], self.fault_id[rows],
                            self.split[rows])


def feature_table(bundle: DatasetBundle, trace=None, variant="hybrid", plant=None):
    variant = variant_from_name(variant)
    return FeatureTable(variant, assemble_features(bundle, trace, variant, plant),
                        bundle.flight_cycle, bundle.index_in_flight, bundle.h_s,
                        bundle.fault_id, bundle.split)


_META = ("flight_cycle", "index_in_flight", "h_s", "fault_id", "split_tag")


def write_features(table: FeatureTable, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("flight_cycle", "index_in_flight") + table.names + ("h_s", "fault_id", "split_tag"))
        for i in range(len(table)):
            writer.writerow([int(table.flight_cycle[i]), int(table.index_in_flight[i])]
                            + [_fmt(v) for v in table.values[i]]
                            + [int(table.h_s[i]), int(table.fault_id[i]), str(table.split[i])])


def read_features(path):
    """Read a ``features_<variant>.csv``; the variant is inferred from the
    feature columns present."""
    header, rows, first, _ = _read_table(path, _META)
    cols = tuple(h for h in header if h not in _META)
    variant = next((v for v, names in FEATURE_NAMES.items() if names == cols), None)
    if variant is None:
        # report the first missing column of the closest schema
        best = max(FEATURE_NAMES, key=lambda v: len(set(FEATURE_NAMES[v]) & set(cols)))
        missing = [c for c in FEATURE_NAMES[best] if c not in cols]
        what = f"missing column {missing[0]!r}" if missing else "unexpected columns"
        raise ParseError(f"feature header does not match any variant: {what}", line=first - 1)
    pos = [header.index(c) for c in cols]
    n = len(rows)
    values = np.empty((n, len(cols)))
    meta = {k: np.empty(n, dtype=int) for k in ("flight_cycle", "index_in_flight", "h_s", "fault_id")}
    split = np.empty(n, dtype="<U3")
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=first + r)
        try:
            values[r] = [float(row[p]) for p in pos]
            for k in meta:
                meta[k][r] = int(row[header.index(k)])
        except ValueError as exc:
            raise ParseError(str(exc), line=first + r) from None
        split[r] = row[header.index("split_tag")]
    return FeatureTable(variant, values, meta["flight_cycle"], meta["index_in_flight"],
                        meta["h_s"], meta["fault_id"], split)


def nearest_rank_percentile(values, p):
    """Nearest-rank percentile: the ``ceil(p n / 100)``-th order statistic
    (computed along axis 0)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n == 0:
        raise ValueError("percentile of an empty sample")
    rank = math.ceil(Fraction(str(p)) * n / 100)
    rank = min(max(rank, 1), n)
    return np.sort(values, axis=0)[rank - 1]
