"""Surrogate turbofan performance model.

A closed-form, two-spool, separate-flow turbofan cycle that maps operating
conditions ``w = (alt, XM, TRA)`` and ten component health modifiers
``theta`` to 14 measured sensors and 18 virtual sensors.  The cascade is

    ambient -> fan -> LPC -> HPC -> burner -> HPT -> LPT -> nozzle

Every compressor stage is a low-order polynomial map in corrected speed with
its efficiency scaled by ``(1 + theta_eff)`` and corrected flow by
``(1 + theta_flow)``.  The turbine inlet temperature closes the work balance
between the spools and a scheduled nozzle back pressure; for the chosen
turbine laws this reduces to a quadratic, so the model is fully algebraic,
smooth and deterministic.

Column names and units follow the C-MAPSS variable tables (degR, psia, rpm,
pps) although the numbers are synthetic.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, NumericFailure

W_NAMES = ("alt", "XM", "TRA")
SENSOR_NAMES = (
    "Wf", "Nf", "Nc", "T2", "T24", "T30", "T48", "T50",
    "P15", "P21", "P24", "Ps30", "P40", "P50",
)
VIRTUAL_NAMES = (
    "T40", "P30", "P45", "W21", "W22", "W25", "W31", "W32", "W48", "W50",
    "epr", "SmFan", "SmLPC", "SmHPC", "NRf", "NRc", "PCNfR", "phi",
)
THETA_NAMES = (
    "fan_eff_mod", "fan_flow_mod", "LPC_eff_mod", "LPC_flow_mod",
    "HPC_eff_mod", "HPC_flow_mod", "HPT_eff_mod", "HPT_flow_mod",
    "LPT_eff_mod", "LPT_flow_mod",
)
# table ids: w 1-3, x_s 4-17, x_v 18-35, theta 36-45
W_IDS = (1, 2, 3)
SENSOR_IDS = tuple(range(4, 18))
VIRTUAL_IDS = tuple(range(18, 36))
THETA_IDS = tuple(range(36, 46))

N_SENSORS = len(SENSOR_NAMES)
N_VIRTUAL = len(VIRTUAL_NAMES)
N_THETA = len(THETA_NAMES)
HPC_EFF = THETA_NAMES.index("HPC_eff_mod")

ALT_RANGE = (0.0, 40000.0)
MACH_RANGE = (0.0, 0.9)
TRA_RANGE = (20.0, 100.0)
THETA_RANGE = (-0.10, 0.05)

DEFAULT_VERSION = "surrogate-v1"


@dataclass(frozen=True)
class OperatingPoint:
    """Scenario descriptor: altitude [ft], flight Mach number, throttle [%]."""

    altitude: float
    mach: float
    power_lever: float

    def __post_init__(self):
        for name, value, (lo, hi) in (
            ("altitude", self.altitude, ALT_RANGE),
            ("mach", self.mach, MACH_RANGE),
            ("power_lever", self.power_lever, TRA_RANGE),
        ):
            if not np.isfinite(value) or value < lo or value > hi:
                raise DomainError(name, value)

    def as_array(self):
        return np.array([self.altitude, self.mach, self.power_lever])


@dataclass(frozen=True)
class CompressorMap:
    flow_design: float          # corrected flow at 100 % speed [pps]
    flow_poly: tuple            # c0 + c1 n + c2 n^2
    pr_design: float
    pr_poly: tuple              # (PR - 1) shape: p1 n + p2 n^2
    eff_design: float
    eff_curvature: float
    eff_peak_speed: float
    surge_factor: float         # surge-line PR rise over the working line
    surge_eff_gain: float       # surge PR sensitivity to efficiency loss
    flow_pr_gain: float         # working-line PR sensitivity to flow modifier
    eff_pr_gain: float = 0.0    # working-line PR sensitivity to efficiency modifier


@dataclass(frozen=True)
class TurbineMap:
    eff_design: float
    eff_curvature: float
    eff_peak_speed: float


def _default_fan():
    return CompressorMap(1000.0, (-0.15, 0.85, 0.30), 1.55, (0.2, 0.8), 0.89,
                         0.45, 0.90, 1.22, 1.5, 0.6, 0.8)


def _default_lpc():
    return CompressorMap(121.0, (-0.30, 1.10, 0.20), 1.70, (0.1, 0.9), 0.87,
                         0.55, 0.92, 1.25, 2.0, 0.8, 0.3)


def _default_hpc():
    return CompressorMap(82.0, (-0.80, 2.20, -0.40), 14.0, (-0.6, 1.6), 0.85,
                         0.80, 0.95, 1.28, 2.5, 0.4)


@dataclass(frozen=True)
class PlantConfig:
    """Immutable coefficient set of the surrogate.  ``version`` tags a
    reproducible parameterisation; :meth:`from_version` returns it."""

    version: str = DEFAULT_VERSION
    t_ref: float = 518.67           # degR
    p_ref: float = 14.696           # psia
    lapse_rate: float = 3.566e-3    # degR/ft, single layer to 40 kft
    pressure_exponent: float = 5.2559
    gamma_c: float = 1.4
    gamma_t: float = 1.33
    cp_c: float = 0.240             # BTU/lbm/degR
    cp_t: float = 0.276
    lhv: float = 18400.0            # BTU/lbm
    burner_eff: float = 0.995
    mech_eff: float = 0.99
    nf_design: float = 2388.0       # rpm
    nc_design: float = 9050.0       # rpm
    nf_idle: float = 0.55           # corrected fan speed fraction at TRA=20
    nc_idle: float = 0.70
    core_speed_eff_gain: float = 0.35
    core_speed_flow_gain: float = 0.25
    core_speed_hpt_gain: float = 0.3
    core_flow_hpc_share: float = 0.4    # weight of HPC capacity in the core flow
    hpc_match_exponent: float = 0.5
    hpt_flow_pr_exponent: float = 0.7
    bypass_dp: float = 0.015
    burner_dp: float = 0.045
    ps30_dynamic: float = 0.06        # (Ps30/P30) loss at reference exit flow
    ps30_ref_flow: float = 28.0
    bypass_ref_ratio: float = 4.7
    bleed_w31: float = 0.030
    bleed_w32: float = 0.020
    bleed_flow_gain: float = 3.0
    nozzle_pr_gain: float = 0.45
    nozzle_flow_exponent: float = 1.2
    fan: CompressorMap = field(default_factory=_default_fan)
    lpc: CompressorMap = field(default_factory=_default_lpc)
    hpc: CompressorMap = field(default_factory=_default_hpc)
    hpt: TurbineMap = field(default_factory=lambda: TurbineMap(0.90, 0.30, 0.95))
    lpt: TurbineMap = field(default_factory=lambda: TurbineMap(0.91, 0.25, 0.90))
    theta_gain: tuple = (1.0,) * N_THETA

    def __post_init__(self):
        if len(self.theta_gain) != N_THETA:
            raise ConfigError(f"theta_gain must have {N_THETA} entries")

    @classmethod
    def from_version(cls, version=DEFAULT_VERSION):
        if version != DEFAULT_VERSION:
            raise ConfigError(f"unknown plant version {version!r}")
        return cls()

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        try:
            for key in ("fan", "lpc", "hpc"):
                if key in data:
                    m = dict(data[key])
                    m["flow_poly"] = tuple(m["flow_poly"])
                    m["pr_poly"] = tuple(m["pr_poly"])
                    data[key] = CompressorMap(**m)
            for key in ("hpt", "lpt"):
                if key in data:
                    data[key] = TurbineMap(**data[key])
            if "theta_gain" in data:
                data["theta_gain"] = tuple(float(g) for g in data["theta_gain"])
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad plant config: {exc}") from None

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read plant config {path}: {exc}") from None
        if set(data) == {"version"}:
            return cls.from_version(data["version"])
        return cls.from_dict(data)


def _check_range(name, values, bounds):
    lo, hi = bounds
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values) | (values < lo) | (values > hi)
    if np.any(bad):
        raise DomainError(name, values[bad].flat[0])


def _finite(stage, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericFailure(stage)


def ambient_arrays(alt, mach, cfg):
    """Fan-inlet total temperature and pressure (arrays)."""
    t_amb = cfg.t_ref - cfg.lapse_rate * alt
    p_amb = cfg.p_ref * (t_amb / cfg.t_ref) ** cfg.pressure_exponent
    ram = 1.0 + 0.5 * (cfg.gamma_c - 1.0) * mach**2
    t2 = t_amb * ram
    p2 = p_amb * ram ** (cfg.gamma_c / (cfg.gamma_c - 1.0))
    return t2, p2


def ambient(op: OperatingPoint, cfg: PlantConfig | None = None):
    """Return ``(T2, P2)`` for one operating point."""
    cfg = cfg or PlantConfig()
    t2, p2 = ambient_arrays(op.altitude, op.mach, cfg)
    return float(t2), float(p2)


def _compressor(m: CompressorMap, n, t_in, p_in, d_eff, d_flow, gamma, pr_shift=1.0):
    e = (gamma - 1.0) / gamma
    shape = m.pr_poly[0] * n + m.pr_poly[1] * n**2
    pr = 1.0 + (m.pr_design - 1.0) * shape * (1.0 + m.flow_pr_gain * d_flow + m.eff_pr_gain * d_eff) * pr_shift
    pr_surge = 1.0 + (m.pr_design - 1.0) * shape * m.surge_factor * (1.0 + m.surge_eff_gain * d_eff)
    eff = m.eff_design * (1.0 - m.eff_curvature * (n - m.eff_peak_speed) ** 2) * (1.0 + d_eff)
    tau = 1.0 + (pr**e - 1.0) / eff
    wc = m.flow_design * (m.flow_poly[0] + m.flow_poly[1] * n + m.flow_poly[2] * n**2) * (1.0 + d_flow)
    stall_margin = 100.0 * (pr_surge / pr - 1.0)
    return t_in * tau, p_in * pr, wc, stall_margin


def _turbine_eff(m: TurbineMap, n, d_eff):
    return m.eff_design * (1.0 - m.eff_curvature * (n - m.eff_peak_speed) ** 2) * (1.0 + d_eff)


def simulate_arrays(alt, mach, tra, theta, cfg: PlantConfig | None = None, check=True):
    """Vectorised model evaluation.

    Parameters
    ----------
    alt, mach, tra : array_like
        Operating conditions, broadcastable to a common shape ``S``.
    theta : array_like, shape ``S + (10,)`` (broadcastable)
        Health modifiers in :data:`THETA_NAMES` order.
    cfg : PlantConfig, optional
    check : bool
        Validate operating conditions and the theta box.  The filter turns
        this off for sigma points, which may leave the box transiently.

    Returns
    -------
    xs : ndarray, shape ``S + (14,)``
    xv : ndarray, shape ``S + (18,)``
    """
    cfg = cfg or PlantConfig()
    alt = np.asarray(alt, dtype=float)
    mach = np.asarray(mach, dtype=float)
    tra = np.asarray(tra, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (N_THETA,):
        raise DomainError("theta", theta.shape, f"theta must have {N_THETA} components")
    if check:
        _check_range("altitude", alt, ALT_RANGE)
        _check_range("mach", mach, MACH_RANGE)
        _check_range("power_lever", tra, TRA_RANGE)
        _check_range("theta", theta, THETA_RANGE)
    else:
        _finite("input", alt, mach, tra, theta)

    d = theta * np.asarray(cfg.theta_gain)
    d_fan_e, d_fan_f, d_lpc_e, d_lpc_f, d_hpc_e, d_hpc_f, d_hpt_e, d_hpt_f, d_lpt_e, d_lpt_f = np.moveaxis(d, -1, 0)

    # ambient + controller schedule
    t2, p2 = ambient_arrays(alt, mach, cfg)
    theta2 = t2 / cfg.t_ref
    delta2 = p2 / cfg.p_ref
    u = (tra - TRA_RANGE[0]) / (TRA_RANGE[1] - TRA_RANGE[0])
    nf = cfg.nf_idle + (1.0 - cfg.nf_idle) * u
    _finite("ambient", t2, p2)

    # fan
    t21, p21, wc21, sm_fan = _compressor(cfg.fan, nf, t2, p2, d_fan_e, d_fan_f, cfg.gamma_c)
    w21 = wc21 * delta2 / np.sqrt(theta2)
    _finite("fan", t21, p21, w21)

    # LPC, same spool as the fan
    t24, p24, wc22, sm_lpc = _compressor(cfg.lpc, nf, t21, p21, d_lpc_e, d_lpc_f, cfg.gamma_c)
    w_core = wc22 * (p21 / cfg.p_ref) / np.sqrt(t21 / cfg.t_ref) * (1.0 + d_hpc_f) ** cfg.core_flow_hpc_share
    bpr = (w21 - w_core) / w_core
    p15 = p21 * (1.0 - cfg.bypass_dp * (bpr / cfg.bypass_ref_ratio) ** 2)
    _finite("lpc", t24, p24, w_core)

    # HPC: core speed schedule, flow match against the HPC map
    nc = (cfg.nc_idle + (1.0 - cfg.nc_idle) * nf) \
        * (1.0 + d_hpc_e) ** (-cfg.core_speed_eff_gain) \
        * (1.0 + d_hpc_f) ** (-cfg.core_speed_flow_gain) \
        * (1.0 + d_hpt_e) ** cfg.core_speed_hpt_gain
    m = cfg.hpc
    wc_map = m.flow_design * (m.flow_poly[0] + m.flow_poly[1] * nc + m.flow_poly[2] * nc**2) * (1.0 + d_hpc_f)
    w25c = w_core * np.sqrt(t24 / cfg.t_ref) / (p24 / cfg.p_ref)
    match = (w25c / wc_map) ** cfg.hpc_match_exponent * (1.0 + d_hpt_f) ** (-cfg.hpt_flow_pr_exponent)
    t30, p30, _, sm_hpc = _compressor(m, nc, t24, p24, d_hpc_e, 0.0, cfg.gamma_c, pr_shift=match)
    w30c = w_core * np.sqrt(t30 / cfg.t_ref) / (p30 / cfg.p_ref)
    ps30 = p30 * (1.0 - cfg.ps30_dynamic * (w30c / cfg.ps30_ref_flow) ** 2)
    _finite("hpc", t30, p30, nc)

    # bleeds and burner pressure
    w25 = w_core
    bleed = 1.0 + cfg.bleed_flow_gain * d_hpt_f
    w31 = cfg.bleed_w31 * w25 * bleed
    w32 = cfg.bleed_w32 * w25 * bleed
    w_hot = w25 - w31 - w32
    mix = w_hot / w25
    p40 = p30 * (1.0 - cfg.burner_dp)
    p50 = p2 * (1.0 + cfg.nozzle_pr_gain * nf**2) * (1.0 + d_lpt_f) ** (-cfg.nozzle_flow_exponent)
    _finite("burner", w31, w32, p40, p50)

    # turbine work balance -> T40 (larger root of a quadratic)
    work_hp = w25 * cfg.cp_c * (t30 - t24) / cfg.mech_eff
    work_lp = (w21 * cfg.cp_c * (t21 - t2) + w_core * cfg.cp_c * (t24 - t21)) / cfg.mech_eff
    a = work_hp / (cfg.cp_t * w_hot)                # HPT gas temperature drop
    b = work_lp / (cfg.cp_t * w25)                  # LPT temperature drop
    eta_h = _turbine_eff(cfg.hpt, nc, d_hpt_e)
    eta_l = _turbine_eff(cfg.lpt, nf, d_lpt_e)
    e_t = (cfg.gamma_t - 1.0) / cfg.gamma_t
    c = (p50 / p40) ** e_t
    big_a = a / eta_h
    a_mix = a - (1.0 - mix) * t30 / mix            # T48 = mix * (T40 - a_mix)
    bm = b / (eta_l * mix)
    qa = 1.0 - c
    qb = big_a + a_mix + bm - c * a_mix
    qc = big_a * (a_mix + bm)
    disc = qb**2 - 4.0 * qa * qc
    _finite("turbine", disc)
    if np.any(disc <= 0.0) or np.any(qa <= 0.0):
        raise NumericFailure("turbine", "no turbine operating point (check nozzle schedule)")
    t40 = (qb + np.sqrt(disc)) / (2.0 * qa)
    t48 = mix * (t40 - a_mix)
    t50 = t48 - b
    pi_h = (1.0 - big_a / t40) ** (-1.0 / e_t)
    p45 = p40 / pi_h
    wf = w_hot * cfg.cp_t * (t40 - t30) / (cfg.burner_eff * cfg.lhv)
    w48 = w25 + wf
    _finite("turbine", t40, t48, t50, p45, wf)

    nf_phys = nf * cfg.nf_design * np.sqrt(theta2)
    nc_phys = nc * cfg.nc_design * np.sqrt(t24 / (1.25 * cfg.t_ref))
    nrf = nf * cfg.nf_design
    nrc = nc * cfg.nc_design
    pcnfr = 100.0 * nf
    xs = np.stack(np.broadcast_arrays(
        wf, nf_phys, nc_phys, t2, t24, t30, t48, t50, p15, p21, p24, ps30, p40, p50), axis=-1)
    xv = np.stack(np.broadcast_arrays(
        t40, p30, p45, w21, w_core, w25, w31, w32, w48, w48, p50 / p2,
        sm_fan, sm_lpc, sm_hpc, nrf, nrc, pcnfr, wf / ps30), axis=-1)
    _finite("outputs", xs, xv)
    return xs, xv


def simulate(op: OperatingPoint, theta, cfg: PlantConfig | None = None):
    """Evaluate the model at one operating point; returns ``(x_s, x_v)``."""
    xs, xv = simulate_arrays(op.altitude, op.mach, op.power_lever, theta, cfg)
    return xs, xv


def jacobian_theta(op: OperatingPoint, theta=None, cfg: PlantConfig | None = None, h=1e-6):
    """Central-difference Jacobian of ``[x_s, x_v]`` w.r.t. theta, shape (32, 10)."""
    if not h > 0:
        raise DomainError("h", h)
    theta = np.zeros(N_THETA) if theta is None else np.asarray(theta, dtype=float)
    steps = np.eye(N_THETA) * h
    pts = np.concatenate([theta + steps, theta - steps])
    xs, xv = simulate_arrays(op.altitude, op.mach, op.power_lever, pts, cfg, check=False)
    y = np.concatenate([xs, xv], axis=-1)
    return ((y[:N_THETA] - y[N_THETA:]) / (2.0 * h)).T


class Plant:
    """Bound model: a :class:`PlantConfig` plus a memo of nominal outputs.

    ``baseline(op)`` is the cached ``simulate(op, 0)``; it is what residuals
    are measured against.
    """

    def __init__(self, cfg: PlantConfig | None = None):
        self.cfg = cfg or PlantConfig()
        self._baseline = {}

    def simulate(self, op, theta):
        return simulate(op, theta, self.cfg)

    def simulate_arrays(self, alt, mach, tra, theta, check=True):
        return simulate_arrays(alt, mach, tra, theta, self.cfg, check=check)

    def jacobian_theta(self, op, theta=None, h=1e-6):
        return jacobian_theta(op, theta, self.cfg, h)

    def ambient(self, op):
        return ambient(op, self.cfg)

    def baseline(self, op: OperatingPoint):
        key = (op.altitude, op.mach, op.power_lever)
        if key not in self._baseline:
            xs, xv = self.simulate(op, np.zeros(N_THETA))
            xs.setflags(write=False)
            xv.setflags(write=False)
            self._baseline[key] = (xs, xv)
        return self._baseline[key]

    def baseline_arrays(self, w):
        """Nominal sensors for an ``(N, 3)`` array of operating points."""
        w = np.asarray(w, dtype=float)
        return self.simulate_arrays(w[:, 0], w[:, 1], w[:, 2], np.zeros((len(w), N_THETA)))

    def baseline_grid(self, altitudes=None, machs=None, tras=None):
        """Nominal outputs on a regular operating grid, cached in ``self``."""
        altitudes = np.linspace(10000.0, 40000.0, 7) if altitudes is None else np.asarray(altitudes)
        machs = np.linspace(0.3, 0.9, 7) if machs is None else np.asarray(machs)
        tras = np.linspace(20.0, 100.0, 9) if tras is None else np.asarray(tras)
        grid = np.array(np.meshgrid(altitudes, machs, tras, indexing="ij")).reshape(3, -1).T
        for row in grid:
            self.baseline(OperatingPoint(*row))
        xs, xv = self.baseline_arrays(grid)
        return grid, xs, xv


def write_baseline_csv(path, plant: Plant | None = None):
    plant = plant or Plant()
    grid, xs, xv = plant.baseline_grid()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(W_NAMES + SENSOR_NAMES + VIRTUAL_NAMES)
        for row in np.hstack([grid, xs, xv]):
            writer.writerow([f"{v:.17g}" for v in row])
    return len(grid)
