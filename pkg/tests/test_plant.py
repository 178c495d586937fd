import numpy as np
import pytest

from hybridfdi.errors import DomainError, NumericFailure
from hybridfdi.plant import (
    HPC_EFF, N_THETA, SENSOR_NAMES, VIRTUAL_NAMES, OperatingPoint, Plant, PlantConfig, ambient,
    jacobian_theta, simulate, simulate_arrays, write_baseline_csv,
)

CRUISE = OperatingPoint(35000.0, 0.8, 75.0)


def test_sea_level_static_is_reference():
    cfg = PlantConfig()
    t2, p2 = ambient(OperatingPoint(0.0, 0.0, 60.0), cfg)
    assert t2 == cfg.t_ref and p2 == cfg.p_ref


def test_inlet_conditions_fall_with_altitude():
    lo = ambient(OperatingPoint(10000.0, 0.5, 60.0))
    hi = ambient(OperatingPoint(30000.0, 0.5, 60.0))
    assert hi[0] < lo[0] and hi[1] < lo[1]


def test_inlet_pressure_rises_with_mach():
    p2 = [ambient(OperatingPoint(20000.0, m, 60.0))[1] for m in (0.3, 0.5, 0.7)]
    assert p2[0] < p2[1] < p2[2]


@pytest.mark.parametrize("field,kw", [
    ("altitude", dict(altitude=-1.0, mach=0.5, power_lever=60.0)),
    ("mach", dict(altitude=1000.0, mach=1.2, power_lever=60.0)),
    ("power_lever", dict(altitude=1000.0, mach=0.5, power_lever=10.0)),
])
def test_out_of_range_operating_point_names_field(field, kw):
    with pytest.raises(DomainError) as exc:
        OperatingPoint(**kw)
    assert exc.value.field == field


def test_zero_theta_equals_baseline(plant):
    xs, xv = plant.simulate(CRUISE, np.zeros(N_THETA))
    bs, bv = plant.baseline(CRUISE)
    assert np.array_equal(xs, bs) and np.array_equal(xv, bv)
    assert xs.shape == (len(SENSOR_NAMES),) and xv.shape == (len(VIRTUAL_NAMES),)


def test_hpc_efficiency_loss_signature(plant):
    theta = np.zeros(N_THETA)
    theta[HPC_EFF] = -0.02
    xs, xv = plant.simulate(CRUISE, theta)
    bs, bv = plant.baseline(CRUISE)
    t48 = SENSOR_NAMES.index("T48")
    sm = VIRTUAL_NAMES.index("SmHPC")
    assert xs[t48] > bs[t48]
    assert xv[sm] < bv[sm]


def test_jacobian_full_rank():
    J = jacobian_theta(CRUISE, h=1e-6)
    assert J.shape == (len(SENSOR_NAMES) + len(VIRTUAL_NAMES), N_THETA)
    s = np.linalg.svd(J, compute_uv=False)
    assert s[-1] > 1e-8 * s[0]
    assert np.linalg.matrix_rank(J, tol=1e-8 * s[0]) == N_THETA


def test_jacobian_hpc_efficiency_moves_t48():
    J = jacobian_theta(CRUISE)
    assert J[SENSOR_NAMES.index("T48"), HPC_EFF] != 0.0


def test_jacobian_step_stability():
    a = jacobian_theta(CRUISE, h=1e-5)
    b = jacobian_theta(CRUISE, h=5e-6)
    scale = np.abs(a).max()
    assert np.max(np.abs(a - b)) < 1e-6 * scale


def test_jacobian_zero_for_constant_model(monkeypatch):
    import hybridfdi.plant as pl
    const = (np.ones(len(SENSOR_NAMES)), np.ones(len(VIRTUAL_NAMES)))

    def flat(alt, mach, tra, theta, cfg=None, check=True):
        n = np.atleast_2d(theta).shape[0]
        return np.tile(const[0], (n, 1)), np.tile(const[1], (n, 1))

    monkeypatch.setattr(pl, "simulate_arrays", flat)
    assert not pl.jacobian_theta(CRUISE).any()


def test_jacobian_rejects_bad_step():
    with pytest.raises(DomainError):
        jacobian_theta(CRUISE, h=0.0)


def test_nonfinite_value_reports_stage():
    cfg = PlantConfig(lhv=float("nan"))
    with pytest.raises(NumericFailure) as exc:
        simulate(CRUISE, np.zeros(N_THETA), cfg)
    assert exc.value.stage


def test_vectorised_matches_scalar(rng):
    ops = [OperatingPoint(rng.uniform(1e4, 4e4), rng.uniform(0.3, 0.85), rng.uniform(30, 95))
           for _ in range(5)]
    theta = rng.normal(0, 0.005, size=(5, N_THETA))
    w = np.array([o.as_array() for o in ops])
    xs, xv = simulate_arrays(w[:, 0], w[:, 1], w[:, 2], theta)
    for k, op in enumerate(ops):
        s, v = simulate(op, theta[k])
        np.testing.assert_allclose(xs[k], s, rtol=1e-14)
        np.testing.assert_allclose(xv[k], v, rtol=1e-14)


def test_config_round_trip(tmp_path):
    cfg = PlantConfig(nf_design=2400.0)
    p = tmp_path / "plant.json"
    cfg.save(p)
    assert PlantConfig.load(p) == cfg


def test_baseline_csv(tmp_path):
    n = write_baseline_csv(tmp_path / "b.csv", Plant())
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert len(lines) == n + 1
    assert len(lines[0].split(",")) == 3 + len(SENSOR_NAMES) + len(VIRTUAL_NAMES)
