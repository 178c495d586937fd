import numpy as np
import pytest

from hybridfdi.calibration import (
    CalibrationTrace, UkfConfig, UkfState, calibrate_bundle, calibrate_series, contaminate, predict,
    read_calibration_csv, sigma_points, ut_update, write_calibration_csv,
)
from hybridfdi.dataset import GenerationConfig, generate_dataset
from hybridfdi.errors import ConfigError, NumericError
from hybridfdi.plant import HPC_EFF, N_THETA, SENSOR_NAMES, VIRTUAL_NAMES


def _kalman(mean, cov, H, c, R, y):
    """Closed-form linear-Gaussian measurement update."""
    S = H @ cov @ H.T + R
    K = np.linalg.solve(S, H @ cov).T
    return mean + K @ (y - H @ mean - c), cov - K @ S @ K.T


def _random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T + n * np.eye(n)) / n


# ---------------------------------------------------------------- sigma points

def test_zero_covariance_collapses_points():
    st = UkfState(np.array([0.1, -0.2, 0.3]), np.zeros((3, 3)))
    sp = sigma_points(st, UkfConfig())
    assert np.max(np.abs(sp.points - st.mean)) < 1e-5


def test_sigma_moments(rng):
    cfg = UkfConfig()
    for n in (1, 3, 10):
        st = UkfState(rng.normal(size=n), _random_spd(rng, n, 1e-4))
        sp = sigma_points(st, cfg)
        assert np.max(np.abs(sp.wm @ sp.points - st.mean)) < 1e-14
        d = sp.points - st.mean
        cov = (d.T * sp.wc) @ d
        # the centre point carries no spread, so wc[0] does not enter
        assert np.linalg.norm(cov - (st.cov + sp.jitter * np.eye(n))) < 1e-10


def test_sqrt_failure_raises():
    st = UkfState(np.zeros(2), np.diag([1.0, -1.0]))
    with pytest.raises(NumericError):
        sigma_points(st, UkfConfig())


# ---------------------------------------------------------------- predict

def test_predict_zero_noise_keeps_state(rng):
    st = UkfState(rng.normal(size=N_THETA), _random_spd(rng, N_THETA))
    out = predict(st, UkfConfig(process_std=0.0))
    assert np.array_equal(out.mean, st.mean) and np.array_equal(out.cov, st.cov)


def test_predict_adds_process_noise(rng):
    q = 3e-5
    cfg = UkfConfig(process_std=np.sqrt(q))
    st = UkfState.initial(cfg)
    one = predict(st, cfg)
    assert np.trace(one.cov) == pytest.approx(np.trace(st.cov) + N_THETA * q, rel=1e-12)
    cur = st
    for _ in range(7):
        cur = predict(cur, cfg)
    np.testing.assert_allclose(cur.cov, st.cov + 7 * cfg.process_cov(N_THETA), rtol=1e-12)


# ---------------------------------------------------------------- update

def test_zero_innovation_keeps_mean(rng):
    cfg = UkfConfig()
    st = UkfState(rng.normal(size=3), _random_spd(rng, 3, 0.01))
    H = rng.normal(size=(4, 3))
    measure = lambda pts: pts @ H.T + np.sin(pts[:, :1])   # noqa: E731
    y = ut_update(st, measure, np.zeros(4), 0.1 * np.eye(4), cfg).predicted
    res = ut_update(st, measure, y, 0.1 * np.eye(4), cfg)
    np.testing.assert_allclose(res.state.mean, st.mean, atol=1e-15)


def test_linear_systems_match_kalman_filter():
    """100 random linear-Gaussian systems, several predict/update cycles."""
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 6))
        H = rng.normal(size=(m, n))
        c = rng.normal(size=m)
        R = _random_spd(rng, m, rng.uniform(0.01, 1.0))
        Q = _random_spd(rng, n, rng.uniform(1e-4, 1e-1))
        cfg = UkfConfig(alpha=rng.uniform(0.1, 1.0), kappa=float(rng.integers(0, 3)),
                        beta_ut=2.0, Q=Q)
        st = UkfState(rng.normal(size=n), _random_spd(rng, n))
        km, kc = st.mean.copy(), st.cov.copy()
        for _ in range(5):
            y = rng.normal(size=m)
            st = ut_update(predict(st, cfg), lambda p: p @ H.T + c, y, R, cfg).state
            km, kc = _kalman(km, kc + Q, H, c, R, y)
            worst = max(worst, np.max(np.abs(st.mean - km)), np.max(np.abs(st.cov - kc)))
    assert worst < 1e-8


def test_singular_innovation_reports_condition():
    st = UkfState(np.zeros(2), np.zeros((2, 2)))
    with pytest.raises(NumericError, match="cond"):
        ut_update(st, lambda p: np.zeros((len(p), 2)), np.zeros(2), np.zeros((2, 2)), UkfConfig())


def test_config_validation():
    with pytest.raises(ConfigError):
        UkfConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        UkfConfig(R=-np.eye(14))
    cfg = UkfConfig(process_std=1e-4)
    assert UkfConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- series

def _cruise_points(rng, n):
    return np.column_stack([rng.uniform(25000, 38000, n), rng.uniform(0.7, 0.85, n),
                            rng.uniform(62, 80, n)])


def test_held_step_is_recovered(plant, rng):
    w = _cruise_points(rng, 50)
    theta = np.zeros((50, N_THETA))
    theta[:, HPC_EFF] = -0.01
    xs, _ = plant.simulate_arrays(w[:, 0], w[:, 1], w[:, 2], theta)
    tr = calibrate_series(w, xs, plant)
    assert abs(tr.theta_hat[-1, HPC_EFF] + 0.01) < 0.001


def test_empty_series():
    tr = calibrate_series(np.empty((0, 3)), np.empty((0, len(SENSOR_NAMES))))
    assert len(tr) == 0 and tr.xv_hat.shape == (0, len(VIRTUAL_NAMES))


@pytest.fixture(scope="module")
def calibrated(plant):
    b = generate_dataset(GenerationConfig(n_healthy_flights=3, n_initial_healthy=0), 11, plant)
    return b, calibrate_bundle(b, plant)


def test_noiseless_healthy_series_stays_small(plant):
    gen = GenerationConfig(n_healthy_flights=3, n_initial_healthy=0, theta_noise=0.0, faults=())
    b = generate_dataset(gen, 11, plant)
    assert np.abs(calibrate_bundle(b, plant).theta_hat).max() < 0.003


def test_healthy_series_within_noise_scale(calibrated):
    # per-snapshot healthy scatter of 0.002 on every modifier; bound at three times that
    b, tr = calibrated
    assert np.abs(tr.theta_hat[b.h_s == 1]).max() < 3 * GenerationConfig().theta_noise


def test_fault_flight_is_tracked(calibrated):
    b, tr = calibrated
    rows = np.flatnonzero(b.fault_id == 2)
    second = rows[len(rows) // 2:]
    assert abs(tr.theta_hat[second, HPC_EFF].mean() + 0.01) <= 0.002


def test_calibration_csv_round_trip(tmp_path, calibrated):
    b, tr = calibrated
    write_calibration_csv(tr, tmp_path / "c.csv")
    r = read_calibration_csv(tmp_path / "c.csv", b.w)
    for k in ("keys", "theta_hat", "xs_hat", "xv_hat"):
        assert np.array_equal(getattr(r, k), getattr(tr, k))
    np.testing.assert_array_equal(r.innovation_norm, tr.innovation_norm)


# ---------------------------------------------------------------- contamination

def _long_trace(plant, rng, n=10_000):
    w = _cruise_points(rng, n)
    theta = rng.normal(0.0, 0.004, size=(n, N_THETA))
    theta[:, 2] = 0.0                                   # zero-power component
    xs, xv = plant.simulate_arrays(w[:, 0], w[:, 1], w[:, 2], theta)
    return CalibrationTrace(np.zeros((n, 2), dtype=int), w, theta, xs, xv,
                            np.zeros((n, len(SENSOR_NAMES))), np.zeros(n))


def test_contaminate_infinite_snr_is_identity(plant, rng):
    tr = _long_trace(plant, rng, 50)
    assert contaminate(tr, float("inf"), 0, plant) is tr


def test_contaminate_realised_snr(plant, rng):
    tr = _long_trace(plant, rng)
    out = contaminate(tr, 10.0, seed=5, plant=plant)
    noise = out.theta_hat - tr.theta_hat
    for k in range(N_THETA):
        if k == 2:
            assert not noise[:, k].any()
            continue
        snr = 10 * np.log10(np.mean(tr.theta_hat[:, k] ** 2) / np.mean(noise[:, k] ** 2))
        assert abs(snr - 10.0) < 0.5
    again = contaminate(tr, 10.0, seed=5, plant=plant)
    assert np.array_equal(again.theta_hat, out.theta_hat)
    xs, _ = plant.simulate_arrays(tr.w[:, 0], tr.w[:, 1], tr.w[:, 2], out.theta_hat, check=False)
    assert np.array_equal(out.xs_hat, xs)


def test_contaminate_rejects_nan(plant, rng):
    with pytest.raises(ConfigError):
        contaminate(_long_trace(plant, rng, 10), float("nan"))
