import numpy as np
import pytest

from hybridfdi.calibration import calibrate_bundle
from hybridfdi.dataset import (
    DELTA_NAMES, FEATURE_IDS, FEATURE_NAMES, HYBRID_HPC_EFF_COLUMN, GenerationConfig, FaultSpec, Normalizer,
    assemble_features, assemble_input, compute_residuals, feature_table, generate_dataset,
    nearest_rank_percentile, normalize_fit, read_csv, read_features, split_labeled, write_csv,
    write_features,
)
from hybridfdi.errors import ConfigError, DependencyError, ParseError
from hybridfdi.plant import HPC_EFF, N_THETA, SENSOR_NAMES


@pytest.fixture(scope="module")
def default_bundle(plant):
    return generate_dataset(GenerationConfig(), 0, plant)


def test_default_counts(default_bundle):
    b = default_bundle
    assert b.mask("S_T", "S_V").sum() == 3500
    assert b.mask("D_U", "D_T").sum() == 760
    assert b.mask("S_V").sum() == 210 and b.mask("S_T").sum() == 3290
    assert (b.h_s[b.mask("D_U", "D_T")] == 1).sum() == 60


def test_fault_magnitudes_exact(default_bundle):
    b = default_bundle
    for fid, mag in {1: -0.005, 2: -0.010, 3: -0.015, 4: -0.020}.items():
        assert np.all(b.theta[b.fault_id == fid, HPC_EFF] == mag)
    assert set(b.split[np.isin(b.fault_id, (1, 2))]) == {"D_U"}
    assert set(b.split[np.isin(b.fault_id, (3, 4))]) == {"D_T"}


def test_generation_deterministic(small_generation, plant):
    a = generate_dataset(small_generation, 7, plant)
    b = generate_dataset(small_generation, 7, plant)
    assert a.to_csv_text() == b.to_csv_text()
    assert a.content_hash() != generate_dataset(small_generation, 8, plant).content_hash()


def test_operating_points_above_min_altitude(default_bundle):
    assert default_bundle.w[:, 0].min() > GenerationConfig().min_altitude


def test_fault_on_unknown_theta_rejected():
    with pytest.raises(ConfigError):
        GenerationConfig(faults=(FaultSpec(1, -0.01, target=N_THETA),))


def test_split_membership():
    labeled = np.arange(3500)
    t1, v1 = split_labeled(labeled, 0.06, seed=3)
    t2, v2 = split_labeled(labeled, 0.06, seed=3)
    assert len(v1) == 210 and len(t1) == 3290
    assert np.array_equal(v1, v2) and np.array_equal(t1, t2)
    assert not set(t1) & set(v1)


def test_residuals_zero_without_degradation(plant, small_generation):
    gen = GenerationConfig(**{**small_generation.__dict__, "theta_noise": 0.0})
    b = generate_dataset(gen, 1, plant)
    healthy = np.flatnonzero(b.h_s == 1)[0]
    assert np.array_equal(compute_residuals(b.snapshot(healthy), plant), np.zeros(len(SENSOR_NAMES)))
    fault4 = np.flatnonzero(b.fault_id == 4)[0]
    d = compute_residuals(b.snapshot(fault4), plant)
    assert d[SENSOR_NAMES.index("T48")] > 0
    assert len(DELTA_NAMES) == 14


def test_feature_lengths(plant, small_generation):
    b = generate_dataset(small_generation, 2, plant)
    snap = b.snapshot(0)
    assert len(assemble_input(snap, variant="cm")) == 17
    assert len(assemble_input(snap, variant="residual", plant=plant)) == 31
    trace = calibrate_bundle(b.subset(np.arange(3)), plant)
    assert len(assemble_input(snap, trace.row(0), "hybrid")) == 45
    assert [len(FEATURE_NAMES[v]) for v in ("cm", "residual", "hybrid")] == [17, 31, 45]
    assert FEATURE_IDS["hybrid"][-10:] == tuple(str(i) for i in range(36, 46))
    assert FEATURE_IDS["hybrid"][HYBRID_HPC_EFF_COLUMN] == "40"
    with pytest.raises(DependencyError):
        assemble_input(snap, None, "hybrid")
    with pytest.raises(DependencyError):
        assemble_features(b, None, "hybrid")


def test_normalizer_examples():
    n = normalize_fit(np.array([[2.0, 5.0], [4.0, 5.0], [3.0, 5.0]]))
    np.testing.assert_array_equal(n.apply([[2.0, 5.0], [4.0, 5.0]]), [[-1.0, 0.0], [1.0, 0.0]])
    assert n.apply([[6.0, 7.0]])[0, 0] == 3.0     # no clipping on unseen data


def test_normalizer_round_trip(rng):
    X = rng.normal(size=(50, 6)) * rng.uniform(0.1, 100, 6) + rng.normal(size=6) * 100
    n = normalize_fit(X)
    assert np.max(np.abs(n.invert(n.apply(X)) - X)) < 1e-12 * np.abs(X).max()
    assert Normalizer.from_dict(n.to_dict()).apply(X).tolist() == n.apply(X).tolist()


def test_snapshot_csv_round_trip(tmp_path, plant, small_generation):
    b = generate_dataset(small_generation, 4, plant)
    write_csv(b, tmp_path / "s.csv")
    r = read_csv(tmp_path / "s.csv", plant)
    for k in ("flight_cycle", "index_in_flight", "w", "xs", "h_s", "fault_id", "theta", "split"):
        assert np.array_equal(getattr(r, k), getattr(b, k)), k
    assert r.provenance == b.provenance
    assert r.to_csv_text() == b.to_csv_text()


def test_missing_column_is_named(tmp_path, plant, small_generation):
    b = generate_dataset(small_generation, 4, plant)
    text = b.to_csv_text().replace(",T48,", ",T48x,", 1)
    (tmp_path / "bad.csv").write_text(text)
    with pytest.raises(ParseError, match="T48"):
        read_csv(tmp_path / "bad.csv", plant)


def test_malformed_row_reports_line(tmp_path, plant, small_generation):
    b = generate_dataset(small_generation, 4, plant)
    lines = b.to_csv_text().splitlines()
    lines[5] = lines[5].replace(",", ",abc,", 1)
    (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as exc:
        read_csv(tmp_path / "bad.csv", plant)
    assert exc.value.line == 6


def test_hybrid_feature_file_schema(tmp_path, plant, small_generation):
    b = generate_dataset(small_generation, 5, plant)
    trace = calibrate_bundle(b, plant)
    t = feature_table(b, trace, "hybrid", plant)
    write_features(t, tmp_path / "f.csv")
    r = read_features(tmp_path / "f.csv")
    assert r.variant == "hybrid" and r.values.shape == (len(b), 45)
    assert np.array_equal(r.values, t.values)


def test_nearest_rank_percentile():
    vals = 0.01 * np.arange(1, 1001)
    assert nearest_rank_percentile(vals, 99.9) == vals[998]   # ceil(0.999 * 1000) = 999th
    assert nearest_rank_percentile(np.arange(1, 11.0), 50) == 5.0
    assert nearest_rank_percentile([3.0], 99.9) == 3.0
