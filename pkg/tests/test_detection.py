import numpy as np
import pytest

from hybridfdi.dataset import FeatureTable
from hybridfdi.detection import (
    FLOOR, OneClassPipeline, detect, fit_embedding, fit_pipeline, fit_threshold, load_pipeline,
    report, save_pipeline, similarity, threshold_from_errors,
)
from hybridfdi.errors import ConfigError, StateError
from hybridfdi.nnet import DenseNetwork, TrainConfig

SHORT = TrainConfig(lr=0.001, batch_size=64, epochs=3)


def _constant_head(n_in, value):
    return DenseNetwork.from_layers([(np.zeros((1, n_in)), np.array([value]), "identity")])


def _pipe(value, beta=None, n=3):
    return OneClassPipeline("none", n, head=_constant_head(n, value), beta=beta)


def test_threshold_examples():
    assert threshold_from_errors(np.full(500, 0.02)) == pytest.approx(0.03, rel=1e-15)
    assert threshold_from_errors(0.01 * np.arange(1, 1001)) == pytest.approx(15.0 * 0.999, rel=1e-12)
    assert threshold_from_errors(np.zeros(100)) == FLOOR
    with pytest.raises(ConfigError):
        threshold_from_errors([])


def test_threshold_from_validation_rows():
    p = _pipe(0.98)
    assert fit_threshold(p, np.zeros((10, 3))) == pytest.approx(0.03)
    with pytest.raises(ConfigError):
        fit_threshold(p, np.zeros((0, 3)))


def test_similarity_ratios():
    x = np.zeros((1, 3))
    assert similarity(_pipe(1.0, beta=0.5), x)[0] == 0.0
    assert similarity(_pipe(0.75, beta=0.25), x)[0] == 1.0
    assert similarity(_pipe(1.5, beta=0.25), x)[0] == 2.0
    with pytest.raises(StateError):
        similarity(_pipe(1.0), x)


def test_detect_boundary():
    assert detect([0.99, 1.0, 7.3]).tolist() == [1, 0, 0]


def test_unknown_embedding():
    with pytest.raises(ConfigError):
        OneClassPipeline("pca", 3)


def test_constant_target_is_learnable(rng):
    X = rng.uniform(-1, 1, size=(320, 5))
    pipe = fit_pipeline(X, "none", seed=0)
    out = pipe.output(X)
    assert np.mean((out >= 0.99) & (out <= 1.01)) >= 0.99


def test_same_seed_same_pipeline(rng):
    X = rng.uniform(-1, 1, size=(100, 6))
    a = fit_pipeline(X, "ae", seed=3, ae_cfg=SHORT, head_cfg=SHORT)
    b = fit_pipeline(X, "ae", seed=3, ae_cfg=SHORT, head_cfg=SHORT)
    c = fit_pipeline(X, "ae", seed=4, ae_cfg=SHORT, head_cfg=SHORT)
    assert a.digest() == b.digest() != c.digest()


def test_vae_head_sees_posterior_mean(rng):
    X = rng.uniform(-1, 1, size=(50, 6))
    pipe = fit_embedding(X, "vae", seed=0, ae_cfg=SHORT)
    mu, _ = pipe.embedder.encode_stats(X)
    assert np.array_equal(pipe.embed(X), mu)


def test_report_and_round_trip(tmp_path, rng):
    X = rng.uniform(-1, 1, size=(80, 6))
    pipe = fit_pipeline(X, "vae", seed=1, ae_cfg=SHORT, head_cfg=SHORT)
    fit_threshold(pipe, X[:20])
    save_pipeline(pipe, tmp_path / "p.npz")
    back = load_pipeline(tmp_path / "p.npz")
    assert back.digest() == pipe.digest()
    n = len(X)
    table = FeatureTable("cm", X, np.ones(n, int), np.arange(n), np.ones(n, int), np.zeros(n, int),
                         np.array(["S_T"] * n))
    rep = report(back, table, normalized=True)
    np.testing.assert_array_equal(rep.score, similarity(pipe, X))
    rep.write_csv(tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == "flight_cycle,index_in_flight,s_I,h_hat,h_true,fault_id,split_tag"
