import numpy as np
import pytest

from hybridfdi.errors import ConfigError
from hybridfdi.isolation import (
    FLOOR, IsolationReport, fit_nu, isolation_report, isolation_scores, nu_from_errors,
    rank_affected, summarize_by_fault,
)


def test_perfect_reconstructor_hits_floor(rng):
    X = rng.normal(size=(30, 4))
    assert np.all(fit_nu(lambda x: x, X).nu == FLOOR)
    with pytest.raises(ConfigError):
        fit_nu(lambda x: x, np.empty((0, 4)))


def test_constant_column_errors():
    X = np.zeros((50, 3))
    nu = fit_nu(lambda x: x + np.array([0.04, 0.0, -0.1]), X).nu
    np.testing.assert_allclose(nu, [0.04, FLOOR, 0.1], rtol=1e-15)


def test_margin_scales_percentile_not_floor():
    X = np.zeros((50, 2))
    nu = fit_nu(lambda x: x + np.array([0.04, 0.0]), X, margin=1.5).nu
    np.testing.assert_allclose(nu, [0.06, FLOOR], rtol=1e-15)
    with pytest.raises(ConfigError):
        nu_from_errors(np.ones((3, 2)), margin=0.0)


def test_nearest_rank_per_column(rng):
    E = rng.uniform(size=(1000, 3))
    nu = nu_from_errors(E)
    for k in range(3):
        assert nu[k] == np.sort(E[:, k])[998]


def test_scores_and_ranking():
    nu = np.array([0.1, 0.2, 0.3])
    x = np.zeros((1, 3))
    assert not isolation_scores(lambda v: v, x, nu).any()
    d = isolation_scores(lambda v: v + np.array([0.0, 0.4, 0.0]), x, nu)[0]
    assert d.tolist() == [0.0, 2.0, 0.0]
    assert rank_affected(d, ("a", "b", "c")) == ["b"]


def test_rank_ties_and_empty():
    assert rank_affected([0.5, 3.0, 3.0, 0.9], ("1", "2", "3", "4")) == ["2", "3"]
    assert rank_affected([0.5, 3.0, 4.0, 0.9]) == [2, 1]
    assert rank_affected([1.0, 0.2]) == []


def test_report_and_summary(tmp_path):
    scores = np.array([[2.0, 0.1, 1.5], [3.0, 1.2, 0.0], [0.2, 5.0, 0.1], [0.0, 0.0, 0.0]])
    rep = IsolationReport(np.array([[1, 0], [1, 1], [2, 0], [3, 0]]), scores, ("40", "41", "42"),
                          np.array([4, 4, 3, 0]))
    assert rep.top() == ["40", "40", "41", "40"]
    assert rep.affected(0) == ["40", "42"]
    s = {f.fault_id: f for f in summarize_by_fault(rep)}
    assert set(s) == {3, 4}
    assert s[4].top_column == "40" and s[4].top_share == 1.0
    assert s[4].majority_affected == ("40",)
    assert s[4].mean_affected == 2.0
    rep.write_csv(tmp_path / "i.csv")
    lines = (tmp_path / "i.csv").read_text().splitlines()
    assert lines[0] == "flight_cycle,index_in_flight,d_40,d_41,d_42,fault_id,affected"
    assert lines[1].endswith(",4,40 42")


def test_isolation_report_shapes(rng):
    X = rng.normal(size=(5, 3))
    rep = isolation_report(lambda v: v * 0.9, X, np.ones(3), (1, 2, 3))
    assert rep.scores.shape == (5, 3) and rep.ids == ("1", "2", "3")
