import json

import pytest

from hybridfdi import cli
from hybridfdi.errors import NumericError

CONFIG = {"generation": {"n_healthy_flights": 4, "snapshots_per_flight": 60, "n_initial_healthy": 20},
          "ae_training": {"epochs": 3, "batch_size": 32}, "head_training": {"epochs": 3, "batch_size": 32},
          "helm": {"max_iter": 50, "strict": False}, "runs": 1}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.json").write_text(json.dumps(CONFIG))
    assert cli.main(["generate", "--config", str(d / "cfg.json"), "--seed", "2", "--out", str(d)]) == 0
    assert cli.main(["calibrate", "--config", str(d / "cfg.json"), "--in", str(d / "snapshots.csv"),
                     "--out", str(d / "calibration.csv"), "--features", str(d / "features_hybrid.csv")]) == 0
    return d


def test_plant_baseline(tmp_path):
    assert cli.main(["plant", "baseline", "--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "b.csv").read_text().startswith("alt,XM,TRA,")


def test_generate_outputs(work):
    summary = json.loads((work / "summary.json").read_text())
    assert summary["rows"] == 4 * 60 + 20 + 4 * 60
    for name in ("snapshots.csv", "features_cm.csv", "features_residual.csv", "calibration.csv"):
        assert (work / name).exists()


@pytest.mark.parametrize("model", ["ae", "vae", "helm", "ocsvm"])
def test_train_detect(work, model):
    cfg, feats = str(work / "cfg.json"), str(work / "features_hybrid.csv")
    out = work / f"{model}.npz"
    assert cli.main(["train", "--config", cfg, "--model", model, "--variant", "hybrid", "--in", feats,
                     "--out", str(out)]) == 0
    assert cli.main(["detect", "--pipeline", str(out), "--in", feats, "--out", str(work / f"{model}.csv")]) == 0
    rows = (work / f"{model}.csv").read_text().splitlines()
    assert len(rows) == 1 + 4 * 60 + 20 + 4 * 60


def test_isolate_and_latent(work):
    feats = str(work / "features_hybrid.csv")
    cli.main(["train", "--config", str(work / "cfg.json"), "--model", "ae", "--in", feats,
              "--out", str(work / "iso.npz")])
    assert cli.main(["isolate", "--pipeline", str(work / "iso.npz"), "--in", feats,
                     "--out", str(work / "iso.csv")]) == 0
    assert "d_40" in (work / "iso.csv").read_text().splitlines()[0]
    assert cli.main(["export-latent", "--pipeline", str(work / "iso.npz"), "--in", feats,
                     "--out", str(work / "z.csv")]) == 0


def test_config_errors_exit_2(work, tmp_path):
    (tmp_path / "bad.json").write_text('{"gird": 1}')
    assert cli.main(["evaluate", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 2
    assert cli.main(["detect", "--pipeline", str(tmp_path / "missing.npz"), "--in", "x", "--out", "y"]) == 2
    cli.main(["train", "--config", str(work / "cfg.json"), "--model", "ocsvm",
              "--in", str(work / "features_cm.csv"), "--out", str(work / "cm.npz")])
    assert cli.main(["detect", "--pipeline", str(work / "cm.npz"), "--in", str(work / "features_hybrid.csv"),
                     "--out", str(tmp_path / "r.csv")]) == 2
    assert cli.main(["isolate", "--pipeline", str(work / "cm.npz"), "--in", str(work / "features_cm.csv"),
                     "--out", str(tmp_path / "r.csv")]) == 2
    assert cli.main(["train", "--model", "ae"]) == 2


def test_numeric_failure_exit_3(work, monkeypatch, tmp_path):
    def boom(cfg):
        raise NumericError("forced")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["evaluate", "--config", str(work / "cfg.json"), "--out", str(tmp_path)]) == 3


def test_evaluate_sweep_envelope(work, tmp_path):
    cfg = str(work / "cfg.json")
    assert cli.main(["evaluate", "--config", cfg, "--model", "ocsvm", "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "results.csv").exists() and (tmp_path / "e" / "summary.json").exists()
    assert cli.main(["noise-sweep", "--config", cfg, "--snr", "20", "--include-clean", "--models", "ocsvm",
                     "--out", str(tmp_path / "n")]) == 0
    s = json.loads((tmp_path / "n" / "summary.json").read_text())
    assert s["snr_db"] == [None, 20.0]
    assert cli.main(["envelope", "--config", cfg, "--model", "ocsvm", "--out", str(tmp_path / "v")]) == 0
    assert (tmp_path / "v" / "envelope.csv").exists()
