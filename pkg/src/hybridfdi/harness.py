"""Experiment orchestration: the variant by model grid, metrics, noise sweep,
envelope restriction and latent export."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import baseline_ocsvm as ocsvm
from .calibration import UkfConfig, calibrate_bundle, calibrate_series, contaminate, write_calibration_csv
from .dataset import (
    FEATURE_IDS, HYBRID_HPC_EFF_COLUMN, VARIANTS, GenerationConfig, assemble_features, generate_dataset,
    normalize_fit, variant_from_name, write_csv,
)
from .detection import (
    GAMMA, PERCENTILE, OneClassPipeline, detect, fit_embedding, fit_heads, fit_threshold, save_pipeline,
    similarity,
)
from .errors import ConfigError, FdiError
from .isolation import fit_nu, isolation_report, summarize_by_fault
from .nnet import AUTOENCODER_TRAINING, ONE_CLASS_TRAINING, HelmConfig, TrainConfig
from .plant import OperatingPoint, Plant

MODELS = ("ae", "vae", "helm", "ocsvm")
TEST_SPLITS = ("D_U", "D_T")
DEFAULT_SNR_DB = (40.0, 30.0, 20.0, 10.0)


# ---------------------------------------------------------------- configuration

def _train_cfg(d):
    try:
        return TrainConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad training config: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    ukf: UkfConfig = field(default_factory=UkfConfig)
    variants: tuple = VARIANTS
    models: tuple = MODELS
    seeds: tuple = tuple(range(10))
    ae_training: TrainConfig = AUTOENCODER_TRAINING
    head_training: TrainConfig = ONE_CLASS_TRAINING
    helm: HelmConfig = HelmConfig(strict=False)
    ocsvm_nu: float = ocsvm.NU
    ocsvm_gamma: float = ocsvm.GAMMA_RBF
    gamma: float = GAMMA
    percentile: float = PERCENTILE
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(variant_from_name(v) for v in self.variants))
        object.__setattr__(self, "models", tuple(str(m).lower() for m in self.models))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        bad = [m for m in self.models if m not in MODELS]
        if bad:
            raise ConfigError(f"unknown model(s) {bad}; expected a subset of {MODELS}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("run seeds must be distinct")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("run seeds must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.gamma <= 0 or not 0 < self.percentile <= 100:
            raise ConfigError("invalid detection threshold settings")

    @property
    def runs(self):
        return len(self.seeds)

    def to_dict(self):
        return {
            "generation": self.generation.to_dict(), "ukf": self.ukf.to_dict(),
            "variants": list(self.variants), "models": list(self.models), "seeds": list(self.seeds),
            "ae_training": asdict(self.ae_training), "head_training": asdict(self.head_training),
            "helm": {**asdict(self.helm), "hidden": list(self.helm.hidden)},
            "ocsvm_nu": self.ocsvm_nu, "ocsvm_gamma": self.ocsvm_gamma, "gamma": self.gamma,
            "percentile": self.percentile, "out_dir": self.out_dir, "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = set(cls.__dataclass_fields__) | {"runs"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
        if "runs" in data:
            runs = data.pop("runs")
            if "seeds" in data and len(data["seeds"]) != runs:
                raise ConfigError("runs disagrees with the length of seeds")
            data.setdefault("seeds", list(range(int(runs))))
        if "generation" in data:
            data["generation"] = GenerationConfig.from_dict(data["generation"])
        if "ukf" in data:
            data["ukf"] = UkfConfig.from_dict(data["ukf"])
        for key in ("ae_training", "head_training"):
            if key in data:
                data[key] = _train_cfg(data[key])
        if "helm" in data:
            h = dict(data["helm"])
            if "hidden" in h:
                h["hidden"] = tuple(h["hidden"])
            try:
                data["helm"] = HelmConfig(**h)
            except TypeError as exc:
                raise ConfigError(f"bad helm config: {exc}") from None
        for key in ("variants", "models", "seeds"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)


def cell_seed(run_seed, variant, model):
    """Seed of one grid cell, independent of which other cells exist."""
    ss = np.random.SeedSequence([int(run_seed), VARIANTS.index(variant), MODELS.index(model)])
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------- metrics

def accuracy(h_true, h_hat):
    """Percentage of matching binary labels."""
    h_true = np.asarray(h_true)
    h_hat = np.asarray(h_hat)
    if h_true.shape != h_hat.shape:
        raise ConfigError(f"label arrays differ in shape: {h_true.shape} vs {h_hat.shape}")
    if h_true.size == 0:
        raise ConfigError("accuracy of an empty label set is undefined")
    for a in (h_true, h_hat):
        if not np.all((a == 0) | (a == 1)):
            raise ConfigError("labels must be 0 or 1")
    return 100.0 * float(np.mean(h_true == h_hat))


def per_fault_accuracy(h_true, h_hat, fault_id):
    """Accuracy restricted to each fault id present (0 = healthy rows)."""
    fault_id = np.asarray(fault_id)
    return {int(f): accuracy(np.asarray(h_true)[fault_id == f], np.asarray(h_hat)[fault_id == f])
            for f in np.unique(fault_id)}


# ---------------------------------------------------------------- results

@dataclass
class CellResult:
    variant: str
    model: str
    seed: int
    accuracy: float | None = None
    fault_accuracy: dict = field(default_factory=dict)
    threshold: float | None = None
    error: str | None = None
    notes: str = ""
    isolation: list = field(default_factory=list)      # FaultSummary dicts plus target_share

    @property
    def ok(self):
        return self.error is None


def _num(v):
    return "" if v is None else repr(float(v))


class ResultsTable:
    """Per-run cells of the grid with aggregation helpers."""

    FAULT_COLUMNS = tuple(range(5))

    def __init__(self, cells, config: ExperimentConfig | None = None):
        self.cells = sorted(cells, key=lambda c: (c.seed, VARIANTS.index(c.variant), MODELS.index(c.model)))
        self.config = config

    def cell(self, variant, model, seed):
        for c in self.cells:
            if (c.variant, c.model, c.seed) == (variant, model, seed):
                return c
        raise KeyError((variant, model, seed))

    def per_run(self, variant, model):
        return [c.accuracy for c in self.cells if c.variant == variant and c.model == model and c.ok]

    def mean(self, variant, model):
        vals = self.per_run(variant, model)
        return float(np.mean(vals)) if vals else None

    def failed(self):
        return [c for c in self.cells if not c.ok]

    def pairs(self):
        seen = []
        for c in self.cells:
            if (c.variant, c.model) not in seen:
                seen.append((c.variant, c.model))
        return sorted(seen, key=lambda p: (VARIANTS.index(p[0]), MODELS.index(p[1])))

    def isolation_rows(self):
        rows = []
        for c in self.cells:
            for s in c.isolation:
                rows.append({"variant": c.variant, "model": c.model, "seed": c.seed, **s})
        return rows

    def pooled_target_share(self, variant, model, faults):
        """Share of faulty snapshots, pooled over runs, whose top-ranked
        column is the fault's target column."""
        hit = total = 0
        for r in self.isolation_rows():
            if r["variant"] == variant and r["model"] == model and r["fault_id"] in faults:
                if r["target_share"] is None:
                    return None
                hit += r["target_share"] * r["n_snapshots"]
                total += r["n_snapshots"]
        return hit / total if total else None

    # ------------------------------------------------------------ persistence

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "model", "seed", "status", "accuracy"]
                       + [f"accuracy_fault{f}" for f in self.FAULT_COLUMNS] + ["threshold", "notes", "error"])
            for c in self.cells:
                w.writerow([c.variant, c.model, c.seed, "ok" if c.ok else "failed", _num(c.accuracy)]
                           + [_num(c.fault_accuracy.get(f)) for f in self.FAULT_COLUMNS]
                           + [_num(c.threshold), c.notes, c.error or ""])

    def write_isolation_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "model", "seed", "fault_id", "n_snapshots", "top_column", "top_share",
                        "target_share", "majority_affected", "mean_affected"])
            for r in self.isolation_rows():
                w.writerow([r["variant"], r["model"], r["seed"], r["fault_id"], r["n_snapshots"],
                            r["top_column"], _num(r["top_share"]), _num(r["target_share"]),
                            " ".join(r["majority_affected"]), _num(r["mean_affected"])])

    def summary(self):
        out = {"cells": [], "failed": len(self.failed())}
        for v, m in self.pairs():
            out["cells"].append({"variant": v, "model": m, "mean_accuracy": self.mean(v, m),
                                 "per_run": self.per_run(v, m),
                                 "seeds": [c.seed for c in self.cells if (c.variant, c.model) == (v, m) and c.ok]})
        if self.config is not None:
            out["config"] = self.config.to_dict()
        return out

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.write_csv(out / "results.csv")
        self.write_isolation_csv(out / "isolation.csv")
        with open(out / "summary.json", "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_csv(cls, path):
        cells = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                def num(k, row=row):
                    return float(row[k]) if row[k] != "" else None
                fa = {f: num(f"accuracy_fault{f}") for f in cls.FAULT_COLUMNS if row[f"accuracy_fault{f}"] != ""}
                cells.append(CellResult(row["variant"], row["model"], int(row["seed"]), num("accuracy"), fa,
                                        num("threshold"), row["error"] or None, row["notes"]))
        return cls(cells)

    def format(self):
        lines = [f"{'variant':<10}{'model':<7}{'mean %':>9}  per run"]
        for v, m in self.pairs():
            mean = self.mean(v, m)
            runs = " ".join(f"{a:.1f}" for a in self.per_run(v, m))
            lines.append(f"{v:<10}{m:<7}{'failed' if mean is None else f'{mean:.1f}':>9}  {runs}")
        for c in self.failed():
            lines.append(f"failed: {c.variant}/{c.model} seed {c.seed}: {c.error}")
        return "\n".join(lines)


# ---------------------------------------------------------------- one run

@dataclass
class RunData:
    seed: int
    bundle: object
    trace: object
    calibration_error: str | None = None


def prepare_run(cfg: ExperimentConfig, seed, plant=None):
    """Generate and calibrate the data of one run.  A calibration failure
    is kept (hybrid cells fail on it, the others proceed)."""
    plant = plant or Plant()
    bundle = generate_dataset(cfg.generation, seed, plant)
    try:
        trace = calibrate_bundle(bundle, plant, cfg.ukf)
        err = None
    except FdiError as exc:
        trace, err = None, f"{type(exc).__name__}: {exc}"
    return RunData(seed, bundle, trace, err)


def variant_features(run: RunData, variant, plant=None):
    """``(normalizer, normalised feature matrix)`` of one input variant."""
    if variant == "hybrid" and run.trace is None:
        raise FdiError(f"calibration failed: {run.calibration_error}")
    X = assemble_features(run.bundle, run.trace, variant, plant)
    norm = normalize_fit(X[run.bundle.mask("S_T")])
    return norm, norm.apply(X)


def _error_text(exc):
    return f"{type(exc).__name__}: {exc}"


def _isolation_summaries(pipe, Xn, bundle, variant):
    val = bundle.mask("S_V")
    test = bundle.mask(*TEST_SPLITS)
    nu = fit_nu(pipe.embedder, Xn[val])
    pipe.nu = nu.nu
    rep = isolation_report(pipe.embedder, Xn[test], nu, FEATURE_IDS[variant],
                           bundle.keys()[test], bundle.fault_id[test])
    target = FEATURE_IDS[variant][HYBRID_HPC_EFF_COLUMN] if variant == "hybrid" else None
    tops = rep.top()
    out = []
    for s in summarize_by_fault(rep):
        rows = np.flatnonzero(rep.fault_id == s.fault_id)
        share = None if target is None else sum(tops[i] == target for i in rows) / len(rows)
        out.append({**s.to_dict(), "target_share": share})
    return rep, out


def _fit_ocsvm(cfg, Xn, bundle, seed):
    model = ocsvm.fit(Xn[bundle.mask("S_T")], cfg.ocsvm_nu, cfg.ocsvm_gamma, seed=seed)
    return model


def run_single(cfg: ExperimentConfig, seed, plant=None, run: RunData | None = None, out_dir=None):
    """Every (variant, model) cell of one run seed.

    Heads of the AE and VAE cells are trained side by side; this gives the
    same numbers as training each alone.
    """
    plant = plant or Plant()
    run = run or prepare_run(cfg, seed, plant)
    bundle = run.bundle
    test = bundle.mask(*TEST_SPLITS)
    h_true = bundle.h_s[test]
    fid = bundle.fault_id[test]
    run_dir = None
    if out_dir is not None:
        run_dir = Path(out_dir) / f"run_{seed:03d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        write_csv(bundle, run_dir / "snapshots.csv")
        if run.trace is not None:
            write_calibration_csv(run.trace, run_dir / "calibration.csv")

    cells, pending = [], []
    for variant in cfg.variants:
        try:
            norm, Xn = variant_features(run, variant, plant)
        except FdiError as exc:
            cells += [CellResult(variant, m, seed, error=_error_text(exc)) for m in cfg.models]
            continue
        for model in cfg.models:
            cell = CellResult(variant, model, seed)
            cells.append(cell)
            cs = cell_seed(seed, variant, model)
            try:
                if model == "ocsvm":
                    svm = _fit_ocsvm(cfg, Xn, bundle, cs)
                    values = ocsvm.decision(svm, Xn[test])
                    h_hat = (values >= 0.0).astype(int)
                    cell.accuracy = accuracy(h_true, h_hat)
                    cell.fault_accuracy = per_fault_accuracy(h_true, h_hat, fid)
                    cell.notes = f"sv={len(svm.alpha)} rho={svm.rho!r}"
                    if run_dir is not None:
                        d = run_dir / f"{variant}_{model}"
                        d.mkdir(exist_ok=True)
                        ocsvm.write_report(d / "detect.csv", bundle.keys()[test], values, h_hat, h_true, fid,
                                           bundle.split[test])
                        ocsvm.save_model(svm, d / "model.npz")
                    continue
                pipe = fit_embedding(Xn[bundle.mask("S_T")], model, cs, cfg.ae_training, cfg.helm)
                pipe.normalizer, pipe.variant = norm, variant
                pipe.gamma, pipe.percentile = cfg.gamma, cfg.percentile
                if model == "helm":
                    hist = pipe.embedder.history
                    cell.notes = "ista_converged=" + "".join("1" if r.converged else "0" for r in hist)
                pending.append((cell, pipe, Xn))
            except FdiError as exc:
                cell.error = _error_text(exc)

    heads = [(c, p, X) for c, p, X in pending if p.embedding in ("ae", "vae")]
    errs = fit_heads([p for _, p, _ in heads], [X[bundle.mask("S_T")] for _, _, X in heads], cfg.head_training)
    for (cell, _, _), err in zip(heads, errs):
        if err is not None:
            cell.error = _error_text(err)

    for cell, pipe, Xn in pending:
        if not cell.ok:
            continue
        try:
            fit_threshold(pipe, Xn[bundle.mask("S_V")])
            s = similarity(pipe, Xn[test])
            h_hat = detect(s)
            cell.threshold = pipe.beta
            cell.accuracy = accuracy(h_true, h_hat)
            cell.fault_accuracy = per_fault_accuracy(h_true, h_hat, fid)
            rep = None
            if pipe.embedding in ("ae", "vae"):
                rep, cell.isolation = _isolation_summaries(pipe, Xn, bundle, cell.variant)
            if run_dir is not None:
                d = run_dir / f"{cell.variant}_{cell.model}"
                d.mkdir(exist_ok=True)
                _write_detect(d / "detect.csv", bundle, test, s, h_hat)
                if rep is not None:
                    rep.write_csv(d / "isolate.csv")
                save_pipeline(pipe, d / "pipeline.npz")
        except FdiError as exc:
            cell.error = _error_text(exc)
            cell.accuracy = None
    return cells


def _write_detect(path, bundle, test, s, h_hat):
    keys = bundle.keys()[test]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flight_cycle", "index_in_flight", "s_I", "h_hat", "h_true", "fault_id", "split_tag"])
        for i in range(len(s)):
            w.writerow([int(keys[i, 0]), int(keys[i, 1]), f"{s[i]:.17g}", int(h_hat[i]),
                        int(bundle.h_s[test][i]), int(bundle.fault_id[test][i]), str(bundle.split[test][i])])


def _run_worker(args):
    cfg, seed = args
    t0 = time.perf_counter()
    cells = run_single(cfg, seed, out_dir=cfg.out_dir)
    return cells, time.perf_counter() - t0


def run_experiment(cfg: ExperimentConfig):
    """Run the grid over every seed; failed cells are recorded, not raised.

    With ``cfg.out_dir`` set, per-run artifacts and ``results.csv``,
    ``isolation.csv``, ``summary.json`` (plus wall times in
    ``timing.json``) are written there.
    """
    t0 = time.perf_counter()
    jobs = [(cfg, s) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            outs = list(pool.map(_run_worker, jobs))
    else:
        outs = [_run_worker(j) for j in jobs]
    cells = [c for cs, _ in outs for c in cs]
    table = ResultsTable(cells, cfg)
    table.wall_time = time.perf_counter() - t0
    table.run_times = {s: t for s, (_, t) in zip(cfg.seeds, outs)}
    if cfg.out_dir is not None:
        table.write(cfg.out_dir)
        with open(Path(cfg.out_dir) / "timing.json", "w") as fh:
            json.dump({"wall_seconds": table.wall_time, "workers": cfg.workers,
                       "run_seconds": {str(k): v for k, v in table.run_times.items()}}, fh, indent=2)
    return table


# ---------------------------------------------------------------- noise sweep

@dataclass
class NoiseSweepTable:
    snr_db: tuple
    models: tuple
    seeds: tuple
    accuracy: dict              # (snr, model) -> list of per-run accuracies

    def mean(self, snr, model):
        return float(np.mean(self.accuracy[(snr, model)]))

    def half_width(self, snr, model):
        """1.96 standard errors of the per-run accuracies."""
        a = np.asarray(self.accuracy[(snr, model)], dtype=float)
        if len(a) < 2:
            return 0.0
        return 1.96 * float(a.std(ddof=1)) / math.sqrt(len(a))

    def spearman(self, model):
        """Rank correlation between finite SNR and mean accuracy."""
        snrs = [s for s in self.snr_db if math.isfinite(s)]
        means = [self.mean(s, model) for s in snrs]
        if len(snrs) < 2 or np.ptp(means) == 0:
            return float("nan")
        return float(stats.spearmanr(snrs, means).statistic)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["snr_db", "model", "mean_accuracy", "ci_half_width", "per_run"])
            for snr in self.snr_db:
                for m in self.models:
                    w.writerow([repr(float(snr)), m, repr(self.mean(snr, m)), repr(self.half_width(snr, m)),
                                " ".join(repr(float(a)) for a in self.accuracy[(snr, m)])])


def _noise_seed(run_seed, snr):
    # +inf (no contamination) never draws noise; give it its own code anyway
    code = 1 if math.isinf(snr) else int(round(abs(snr) * 1000)) * 2 + 2 + (snr < 0)
    return int(np.random.SeedSequence([int(run_seed), 7, code]).generate_state(1)[0])


def _hybrid_cells(cfg, run, trace, models, plant):
    """Accuracy of the hybrid cells for one (possibly contaminated) trace."""
    sub = replace(cfg, variants=("hybrid",), models=tuple(models), out_dir=None)
    cells = run_single(sub, run.seed, plant, RunData(run.seed, run.bundle, trace))
    return {c.model: c.accuracy for c in cells}


def noise_sweep(cfg: ExperimentConfig, snr_list_db=DEFAULT_SNR_DB, runs=None, models=("ae", "ocsvm")):
    """Contaminate the calibrated parameters at each SNR, rebuild hybrid
    features, retrain and rescore.  ``inf`` means no contamination."""
    plant = Plant()
    seeds = cfg.seeds if runs is None else cfg.seeds[:runs]
    snrs = tuple(float(s) for s in snr_list_db)
    acc = {(s, m): [] for s in snrs for m in models}
    for seed in seeds:
        run = prepare_run(cfg, seed, plant)
        if run.trace is None:
            raise FdiError(f"calibration failed for seed {seed}: {run.calibration_error}")
        for snr in snrs:
            trace = contaminate(run.trace, snr, _noise_seed(seed, snr), plant)
            res = _hybrid_cells(cfg, run, trace, models, plant)
            for m in models:
                acc[(snr, m)].append(res[m] if res[m] is not None else float("nan"))
    table = NoiseSweepTable(snrs, tuple(models), tuple(seeds), acc)
    if cfg.out_dir is not None:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        table.write_csv(Path(cfg.out_dir) / "noise_sweep.csv")
    return table


# ---------------------------------------------------------------- envelope restriction

def altitude_above(limit_ft):
    def pred(op: OperatingPoint):
        return op.altitude > limit_ft
    pred.__name__ = f"altitude_above_{limit_ft:g}"
    return pred


def no_restriction(op: OperatingPoint):
    return True


@dataclass
class EnvelopeResult:
    seeds: tuple
    baseline: list              # per-run unrestricted accuracy
    restricted: list            # per-run restricted accuracy (None if nothing to score)
    fault_counts: dict          # fault id -> surviving snapshots summed over runs
    fault_accuracy: dict        # fault id -> mean accuracy over runs, None if not evaluable

    @property
    def baseline_mean(self):
        return float(np.mean(self.baseline))

    @property
    def restricted_mean(self):
        vals = [a for a in self.restricted if a is not None]
        return float(np.mean(vals)) if vals else None

    def evaluable(self, fault_id):
        return self.fault_counts.get(fault_id, 0) > 0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "baseline_accuracy", "restricted_accuracy"])
            for s, b, r in zip(self.seeds, self.baseline, self.restricted):
                w.writerow([s, repr(b), _num(r)])
            w.writerow([])
            w.writerow(["fault_id", "surviving_snapshots", "restricted_accuracy", "status"])
            for f in sorted(self.fault_counts):
                ok = self.evaluable(f)
                w.writerow([f, self.fault_counts[f], _num(self.fault_accuracy.get(f)),
                            "ok" if ok else "not-evaluable"])


def _restricted_run(run: RunData, keep):
    b = run.bundle.subset(np.flatnonzero(keep))
    return RunData(run.seed, b, None)


def envelope_restriction(cfg: ExperimentConfig, predicate=no_restriction, variant="cm", model="ae"):
    """Retrain one pipeline on snapshots whose operating point satisfies
    ``predicate`` and compare with the unrestricted accuracy."""
    variant = variant_from_name(variant)
    if variant == "hybrid":
        raise ConfigError("envelope restriction runs on calibration-free variants")
    plant = Plant()
    sub = replace(cfg, variants=(variant,), models=(model,), out_dir=None)
    base, restr = [], []
    counts, per_fault = {}, {}
    for seed in cfg.seeds:
        run = RunData(seed, generate_dataset(cfg.generation, seed, plant), None)
        full = run_single(sub, seed, plant, run)[0]
        if not full.ok:
            raise FdiError(f"unrestricted cell failed for seed {seed}: {full.error}")
        base.append(full.accuracy)
        keep = np.array([bool(predicate(OperatingPoint(*w))) for w in run.bundle.w])
        test = run.bundle.mask(*TEST_SPLITS)
        for f in np.unique(run.bundle.fault_id[test]):
            counts[int(f)] = counts.get(int(f), 0) + int(np.sum(keep & test & (run.bundle.fault_id == f)))
        if keep.all():
            cell = full
        elif not (keep & test).any():
            restr.append(None)
            continue
        else:
            rrun = _restricted_run(run, keep)
            for split in ("S_T", "S_V"):
                if not rrun.bundle.mask(split).any():
                    raise ConfigError(f"restriction leaves no {split} snapshots for seed {seed}")
            cell = run_single(sub, seed, plant, rrun)[0]
            if not cell.ok:
                raise FdiError(f"restricted cell failed for seed {seed}: {cell.error}")
        restr.append(cell.accuracy)
        for f, a in cell.fault_accuracy.items():
            per_fault.setdefault(f, []).append(a)
    fault_acc = {f: (float(np.mean(per_fault[f])) if counts.get(f, 0) > 0 and f in per_fault else None)
                 for f in counts}
    res = EnvelopeResult(tuple(cfg.seeds), base, restr, counts, fault_acc)
    if cfg.out_dir is not None:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        res.write_csv(Path(cfg.out_dir) / "envelope.csv")
    return res


# ---------------------------------------------------------------- latent export

def export_latent(pipeline: OneClassPipeline, features, labels, path=None):
    """Latent coordinates of normalised ``features`` with their labels.

    ``labels`` is a mapping (or object) with ``split``, ``h_s`` and
    ``fault_id`` sequences of the same length.  Returns the latent matrix;
    writes ``z1..zd, split_tag, h_s, fault_id`` when ``path`` is given.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    get = (lambda k: labels[k]) if isinstance(labels, dict) else (lambda k: getattr(labels, k))
    split, h_s, fault_id = (np.asarray(get(k)) for k in ("split", "h_s", "fault_id"))
    if not len(split) == len(h_s) == len(fault_id) == len(X):
        raise ConfigError("labels and features differ in length")
    Z = pipeline.embed(X)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"z{k + 1}" for k in range(Z.shape[1])] + ["split_tag", "h_s", "fault_id"])
            for i in range(len(Z)):
                w.writerow([f"{v:.17g}" for v in Z[i]] + [str(split[i]), int(h_s[i]), int(fault_id[i])])
    return Z


def cluster_separation(Z, groups, a, b, dims=(0, 1)):
    """Centroid distance of two label groups in the chosen latent dims,
    divided by the pooled within-group standard deviation."""
    Z = np.asarray(Z)[:, list(dims)]
    A, B = Z[groups == a], Z[groups == b]
    if len(A) < 2 or len(B) < 2:
        raise ConfigError("each group needs at least two rows")
    dist = float(np.linalg.norm(A.mean(0) - B.mean(0)))
    var = (((A - A.mean(0)) ** 2).sum() + ((B - B.mean(0)) ** 2).sum()) / (len(A) + len(B) - 2)
    return dist / math.sqrt(var / Z.shape[1])


# ---------------------------------------------------------------- healthy holdout

def healthy_holdout(cfg: ExperimentConfig, seed, n_flights=12, plant=None, init=None):
    """Extra healthy flights drawn like the training data, calibrated from
    ``init`` (normally the final filter state of a training run)."""
    plant = plant or Plant()
    gen = replace(cfg.generation, n_healthy_flights=n_flights, n_initial_healthy=0, faults=())
    bundle = generate_dataset(gen, seed, plant)
    trace = calibrate_series(bundle.w, bundle.xs, plant, init, cfg.ukf, keys=bundle.keys())
    return RunData(seed, bundle, trace)


__all__ = [
    "MODELS", "ExperimentConfig", "CellResult", "ResultsTable", "RunData", "NoiseSweepTable",
    "EnvelopeResult", "accuracy", "per_fault_accuracy", "cell_seed", "prepare_run", "variant_features",
    "run_single", "run_experiment", "noise_sweep", "envelope_restriction", "altitude_above",
    "no_restriction", "export_latent", "cluster_separation", "healthy_holdout",
]
