"""Command-line entry point ``fdi``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical or
optimisation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baseline_ocsvm as ocsvm
from .calibration import calibrate_bundle, write_calibration_csv
from .dataset import (
    FEATURE_IDS, VARIANTS, feature_table, generate_dataset, normalize_fit, read_csv, read_features,
    write_csv, write_features,
)
from .detection import (
    fit_embedding, fit_heads, fit_threshold, load_pipeline, report, save_pipeline,
)
from .errors import ConfigError, FdiError, NumericError, StateError
from .harness import (
    DEFAULT_SNR_DB, MODELS, ExperimentConfig, altitude_above, cell_seed, envelope_restriction,
    export_latent, noise_sweep, no_restriction, run_experiment,
)
from .isolation import fit_nu, isolation_report
from .plant import Plant, PlantConfig, write_baseline_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
log = logging.getLogger("hybridfdi")


# ---------------------------------------------------------------- helpers

def _config(args, **override):
    """Experiment config from ``--config`` with command-line overrides;
    ``override`` masks individual options (None means not given)."""
    args = argparse.Namespace(**{**vars(args), **override})
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    elif getattr(args, "runs", None) is not None:
        changes["seeds"] = cfg.seeds[:args.runs] if args.runs <= cfg.runs else tuple(range(args.runs))
    if getattr(args, "variant", None):
        changes["variants"] = (args.variant,)
    if getattr(args, "model", None):
        changes["models"] = (args.model,)
    if getattr(args, "workers", None):
        changes["workers"] = args.workers
    if getattr(args, "out", None):
        changes["out_dir"] = str(args.out)
    return replace(cfg, **changes) if changes else cfg


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serialisable: {type(v).__name__}")


def _finite_or_none(v):
    return None if v is None or not math.isfinite(v) else v


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + n.replace("_", "-")
                                                                      for n in missing))


def _load_model(path):
    """A detection pipeline or a one-class SVM, told apart by the stored arrays."""
    try:
        with np.load(path) as d:
            files = set(d.files)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from None
    if "__meta__" in files:
        return "pipeline", load_pipeline(path)
    if "support" in files:
        model = ocsvm.load_model(path)
        norm, variant = ocsvm.load_extras(path)
        return "ocsvm", (model, norm, variant)
    raise ConfigError(f"{path} is neither a pipeline nor a one-class SVM file")


def _check_variant(expected, table):
    if expected is not None and expected != table.variant:
        raise ConfigError(f"model was trained on the {expected} variant, features are {table.variant}")


# ---------------------------------------------------------------- verbs

def cmd_plant_baseline(args):
    _require(args, "out")
    cfg = PlantConfig.load(args.config) if args.config else PlantConfig()
    n = write_baseline_csv(args.out, Plant(cfg))
    log.info("wrote %d operating points to %s", n, args.out)


def cmd_generate(args):
    _require(args, "out")
    cfg = _config(args, out=None)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = generate_dataset(cfg.generation, seed)
    write_csv(bundle, out / "snapshots.csv")
    for v in ("cm", "residual"):
        write_features(feature_table(bundle, None, v), out / f"features_{v}.csv")
    counts = {s: int(bundle.mask(s).sum()) for s in ("S_T", "S_V", "D_U", "D_T")}
    _write_json(out / "summary.json", {"seed": seed, "rows": len(bundle), "splits": counts,
                                       "faulty": int((bundle.h_s == 0).sum()),
                                       "provenance": bundle.provenance})
    log.info("generated %d snapshots in %s", len(bundle), out)


def cmd_calibrate(args):
    _require(args, "input", "out")
    cfg = _config(args, out=None)
    plant = Plant()
    bundle = read_csv(args.input, plant)
    trace = calibrate_bundle(bundle, plant, cfg.ukf)
    write_calibration_csv(trace, args.out)
    if args.features:
        write_features(feature_table(bundle, trace, "hybrid", plant), args.features)
    log.info("calibrated %d snapshots", len(trace))


def cmd_train(args):
    _require(args, "input", "out", "model")
    cfg = _config(args, out=None, model=None, variant=None)
    table = read_features(args.input)
    _check_variant(args.variant, table)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    cs = cell_seed(seed, table.variant, args.model)
    train, val = table.mask("S_T"), table.mask("S_V")
    if not train.any() or not val.any():
        raise ConfigError("features need both S_T and S_V rows")
    norm = normalize_fit(table.values[train])
    X = norm.apply(table.values)
    if args.model == "ocsvm":
        model = ocsvm.fit(X[train], cfg.ocsvm_nu, cfg.ocsvm_gamma, seed=cs)
        ocsvm.save_model(model, args.out, norm, table.variant)
        log.info("one-class SVM: %d support vectors", len(model.alpha))
        return
    pipe = fit_embedding(X[train], args.model, cs, cfg.ae_training, cfg.helm)
    err = fit_heads([pipe], [X[train]], cfg.head_training)[0]
    if err is not None:
        raise err
    pipe.normalizer, pipe.variant = norm, table.variant
    pipe.gamma, pipe.percentile = cfg.gamma, cfg.percentile
    fit_threshold(pipe, X[val])
    if args.model in ("ae", "vae"):
        pipe.nu = fit_nu(pipe.embedder, X[val]).nu
    save_pipeline(pipe, args.out)
    log.info("trained %s on %s features, threshold %.6g", args.model, table.variant, pipe.beta)


def cmd_detect(args):
    _require(args, "pipeline", "input", "out")
    kind, obj = _load_model(args.pipeline)
    table = read_features(args.input)
    keys = np.stack([table.flight_cycle, table.index_in_flight], axis=1)
    if kind == "ocsvm":
        model, norm, variant = obj
        _check_variant(variant, table)
        values = ocsvm.decision(model, norm.apply(table.values) if norm else table.values)
        h_hat = (values >= 0.0).astype(int)
        ocsvm.write_report(args.out, keys, values, h_hat, table.h_s, table.fault_id, table.split)
    else:
        _check_variant(obj.variant, table)
        rep = report(obj, table)
        rep.write_csv(args.out)
        h_hat = rep.h_hat
    log.info("%d of %d snapshots flagged faulty", int((h_hat == 0).sum()), len(h_hat))


def cmd_isolate(args):
    _require(args, "pipeline", "input", "out")
    kind, pipe = _load_model(args.pipeline)
    if kind != "pipeline" or pipe.embedding not in ("ae", "vae") or pipe.nu is None:
        raise ConfigError("isolation needs an autoencoder pipeline with fitted column thresholds")
    table = read_features(args.input)
    _check_variant(pipe.variant, table)
    keys = np.stack([table.flight_cycle, table.index_in_flight], axis=1)
    rep = isolation_report(pipe.embedder, pipe.prepare(table.values), pipe.nu,
                           FEATURE_IDS[table.variant], keys, table.fault_id)
    rep.write_csv(args.out)


def cmd_export_latent(args):
    _require(args, "pipeline", "input", "out")
    kind, pipe = _load_model(args.pipeline)
    if kind != "pipeline" or pipe.embedding == "none":
        raise ConfigError("latent export needs a pipeline with an embedding")
    table = read_features(args.input)
    _check_variant(pipe.variant, table)
    try:
        export_latent(pipe, pipe.prepare(table.values),
                      {"split": table.split, "h_s": table.h_s, "fault_id": table.fault_id}, args.out)
    except StateError as exc:
        raise ConfigError(str(exc)) from None


def cmd_evaluate(args):
    _require(args, "out")
    cfg = _config(args)
    table = run_experiment(cfg)
    print(table.format())
    if table.cells and not any(c.ok for c in table.cells):
        raise NumericError("every cell of the grid failed")


def cmd_noise_sweep(args):
    _require(args, "out")
    cfg = _config(args, model=None, variant=None)
    models = tuple(args.model_list or ("ae", "ocsvm"))
    snrs = tuple(args.snr) if args.snr else DEFAULT_SNR_DB
    if args.include_clean:
        snrs = (math.inf,) + snrs
    table = noise_sweep(cfg, snrs, models=models)
    summary = {"snr_db": [None if math.isinf(s) else s for s in table.snr_db],
               "seeds": list(table.seeds), "models": {}}
    for m in models:
        summary["models"][m] = {
            "mean": [table.mean(s, m) for s in table.snr_db],
            "ci_half_width": [table.half_width(s, m) for s in table.snr_db],
            "spearman": _finite_or_none(table.spearman(m)),
        }
        print(f"{m}: " + "  ".join(f"{s:g} dB {table.mean(s, m):.1f}" for s in table.snr_db))
    _write_json(Path(cfg.out_dir) / "summary.json", summary)


def cmd_envelope(args):
    _require(args, "out")
    cfg = _config(args, model=None, variant=None)
    pred = no_restriction if args.min_altitude is None else altitude_above(args.min_altitude)
    res = envelope_restriction(cfg, pred, args.variant or "cm", args.model or "ae")
    _write_json(Path(cfg.out_dir) / "summary.json", {
        "min_altitude": args.min_altitude, "seeds": list(res.seeds),
        "baseline_mean": res.baseline_mean, "restricted_mean": res.restricted_mean,
        "fault_counts": {str(k): v for k, v in res.fault_counts.items()},
        "fault_accuracy": {str(k): v for k, v in res.fault_accuracy.items()},
    })
    restricted = "n/a" if res.restricted_mean is None else f"{res.restricted_mean:.1f}"
    print(f"unrestricted {res.baseline_mean:.1f}  restricted {restricted}")
    for f in sorted(res.fault_counts):
        if not res.evaluable(f):
            print(f"fault {f}: no surviving snapshots, not evaluable")


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--model", choices=MODELS)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fdi", description="Hybrid fault detection and isolation.")
    sub = p.add_subparsers(dest="verb", required=True)

    plant = sub.add_parser("plant", help="engine model utilities")
    psub = plant.add_subparsers(dest="plant_verb", required=True)
    pb = psub.add_parser("baseline", parents=[common], help="nominal outputs on the operating grid")
    pb.set_defaults(func=cmd_plant_baseline)

    sp = sub.add_parser("generate", parents=[common], help="simulate a labelled dataset")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("calibrate", parents=[common], help="run the health-parameter filter")
    sp.add_argument("--in", dest="input", help="snapshots.csv")
    sp.add_argument("--features", help="also write hybrid features to this CSV")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("train", parents=[common], help="train one detector on a feature CSV")
    sp.add_argument("--in", dest="input", help="features CSV")
    sp.set_defaults(func=cmd_train)

    for name, func, text in (("detect", cmd_detect, "score snapshots"),
                             ("isolate", cmd_isolate, "rank affected signals"),
                             ("export-latent", cmd_export_latent, "write latent coordinates")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--pipeline", help="trained model file")
        sp.add_argument("--in", dest="input", help="features CSV")
        sp.set_defaults(func=func)

    sp = sub.add_parser("evaluate", parents=[common], help="run the model by variant grid")
    sp.add_argument("--runs", type=int, help="number of run seeds")
    sp.add_argument("--workers", type=int, help="parallel worker processes")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("noise-sweep", parents=[common], help="accuracy against calibration noise")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--snr", type=float, nargs="+", help="SNR levels in dB")
    sp.add_argument("--include-clean", action="store_true", help="add the uncontaminated level")
    sp.add_argument("--models", dest="model_list", nargs="+", choices=MODELS)
    sp.set_defaults(func=cmd_noise_sweep)

    sp = sub.add_parser("envelope", parents=[common], help="retrain on a restricted flight envelope")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--min-altitude", type=float, help="keep snapshots above this altitude (ft)")
    sp.set_defaults(func=cmd_envelope)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (NumericError, FloatingPointError) as exc:
        print(f"fdi: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FdiError, OSError) as exc:
        print(f"fdi: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
