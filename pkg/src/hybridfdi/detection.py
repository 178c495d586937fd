"""One-class detection: embedding, healthy-target regression, threshold."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import Normalizer, nearest_rank_percentile
from .errors import ConfigError, StateError
from .nnet import (
    AUTOENCODER_TRAINING, LATENT_DIM, ONE_CLASS_TRAINING, Autoencoder, DenseNetwork, HelmConfig,
    HelmModel, TrainConfig, VariationalAutoencoder, helm_fit, helm_forward, model_bytes,
    model_from_dict, model_to_dict, train_ae, train_supervised_many, train_vae,
)

EMBEDDINGS = ("ae", "vae", "helm", "none")
HEAD_HIDDEN = (20, 100)
TARGET = 1.0
GAMMA = 1.5
PERCENTILE = 99.9
FLOOR = 1e-9


@dataclass
class OneClassPipeline:
    """Embedding network, one-class head and detection threshold.

    All scoring methods take normalised features; ``normalizer`` (if set)
    maps raw feature rows into that space via :meth:`prepare`.
    """

    embedding: str
    n_features: int
    embedder: object = None
    head: DenseNetwork | None = None
    beta: float | None = None
    gamma: float = GAMMA
    percentile: float = PERCENTILE
    normalizer: Normalizer | None = None
    variant: str | None = None
    nu: np.ndarray | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.embedding not in EMBEDDINGS:
            raise ConfigError(f"unknown embedding {self.embedding!r}; expected one of {EMBEDDINGS}")

    def prepare(self, raw):
        if self.normalizer is None:
            return np.asarray(raw, dtype=float)
        return self.normalizer.apply(raw)

    def embed(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.embedding == "none":
            return x
        if self.embedder is None:
            raise StateError("pipeline embedding is not trained")
        return self.embedder.encode(x)

    def output(self, x):
        """Head output ``G(x)`` per row."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.embedding == "helm":
            if self.embedder is None:
                raise StateError("pipeline is not trained")
            return helm_forward(self.embedder, x)[0][:, 0]
        if self.head is None:
            raise StateError("pipeline head is not trained")
        return self.head.forward(self.embed(x))[:, 0]

    def abs_error(self, x):
        return np.abs(TARGET - self.output(x))

    def reconstruct(self, x):
        if self.embedding not in ("ae", "vae"):
            raise ConfigError(f"embedding {self.embedding!r} has no reconstructor")
        return self.embedder.reconstruct(np.atleast_2d(np.asarray(x, dtype=float)))

    def digest(self):
        """Hash of every learned parameter and threshold."""
        h = hashlib.sha256()
        h.update(json.dumps([self.embedding, self.n_features, self.beta, self.gamma,
                             self.percentile]).encode())
        for model in (self.embedder, self.head):
            if model is not None:
                h.update(model_bytes(model))
        if self.nu is not None:
            h.update(np.ascontiguousarray(self.nu).tobytes())
        return h.hexdigest()


def _seeds(seed):
    ss = np.random.SeedSequence(int(seed))
    emb, head = ss.generate_state(2)
    return int(emb), int(head)


def build_embedder(embedding, n_features, seed):
    if embedding == "ae":
        return Autoencoder(n_features, seed=seed)
    if embedding == "vae":
        return VariationalAutoencoder(n_features, seed=seed)
    return None


def fit_embedding(X, embedding="ae", seed=0, ae_cfg: TrainConfig = AUTOENCODER_TRAINING,
                  helm_cfg: HelmConfig = HelmConfig()):
    """First training step: the unsupervised (or, for HELM, the whole
    hierarchical) model on healthy training features."""
    X = np.asarray(X, dtype=float)
    pipe = OneClassPipeline(embedding, X.shape[1], seed=int(seed))
    emb_seed, _ = _seeds(seed)
    cfg = ae_cfg.with_seed(emb_seed)
    if embedding == "ae":
        pipe.embedder = train_ae(Autoencoder(X.shape[1], seed=emb_seed), X, cfg)
    elif embedding == "vae":
        pipe.embedder = train_vae(VariationalAutoencoder(X.shape[1], seed=emb_seed), X, cfg)
    elif embedding == "helm":
        pipe.embedder = helm_fit(X, np.full(len(X), TARGET), None, emb_seed, helm_cfg)
    return pipe


def fit_heads(pipelines, Xs, head_cfg: TrainConfig = ONE_CLASS_TRAINING):
    """Second step for several pipelines at once: regress the embedded
    training data onto the healthy target.  Returns per-pipeline errors
    (None on success); the heads are trained side by side."""
    todo = [(p, x) for p, x in zip(pipelines, Xs) if p.embedding != "helm"]
    groups = {}
    for p, x in todo:
        z = p.embed(x)
        groups.setdefault((z.shape[1], len(z)), []).append((p, z))
    errors = {}
    for (dim, _), items in groups.items():
        nets, zs, cfgs = [], [], []
        for p, z in items:
            _, head_seed = _seeds(p.seed)
            nets.append(DenseNetwork((dim,) + HEAD_HIDDEN + (1,), seed=head_seed))
            zs.append(z)
            cfgs.append(head_cfg.with_seed(head_seed))
        outcomes = train_supervised_many(nets, zs, [np.full(len(z), TARGET) for z in zs], cfgs)
        for (p, _), net, out in zip(items, nets, outcomes):
            if out.error is None:
                p.head = net
            errors[id(p)] = out.error
    return [errors.get(id(p)) for p in pipelines]


def fit_pipeline(X, embedding="ae", seed=0, ae_cfg: TrainConfig = AUTOENCODER_TRAINING,
                 head_cfg: TrainConfig = ONE_CLASS_TRAINING, helm_cfg: HelmConfig = HelmConfig()):
    """Embedding then head, on normalised healthy training features
    (threshold not yet fitted)."""
    pipe = fit_embedding(X, embedding, seed, ae_cfg, helm_cfg)
    err = fit_heads([pipe], [X], head_cfg)[0]
    if err is not None:
        raise err
    return pipe


def threshold_from_errors(errors, percentile=PERCENTILE, gamma=GAMMA, floor=FLOOR):
    """``max(gamma * P_p(errors), floor)`` with the nearest-rank percentile."""
    errors = np.asarray(errors, dtype=float).ravel()
    if errors.size == 0:
        raise ConfigError("threshold needs at least one validation error")
    return max(float(nearest_rank_percentile(errors, percentile)) * gamma, floor)


def fit_threshold(pipeline: OneClassPipeline, X_val):
    """Set and return ``beta`` from validation features."""
    X_val = np.atleast_2d(np.asarray(X_val, dtype=float))
    if X_val.shape[0] == 0 or X_val.size == 0:
        raise ConfigError("validation set is empty")
    pipeline.beta = threshold_from_errors(pipeline.abs_error(X_val), pipeline.percentile, pipeline.gamma)
    return pipeline.beta


def similarity(pipeline: OneClassPipeline, x):
    """``|T - G(x)| / beta`` per row."""
    if pipeline.beta is None:
        raise StateError("detection threshold is not fitted")
    return pipeline.abs_error(x) / pipeline.beta


def detect(s):
    """1 (healthy) where ``s < 1``, else 0."""
    s = np.asarray(s, dtype=float)
    return (s < 1.0).astype(int)


@dataclass
class DetectionReport:
    keys: np.ndarray
    score: np.ndarray
    h_hat: np.ndarray
    h_true: np.ndarray
    fault_id: np.ndarray
    split: np.ndarray
    score_name: str = "s_I"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["flight_cycle", "index_in_flight", self.score_name, "h_hat", "h_true",
                        "fault_id", "split_tag"])
            for i in range(len(self.score)):
                w.writerow([int(self.keys[i, 0]), int(self.keys[i, 1]), f"{self.score[i]:.17g}",
                            int(self.h_hat[i]), int(self.h_true[i]), int(self.fault_id[i]),
                            str(self.split[i])])


def report(pipeline: OneClassPipeline, table, normalized=False):
    """Score every row of a :class:`~hybridfdi.dataset.FeatureTable`."""
    x = table.values if normalized else pipeline.prepare(table.values)
    s = similarity(pipeline, x)
    keys = np.stack([table.flight_cycle, table.index_in_flight], axis=1)
    return DetectionReport(keys, s, detect(s), table.h_s, table.fault_id, table.split)


# ---------------------------------------------------------------- persistence

def save_pipeline(pipeline: OneClassPipeline, path):
    arrays = {}
    meta = {
        "format": 1, "embedding": pipeline.embedding, "n_features": pipeline.n_features,
        "beta": pipeline.beta, "gamma": pipeline.gamma, "percentile": pipeline.percentile,
        "variant": pipeline.variant, "seed": pipeline.seed, "meta": pipeline.meta,
    }
    for prefix, model in (("emb", pipeline.embedder), ("head", pipeline.head)):
        if model is None:
            continue
        m, a = model_to_dict(model)
        meta[prefix] = m
        arrays.update({f"{prefix}__{k}": v for k, v in a.items()})
    if pipeline.normalizer is not None:
        arrays["norm__lo"], arrays["norm__hi"] = pipeline.normalizer.lo, pipeline.normalizer.hi
    if pipeline.nu is not None:
        arrays["nu"] = pipeline.nu
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_pipeline(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    if meta.get("format") != 1:
        raise ConfigError("unsupported pipeline file format")

    def part(prefix):
        if prefix not in meta:
            return None
        sub = {k.split("__", 1)[1]: v for k, v in arrays.items() if k.startswith(prefix + "__")}
        return model_from_dict(meta[prefix], sub)

    norm = None
    if "norm__lo" in arrays:
        norm = Normalizer(arrays["norm__lo"], arrays["norm__hi"])
    return OneClassPipeline(
        meta["embedding"], meta["n_features"], part("emb"), part("head"), meta["beta"],
        meta["gamma"], meta["percentile"], norm, meta.get("variant"), arrays.get("nu"),
        meta.get("seed", 0), meta.get("meta", {}),
    )


__all__ = [
    "EMBEDDINGS", "GAMMA", "PERCENTILE", "FLOOR", "LATENT_DIM", "OneClassPipeline",
    "DetectionReport", "HelmModel", "fit_embedding", "fit_heads", "fit_pipeline",
    "fit_threshold", "threshold_from_errors", "similarity", "detect", "report",
    "save_pipeline", "load_pipeline", "build_embedder",
]
