"""Dense networks, autoencoders, VAE and HELM written directly on numpy.

Every trainable model keeps its parameters in one flat float64 vector; the
per-layer weight matrices and biases are views into it, so the optimiser
works on a single array.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError, OptimizationError, ShapeError, StateError

ACTIVATIONS = ("tanh", "identity")
LATENT_DIM = 8
FORMAT_VERSION = 1


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def xavier_init(shape, seed=None):
    """Uniform Glorot initialisation, variance ``2 / (fan_in + fan_out)``.

    ``shape`` is ``(fan_out, fan_in)``; ``seed`` may be an int or a Generator.
    """
    fan_out, fan_in = shape
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return _rng(seed).uniform(-a, a, size=shape)


class DenseNetwork:
    """Feed-forward stack ``y = act_L(W_L ... act_1(W_1 x + b_1) ... + b_L)``.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including the input, e.g. ``(8, 20, 100, 1)``.
    activations : sequence of str, optional
        One per layer; defaults to tanh on hidden layers and identity last.
    params : 1-D float array, optional
        Storage to use (e.g. a slice of a larger flat vector).
    seed : int or Generator, optional
        Xavier-initialise weights (biases start at zero).
    """

    def __init__(self, sizes, activations=None, params=None, seed=None):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError(f"invalid layer sizes {sizes}")
        n_layers = len(sizes) - 1
        if activations is None:
            activations = ("tanh",) * (n_layers - 1) + ("identity",)
        activations = tuple(activations)
        if len(activations) != n_layers or any(a not in ACTIVATIONS for a in activations):
            raise ConfigError(f"need {n_layers} activations from {ACTIVATIONS}, got {activations}")
        self.sizes = sizes
        self.activations = activations
        self.n_params = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
        if params is None:
            params = np.zeros(self.n_params)
        elif params.shape != (self.n_params,) or params.dtype != np.float64:
            raise ShapeError(f"parameter buffer must be float64 of length {self.n_params}")
        self.params = params
        self.W, self.b = [], []
        pos = 0
        for i, o in zip(sizes[:-1], sizes[1:]):
            self.W.append(params[pos:pos + o * i].reshape(o, i))
            pos += o * i
            self.b.append(params[pos:pos + o])
            pos += o
        if seed is not None:
            rng = _rng(seed)
            for W in self.W:
                W[...] = xavier_init(W.shape, rng)

    @classmethod
    def from_layers(cls, layers):
        """Build from explicit ``[(W, b, activation), ...]`` with ``W`` of
        shape ``(out, in)``."""
        sizes = []
        for k, (W, b, _) in enumerate(layers):
            W = np.atleast_2d(np.asarray(W, dtype=float))
            if sizes and W.shape[1] != sizes[-1]:
                raise ShapeError(f"layer {k}: input dim {W.shape[1]} does not chain with {sizes[-1]}")
            if np.shape(b) != (W.shape[0],):
                raise ShapeError(f"layer {k}: bias shape {np.shape(b)} != ({W.shape[0]},)")
            if not sizes:
                sizes.append(W.shape[1])
            sizes.append(W.shape[0])
        net = cls(sizes, [a for _, _, a in layers])
        for k, (W, b, _) in enumerate(layers):
            net.W[k][...] = W
            net.b[k][...] = b
        return net

    @property
    def architecture(self):
        return list(self.sizes)

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    def copy(self):
        return DenseNetwork(self.sizes, self.activations, self.params.copy())

    def _check(self, x, layer):
        if x.shape[-1] != self.sizes[layer]:
            raise ShapeError(f"layer {layer}: expected input dim {self.sizes[layer]}, got {x.shape[-1]}")

    def forward(self, x, start=0, stop=None):
        """Evaluate layers ``start .. stop-1``; 1-D inputs are treated as a
        single row."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = x[None] if single else x
        stop = len(self.W) if stop is None else stop
        self._check(a, start)
        for k in range(start, stop):
            a = a @ self.W[k].T + self.b[k]
            if self.activations[k] == "tanh":
                a = np.tanh(a)
        return a[0] if single else a

    __call__ = forward

    def forward_cache(self, x):
        """Forward pass keeping every layer output (``acts[0]`` is ``x``)."""
        self._check(x, 0)
        acts = [x]
        a = x
        for W, b, act in zip(self.W, self.b, self.activations):
            a = a @ W.T + b
            if act == "tanh":
                a = np.tanh(a)
            acts.append(a)
        return acts

    def backward(self, acts, delta, grad=None, need_input_grad=False):
        """Backpropagate ``delta = dL/d(output)`` through cached activations.

        Returns ``(grad, dL/dx)``; ``grad`` is a flat vector aligned with
        ``params`` (written into the supplied buffer when given).
        """
        if grad is None:
            grad = np.empty(self.n_params)
        gW, gb = self._views(grad)
        for k in range(len(self.W) - 1, -1, -1):
            if self.activations[k] == "tanh":
                a = acts[k + 1]
                delta = delta * (1.0 - a * a)
            np.dot(delta.T, acts[k], out=gW[k])
            np.sum(delta, axis=0, out=gb[k])
            if k or need_input_grad:
                delta = delta @ self.W[k]
        return grad, (delta if need_input_grad else None)

    def _views(self, flat):
        gW, gb = [], []
        pos = 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            gW.append(flat[pos:pos + o * i].reshape(o, i))
            pos += o * i
            gb.append(flat[pos:pos + o])
            pos += o
        return gW, gb


def mse_loss(y, y_hat):
    """Half squared error, averaged over the batch (rows)."""
    d = np.atleast_2d(np.asarray(y_hat, dtype=float) - np.asarray(y, dtype=float))
    return 0.5 * float(np.sum(d * d)) / d.shape[0]


def backprop(net: DenseNetwork, x, y):
    """Loss and flat gradient of :func:`mse_loss` for one batch."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(len(x), -1)
    acts = net.forward_cache(x)
    d = acts[-1] - y
    loss = 0.5 * float(np.sum(d * d)) / len(x)
    grad, _ = net.backward(acts, d / len(x))
    return loss, grad


# ---------------------------------------------------------------- optimisers

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 16
    epochs: int = 500
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("lr and batch_size must be positive, epochs non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("invalid Adam constants")

    def with_seed(self, seed):
        d = asdict(self)
        d["seed"] = int(seed)
        return TrainConfig(**d)


ONE_CLASS_TRAINING = TrainConfig(lr=0.001, batch_size=16, epochs=500)
AUTOENCODER_TRAINING = TrainConfig(lr=0.001, batch_size=512, epochs=2000)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update; returns new parameters and advances
    ``state`` in place."""
    state.t += 1
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = state.m / (1.0 - cfg.beta1 ** state.t)
    v_hat = state.v / (1.0 - cfg.beta2 ** state.t)
    return params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


class _Adam:
    """In-place version of :func:`adam_step` used by the training loops."""

    def __init__(self, shape, cfg: TrainConfig):
        self.cfg = cfg
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.tmp = np.empty(shape)
        self.t = 0

    def step(self, params, g):
        c = self.cfg
        if c.optimizer == "sgd":
            params -= c.lr * g
            return
        self.t += 1
        m, v, tmp = self.m, self.v, self.tmp
        m *= c.beta1
        m += (1.0 - c.beta1) * g
        v *= c.beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - c.beta2
        v += tmp
        np.divide(v, 1.0 - c.beta2 ** self.t, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += c.eps
        np.divide(m, tmp, out=tmp)
        tmp *= c.lr / (1.0 - c.beta1 ** self.t)
        params -= tmp


def _epoch_order(seed, epoch, n):
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def _fit(params, batch_grad, arrays, cfg: TrainConfig, history=None):
    """Mini-batch loop shared by every trainer.

    ``batch_grad(rows..., epoch_rng) -> loss`` fills the gradient buffer
    returned by the closure's owner; ``arrays`` are the per-row inputs.
    """
    n = len(arrays[0])
    opt = _Adam(len(params), cfg)
    bs = cfg.batch_size
    for epoch in range(cfg.epochs):
        order = _epoch_order(cfg.seed, epoch, n)
        shuffled = [a[order] for a in arrays]
        total = 0.0
        for lo in range(0, n, bs):
            batch = [a[lo:lo + bs] for a in shuffled]
            loss, grad = batch_grad(*batch)
            total += loss * len(batch[0])
            opt.step(params, grad)
        total /= n
        if not math.isfinite(total) or not np.all(np.isfinite(params)):
            raise DivergenceError(epoch, total)
        if history is not None:
            history.append(total)


def train_supervised(net: DenseNetwork, X, T, cfg: TrainConfig = ONE_CLASS_TRAINING, history=None):
    """Minimise :func:`mse_loss` of ``net(X)`` against targets ``T`` (in place)."""
    out = train_supervised_many([net], [X], [T], [cfg])[0]
    if history is not None:
        history.extend(out.history)
    if out.error is not None:
        raise out.error
    return net


@dataclass
class FitOutcome:
    history: list
    error: Exception | None = None


def _stacked_views(P, sizes, shape_b):
    """Per-layer ``(K, out, in)`` weight and ``(K, 1, out)`` bias views of a
    ``(K, n_params)`` matrix."""
    K = P.shape[0]
    Ws, bs, pos = [], [], 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        Ws.append(P[:, pos:pos + o * i].reshape(K, o, i))
        pos += o * i
        bs.append(P[:, pos:pos + o].reshape(K, 1, o) if shape_b else P[:, pos:pos + o])
        pos += o
    return Ws, bs


def train_supervised_many(nets, Xs, Ts, cfgs):
    """Train several networks of one architecture side by side.

    Each network keeps its own data, seed and optimiser state; the stacked
    arithmetic is slice-wise, so every network ends exactly where it would
    if trained alone.  Data sets must share the row count and the configs
    may differ only in ``seed``.  Returns one :class:`FitOutcome` per
    network; a diverged network is left unchanged and reports its error.
    """
    K = len(nets)
    if K == 0:
        return []
    net0, cfg0 = nets[0], cfgs[0]
    for net, cfg in zip(nets, cfgs):
        if net.sizes != net0.sizes or net.activations != net0.activations:
            raise ShapeError("networks trained together must share one architecture")
        if cfg.with_seed(0) != cfg0.with_seed(0):
            raise ConfigError("configs trained together may differ only in seed")
    X = np.stack([np.asarray(x, dtype=float) for x in Xs])
    T = np.stack([np.asarray(t, dtype=float).reshape(len(x), -1) for x, t in zip(Xs, Ts)])
    if X.shape[2] != net0.n_in:
        raise ShapeError(f"layer 0: expected input dim {net0.n_in}, got {X.shape[2]}")
    if T.shape[2] != net0.n_out:
        raise ShapeError(f"targets have {T.shape[2]} columns, network outputs {net0.n_out}")
    n, bs, sizes = X.shape[1], cfg0.batch_size, net0.sizes
    P = np.stack([net.params for net in nets])
    G = np.zeros_like(P)
    W, b = _stacked_views(P, sizes, True)
    gW, gb = _stacked_views(G, sizes, False)
    tanh = [a == "tanh" for a in net0.activations]
    opt = _Adam(P.shape, cfg0)
    ones = np.ones((K, 1, bs))
    histories = [[] for _ in range(K)]
    errors = [None] * K
    alive = np.ones(K, dtype=bool)
    for epoch in range(cfg0.epochs):
        order = np.stack([_epoch_order(c.seed, epoch, n) for c in cfgs])[:, :, None]
        Xe = np.take_along_axis(X, order, axis=1)
        Te = np.take_along_axis(T, order, axis=1)
        total = np.zeros(K)
        for lo in range(0, n, bs):
            a = Xe[:, lo:lo + bs]
            B = a.shape[1]
            acts = [a]
            for Wl, bl, th in zip(W, b, tanh):
                a = np.matmul(a, Wl.transpose(0, 2, 1)) + bl
                if th:
                    np.tanh(a, out=a)
                acts.append(a)
            d = a - Te[:, lo:lo + bs]
            total += np.einsum("kij,kij->k", d, d)
            d *= 1.0 / B
            for layer in range(len(W) - 1, -1, -1):
                if tanh[layer]:
                    h = acts[layer + 1]
                    d = d * (1.0 - h * h)
                gW[layer][...] = np.matmul(d.transpose(0, 2, 1), acts[layer])
                gb[layer][...] = np.matmul(ones[:, :, :B], d)[:, 0, :]
                if layer:
                    d = np.matmul(d, W[layer])
            opt.step(P, G)
        total *= 0.5 / n
        bad = alive & ~(np.isfinite(total) & np.all(np.isfinite(P), axis=1))
        for k in np.flatnonzero(bad):
            errors[k] = DivergenceError(epoch, float(total[k]))
            alive[k] = False
            P[k] = 0.0
        for k in np.flatnonzero(alive):
            histories[k].append(float(total[k]))
    for k in np.flatnonzero(alive):
        nets[k].params[...] = P[k]
    return [FitOutcome(h, e) for h, e in zip(histories, errors)]

# ---------------------------------------------------------------- autoencoders

class Autoencoder:
    """``[n, 20, 8, 20, n]`` autoencoder; the first two layers are the encoder."""

    kind = "ae"

    def __init__(self, n_in, hidden=20, latent=LATENT_DIM, seed=None, params=None):
        sizes = (n_in, hidden, latent, hidden, n_in)
        self.net = DenseNetwork(sizes, ("tanh", "tanh", "tanh", "identity"), params=params, seed=seed)
        self.n_encoder = 2

    @property
    def params(self):
        return self.net.params

    @property
    def architecture(self):
        return self.net.architecture

    @property
    def latent_dim(self):
        return self.net.sizes[self.n_encoder]

    def encode(self, x):
        return self.net.forward(x, 0, self.n_encoder)

    def decode(self, z):
        return self.net.forward(z, self.n_encoder)

    def reconstruct(self, x):
        return self.net.forward(x)

    def loss_and_grad(self, x, grad=None):
        acts = self.net.forward_cache(x)
        d = acts[-1] - x
        loss = 0.5 * float(np.einsum("ij,ij->", d, d)) / len(x)
        g, _ = self.net.backward(acts, d / len(x), grad)
        return loss, g


def train_ae(ae: Autoencoder, X, cfg: TrainConfig = AUTOENCODER_TRAINING, history=None):
    """Train an autoencoder to reproduce ``X`` (in place)."""
    X = np.asarray(X, dtype=float)
    grad = np.empty(len(ae.params))
    _fit(ae.params, lambda xb: ae.loss_and_grad(xb, grad), [X], cfg, history)
    return ae


class VariationalAutoencoder:
    """Gaussian VAE with an encoder ``[n, 20, 2*8]`` whose last layer holds
    the mean (first 8 outputs) and log-variance (last 8) and a decoder
    ``[8, 20, n]``."""

    kind = "vae"

    def __init__(self, n_in, hidden=20, latent=LATENT_DIM, seed=None, params=None):
        enc = DenseNetwork((n_in, hidden, 2 * latent), ("tanh", "identity"))
        dec = DenseNetwork((latent, hidden, n_in), ("tanh", "identity"))
        total = enc.n_params + dec.n_params
        if params is None:
            params = np.zeros(total)
        elif params.shape != (total,):
            raise ShapeError(f"VAE parameter buffer must have length {total}")
        self.params = params
        self._split = enc.n_params
        rng = _rng(seed) if seed is not None else None
        self.encoder = DenseNetwork(enc.sizes, enc.activations, params[:self._split], seed=rng)
        self.decoder = DenseNetwork(dec.sizes, dec.activations, params[self._split:], seed=rng)
        self.n_in, self.hidden, self.latent = n_in, hidden, latent

    @property
    def architecture(self):
        return [self.n_in, self.hidden, self.latent, self.hidden, self.n_in]

    @property
    def latent_dim(self):
        return self.latent

    def encode_stats(self, x):
        out = self.encoder.forward(x)
        return out[..., :self.latent], out[..., self.latent:]

    def encode(self, x):
        """Downstream embedding: the posterior mean."""
        return self.encode_stats(x)[0]

    def decode(self, z):
        return self.decoder.forward(z)

    def reconstruct(self, x):
        return self.decode(self.encode(x))

    def loss_and_grad(self, x, eps, grad=None):
        """ELBO loss (batch mean) and its gradient for fixed noise ``eps``."""
        B = len(x)
        d_lat = self.latent
        if grad is None:
            grad = np.empty(len(self.params))
        ea = self.encoder.forward_cache(x)
        mu, logvar = ea[-1][:, :d_lat], ea[-1][:, d_lat:]
        sigma = np.exp(0.5 * logvar)
        z = mu + sigma * eps
        da = self.decoder.forward_cache(z)
        d = da[-1] - x
        var = sigma * sigma
        kl = -0.5 * np.sum(1.0 + logvar - mu * mu - var)
        loss = (0.5 * float(np.einsum("ij,ij->", d, d)) + float(kl)) / B
        _, dz = self.decoder.backward(da, d / B, grad[self._split:], need_input_grad=True)
        dout = np.empty((B, 2 * d_lat))
        dout[:, :d_lat] = dz + mu / B
        dout[:, d_lat:] = 0.5 * dz * sigma * eps + 0.5 * (var - 1.0) / B
        self.encoder.backward(ea, dout, grad[:self._split])
        return loss, grad


def vae_forward(vae: VariationalAutoencoder, x, eps):
    """Returns ``(x_bar, mu, logvar, z)`` with ``z = mu + exp(logvar/2) * eps``."""
    mu, logvar = vae.encode_stats(x)
    z = mu + np.exp(0.5 * logvar) * eps
    return vae.decode(z), mu, logvar, z


def kl_divergence(mu, logvar):
    """Analytic ``KL(N(mu, diag exp(logvar)) || N(0, I))`` per row."""
    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    return -0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar), axis=-1)


def elbo_loss(x, x_bar, mu, logvar):
    """Negative ELBO surrogate averaged over rows: half squared
    reconstruction error plus the analytic KL term."""
    x = np.atleast_2d(x)
    d = np.atleast_2d(x_bar) - x
    rec = 0.5 * np.sum(d * d, axis=-1)
    return float(np.mean(rec + kl_divergence(np.atleast_2d(mu), np.atleast_2d(logvar))))


def train_vae(vae: VariationalAutoencoder, X, cfg: TrainConfig = AUTOENCODER_TRAINING, history=None):
    """Single-sample reparameterised ELBO training (in place)."""
    X = np.asarray(X, dtype=float)
    grad = np.empty(len(vae.params))
    noise = np.random.default_rng([int(cfg.seed), 2**31 - 1])

    def batch_grad(xb):
        eps = noise.standard_normal((len(xb), vae.latent))
        return vae.loss_and_grad(xb, eps, grad)

    _fit(vae.params, batch_grad, [X], cfg, history)
    return vae


# ---------------------------------------------------------------- HELM

@dataclass
class IstaResult:
    beta: np.ndarray
    objective: list
    iterations: int
    converged: bool


def lasso_objective(F, S, beta, lam):
    r = F @ beta - S
    return float(lam * np.abs(beta).sum() + np.sum(r * r))


def power_iteration(A, iters=200, seed=0, tol=1e-12):
    """Largest eigenvalue of a symmetric positive semidefinite matrix."""
    v = np.random.default_rng(seed).standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = float(v @ A @ v)
        if abs(new - lam) <= tol * max(abs(new), 1.0):
            return new
        lam = new
    return lam


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def ista(F, S, lam, max_iter=5000, tol=1e-10, strict=True):
    """Minimise ``lam * |beta|_1 + |F beta - S|^2`` from ``beta = 0``.

    The smooth part has gradient Lipschitz constant ``2 * lambda_max(F'F)``;
    its inverse is the step.  ``lam = 0`` is solved directly by least
    squares.  Stops once the objective changes by less than
    ``tol * max(1, objective)``.
    """
    F = np.asarray(F, dtype=float)
    S = np.asarray(S, dtype=float)
    vec = S.ndim == 1
    S2 = S[:, None] if vec else S
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    if lam == 0:
        beta = np.linalg.lstsq(F, S2, rcond=None)[0]
        beta = beta[:, 0] if vec else beta
        obj = lasso_objective(F, S, beta, 0.0)
        return IstaResult(beta, [lasso_objective(F, S, np.zeros_like(beta), 0.0), obj], 1, True)
    G = F.T @ F
    FS = F.T @ S2
    SS = float(np.sum(S2 * S2))
    L = 2.0 * power_iteration(G)
    beta = np.zeros((F.shape[1], S2.shape[1]))
    Gb = np.zeros_like(beta)
    hist = [SS]
    if L == 0.0:
        return IstaResult(beta[:, 0] if vec else beta, hist, 0, True)
    step = 1.0 / L
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        beta = soft_threshold(beta - step * 2.0 * (Gb - FS), lam * step)
        Gb = G @ beta
        # |F b - S|^2 through the Gram matrix: b'Gb - 2 b'F'S + S'S
        obj = lam * float(np.abs(beta).sum()) + float(np.sum(beta * (Gb - 2.0 * FS))) + SS
        change = hist[-1] - obj
        hist.append(obj)
        if abs(change) <= tol * max(1.0, abs(obj)):
            converged = True
            break
    if not converged and strict:
        raise OptimizationError(f"ISTA did not converge in {max_iter} iterations", gap=abs(change))
    return IstaResult(beta[:, 0] if vec else beta, hist, it, converged)


@dataclass(frozen=True)
class HelmConfig:
    hidden: tuple = (20, LATENT_DIM, 20)
    random_width: int = 100
    lam_scale: float = 1e-3
    max_iter: int = 5000
    tol: float = 1e-10
    strict: bool = True         # raise when a layer hits max_iter


class HelmModel:
    """Linear hidden stack ``s_l = s_{l-1} @ beta_l.T`` followed by a random
    tanh projection and a learned linear readout.

    ``W[l], b[l]`` are the random projections (uniform in [-1, 1]); ``beta[l]``
    are the learned maps (shape ``(m_l, m_{l-1})`` for hidden layers, and
    ``(n_out, random_width)`` for the readout).
    """

    kind = "helm"

    def __init__(self, W, b, beta, latent_index=1):
        self.W = [np.asarray(w, dtype=float) for w in W]
        self.b = [np.asarray(v, dtype=float) for v in b]
        self.beta = [np.asarray(v, dtype=float) for v in beta]
        self.latent_index = latent_index
        self.history = []

    @property
    def architecture(self):
        sizes = [self.beta[0].shape[1]] + [bt.shape[0] for bt in self.beta[:-1]]
        return sizes + [self.W[-1].shape[0], self.beta[-1].shape[0]]

    @property
    def latent_dim(self):
        return self.beta[self.latent_index].shape[0]

    def hidden_states(self, x):
        s = np.atleast_2d(np.asarray(x, dtype=float))
        states = [s]
        for bt in self.beta[:-1]:
            s = s @ bt.T
            states.append(s)
        return states

    def encode(self, x):
        return self.hidden_states(x)[self.latent_index + 1]

    def forward(self, x):
        return helm_forward(self, x)[0]


def helm_forward(model: HelmModel, x):
    """Returns ``(y, latent)`` for a batch (or single row)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    states = model.hidden_states(x)
    proj = np.tanh(states[-1] @ model.W[-1].T + model.b[-1])
    y = proj @ model.beta[-1].T
    z = states[model.latent_index + 1]
    return (y[0], z[0]) if single else (y, z)


def helm_fit(X, T, lam=None, seed=0, cfg: HelmConfig = HelmConfig()):
    """Layer-wise fit.  Each hidden layer solves an L1-regularised
    reconstruction of its input from a random tanh projection; the readout
    regresses ``T`` on the final projection.

    ``lam=None`` uses ``cfg.lam_scale * |F'S|_inf`` per layer.
    """
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float).reshape(len(X), -1)
    rng = _rng(seed)
    W, b, beta, hist = [], [], [], []
    s = X
    widths = list(cfg.hidden) + [cfg.random_width]
    for k, m in enumerate(widths):
        Wl = rng.uniform(-1.0, 1.0, size=(m, s.shape[1]))
        bl = rng.uniform(-1.0, 1.0, size=m)
        F = np.tanh(s @ Wl.T + bl)
        target = s if k < len(cfg.hidden) else T
        lam_k = cfg.lam_scale * float(np.abs(F.T @ target).max()) if lam is None else float(lam)
        res = ista(F, target, lam_k, cfg.max_iter, cfg.tol, strict=cfg.strict)
        W.append(Wl)
        b.append(bl)
        hist.append(res)
        if k < len(cfg.hidden):
            # res.beta is (m, in): it reconstructs s from F, and s @ beta.T moves s forward
            beta.append(res.beta)
            s = s @ res.beta.T
        else:
            beta.append(res.beta.T)
    hidden = list(cfg.hidden)
    latent = hidden.index(LATENT_DIM) if LATENT_DIM in hidden else len(hidden) - 1
    model = HelmModel(W, b, beta, latent_index=latent)
    model.history = hist
    return model


# ---------------------------------------------------------------- persistence

def model_to_dict(model):
    """Architecture descriptor and parameter arrays of any model here."""
    if isinstance(model, DenseNetwork):
        meta = {"kind": "dense", "sizes": list(model.sizes), "activations": list(model.activations)}
        arrays = {"params": model.params}
    elif isinstance(model, Autoencoder):
        meta = {"kind": "ae", "sizes": list(model.net.sizes)}
        arrays = {"params": model.params}
    elif isinstance(model, VariationalAutoencoder):
        meta = {"kind": "vae", "n_in": model.n_in, "hidden": model.hidden, "latent": model.latent}
        arrays = {"params": model.params}
    elif isinstance(model, HelmModel):
        meta = {"kind": "helm", "n_layers": len(model.W), "latent_index": model.latent_index}
        arrays = {}
        for k in range(len(model.W)):
            arrays[f"W{k}"], arrays[f"b{k}"], arrays[f"beta{k}"] = model.W[k], model.b[k], model.beta[k]
    else:
        raise ConfigError(f"cannot serialise {type(model).__name__}")
    meta["format"] = FORMAT_VERSION
    return meta, arrays


def model_from_dict(meta, arrays):
    kind = meta.get("kind")
    if kind == "dense":
        return DenseNetwork(meta["sizes"], meta["activations"], np.array(arrays["params"], dtype=float))
    if kind == "ae":
        s = meta["sizes"]
        return Autoencoder(s[0], s[1], s[2], params=np.array(arrays["params"], dtype=float))
    if kind == "vae":
        return VariationalAutoencoder(meta["n_in"], meta["hidden"], meta["latent"],
                                      params=np.array(arrays["params"], dtype=float))
    if kind == "helm":
        n = meta["n_layers"]
        return HelmModel([arrays[f"W{k}"] for k in range(n)], [arrays[f"b{k}"] for k in range(n)],
                         [arrays[f"beta{k}"] for k in range(n)], meta["latent_index"])
    raise ConfigError(f"unknown model kind {kind!r}")


def save_model(model, path, extra=None):
    meta, arrays = model_to_dict(model)
    if extra:
        meta["extra"] = extra
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_model(path):
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != FORMAT_VERSION:
            raise ConfigError(f"unsupported model format {meta.get('format')!r}")
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    return model_from_dict(meta, arrays)


def model_bytes(model):
    """Deterministic byte serialisation (for hashing)."""
    meta, arrays = model_to_dict(model)
    buf = io.BytesIO()
    buf.write(json.dumps(meta, sort_keys=True).encode())
    for k in sorted(arrays):
        buf.write(k.encode())
        buf.write(np.ascontiguousarray(arrays[k]).tobytes())
    return buf.getvalue()


def require_fitted(obj, attr):
    if getattr(obj, attr, None) is None:
        raise StateError(f"{type(obj).__name__} is not fitted ({attr} missing)")
