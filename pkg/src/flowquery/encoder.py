"""Denoising autoencoder over distance matrices.

The forward corruption follows the variance-preserving schedule
x_t = alpha_t * x0 + sigma_t * eps with alpha_t = sqrt(prod(1 - beta_i)) and
alpha_t^2 + sigma_t^2 = 1; the network predicts the clean matrix directly and
is trained on the squared reconstruction error.  Layers are plain affine maps
with SiLU activations, a linear 128-d latent in the middle, and a sinusoidal
embedding of t injected into the first hidden layer.  Everything is hand-rolled
numpy so training is deterministic for a fixed seed and the analytic gradients
can be checked against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from skimage.metrics import structural_similarity

from .errors import BadParam, FormatError, IoError, ShapeMismatch

DEFAULT_T = 1000
DEFAULT_BETA = (1e-4, 0.02)
DEFAULT_T_RANGE = tuple(range(10, 101, 10))


class NoiseSchedule:
    """Tables alpha_t, sigma_t for t = 0..T; t = 0 is the clean input."""

    def __init__(self, T, beta):
        beta = np.asarray(beta, dtype=np.float64)
        if beta.shape != (T,):
            raise BadParam(f"need {T} beta values")
        a2 = np.empty(T + 1)
        a2[0] = 1.0
        np.cumprod(1.0 - beta, out=a2[1:])
        self.T = int(T)
        self.beta = beta
        self.alpha = np.sqrt(a2)
        self.sigma = np.sqrt(1.0 - a2)

    def check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise BadParam(f"t must lie in [0, {self.T}]")


def make_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA[0],
                  beta_end: float = DEFAULT_BETA[1]) -> NoiseSchedule:
    if T < 1:
        raise BadParam("T must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise BadParam("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(T, np.linspace(beta_start, beta_end, T))


def corrupt(x0, t, eps, sched: NoiseSchedule):
    """x_t = alpha_t x0 + sigma_t eps, elementwise; t may be per-sample."""
    sched.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeMismatch(f"x0 {x0.shape} vs eps {eps.shape}")
    t = np.asarray(t)
    if t.ndim == 0:
        return sched.alpha[t] * x0 + sched.sigma[t] * eps
    shape = (-1,) + (1,) * (x0.ndim - 1)
    return (sched.alpha[t].reshape(shape) * x0
            + sched.sigma[t].reshape(shape) * eps)


def sinusoidal_embedding(t, dim):
    """Transformer-style sin/cos features of the (float) step index."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s


def _silu_grad(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


class DaeModel:
    """Feed-forward encoder/decoder over flattened descriptors.

    Encoder widths: input -> hidden... -> latent (linear latent layer);
    decoder mirrors them back to the input width.
    """

    def __init__(self, input_dim=1024, hidden=(512, 256), latent_dim=128,
                 temb_dim=128, seed=0):
        if latent_dim < 1 or input_dim < 1:
            raise BadParam("dimensions must be positive")
        self.input_dim = int(input_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.latent_dim = int(latent_dim)
        self.temb_dim = int(temb_dim)
        rng = np.random.default_rng(seed)
        enc = [self.input_dim, *self.hidden, self.latent_dim]
        dec = [self.latent_dim, *self.hidden[::-1], self.input_dim]
        self.params: dict[str, np.ndarray] = {}
        for i in range(len(enc) - 1):
            self._init_layer(rng, f"enc{i}", enc[i], enc[i + 1])
        self.params["temb_W"] = rng.standard_normal(
            (self.temb_dim, enc[1])) * np.sqrt(1.0 / self.temb_dim)
        for i in range(len(dec) - 1):
            self._init_layer(rng, f"dec{i}", dec[i], dec[i + 1])
        self.n_enc = len(enc) - 1
        self.n_dec = len(dec) - 1
        self.loss_history: list[float] = []

    def _init_layer(self, rng, name, fan_in, fan_out):
        self.params[f"{name}_W"] = rng.standard_normal(
            (fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        self.params[f"{name}_b"] = np.zeros(fan_out)

    def param_names(self):
        names = [f"enc{i}_{p}" for i in range(self.n_enc) for p in ("W", "b")]
        names.append("temb_W")
        names += [f"dec{i}_{p}" for i in range(self.n_dec) for p in ("W", "b")]
        return names

    def n_params(self):
        return sum(self.params[n].size for n in self.param_names())

    # forward / backward ---------------------------------------------------

    def _forward(self, x, t):
        """Returns (output, latent, cache) for a (B, input_dim) batch."""
        P = self.params
        emb = sinusoidal_embedding(t, self.temb_dim)
        cache = {"emb": emb, "acts": [x], "pre": []}
        h = x
        for i in range(self.n_enc):
            z = h @ P[f"enc{i}_W"] + P[f"enc{i}_b"]
            if i == 0:
                z = z + emb @ P["temb_W"]
            h = _silu(z) if i < self.n_enc - 1 else z
            cache["pre"].append(z)
            cache["acts"].append(h)
        latent = h
        for i in range(self.n_dec):
            z = h @ P[f"dec{i}_W"] + P[f"dec{i}_b"]
            h = _silu(z) if i < self.n_dec - 1 else z
            cache["pre"].append(z)
            cache["acts"].append(h)
        return h, latent, cache

    def _backward(self, d_out, cache):
        """Gradients of all parameters given dLoss/dOutput."""
        P = self.params
        grads = {}
        acts, pre = cache["acts"], cache["pre"]
        g = d_out
        for i in range(self.n_dec - 1, -1, -1):
            k = self.n_enc + i
            if i < self.n_dec - 1:
                g = g * _silu_grad(pre[k])
            grads[f"dec{i}_W"] = acts[k].T @ g
            grads[f"dec{i}_b"] = g.sum(axis=0)
            g = g @ P[f"dec{i}_W"].T
        for i in range(self.n_enc - 1, -1, -1):
            if i < self.n_enc - 1:
                g = g * _silu_grad(pre[i])
            grads[f"enc{i}_W"] = acts[i].T @ g
            grads[f"enc{i}_b"] = g.sum(axis=0)
            if i == 0:
                grads["temb_W"] = cache["emb"].T @ g
            g = g @ P[f"enc{i}_W"].T
        return grads

    def encode_batch(self, x):
        x = _flatten(x, self.input_dim)
        _, latent, _ = self._forward(x, np.zeros(len(x)))
        return latent

    def reconstruct_batch(self, x):
        flat = _flatten(x, self.input_dim)
        out, _, _ = self._forward(flat, np.zeros(len(flat)))
        return out.reshape(np.asarray(x).shape)


@dataclass
class FlowLatent:
    vector: np.ndarray
    segment_ref: object = None


def encode(model: DaeModel, x0) -> FlowLatent:
    """Latent for one clean descriptor; inference always conditions on t=0."""
    vec = model.encode_batch(np.asarray(x0)[None, ...])[0]
    return FlowLatent(vector=vec)


def reconstruct(model: DaeModel, x0) -> np.ndarray:
    return model.reconstruct_batch(np.asarray(x0)[None, ...])[0]


def _flatten(x, dim):
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(len(x), -1)
    if flat.shape[1] != dim:
        raise ShapeMismatch(f"expected flattened width {dim}, got {flat.shape[1]}")
    return flat


def loss_and_grads(model: DaeModel, x_noisy, t, x0):
    """Mean squared reconstruction error and its parameter gradients."""
    out, _, cache = model._forward(x_noisy, t)
    diff = out - x0
    loss = float((diff * diff).mean())
    d_out = (2.0 / diff.size) * diff
    return loss, model._backward(d_out, cache)


class Adam:
    """Adaptive-moment optimizer with decoupled weight decay."""

    def __init__(self, params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, grads):
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            if self.weight_decay:
                update += self.weight_decay * self.params[k]
            self.params[k] -= self.lr * update


@dataclass
class TrainConfig:
    epochs: int = 100
    batch: int = 128
    lr: float = 1e-3
    weight_decay: float = 0.0
    t_range: tuple = DEFAULT_T_RANGE
    latent_dim: int = 128
    hidden: tuple = (512, 256)
    temb_dim: int = 128
    seed: int = 0
    schedule_T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA[0]
    beta_end: float = DEFAULT_BETA[1]
    steps: int = 0  # optional hard cap on optimizer steps (0 = epochs only)
    log_every: int = 0


def train_dae(dataset, cfg: TrainConfig = None, **overrides) -> DaeModel:
    """Train the denoiser; per step each sample gets an independent t drawn
    uniformly from cfg.t_range.  t_range == (0,) degenerates to a plain
    autoencoder.  Deterministic for a fixed seed."""
    cfg = cfg or TrainConfig(**overrides)
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim < 2 or len(data) < 1:
        raise BadParam("dataset must hold at least one matrix")
    if not cfg.lr > 0:
        raise BadParam("lr must be > 0")
    flat = data.reshape(len(data), -1)
    model = DaeModel(input_dim=flat.shape[1], hidden=cfg.hidden,
                     latent_dim=cfg.latent_dim, temb_dim=cfg.temb_dim,
                     seed=cfg.seed)
    sched = make_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end)
    t_range = np.asarray(cfg.t_range, dtype=np.int64)
    sched.check_t(t_range)
    opt = Adam(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(flat)
    steps_done = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n, cfg.batch):
            idx = order[lo:lo + cfg.batch]
            x0 = flat[idx]
            t = rng.choice(t_range, size=len(idx))
            eps = rng.standard_normal(x0.shape)
            x_t = corrupt(x0, t, eps, sched)
            loss, grads = loss_and_grads(model, x_t, t, x0)
            opt.step(grads)
            epoch_losses.append(loss)
            steps_done += 1
            if cfg.steps and steps_done >= cfg.steps:
                break
        model.loss_history.append(float(np.mean(epoch_losses)))
        if cfg.log_every and (epoch + 1) % cfg.log_every == 0:
            print(f"epoch {epoch + 1}/{cfg.epochs} loss {model.loss_history[-1]:.3e}")
        if cfg.steps and steps_done >= cfg.steps:
            break
    return model


# reconstruction metrics ----------------------------------------------------

PSNR_MAX = 1.0
PSNR_CAP = 99.0


def metrics(x0, xhat) -> dict:
    """Per-sample rmse / psnr / ssim, averaged over the batch.

    psnr uses MAX = 1.0 (descriptors are bounded by 1) and reports the
    99 dB cap whenever a sample's rmse drops below 1e-5; ssim uses the
    standard 11x11 Gaussian window at dynamic range 1.0.
    """
    a = np.asarray(x0, dtype=np.float64)
    b = np.asarray(xhat, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None, ...], b[None, ...]
    rmses, psnrs, ssims = [], [], []
    for ai, bi in zip(a, b):
        rmse = float(np.sqrt(((ai - bi) ** 2).mean()))
        psnr = PSNR_CAP if rmse < 1e-5 else float(20.0 * np.log10(PSNR_MAX / rmse))
        ssims.append(float(structural_similarity(
            ai, bi, win_size=11, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=1.0)))
        rmses.append(rmse)
        psnrs.append(psnr)
    return {"rmse": float(np.mean(rmses)), "psnr": float(np.mean(psnrs)),
            "ssim": float(np.mean(ssims))}


# checkpoint ----------------------------------------------------------------

_CKPT_MAGIC = b"FQCK"
_CKPT_VERSION = 1


def save_checkpoint(model: DaeModel, path) -> None:
    """Versioned binary: magic, dims, then f32-LE parameter blobs."""
    try:
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC)
            fh.write(struct.pack("<IIIII", _CKPT_VERSION, model.input_dim,
                                 model.latent_dim, model.temb_dim,
                                 len(model.hidden)))
            fh.write(struct.pack(f"<{len(model.hidden)}I", *model.hidden))
            for name in model.param_names():
                fh.write(np.ascontiguousarray(
                    model.params[name].astype("<f4")).tobytes())
    except OSError as e:
        raise IoError(str(e)) from e


def load_checkpoint(path) -> DaeModel:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise IoError(str(e)) from e
    if blob[:4] != _CKPT_MAGIC:
        raise FormatError("not a model checkpoint")
    version, input_dim, latent_dim, temb_dim, nh = struct.unpack_from("<IIIII", blob, 4)
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    hidden = struct.unpack_from(f"<{nh}I", blob, 24)
    model = DaeModel(input_dim=input_dim, hidden=hidden, latent_dim=latent_dim,
                     temb_dim=temb_dim, seed=0)
    off = 24 + 4 * nh
    for name in model.param_names():
        shape = model.params[name].shape
        count = int(np.prod(shape))
        if off + 4 * count > len(blob):
            raise FormatError("checkpoint truncated")
        model.params[name] = np.frombuffer(
            blob, dtype="<f4", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 4 * count
    if off != len(blob):
        raise FormatError("checkpoint has trailing bytes")
    return model
