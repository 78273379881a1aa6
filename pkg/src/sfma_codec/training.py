"""Adapter-only rate-distortion optimization.

The transferable part of the system is the adapter set: the base codec,
the factorized prior and the task model all stay frozen, and the loss

    loss = rate_bpp + lambda * distortion

trades estimated coding cost against a task-perceptual distortion (mean
over stages of feature MSE through the frozen task model).  Quantization
is additive-noise for the rate term and straight-through rounding for
the decoded-image path.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .codec import PlacementConfig, analyze, hyper_analyze, hyper_synthesize, \
    quantize, synthesize
from .entropy import EntropyParameters, estimate_rate
from .errors import ConfigError, DataError, NumericError

LAMBDA_GRID_CLASSIFICATION = (1.8, 3.5, 6.7, 13.0)
LAMBDA_GRID_DETECTION = (5.0, 10.0, 20.0, 50.0)

SCHEDULES = ("multistep", "constant")


@dataclass
class TrainConfig:
    lam: float
    batch_size: int = 16
    epochs: int = 5
    base_lr: float = 1e-4
    schedule: str = "multistep"
    milestones: tuple = (2, 4)
    decay: float = 0.5
    crop_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.base_lr <= 0 or self.crop_size < 1:
            raise ConfigError("base_lr and crop_size must be positive")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "multistep":
            ms = tuple(self.milestones)
            if not ms or list(ms) != sorted(set(ms)) or ms[0] < 0:
                raise ConfigError("milestones must be increasing and >= 0")
            if not 0.0 < self.decay <= 1.0:
                raise ConfigError("decay must be in (0, 1]")
            self.milestones = ms


def run_schedule(config: TrainConfig):
    """Learning rate for each epoch index."""
    lrs = []
    for epoch in range(config.epochs):
        if config.schedule == "multistep":
            hits = sum(1 for m in config.milestones if m <= epoch)
            lrs.append(config.base_lr * config.decay ** hits)
        else:
            lrs.append(config.base_lr)
    return np.asarray(lrs)


def perceptual_distortion(x, x_hat, model):
    """Mean over stages of MSE between stage features of x and x_hat."""
    x = ad.as_var(x)
    xh = ad.as_var(x_hat)
    if x.shape != xh.shape:
        raise DataError(f"shape mismatch {x.shape} vs {xh.shape}")
    fx = model.features(x)
    fh = model.features(xh)
    if len(fx) != len(fh) or not fx:
        raise DataError("feature stage count mismatch")
    total = None
    for a, b in zip(fx, fh):
        if a.shape != b.shape:
            raise DataError(
                f"stage shape mismatch {a.shape} vs {b.shape}")
        d = a - b
        term = ad.mean_(d * d)
        total = term if total is None else total + term
    return total * (1.0 / len(fx))


def rd_loss(rate_bpp, distortion, lam):
    lam = float(lam)
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    return rate_bpp + distortion * lam


class Adam(object):
    """Adam over a {name: Var} parameter dict; step() consumes gradients."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise ConfigError("bad optimizer hyperparameters")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v.data) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in self.params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / \
                (np.sqrt(self.v[k] / c2) + self.eps)
            p.zero_grad()


def adapter_parameters(adapters):
    """Flatten an adapter stack into one {point/tensor: Var} dict."""
    flat = {}
    for point, w in adapters.items():
        for name, v in w.tensors.items():
            flat[f"{point}/{name}"] = v
    return flat


def train_step(batch, codec, adapters, prior, model, config, optimizer,
               placement=None, step_seed=0):
    """One optimization step; only adapter weights move.

    Rate uses additive-noise quantization, the decode path uses
    straight-through rounding, and the reconstruction is left unclamped
    so gradients survive early overshoot.
    """
    placement = placement or PlacementConfig()
    x = ad.Var(np.asarray(batch, dtype=np.float64))
    if x.ndim != 4:
        raise ConfigError("batch must be (B,3,H,W)")
    B, _, H, W = x.shape

    try:
        y = analyze(x, codec, adapters, placement)
        z = hyper_analyze(y, codec, adapters, placement)
        z_noise = quantize(z, "NOISE", seed=step_seed)
        mu, sigma = hyper_synthesize(z_noise, codec,
                                     latent_hw=y.data.shape[-2:],
                                     adapters=adapters, placement=placement)
        y_noise = quantize(y, "NOISE", seed=step_seed + 1)
        y_ste = quantize(y, "STE")
        recon = synthesize(y_ste, codec, adapters, placement, clamp=False)
    except NumericError as exc:
        raise NumericError(f"non-finite forward pass: {exc}") from exc

    rate = estimate_rate(y_noise, EntropyParameters(mu, sigma),
                         z_noise, prior, float(B * H * W))
    dist = perceptual_distortion(x, recon, model)
    loss = rd_loss(rate, dist, config.lam)
    if not np.isfinite(loss.data):
        raise NumericError(
            f"non-finite loss: rate={float(rate.data)!r} "
            f"distortion={float(dist.data)!r} lambda={config.lam}")
    loss.backward()
    optimizer.step()
    return {"loss": float(loss.data), "rate": float(rate.data),
            "distortion": float(dist.data)}


def train_adapters(images, codec, adapters, prior, model, config,
                   placement=None, log_path=None):
    """Full adaptation run over an image array (N,3,H,W).

    Freezes everything except the adapters, follows the configured
    learning-rate schedule, and returns the per-step metrics rows
    (step, loss, rate, distortion, lr).  Deterministic for a fixed
    config.seed.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ConfigError("images must be (N,3,H,W)")
    for frozen in (codec, prior, model):
        frozen.set_trainable(False)
    for w in adapters.values():
        w.set_trainable(True)

    opt = Adam(adapter_parameters(adapters), lr=config.base_lr)
    lrs = run_schedule(config)
    rows = []
    step = 0
    order_rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        opt.lr = float(lrs[epoch])
        idx = order_rng.permutation(len(images))
        for start in range(0, len(images), config.batch_size):
            xb = images[idx[start:start + config.batch_size]]
            stats = train_step(xb, codec, adapters, prior, model, config,
                               opt, placement,
                               step_seed=config.seed * 100003 + step)
            rows.append((step, stats["loss"], stats["rate"],
                         stats["distortion"], opt.lr))
            step += 1
    if log_path is not None:
        write_metrics(log_path, rows)
    return rows


def pretrain_base(images, codec, prior, lam_mse, epochs=20, batch_size=8,
                  lr=1e-3, seed=0, log_path=None):
    """Rate + lam_mse * MSE pretraining of the full base codec and prior.

    This is the human-vision objective that produces the frozen
    checkpoints adapters later attach to; one run per quality point.
    Returns per-step metrics rows (step, loss, rate, mse, lr).
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ConfigError("images must be (N,3,H,W)")
    if lam_mse <= 0:
        raise ConfigError("lam_mse must be positive")
    codec.set_trainable(True)
    prior.set_trainable(True)
    params = {f"codec/{k}": v for k, v in codec.items()}
    params.update({f"prior/{k}": v for k, v in prior.params()})
    opt = Adam(params, lr=lr)
    rows = []
    step = 0
    order_rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        idx = order_rng.permutation(len(images))
        for start in range(0, len(images), batch_size):
            x = ad.Var(images[idx[start:start + batch_size]])
            B, _, H, W = x.shape
            y = analyze(x, codec)
            z = hyper_analyze(y, codec)
            z_noise = quantize(z, "NOISE", seed=seed * 7919 + 2 * step)
            mu, sigma = hyper_synthesize(z_noise, codec,
                                         latent_hw=y.data.shape[-2:])
            y_noise = quantize(y, "NOISE", seed=seed * 7919 + 2 * step + 1)
            recon = synthesize(quantize(y, "STE"), codec, clamp=False)
            rate = estimate_rate(y_noise, EntropyParameters(mu, sigma),
                                 z_noise, prior, float(B * H * W))
            d = x - recon
            mse = ad.mean_(d * d)
            loss = rate + mse * float(lam_mse)
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss: rate={float(rate.data)!r} "
                    f"mse={float(mse.data)!r} lam_mse={lam_mse}")
            loss.backward()
            opt.step()
            rows.append((step, float(loss.data), float(rate.data),
                         float(mse.data), opt.lr))
            step += 1
    codec.set_trainable(False)
    prior.set_trainable(False)
    if log_path is not None:
        write_metrics(log_path, rows,
                      header=("step", "loss", "rate", "mse", "lr"))
    return rows


def train_scalable_adapters(images, codec, prior, mask_gen, adapters, model,
                            config, placement=None, log_path=None):
    """Adaptation run for scalable coding: mask generator + decoder adapters.

    Same loop shape as train_adapters, but each step optimizes the mask
    generator jointly with the (decoder-side) adapters via the layered
    objective.  Returns rows (step, loss, rate, distortion,
    mask_density, lr).
    """
    from .scalable import train_scalable

    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ConfigError("images must be (N,3,H,W)")
    for frozen in (codec, prior, model):
        frozen.set_trainable(False)
    for w in adapters.values():
        w.set_trainable(True)
    mask_gen.set_trainable(True)

    params = adapter_parameters(adapters)
    params.update({f"maskgen/{k}": v for k, v in mask_gen.tensors.items()})
    opt = Adam(params, lr=config.base_lr)
    lrs = run_schedule(config)
    rows = []
    step = 0
    order_rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        opt.lr = float(lrs[epoch])
        idx = order_rng.permutation(len(images))
        for start in range(0, len(images), config.batch_size):
            xb = images[idx[start:start + config.batch_size]]
            stats = train_scalable(xb, codec, prior, mask_gen, adapters,
                                   model, config.lam, opt, placement,
                                   seed=config.seed * 100003 + 3 * step)
            rows.append((step, stats["loss"], stats["rate"],
                         stats["distortion"], stats["mask_density"],
                         opt.lr))
            step += 1
    if log_path is not None:
        write_metrics(log_path, rows,
                      header=("step", "loss", "rate", "distortion",
                              "mask_density", "lr"))
    return rows


def write_metrics(path, rows,
                  header=("step", "loss", "rate", "distortion", "lr")):
    """Per-step metrics as CSV."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(list(header))
        for row in rows:
            out.writerow(row)
