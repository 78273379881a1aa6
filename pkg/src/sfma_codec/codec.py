"""Frozen hyperprior base codec (mean-scale convolutional flavor).

Four stride-2 analysis stages with GDN, a mirrored synthesis path with
inverse GDN, and a hyper encoder/decoder predicting per-element Gaussian
(mu, sigma) for the latent.  Adapters plug in after encoder/decoder
stages 1..3 and, optionally, after the first hyper-path activations.
All tensors are float64, layout (B, C, H, W).
"""

from dataclasses import dataclass, field

import hashlib

import numpy as np

from . import autodiff as ad
from .adapters import SfmaWeights, sfma_forward, _ensure4d
from .autodiff import Var
from .errors import ConfigError, DimensionError, NumericError

BETA_MIN = 1e-6
SIGMA_MIN = 0.11
DOWNSAMPLE = 16  # four stride-2 stages


@dataclass(frozen=True)
class CodecConfig:
    n_channels: int = 128
    m_channels: int = 192
    stage_count: int = 4
    stride: int = 2

    def validate(self):
        if self.n_channels < 1 or self.m_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.stage_count != 4 or self.stride != 2:
            raise ConfigError("only the four-stage stride-2 layout is supported")
        if self.m_channels % 2:
            raise ConfigError("m_channels must be even (hyper mid width is 3M/2)")
        return self

    @property
    def hyper_mid(self):
        return self.m_channels * 3 // 2


@dataclass(frozen=True)
class PlacementConfig:
    encoder_stages: tuple = (1, 2, 3)
    decoder_stages: tuple = (1, 2, 3)
    hyper_encoder: bool = False
    hyper_decoder: bool = False

    def validate(self):
        for s in tuple(self.encoder_stages) + tuple(self.decoder_stages):
            if s not in (1, 2, 3):
                raise ConfigError(f"adapter stages must be in {{1,2,3}}, got {s}")
        return self

    def adapter_points(self, config: CodecConfig):
        """Insertion point name -> channel width, in forward order."""
        n, m = config.n_channels, config.m_channels
        points = {}
        for s in sorted(set(self.encoder_stages)):
            points[f"enc{s}"] = n
        for s in sorted(set(self.decoder_stages)):
            points[f"dec{s}"] = n
        if self.hyper_encoder:
            points["hyper_enc"] = n
        if self.hyper_decoder:
            points["hyper_dec"] = m
        return points


class CodecWeights:
    """Named weight tensors for the base codec; frozen by default."""

    def __init__(self, config: CodecConfig, tensors: dict):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name) -> Var:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def num_params(self):
        return sum(v.data.size for v in self.tensors.values())

    def set_trainable(self, flag: bool):
        for v in self.tensors.values():
            v.requires_grad = flag
        return self

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name].data).tobytes())
        return h.hexdigest()


def init_gdn(rng, channels):
    # effective beta starts at 1, gamma at 0.1 * identity
    beta_raw = np.full(channels, np.sqrt(1.0 - BETA_MIN))
    gamma_raw = np.sqrt(0.1) * np.eye(channels)
    return Var(beta_raw), Var(gamma_raw)


def init_codec(config: CodecConfig, seed: int) -> CodecWeights:
    config.validate()
    rng = np.random.default_rng(seed)
    n, m = config.n_channels, config.m_channels
    t = {}

    def conv(name, o, c, k):
        t[name + "_w"] = Var(rng.normal(0.0, np.sqrt(2.0 / (c * k * k)), (o, c, k, k)))
        t[name + "_b"] = Var(np.zeros(o))

    def deconv(name, cin, cout, k):
        t[name + "_w"] = Var(rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)),
                                        (cin, cout, k, k)))
        t[name + "_b"] = Var(np.zeros(cout))

    def gdn(name, c):
        t[name + "_beta"], t[name + "_gamma"] = init_gdn(rng, c)

    conv("ga0", n, 3, 5); gdn("ga0_gdn", n)
    conv("ga1", n, n, 5); gdn("ga1_gdn", n)
    conv("ga2", n, n, 5); gdn("ga2_gdn", n)
    conv("ga3", m, n, 5)

    deconv("gs0", m, n, 5); gdn("gs0_gdn", n)
    deconv("gs1", n, n, 5); gdn("gs1_gdn", n)
    deconv("gs2", n, n, 5); gdn("gs2_gdn", n)
    deconv("gs3", n, 3, 5)

    conv("ha0", n, m, 3)
    conv("ha1", n, n, 5)
    conv("ha2", n, n, 5)

    deconv("hs0", n, m, 5)
    deconv("hs1", m, config.hyper_mid, 5)
    conv("hs2", 2 * m, config.hyper_mid, 3)

    w = CodecWeights(config, t)
    w.set_trainable(False)
    return w


def gdn(x, beta_raw, gamma_raw, inverse=False):
    """y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2); inverse multiplies.

    beta/gamma are stored as square-root reparameterizations, which keeps
    the effective values positive (beta >= BETA_MIN) during training.
    """
    x4, squeeze = _ensure4d(x)
    c = beta_raw.data.shape[0]
    if x4.data.shape[1] != c:
        raise DimensionError(
            f"gdn expects {c} channels, got {x4.data.shape[1]}")
    kernel = ad.reshape(gamma_raw * gamma_raw, (c, c, 1, 1))
    beta = beta_raw * beta_raw + BETA_MIN
    norm = ad.sqrt(ad.conv2d(x4 * x4, kernel, beta))
    out = x4 * norm if inverse else x4 / norm
    return ad.reshape(out, out.shape[1:]) if squeeze else out


def gdn_exact_inverse(y, beta, gamma, iters=100, tol=1e-12):
    """Mathematical inverse of the forward GDN via fixed-point iteration.

    The one-shot inverse=True layer only mirrors the forward architecture;
    it recomputes the denominator from already-normalized values and is
    therefore approximate.  This solver iterates x <- y*sqrt(beta + G x^2)
    to the exact preimage (diagnostic use; plain numpy, no gradients).
    """
    y = np.asarray(y, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    x = y.copy()
    for _ in range(iters):
        den = np.sqrt(beta[:, None, None] + np.einsum("ij,jhw->ihw", gamma, x * x))
        x_new = y * den
        if np.max(np.abs(x_new - x)) < tol:
            return x_new
        x = x_new
    return x


def _maybe_adapt(h, adapters, name):
    if adapters and name in adapters:
        w = adapters[name]
        if not isinstance(w, SfmaWeights):
            raise ConfigError(f"adapter {name!r} has unexpected type")
        if h.data.shape[1] != w.config.in_dim:
            raise ConfigError(
                f"adapter {name!r} width {w.config.in_dim} does not match "
                f"feature width {h.data.shape[1]}")
        return sfma_forward(h, w)
    return h


def analyze(x, codec: CodecWeights, adapters=None, placement=None):
    """Image (B,3,H,W) in [0,1] with H,W divisible by 16 -> latent (B,M,H/16,W/16)."""
    placement = (placement or PlacementConfig()).validate()
    x4, squeeze = _ensure4d(x)
    B, C, H, W = x4.data.shape
    if C != 3:
        raise DimensionError(f"expected 3 input channels, got {C}")
    if H % DOWNSAMPLE or W % DOWNSAMPLE:
        raise DimensionError(f"spatial dims must be divisible by {DOWNSAMPLE}")
    t = codec.tensors
    h = x4
    for i in range(3):
        h = ad.conv2d(h, t[f"ga{i}_w"], t[f"ga{i}_b"], stride=2, padding=2)
        h = gdn(h, t[f"ga{i}_gdn_beta"], t[f"ga{i}_gdn_gamma"])
        if (i + 1) in placement.encoder_stages:
            h = _maybe_adapt(h, adapters, f"enc{i + 1}")
    h = ad.conv2d(h, t["ga3_w"], t["ga3_b"], stride=2, padding=2)
    return ad.reshape(h, h.shape[1:]) if squeeze else h


def synthesize(y_hat, codec: CodecWeights, adapters=None, placement=None,
               clamp=True):
    """Latent -> image; inverse-GDN stages mirror analyze.  The [0,1] clamp
    applies only at final image emission (clamp=False for training paths)."""
    placement = (placement or PlacementConfig()).validate()
    y4, squeeze = _ensure4d(y_hat)
    if y4.data.shape[1] != codec.config.m_channels:
        raise DimensionError(
            f"latent has {y4.data.shape[1]} channels, codec expects "
            f"{codec.config.m_channels}")
    t = codec.tensors
    h = y4
    for i in range(3):
        h = ad.conv_transpose2d(h, t[f"gs{i}_w"], t[f"gs{i}_b"],
                                stride=2, padding=2, output_padding=1)
        h = gdn(h, t[f"gs{i}_gdn_beta"], t[f"gs{i}_gdn_gamma"], inverse=True)
        if (i + 1) in placement.decoder_stages:
            h = _maybe_adapt(h, adapters, f"dec{i + 1}")
    h = ad.conv_transpose2d(h, t["gs3_w"], t["gs3_b"],
                            stride=2, padding=2, output_padding=1)
    if clamp:
        h = ad.clip01(h)
    return ad.reshape(h, h.shape[1:]) if squeeze else h


def hyper_analyze(y, codec: CodecWeights, adapters=None, placement=None):
    """Latent -> hyper-latent z via two further stride-2 stages."""
    placement = (placement or PlacementConfig()).validate()
    y4, squeeze = _ensure4d(y)
    if y4.data.shape[1] != codec.config.m_channels:
        raise DimensionError("hyper_analyze latent width mismatch")
    t = codec.tensors
    h = ad.relu(ad.conv2d(y4, t["ha0_w"], t["ha0_b"], stride=1, padding=1))
    if placement.hyper_encoder:
        h = _maybe_adapt(h, adapters, "hyper_enc")
    h = ad.relu(ad.conv2d(h, t["ha1_w"], t["ha1_b"], stride=2, padding=2))
    h = ad.conv2d(h, t["ha2_w"], t["ha2_b"], stride=2, padding=2)
    return ad.reshape(h, h.shape[1:]) if squeeze else h


def hyper_synthesize(z_hat, codec: CodecWeights, latent_hw=None,
                     adapters=None, placement=None):
    """Hyper-latent -> (mu, sigma), each (B,M,h,w); sigma >= SIGMA_MIN.

    latent_hw crops the upsampled output when the latent dims are not a
    multiple of 4 (the two deconvs can overshoot by one).
    """
    placement = (placement or PlacementConfig()).validate()
    z4, squeeze = _ensure4d(z_hat)
    if z4.data.shape[1] != codec.config.n_channels:
        raise DimensionError("hyper_synthesize hyper-latent width mismatch")
    t = codec.tensors
    h = ad.relu(ad.conv_transpose2d(z4, t["hs0_w"], t["hs0_b"],
                                    stride=2, padding=2, output_padding=1))
    if placement.hyper_decoder:
        h = _maybe_adapt(h, adapters, "hyper_dec")
    h = ad.relu(ad.conv_transpose2d(h, t["hs1_w"], t["hs1_b"],
                                    stride=2, padding=2, output_padding=1))
    h = ad.conv2d(h, t["hs2_w"], t["hs2_b"], stride=1, padding=1)
    if latent_hw is not None:
        h = ad.crop2d(h, latent_hw[0], latent_hw[1])
    m = codec.config.m_channels
    mu = ad.narrow(h, 1, 0, m)
    sigma = ad.lower_bound(ad.exp(ad.narrow(h, 1, m, m)), SIGMA_MIN)
    if squeeze:
        mu = ad.reshape(mu, mu.shape[1:])
        sigma = ad.reshape(sigma, sigma.shape[1:])
    return mu, sigma


def quantize(y, mode, seed=0):
    """ROUND: ties away from zero.  NOISE: + U[-0.5, 0.5) keyed by seed.
    STE: forward rounds, backward passes the gradient through unchanged."""
    v = y if isinstance(y, Var) else Var(y)
    if not np.all(np.isfinite(v.data)):
        raise NumericError("quantize requires finite input")
    if mode == "ROUND":
        out = Var(ad.round_away(v.data))
    elif mode == "NOISE":
        u = np.random.default_rng(seed).random(v.data.shape) - 0.5
        out = v + Var(u)
    elif mode == "STE":
        out = ad.ste_round(v)
    else:
        raise ConfigError(f"unknown quantize mode {mode!r}")
    return out if isinstance(y, Var) else out.data


def pad_to_multiple(img, multiple=DOWNSAMPLE):
    """Reflect-pad (C,H,W) on the bottom/right to a multiple; returns
    (padded, (orig_h, orig_w))."""
    C, H, W = img.shape
    ph = (-H) % multiple
    pw = (-W) % multiple
    if ph == 0 and pw == 0:
        return img, (H, W)
    mode = "reflect" if min(H, W) > 1 else "edge"
    return np.pad(img, ((0, 0), (0, ph), (0, pw)), mode=mode), (H, W)


def crop_to(img, hw):
    return img[..., :hw[0], :hw[1]]
