"""Spatial-frequency modulation adapters (SFMA).

An SFMA is a residual bottleneck adapter with two branches: a spatial
modulation branch (SMA, gated depthwise conv) and a frequency modulation
branch (FMA, sigmoid gate on the half-spectrum amplitude).  The canonical
forward pass is the reference-code form ("listing"): the FMA gates with a
sigmoid and applies a relu before its up-projection, and the SMA applies
its relu after the elementwise product.  ``form="equation"`` selects the
alternate published formulation: relu gates on the modulation matrices,
no relu before the FMA up-projection, and the SMA relu moves onto the
modulation matrix.  Both keep the phase untouched, so the gate acts as a
real per-frequency scale.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigError, DimensionError

VARIANTS = ("SFMA_PARALLEL", "SMA_ONLY", "FMA_ONLY",
            "FMA_THEN_SMA", "SMA_THEN_FMA", "DUAL_SMA")

# tiny offset under the amplitude sqrt so the gradient stays finite at
# exactly-zero frequency bins; forward change is far below test tolerances
_AMP_EPS = 1e-24


@dataclass(frozen=True)
class SfmaConfig:
    in_dim: int
    middle_dim: int = 64
    factor: float = 1.0
    variant: str = "SFMA_PARALLEL"
    fma_kernel: int = 3
    sma_kernel: int = 5
    form: str = "listing"
    pad_mode: str = "constant"

    def validate(self):
        if self.in_dim < 1 or self.middle_dim < 1:
            raise ConfigError("in_dim and middle_dim must be positive")
        if self.middle_dim > self.in_dim:
            raise ConfigError(
                f"middle_dim {self.middle_dim} exceeds in_dim {self.in_dim}")
        for k in (self.fma_kernel, self.sma_kernel):
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"kernel sizes must be odd and >= 1, got {k}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.form not in ("listing", "equation"):
            raise ConfigError(f"unknown form {self.form!r}")
        if self.pad_mode not in ("constant", "wrap"):
            raise ConfigError(f"unknown pad_mode {self.pad_mode!r}")
        return self


def _needs_fma(variant):
    return variant in ("SFMA_PARALLEL", "FMA_ONLY", "FMA_THEN_SMA", "SMA_THEN_FMA")


def _needs_sma(variant):
    return variant != "FMA_ONLY"


class SfmaWeights:
    """Named weight tensors for one adapter; knows its own config."""

    def __init__(self, config: SfmaConfig, tensors: dict):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name) -> Var:
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def num_params(self):
        return sum(v.data.size for v in self.tensors.values())

    def set_trainable(self, flag: bool):
        for v in self.tensors.values():
            v.requires_grad = flag
        return self


def init_adapter(config: SfmaConfig, seed: int) -> SfmaWeights:
    """Initialize one adapter; up-projections (weights and biases) are zero
    so the adapter starts as an exact identity residual."""
    config.validate()
    rng = np.random.default_rng(seed)
    cin, mid = config.in_dim, config.middle_dim

    def pointwise(o, c):
        w = rng.normal(0.0, np.sqrt(2.0 / c), size=(o, c, 1, 1))
        return Var(w), Var(np.zeros(o))

    def depthwise(c, k):
        w = rng.normal(0.0, np.sqrt(2.0 / (k * k)), size=(c, k, k))
        return Var(w), Var(np.zeros(c))

    def zeros(o, c):
        return Var(np.zeros((o, c, 1, 1))), Var(np.zeros(o))

    t = {}

    def add_sma(prefix):
        t[prefix + "_down1"], t[prefix + "_down1_b"] = pointwise(mid, cin)
        t[prefix + "_down2"], t[prefix + "_down2_b"] = pointwise(mid, cin)
        t[prefix + "_dw"], t[prefix + "_dw_b"] = depthwise(mid, config.sma_kernel)
        t[prefix + "_up"], t[prefix + "_up_b"] = zeros(cin, mid)

    if _needs_fma(config.variant):
        t["fma_down"], t["fma_down_b"] = pointwise(mid, cin)
        t["fma_dw"], t["fma_dw_b"] = depthwise(mid, config.fma_kernel)
        t["fma_inter"], t["fma_inter_b"] = pointwise(mid, mid)
        t["fma_up"], t["fma_up_b"] = zeros(cin, mid)
    if _needs_sma(config.variant):
        add_sma("sma")
    if config.variant == "DUAL_SMA":
        add_sma("sma2")
    return SfmaWeights(config, t)


def _ensure4d(x):
    v = x if isinstance(x, Var) else Var(x)
    if v.data.ndim == 3:
        return ad.reshape(v, (1,) + v.data.shape), True
    if v.data.ndim == 4:
        return v, False
    raise DimensionError(f"expected 3-D or 4-D feature, got ndim={v.data.ndim}")


def _check_channels(x4, w):
    if x4.data.shape[1] != w.config.in_dim:
        raise DimensionError(
            f"feature has {x4.data.shape[1]} channels, adapter expects {w.config.in_dim}")


def fma_forward(x, w: SfmaWeights):
    """Frequency modulation branch output (before the residual add)."""
    x4, squeeze = _ensure4d(x)
    _check_channels(x4, w)
    if "fma_down" not in w:
        raise ConfigError(f"variant {w.config.variant} carries no FMA weights")
    H, W = x4.data.shape[2:]
    h = ad.conv2d(x4, w["fma_down"], w["fma_down_b"])
    spec = ad.rfft2_pair(h)                     # (2, B, mid, H, W//2+1)
    re = ad.reshape(ad.narrow(spec, 0, 0, 1), spec.shape[1:])
    im = ad.reshape(ad.narrow(spec, 0, 1, 1), spec.shape[1:])
    amp = ad.sqrt(re * re + im * im + _AMP_EPS)
    m = ad.dwconv2d(amp, w["fma_dw"], w["fma_dw_b"], pad_mode=w.config.pad_mode)
    m = ad.conv2d(ad.relu(m), w["fma_inter"], w["fma_inter_b"])
    # gating the amplitude while keeping the phase is a real scale on the
    # complex bins, so apply the gate to the stacked spectrum directly
    gate = ad.sigmoid(m) if w.config.form == "listing" else ad.relu(m)
    z = ad.irfft2_pair(spec * gate, (H, W))
    if w.config.form == "listing":
        z = ad.relu(z)
    out = ad.conv2d(z, w["fma_up"], w["fma_up_b"])
    return ad.reshape(out, out.shape[1:]) if squeeze else out


def sma_forward(x, w: SfmaWeights, prefix="sma"):
    """Spatial modulation branch output (before the residual add)."""
    x4, squeeze = _ensure4d(x)
    _check_channels(x4, w)
    if prefix + "_down1" not in w:
        raise ConfigError(f"variant {w.config.variant} carries no {prefix} weights")
    d1 = ad.conv2d(x4, w[prefix + "_down1"], w[prefix + "_down1_b"])
    d2 = ad.conv2d(x4, w[prefix + "_down2"], w[prefix + "_down2_b"])
    if w.config.form == "listing":
        g = ad.dwconv2d(d1, w[prefix + "_dw"], w[prefix + "_dw_b"],
                        pad_mode=w.config.pad_mode)
        h = ad.relu(g * d2)
    else:
        m = ad.dwconv2d(d2, w[prefix + "_dw"], w[prefix + "_dw_b"],
                        pad_mode=w.config.pad_mode)
        h = d1 * ad.relu(m)
    out = ad.conv2d(h, w[prefix + "_up"], w[prefix + "_up_b"])
    return ad.reshape(out, out.shape[1:]) if squeeze else out


def sfma_forward(x, w: SfmaWeights, config: SfmaConfig = None):
    """Full adapter: residual add of the variant's branch composition."""
    c = config if config is not None else w.config
    x = x if isinstance(x, Var) else Var(x)
    f = c.factor
    v = c.variant
    if v == "SFMA_PARALLEL":
        return x + (fma_forward(x, w) + sma_forward(x, w)) * f
    if v == "SMA_ONLY":
        return x + sma_forward(x, w) * f
    if v == "FMA_ONLY":
        return x + fma_forward(x, w) * f
    if v == "FMA_THEN_SMA":
        h = x + fma_forward(x, w) * f
        return h + sma_forward(h, w) * f
    if v == "SMA_THEN_FMA":
        h = x + sma_forward(x, w) * f
        return h + fma_forward(h, w) * f
    if v == "DUAL_SMA":
        return x + (sma_forward(x, w) + sma_forward(x, w, prefix="sma2")) * f
    raise ConfigError(f"unknown variant {v!r}")


def adapter_stack(in_dims, config: SfmaConfig, seed: int) -> dict:
    """One adapter per named insertion point; seeds derived per point."""
    out = {}
    for i, (name, dim) in enumerate(in_dims.items()):
        cfg = replace(config, in_dim=dim)
        out[name] = init_adapter(cfg, seed + 1000 * i)
    return out
