"""Two-layer (base + enhancement) latent coding.

A small convolutional head maps the latent's entropy parameters
(mu, sigma) to per-element keep/drop logits.  During training the mask
is sampled with hard Gumbel-Softmax (straight-through); at coding time
it is the deterministic argmax, so encoder and decoder recompute the
identical mask from the decoded hyper-latent and no mask bits are
transmitted.  The base layer is mask * y_hat and is decoded through
decoder-side adapters; the full latent decodes through the untouched
base codec.
"""

import numpy as np

from . import autodiff as ad
from .codec import synthesize
from .entropy import EntropyParameters, factorized_bits, gaussian_bits
from .errors import ConfigError, NumericError

MASK_MODES = ("HARD_ST", "EVAL")


class MaskGenerator:
    """3-conv head: concat(mu, sigma) (2M ch) -> keep/drop logits (2M ch).

    Output channels [0:M] are keep logits, [M:2M] drop logits for the
    corresponding latent element.
    """

    def __init__(self, m_channels, hidden=32, temperature=1.0, seed=0):
        if m_channels < 1 or hidden < 1:
            raise ConfigError("mask generator widths must be positive")
        if temperature <= 0.0:
            raise ConfigError(f"temperature must be > 0, got {temperature}")
        self.m_channels = int(m_channels)
        self.hidden = int(hidden)
        self.temperature = float(temperature)
        rng = np.random.default_rng(seed)
        m, h = self.m_channels, self.hidden

        def conv(cout, cin, k):
            w = rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)),
                           size=(cout, cin, k, k))
            return ad.Var(w), ad.Var(np.zeros(cout))

        t = {}
        t["mg0_w"], t["mg0_b"] = conv(h, 2 * m, 3)
        t["mg1_w"], t["mg1_b"] = conv(h, h, 3)
        t["mg2_w"], t["mg2_b"] = conv(2 * m, h, 3)
        self.tensors = t

    def items(self):
        return self.tensors.items()

    def num_params(self):
        return sum(v.data.size for v in self.tensors.values())

    def set_trainable(self, flag):
        for v in self.tensors.values():
            v.requires_grad = bool(flag)
        return self

    def logits(self, params: EntropyParameters):
        """(keep, drop) logit Vars shaped like the latent."""
        mu, sigma = ad.as_var(params.mu), ad.as_var(params.sigma)
        squeeze = mu.ndim == 3
        if squeeze:
            mu = ad.reshape(mu, (1,) + mu.shape)
            sigma = ad.reshape(sigma, (1,) + sigma.shape)
        if mu.shape[1] != self.m_channels:
            raise ConfigError(
                f"mask generator built for {self.m_channels} channels, "
                f"latent has {mu.shape[1]}")
        t = self.tensors
        h = ad.concat([mu, sigma], 1)
        h = ad.relu(ad.conv2d(h, t["mg0_w"], t["mg0_b"], stride=1, padding=1))
        h = ad.relu(ad.conv2d(h, t["mg1_w"], t["mg1_b"], stride=1, padding=1))
        h = ad.conv2d(h, t["mg2_w"], t["mg2_b"], stride=1, padding=1)
        m = self.m_channels
        keep = ad.narrow(h, 1, 0, m)
        drop = ad.narrow(h, 1, m, m)
        if squeeze:
            keep = ad.reshape(keep, keep.shape[1:])
            drop = ad.reshape(drop, drop.shape[1:])
        return keep, drop


def generate_mask(params, gen: MaskGenerator, mode, seed=0):
    """Binary keep-mask over latent elements.

    HARD_ST: hard Gumbel-Softmax sample; forward values are exactly
    {0,1}, backward follows the soft two-class softmax at the
    generator's temperature.  EVAL: deterministic argmax, no noise,
    no gradient.
    """
    if mode not in MASK_MODES:
        raise ConfigError(f"mask mode must be one of {MASK_MODES}")
    if gen.temperature <= 0.0:
        raise ConfigError("temperature must be > 0")
    keep, drop = gen.logits(params)
    if mode == "EVAL":
        return ad.Var((keep.data >= drop.data).astype(np.float64))
    rng = np.random.default_rng(seed)
    u = rng.random((2,) + keep.shape)
    g = -np.log(-np.log(np.clip(u, 1e-12, 1.0 - 1e-12)))
    delta = (keep + ad.Var(g[0])) - (drop + ad.Var(g[1]))
    soft = ad.sigmoid(delta / gen.temperature)
    hard = (soft.data > 0.5).astype(np.float64)
    return ad.replace_forward(soft, hard)


def split_latent(y_hat, mask):
    """(base y1, enhancement residual): y1 = mask * y, residual = rest."""
    y = ad.as_var(y_hat)
    m = ad.as_var(mask)
    if m.shape != y.shape:
        raise ConfigError(f"mask shape {m.shape} != latent shape {y.shape}")
    base = y * m
    residual = y * (1.0 - m)
    if not isinstance(y_hat, ad.Var):
        return base.data, residual.data
    return base, residual


def decode_base(y1, codec, adapters, placement=None):
    """Base-layer latent -> machine-vision image via decoder-side adapters."""
    return synthesize(y1, codec, adapters, placement)


def decode_full(y_hat, codec):
    """Full latent -> human-vision image; exactly the frozen base decode."""
    return synthesize(y_hat, codec, None, None)


def base_layer_bits(y_hat, params, mask):
    """Estimated content bits of the base layer: sum over kept elements.

    Masked-out positions are skipped by the base stream, so they cost
    nothing here; this is the quantity the coding invariants (base <=
    full, monotonicity in the mask) hold for exactly.
    """
    bits = gaussian_bits(y_hat, params)
    return ad.sum_(bits * ad.as_var(mask))


def train_scalable(batch, codec, prior, mask_gen, adapters, task_model,
                   lam, optimizer, placement=None, seed=0):
    """One optimization step of mask generator + decoder adapters.

    Loss = base-layer rate (kept-element latent bits + hyper bits, per
    pixel) + lam * task distortion of the base reconstruction.  The base
    codec and task model stay frozen; the encoder path runs without
    adapters (decoder-side placement only).
    """
    from .codec import analyze, hyper_analyze, hyper_synthesize, quantize
    from .training import perceptual_distortion

    x = ad.Var(np.asarray(batch, dtype=np.float64))
    if x.ndim != 4:
        raise ConfigError("batch must be (B,3,H,W)")
    B, _, H, W = x.shape
    # frozen analysis transform: no gradient bookkeeping needed
    with ad.no_grad():
        y = analyze(x, codec, None, placement)
        z = hyper_analyze(y, codec, None, placement)
    z_noise = quantize(z, "NOISE", seed=seed)
    mu, sigma = hyper_synthesize(z_noise, codec,
                                 latent_hw=y.data.shape[-2:],
                                 placement=placement)
    params = EntropyParameters(mu, sigma)
    mask = generate_mask(params, mask_gen, "HARD_ST", seed=seed + 1)
    y_noise = quantize(y, "NOISE", seed=seed + 2)
    y_ste = quantize(y, "STE")
    base, _ = split_latent(y_ste, mask)
    recon = synthesize(base, codec, adapters, placement, clamp=False)

    pixels = float(B * H * W)
    rate = (ad.sum_(gaussian_bits(y_noise, params) * mask) +
            ad.sum_(factorized_bits(z_noise, prior))) / pixels
    dist = perceptual_distortion(x, recon, task_model)
    loss = rate + dist * float(lam)
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("non-finite scalable loss")
    loss.backward()
    optimizer.step()
    return {"loss": float(loss.data), "rate": float(rate.data),
            "distortion": float(dist.data),
            "mask_density": float(np.mean(mask.data))}
