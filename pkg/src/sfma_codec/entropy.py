"""Likelihood models and rate estimation for quantized latents.

Latent symbols are modeled as integer-binned conditional Gaussians whose
(mu, sigma) come from the hyper-decoder; hyper-latent symbols use a
per-channel factorized logistic prior.  Both produce information content
in bits; `estimate_rate` folds them into bits-per-pixel.

The likelihood floor keeps -log2(p) finite in deep tails without hiding
the true cost of outliers: at 2^-50 a flushed probability still reports
50 bits.  The coarser coder-table floor lives in `rangecoder`.
"""

import numpy as np

from . import autodiff as ad
from .codec import SIGMA_MIN
from .errors import ConfigError

LIKELIHOOD_FLOOR = 2.0 ** -50
SCALE_MIN = 1e-2


class EntropyParameters:
    """Per-element conditional Gaussian parameters (mu, sigma).

    Thin pair container; shapes must match and sigma must sit at or above
    SIGMA_MIN (the hyper-decoder's lower bound).
    """

    __slots__ = ("mu", "sigma")

    def __init__(self, mu, sigma):
        mu = ad.as_var(mu)
        sigma = ad.as_var(sigma)
        if mu.shape != sigma.shape:
            raise ConfigError(
                f"mu shape {mu.shape} != sigma shape {sigma.shape}")
        # tolerance only for float noise on the bound itself
        if np.min(sigma.data) < SIGMA_MIN - 1e-9:
            raise ConfigError(
                f"sigma below floor: min {np.min(sigma.data):.6g} < {SIGMA_MIN}")
        self.mu = mu
        self.sigma = sigma

    @property
    def shape(self):
        return self.mu.shape


def gaussian_bits(y_hat, params):
    """Information content of each element of y_hat, in bits.

    p = Phi((0.5 - |d|) / sigma) - Phi((-0.5 - |d|) / sigma),  d = y - mu.

    The |d| form is algebraically identical to the usual interval
    probability and makes bits(mu + d) == bits(mu - d) exact in floats.
    Probabilities are floored at LIKELIHOOD_FLOOR.  Returns a Var shaped
    like y_hat; differentiable in y_hat, mu and sigma.
    """
    y = ad.as_var(y_hat)
    if not isinstance(params, EntropyParameters):
        raise ConfigError("params must be EntropyParameters")
    if y.shape != params.shape:
        raise ConfigError(
            f"y_hat shape {y.shape} != params shape {params.shape}")
    a = ad.abs_(y - params.mu)
    hi = ad.ndtr((0.5 - a) / params.sigma)
    lo = ad.ndtr((-0.5 - a) / params.sigma)
    p = ad.lower_bound(hi - lo, LIKELIHOOD_FLOOR)
    return -ad.log2(p)


class FactorizedPrior:
    """Per-channel logistic prior over the quantized hyper-latent.

    Each channel c has a location loc[c] and a positive scale
    exp(log_scale[c]) (floored at SCALE_MIN).  Integer-bin probability:

        p(k) = sig((k + 0.5 - loc)/s) - sig((k - 0.5 - loc)/s)

    evaluated in the symmetric |k - loc| form for exact +-d symmetry.
    Parameters are trainable during base-codec pretraining and frozen
    afterwards.
    """

    def __init__(self, channels):
        if channels < 1:
            raise ConfigError(f"channels must be >= 1, got {channels}")
        self.channels = int(channels)
        self.loc = ad.Var(np.zeros(self.channels))
        self.log_scale = ad.Var(np.zeros(self.channels))

    def set_trainable(self, flag):
        self.loc.requires_grad = bool(flag)
        self.log_scale.requires_grad = bool(flag)

    def params(self):
        return [("prior_loc", self.loc), ("prior_log_scale", self.log_scale)]

    def scale(self):
        return ad.lower_bound(ad.exp(self.log_scale), SCALE_MIN)

    def _broadcast(self):
        # channel axis is -3 for (C,h,w) and (B,C,h,w) alike
        shape = (self.channels, 1, 1)
        loc = ad.reshape(self.loc, shape)
        s = ad.reshape(self.scale(), shape)
        return loc, s

    def bits(self, z_hat):
        """Per-element information content of z_hat in bits (Var)."""
        z = ad.as_var(z_hat)
        if z.ndim < 3 or z.shape[-3] != self.channels:
            raise ConfigError(
                f"z_hat must have {self.channels} channels on axis -3, "
                f"got shape {z.shape}")
        loc, s = self._broadcast()
        a = ad.abs_(z - loc)
        p = ad.sigmoid((0.5 - a) / s) - ad.sigmoid((-0.5 - a) / s)
        p = ad.lower_bound(p, LIKELIHOOD_FLOOR)
        return -ad.log2(p)

    def channel_params(self):
        """(loc, scale) as plain per-channel arrays (for coder tables)."""
        with ad.no_grad():
            return self.loc.data.copy(), self.scale().data.copy()


def factorized_bits(z_hat, prior):
    """Alias mirroring gaussian_bits for the hyper path."""
    return prior.bits(z_hat)


def estimate_rate(y_hat, params, z_hat, prior, pixel_count):
    """Total estimated bits-per-pixel for one image (or batch).

    pixel_count is the number of *image* pixels the latents describe
    (H * W of the padded input, times batch size if batched).
    """
    if pixel_count <= 0:
        raise ConfigError(f"pixel_count must be positive, got {pixel_count}")
    total = ad.sum_(gaussian_bits(y_hat, params)) + \
        ad.sum_(factorized_bits(z_hat, prior))
    return total / float(pixel_count)
