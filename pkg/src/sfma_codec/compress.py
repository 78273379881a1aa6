"""End-to-end image <-> bitstream orchestration.

Encode: pad to a multiple of 16, run analysis + hyper-analysis, round
both latents, entropy-code the hyper-latent under the factorized prior
and the latent under per-element Gaussians predicted from the decoded
hyper-latent.  The (mu, sigma) grid is recomputed from the *quantized*
hyper-latent on both sides, so coder tables agree bitwise.

Modes:
  human     adapters never touch the pipeline
  machine   adapters applied at the configured insertion points
  scalable  encoder runs without adapters; the latent is split by a mask
            derived from (mu, sigma); base section codes only kept
            positions, enhancement codes the complement; the mask is not
            transmitted (both sides recompute it)

decompress() returns the mode's primary reconstruction: the plain image
for human, the adapter path for machine, and the base-layer machine
image for scalable (use scalable.decode_full for the human view).
"""

from collections import namedtuple

import numpy as np
from PIL import Image

from . import autodiff as ad
from . import bitstream as bs
from .codec import (
    DOWNSAMPLE,
    analyze,
    crop_to,
    hyper_analyze,
    hyper_synthesize,
    pad_to_multiple,
    quantize,
    synthesize,
)
from .errors import ConfigError, DataError
from .rangecoder import (
    build_gaussian_tables,
    build_logistic_tables,
    range_decode,
    range_encode,
)

MODE_HUMAN = bs.MODE_HUMAN
MODE_MACHINE = bs.MODE_MACHINE
MODE_SCALABLE = bs.MODE_SCALABLE

LatentBundle = namedtuple(
    "LatentBundle", ["y_hat", "z_hat", "mu", "sigma", "mask"])


def load_image(path):
    """PNG (or any PIL-readable raster) -> (3,H,W) float64 in [0,1]."""
    try:
        img = Image.open(path).convert("RGB")
    except Exception as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(path, img):
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    u8 = np.rint(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(u8, "RGB").save(path)


def to_uint8(img):
    return np.rint(np.clip(np.asarray(img), 0.0, 1.0) * 255.0).astype(np.uint8)


def _check_image(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise DataError(f"expected (3,H,W) image, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("image contains non-finite values")
    if x.min() < -1e-9 or x.max() > 1.0 + 1e-9:
        raise DataError("image values must lie in [0,1]")
    return x


def latent_hw(padded_hw):
    return (padded_hw[0] // DOWNSAMPLE, padded_hw[1] // DOWNSAMPLE)


def hyper_hw(lat_hw):
    # two k5/s2/p2 convs: each maps x -> ceil(x/2)
    h = -(-lat_hw[0] // 2)
    w = -(-lat_hw[1] // 2)
    return (-(-h // 2), -(-w // 2))


def _hyper_tables(prior, hw):
    loc, scale = prior.channel_params()
    n_spatial = hw[0] * hw[1]
    return build_logistic_tables(
        np.repeat(loc, n_spatial), np.repeat(scale, n_spatial))


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _mode_adapters(mode, adapters, mask_gen):
    """Per-mode adapter routing: (encoder side, decoder side)."""
    if mode == MODE_HUMAN:
        return None, None
    _require(adapters is not None, f"{mode} mode requires adapters")
    if mode == MODE_SCALABLE:
        _require(mask_gen is not None, "scalable mode requires a mask generator")
        return None, adapters   # decoder-side only
    return adapters, adapters


def _eval_mask(mask_gen, mu, sigma):
    # local import: scalable builds on this module for stream plumbing
    from .scalable import generate_mask
    from .entropy import EntropyParameters
    m = generate_mask(EntropyParameters(mu.data, sigma.data),
                      mask_gen, "EVAL")
    return m.data.astype(bool)


def compress(x, codec, adapters=None, placement=None, prior=None,
             mode=MODE_MACHINE, lambda_id=0, mask_gen=None):
    """Image (3,H,W) in [0,1] -> Bitstream."""
    _require(prior is not None, "compress requires the factorized prior")
    _require(mode in (MODE_HUMAN, MODE_MACHINE, MODE_SCALABLE),
             f"unknown mode {mode!r}")
    enc_adapt, _ = _mode_adapters(mode, adapters, mask_gen)
    x = _check_image(x)
    padded, orig = pad_to_multiple(x)
    with ad.no_grad():
        y = analyze(padded, codec, enc_adapt, placement)
        z = hyper_analyze(y, codec, enc_adapt, placement)
        z_hat = quantize(z.data, "ROUND")
        mu, sigma = hyper_synthesize(
            ad.Var(z_hat), codec, latent_hw=y.data.shape[-2:],
            adapters=enc_adapt, placement=placement)
        y_hat = quantize(y.data, "ROUND")

    hyp = _hyper_tables(prior, z_hat.shape[-2:])
    hyper_sec = range_encode(z_hat.astype(np.int64).ravel(), hyp)
    gauss_mu = mu.data.ravel()
    gauss_sigma = sigma.data.ravel()
    y_syms = y_hat.astype(np.int64).ravel()

    flags = 0
    if mode == MODE_SCALABLE:
        mask = _eval_mask(mask_gen, mu, sigma).ravel()
        keep = np.flatnonzero(mask)
        drop = np.flatnonzero(~mask)
        base_sec = range_encode(
            y_syms[keep],
            build_gaussian_tables(gauss_mu[keep], gauss_sigma[keep]))
        enh_sec = range_encode(
            y_syms[drop],
            build_gaussian_tables(gauss_mu[drop], gauss_sigma[drop]))
        sections = (hyper_sec, base_sec, enh_sec)
        flags = bs.FLAG_IMPLICIT_MASK
    else:
        latent_sec = range_encode(
            y_syms, build_gaussian_tables(gauss_mu, gauss_sigma))
        sections = (hyper_sec, latent_sec)

    H, W = padded.shape[-2:]
    return bs.Bitstream(mode, lambda_id, (H, W), orig, sections, flags=flags)


def decode_latents(stream, codec, adapters=None, prior=None,
                   placement=None, mask_gen=None):
    """Bitstream -> LatentBundle (exact integer latents plus (mu, sigma))."""
    if isinstance(stream, (bytes, bytearray)):
        stream = bs.parse(stream)
    _require(prior is not None, "decompress requires the factorized prior")
    enc_adapt, _ = _mode_adapters(stream.mode, adapters, mask_gen)
    lat = latent_hw(stream.padded_dims)
    hyp_dims = hyper_hw(lat)
    n = codec.config.n_channels
    m = codec.config.m_channels

    hyp_tables = _hyper_tables(prior, hyp_dims)
    z_syms = range_decode(stream.sections[0], hyp_tables,
                          n * hyp_dims[0] * hyp_dims[1])
    z_hat = z_syms.astype(np.float64).reshape(n, hyp_dims[0], hyp_dims[1])
    with ad.no_grad():
        mu, sigma = hyper_synthesize(
            ad.Var(z_hat), codec, latent_hw=lat,
            adapters=enc_adapt, placement=placement)

    gauss_mu = mu.data.ravel()
    gauss_sigma = sigma.data.ravel()
    count = m * lat[0] * lat[1]

    if stream.mode == MODE_SCALABLE:
        if not stream.flags & bs.FLAG_IMPLICIT_MASK:
            raise DataError("scalable stream without implicit-mask flag")
        mask = _eval_mask(mask_gen, mu, sigma).ravel()
        keep = np.flatnonzero(mask)
        drop = np.flatnonzero(~mask)
        y_syms = np.zeros(count, dtype=np.int64)
        y_syms[keep] = range_decode(
            stream.sections[1],
            build_gaussian_tables(gauss_mu[keep], gauss_sigma[keep]),
            keep.size)
        y_syms[drop] = range_decode(
            stream.sections[2],
            build_gaussian_tables(gauss_mu[drop], gauss_sigma[drop]),
            drop.size)
        mask_out = mask.reshape(m, lat[0], lat[1])
    else:
        y_syms = range_decode(
            stream.sections[1],
            build_gaussian_tables(gauss_mu, gauss_sigma), count)
        mask_out = None

    y_hat = y_syms.astype(np.float64).reshape(m, lat[0], lat[1])
    return LatentBundle(y_hat, z_hat, mu.data, sigma.data, mask_out)


def decompress(stream, codec, adapters=None, prior=None, placement=None,
               mask_gen=None):
    """Bitstream -> (3,H,W) image in [0,1] (mode's primary reconstruction)."""
    if isinstance(stream, (bytes, bytearray)):
        stream = bs.parse(stream)
    bundle = decode_latents(stream, codec, adapters=adapters, prior=prior,
                            placement=placement, mask_gen=mask_gen)
    _, dec_adapt = _mode_adapters(stream.mode, adapters, mask_gen)
    if stream.mode == MODE_SCALABLE:
        y = bundle.y_hat * bundle.mask   # base layer only
    else:
        y = bundle.y_hat
    with ad.no_grad():
        img = synthesize(ad.Var(y), codec, dec_adapt, placement)
    return crop_to(img.data, stream.original_dims)
