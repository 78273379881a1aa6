"""Synthetic labeled images for desk-scale adaptation runs.

Four full-image texture classes, separated by dominant spatial
frequency:

    0  blobs       smooth random bumps (low frequency)
    1  grid        square line grid (mid frequency)
    2  stripes     fine diagonal grating (high frequency)
    3  checker     2-3 px checkerboard (highest frequency)

Telling classes 2 and 3 apart requires high-frequency content -- the
first thing a low-rate codec discards -- so task accuracy on
reconstructions depends directly on which spectral bands survive.
Fully deterministic given (n, seed, size).
"""

import numpy as np

from .errors import ConfigError

NUM_CLASSES = 4


def _pattern(rng, label, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if label == 0:
        pat = np.zeros((size, size))
        for _ in range(3):
            cy, cx = rng.uniform(0, size, 2)
            s = rng.uniform(size / 6.0, size / 3.0)
            pat += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        pat /= max(pat.max(), 1e-9)
    elif label == 1:
        period = int(rng.integers(size // 8, size // 5))
        phase = int(rng.integers(0, period))
        t = max(1, period // 4)
        pat = (((yy + phase) % period < t) |
               ((xx + phase) % period < t)).astype(np.float64)
    elif label == 2:
        period = rng.uniform(3.0, 6.0)
        theta = rng.uniform(0.6, 1.0) * rng.choice([-1.0, 1.0])
        wave = (xx * np.cos(theta) + yy * np.sin(theta)) / period
        pat = (np.sin(2 * np.pi * wave) > 0).astype(np.float64)
    else:
        cell = int(rng.integers(2, 4))
        pat = (((yy // cell + xx // cell) % 2) == 0).astype(np.float64)
    return pat


def _render(rng, label, size):
    pat = _pattern(rng, label, size)
    tint = rng.uniform(0.15, 0.55, (3, 1, 1))
    amp = rng.uniform(0.35, 0.45, (3, 1, 1))
    img = tint + amp * pat[None]
    img += rng.normal(0.0, 0.03, img.shape)
    return np.clip(img, 0.0, 1.0)


def make_dataset(n, seed, size=64):
    """n images (n,3,size,size) in [0,1] with labels cycling the classes."""
    if n <= 0 or size < 16:
        raise ConfigError("need n > 0 and size >= 16")
    rng = np.random.default_rng(seed)
    x = np.empty((n, 3, size, size))
    y = np.empty(n, dtype=np.int64)
    for i in range(n):
        y[i] = i % NUM_CLASSES
        x[i] = _render(rng, y[i], size)
    perm = rng.permutation(n)
    return x[perm], y[perm]


def iter_batches(x, y, batch_size, seed, shuffle=True):
    """Deterministic batch iterator; drops no samples (last may be short)."""
    if batch_size <= 0:
        raise ConfigError("batch_size must be positive")
    idx = np.arange(len(x))
    if shuffle:
        np.random.default_rng(seed).shuffle(idx)
    for start in range(0, len(x), batch_size):
        take = idx[start:start + batch_size]
        yield x[take], y[take]
