"""Brute-force DFT oracles shared by adapter and analysis tests.

Everything here is computed by direct O(N^2)-per-frequency summation,
independent of any FFT library, so it can serve as ground truth for the
transform-based code paths.
"""

import numpy as np


def naive_rfft2(x):
    """Direct-sum half-spectrum 2-D DFT of (..., H, W) real input."""
    H, W = x.shape[-2:]
    Wh = W // 2 + 1
    out = np.zeros(x.shape[:-2] + (H, Wh), dtype=np.complex128)
    for r in range(H):
        for c in range(Wh):
            acc = np.zeros(x.shape[:-2], dtype=np.complex128)
            for u in range(H):
                for v in range(W):
                    acc = acc + x[..., u, v] * np.exp(-2j * np.pi * (r * u / H + c * v / W))
            out[..., r, c] = acc
    return out


def naive_irfft2(spec, H, W):
    """Direct-sum inverse of the half-spectrum transform.

    Mirrors the library semantics: a full complex inverse DFT along the
    row axis first, then a real inverse along the last axis that uses only
    the real part of the self-conjugate bins (0 and, for even W, W/2).
    """
    Wh = spec.shape[-1]
    T = np.zeros_like(spec)
    for n in range(H):
        for r in range(H):
            T[..., n, :] += spec[..., r, :] * np.exp(2j * np.pi * r * n / H)
    T /= H
    out = np.zeros(spec.shape[:-2] + (H, W))
    for n in range(W):
        acc = np.zeros(spec.shape[:-2] + (H,))
        for c in range(Wh):
            ang = 2.0 * np.pi * c * n / W
            if c == 0 or (W % 2 == 0 and c == W // 2):
                acc = acc + T[..., c].real * np.cos(ang)
            else:
                acc = acc + 2.0 * (T[..., c].real * np.cos(ang) - T[..., c].imag * np.sin(ang))
        out[..., n] = acc / W
    return out


def naive_psd(x):
    """Mean-over-channels centered amplitude spectrum of (C, H, W)."""
    C, H, W = x.shape
    full = np.zeros((C, H, W), dtype=np.complex128)
    for r in range(H):
        for c in range(W):
            acc = np.zeros(C, dtype=np.complex128)
            for u in range(H):
                for v in range(W):
                    acc = acc + x[:, u, v] * np.exp(-2j * np.pi * (r * u / H + c * v / W))
            full[:, r, c] = acc
    amp = np.abs(full)
    # center DC: roll by floor(H/2), floor(W/2), matching fftshift
    amp = np.roll(amp, (H // 2, W // 2), axis=(1, 2))
    return amp.mean(axis=0)


def pointwise(x, w, b):
    """1x1 conv oracle; x (C,H,W), w (O,C,1,1), b (O,)."""
    return np.einsum('oc,chw->ohw', w[:, :, 0, 0], x) + b[:, None, None]


def depthwise_zero_pad(x, w, b):
    """Same-size depthwise conv oracle with zero padding; w (C,k,k)."""
    C, H, W = x.shape
    k = w.shape[1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    out = np.zeros_like(x)
    for c in range(C):
        for i in range(H):
            for j in range(W):
                out[c, i, j] = np.sum(xp[c, i:i + k, j:j + k] * w[c]) + b[c]
    return out


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def naive_fma(x, w):
    """Full FMA branch oracle on a (C, H, W) input, listing form."""
    H, W = x.shape[1:]
    t = w.tensors
    h = pointwise(x, t["fma_down"].data, t["fma_down_b"].data)
    spec = naive_rfft2(h)
    amp = np.abs(spec)
    m = depthwise_zero_pad(amp, t["fma_dw"].data, t["fma_dw_b"].data)
    m = pointwise(np.maximum(m, 0.0), t["fma_inter"].data, t["fma_inter_b"].data)
    gated = spec * sigmoid(m)
    z = naive_irfft2(gated, H, W)
    z = np.maximum(z, 0.0)
    return pointwise(z, t["fma_up"].data, t["fma_up_b"].data)
