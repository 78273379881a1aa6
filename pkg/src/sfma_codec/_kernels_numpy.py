"""Pure-numpy convolution kernels (fallback backend).

All kernels run "valid" correlations on pre-padded inputs; padding policy
lives in the autodiff wrappers.  Layout is (batch, channel, height, width),
float64 throughout.  The loops run over kernel taps only, so each iteration
is one BLAS-sized tensordot.
"""

import numpy as np


def conv2d_fwd(xp, w, stride):
    # xp: (B, C, Hp, Wp), w: (O, C, kh, kw) -> (B, O, oh, ow)
    B, C, Hp, Wp = xp.shape
    O, _, kh, kw = w.shape
    oh = (Hp - kh) // stride + 1
    ow = (Wp - kw) // stride + 1
    y = np.zeros((B, O, oh, ow))
    for di in range(kh):
        for dj in range(kw):
            xs = xp[:, :, di:di + stride * oh:stride, dj:dj + stride * ow:stride]
            y += np.tensordot(xs, w[:, :, di, dj], axes=([1], [1])).transpose(0, 3, 1, 2)
    return y


def conv2d_bwd_x(gy, w, stride, Hp, Wp):
    # gradient wrt the padded input
    B, O, oh, ow = gy.shape
    _, C, kh, kw = w.shape
    gx = np.zeros((B, C, Hp, Wp))
    for di in range(kh):
        for dj in range(kw):
            g = np.tensordot(gy, w[:, :, di, dj], axes=([1], [0])).transpose(0, 3, 1, 2)
            gx[:, :, di:di + stride * oh:stride, dj:dj + stride * ow:stride] += g
    return gx


def conv2d_bwd_w(xp, gy, stride, kh, kw):
    B, C, Hp, Wp = xp.shape
    _, O, oh, ow = gy.shape
    gw = np.empty((O, C, kh, kw))
    for di in range(kh):
        for dj in range(kw):
            xs = xp[:, :, di:di + stride * oh:stride, dj:dj + stride * ow:stride]
            gw[:, :, di, dj] = np.tensordot(gy, xs, axes=([0, 2, 3], [0, 2, 3]))
    return gw


def dwconv2d_fwd(xp, w):
    # depthwise, stride 1; w: (C, kh, kw)
    B, C, Hp, Wp = xp.shape
    kh, kw = w.shape[1:]
    oh, ow = Hp - kh + 1, Wp - kw + 1
    y = np.zeros((B, C, oh, ow))
    for di in range(kh):
        for dj in range(kw):
            y += xp[:, :, di:di + oh, dj:dj + ow] * w[None, :, di, dj, None, None]
    return y


def dwconv2d_bwd_x(gy, w, Hp, Wp):
    B, C, oh, ow = gy.shape
    kh, kw = w.shape[1:]
    gx = np.zeros((B, C, Hp, Wp))
    for di in range(kh):
        for dj in range(kw):
            gx[:, :, di:di + oh, dj:dj + ow] += gy * w[None, :, di, dj, None, None]
    return gx


def dwconv2d_bwd_w(xp, gy, kh, kw):
    B, C, oh, ow = gy.shape
    gw = np.empty((xp.shape[1], kh, kw))
    for di in range(kh):
        for dj in range(kw):
            gw[:, di, dj] = np.einsum('bchw,bchw->c', xp[:, :, di:di + oh, dj:dj + ow], gy)
    return gw
