"""Numba-JIT convolution kernels.

Signatures mirror _kernels_numpy exactly.  prange iterations each own a
disjoint output slice, so results are deterministic and bit-identical to
serial execution (no fastmath, no reductions across threads).
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def conv2d_fwd(xp, w, stride):
    B, C, Hp, Wp = xp.shape
    O, _, kh, kw = w.shape
    oh = (Hp - kh) // stride + 1
    ow = (Wp - kw) // stride + 1
    y = np.zeros((B, O, oh, ow))
    for bo in prange(B * O):
        b = bo // O
        o = bo % O
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for c in range(C):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += xp[b, c, i * stride + di, j * stride + dj] * w[o, c, di, dj]
                y[b, o, i, j] = acc
    return y


@njit(cache=True, parallel=True)
def conv2d_bwd_x(gy, w, stride, Hp, Wp):
    B, O, oh, ow = gy.shape
    _, C, kh, kw = w.shape
    gx = np.zeros((B, C, Hp, Wp))
    for bc in prange(B * C):
        b = bc // C
        c = bc % C
        for o in range(O):
            for i in range(oh):
                for j in range(ow):
                    g = gy[b, o, i, j]
                    for di in range(kh):
                        for dj in range(kw):
                            gx[b, c, i * stride + di, j * stride + dj] += g * w[o, c, di, dj]
    return gx


@njit(cache=True, parallel=True)
def conv2d_bwd_w(xp, gy, stride, kh, kw):
    B, C, Hp, Wp = xp.shape
    _, O, oh, ow = gy.shape
    gw = np.zeros((O, C, kh, kw))
    for oc in prange(O * C):
        o = oc // C
        c = oc % C
        for di in range(kh):
            for dj in range(kw):
                acc = 0.0
                for b in range(B):
                    for i in range(oh):
                        for j in range(ow):
                            acc += gy[b, o, i, j] * xp[b, c, i * stride + di, j * stride + dj]
                gw[o, c, di, dj] = acc
    return gw


@njit(cache=True, parallel=True)
def dwconv2d_fwd(xp, w):
    B, C, Hp, Wp = xp.shape
    kh, kw = w.shape[1], w.shape[2]
    oh = Hp - kh + 1
    ow = Wp - kw + 1
    y = np.zeros((B, C, oh, ow))
    for bc in prange(B * C):
        b = bc // C
        c = bc % C
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for di in range(kh):
                    for dj in range(kw):
                        acc += xp[b, c, i + di, j + dj] * w[c, di, dj]
                y[b, c, i, j] = acc
    return y


@njit(cache=True, parallel=True)
def dwconv2d_bwd_x(gy, w, Hp, Wp):
    B, C, oh, ow = gy.shape
    kh, kw = w.shape[1], w.shape[2]
    gx = np.zeros((B, C, Hp, Wp))
    for bc in prange(B * C):
        b = bc // C
        c = bc % C
        for i in range(oh):
            for j in range(ow):
                g = gy[b, c, i, j]
                for di in range(kh):
                    for dj in range(kw):
                        gx[b, c, i + di, j + dj] += g * w[c, di, dj]
    return gx


@njit(cache=True, parallel=True)
def dwconv2d_bwd_w(xp, gy, kh, kw):
    B, C, oh, ow = gy.shape
    gw = np.zeros((C, kh, kw))
    for c in prange(C):
        for di in range(kh):
            for dj in range(kw):
                acc = 0.0
                for b in range(B):
                    for i in range(oh):
                        for j in range(ow):
                            acc += xp[b, c, i + di, j + dj] * gy[b, c, i, j]
                gw[c, di, dj] = acc
    return gw
