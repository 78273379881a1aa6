"""Numba-JIT range coder kernels.

Semantics mirror the pure-python loops in rangecoder.py line for line;
all state fits comfortably in int64 (intermediates stay below 2^33).
Table construction runs the identical sequence of IEEE-754 double ops,
so tables and payloads are bit-identical across backends.
"""

import math

import numpy as np
from numba import njit, prange

TOT = 1 << 16
TOP = 1 << 24
BOTTOM = 1 << 16
MASK = 0xFFFFFFFF
ESC_FREQ = 2
TABLE_FLOOR = 2.0 ** -15
MAX_HALFWIDTH = 8192
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@njit(cache=True)
def _gauss_mass(k, mu, sigma):
    dl = (k - 0.5 - mu) / sigma
    dh = (k + 0.5 - mu) / sigma
    if dl >= 0.0:
        return 0.5 * (math.erfc(dl * _INV_SQRT2) - math.erfc(dh * _INV_SQRT2))
    if dh <= 0.0:
        return 0.5 * (math.erfc(-dh * _INV_SQRT2) - math.erfc(-dl * _INV_SQRT2))
    return 0.5 * (math.erf(dh * _INV_SQRT2) - math.erf(dl * _INV_SQRT2))


@njit(cache=True)
def _logi_mass(k, loc, s):
    lo = (k - 0.5 - loc) / s
    hi = (k + 0.5 - loc) / s
    if lo >= 0.0:
        return 1.0 / (1.0 + math.exp(min(lo, 700.0))) - \
            1.0 / (1.0 + math.exp(min(hi, 700.0)))
    return 1.0 / (1.0 + math.exp(min(-hi, 700.0))) - \
        1.0 / (1.0 + math.exp(min(-lo, 700.0)))


@njit(cache=True)
def _fill_segment(cdf, base, lo_k, nvals, a, b, kind):
    w = np.empty(nvals)
    for j in range(nvals):
        k = float(lo_k + j)
        if kind == 0:
            p = _gauss_mass(k, a, b)
        else:
            p = _logi_mass(k, a, b)
        if p < TABLE_FLOOR:
            p = TABLE_FLOOR
        w[j] = p
    z = 0.0
    for j in range(nvals):
        z += w[j]
    target = TOT - ESC_FREQ
    total = 0
    fmax = -1
    jmax = 0
    for j in range(nvals):
        f = np.int64(math.floor(w[j] * target / z))
        cdf[base + 1 + j] = f
        total += f
        if f > fmax:
            fmax = f
            jmax = j
    cdf[base + 1 + jmax] += target - total
    cdf[base] = 0
    acc = np.int64(0)
    for j in range(nvals):
        acc += cdf[base + 1 + j]
        cdf[base + 1 + j] = acc
    cdf[base + 1 + nvals] = TOT


@njit(cache=True, parallel=True)
def build_tables(a, b, kind, factor, extra):
    n = a.shape[0]
    lo = np.empty(n, dtype=np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    hws = np.empty(n, dtype=np.int64)
    for i in range(n):
        hw = np.int64(math.ceil(factor * b[i])) + extra
        if hw < 1:
            hw = 1
        if hw > MAX_HALFWIDTH:
            hw = MAX_HALFWIDTH
        hws[i] = hw
        center = np.int64(math.floor(abs(a[i]) + 0.5))
        if a[i] < 0.0:
            center = -center
        lo[i] = center - hw
        ptr[i + 1] = ptr[i] + (2 * hw + 1) + 2
    cdf = np.zeros(ptr[-1], dtype=np.int64)
    for i in prange(n):
        _fill_segment(cdf, ptr[i], lo[i], 2 * hws[i] + 1, a[i], b[i], kind)
    return lo, ptr, cdf


@njit(cache=True)
def _enc_step(out, pos, low, rng, cum, f):
    rng //= TOT
    low += cum * rng
    rng *= f
    while ((low ^ (low + rng)) < TOP) or (rng < BOTTOM):
        if (low ^ (low + rng)) < TOP:
            out[pos] = (low >> 24) & 0xFF
            pos += 1
            low = (low << 8) & MASK
            rng <<= 8
            continue
        rng = (MASK + 1 - low) & (BOTTOM - 1)
        out[pos] = (low >> 24) & 0xFF
        pos += 1
        low = (low << 8) & MASK
        rng <<= 8
    return pos, low, rng


@njit(cache=True)
def encode(symbols, lo, ptr, cdf, out):
    low = np.int64(0)
    rng = np.int64(MASK)
    pos = np.int64(0)
    for i in range(symbols.shape[0]):
        base = ptr[i]
        nsym = ptr[i + 1] - base - 1
        esc = nsym - 1
        idx = symbols[i] - lo[i]
        if idx < 0 or idx >= esc:
            idx = esc
        cum = cdf[base + idx]
        f = cdf[base + idx + 1] - cum
        pos, low, rng = _enc_step(out, pos, low, rng, cum, f)
        if idx == esc:
            u = symbols[i] & MASK
            pos, low, rng = _enc_step(
                out, pos, low, rng, (u >> 16) & 0xFFFF, np.int64(1))
            pos, low, rng = _enc_step(
                out, pos, low, rng, u & 0xFFFF, np.int64(1))
    for _ in range(4):
        out[pos] = (low >> 24) & 0xFF
        pos += 1
        low = (low << 8) & MASK
    return pos


@njit(cache=True)
def _dec_step(payload, ppos, low, rng, state, cum, f):
    rng //= TOT
    low += cum * rng
    rng *= f
    while ((low ^ (low + rng)) < TOP) or (rng < BOTTOM):
        if (low ^ (low + rng)) >= TOP:
            rng = (MASK + 1 - low) & (BOTTOM - 1)
        if ppos >= payload.shape[0]:
            return np.int64(-1), low, rng, state
        state = ((state << 8) | np.int64(payload[ppos])) & MASK
        ppos += 1
        low = (low << 8) & MASK
        rng <<= 8
    return ppos, low, rng, state


@njit(cache=True)
def decode(payload, lo, ptr, cdf, out_syms):
    if payload.shape[0] < 4:
        return 1
    low = np.int64(0)
    rng = np.int64(MASK)
    state = np.int64(0)
    ppos = np.int64(0)
    for _ in range(4):
        state = (state << 8) | np.int64(payload[ppos])
        ppos += 1
    for i in range(out_syms.shape[0]):
        base = ptr[i]
        nsym = ptr[i + 1] - base - 1
        esc = nsym - 1
        v = (state - low) // (rng // TOT)
        if v > TOT - 1:
            v = TOT - 1
        s_lo = np.int64(0)
        s_hi = nsym
        while s_hi - s_lo > 1:
            mid = (s_lo + s_hi) // 2
            if cdf[base + mid] <= v:
                s_lo = mid
            else:
                s_hi = mid
        s = s_lo
        cum = cdf[base + s]
        f = cdf[base + s + 1] - cum
        ppos, low, rng, state = _dec_step(payload, ppos, low, rng, state, cum, f)
        if ppos < 0:
            return 1
        if s == esc:
            w1 = np.int64(0)
            w2 = np.int64(0)
            for t in range(2):
                w = (state - low) // (rng // TOT)
                if w > TOT - 1:
                    w = TOT - 1
                ppos, low, rng, state = _dec_step(
                    payload, ppos, low, rng, state, w, np.int64(1))
                if ppos < 0:
                    return 1
                if t == 0:
                    w1 = w
                else:
                    w2 = w
            val = (w1 << 16) | w2
            if val >= 1 << 31:
                val -= 1 << 32
            out_syms[i] = val
        else:
            out_syms[i] = lo[i] + s
    return 0
