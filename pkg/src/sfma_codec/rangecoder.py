"""Bit-exact carry-less range coder with per-element frequency tables.

32-bit state, 16-bit probability precision, byte-wise renormalization
with the classic carry-less underflow fix.  Every element of a latent
tensor gets its own integer CDF built from its predicted distribution:
Gaussian (mu, sigma) for the latent, logistic (loc, scale) for the
hyper-latent.  Coding support is clipped to roughly +-16 sigma around a
rounded center; the final symbol of every table is an escape, after
which the raw value follows as two uniform 16-bit words (a 32-bit
two's-complement integer).

Frequency assembly is floor-based apportionment of the floored
probabilities onto a 2^16 total: with at most 16385 bins the normalizer
Z stays below 1.5004, so every bin's scaled mass exceeds 1.33 and the
floor never produces a zero frequency; the remaining deficit is
non-negative and goes to the largest bin.  The construction is
loop-free and uses only IEEE-754 double ops in a fixed order, so numba
and pure-python builds emit identical tables and identical bytes.
"""

import math
from collections import namedtuple

import numpy as np

from .backend import BACKEND
from .errors import CoderError, StreamError

TOT = 1 << 16
TOP = 1 << 24
BOTTOM = 1 << 16
MASK = 0xFFFFFFFF
ESC_FREQ = 2
TABLE_FLOOR = 2.0 ** -15
MAX_HALFWIDTH = 8192
_INV_SQRT2 = 1.0 / math.sqrt(2.0)

CodingTables = namedtuple("CodingTables", ["lo", "ptr", "cdf"])


# probability mass helpers (tail-stable) ---------------------------------

def _gauss_mass(k, mu, sigma):
    dl = (k - 0.5 - mu) / sigma
    dh = (k + 0.5 - mu) / sigma
    if dl >= 0.0:
        return 0.5 * (math.erfc(dl * _INV_SQRT2) - math.erfc(dh * _INV_SQRT2))
    if dh <= 0.0:
        return 0.5 * (math.erfc(-dh * _INV_SQRT2) - math.erfc(-dl * _INV_SQRT2))
    return 0.5 * (math.erf(dh * _INV_SQRT2) - math.erf(dl * _INV_SQRT2))


def _logi_mass(k, loc, s):
    lo = (k - 0.5 - loc) / s
    hi = (k + 0.5 - loc) / s
    if lo >= 0.0:
        return 1.0 / (1.0 + math.exp(min(lo, 700.0))) - \
            1.0 / (1.0 + math.exp(min(hi, 700.0)))
    return 1.0 / (1.0 + math.exp(min(-hi, 700.0))) - \
        1.0 / (1.0 + math.exp(min(-lo, 700.0)))


def _round_away(x):
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0.0 else -1)


# table construction (pure python) ---------------------------------------

def _halfwidth(spread, factor, extra):
    hw = int(math.ceil(factor * spread)) + extra
    if hw < 1:
        hw = 1
    if hw > MAX_HALFWIDTH:
        hw = MAX_HALFWIDTH
    return hw


def _fill_segment(cdf, base, lo_k, nvals, a, b, kind):
    # pass 1: floored masses
    w = np.empty(nvals)
    for j in range(nvals):
        k = float(lo_k + j)
        p = _gauss_mass(k, a, b) if kind == 0 else _logi_mass(k, a, b)
        if p < TABLE_FLOOR:
            p = TABLE_FLOOR
        w[j] = p
    z = 0.0
    for j in range(nvals):
        z += w[j]
    # pass 2: floor apportionment onto TOT - ESC_FREQ
    target = TOT - ESC_FREQ
    total = 0
    fmax = -1
    jmax = 0
    for j in range(nvals):
        f = int(math.floor(w[j] * target / z))
        cdf[base + 1 + j] = f   # stash freq, prefix-sum later
        total += f
        if f > fmax:
            fmax = f
            jmax = j
    cdf[base + 1 + jmax] += target - total
    # pass 3: freqs -> cdf, escape last
    cdf[base] = 0
    acc = 0
    for j in range(nvals):
        acc += cdf[base + 1 + j]
        cdf[base + 1 + j] = acc
    cdf[base + 1 + nvals] = TOT


def _build_tables_py(a, b, kind, factor, extra):
    a = np.ascontiguousarray(a, dtype=np.float64).ravel()
    b = np.ascontiguousarray(b, dtype=np.float64).ravel()
    n = a.size
    lo = np.empty(n, dtype=np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    hws = np.empty(n, dtype=np.int64)
    for i in range(n):
        hw = _halfwidth(b[i], factor, extra)
        hws[i] = hw
        lo[i] = _round_away(a[i]) - hw
        ptr[i + 1] = ptr[i] + (2 * hw + 1) + 2
    cdf = np.zeros(ptr[-1], dtype=np.int64)
    for i in range(n):
        _fill_segment(cdf, ptr[i], lo[i], 2 * hws[i] + 1, a[i], b[i], kind)
    return CodingTables(lo, ptr, cdf)


# coding loops (pure python) ---------------------------------------------

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


def _encode_py(symbols, lo, ptr, cdf, out):
    low, rng, pos = 0, MASK, 0
    for i in range(symbols.shape[0]):
        base = int(ptr[i])
        nsym = int(ptr[i + 1]) - base - 1
        esc = nsym - 1
        idx = int(symbols[i]) - int(lo[i])
        if idx < 0 or idx >= esc:
            idx = esc
        cum = int(cdf[base + idx])
        f = int(cdf[base + idx + 1]) - cum
        pos, low, rng = _enc_step(out, pos, low, rng, cum, f)
        if idx == esc:
            u = int(symbols[i]) & MASK
            pos, low, rng = _enc_step(out, pos, low, rng, (u >> 16) & 0xFFFF, 1)
            pos, low, rng = _enc_step(out, pos, low, rng, u & 0xFFFF, 1)
    for _ in range(4):
        out[pos] = (low >> 24) & 0xFF
        pos += 1
        low = (low << 8) & MASK
    return pos


def _dec_step(payload, ppos, low, rng, state, cum, f):
    rng //= TOT
    low += cum * rng
    rng *= f
    while ((low ^ (low + rng)) < TOP) or (rng < BOTTOM):
        if (low ^ (low + rng)) >= TOP:
            rng = (MASK + 1 - low) & (BOTTOM - 1)
        if ppos >= payload.shape[0]:
            return -1, low, rng, state
        state = ((state << 8) | int(payload[ppos])) & MASK
        ppos += 1
        low = (low << 8) & MASK
        rng <<= 8
    return ppos, low, rng, state


def _read_value(payload, ppos, low, rng, state):
    v = (state - low) // (rng // TOT)
    if v > TOT - 1:
        v = TOT - 1
    return v


def _decode_py(payload, lo, ptr, cdf, out_syms):
    if payload.shape[0] < 4:
        return 1
    low, rng, state, ppos = 0, MASK, 0, 0
    for _ in range(4):
        state = (state << 8) | int(payload[ppos])
        ppos += 1
    for i in range(out_syms.shape[0]):
        base = int(ptr[i])
        nsym = int(ptr[i + 1]) - base - 1
        esc = nsym - 1
        v = _read_value(payload, ppos, low, rng, state)
        s_lo, s_hi = 0, nsym
        while s_hi - s_lo > 1:
            mid = (s_lo + s_hi) // 2
            if int(cdf[base + mid]) <= v:
                s_lo = mid
            else:
                s_hi = mid
        s = s_lo
        cum = int(cdf[base + s])
        f = int(cdf[base + s + 1]) - cum
        ppos, low, rng, state = _dec_step(payload, ppos, low, rng, state, cum, f)
        if ppos < 0:
            return 1
        if s == esc:
            words = [0, 0]
            for t in range(2):
                w = _read_value(payload, ppos, low, rng, state)
                ppos, low, rng, state = _dec_step(
                    payload, ppos, low, rng, state, w, 1)
                if ppos < 0:
                    return 1
                words[t] = w
            val = (words[0] << 16) | words[1]
            if val >= 1 << 31:
                val -= 1 << 32
            out_syms[i] = val
        else:
            out_syms[i] = int(lo[i]) + s
    return 0


# backend dispatch -------------------------------------------------------

if BACKEND == "numba":
    from . import _rangecoder_numba as _impl

    def _build_tables(a, b, kind, factor, extra):
        a = np.ascontiguousarray(a, dtype=np.float64).ravel()
        b = np.ascontiguousarray(b, dtype=np.float64).ravel()
        lo, ptr, cdf = _impl.build_tables(a, b, kind, factor, extra)
        return CodingTables(lo, ptr, cdf)

    def _encode(symbols, lo, ptr, cdf, out):
        return _impl.encode(symbols, lo, ptr, cdf, out)

    def _decode(payload, lo, ptr, cdf, out_syms):
        return _impl.decode(payload, lo, ptr, cdf, out_syms)
else:
    _build_tables = _build_tables_py
    _encode = _encode_py
    _decode = _decode_py


# public API -------------------------------------------------------------

def build_gaussian_tables(mu, sigma):
    """Integer CDF tables for per-element Gaussians; support ~ +-16 sigma."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise CoderError("mu/sigma shape mismatch")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise CoderError("non-finite distribution parameters")
    if np.any(sigma <= 0.0):
        raise CoderError("sigma must be positive")
    return _build_tables(mu, sigma, 0, 16.0, 0)


def build_logistic_tables(loc, scale):
    """Integer CDF tables for per-element logistics; support ~ +-24 scale."""
    loc = np.asarray(loc, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if loc.shape != scale.shape:
        raise CoderError("loc/scale shape mismatch")
    if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(scale))):
        raise CoderError("non-finite distribution parameters")
    if np.any(scale <= 0.0):
        raise CoderError("scale must be positive")
    return _build_tables(loc, scale, 1, 24.0, 2)


def _validate_tables(tables):
    lo, ptr, cdf = tables
    lo = np.asarray(lo, dtype=np.int64)
    ptr = np.asarray(ptr, dtype=np.int64)
    cdf = np.asarray(cdf, dtype=np.int64)
    n = lo.shape[0]
    if ptr.shape[0] != n + 1 or ptr[0] != 0 or cdf.shape[0] != ptr[-1]:
        raise CoderError("table layout mismatch")
    seg = np.diff(ptr)
    if np.any(seg < 3):   # at least one value bin + escape + sentinel
        raise CoderError("table segment too short")
    if np.any(cdf[ptr[:-1]] != 0) or np.any(cdf[ptr[1:] - 1] != TOT):
        raise CoderError("cdf endpoints must span [0, 2^16]")
    d = np.diff(cdf)
    # segment joints legitimately drop from TOT back to 0
    joints = ptr[1:-1] - 1
    inner = np.ones(d.shape[0], dtype=bool)
    inner[joints] = False
    if np.any(d[inner] < 1):
        raise CoderError("cdf must be strictly increasing within a segment")
    return lo, ptr, cdf


def range_encode(symbols, tables):
    """Encode one integer symbol per table entry; returns payload bytes."""
    lo, ptr, cdf = _validate_tables(tables)
    symbols = np.ascontiguousarray(symbols, dtype=np.int64).ravel()
    if symbols.shape[0] != lo.shape[0]:
        raise CoderError(
            f"{symbols.shape[0]} symbols for {lo.shape[0]} tables")
    if np.any(np.abs(symbols) >= 1 << 31):
        raise CoderError("symbol outside 32-bit escape range")
    out = np.zeros(8 * symbols.shape[0] + 64, dtype=np.uint8)
    pos = _encode(symbols, lo, ptr, cdf, out)
    return bytes(out[:pos])


def range_decode(payload, tables, count):
    """Decode `count` symbols; count must match the table count."""
    lo, ptr, cdf = _validate_tables(tables)
    count = int(count)
    if count != lo.shape[0]:
        raise CoderError(f"count {count} != table count {lo.shape[0]}")
    buf = np.frombuffer(bytes(payload), dtype=np.uint8)
    out_syms = np.zeros(count, dtype=np.int64)
    status = _decode(buf, lo, ptr, cdf, out_syms)
    if status != 0:
        raise StreamError("payload truncated")
    return out_syms


def table_bits(tables, symbols):
    """Exact bit cost the tables assign to each symbol (escape included).

    Diagnostic mirror of the coder's own cost model: -log2(freq/2^16),
    plus 32 bits of raw words after an escape.
    """
    lo, ptr, cdf = _validate_tables(tables)
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    bits = np.empty(symbols.shape[0])
    for i in range(symbols.shape[0]):
        base = int(ptr[i])
        nsym = int(ptr[i + 1]) - base - 1
        esc = nsym - 1
        idx = int(symbols[i]) - int(lo[i])
        if idx < 0 or idx >= esc:
            bits[i] = -math.log2(ESC_FREQ / TOT) + 32.0
        else:
            f = int(cdf[base + idx + 1]) - int(cdf[base + idx])
            bits[i] = -math.log2(f / TOT)
    return bits
