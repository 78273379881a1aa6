"""Minimal reverse-mode autodiff over numpy float64 arrays.

Every operation used by the codec and adapters has a hand-written
backward; tests/test_autodiff.py checks each against central finite
differences.  Graphs are built eagerly; ``no_grad`` (or leaves with
``requires_grad=False`` everywhere) short-circuits graph construction so
inference paths pay no bookkeeping cost.
"""

import numpy as np
from scipy.special import ndtr as _ndtr

from . import backend as K

_GRAD_ENABLED = True

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_LN2 = np.log(2.0)


class no_grad:
    """Context manager disabling graph construction."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Var:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Var(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Var(self.data)

    def backward(self, seed=None):
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed needs a scalar output")
            seed = np.ones_like(self.data)
        order = _toposort(self)
        self.grad = np.asarray(seed, dtype=np.float64)
        for node in order:
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_var(other), self)

    def __pow__(self, p):
        return pow_(self, p)


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def _toposort(root):
    # iterative DFS post-order, reversed
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order[::-1]


def _accum(p, g):
    p.grad = g if p.grad is None else p.grad + g


def _make(data, parents, bwd):
    """Create an op node, or a constant leaf when no gradient is needed."""
    need = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Var(data, requires_grad=need)
    if need:
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


# elementwise ------------------------------------------------------------

def add(a, b):
    a, b = as_var(a), as_var(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b):
    a, b = as_var(a), as_var(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def div(a, b):
    a, b = as_var(a), as_var(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), bwd)


def pow_(a, p):
    a = as_var(a)
    p = float(p)
    out_data = a.data ** p

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * p * a.data ** (p - 1.0))

    return _make(out_data, (a,), bwd)


def exp(a):
    a = as_var(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * out_data)

    return _make(out_data, (a,), bwd)


def log(a):
    a = as_var(a)
    out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g / a.data)

    return _make(out_data, (a,), bwd)


def log2(a):
    return mul(log(a), 1.0 / _LN2)


def sqrt(a):
    a = as_var(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * 0.5 / out_data)

    return _make(out_data, (a,), bwd)


def relu(a):
    a = as_var(a)
    mask = a.data > 0.0
    out_data = np.where(mask, a.data, 0.0)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _make(out_data, (a,), bwd)


def sigmoid(a):
    a = as_var(a)
    # stable two-sided evaluation
    out_data = np.empty_like(a.data)
    pos = a.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out_data[~pos] = ez / (1.0 + ez)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


def abs_(a):
    a = as_var(a)
    out_data = np.abs(a.data)
    sign = np.sign(a.data)  # subgradient 0 at exactly 0

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * sign)

    return _make(out_data, (a,), bwd)


def ndtr(a):
    """Standard normal CDF."""
    a = as_var(a)
    out_data = _ndtr(a.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI)

    return _make(out_data, (a,), bwd)


def clip01(a):
    """Clamp to [0, 1]; gradient passes only inside the (closed) interval."""
    a = as_var(a)
    out_data = np.clip(a.data, 0.0, 1.0)
    mask = (a.data >= 0.0) & (a.data <= 1.0)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _make(out_data, (a,), bwd)


def lower_bound(a, bound):
    """max(a, bound) whose gradient also passes when pushing a upward.

    Gradient wrt a is kept where a >= bound or where descent would raise a
    (g < 0), so values pinned at the bound can recover during training.
    """
    a = as_var(a)
    bound = float(bound)
    out_data = np.maximum(a.data, bound)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * ((a.data >= bound) | (g < 0.0)))

    return _make(out_data, (a,), bwd)


def replace_forward(a, data):
    """Straight-through node: forward emits `data`, backward is identity to a."""
    a = as_var(a)
    data = np.asarray(data, dtype=np.float64)
    if data.shape != a.data.shape:
        raise ValueError("replace_forward needs matching shapes")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g)

    return _make(data, (a,), bwd)


# reductions / shaping ---------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = as_var(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out_data, (a,), bwd)


def mean_(a, axis=None, keepdims=False):
    a = as_var(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_var(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))

    return _make(out_data, (a,), bwd)


def transpose(a, axes):
    a = as_var(a)
    out_data = a.data.transpose(axes)
    inv = np.argsort(axes)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.transpose(inv))

    return _make(out_data, (a,), bwd)


def narrow(a, axis, start, length):
    """Slice `length` entries from `start` along `axis`."""
    a = as_var(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            gx = np.zeros_like(a.data)
            gx[idx] = g
            _accum(a, gx)

    return _make(out_data, (a,), bwd)


def concat(parts, axis):
    parts = [as_var(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def bwd(g):
        off = 0
        for p, s in zip(parts, sizes):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(off, off + s)
                _accum(p, g[tuple(idx)])
            off += s

    return _make(out_data, tuple(parts), bwd)


def crop2d(a, h, w):
    """Keep the top-left h x w spatial window of (..., H, W)."""
    a = as_var(a)
    out_data = a.data[..., :h, :w]

    def bwd(g):
        if a.requires_grad:
            gx = np.zeros_like(a.data)
            gx[..., :h, :w] = g
            _accum(a, gx)

    return _make(out_data, (a,), bwd)


def take_per_row(a, idx):
    """a: (B, K), idx: (B,) ints -> (B,) selecting one column per row."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.data.shape[0])
    out_data = a.data[rows, idx]

    def bwd(g):
        if a.requires_grad:
            gx = np.zeros_like(a.data)
            gx[rows, idx] = g
            _accum(a, gx)

    return _make(out_data, (a,), bwd)


# linear layers ----------------------------------------------------------

def dense(x, w, b=None):
    """x: (B, F) @ w: (F, K) + b."""
    x, w = as_var(x), as_var(w)
    out_data = x.data @ w.data
    if b is not None:
        b = as_var(b)
        out_data = out_data + b.data

    def bwd(g):
        if x.requires_grad:
            _accum(x, g @ w.data.T)
        if w.requires_grad:
            _accum(w, x.data.T @ g)
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out_data, parents, bwd)


def conv2d(x, w, b=None, stride=1, padding=0):
    """Strided 2-D correlation; x: (B,C,H,W), w: (O,C,kh,kw)."""
    x, w = as_var(x), as_var(w)
    O, C, kh, kw = w.data.shape
    if x.data.shape[1] != C:
        raise ValueError(f"conv2d channel mismatch: {x.data.shape[1]} vs {C}")
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    Hp, Wp = xp.shape[2:]
    y = K.conv2d_fwd(xp, w.data, stride)

    def bwd(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            gxp = K.conv2d_bwd_x(g, w.data, stride, Hp, Wp)
            if padding:
                gxp = gxp[:, :, padding:Hp - padding, padding:Wp - padding]
            _accum(x, gxp)
        if w.requires_grad:
            _accum(w, K.conv2d_bwd_w(xp, g, stride, kh, kw))

    out = _make(y, (x, w), bwd)
    if b is not None:
        out = add(out, reshape(b, (1, O, 1, 1)))
    return out


def conv_transpose2d(x, w, b=None, stride=2, padding=2, output_padding=1):
    """Transposed convolution; w: (C_in, C_out, kh, kw) (torch layout).

    Forward = zero-stuff the input on a stride grid, pad by k-1-p (plus
    output_padding on the bottom/right), then run a valid correlation with
    the spatially flipped kernel.
    """
    x, w = as_var(x), as_var(w)
    B, Cin, h, ww = x.data.shape
    _, Cout, kh, kw = w.data.shape
    if w.data.shape[0] != Cin:
        raise ValueError("conv_transpose2d channel mismatch")
    if kh - 1 - padding < 0 or kw - 1 - padding < 0:
        raise ValueError("padding too large for kernel")
    Hc = (h - 1) * stride + 1 + 2 * (kh - 1 - padding) + output_padding
    Wc = (ww - 1) * stride + 1 + 2 * (kw - 1 - padding) + output_padding
    canvas = np.zeros((B, Cin, Hc, Wc))
    r0 = kh - 1 - padding
    c0 = kw - 1 - padding
    canvas[:, :, r0:r0 + (h - 1) * stride + 1:stride,
           c0:c0 + (ww - 1) * stride + 1:stride] = x.data
    wf = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    y = K.conv2d_fwd(canvas, wf, 1)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if x.requires_grad:
            _accum(x, K.conv2d_fwd(gp, w.data, stride))
        if w.requires_grad:
            _accum(w, K.conv2d_bwd_w(gp, x.data, stride, kh, kw))

    out = _make(y, (x, w), bwd)
    if b is not None:
        out = add(out, reshape(b, (1, Cout, 1, 1)))
    return out


def _fold_pad(gxp, pad, H, W, mode):
    """Adjoint of np.pad for 'constant' (crop) and 'wrap' (modular fold)."""
    if mode == "constant":
        return gxp[..., pad:pad + H, pad:pad + W]
    # wrap: fold row axis then column axis with modular targets
    Hp = gxp.shape[-2]
    rows = np.zeros(gxp.shape[:-2] + (H, gxp.shape[-1]))
    tgt = (np.arange(Hp) - pad) % H
    np.add.at(rows, (..., tgt, slice(None)), gxp)
    Wp = rows.shape[-1]
    out = np.zeros(rows.shape[:-1] + (W,))
    tgt = (np.arange(Wp) - pad) % W
    np.add.at(out, (..., tgt), rows)
    return out


def dwconv2d(x, w, b=None, pad_mode="constant"):
    """Depthwise conv, stride 1, 'same' output; w: (C, k, k), k odd.

    pad_mode 'constant' zero-pads; 'wrap' pads circularly (periodic
    boundary, matching the DFT's implicit periodicity).
    """
    x, w = as_var(x), as_var(w)
    C, kh, kw = w.data.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError("dwconv2d expects a square odd kernel")
    if x.data.shape[1] != C:
        raise ValueError("dwconv2d channel mismatch")
    pad = kh // 2
    mode = "wrap" if pad_mode == "wrap" else "constant"
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode=mode)
    Hp, Wp = xp.shape[2:]
    H, W = x.data.shape[2:]
    y = K.dwconv2d_fwd(xp, w.data)

    def bwd(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            gxp = K.dwconv2d_bwd_x(g, w.data, Hp, Wp)
            _accum(x, _fold_pad(gxp, pad, H, W, mode))
        if w.requires_grad:
            _accum(w, K.dwconv2d_bwd_w(xp, g, kh, kw))

    out = _make(y, (x, w), bwd)
    if b is not None:
        out = add(out, reshape(b, (1, C, 1, 1)))
    return out


# Fourier ----------------------------------------------------------------

def rfft2_pair(x):
    """2-D real FFT of (..., H, W) -> stacked (2, ..., H, W//2+1) re/im."""
    x = as_var(x)
    Y = np.fft.rfft2(x.data, axes=(-2, -1))
    out_data = np.stack([Y.real, Y.imag])
    H, W = x.data.shape[-2:]

    def bwd(g):
        if not x.requires_grad:
            return
        full = np.zeros(x.data.shape, dtype=np.complex128)
        full[..., :W // 2 + 1] = g[0] + 1j * g[1]
        _accum(x, np.fft.ifft2(full, axes=(-2, -1)).real * (H * W))

    return _make(out_data, (x,), bwd)


def irfft2_pair(spec, out_hw):
    """Inverse of rfft2_pair; spec: (2, ..., H, W//2+1) -> (..., H, W)."""
    spec = as_var(spec)
    H, W = out_hw
    z = np.fft.irfft2(spec.data[0] + 1j * spec.data[1], s=(H, W), axes=(-2, -1))

    def bwd(gz):
        if not spec.requires_grad:
            return
        # adjoint of the last-axis irfft: scale mirrored bins by 2/W, the
        # self-conjugate bins (0 and, for even W, W/2) by 1/W real-only
        G = np.fft.rfft(gz, axis=-1) * (2.0 / W)
        G[..., 0] = G[..., 0].real * 0.5
        if W % 2 == 0:
            G[..., -1] = G[..., -1].real * 0.5
        # adjoint of the row-axis complex ifft
        G = np.fft.fft(G, axis=-2) / H
        _accum(spec, np.stack([G.real, G.imag]))

    return _make(z, (spec,), bwd)


# quantization helpers ---------------------------------------------------

def round_away(x):
    """Round half away from zero (np.round rounds half to even)."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def ste_round(a):
    """Round in the forward pass, identity gradient in the backward pass."""
    a = as_var(a)
    return replace_forward(a, round_away(a.data))
