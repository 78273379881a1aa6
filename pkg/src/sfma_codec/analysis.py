"""Diagnostics: bit-allocation maps, latent spectra, Bjontegaard deltas.

Bit-allocation maps average per-element information content over
channels; spectra are centered full-DFT amplitude means.  Bjontegaard
deltas fit least-squares cubics in (quality, log2 rate) space and
integrate the fitted difference analytically over the overlap, so the
closed-form cases (identical curves, constant log-rate or quality
offsets) come out exact to float precision.
"""

import csv
import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

BD_MODES = ("BD_RATE", "BD_QUALITY")


class RdCurve:
    """Rate-distortion curve: >= 4 (bpp, quality) points, bpp increasing."""

    def __init__(self, points, label=""):
        pts = sorted((float(b), float(q)) for b, q in points)
        if len(pts) < 4:
            raise ConfigError(
                f"curve needs >= 4 points, got {len(pts)}")
        self.bpp = np.array([p[0] for p in pts])
        self.quality = np.array([p[1] for p in pts])
        if np.any(self.bpp <= 0):
            raise ConfigError("bpp values must be positive")
        if np.any(np.diff(self.bpp) <= 0):
            raise ConfigError("bpp values must be strictly increasing")
        if not np.all(np.isfinite(self.quality)):
            raise ConfigError("quality values must be finite")
        self.label = str(label)

    def __len__(self):
        return len(self.bpp)

    def points(self):
        return list(zip(self.bpp.tolist(), self.quality.tolist()))


@dataclass(frozen=True)
class BdResult:
    bd_rate_percent: float
    bd_quality_delta: float
    overlap_lo: float
    overlap_hi: float

    @property
    def value(self):
        return (self.bd_rate_percent if self.bd_rate_percent is not None
                else self.bd_quality_delta)


def _as_array3(x, name):
    arr = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if arr.ndim != 3:
        raise ConfigError(f"{name} must be (C,H,W), got {arr.shape}")
    return arr


def bit_allocation_map(bits):
    """Channel mean of per-element bits: (C,h,w) -> (h,w)."""
    arr = _as_array3(bits, "bits")
    if not np.all(np.isfinite(arr)):
        raise DataError("bit array contains non-finite values")
    return arr.mean(axis=0)


def psd_map(y_hat, log=False):
    """Centered amplitude spectrum of a latent, averaged over channels.

    Full complex 2-D DFT per channel, zero frequency shifted to the
    center, absolute value, channel mean.  log=True applies log(1 + v)
    for display.
    """
    arr = _as_array3(y_hat, "latent")
    spec = np.fft.fftshift(np.fft.fft2(arr), axes=(-2, -1))
    amp = np.abs(spec).mean(axis=0)
    return np.log1p(amp) if log else amp


def _avg_poly_diff(x_t, y_t, x_a, y_a, lo, hi):
    d = np.polysub(np.polyfit(x_t, y_t, 3), np.polyfit(x_a, y_a, 3))
    prim = np.polyint(d)
    return float(np.polyval(prim, hi) - np.polyval(prim, lo)) / (hi - lo)


def _overlap(a, b, what, la, lb):
    lo = max(np.min(a), np.min(b))
    hi = min(np.max(a), np.max(b))
    if hi <= lo:
        raise DataError(
            f"no overlapping {what} range: {la or 'anchor'} spans "
            f"[{np.min(a):.6g}, {np.max(a):.6g}], {lb or 'test'} spans "
            f"[{np.min(b):.6g}, {np.max(b):.6g}]")
    return float(lo), float(hi)


def bd_metric(anchor, test, mode):
    """Bjontegaard delta between two curves.

    BD_RATE: average log2-rate difference at equal quality, reported as
    (2^delta - 1) * 100 percent (negative favors `test`).  BD_QUALITY:
    average quality difference at equal log2 rate.  Non-monotone curves
    are fitted in the least-squares sense; constant-quality curves have
    no usable overlap and are rejected.
    """
    for c in (anchor, test):
        if not isinstance(c, RdCurve):
            raise ConfigError("anchor and test must be RdCurve")
    if mode not in BD_MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    la, lt = np.log2(anchor.bpp), np.log2(test.bpp)
    if mode == "BD_RATE":
        lo, hi = _overlap(anchor.quality, test.quality, "quality",
                          anchor.label, test.label)
        delta = _avg_poly_diff(test.quality, lt, anchor.quality, la, lo, hi)
        return BdResult((2.0 ** delta - 1.0) * 100.0, None, lo, hi)
    lo, hi = _overlap(la, lt, "log2-rate", anchor.label, test.label)
    delta = _avg_poly_diff(lt, test.quality, la, anchor.quality, lo, hi)
    return BdResult(None, delta, lo, hi)


# report emission --------------------------------------------------------

def _slug(s):
    out = re.sub(r"[^a-z0-9]+", "-", str(s).lower()).strip("-")
    return out or "curve"


def _write_pgm(path, arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigError(f"map must be 2-D, got {arr.shape}")
    top = float(arr.max())
    scaled = np.zeros(arr.shape, dtype=np.uint8) if top <= 0 else \
        np.clip(np.rint(255.0 * arr / top), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        fh.write(scaled.tobytes())


def _svg_plot(path, curves):
    w, h, m = 640, 480, 60
    all_b = np.concatenate([c.bpp for c in curves])
    all_q = np.concatenate([c.quality for c in curves])
    b0, b1 = float(all_b.min()), float(all_b.max())
    q0, q1 = float(all_q.min()), float(all_q.max())
    sb = (b1 - b0) or 1.0
    sq = (q1 - q0) or 1.0

    def xy(b, q):
        return (m + (b - b0) / sb * (w - 2 * m),
                h - m - (q - q0) / sq * (h - 2 * m))

    colors = ("#1f6fb4", "#d95f02", "#1b9e77", "#7570b3",
              "#e7298a", "#66a61e")
    lines = ['<svg xmlns="http://www.w3.org/2000/svg" '
             'width="%d" height="%d">' % (w, h),
             '<rect x="%d" y="%d" width="%d" height="%d" fill="none" '
             'stroke="black"/>' % (m, m, w - 2 * m, h - 2 * m)]
    for i, c in enumerate(curves):
        col = colors[i % len(colors)]
        pts = " ".join("%.2f,%.2f" % xy(b, q)
                       for b, q in zip(c.bpp, c.quality))
        lines.append('<polyline points="%s" fill="none" stroke="%s" '
                     'stroke-width="1.5"/>' % (pts, col))
        lines.append('<text x="%d" y="%d" fill="%s" font-size="12">%s'
                     '</text>' % (w - m + 4, m + 14 * (i + 1), col,
                                  c.label or f"curve-{i}"))
    lines.append('<text x="%d" y="%d" font-size="12">bpp</text>'
                 % (w // 2, h - m // 3))
    lines.append('<text x="%d" y="%d" font-size="12" '
                 'transform="rotate(-90 14 %d)">quality</text>'
                 % (14, h // 2, h // 2))
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_reports(curves, maps, out_dir, anchor_label=None):
    """Write curve CSVs, a BD table against the anchor, map rasters and
    an overview plot.  Deterministic names and float formatting, so a
    rerun reproduces the CSV files byte for byte.  Returns written paths.
    """
    curves = list(curves)
    if not curves and not maps:
        raise ConfigError("need at least one curve or map")
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    for c in curves:
        p = os.path.join(out_dir, f"curve_{_slug(c.label)}.csv")
        with open(p, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["bpp", "quality"])
            for b, q in c.points():
                out.writerow(["%.10g" % b, "%.10g" % q])
        paths.append(p)

    if not curves:
        for name in sorted(maps):
            p = os.path.join(out_dir, f"map_{_slug(name)}.pgm")
            _write_pgm(p, maps[name])
            paths.append(p)
        return paths

    anchor = curves[0]
    if anchor_label is not None:
        match = [c for c in curves if c.label == anchor_label]
        if not match:
            raise ConfigError(f"no curve labeled {anchor_label!r}")
        anchor = match[0]
    p = os.path.join(out_dir, "bd_report.csv")
    with open(p, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["anchor", "test", "mode", "value",
                      "overlap_lo", "overlap_hi"])
        for c in curves:
            if c is anchor:
                continue
            for mode in BD_MODES:
                try:
                    r = bd_metric(anchor, c, mode)
                except DataError:
                    # no common span: row kept so the table stays rectangular
                    out.writerow([anchor.label, c.label, mode,
                                  "nan", "nan", "nan"])
                    continue
                out.writerow([anchor.label, c.label, mode,
                              "%.10g" % r.value, "%.10g" % r.overlap_lo,
                              "%.10g" % r.overlap_hi])
    paths.append(p)

    for name in sorted(maps):
        p = os.path.join(out_dir, f"map_{_slug(name)}.pgm")
        _write_pgm(p, maps[name])
        paths.append(p)

    p = os.path.join(out_dir, "rd_curves.svg")
    _svg_plot(p, curves)
    paths.append(p)
    return paths
