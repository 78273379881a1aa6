"""Bit-allocation, spectrum and Bjontegaard-delta tests."""

import csv
import os

import numpy as np
import pytest

from oracle_dft import naive_psd
from sfma_codec.analysis import (BD_MODES, RdCurve, bd_metric,
                                 bit_allocation_map, emit_reports, psd_map)
from sfma_codec.errors import ConfigError, DataError

RNG = np.random.default_rng(246)


# bit allocation ---------------------------------------------------------

def test_bit_allocation_closed_forms():
    half = np.full((3, 4, 5), -np.log2(0.5))
    assert np.allclose(bit_allocation_map(half), 1.0, atol=1e-15)
    sure = np.zeros((2, 4, 4))
    assert np.array_equal(bit_allocation_map(sure), np.zeros((4, 4)))
    two = np.zeros((2, 2, 2))
    two[0, 1, 1] = -np.log2(0.25)
    two[1, 1, 1] = -np.log2(0.5)
    assert abs(bit_allocation_map(two)[1, 1] - 1.5) < 1e-12


def test_bit_allocation_sum_consistency():
    bits = RNG.exponential(2.0, (5, 7, 6))
    m = bit_allocation_map(bits)
    assert m.shape == (7, 6)
    total = float(np.mean(m)) * 5 * 7 * 6
    assert abs(total - bits.sum()) <= 1e-6 * bits.sum()


def test_bit_allocation_validation():
    with pytest.raises(ConfigError):
        bit_allocation_map(np.zeros((4, 4)))
    with pytest.raises(DataError):
        bit_allocation_map(np.full((1, 2, 2), np.nan))


# spectra ----------------------------------------------------------------

def test_psd_constant_latent_is_dc_only():
    m = psd_map(np.full((3, 6, 6), 0.7))
    assert m[3, 3] > 0
    off = m.copy()
    off[3, 3] = 0.0
    assert np.max(off) < 1e-9 * m[3, 3]


def test_psd_zero_latent():
    assert np.array_equal(psd_map(np.zeros((2, 4, 4))), np.zeros((4, 4)))


def test_psd_single_cosine_peaks():
    h = w = 8
    k = 3
    x = np.cos(2 * np.pi * k * np.arange(w) / w)
    lat = np.broadcast_to(x, (1, h, w)).copy()
    m = psd_map(lat)
    # peaks at horizontal frequency +-k around the centered DC bin
    peaks = {(h // 2, w // 2 - k), (h // 2, w // 2 + k)}
    got = set(map(tuple, np.argwhere(m > m.max() * 0.5)))
    assert got == peaks
    assert np.allclose(m, naive_psd(lat), rtol=1e-5, atol=1e-9)


def test_psd_matches_naive_oracle():
    for i in range(5):
        lat = RNG.normal(0.0, 2.0, (2, 5, 6))
        got = psd_map(lat)
        want = naive_psd(lat)
        assert np.allclose(got, want, rtol=1e-5, atol=1e-8), i


def test_psd_symmetry_for_real_input():
    lat = RNG.normal(0.0, 1.0, (3, 6, 6))
    m = psd_map(lat)
    h, w = m.shape
    for r, c in ((1, 2), (2, 5), (4, 1)):
        rr, cc = (2 * (h // 2) - r) % h, (2 * (w // 2) - c) % w
        assert abs(m[r, c] - m[rr, cc]) <= 1e-9 * max(1.0, m[r, c])


def test_psd_log_flag():
    lat = RNG.normal(0.0, 1.0, (1, 4, 4))
    assert np.allclose(psd_map(lat, log=True), np.log1p(psd_map(lat)))


# BD metrics -------------------------------------------------------------

def curve_a(label="a"):
    return RdCurve([(0.1, 30.0), (0.2, 33.0), (0.4, 35.0), (0.8, 36.0)],
                   label)


def test_rd_curve_validation():
    with pytest.raises(ConfigError):
        RdCurve([(0.1, 1.0), (0.2, 2.0), (0.3, 3.0)])
    with pytest.raises(ConfigError):
        RdCurve([(0.1, 1.0), (0.1, 2.0), (0.3, 3.0), (0.4, 4.0)])
    with pytest.raises(ConfigError):
        RdCurve([(-0.1, 1.0), (0.2, 2.0), (0.3, 3.0), (0.4, 4.0)])
    with pytest.raises(ConfigError):
        RdCurve([(0.1, np.nan), (0.2, 2.0), (0.3, 3.0), (0.4, 4.0)])
    c = RdCurve([(0.4, 4.0), (0.1, 1.0), (0.3, 3.0), (0.2, 2.0)], "x")
    assert np.array_equal(c.bpp, [0.1, 0.2, 0.3, 0.4])
    assert len(c) == 4


def test_bd_identical_curves_are_zero():
    r = bd_metric(curve_a(), curve_a("b"), "BD_RATE")
    assert abs(r.bd_rate_percent) < 1e-9
    q = bd_metric(curve_a(), curve_a("b"), "BD_QUALITY")
    assert abs(q.bd_quality_delta) < 1e-9


def test_bd_halved_rate_is_minus_fifty():
    a = curve_a()
    t = RdCurve([(b / 2.0, q) for b, q in a.points()], "half")
    r = bd_metric(a, t, "BD_RATE")
    assert abs(r.bd_rate_percent - (-50.0)) < 1e-6
    assert (r.overlap_lo, r.overlap_hi) == (30.0, 36.0)


def test_bd_quality_offset_is_exact():
    a = curve_a()
    t = RdCurve([(b, q + 2.0) for b, q in a.points()], "up2")
    r = bd_metric(a, t, "BD_QUALITY")
    assert abs(r.bd_quality_delta - 2.0) < 1e-9


def test_bd_antisymmetry():
    a = curve_a()
    b = RdCurve([(0.12, 31.0), (0.25, 34.0), (0.5, 36.0), (1.0, 37.0)], "b")
    qa = bd_metric(a, b, "BD_QUALITY").bd_quality_delta
    qb = bd_metric(b, a, "BD_QUALITY").bd_quality_delta
    assert abs(qa + qb) < 1e-6
    ra = bd_metric(a, b, "BD_RATE").bd_rate_percent / 100.0
    rb = bd_metric(b, a, "BD_RATE").bd_rate_percent / 100.0
    assert abs((1.0 + ra) * (1.0 + rb) - 1.0) < 1e-4


def test_bd_sign_convention_for_dominating_curve():
    a = curve_a()
    better = RdCurve([(b * 0.7, q) for b, q in a.points()], "dom")
    assert bd_metric(a, better, "BD_RATE").bd_rate_percent < 0
    worse = RdCurve([(b, q - 1.5) for b, q in a.points()], "w")
    assert bd_metric(a, worse, "BD_QUALITY").bd_quality_delta < 0


def test_bd_error_paths():
    a = curve_a()
    with pytest.raises(ConfigError):
        bd_metric(a, a, "BD_PSNR")
    with pytest.raises(ConfigError):
        bd_metric([(1, 2)], a, "BD_RATE")
    far = RdCurve([(0.1, 90.0), (0.2, 91.0), (0.3, 92.0), (0.4, 93.0)],
                  "far")
    with pytest.raises(DataError, match="spans"):
        bd_metric(a, far, "BD_RATE")


# reports ----------------------------------------------------------------

def test_emit_reports_outputs(tmp_path):
    a = curve_a("frozen base")
    b = RdCurve([(b_ * 0.8, q) for b_, q in a.points()], "adapted")
    maps = {"bits": RNG.random((3, 5)), "psd": RNG.random((4, 4))}
    out = os.path.join(tmp_path, "rep")
    paths = emit_reports([a, b], maps, out)
    names = sorted(os.path.basename(p) for p in paths)
    assert names == ["bd_report.csv", "curve_adapted.csv",
                     "curve_frozen-base.csv", "map_bits.pgm",
                     "map_psd.pgm", "rd_curves.svg"]
    # BD table values match direct recomputation
    with open(os.path.join(out, "bd_report.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(BD_MODES)
    want = bd_metric(a, b, "BD_RATE").bd_rate_percent
    got = float([r for r in rows if r["mode"] == "BD_RATE"][0]["value"])
    assert abs(got - want) < 1e-9
    # PGM dims equal the map dims
    with open(os.path.join(out, "map_bits.pgm"), "rb") as fh:
        magic, dims, depth = fh.readline(), fh.readline(), fh.readline()
        body = fh.read()
    assert magic == b"P5\n" and dims == b"5 3\n" and depth == b"255\n"
    assert len(body) == 15 and max(body) == 255


def test_emit_reports_deterministic(tmp_path):
    a = curve_a()
    b = RdCurve([(b_, q + 1.0) for b_, q in a.points()], "t")
    blobs = []
    for sub in ("one", "two"):
        out = os.path.join(tmp_path, sub)
        emit_reports([a, b], {"m": np.eye(3)}, out, anchor_label="a")
        blob = {}
        for name in os.listdir(out):
            with open(os.path.join(out, name), "rb") as fh:
                blob[name] = fh.read()
        blobs.append(blob)
    assert blobs[0] == blobs[1]
    with pytest.raises(ConfigError):
        emit_reports([a], {}, os.path.join(tmp_path, "x"),
                     anchor_label="missing")
