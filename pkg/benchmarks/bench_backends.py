"""Timing and agreement check for the numpy and numba kernel backends.

Runs every convolution kernel on codec-shaped inputs and the range
coder on a large symbol block, once per backend, and reports wall times
side by side.  Agreement policy: coder tables, payload bytes and
decoded symbols must match exactly; convolutions must agree to a few
ulps (their summation orders differ, so exact equality is not
expected and dwconv2d_fwd matching bitwise is a coincidence of order).

    python3 benchmarks/bench_backends.py [--repeats N] [--quick]
"""

import argparse
import sys
import time

import numpy as np

from sfma_codec import _kernels_numpy as knp
from sfma_codec import rangecoder as rc

try:
    from sfma_codec import _kernels_numba as knb
    from sfma_codec import _rangecoder_numba as rnb
except ImportError as e:
    print(f"numba backend unavailable ({e}); nothing to compare")
    sys.exit(1)

CONV_TOL = 1e-10

# (B, Cin, Cout, H, k, stride): first analysis stage, a mid stage at
# half resolution, and a wide hyper-path layer
CONV_SHAPES = [(4, 3, 64, 64, 5, 2),
               (4, 64, 64, 32, 5, 2),
               (4, 96, 128, 16, 3, 1)]
DW_SHAPES = [(4, 64, 32, 5), (4, 128, 16, 5)]          # (B, C, H, k)
CODER_N = 16384


def timed(fn, *args, repeats=3):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return out, best


def report(rows):
    w = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{w}}  {'numpy':>9}  {'numba':>9}  {'speedup':>7}  diff")
    for name, t_np, t_nb, diff in rows:
        print(f"{name:<{w}}  {1e3 * t_np:7.2f}ms  {1e3 * t_nb:7.2f}ms  "
              f"{t_np / t_nb:6.1f}x  {diff}")


def bench_convs(rng, repeats, rows):
    for B, C, O, H, k, s in CONV_SHAPES:
        xp = rng.standard_normal((B, C, H + k - 1, H + k - 1))
        w = rng.standard_normal((O, C, k, k))
        label = f"conv2d {C}->{O} {H}px k{k}s{s}"
        a, t_np = timed(knp.conv2d_fwd, xp, w, s, repeats=repeats)
        knb.conv2d_fwd(xp, w, s)                        # JIT warmup
        b, t_nb = timed(knb.conv2d_fwd, xp, w, s, repeats=repeats)
        np.testing.assert_allclose(b, a, rtol=CONV_TOL, atol=CONV_TOL)
        rows.append((label + " fwd", t_np, t_nb,
                     f"{np.abs(a - b).max():.1e}"))

        gy = rng.standard_normal(a.shape)
        Hp = xp.shape[-1]
        a, t_np = timed(knp.conv2d_bwd_x, gy, w, s, Hp, Hp, repeats=repeats)
        knb.conv2d_bwd_x(gy, w, s, Hp, Hp)
        b, t_nb = timed(knb.conv2d_bwd_x, gy, w, s, Hp, Hp, repeats=repeats)
        np.testing.assert_allclose(b, a, rtol=CONV_TOL, atol=CONV_TOL)
        rows.append((label + " bwd_x", t_np, t_nb,
                     f"{np.abs(a - b).max():.1e}"))

        a, t_np = timed(knp.conv2d_bwd_w, xp, gy, s, k, k, repeats=repeats)
        knb.conv2d_bwd_w(xp, gy, s, k, k)
        b, t_nb = timed(knb.conv2d_bwd_w, xp, gy, s, k, k, repeats=repeats)
        np.testing.assert_allclose(b, a, rtol=CONV_TOL, atol=CONV_TOL)
        rows.append((label + " bwd_w", t_np, t_nb,
                     f"{np.abs(a - b).max():.1e}"))

    for B, C, H, k in DW_SHAPES:
        xp = rng.standard_normal((B, C, H + k - 1, H + k - 1))
        w = rng.standard_normal((C, k, k))
        label = f"dwconv2d {C}ch {H}px k{k}"
        a, t_np = timed(knp.dwconv2d_fwd, xp, w, repeats=repeats)
        knb.dwconv2d_fwd(xp, w)
        b, t_nb = timed(knb.dwconv2d_fwd, xp, w, repeats=repeats)
        np.testing.assert_allclose(b, a, rtol=CONV_TOL, atol=CONV_TOL)
        rows.append((label + " fwd", t_np, t_nb,
                     f"{np.abs(a - b).max():.1e}"))

        gy = rng.standard_normal(a.shape)
        Hp = xp.shape[-1]
        a, t_np = timed(knp.dwconv2d_bwd_x, gy, w, Hp, Hp, repeats=repeats)
        knb.dwconv2d_bwd_x(gy, w, Hp, Hp)
        b, t_nb = timed(knb.dwconv2d_bwd_x, gy, w, Hp, Hp, repeats=repeats)
        np.testing.assert_allclose(b, a, rtol=CONV_TOL, atol=CONV_TOL)
        rows.append((label + " bwd_x", t_np, t_nb,
                     f"{np.abs(a - b).max():.1e}"))

        a, t_np = timed(knp.dwconv2d_bwd_w, xp, gy, k, k, repeats=repeats)
        knb.dwconv2d_bwd_w(xp, gy, k, k)
        b, t_nb = timed(knb.dwconv2d_bwd_w, xp, gy, k, k, repeats=repeats)
        np.testing.assert_allclose(b, a, rtol=CONV_TOL, atol=CONV_TOL)
        rows.append((label + " bwd_w", t_np, t_nb,
                     f"{np.abs(a - b).max():.1e}"))


def bench_coder(rng, n, repeats, rows):
    mu = 4.0 * rng.standard_normal(n)
    sigma = np.exp(rng.uniform(-2.0, 1.5, n))
    syms = np.round(mu + sigma * rng.standard_normal(n)).astype(np.int64)

    t_py, t_build_py = timed(rc._build_tables_py, mu, sigma, 0, 16.0, 0,
                             repeats=repeats)
    rnb.build_tables(mu, sigma, 0, 16.0, 0)            # JIT warmup
    t_nb_raw, t_build_nb = timed(rnb.build_tables, mu, sigma, 0, 16.0, 0,
                                 repeats=repeats)
    t_nb = rc.CodingTables(*t_nb_raw)
    exact = (np.array_equal(t_py.lo, t_nb.lo)
             and np.array_equal(t_py.ptr, t_nb.ptr)
             and np.array_equal(t_py.cdf, t_nb.cdf))
    if not exact:
        raise AssertionError("coder tables differ between backends")
    rows.append((f"coder tables n={n}", t_build_py, t_build_nb, "exact"))

    out_py = np.zeros(8 * n + 64, dtype=np.uint8)
    out_nb = np.zeros(8 * n + 64, dtype=np.uint8)
    pos_py, t_enc_py = timed(rc._encode_py, syms, t_py.lo, t_py.ptr,
                             t_py.cdf, out_py, repeats=repeats)
    rnb.encode(syms, t_nb.lo, t_nb.ptr, t_nb.cdf, out_nb)
    pos_nb, t_enc_nb = timed(rnb.encode, syms, t_nb.lo, t_nb.ptr,
                             t_nb.cdf, out_nb, repeats=repeats)
    if pos_py != pos_nb or not np.array_equal(out_py[:pos_py],
                                              out_nb[:pos_nb]):
        raise AssertionError("coder payloads differ between backends")
    rows.append((f"coder encode n={n}", t_enc_py, t_enc_nb, "exact"))

    payload = out_py[:pos_py].copy()
    dec_py = np.zeros(n, dtype=np.int64)
    dec_nb = np.zeros(n, dtype=np.int64)
    st, t_dec_py = timed(rc._decode_py, payload, t_py.lo, t_py.ptr,
                         t_py.cdf, dec_py, repeats=repeats)
    rnb.decode(payload, t_nb.lo, t_nb.ptr, t_nb.cdf, dec_nb)
    st2, t_dec_nb = timed(rnb.decode, payload, t_nb.lo, t_nb.ptr,
                          t_nb.cdf, dec_nb, repeats=repeats)
    if st != 0 or st2 != 0 or not np.array_equal(dec_py, syms) \
            or not np.array_equal(dec_nb, syms):
        raise AssertionError("decode mismatch")
    rows.append((f"coder decode n={n}", t_dec_py, t_dec_nb, "exact"))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3,
                    help="timing repeats, best-of (default 3)")
    ap.add_argument("--quick", action="store_true",
                    help="smallest shapes only")
    args = ap.parse_args(argv)
    if args.quick:
        del CONV_SHAPES[1:]
        del DW_SHAPES[1:]
    n = CODER_N // (8 if args.quick else 1)

    rng = np.random.default_rng(20240817)
    rows = []
    bench_convs(rng, args.repeats, rows)
    bench_coder(rng, n, args.repeats, rows)
    report(rows)
    print("all agreement checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
