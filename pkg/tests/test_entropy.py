"""Likelihood/rate model tests.

Oracles are computed through math.erf / math.exp in plain loops, a code
path disjoint from the package's scipy-based CDF.
"""

import math

import numpy as np
import pytest

from sfma_codec import autodiff as ad
from sfma_codec.codec import SIGMA_MIN
from sfma_codec.entropy import (
    LIKELIHOOD_FLOOR,
    SCALE_MIN,
    EntropyParameters,
    FactorizedPrior,
    estimate_rate,
    factorized_bits,
    gaussian_bits,
)
from sfma_codec.errors import ConfigError

RNG = np.random.default_rng(20240711)


def interval_bits(d, sigma):
    """Normal mass of [d-0.5, d+0.5] via erf/erfc, tail-stable."""
    lo = (d - 0.5) / sigma
    hi = (d + 0.5) / sigma
    r = math.sqrt(2.0)
    if lo >= 0.0:
        p = 0.5 * (math.erfc(lo / r) - math.erfc(hi / r))
    elif hi <= 0.0:
        p = 0.5 * (math.erfc(-hi / r) - math.erfc(-lo / r))
    else:
        p = 0.5 * (math.erf(hi / r) - math.erf(lo / r))
    return -math.log2(max(p, LIKELIHOOD_FLOOR))


def logistic_interval(k, loc, s):
    """Logistic mass of [k-0.5, k+0.5], computed in whichever tail is
    small so no 1-minus-epsilon cancellation occurs."""
    lo = (k - 0.5 - loc) / s
    hi = (k + 0.5 - loc) / s
    if lo >= 0.0:   # survival form: both terms small
        return 1.0 / (1.0 + math.exp(min(lo, 700.0))) - \
            1.0 / (1.0 + math.exp(min(hi, 700.0)))
    # cdf form: terms are <= 1/2 + o(1), no cancellation against 1
    return 1.0 / (1.0 + math.exp(min(-hi, 700.0))) - \
        1.0 / (1.0 + math.exp(min(-lo, 700.0)))


def gbits(y, mu, sigma):
    out = gaussian_bits(y, EntropyParameters(mu, sigma))
    return out.data


# gaussian_bits ----------------------------------------------------------

def test_mode_bits_value():
    # frozen oracle: central unit-interval mass of a standard normal
    oracle = -math.log2(math.erf(0.5 / math.sqrt(2.0)))
    got = gbits(np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1)))[0, 0]
    assert abs(got - oracle) < 1e-12
    assert abs(got - 1.3848665342909898) < 1e-12
    assert abs(got - 1.3846) < 1e-3


def test_matches_literal_formula():
    for _ in range(50):
        mu = float(RNG.normal(0.0, 3.0))
        sigma = float(RNG.uniform(SIGMA_MIN, 5.0))
        y = float(np.rint(RNG.normal(mu, sigma)))
        got = gbits(np.array([[y]]), np.array([[mu]]), np.array([[sigma]]))
        want = interval_bits(y - mu, sigma)
        assert abs(got[0, 0] - want) < 1e-10 * max(1.0, want)


def test_symmetry_is_exact():
    # quarter-integer lattice keeps mu +- d exact in binary floats, so
    # both sides see bit-identical |y - mu|
    mu = RNG.integers(-20, 20, (4, 7)) * 0.25
    sigma = RNG.uniform(SIGMA_MIN, 3.0, (4, 7))
    d = RNG.integers(0, 24, (4, 7)) * 0.25
    up = gbits(mu + d, mu, sigma)
    dn = gbits(mu - d, mu, sigma)
    assert np.array_equal(up, dn)


def test_monotone_in_distance():
    sigma = np.full((1, 12), 0.7)
    mu = np.zeros((1, 12))
    d = np.arange(12.0).reshape(1, 12) * 0.5
    bits = gbits(mu + d, mu, sigma)[0]
    assert np.all(np.diff(bits) >= 0.0)


def test_tail_bits_with_and_without_floor():
    # 10 sigma out: true interval mass ~1e-21 sits below the floor,
    # so the computed value pins at exactly -log2(floor); both the
    # floored and unfloored numbers clear 40 bits.  erfc keeps the
    # oracle finite where erf saturates.
    tail = 0.5 * (math.erfc(9.5 / math.sqrt(2.0)) -
                  math.erfc(10.5 / math.sqrt(2.0)))
    unfloored = -math.log2(tail)
    assert unfloored >= 40.0
    got = gbits(np.array([10.0]), np.array([0.0]), np.array([1.0]))[0]
    assert got == -math.log2(LIKELIHOOD_FLOOR) == 50.0
    assert got >= 40.0
    # 8 sigma out: above the floor, matches the literal formula
    got8 = gbits(np.array([8.0]), np.array([0.0]), np.array([1.0]))[0]
    want8 = interval_bits(8.0, 1.0)
    assert want8 < 50.0
    assert abs(got8 - want8) < 1e-9


def test_pmf_normalization_over_coding_support():
    for sigma in (SIGMA_MIN, 0.5, 1.0, 3.7, 17.0):
        for mu in (0.0, 0.3, -2.7):
            center = math.floor(abs(mu) + 0.5) * (1 if mu >= 0 else -1)
            hw = max(1, math.ceil(16.0 * sigma))
            ks = np.arange(center - hw, center + hw + 1, dtype=np.float64)
            bits = gbits(ks, np.full_like(ks, mu), np.full_like(ks, sigma))
            total = np.sum(np.exp2(-bits))
            assert 1.0 - 1e-4 <= total <= 1.0 + 1e-9


def test_sigma_below_floor_rejected():
    with pytest.raises(ConfigError):
        EntropyParameters(np.zeros(3), np.full(3, 0.5 * SIGMA_MIN))


def test_shape_mismatch_rejected():
    with pytest.raises(ConfigError):
        EntropyParameters(np.zeros((2, 3)), np.ones((3, 2)))
    params = EntropyParameters(np.zeros((2, 3)), np.ones((2, 3)))
    with pytest.raises(ConfigError):
        gaussian_bits(np.zeros((3, 2)), params)


def test_gradients_flow_to_all_inputs():
    y = ad.Var(RNG.normal(0.0, 1.0, (2, 3)), requires_grad=True)
    mu = ad.Var(RNG.normal(0.0, 1.0, (2, 3)), requires_grad=True)
    sigma = ad.Var(RNG.uniform(0.5, 2.0, (2, 3)), requires_grad=True)
    loss = ad.sum_(gaussian_bits(y, EntropyParameters(mu, sigma)))
    loss.backward()
    assert y.grad is not None and np.all(np.isfinite(y.grad))
    assert mu.grad is not None and np.all(np.isfinite(mu.grad))
    assert sigma.grad is not None and np.all(np.isfinite(sigma.grad))
    # moving mass toward the sample lowers the bit cost
    d = y.data - mu.data
    assert np.all(np.sign(y.grad) == np.sign(d))


# FactorizedPrior --------------------------------------------------------

def make_prior(loc, log_scale):
    prior = FactorizedPrior(len(loc))
    prior.loc.data[:] = loc
    prior.log_scale.data[:] = log_scale
    return prior


def test_prior_pmf_sums_to_one():
    prior = make_prior([0.0, 1.3, -4.2], [0.0, -1.0, 1.2])
    _, scales = prior.channel_params()
    for c in range(3):
        loc = prior.loc.data[c]
        hw = math.ceil(24.0 * scales[c]) + 2
        ks = np.arange(round(loc) - hw, round(loc) + hw + 1, dtype=np.float64)
        z = ks.reshape(1, 1, -1)
        zs = np.zeros((3, 1, len(ks)))
        zs[c] = z
        bits = factorized_bits(zs, prior).data[c, 0]
        total = np.sum(np.exp2(-bits))
        assert abs(total - 1.0) < 1e-6


def test_prior_mode_is_cheapest_integer():
    prior = make_prior([0.2, -3.6], [-0.5, 0.3])
    for c in range(2):
        loc = prior.loc.data[c]
        ks = np.arange(round(loc) - 20, round(loc) + 21, dtype=np.float64)
        zs = np.zeros((2, 1, len(ks)))
        zs[c] = ks
        bits = factorized_bits(zs, prior).data[c, 0]
        mode_idx = int(np.argmin(np.abs(ks - loc)))
        assert np.argmin(bits) == mode_idx


def test_prior_matches_table_oracle():
    prior = make_prior([0.7, -1.1], [0.0, -2.0])
    _, scales = prior.channel_params()
    z = np.rint(RNG.normal(0.0, 2.0, (2, 2, 4, 5)))
    got = factorized_bits(z, prior).data
    for b in range(2):
        for c in range(2):
            loc, s = prior.loc.data[c], scales[c]
            for i in range(4):
                for j in range(5):
                    k = z[b, c, i, j]
                    p = logistic_interval(k, loc, s)
                    want = -math.log2(max(p, LIKELIHOOD_FLOOR))
                    assert abs(got[b, c, i, j] - want) < 1e-6


def test_prior_symmetry_exact():
    prior = make_prior([0.0], [0.4])
    ks = np.arange(1.0, 9.0)
    up = factorized_bits(ks.reshape(1, 1, -1), prior).data
    dn = factorized_bits(-ks.reshape(1, 1, -1), prior).data
    assert np.array_equal(up, dn)


def test_prior_scale_floor():
    prior = make_prior([0.0], [-30.0])
    _, scales = prior.channel_params()
    assert scales[0] == SCALE_MIN
    bits = factorized_bits(np.zeros((1, 1, 1)), prior).data
    assert np.all(np.isfinite(bits))


def test_prior_trainability_toggle():
    prior = make_prior([0.0, 0.0], [0.0, 0.0])
    prior.set_trainable(True)
    z = np.rint(RNG.normal(0.0, 1.5, (2, 3, 3)))
    loss = ad.sum_(prior.bits(z))
    loss.backward()
    assert prior.loc.grad is not None
    assert prior.log_scale.grad is not None
    prior.loc.grad = None
    prior.log_scale.grad = None
    prior.set_trainable(False)
    loss = ad.sum_(prior.bits(z))
    loss.backward()
    assert prior.loc.grad is None
    assert prior.log_scale.grad is None


def test_prior_channel_mismatch_rejected():
    prior = make_prior([0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ConfigError):
        prior.bits(np.zeros((3, 4, 4)))


# estimate_rate ----------------------------------------------------------

def test_rate_matches_hand_sum():
    mu = RNG.normal(0.0, 1.0, (1, 3, 4, 4))
    sigma = RNG.uniform(0.5, 2.0, (1, 3, 4, 4))
    y = np.rint(RNG.normal(0.0, 2.0, (1, 3, 4, 4)))
    z = np.rint(RNG.normal(0.0, 1.5, (1, 2, 2, 2)))
    prior = make_prior([0.1, -0.4], [0.2, -0.3])
    params = EntropyParameters(mu, sigma)
    bpp = estimate_rate(y, params, z, prior, 256).data
    hand = (np.sum(gaussian_bits(y, params).data) +
            np.sum(factorized_bits(z, prior).data)) / 256.0
    assert abs(bpp - hand) < 1e-12
    assert bpp > 0.0

    half = estimate_rate(y, params, z, prior, 512).data
    assert abs(half - 0.5 * hand) < 1e-12


def test_rate_exact_for_half_likelihoods():
    # sigma / scale chosen so every element has probability exactly 1/2:
    # 256 one-bit elements over 256 pixels -> 1.0 bpp
    sigma_half = 0.5 / 0.6744897501960817   # Phi(z) = 3/4
    s_half = 0.5 / math.log(3.0)            # logistic CDF(0.5/s) = 3/4
    y = np.zeros((1, 2, 8, 8))
    params = EntropyParameters(np.zeros_like(y), np.full_like(y, sigma_half))
    z = np.zeros((1, 2, 8, 8))
    prior = make_prior([0.0, 0.0], [math.log(s_half)] * 2)
    bpp = estimate_rate(y, params, z, prior, 256).data
    assert abs(bpp - 1.0) < 1e-9


def test_rate_rejects_bad_pixel_count():
    params = EntropyParameters(np.zeros((1, 1, 1, 1)), np.ones((1, 1, 1, 1)))
    prior = make_prior([0.0], [0.0])
    with pytest.raises(ConfigError):
        estimate_rate(np.zeros((1, 1, 1, 1)), params,
                      np.zeros((1, 1, 1, 1)), prior, 0)
