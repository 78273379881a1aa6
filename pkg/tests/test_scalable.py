"""Mask generator and two-layer split tests.

The straight-through check rebuilds the soft relaxation as an
independent graph (same Gumbel noise convention) and demands gradient
equality, then cross-checks against central finite differences of the
soft objective.
"""

import numpy as np
import pytest

from sfma_codec import autodiff as ad
from sfma_codec.entropy import EntropyParameters, FactorizedPrior, gaussian_bits
from sfma_codec.errors import ConfigError
from sfma_codec.scalable import (
    MaskGenerator,
    base_layer_bits,
    decode_base,
    decode_full,
    generate_mask,
    split_latent,
    train_scalable,
)

RNG = np.random.default_rng(31415)


def make_params(m=3, h=4, w=4, seed=0):
    r = np.random.default_rng(seed)
    mu = r.normal(0.0, 1.0, (m, h, w))
    sigma = r.uniform(0.2, 2.0, (m, h, w))
    return EntropyParameters(mu, sigma)


def test_mask_values_are_binary():
    gen = MaskGenerator(3, hidden=4, seed=1)
    params = make_params()
    for mode, seed in (("HARD_ST", 0), ("HARD_ST", 9), ("EVAL", 0)):
        m = generate_mask(params, gen, mode, seed=seed)
        assert set(np.unique(m.data)).issubset({0.0, 1.0})
        assert m.shape == params.shape


def test_saturated_logits_give_constant_mask():
    gen = MaskGenerator(2, hidden=4, seed=2)
    gen.tensors["mg2_w"].data[:] = 0.0
    gen.tensors["mg2_b"].data[:2] = 40.0    # keep logits
    gen.tensors["mg2_b"].data[2:] = -40.0   # drop logits
    params = make_params(m=2)
    for mode in ("HARD_ST", "EVAL"):
        assert np.all(generate_mask(params, gen, mode).data == 1.0)
    gen.tensors["mg2_b"].data[:2] = -40.0
    gen.tensors["mg2_b"].data[2:] = 40.0
    for mode in ("HARD_ST", "EVAL"):
        assert np.all(generate_mask(params, gen, mode).data == 0.0)


def test_eval_mode_deterministic_and_noise_free():
    gen = MaskGenerator(3, hidden=4, seed=3)
    params = make_params(seed=4)
    a = generate_mask(params, gen, "EVAL", seed=0).data
    b = generate_mask(params, gen, "EVAL", seed=123).data
    assert np.array_equal(a, b)


def test_straight_through_matches_soft_graph_exactly():
    gen = MaskGenerator(1, hidden=2, seed=5)
    gen.set_trainable(True)
    params = make_params(m=1, h=2, w=2, seed=6)
    w = ad.Var(RNG.normal(0.0, 1.0, (1, 2, 2)))
    seed = 7

    mask = generate_mask(params, gen, "HARD_ST", seed=seed)
    loss = ad.sum_(mask * w)
    loss.backward()
    grads_st = {k: v.grad.copy() for k, v in gen.items()}

    for _, v in gen.items():
        v.zero_grad()
    keep, drop = gen.logits(params)
    g = -np.log(-np.log(np.clip(
        np.random.default_rng(seed).random((2,) + keep.shape),
        1e-12, 1.0 - 1e-12)))
    soft = ad.sigmoid(((keep + ad.Var(g[0])) - (drop + ad.Var(g[1])))
                      / gen.temperature)
    ad.sum_(soft * w).backward()
    for k, v in gen.items():
        assert np.array_equal(grads_st[k], v.grad)


def test_straight_through_matches_finite_differences():
    gen = MaskGenerator(1, hidden=2, seed=8)
    gen.set_trainable(True)
    params = make_params(m=1, h=2, w=2, seed=9)
    w = RNG.normal(0.0, 1.0, (1, 2, 2))
    seed = 11

    mask = generate_mask(params, gen, "HARD_ST", seed=seed)
    ad.sum_(mask * ad.Var(w)).backward()

    def f_soft(tensors):
        # soft objective the straight-through estimator claims to follow
        saved = {k: v.data.copy() for k, v in gen.items()}
        for k, v in gen.items():
            v.data = tensors[k]
        with ad.no_grad():
            keep, drop = gen.logits(params)
        for k, v in gen.items():
            v.data = saved[k]
        g = -np.log(-np.log(np.clip(
            np.random.default_rng(seed).random((2,) + keep.shape),
            1e-12, 1.0 - 1e-12)))
        z = ((keep.data + g[0]) - (drop.data + g[1])) / gen.temperature
        return float(np.sum(w / (1.0 + np.exp(-z))))

    for name, v in gen.items():
        flat = v.data.ravel()
        for idx in range(0, flat.size, max(1, flat.size // 6)):
            tensors = {k: t.data.copy() for k, t in gen.items()}
            tensors[name].ravel()[idx] = flat[idx] + 1e-4
            up = f_soft(tensors)
            tensors[name].ravel()[idx] = flat[idx] - 1e-4
            dn = f_soft(tensors)
            fd = (up - dn) / 2e-4
            got = v.grad.ravel()[idx]
            assert abs(got - fd) <= 1e-3 * max(1.0, abs(fd))


def test_temperature_and_mode_validation():
    with pytest.raises(ConfigError):
        MaskGenerator(3, temperature=0.0)
    with pytest.raises(ConfigError):
        MaskGenerator(3, temperature=-1.0)
    gen = MaskGenerator(3, hidden=4)
    with pytest.raises(ConfigError):
        generate_mask(make_params(), gen, "SOFT")
    with pytest.raises(ConfigError):
        generate_mask(make_params(m=5), gen, "EVAL")


def test_split_partition_identity():
    y = np.rint(RNG.normal(0.0, 3.0, (3, 4, 4)))
    for mask in (np.ones_like(y), np.zeros_like(y),
                 (RNG.random(y.shape) > 0.5).astype(np.float64)):
        base, res = split_latent(y, mask)
        assert np.array_equal(base + res, y)
        assert np.array_equal(base, y * mask)
    ones_base, ones_res = split_latent(y, np.ones_like(y))
    assert np.array_equal(ones_base, y) and np.all(ones_res == 0.0)
    with pytest.raises(ConfigError):
        split_latent(y, np.ones((2, 4, 4)))


def test_base_bits_subset_and_monotone():
    params = make_params(seed=20)
    y = np.rint(RNG.normal(0.0, 2.0, params.shape))
    full_bits = float(np.sum(gaussian_bits(y, params).data))
    mask = (RNG.random(y.shape) > 0.5).astype(np.float64)
    b1 = float(base_layer_bits(y, params, mask).data)
    assert b1 <= full_bits + 1e-12
    # adding kept elements never decreases the base rate
    grow = mask.copy()
    zeros = np.argwhere(grow == 0.0)
    grow[tuple(zeros[0])] = 1.0
    b2 = float(base_layer_bits(y, params, grow).data)
    assert b2 >= b1
    assert abs(float(base_layer_bits(y, params, np.ones_like(y)).data)
               - full_bits) < 1e-9


def test_decode_paths(tiny_codec=None):
    from sfma_codec.adapters import SfmaConfig, adapter_stack
    from sfma_codec.codec import CodecConfig, PlacementConfig, init_codec

    cfg = CodecConfig(n_channels=8, m_channels=12)
    codec = init_codec(cfg, seed=30)
    place = PlacementConfig()
    adapters = adapter_stack(place.adapter_points(cfg),
                             SfmaConfig(in_dim=8, middle_dim=2), seed=31)
    y = np.rint(RNG.normal(0.0, 2.0, (12, 4, 4)))
    with ad.no_grad():
        base_img = decode_base(ad.Var(y), codec, adapters, place)
        full_img = decode_full(ad.Var(y), codec)
    # zero-init adapters: both paths identical (all-ones-mask case)
    assert np.array_equal(base_img.data, full_img.data)
    # non-zero decoder adapters must change only the base path
    for w in adapters.values():
        w.tensors["sma_up"].data[:] = 0.3
    with ad.no_grad():
        base_img2 = decode_base(ad.Var(y), codec, adapters, place)
        full_img2 = decode_full(ad.Var(y), codec)
    assert np.array_equal(full_img2.data, full_img.data)
    assert not np.array_equal(base_img2.data, full_img2.data)


def scalable_setup(seed=40):
    from sfma_codec.adapters import SfmaConfig, adapter_stack
    from sfma_codec.codec import CodecConfig, PlacementConfig, init_codec
    from sfma_codec.tasks import TaskModel
    from sfma_codec.training import Adam, adapter_parameters

    cfg = CodecConfig(8, 12)
    codec = init_codec(cfg, seed=seed).set_trainable(False)
    prior = FactorizedPrior(8)
    prior.set_trainable(False)
    place = PlacementConfig()
    adapters = adapter_stack(place.adapter_points(cfg),
                             SfmaConfig(in_dim=8, middle_dim=2),
                             seed=seed + 1)
    for w in adapters.values():
        w.set_trainable(True)
    gen = MaskGenerator(12, hidden=8, seed=seed + 2).set_trainable(True)
    model = TaskModel(seed=seed + 3)
    params = adapter_parameters(adapters)
    params.update({f"maskgen/{k}": v for k, v in gen.items()})
    opt = Adam(params, lr=1e-3)
    r = np.random.default_rng(seed + 4)
    batch = np.clip(r.random((2, 3, 32, 32)) * 0.6 + 0.2, 0.0, 1.0)
    return codec, prior, place, adapters, gen, model, opt, batch


def test_train_scalable_contracts():
    codec, prior, place, adapters, gen, model, opt, batch = scalable_setup()
    codec_sum = codec.checksum()
    model_sum = model.checksum()
    stats = train_scalable(batch, codec, prior, gen, adapters, model,
                           lam=3.0, optimizer=opt, placement=place, seed=0)
    assert set(stats) == {"loss", "rate", "distortion", "mask_density"}
    assert np.isfinite(stats["loss"])
    assert 0.0 <= stats["mask_density"] <= 1.0
    assert abs(stats["loss"]
               - (stats["rate"] + 3.0 * stats["distortion"])) < 1e-9
    assert codec.checksum() == codec_sum
    assert model.checksum() == model_sum
    # frozen groups never receive gradients
    assert all(v.grad is None for v in codec.tensors.values())
    assert all(v.grad is None for _, v in prior.params())
    assert all(v.grad is None for _, v in model.items())


def test_train_scalable_overfits_one_batch():
    codec, prior, place, adapters, gen, model, opt, batch = scalable_setup(
        seed=41)
    losses = [train_scalable(batch, codec, prior, gen, adapters, model,
                             lam=3.0, optimizer=opt, placement=place,
                             seed=s)["loss"]
              for s in range(40)]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
