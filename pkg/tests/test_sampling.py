import numpy as np
import pytest

from ctdenoise import (
    ConfigurationError,
    MaskInstance,
    MaskSpec,
    NoiseSpec,
    add_noise,
    apply_mask,
    sample_mask,
    sample_noise,
)


# --- masks ----------------------------------------------------------------


def test_mask_spec_validates_alpha():
    for bad in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ConfigurationError):
            MaskSpec(alpha=bad)


def test_mask_fraction_within_binomial_bound():
    n = 256 * 256
    for alpha in (0.01, 0.1, 0.2):
        mask = sample_mask(MaskSpec(alpha=alpha, seed=3), (256, 256))
        bound = 3.0 * np.sqrt(alpha * (1 - alpha) / n)
        assert abs(mask.masked_fraction - alpha) <= bound


def test_mask_values_are_binary():
    mask = sample_mask(MaskSpec(alpha=0.3, seed=0), (32, 32))
    assert set(np.unique(mask.values)) <= {0.0, 1.0}
    with pytest.raises(ConfigurationError):
        MaskInstance(np.array([[0.5]]))


def test_vanishing_alpha_keeps_everything():
    mask = sample_mask(MaskSpec(alpha=1e-9, seed=0), (16, 16))
    assert mask.values.min() == 1.0


def test_mask_deterministic_per_seed_and_fresh_per_stream():
    spec = MaskSpec(alpha=0.1, seed=77)
    a = sample_mask(spec, (32, 32))
    b = sample_mask(spec, (32, 32))
    assert np.array_equal(a.values, b.values)

    gen = np.random.default_rng(77)
    c = sample_mask(spec, (32, 32), rng=gen)
    d = sample_mask(spec, (32, 32), rng=gen)
    assert not np.array_equal(c.values, d.values)


def test_distinct_seeds_give_distinct_masks():
    a = sample_mask(MaskSpec(alpha=0.1, seed=0), (64, 64))
    b = sample_mask(MaskSpec(alpha=0.1, seed=1), (64, 64))
    assert not np.array_equal(a.values, b.values)


def test_mask_pixel_pairs_uncorrelated():
    # pairwise correlation over 1e4 masks statistically indistinguishable from 0
    alpha, n_masks, side = 0.1, 10_000, 16
    gen = np.random.default_rng(5)
    spec = MaskSpec(alpha=alpha, seed=0)
    stack = np.stack([sample_mask(spec, (side, side), rng=gen).values for _ in range(n_masks)])
    flat = stack.reshape(n_masks, -1)
    pair_rng = np.random.default_rng(8)
    idx = pair_rng.choice(side * side, size=(20, 2), replace=False)
    for i, j in idx:
        r = np.corrcoef(flat[:, i], flat[:, j])[0, 1]
        assert abs(r) < 0.05


def test_apply_mask_identity_annihilator_and_pointwise(rng):
    image = rng.random((8, 8)).astype(np.float32)
    ones = MaskInstance(np.ones((8, 8), dtype=np.float32))
    zeros = MaskInstance(np.zeros((8, 8), dtype=np.float32))
    assert np.array_equal(apply_mask(ones, image), image)
    assert np.array_equal(apply_mask(zeros, image), np.zeros_like(image))

    single = np.ones((8, 8), dtype=np.float32)
    single[3, 5] = 0.0
    out = apply_mask(MaskInstance(single), np.ones((8, 8), dtype=np.float32))
    assert out[3, 5] == 0.0
    assert out.sum() == 63.0


def test_apply_mask_idempotent(rng):
    image = rng.random((16, 16)).astype(np.float32)
    mask = sample_mask(MaskSpec(alpha=0.2, seed=1), (16, 16))
    once = apply_mask(mask, image)
    assert np.array_equal(apply_mask(mask, once), once)


def test_apply_mask_shape_mismatch():
    mask = sample_mask(MaskSpec(alpha=0.1, seed=0), (4, 4))
    with pytest.raises(ValueError):
        apply_mask(mask, np.zeros((5, 5)))


# --- noise ----------------------------------------------------------------


def test_noise_spec_validation():
    with pytest.raises(ConfigurationError):
        NoiseSpec(sigma=-1.0)
    with pytest.raises(ConfigurationError):
        NoiseSpec(poisson_scale=-0.1)


def test_disabled_noise_is_zero_field():
    ref = np.full((32, 32), 0.5, dtype=np.float32)
    field = sample_noise(NoiseSpec(sigma=10.0, enabled=False), ref, rng=0)
    assert np.array_equal(field, np.zeros_like(ref))


def test_gaussian_component_statistics():
    # N(0, 10^2) on the 0-255 scale, checked over 1e6 samples
    ref = np.full((1000, 1000), 0.5, dtype=np.float32)
    field = sample_noise(NoiseSpec(sigma=10.0, poisson_scale=0.0), ref, rng=123) * 255.0
    assert abs(field.mean()) < 0.3
    assert 9.7 <= field.std() <= 10.3


def test_centered_poisson_moments():
    # Poisson moment oracle: std = sqrt(v*255/lam)/255 and the empirical
    # mean stays within 3 std errors of zero
    v, lam, n = 0.5, 4.0, 1_000_000
    ref = np.full((1000, 1000), v, dtype=np.float32)
    field = sample_noise(NoiseSpec(sigma=0.0, poisson_scale=lam), ref, rng=7)
    std_expected = np.sqrt(v * 255.0 / lam) / 255.0
    assert abs(field.mean()) < 3.0 * std_expected / np.sqrt(n)
    assert abs(field.std() - std_expected) / std_expected < 0.02


def test_combined_noise_zero_mean_contract():
    specs = [
        NoiseSpec(sigma=10.0),
        NoiseSpec(sigma=5.0, poisson_scale=2.0),
        NoiseSpec(sigma=0.0, poisson_scale=8.0),
    ]
    ref = np.full((600, 600), 0.4, dtype=np.float32)
    n = ref.size
    for i, spec in enumerate(specs):
        field = sample_noise(spec, ref, rng=100 + i)
        assert abs(field.mean()) <= 4.0 * field.std() / np.sqrt(n)


def test_noise_requires_normalized_reference():
    with pytest.raises(ValueError):
        sample_noise(NoiseSpec(sigma=1.0), np.full((4, 4), 2.0), rng=0)


def test_noise_deterministic_per_seed():
    ref = np.full((16, 16), 0.5, dtype=np.float32)
    spec = NoiseSpec(sigma=10.0, poisson_scale=1.0)
    assert np.array_equal(sample_noise(spec, ref, rng=5), sample_noise(spec, ref, rng=5))


# --- add_noise ------------------------------------------------------------


def test_add_noise_zero_identity(rng):
    image = rng.random((16, 16)).astype(np.float32)
    assert np.array_equal(add_noise(image, np.zeros_like(image)), image)


def test_add_noise_ceiling_clamp():
    image = np.ones((4, 4), dtype=np.float32)
    out = add_noise(image, np.full((4, 4), 0.5, dtype=np.float32))
    assert np.array_equal(out, np.ones((4, 4), dtype=np.float32))


def test_add_noise_floor_clamp():
    # the floor clamp mirrors the 255 ceiling: 0 - 5/255 saturates at 0
    image = np.zeros((4, 4), dtype=np.float32)
    out = add_noise(image, np.full((4, 4), -5.0 / 255.0, dtype=np.float32))
    assert np.array_equal(out, np.zeros((4, 4), dtype=np.float32))


def test_add_noise_shape_mismatch():
    with pytest.raises(ValueError):
        add_noise(np.zeros((4, 4)), np.zeros((4, 5)))
