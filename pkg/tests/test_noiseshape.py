"""Spectral noise shaping against a direct-DFT reference."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttslab.noiseshape import (
    DegenerateNoiseError,
    band_fractions,
    lowpass,
    radius_grid,
    renormalize,
    shape_noise,
)

from .reference import (
    band_fractions_reference,
    dft2_lowpass_reference,
    normalized_radius_grid,
)


def test_radius_grid_matches_reference_and_corner_is_one():
    for shape in ((16, 16), (8, 12)):
        grid = radius_grid(*shape)
        assert np.array_equal(grid, normalized_radius_grid(*shape))
        assert grid[0, 0] == 0.0
        assert grid.max() == 1.0


@pytest.mark.parametrize("cutoff", [0.3, 0.55, 0.8])
def test_lowpass_matches_direct_dft(cutoff):
    rng = np.random.default_rng(42)
    x = rng.standard_normal((16, 16))
    got = lowpass(x, cutoff)
    want = dft2_lowpass_reference(x, cutoff)
    assert np.max(np.abs(got - want)) < 1e-10


def test_lowpass_matches_direct_dft_non_square():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((8, 12))
    got = lowpass(x, 0.5)
    want = dft2_lowpass_reference(x, 0.5)
    assert np.max(np.abs(got - want)) < 1e-10


def test_full_cutoff_is_a_strict_passthrough():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 16))
    assert lowpass(x, 1.0) is x


def test_dc_bin_survives_any_cutoff():
    x = np.full((16, 16), 3.0)
    out = lowpass(x, 0.05)
    assert np.max(np.abs(out - 3.0)) < 1e-12


def test_lowpass_is_a_projection():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((16, 16))
    once = lowpass(x, 0.4)
    twice = lowpass(once, 0.4)
    assert np.max(np.abs(once - twice)) < 1e-12


def test_lowpass_rejects_nonpositive_cutoff():
    with pytest.raises(ValueError):
        lowpass(np.zeros((4, 4)), 0.0)


def test_renormalize_frozen_two_by_two():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    want = np.array(
        [
            [-1.3416407864998738, -0.4472135954999579],
            [0.4472135954999579, 1.3416407864998738],
        ]
    )
    assert np.max(np.abs(renormalize(x) - want)) < 1e-15


def test_renormalize_output_statistics():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((5, 16, 16)) * 3.0 + 2.0
    out = renormalize(x)
    means = out.mean(axis=(-2, -1))
    stds = np.sqrt(np.mean(out**2, axis=(-2, -1)) - means**2)
    assert np.max(np.abs(means)) < 1e-12
    assert np.max(np.abs(stds - 1.0)) < 1e-12


def test_renormalize_raises_on_flat_sample():
    with pytest.raises(DegenerateNoiseError):
        renormalize(np.full((16, 16), 1.0))
    near_flat = np.full((16, 16), 2.0)
    near_flat[0, 0] += 1e-12
    with pytest.raises(DegenerateNoiseError):
        renormalize(near_flat)


def test_shape_noise_disabled_returns_same_array():
    rng = np.random.default_rng(1)
    draw = rng.standard_normal((16, 16))
    assert shape_noise(draw, 0.5, enabled=False) is draw


def test_shape_noise_kills_high_bands():
    rng = np.random.default_rng(2)
    draw = rng.standard_normal((16, 16))
    shaped = shape_noise(draw, 0.5)
    # measure with the direct DFT, independent of the fft used inside
    from .reference import dft2_power_reference

    power = dft2_power_reference(shaped)
    radius = normalized_radius_grid(16, 16)
    assert power[radius > 0.5].max() < 1e-18
    assert power[radius <= 0.5].sum() > 0


def test_shape_noise_on_constant_draw_is_degenerate():
    with pytest.raises(DegenerateNoiseError):
        shape_noise(np.full((16, 16), 5.0), 0.4)


@settings(max_examples=25, deadline=None)
@given(
    scale=st.floats(0.1, 10.0),
    offset=st.floats(-5.0, 5.0),
    seed=st.integers(0, 1000),
)
def test_shape_noise_invariant_to_affine_input_transforms(scale, offset, seed):
    """Low-pass is linear and renormalization strips affine structure."""
    draw = np.random.default_rng(seed).standard_normal((16, 16))
    a = shape_noise(draw, 0.6)
    b = shape_noise(scale * draw + offset, 0.6)
    assert np.max(np.abs(a - b)) < 1e-9


def test_batched_shaping_matches_per_sample_bitwise():
    rng = np.random.default_rng(9)
    draws = rng.standard_normal((6, 16, 16))
    batched = shape_noise(draws, 0.5)
    singles = np.stack([shape_noise(draws[i], 0.5) for i in range(6)])
    assert np.array_equal(batched, singles)


def test_band_fractions_match_direct_dft():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((16, 16))
    got = band_fractions(x, 4)
    want = band_fractions_reference(x, 4)
    assert np.max(np.abs(got - want)) < 1e-12
    assert abs(got.sum() - 1.0) < 1e-12


def test_band_fractions_constant_grid_is_all_dc():
    fractions = band_fractions(np.full((16, 16), 2.0), 4)
    assert np.max(np.abs(fractions - [1.0, 0.0, 0.0, 0.0])) < 1e-12


def test_band_fractions_checkerboard_is_top_band():
    i, j = np.indices((16, 16))
    checker = ((-1.0) ** (i + j)).astype(np.float64)
    fractions = band_fractions(checker, 4)
    assert np.max(np.abs(fractions - [0.0, 0.0, 0.0, 1.0])) < 1e-12


def test_band_fractions_zero_grid_is_uniform():
    fractions = band_fractions(np.zeros((16, 16)), 4)
    assert np.array_equal(fractions, np.full(4, 0.25))


def test_band_fractions_batched_matches_per_sample_bitwise():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((5, 16, 16))
    batched = band_fractions(x, 4)
    singles = np.stack([band_fractions(x[i], 4) for i in range(5)])
    assert np.array_equal(batched, singles)


def test_shaped_noise_after_lowpass_keeps_unit_scale():
    rng = np.random.default_rng(21)
    draw = rng.standard_normal((16, 16))
    shaped = shape_noise(draw, 0.3)
    assert abs(shaped.mean()) < 1e-12
    assert abs(np.sqrt(np.mean(shaped**2)) - 1.0) < 1e-12
