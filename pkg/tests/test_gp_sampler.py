import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nfar.errors import EmbeddingError
from nfar.gp_sampler import (NoiseSampler, StationaryKernel, build_spectrum, cached_spectrum, periodized_variance,
                             wrap_kernel)
from nfar.grid import GridSpec

E5 = math.exp(-5)
E10 = math.exp(-10)


def test_kernel_basic_properties():
    k = StationaryKernel()
    assert k(0.0, 0.0) == 1.0
    assert k(0.3, -0.2) == pytest.approx(k(-0.3, 0.2))
    assert k(0.5, 0.0) == pytest.approx(math.exp(-1.25))
    assert_allclose(k(0.1, 0.4), k.profile(0.1) * k.profile(0.4), rtol=1e-15)


def test_wrap_kernel_on_single_point_grid():
    out = wrap_kernel(StationaryKernel(scale=5.0), 1)
    assert_allclose(out, [[1.0, E5], [E5, E10]], rtol=1e-15)


def test_wrap_kernel_uses_min_distance_on_period_two():
    out = wrap_kernel(StationaryKernel(), GridSpec(size=4))
    assert out.shape == (8, 8)
    assert out[0, 0] == 1.0
    # u1 = 6/4 = 1.5 wraps to 0.5
    assert out[6, 0] == pytest.approx(math.exp(-1.25))
    assert_allclose(out, out.T)


def test_spectrum_of_single_point_grid_matches_hand_dft():
    spec = build_spectrum(StationaryKernel(scale=5.0), 1)
    assert spec.lambdas[0, 0] == pytest.approx(1 + 2 * E5 + E10, abs=1e-12)
    assert spec.lambdas[1, 1] == pytest.approx(1 - 2 * E5 + E10, abs=1e-12)
    assert spec.lambdas[0, 1] == pytest.approx(1 - E10, abs=1e-12)


def test_spectrum_is_nonnegative_at_full_resolution():
    spec = build_spectrum(StationaryKernel(scale=5.0), GridSpec(size=100))
    assert spec.lambdas.shape == (200, 200)
    assert spec.lambdas.min() >= 0.0
    assert spec.policy == 'clamp'
    assert spec.lambdas[0, 0] == pytest.approx(wrap_kernel(StationaryKernel(), 100).sum())
    report = spec.report()
    assert report['torus_size'] == 200
    assert report['lambda_min_clamped'] >= 0.0


@pytest.mark.parametrize("S", [32, 100])
def test_default_kernel_needs_clamping_at_working_sizes(S):
    k = StationaryKernel(scale=5.0)
    with pytest.raises(EmbeddingError):
        build_spectrum(k, S, policy='strict')
    spec = build_spectrum(k, S)
    report = spec.report()
    assert -1e-3 < report['relative_min'] < -1e-4
    assert spec.lambdas.min() >= 0.0
    assert spec.clamp_count == report['clamp_count'] > 0
    assert len(report['warnings']) == 1 and report['warnings'][0].startswith(f"Clamped {spec.clamp_count} ")


def test_slowly_decaying_kernel_fails_strict_embedding():
    # a long correlation length relative to the period leaves strongly negative eigenvalues
    with pytest.raises(EmbeddingError):
        build_spectrum(StationaryKernel(scale=0.05), 8, policy='strict')


def test_clamp_policies_on_non_embeddable_kernel():
    k = StationaryKernel(scale=0.05)
    clamped = build_spectrum(k, 8)
    assert clamped.clamp_count > 0
    assert clamped.lambdas.min() == 0.0
    assert not clamped.within_tolerance
    assert clamped.report()['relative_min'] < -1e-9

    rescaled = build_spectrum(k, 8, policy='clamp_rescale')
    assert rescaled.lambdas.min() == 0.0
    # sum(lambda) = N^2 K_circ(0, 0) with N = 16
    assert rescaled.lambdas.sum() == pytest.approx(16 ** 2 * wrap_kernel(k, 8)[0, 0], rel=1e-12)


def test_single_point_grid_embeds_exactly():
    spec = build_spectrum(StationaryKernel(scale=5.0), 1, policy='strict')
    assert spec.clamp_count == 0
    assert spec.within_tolerance


def test_fft_round_trip_convention():
    x = np.random.default_rng(1).normal(size=(8, 8))
    assert_allclose(np.fft.ifft2(np.fft.fft2(x)).real, x, rtol=1e-12, atol=1e-14)


def test_zero_coefficients_give_zero_field():
    sampler = NoiseSampler(cached_spectrum(StationaryKernel(), 8), 0)
    assert_array_equal(sampler.sample_field(np.zeros((16, 16), dtype=complex)).values, 0.0)


def test_equal_seeds_give_identical_fields():
    spectrum = cached_spectrum(StationaryKernel(), 16)
    a = NoiseSampler(spectrum, 42)
    b = NoiseSampler(spectrum, 42)
    for _ in range(3):
        assert_array_equal(a.sample_field().values, b.sample_field().values)
    assert not np.array_equal(NoiseSampler(spectrum, 43).sample_field().values, a.sample_field().values)


def test_periodized_variance_is_one_for_default_kernel():
    assert periodized_variance(StationaryKernel()) == pytest.approx(1.0, abs=1e-7)


@pytest.mark.slow
def test_empirical_covariance_matches_kernel():
    k = StationaryKernel()
    sampler = NoiseSampler(cached_spectrum(k, 16), 2024)
    n = 20_000
    draws = np.stack([sampler.sample_values() for _ in range(n)])
    base = draws[:, 0, 0]
    for lag in (0, 1, 4, 8):
        cov = float(np.mean(base * draws[:, lag, 0]))
        assert cov == pytest.approx(float(k(lag / 16, 0.0)), abs=0.03)

    # same lag from a different base point
    other = float(np.mean(draws[:, 5, 5] * draws[:, 9, 5]))
    assert other == pytest.approx(float(np.mean(base * draws[:, 4, 0])), abs=0.03)

    centred = base - base.mean()
    skew = float(np.mean(centred ** 3) / np.mean(centred ** 2) ** 1.5)
    assert abs(skew) < 3 * math.sqrt(6 / n)
