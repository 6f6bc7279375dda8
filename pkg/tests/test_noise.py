import numpy as np
import pytest

from holofid import (NoiseSpec, corr_length, covariance, perturb_loop,
                     realization_rng, square_loop)
from holofid.noise import draw_displacements


def test_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(n_err=3, sigma=0.1)
    with pytest.raises(ValueError):
        NoiseSpec(n_err=10, sigma=-0.1)


def test_zero_noise_interpolates_unshifted_knots():
    loop = square_loop(2.0)
    spec = NoiseSpec(n_err=32, sigma=0.0, seed=1)
    real = perturb_loop(loop, spec, realization_rng(spec.seed, 0))
    assert np.all(real.displacements == 0.0)
    s = np.linspace(0.0, 1.0, 64)
    base = loop.eval(s)
    dev = np.linalg.norm(real.perturbed.eval(s) - base, axis=1)
    # spline through exact square knots deviates only by corner rounding
    assert np.max(dev) < loop.length / 32


def test_knot_layout_on_square():
    loop = square_loop(10.0)
    spec = NoiseSpec(n_err=400, sigma=0.05, seed=3)
    real = perturb_loop(loop, spec, realization_rng(spec.seed, 0))
    assert real.displacements.shape == (400, 2)
    assert np.array_equal(real.displacements[0], np.zeros(2))
    knots = real.perturbed.knots - real.displacements
    gaps = np.linalg.norm(np.diff(np.vstack([knots, knots[:1]]), axis=0), axis=1)
    assert np.median(gaps) == pytest.approx(0.1, abs=1e-6)


def test_same_seed_and_index_is_bit_identical():
    loop = square_loop(4.0)
    spec = NoiseSpec(n_err=64, sigma=0.2, seed=99)
    a = perturb_loop(loop, spec, realization_rng(spec.seed, 17))
    b = perturb_loop(loop, spec, realization_rng(spec.seed, 17))
    assert np.array_equal(a.displacements, b.displacements)
    c = perturb_loop(loop, spec, realization_rng(spec.seed, 18))
    assert not np.array_equal(a.displacements, c.displacements)


def test_covariance_matrix():
    spec = NoiseSpec(n_err=16, sigma=0.15)
    cov = covariance(spec, dim=2)
    assert np.allclose(cov, np.diag([0.0225, 0.0225]))
    assert cov[0, 1] == 0.0 and cov[1, 0] == 0.0
    assert np.all(covariance(NoiseSpec(n_err=16, sigma=0.0), 2) == 0.0)


def test_corr_length_values():
    loop = square_loop(10.0)
    assert corr_length(loop, NoiseSpec(n_err=400, sigma=0.1)) == pytest.approx(0.1, abs=1e-12)
    assert corr_length(loop, NoiseSpec(n_err=100, sigma=0.1)) == pytest.approx(0.4, abs=1e-12)
    assert corr_length(loop, NoiseSpec(n_err=40, sigma=0.1)) == pytest.approx(1.0, abs=1e-12)


def test_sample_covariance_is_isotropic():
    sigma = 0.15
    draws = []
    for index in range(250):
        rng = realization_rng(12, index)
        draws.append(draw_displacements(rng, 401, 2, sigma)[1:])
    d = np.concatenate(draws)  # 100_000 displacement vectors
    cov = d.T @ d / len(d)
    assert np.allclose(np.diag(cov), sigma ** 2, rtol=0.03)
    assert abs(cov[0, 1]) < 0.03 * sigma ** 2


def test_streams_are_independent_across_indices():
    chunks = [realization_rng(5, i).standard_normal(1000) for i in range(100)]
    x = np.concatenate(chunks)
    lag1 = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert abs(lag1) < 0.01
