import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kinsurf.fitting import FitConfig, fit
from kinsurf.field import Order
from kinsurf.robust import (
    SIGMA_FLOOR,
    StudentTState,
    e_step,
    em_rounds,
    m_step_nu,
    m_step_sigma,
    nu_equation,
)
from kinsurf.special import digamma, trigamma
from kinsurf.synthetic import ShapeSpec, generate

positive = st.floats(0.05, 1e7)


# -- special functions -------------------------------------------------------------

@given(positive)
def test_digamma_against_mpmath(x):
    ref = float(mpmath.digamma(x))
    assert abs(digamma(x) - ref) < 1e-12 * max(1.0, abs(ref))


@given(positive)
def test_trigamma_against_mpmath(x):
    ref = float(mpmath.polygamma(1, x))
    assert abs(trigamma(x) - ref) < 1e-12 * max(1.0, abs(ref))


def test_digamma_known_values():
    euler = 0.5772156649015329
    assert digamma(1.0) == pytest.approx(-euler, abs=1e-13)
    assert digamma(0.5) == pytest.approx(-euler - 2 * math.log(2), abs=1e-13)
    assert trigamma(1.0) == pytest.approx(math.pi ** 2 / 6, abs=1e-13)


def test_special_domain():
    with pytest.raises(ValueError):
        digamma(0.0)
    with pytest.raises(ValueError):
        trigamma(-1.0)


# -- E and M steps --------------------------------------------------------------

def test_e_step_examples():
    nu, sigma = 3.0, 0.5
    assert e_step([0.0], nu, sigma)[0] == pytest.approx((nu + 1) / nu)
    d = math.sqrt(nu * sigma)
    assert e_step([d], nu, sigma)[0] == pytest.approx((nu + 1) / (2 * nu))
    assert np.allclose(e_step([0.0, 5.0, 1e3], 1e12, 1.0), 1.0)


def test_e_step_formula(rng):
    d = rng.normal(size=100)
    nu, sigma = 2.5, 0.3
    z = e_step(d, nu, sigma)
    assert np.abs(z - (nu + 1) / (nu + d ** 2 / sigma)).max() < 1e-15


@given(st.lists(st.floats(0, 100), min_size=2, max_size=20, unique=True), st.floats(0.1, 100), st.floats(1e-3, 10))
def test_e_step_monotone_and_bounded(d, nu, sigma):
    d = np.sort(np.array(d))
    z = e_step(d, nu, sigma)
    assert np.all(np.diff(z) <= 0)
    assert np.all(z > 0) and np.all(z <= (nu + 1) / nu * (1 + 1e-15))


def test_e_step_rejects_bad_parameters():
    with pytest.raises(ValueError):
        e_step([1.0], 0.0, 1.0)


def test_sigma_examples(rng):
    d = rng.normal(size=50)
    assert m_step_sigma(d, np.ones(50)) == pytest.approx(np.mean(d ** 2), rel=1e-14)
    assert m_step_sigma([2.0, 100.0], [1.0, 0.0]) == pytest.approx(2.0)
    z = rng.uniform(0.1, 1.5, 50)
    direct = sum(zi * di * di for zi, di in zip(z, d)) / len(d)
    assert m_step_sigma(d, z) == pytest.approx(direct, rel=1e-14)
    assert m_step_sigma(np.zeros(5), np.ones(5)) == SIGMA_FLOOR


def test_nu_gaussian_limit():
    assert m_step_nu(np.ones(100), (0.1, 1e6)) == 1e6


def test_nu_root_residual_bimodal():
    z = np.r_[np.full(50, 1.0), np.full(50, 0.05)]
    nu = m_step_nu(z)
    s = float(np.mean(np.log(z) - z))
    assert 0.1 < nu < 1e6
    assert abs(nu_equation(nu, s)) < 1e-8


@given(st.lists(st.floats(0.01, 3), min_size=5, max_size=50))
def test_nu_root_or_clamp(z):
    z = np.array(z)
    lo, hi = 0.1, 1e6
    nu = m_step_nu(z, (lo, hi))
    s = float(np.mean(np.log(z) - z))
    assert lo <= nu <= hi
    if nu not in (lo, hi):
        assert abs(nu_equation(nu, s)) < 1e-8


def test_em_recovers_student_t_parameters(rng):
    # fixed distances drawn from a scaled t distribution: EM alone has to
    # find the generating nu and scale
    for true_nu in (2.0, 8.0):
        d = 0.1 * rng.standard_t(true_nu, 100000)
        state = StudentTState(nu=30.0, sigma=1.0, z=np.ones(len(d)))
        em_rounds(d, state, FitConfig(em_inner_iterations=500), rtol=1e-10)
        assert state.nu == pytest.approx(true_nu, rel=0.1)
        assert state.sigma == pytest.approx(0.01, rel=0.1)


def test_em_fixed_point_equal_distances():
    d = np.full(40, 0.3)
    state = StudentTState(nu=5.0, sigma=1.0, z=np.ones(40))
    em_rounds(d, state, FitConfig(em_inner_iterations=1))
    assert np.allclose(state.z, state.z[0])
    assert state.sigma == pytest.approx(state.z[0] * 0.09)


def test_em_zero_distances_are_safe():
    state = StudentTState(nu=5.0, sigma=1.0, z=np.ones(10))
    em_rounds(np.zeros(10), state, FitConfig())
    assert state.sigma >= SIGMA_FLOOR and np.all(np.isfinite(state.z))


# -- robust fits ---------------------------------------------------------------------

def test_robust_report_fields():
    cloud = generate(ShapeSpec("straight-helix", n_samples=800, noise_sigma=0.01))
    rep = fit(cloud, FitConfig(order=Order.FIRST, robust=True))
    assert rep.nu is not None and rep.sigma > 0
    assert len(rep.weights) == len(cloud)
    assert np.all(rep.weights > 0) and np.all(rep.weights <= 1 + 1 / rep.nu + 1e-12)
    assert rep.inlier_rmse is not None
    assert np.linalg.norm(rep.params.flat()) == pytest.approx(1.0)


def test_clean_gaussian_noise_gives_large_nu():
    cloud = generate(ShapeSpec("cylinder", n_samples=3000, noise_sigma=0.01))
    rep = fit(cloud, FitConfig(order=Order.FIRST, robust=True))
    assert rep.nu > 100


def _spiral_with_outlier():
    from kinsurf.synthetic import merge_with_outlier

    base = generate(ShapeSpec("log-spiral", n_samples=4000, noise_sigma=0.005))
    out = generate(ShapeSpec("cylinder-outlier", n_samples=1000, seed=7, center=(0.5, 0.0, 1.0),
                             axis=(0.0, 1.0, 0.0), params={"radius": 0.3, "height": 3.0}))
    return base, merge_with_outlier(base, out)


def test_spiral_outlier_weights_and_recovery():
    base, cloud = _spiral_with_outlier()
    rep = fit(cloud, FitConfig(order=Order.SECOND, robust=True))
    z = rep.weights
    assert np.median(z[~cloud.labels]) < 0.2
    assert np.median(z[cloud.labels]) > 0.8
    clean = fit(base, FitConfig(order=Order.SECOND))
    assert rep.inlier_rmse < 2 * clean.rmse
