import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvcavity.core import mhz
from nvcavity.qgauss import a_from_fwhm, fit_qgaussian, fwhm_q, qgauss_eval, qgauss_norm


def test_q2_is_lorentzian():
    w = np.linspace(-5, 5, 11)
    assert np.allclose(qgauss_eval(2.0, 1.7, 0.2, 3.0, 0.5, w), 0.5 + 3.0 / (1 + (w - 0.2) ** 2 / 1.7))


def test_q_to_one_is_gaussian():
    w = np.linspace(-3, 3, 13)
    assert np.allclose(qgauss_eval(1.0 + 1e-9, 1.3, 0.0, 1.0, 0.0, w), np.exp(-w ** 2 / 1.3), rtol=1e-6)


@pytest.mark.parametrize("q", [1.2, 1.39, 1.7])
def test_wing_slope(q):
    x = np.array([1e4, 2e4])
    L = qgauss_eval(q, 1.0, 0.0, 1.0, 0.0, x)
    slope = np.diff(np.log(L)) / np.diff(np.log(x))
    assert slope[0] == pytest.approx(-2.0 / (q - 1.0), rel=1e-6)


def test_fwhm_values():
    assert fwhm_q(2.0, mhz(5.0) ** 2) == pytest.approx(mhz(10.0), rel=1e-14)
    assert fwhm_q(1.0 + 1e-10, 2.0) == pytest.approx(2 * math.sqrt(2.0 * math.log(2.0)), rel=1e-8)


@settings(max_examples=50, deadline=None)
@given(q=st.floats(1.01, 2.9), a=st.floats(1e-2, 1e2))
def test_half_maximum(q, a):
    g = fwhm_q(q, a)
    assert qgauss_eval(q, a, 0.3, 2.0, 0.1, 0.3 + g / 2) == pytest.approx(0.1 + 1.0, rel=1e-10)
    assert a_from_fwhm(q, g) == pytest.approx(a, rel=1e-10)


@pytest.mark.parametrize("q", [1.2, 1.389, 2.0, 2.5])
def test_normalisation(q):
    from scipy.integrate import quad
    a = 1.0
    ref = quad(lambda x: qgauss_eval(q, a, 0, 1, 0, x), -np.inf, np.inf, epsabs=0, epsrel=1e-12, limit=500)[0]
    assert qgauss_norm(q, a) == pytest.approx(ref, rel=1e-8)


def test_fit_exact_samples():
    w = mhz(np.linspace(-60, 60, 401))
    q, a = 1.389, a_from_fwhm(1.389, mhz(12.54))
    f = fit_qgaussian(w, qgauss_eval(q, a, mhz(0.3), 5.0, 0.0, w))
    assert f.q == pytest.approx(q, rel=1e-6)
    assert f.gamma_q == pytest.approx(mhz(12.54), rel=1e-6)
    assert f.omega0 == pytest.approx(mhz(0.3), rel=1e-6)


def test_fit_lorentzian_data_gives_q_two():
    w = np.linspace(-40, 40, 301)
    y = 1.0 / (1 + (w / 4.0) ** 2)
    y = y * (1 + 0.01 * np.random.default_rng(3).standard_normal(w.size))
    assert abs(fit_qgaussian(w, y).q - 2.0) < 0.05
