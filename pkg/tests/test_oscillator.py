import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from nvcavity.core import SystemParams, mhz
from nvcavity.fitting import FitError
from nvcavity.oscillator import (AvoidedCrossingFit, OscillatorSet, TransmissionSpectrum, coupling_from_splitting,
                                 doublet_separation, find_peaks, fit_avoided_crossing, normal_mode_splitting,
                                 offresonant_shift_and_damping, steady_amplitude, transmission_map)

WC = mhz(2700.0)
P = SystemParams.from_collective(WC, mhz(0.4), mhz(9.51), eta=1.0)
GAMMA = mhz(10.92)


def test_offresonant_terms_vanish_without_other_ensembles():
    assert offresonant_shift_and_damping(OscillatorSet.single(WC, mhz(9.51), GAMMA), WC) == (0.0, 0.0)


def test_offresonant_symmetric_pair_cancels_shift():
    g = mhz(1.0) / math.sqrt(1e12)
    oset = OscillatorSet((WC, WC + mhz(50), WC - mhz(50)), (1e12, 1e12, 1e12), g, GAMMA)
    gam, u = offresonant_shift_and_damping(oset, WC)
    assert abs(u) < 1e-9 * gam
    d = mhz(50)
    assert gam == pytest.approx(2 * g * g * 1e12 * (GAMMA / 2) / ((GAMMA / 2) ** 2 + d * d), rel=1e-12)


def test_resonant_offresonant_term_is_maximal():
    g = mhz(1.0) / math.sqrt(1e12)
    oset = OscillatorSet((WC, WC), (1e12, 1e12), g, GAMMA)
    gam, u = offresonant_shift_and_damping(oset, WC)
    assert u == 0.0
    assert gam == pytest.approx(g * g * 1e12 * 2 / GAMMA, rel=1e-14)


def test_bare_cavity_lorentzian():
    oset = OscillatorSet((WC,), (0.0,), 0.0, GAMMA)
    wp = WC + mhz(np.linspace(-3, 3, 31))
    a = steady_amplitude(oset, P, wp)
    assert np.allclose(np.abs(a) ** 2, 1.0 / (P.kappa ** 2 + (WC - wp) ** 2), rtol=1e-13)


def test_resonant_dip_value():
    oset = OscillatorSet.single(WC, mhz(9.51), GAMMA)
    a = steady_amplitude(oset, P, WC)
    assert abs(a) ** 2 == pytest.approx(1.0 / (P.kappa + P.g2N * 2 / GAMMA) ** 2, rel=1e-13)


def independent_peak_separation(G, gamma, kappa):
    # maximise |1 / (kappa - i x + G^2 / (gamma/2 - i x))|^2 on x > 0 directly
    f = lambda x: -1.0 / abs(kappa - 1j * x + G * G / (gamma / 2 - 1j * x)) ** 2  # noqa: E731
    return 2 * minimize_scalar(f, bounds=(0, 3 * G), method="bounded", options={"xatol": 1e-6}).x


def test_splitting_formula_value():
    s = normal_mode_splitting(P, gamma=GAMMA)
    assert s / mhz(1) == pytest.approx(18.3, abs=0.05)
    assert coupling_from_splitting(s, P.kappa, GAMMA) == pytest.approx(P.g_sqrtN, rel=1e-12)
    assert normal_mode_splitting(P, gamma=2 * P.kappa) == pytest.approx(2 * P.g_sqrtN, rel=1e-14)
    assert normal_mode_splitting(P, gamma=GAMMA, g_sqrtN=mhz(0.1)) is None


def test_numerical_peaks_match_direct_maximisation():
    oset = OscillatorSet.single(WC, mhz(9.51), GAMMA)
    wp = WC + mhz(np.linspace(-30, 30, 6001))
    sep = doublet_separation(wp, np.abs(steady_amplitude(oset, P, wp)) ** 2)
    assert sep == pytest.approx(independent_peak_separation(P.g_sqrtN, GAMMA, P.kappa), abs=mhz(0.01))


def test_map_symmetric_on_resonance():
    oset = OscillatorSet.single(WC, mhz(9.51), GAMMA)
    off = mhz(np.linspace(-20, 20, 81))
    m = transmission_map(oset, P, WC + off, [WC])
    assert np.allclose(m.power[0], m.power[0][::-1], rtol=1e-12)


def test_doublet_merges_as_gamma_grows():
    wp = WC + mhz(np.linspace(-30, 30, 1201))
    counts = []
    for gam in mhz(np.array([5.0, 20.0, 40.0, 80.0])):
        oset = OscillatorSet.single(WC, mhz(9.51), gam)
        counts.append(len(find_peaks(wp, np.abs(steady_amplitude(oset, P, wp)) ** 2)))
    assert counts[0] == 2 and counts[-1] == 1
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_grid_refinement_moves_peaks_less_than_a_cell():
    oset = OscillatorSet.single(WC, mhz(9.51), GAMMA)
    coarse = WC + mhz(np.linspace(-30, 30, 121))
    fine = WC + mhz(np.linspace(-30, 30, 12001))
    pc = find_peaks(coarse, np.abs(steady_amplitude(oset, P, coarse)) ** 2)
    pf = find_peaks(fine, np.abs(steady_amplitude(oset, P, fine)) ** 2)
    cell = coarse[1] - coarse[0]
    for (a, _), (b, _) in zip(pc, pf):
        assert abs(a - b) < cell


def test_unsorted_grids_rejected():
    oset = OscillatorSet.single(WC, mhz(9.51), GAMMA)
    with pytest.raises(ValueError):
        transmission_map(oset, P, [WC + 1, WC], [WC])


def crossing_data():
    oset = OscillatorSet.single(WC, mhz(9.51), GAMMA)
    probe = WC + mhz(np.linspace(-30, 30, 121))
    tuning = WC + mhz(np.linspace(-30, 30, 41))
    return transmission_map(oset, P, probe, tuning)


def test_fit_noiseless_recovery():
    f = fit_avoided_crossing(crossing_data(), P, AvoidedCrossingFit(mhz(8.0), mhz(8.0), 0.0))
    assert f.gamma == pytest.approx(GAMMA, rel=1e-6)
    assert f.g_sqrtN == pytest.approx(mhz(9.51), rel=1e-6)


def test_fit_flat_input_never_silently_succeeds():
    m = crossing_data()
    flat = TransmissionSpectrum(m.probe, np.ones_like(m.power), m.tuning)
    with pytest.raises(FitError):
        fit_avoided_crossing(flat, P, AvoidedCrossingFit(mhz(8.0), mhz(8.0), 0.0))
