import math
import warnings

import numpy as np
import pytest

from nvcavity.core import SystemParams, ThermalBath, hz, mhz, n_bar
from nvcavity.cumulant import (NAMES, HierarchyConfig, MomentState, Rates, exact_oracle, hierarchy_rhs,
                               integrate_to_steady, liouvillian, moment_derivatives, moments_from_rho,
                               probe_spectrum)
from nvcavity.oscillator import OscillatorSet, steady_amplitude

WC = mhz(2700.0)
SMALL = SystemParams(omega_c=WC, kappa=mhz(0.4), gamma_hom=mhz(0.2), gamma_p=mhz(0.1), g=mhz(0.5), N=2,
                     eta=mhz(0.004))
BIG = SystemParams.from_collective(WC, mhz(0.4), mhz(9.51), gamma_hom=hz(1e3), gamma_p=mhz(0.1),
                                   eta=mhz(0.004))


def test_free_decay_of_inversion():
    p = SMALL.with_(g=0.0, eta=0.0)
    v = np.zeros(12, dtype=complex)
    d = moment_derivatives(MomentState(v), p, ThermalBath(0.0), WC)
    assert d.values[NAMES.index("sz")].real == pytest.approx(-p.gamma_hom, rel=1e-14)


def symmetric_random_state(rng, cut, d):
    X = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    keep = np.zeros(d, bool)
    keep[:(cut - 1) * 4] = True  # leave the top Fock levels empty so truncation is exact
    X[~keep, :] = 0
    X[:, ~keep] = 0
    rho = X @ X.conj().T
    swap = np.zeros((4, 4))
    for s1 in range(2):
        for s2 in range(2):
            swap[s2 * 2 + s1, s1 * 2 + s2] = 1
    swap = np.kron(np.eye(cut + 1), swap)
    rho = rho + swap @ rho @ swap.T
    return rho / np.trace(rho)


def test_hierarchy_matches_exact_liouvillian_derivatives():
    """With the exact third moments supplied, the right-hand side is exact for N=2."""
    rng = np.random.default_rng(7)
    p = SystemParams(omega_c=10.0, kappa=0.7, gamma_hom=0.3, gamma_p=0.2, g=0.9, N=2, eta=0.4)
    cut = 6
    omega_p, omega_s = 9.7, 10.5
    bath = ThermalBath(1.0e-10)  # order-one occupation at omega ~ 10 rad/s
    L, ops = liouvillian(2, cut, p, bath, omega_p, omega_s)
    r = Rates.build(p.with_(N=2), bath, omega_p, omega_s)
    assert r.n_s > 0.1 and r.n_c > 0.1
    d = ops[0].shape[0]
    for _ in range(10):
        rho = symmetric_random_state(rng, cut, d)
        v, third = moments_from_rho(rho, ops, third=True)
        drho = (L @ rho.reshape(-1, order="F")).reshape(d, d, order="F")
        exact = moments_from_rho(drho, ops)
        got = hierarchy_rhs(v, r, third)
        assert np.max(np.abs(got - exact)) < 1e-10


def test_liouvillian_preserves_trace():
    L, ops = liouvillian(2, 4, SMALL, ThermalBath(0.1), WC)
    d = ops[0].shape[0]
    trace_row = np.eye(d).reshape(-1, order="F")
    assert np.max(np.abs(trace_row @ L)) < 1e-10 * np.max(np.abs(L))


def test_oracle_vacuum():
    o = exact_oracle(2, 3, SMALL.with_(eta=0.0), ThermalBath(0.0), WC)
    assert np.max(np.abs(o.state.values[[0, 1, 3, 4, 6, 7, 8, 9, 10]])) < 1e-12
    assert o.state.values[2].real == pytest.approx(-1.0, abs=1e-12)
    assert np.trace(o.rho @ o.rho).real == pytest.approx(1.0, abs=1e-12)


def test_oracle_single_spin_detailed_balance():
    T = 0.1
    o = exact_oracle(1, 25, SMALL.with_(g=0.0, eta=0.0), ThermalBath(T), WC)
    assert o.state.values[2].real == pytest.approx(-1.0 / (1.0 + 2.0 * n_bar(T, WC)), rel=1e-10)


def test_oracle_limits():
    with pytest.raises(ValueError):
        exact_oracle(4, 2, SMALL, 0.0, WC)
    with pytest.warns(RuntimeWarning):
        exact_oracle(1, 1, SMALL.with_(eta=mhz(1.0)), 0.0, WC)


def test_vacuum_fixed_point():
    res = integrate_to_steady(HierarchyConfig(), BIG.with_(eta=0.0), 0.0, WC)
    assert res.converged
    assert abs(res.state.values[0]) == 0.0 or abs(res.state.values[0]) < 1e-20
    assert res.state.values[2].real == pytest.approx(-1.0, abs=1e-12)


@pytest.mark.parametrize("det", [0.0, 3.0, 9.0])
def test_pinned_mode_equals_oscillator_model(det):
    wp = WC + mhz(det)
    res = integrate_to_steady(HierarchyConfig(pinned=True), BIG, 0.0, wp)
    oset = OscillatorSet.single(WC, BIG.g_sqrtN, BIG.gamma_hom + 2 * BIG.gamma_p, BIG.N)
    ref = steady_amplitude(oset, BIG, wp)
    assert abs(res.state.values[0] - ref) / abs(ref) < 1e-8


@pytest.mark.parametrize("det", [0.0, 0.6])
def test_closure_against_oracle_zero_temperature(det):
    wp = WC + mhz(det)
    o = exact_oracle(2, 5, SMALL, ThermalBath(0.0), wp)
    h = integrate_to_steady(HierarchyConfig(), SMALL, ThermalBath(0.0), wp)
    assert abs(h.state.values[0]) ** 2 / abs(o.state.values[0]) ** 2 - 1 == pytest.approx(0, abs=0.01)


def test_weak_drive_spectrum_matches_oscillator_model():
    probe = WC + mhz(np.linspace(-15, 15, 13))
    spec = probe_spectrum(HierarchyConfig(), BIG, 0.0, probe)
    oset = OscillatorSet.single(WC, BIG.g_sqrtN, BIG.gamma_hom + 2 * BIG.gamma_p, BIG.N)
    ref = np.abs(steady_amplitude(oset, BIG, probe)) ** 2
    assert not spec.mask.any()
    assert np.max(np.abs(spec.power / ref - 1)) < 1e-6


def test_spectrum_points_are_independent_of_the_grid():
    probe = WC + mhz(np.linspace(-12, 12, 9))
    full = probe_spectrum(HierarchyConfig(), BIG, 0.3, probe).power
    odd = probe_spectrum(HierarchyConfig(), BIG, 0.3, probe[1::2]).power
    even = probe_spectrum(HierarchyConfig(), BIG, 0.3, probe[::2]).power
    assert np.allclose(full[1::2], odd, rtol=1e-7) and np.allclose(full[::2], even, rtol=1e-7)


def test_doublet_shrinks_with_temperature():
    from nvcavity.oscillator import doublet_separation
    probe = WC + mhz(np.linspace(-12, 12, 121))
    seps = []
    for T in (0.05, 0.3, 0.6):
        spec = probe_spectrum(HierarchyConfig(), BIG, T, probe)
        seps.append(doublet_separation(probe, spec.power))
    assert seps[0] > seps[1] > seps[2]


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        HierarchyConfig(rtol=0.0)
    with pytest.raises(ValueError):
        probe_spectrum(HierarchyConfig(), BIG, 0.0, [WC + 1.0, WC])
