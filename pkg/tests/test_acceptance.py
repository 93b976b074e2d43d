"""Acceptance criteria 1-14.

Each test prints one ``PASS``/``FAIL`` line (also collected into the pytest
terminal summary) and then asserts the same condition. Tolerances and
runtime budgets are the ones the criteria state; nothing is relaxed here.
"""
import math
import time

import numpy as np
import pytest

from conftest import VERDICTS
from nvcavity import io
from nvcavity.cli import main
from nvcavity.core import SystemParams, ThermalBath, coupling_vs_T_twolevel, hz, mhz
from nvcavity.cumulant import HierarchyConfig, exact_oracle, integrate_to_steady, probe_spectrum, rabi_vs_temperature
from nvcavity.levels import NV_AXES, FieldConfig, ZeroFieldParams, build_hamiltonian, transition_frequencies
from nvcavity.maser import (MaserError, PumpedParams, maser_steady_state, moment_stability, operating_map,
                            spectrum_integral)
from nvcavity.oscillator import (AvoidedCrossingFit, OscillatorSet, TransmissionSpectrum, fit_avoided_crossing,
                                 steady_amplitude, transmission_map)
from nvcavity.resolvent import (CouplingDensity, find_poles, level_shift, reconstruct_from_scans,
                                sweep_splitting_vs_width, transmission_gcc)

WC = mhz(2700.0)
# CODATA 2018: Bohr magneton over Planck constant (Hz/T)
MUB_OVER_H = 13.996244936e9


def verdict(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    print(line)
    VERDICTS.append(line)
    assert ok, line


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def test_criterion_01_lorentzian_bridge():
    with Clock() as c:
        p = SystemParams.from_collective(WC, mhz(0.4), mhz(9.51), gamma_hom=mhz(0.3))
        gl = mhz(10.92)
        w = WC + mhz(np.linspace(-40, 40, 500))
        dens = CouplingDensity.lorentzian(gl, WC, p.g2N)
        spec = transmission_gcc(dens, p, w)
        oset = OscillatorSet((WC, WC - mhz(100), WC + mhz(100), WC + mhz(200)), (p.N, 0.0, 0.0, 0.0), p.g,
                             gl + p.gamma_hom)
        ref = np.abs(steady_amplitude(oset, p, w, eta=1.0)) ** 2
        dev = float(np.max(np.abs(spec.power / ref - 1)))
    verdict(1, dev < 1e-6 and c.elapsed < 1.0, f"max rel dev {dev:.2e} (< 1e-6), {c.elapsed:.2f} s (< 1 s)")


def test_criterion_02_splitting_formula():
    with Clock() as c:
        G, gam, kap = mhz(9.51), mhz(10.92), mhz(0.4)
        p = SystemParams.from_collective(WC, kap, G, eta=1.0)
        oset = OscillatorSet.single(WC, G, gam, p.N)
        # maxima of the resonant transmission, located on a dense grid and refined by parabola
        w = WC + np.linspace(0, 2 * G, 40001)
        y = np.abs(steady_amplitude(oset, p, w)) ** 2
        i = int(np.argmax(y))
        y0, y1, y2 = y[i - 1:i + 2]
        x = w[i] + 0.5 * (w[1] - w[0]) * (y0 - y2) / (y0 - 2 * y1 + y2)
        numeric = 2 * (x - WC)
        formula = 2 * math.sqrt(G ** 2 - (gam / 2 - kap) ** 2 / 4)
        rel = numeric / formula - 1
    verdict(2, abs(rel) < 0.02 and c.elapsed < 1.0,
            f"numeric {numeric / mhz(1):.4f} MHz vs formula {formula / mhz(1):.4f} MHz, rel {rel:+.4f} "
            f"(|.| < 0.02), {c.elapsed:.2f} s")


def test_criterion_03_fit_round_trip():
    with Clock() as c:
        p = SystemParams.from_collective(WC, mhz(0.4), mhz(9.51), eta=1.0)
        truth = OscillatorSet.single(WC, mhz(9.51), mhz(10.92))
        probe = WC + mhz(np.linspace(-30, 30, 121))
        tuning = WC + mhz(np.linspace(-30, 30, 41))
        clean = transmission_map(truth, p, probe, tuning)
        good = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            data = TransmissionSpectrum(probe, clean.power * (1 + 0.01 * rng.standard_normal(clean.power.shape)),
                                        tuning)
            f = fit_avoided_crossing(data, p, AvoidedCrossingFit(mhz(8.0), mhz(8.0), 0.0))
            good += abs(f.gamma / mhz(10.92) - 1) < 0.03 and abs(f.g_sqrtN / mhz(9.51) - 1) < 0.03
    verdict(3, good >= 18 and c.elapsed < 30, f"{good}/20 seeds within 3% (>= 18), {c.elapsed:.1f} s (< 30 s)")


def test_criterion_04_closure_against_oracle():
    # weak single-spin coupling next to the widths, where a second-order closure is meant to hold
    p = SystemParams(omega_c=WC, kappa=mhz(0.4), gamma_hom=mhz(0.2), gamma_p=mhz(0.1), g=mhz(0.1), N=2,
                     eta=mhz(0.4) / 100)
    worst, worst12, cases = 0.0, 0.0, []
    with Clock() as c:
        for T in (0.0, 0.1):
            for det in (0.0, 0.3, 0.6):
                wp = WC + mhz(det)
                h = abs(integrate_to_steady(HierarchyConfig(), p, ThermalBath(T), wp).state.values[0]) ** 2
                o = abs(exact_oracle(2, 5, p, ThermalBath(T), wp).state.values[0]) ** 2
                worst = max(worst, abs(h / o - 1))
                cases.append((T, det, round(float(h / o - 1), 6)))
    # informational: the same comparison against a converged Fock space at 100 mK
    for det in (0.0, 0.3, 0.6):
        wp = WC + mhz(det)
        o = abs(exact_oracle(2, 12, p, ThermalBath(0.1), wp).state.values[0]) ** 2
        h = abs(integrate_to_steady(HierarchyConfig(), p, ThermalBath(0.1), wp).state.values[0]) ** 2
        worst12 = max(worst12, abs(h / o - 1))
    print("per case (T, detuning MHz, rel):", cases)
    verdict(4, worst < 0.01 and c.elapsed < 60,
            f"max |rel| {worst:.2e} vs cutoff-5 oracle (< 0.01); for reference {worst12:.2e} vs cutoff-12 "
            f"oracle at 100 mK; {c.elapsed:.1f} s (< 60 s)")


def test_criterion_05_pinned_inversion():
    with Clock() as c:
        p = SystemParams.from_collective(WC, mhz(0.4), mhz(9.51), gamma_hom=hz(1e3), gamma_p=mhz(0.1),
                                         eta=mhz(0.004))
        probe = WC + mhz(np.linspace(-30, 30, 200))
        spec = probe_spectrum(HierarchyConfig(pinned=True), p, 0.0, probe)
        oset = OscillatorSet.single(WC, p.g_sqrtN, p.gamma_hom + 2 * p.gamma_p, p.N)
        ref = np.abs(steady_amplitude(oset, p, probe)) ** 2
        dev = float(np.max(np.abs(spec.power / ref - 1)))
    verdict(5, dev < 1e-8 and not spec.mask.any() and c.elapsed < 10,
            f"max rel dev {dev:.2e} (< 1e-8), {c.elapsed:.2f} s (< 10 s)")


def test_criterion_06_temperature_law():
    p = SystemParams.from_collective(WC, mhz(0.4), mhz(9.51), gamma_hom=hz(1e3), gamma_p=mhz(0.1),
                                     eta=mhz(0.004))
    T = np.linspace(0.1, 1.0, 10)
    with Clock() as c:
        pts = rabi_vs_temperature(HierarchyConfig(), p, T)
    devs = [math.inf if pt.omega_measured is None else pt.omega_measured / coupling_vs_T_twolevel(p, pt.T) - 1
            for pt in pts]
    worst = max(abs(d) for d in devs)
    print("rel deviation per T:", [f"{t:.2f} K: {d:+.2e}" for t, d in zip(T, devs)])
    verdict(6, worst < 0.02 and c.elapsed < 300,
            f"max |rel| {worst:.2e} over {T.size} temperatures (< 0.02), {c.elapsed:.0f} s (< 300 s)")


def synthetic_scans(density, p, step, n_shift, n_probe, noise=0.0, seed=0):
    shifts = step * np.arange(-n_shift, n_shift + 1)
    probe = WC + step * np.arange(-n_probe, n_probe + 1)
    wall = WC + step * np.arange(-(n_shift + n_probe), n_shift + n_probe + 1)
    R_wall = level_shift(density, wall, p.gamma_hom)
    rng = np.random.default_rng(seed)
    power, var = [], []
    for k in range(shifts.size):
        R = R_wall[k:k + probe.size]
        clean = 1.0 / ((probe - WC - R.real) ** 2 + (p.kappa + np.abs(R.imag)) ** 2)
        power.append(clean * (1 + noise * rng.standard_normal(clean.size)) if noise else clean)
        var.append((noise * clean) ** 2)
    return shifts, [probe] * shifts.size, power, (var if noise else None)


@pytest.fixture(scope="module")
def reconstructions():
    p = SystemParams.from_collective(WC, mhz(0.4), mhz(9.51), gamma_hom=hz(1.0))
    d = CouplingDensity.qgaussian(1.389, mhz(12.54), WC, p.g2N)
    out = {}
    for noise in (0.0, 0.02):
        t0 = time.perf_counter()
        s, pr, pw, var = synthetic_scans(d, p, mhz(0.1), 600, 600, noise, seed=1)
        out[noise] = (reconstruct_from_scans(s, pr, pw, p, var, window=mhz(40) * (1 + 1e-12)),
                      time.perf_counter() - t0)
    return p, out


def test_criterion_07_reconstruction_round_trip(reconstructions):
    p, out = reconstructions
    (r0, t0), (r2, t2) = out[0.0], out[0.02]
    dq0, dg0 = r0.fit.q - 1.389, r0.fit.gamma_q / mhz(12.54) - 1
    dq2 = r2.fit.q - 1.389
    ok = abs(dq0) <= 0.05 and abs(dg0) < 0.02 and abs(dq2) <= 0.1 and t0 + t2 < 120
    verdict(7, ok, f"noiseless dq {dq0:+.4f} (<= 0.05), dgamma_q {dg0:+.2e} (< 0.02); 2% noise dq {dq2:+.4f} "
                   f"(<= 0.1); {t0 + t2:.0f} s (< 120 s)")


def test_criterion_08_weight_conservation(reconstructions):
    p, out = reconstructions
    rels = [out[k][0].weight / p.g2N - 1 for k in (0.0, 0.02)]
    verdict(8, all(abs(r) < 0.01 for r in rels),
            f"weight/g2N - 1 = {rels[0]:+.2e} noiseless, {rels[1]:+.2e} at 2% noise (< 0.01)")


def test_criterion_09_cavity_protection():
    couplings = [12, 16, 20, 24, 30]
    tracks = {}
    with Clock() as c:
        for kind in ("qgaussian", "lorentzian"):
            rows = []
            for G in couplings:
                p = SystemParams.from_collective(WC, mhz(0.4), mhz(G), gamma_hom=hz(1.0))
                d = (CouplingDensity.qgaussian(1.39, mhz(10), WC, p.g2N) if kind == "qgaussian"
                     else CouplingDensity.lorentzian(mhz(10), WC, p.g2N))
                ps = find_poles(d, p, WC, [WC + mhz(G) - 1j * mhz(1), WC - mhz(G) - 1j * mhz(1)])
                rows.append(np.sort(ps.half_widths))
            tracks[kind] = np.array(rows)
    q, lor = tracks["qgaussian"], tracks["lorentzian"]
    ok = bool(np.all(np.diff(q, axis=0) < 0) and np.all(np.diff(lor, axis=0) >= -1e-12 * lor[:-1])) and c.elapsed < 30
    verdict(9, ok, f"q-Gaussian |Im z| {np.round(q[:, 0] / mhz(1), 4).tolist()} MHz, Lorentzian "
                   f"{np.round(lor[:, 0] / mhz(1), 4).tolist()} MHz, {c.elapsed:.1f} s (< 30 s)")


def test_criterion_10_splitting_asymmetry():
    p = SystemParams.from_collective(WC, mhz(0.4), mhz(10), gamma_hom=hz(1.0))
    grid = mhz(np.array([0.0, 0.5, 1.0, 2.0]))
    omega = WC + mhz(np.linspace(-25, 25, 5001))
    with Clock() as c:
        s = {q: [r.splitting for r in sweep_splitting_vs_width(q, p, grid, omega_grid=omega)] for q in (1.39, 2.0)}
    ok = (all(x is not None and x > s[1.39][0] for x in s[1.39][1:])
          and all(x is None or x < s[2.0][0] for x in s[2.0][1:]) and c.elapsed < 30)
    fmt = lambda v: [None if x is None else round(float(x / mhz(1)), 4) for x in v]  # noqa: E731
    verdict(10, ok, f"splitting (MHz) at gamma_q 0, 0.5, 1, 2 MHz: q=1.39 {fmt(s[1.39])}, q=2 {fmt(s[2.0])}; "
                    f"{c.elapsed:.1f} s")


@pytest.fixture(scope="module")
def maser_map():
    base = PumpedParams(SystemParams(omega_c=WC, kappa=mhz(1.0), gamma_hom=hz(1.0), g=hz(10.0), N=1e12))
    t0 = time.perf_counter()
    m = operating_map(base, hz(np.logspace(-1, 9, 40)), hz(np.logspace(0, 10, 40)))
    return base, m, time.perf_counter() - t0


def test_criterion_11_maser_floor_and_region(maser_map):
    base, m, elapsed = maser_map
    p = base.params
    floor = p.g ** 2 / p.kappa / (2 * math.pi)  # Hz
    ok_pts = ~m.mask
    min_lw = float(np.nanmin(np.where(ok_pts, m.delta_f, np.nan)))
    part1 = floor / 2 <= min_lw <= 2 * floor

    # narrow emission: linewidth below the geometric mean of the bare cavity line and the floor
    narrow = math.sqrt(p.kappa / math.pi * floor)
    row = m.delta_f[0]
    idx = np.nonzero(row < narrow)[0]
    lo_ref, hi_ref = p.gamma_hom, 2 * p.g2N / p.kappa
    if idx.size:
        w_lo, w_hi = m.w[idx[0]], m.w[idx[-1]]
        part2 = 1 / 3 <= w_lo / lo_ref <= 3 and 1 / 3 <= w_hi / hi_ref <= 3
    else:
        w_lo = w_hi = math.nan
        part2 = False

    # degradation across one decade of dephasing centred on g^2 N / kappa, at the best pump rate
    crit = p.g2N / p.kappa
    j = int(np.nanargmin(row))
    col = np.log(m.delta_f[:, j])
    lg = np.log(m.gamma_p)
    lo_lw = math.exp(np.interp(math.log(crit / math.sqrt(10)), lg, col))
    hi_lw = math.exp(np.interp(math.log(crit * math.sqrt(10)), lg, col))
    part3 = hi_lw / lo_lw >= 10

    verdict(11, part1 and part2 and part3 and elapsed < 300,
            f"min linewidth {min_lw:.3g} Hz vs g^2/kappa {floor:.3g} Hz (factor 2: {part1}); narrow w range "
            f"[{w_lo / (2 * math.pi):.3g}, {w_hi / (2 * math.pi):.3g}] Hz vs [{lo_ref / (2 * math.pi):.3g}, "
            f"{hi_ref / (2 * math.pi):.3g}] Hz (factor 3: {part2}); degradation x{hi_lw / lo_lw:.3g} across "
            f"a decade at gamma_p,crit (>= 10: {part3}); {elapsed:.1f} s")


def test_criterion_12_maser_sum_rule():
    base = PumpedParams(SystemParams(omega_c=WC, kappa=mhz(1.0), gamma_hom=hz(1.0), g=hz(10.0), N=1e12))
    rng = np.random.default_rng(2024)
    rels, tried = [], 0
    while len(rels) < 10 and tried < 200:
        tried += 1
        w, gp = hz(10 ** rng.uniform(-1, 9)), hz(10 ** rng.uniform(0, 10))
        p = base.with_(w=w, params=base.params.with_(gamma_p=gp))
        try:
            st = maser_steady_state(p)
        except MaserError:
            continue
        if np.max(moment_stability(p, st).real) >= 0 or st.photons <= 0:
            continue
        rels.append(spectrum_integral(p, st) / (2 * math.pi * st.photons) - 1)
    worst = max(abs(r) for r in rels) if rels else math.inf
    verdict(12, len(rels) == 10 and worst < 0.01,
            f"{len(rels)} stable points, max |rel| {worst:.2e} (< 0.01)")


def test_criterion_13_nv_levels():
    with Clock() as c:
        zfp = ZeroFieldParams(mhz(2880.0), mhz(5.0))
        d0 = transition_frequencies(zfp, FieldConfig(0.0, 0.7))
        zero = (np.allclose(d0.omega_minus, zfp.D - zfp.E, rtol=1e-12)
                and np.allclose(d0.omega_plus, zfp.D + zfp.E, rtol=1e-12))
        rng = np.random.default_rng(13)
        pairs = True
        for phi in rng.uniform(0, 2 * math.pi, 20):
            d = transition_frequencies(zfp, FieldConfig(0.01, phi))
            for branch in (d.omega_minus, d.omega_plus):
                pairs &= bool(abs(branch[0] - branch[1]) < 1e-6 * mhz(1) and abs(branch[2] - branch[3]) < 1e-6 * mhz(1))
        d = transition_frequencies(zfp, FieldConfig(0.01, 0.0))
        fourfold = bool(np.ptp(d.omega_minus) < 1e-6 * mhz(1) and np.ptp(d.omega_plus) < 1e-6 * mhz(1))
        axis = NV_AXES[0]
        b1, b2 = 0.5, 0.6
        top = [np.linalg.eigvalsh(build_hamiltonian(zfp, b * axis, axis))[-1] for b in (b1, b2)]
        slope = (top[1] - top[0]) / (b2 - b1) / (2 * math.pi)
        rel = slope / (zfp.g_factor * MUB_OVER_H) - 1
    verdict(13, zero and pairs and fourfold and abs(rel) < 1e-3 and c.elapsed < 5,
            f"B=0 at D+-E: {zero}; pairs for 20 phi: {pairs}; four-fold at phi=0: {fourfold}; "
            f"Zeeman slope rel {rel:+.2e} (< 1e-3); {c.elapsed:.2f} s")


def test_criterion_14_determinism(tmp_path):
    cfgs = {
        "levels": "model = levels\n",
        "transmission": "model = oscillator\ngrid.tuning.count = 11\ngrid.probe.count = 101\n",
        "poles": "model = resolvent\n",
        "synth": "model = resolvent\nnoise.level = 0.02\nseed = 5\ngrid.tuning.count = 41\n",
        "maser-map": "model = maser\ngrid.w.count = 8\ngrid.gamma_p.count = 8\n",
    }
    runs = []
    for rep in ("a", "b"):
        files = {}
        for cmd, text in cfgs.items():
            cfg = tmp_path / f"{cmd}.cfg"
            cfg.write_text(text)
            out = tmp_path / rep / cmd
            assert main([cmd, "--config", str(cfg), "--out", str(out)]) == 0
        rc = tmp_path / rep / "reconstruct.cfg"
        rc.write_text(f"model = resolvent\ninput.scan = {tmp_path / rep / 'synth' / 'scan.csv'}\n")
        assert main(["reconstruct", "--config", str(rc), "--out", str(tmp_path / rep / "reconstruct")]) == 0
        for f in sorted((tmp_path / rep).rglob("*")):
            if f.suffix in (".csv", ".json"):
                files[str(f.relative_to(tmp_path / rep))] = f.read_bytes()
        runs.append(files)
    a, b = runs
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    verdict(14, same and len(a) >= 6, f"{len(a)} CSV/JSON outputs from 6 subcommands byte-identical: {same}")
