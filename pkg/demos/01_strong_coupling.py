"""From NV level structure to a fitted avoided crossing.

Run: python demos/01_strong_coupling.py [--plot out.svg]

1. Find the field that tunes the lower transition of the strongly tuned
   subensemble onto a 2.7 GHz cavity.
2. Simulate the transmission map of the coupled cavity/ensemble system
   while the field sweeps the spins through resonance.
3. Add 1 % noise and fit the coupled-oscillator model to recover the
   collective coupling and spin linewidth.
"""
import argparse
import math

import numpy as np

from nvcavity.core import SystemParams, mhz, to_mhz
from nvcavity.levels import FieldConfig, ZeroFieldParams, field_for_resonance, transition_frequencies
from nvcavity.oscillator import (AvoidedCrossingFit, OscillatorSet, TransmissionSpectrum, doublet_separation,
                                 fit_avoided_crossing, normal_mode_splitting, transmission_map)

ap = argparse.ArgumentParser()
ap.add_argument("--plot", help="write the noisy map as an SVG heat map")
args = ap.parse_args()

wc = mhz(2700.0)
zfp = ZeroFieldParams()
phi = math.radians(22.5)
B = field_for_resonance(zfp, phi, wc, "minus-I")
lev = transition_frequencies(zfp, FieldConfig(B, phi))
print(f"resonance field for minus-I at phi=22.5 deg: {B * 1e3:.3f} mT")
for name in ("minus-I", "minus-II", "plus-II", "plus-I"):
    print(f"  {name:9s} {to_mhz(lev.branch(name)):10.3f} MHz")

# The cavity and ensemble parameters of the strongly coupled sample
p = SystemParams.from_collective(wc, mhz(0.4), mhz(9.51), eta=1.0)
ens = OscillatorSet.single(wc, mhz(9.51), mhz(10.92))
print(f"\nresonant normal-mode splitting: {to_mhz(normal_mode_splitting(p, gamma=ens.gamma)):.3f} MHz")

probe = wc + mhz(np.linspace(-30, 30, 241))
tuning = wc + mhz(np.linspace(-30, 30, 61))
clean = transmission_map(ens, p, probe, tuning)
mid = int(np.argmin(np.abs(tuning - wc)))
print(f"doublet read off the resonant trace: {to_mhz(doublet_separation(probe, clean.power[mid])):.3f} MHz")

rng = np.random.default_rng(1)
noisy = TransmissionSpectrum(probe, clean.power * (1 + 0.01 * rng.standard_normal(clean.power.shape)), tuning)
fit = fit_avoided_crossing(noisy, p, AvoidedCrossingFit(mhz(8.0), mhz(8.0), 0.0))
print(f"\nfit: g sqrt(N) = {to_mhz(fit.g_sqrtN):.3f} MHz (true 9.51), "
      f"gamma = {to_mhz(fit.gamma):.3f} MHz (true 10.92)")

if args.plot:
    from nvcavity.io import write_svg_heatmap
    write_svg_heatmap(args.plot, to_mhz(probe - wc), to_mhz(tuning - wc), noisy.power,
                      "probe - f_c (MHz)", "spin - f_c (MHz)", "transmission")
    print(f"wrote {args.plot}")
