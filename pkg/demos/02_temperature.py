"""How the thermal spin polarisation sets the visible coupling.

Run: python demos/02_temperature.py

The moment hierarchy is driven weakly at each probe frequency until it
settles, and the doublet separation is turned back into a coupling. At low
temperature the ensemble is almost fully polarised; warming it shrinks the
population difference and with it the collective coupling, following
g sqrt(N tanh(hbar w / 2 k_B T)).

Before trusting the hierarchy we check it against the exact density-matrix
solution for two spins.
"""
import numpy as np

from nvcavity.core import SystemParams, ThermalBath, coupling_vs_T_twolevel, hz, mhz, to_mhz
from nvcavity.cumulant import HierarchyConfig, exact_oracle, integrate_to_steady, rabi_vs_temperature

wc = mhz(2700.0)
small = SystemParams(omega_c=wc, kappa=mhz(0.4), gamma_hom=mhz(0.2), gamma_p=mhz(0.1), g=mhz(0.1), N=2,
                     eta=mhz(0.004))
print("two spins, resonant drive: hierarchy vs exact master equation (cutoff 15)")
for T in (0.0, 0.1):
    h = abs(integrate_to_steady(HierarchyConfig(), small, ThermalBath(T), wc).state.values[0]) ** 2
    o = abs(exact_oracle(2, 15, small, ThermalBath(T), wc).state.values[0]) ** 2
    print(f"  T = {T * 1e3:5.0f} mK   |<a>|^2 ratio = {h / o:.6f}")

big = SystemParams.from_collective(wc, mhz(0.4), mhz(9.51), gamma_hom=hz(1e3), gamma_p=mhz(0.1),
                                   eta=mhz(0.004))
print("\nlarge ensemble, coupling read from the doublet (this takes about a minute)")
print("   T (K)   measured (MHz)   tanh law (MHz)")
for pt in rabi_vs_temperature(HierarchyConfig(), big, np.array([0.1, 0.3, 1.0])):
    law = coupling_vs_T_twolevel(big, pt.T)
    print(f"   {pt.T:5.2f}   {to_mhz(pt.omega_measured):14.4f}   {to_mhz(law):14.4f}")
