"""Where a pumped ensemble in the cavity masers, and how narrow the line gets.

Run: python demos/04_maser.py

A 12 x 12 map over pump rate w and dephasing gamma_p. Inside the window
gamma_hom < w < 2 g^2 N / kappa the photon number is large and the line
collapses far below the cavity width; dephasing beyond g^2 N / kappa
destroys it. Points where the steady state is not an attractor are marked.
"""
import math

import numpy as np

from nvcavity.core import SystemParams, hz, mhz
from nvcavity.maser import PumpedParams, emission_spectrum, maser_steady_state, operating_map

sp = SystemParams(omega_c=mhz(2700.0), kappa=mhz(1.0), gamma_hom=hz(1.0), g=hz(10.0), N=1e12)
base = PumpedParams(sp)
print(f"threshold window: {sp.gamma_hom / 2 / math.pi:.3g} Hz < w < {2 * sp.g2N / sp.kappa / 2 / math.pi:.3g} Hz")
print(f"critical dephasing g^2 N / kappa: {sp.g2N / sp.kappa / 2 / math.pi:.3g} Hz\n")

w = hz(np.logspace(-1, 9, 12))
gp = hz(np.logspace(0, 10, 12))
m = operating_map(base, w, gp)
print("log10 linewidth (Hz); '*' = pulsing, '.' = no solution")
print("gamma_p\\w " + " ".join(f"{math.log10(x / 2 / math.pi):5.1f}" for x in w))
for i, g in enumerate(gp):
    cells = []
    for j in range(w.size):
        if m.mask[i, j]:
            cells.append("    .")
        else:
            mark = "" if m.settles[i, j] else "*"
            cells.append(f"{math.log10(m.delta_f[i, j]):5.1f}"[-5 + len(mark):] + mark)
    print(f"{math.log10(g / 2 / math.pi):9.1f} " + " ".join(cells))

p = base.with_(w=hz(1e4))
st = maser_steady_state(p)
spec = emission_spectrum(p, st)
print(f"\nat w = 10 kHz, gamma_p = 0: {st.photons:.3g} photons, linewidth {spec.delta_f:.3g} Hz")
