"""Coupled damped oscillators: cavity + one near-resonant and three
off-resonant spin subensembles, and the avoided-crossing fit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import SystemParams
from .fitting import FitConfig, FitError, FitProblem, least_squares


@dataclass(frozen=True)
class OscillatorSet:
    """Subensemble j=0 is the near-resonant one (index 0 here, "1" in the
    usual numbering); all share ``g`` and the effective width ``gamma``."""

    omega_a: tuple
    N: tuple
    g: float
    gamma: float

    def __post_init__(self):
        if len(self.omega_a) != len(self.N) or len(self.N) == 0:
            raise ValueError("omega_a and N must have the same non-zero length")
        if any(n < 0 for n in self.N):
            raise ValueError("spin counts must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")

    @classmethod
    def single(cls, omega_a1, g_sqrtN, gamma, N=1e12):
        return cls((float(omega_a1),), (float(N),), g_sqrtN / math.sqrt(N), float(gamma))

    def g2N(self, j):
        return self.g * self.g * self.N[j]

    def with_detuning(self, omega_a1):
        return OscillatorSet((float(omega_a1),) + tuple(self.omega_a[1:]), self.N, self.g, self.gamma)


@dataclass
class TransmissionSpectrum:
    """|<a_c>|^2 on a probe grid, optionally against a tuning axis.

    ``power`` has shape (n_tuning, n_probe) when ``tuning`` is given,
    otherwise (n_probe,). ``mask`` marks samples that failed to compute.
    """

    probe: np.ndarray
    power: np.ndarray
    tuning: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    report: dict = field(default_factory=dict)


def offresonant_shift_and_damping(oset: OscillatorSet, omega_p):
    """(Gamma_a, U_a) from the off-resonant subensembles j >= 1."""
    omega_p = np.asarray(omega_p, dtype=float)
    half = oset.gamma / 2.0
    gam = np.zeros_like(omega_p)
    shift = np.zeros_like(omega_p)
    for j in range(1, len(oset.N)):
        d = oset.omega_a[j] - omega_p
        den = half * half + d * d
        gam = gam + oset.g2N(j) * half / den
        shift = shift + oset.g2N(j) * d / den
    if gam.ndim == 0:
        return float(gam), float(shift)
    return gam, shift


def steady_amplitude(oset: OscillatorSet, params: SystemParams, omega_p, freeze_offresonant=True,
                     eta=None):
    """Steady cavity field <a_c>_st (complex) for probe frequency ``omega_p``.

    With ``freeze_offresonant`` the off-resonant shift and damping are
    evaluated once at omega_p = omega_c instead of per probe frequency.
    ``eta`` overrides ``params.eta``.
    """
    eta = params.eta if eta is None else eta
    omega_p = np.asarray(omega_p, dtype=float)
    ref = params.omega_c if freeze_offresonant else omega_p
    gam_a, u_a = offresonant_shift_and_damping(oset, ref)
    d_c = params.omega_c - omega_p
    d_a1 = oset.omega_a[0] - omega_p
    den = params.kappa + gam_a + 1j * (d_c - u_a) + oset.g2N(0) / (oset.gamma / 2.0 + 1j * d_a1)
    return eta / den


def normal_mode_splitting(params: SystemParams, N1=None, gamma=None, g_sqrtN=None):
    """Splitting 2 sqrt(g^2 N - (gamma/2 - kappa)^2 / 4), or None if unresolved.

    The collective coupling comes from ``g_sqrtN`` or ``params.g * sqrt(N1)``.
    """
    if g_sqrtN is None:
        N1 = params.N if N1 is None else N1
        g_sqrtN = params.g * math.sqrt(N1)
    if gamma is None:
        raise ValueError("gamma is required")
    x = (gamma / 2.0 - params.kappa) / 2.0
    if g_sqrtN <= abs(x):
        return None
    return 2.0 * math.sqrt(g_sqrtN ** 2 - x * x)


def coupling_from_splitting(splitting, kappa, gamma):
    """Invert the splitting formula for g sqrt(N)."""
    return math.sqrt((splitting / 2.0) ** 2 + ((gamma / 2.0 - kappa) / 2.0) ** 2)


def transmission_map(oset: OscillatorSet, params: SystemParams, probe_grid, tuning_grid,
                     freeze_offresonant=True, eta=1.0) -> TransmissionSpectrum:
    """|<a_c>|^2 over (omega_a1 tuning, probe) grids."""
    probe = np.asarray(probe_grid, dtype=float)
    tuning = np.asarray(tuning_grid, dtype=float)
    for name, grid in (("probe", probe), ("tuning", tuning)):
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError(f"{name} grid must be strictly increasing")
    power = np.empty((tuning.size, probe.size))
    for i, wa in enumerate(tuning):
        power[i] = np.abs(steady_amplitude(oset.with_detuning(wa), params, probe,
                                           freeze_offresonant, eta=eta)) ** 2
    return TransmissionSpectrum(probe=probe, power=power, tuning=tuning)


# ------------------------------------------------------------ peak finding


def find_peaks(x, y, visibility=0.05):
    """Maxima of a sampled curve refined by a parabola through 3 points.

    Adjacent maxima separated by a dip shallower than ``visibility`` times
    the lower of the two peaks are merged (the higher one is kept).
    Returns a list of (position, height).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    idx = [k for k in range(1, y.size - 1) if y[k] >= y[k - 1] and y[k] > y[k + 1]]
    peaks = []
    for k in idx:
        y0, y1, y2 = y[k - 1], y[k], y[k + 1]
        den = y0 - 2 * y1 + y2
        h = x[k + 1] - x[k]
        if den != 0 and abs(x[k] - x[k - 1] - h) < 1e-9 * abs(h):
            off = 0.5 * (y0 - y2) / den
            peaks.append((k, x[k] + off * h, y1 - 0.25 * (y0 - y2) * off))
        else:
            peaks.append((k, x[k], y1))
    merged = True
    while merged and len(peaks) > 1:
        merged = False
        for m in range(len(peaks) - 1):
            (ka, xa, ya), (kb, xb, yb) = peaks[m], peaks[m + 1]
            dip = float(np.min(y[ka:kb + 1]))
            if min(ya, yb) - dip < visibility * min(ya, yb):
                keep = peaks[m] if ya >= yb else peaks[m + 1]
                peaks[m:m + 2] = [keep]
                merged = True
                break
    return [(p[1], p[2]) for p in peaks]


def doublet_separation(x, y, visibility=0.05):
    """Distance between the two highest resolved maxima, or None."""
    peaks = find_peaks(x, y, visibility)
    if len(peaks) < 2:
        return None
    top = sorted(peaks, key=lambda p: -p[1])[:2]
    return abs(top[0][0] - top[1][0])


# ------------------------------------------------------- avoided crossing


@dataclass
class AvoidedCrossingFit:
    gamma: float
    g_sqrtN: float
    U_a: float
    scale: float = 1.0
    slope: float = 0.0
    offset: float = 0.0
    residual_norm: float = float("nan")
    stderr: Optional[np.ndarray] = None
    nit: int = 0


def _crossing_model(p, wp, wa):
    # wp, wa measured from omega_c in units of kappa
    gamma, gsn, u_a, scale, slope, offset = p
    den = 1.0 + 1j * (-wp - u_a) + gsn * gsn / (gamma / 2.0 + 1j * (wa - wp))
    return scale / np.abs(den) ** 2 + slope * wp + offset


def fit_avoided_crossing(data: TransmissionSpectrum, params: SystemParams, init: AvoidedCrossingFit,
                         config: FitConfig | None = None) -> AvoidedCrossingFit:
    """Least-squares fit of scale * |<a_c>/eta|^2 + linear background.

    ``data.tuning`` holds omega_a1 values (rows); ``data.probe`` the probe
    frequencies. ``params.kappa`` and ``params.omega_c`` are held fixed.
    Raises :class:`FitError` when the fit fails or ends on a degenerate
    parameter set (zero coupling or width pinned at a bound).
    """
    wp = np.asarray(data.probe, dtype=float)
    power = np.asarray(data.power, dtype=float)
    if data.tuning is None:
        raise ValueError("avoided-crossing data needs a tuning axis; use tuning=[omega_a1]")
    wa = np.asarray(data.tuning, dtype=float)
    WA, WP = np.meshgrid(wa, wp, indexing="ij")
    # work in units of kappa around omega_c, power normalised to its maximum
    s = params.kappa
    x_p = ((WP - params.omega_c) / s).ravel()
    x_a = ((WA - params.omega_c) / s).ravel()
    y = power.ravel()
    good = np.isfinite(y)
    if data.mask is not None:
        good &= ~np.asarray(data.mask).ravel()
    x_p, x_a, y = x_p[good], x_a[good], y[good]
    ys = float(np.max(np.abs(y)))
    if not ys > 0:
        raise FitError("no signal in transmission data")
    v = y / ys
    p0 = np.array([init.gamma / s, init.g_sqrtN / s, init.U_a / s,
                   init.scale * s * s / ys if init.scale else 1.0,
                   init.slope * s / ys, init.offset / ys])
    if init.scale == 1.0:
        # scale guess: match the model maximum to the data maximum
        trial = _crossing_model(np.r_[p0[:3], 1.0, 0.0, 0.0], x_p, x_a)
        p0[3] = (np.max(v) - np.min(v)) / max(np.max(trial), 1e-300)
    lower = np.array([1e-6, 0.0, -np.inf, 0.0, -np.inf, -np.inf])
    upper = np.array([1e6, 1e6, np.inf, np.inf, np.inf, np.inf])
    p0 = np.clip(p0, lower, upper)

    def resid(p):
        return _crossing_model(p, x_p, x_a) - v

    res = least_squares(FitProblem(resid, p0, lower, upper, x_scale=np.maximum(np.abs(p0), 1.0)), config)
    g_, gsn, u_a, scale, slope, offset = res.x
    signal = float(np.max(_crossing_model(np.r_[res.x[:4], 0.0, 0.0], x_p, x_a)))
    if gsn <= 1e-9 or g_ <= lower[0] * 1.0001 or signal <= 1e-6 * float(np.max(np.abs(v))):
        raise FitError("degenerate avoided-crossing fit (no resonant signal, no coupling or width at bound)", res.x, res.nit)
    units = np.array([s, s, s, ys / (s * s), ys / s, ys])
    return AvoidedCrossingFit(gamma=g_ * s, g_sqrtN=gsn * s, U_a=u_a * s, scale=scale * ys / (s * s),
                              slope=slope * ys / s, offset=offset * ys, residual_norm=res.residual_norm * ys,
                              stderr=res.stderr * units, nit=res.nit)
