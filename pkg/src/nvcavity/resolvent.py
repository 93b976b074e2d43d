"""Resolvent description of the cavity coupled to a spin continuum.

The spins enter only through the coupling density rho(w) (weight
W = g^2 N) and the level shift

    R(z) = integral rho(x) / (z - x) dx,   z = w + i gamma_hom / 2,

which is the upper-half-plane boundary value with Im R <= 0. Transmission
is 1 / ((w - w_c - Re R)^2 + (kappa + |Im R|)^2) and the dressed poles
solve z - w_c + i kappa - R(z) = 0 on the continuation of R below the
real axis.

Quadrature uses singularity subtraction,

    R(z) = int (rho(x) - rho(z)) / (z - x) dx
           + rho(z) [log(z - lo) - log(hi - z) - i pi],

which is the analytic continuation of the upper-half-plane function for
lo < Re z < hi, so the same code path serves real frequencies and pole
search. Tabulated densities are taken as piecewise linear and integrated
in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad_vec

from .core import SystemParams
from .fitting import FitConfig, FitError, fit_lorentzian
from .oscillator import TransmissionSpectrum, find_peaks
from .qgauss import (QGaussFit, a_from_fwhm, fit_qgaussian, fwhm_q, qgauss_eval, qgauss_halfwidth_support,
                     qgauss_norm, qgauss_shape)

__all__ = [
    "CouplingDensity", "LevelShiftSample", "PoleSet", "QuadratureError", "PoleSearchError",
    "level_shift", "transmission_gcc", "find_poles", "rearrange_scans", "RearrangedScans",
    "extract_level_shift", "reconstruct_density", "sweep_splitting_vs_width",
    "Reconstruction", "reconstruct_from_scans", "shifted",
    "qgauss_eval", "fwhm_q", "a_from_fwhm", "fit_qgaussian", "QGaussFit",
]

KINDS = ("qgaussian", "gaussian", "lorentzian", "delta", "tabulated")
_TRUNCATION = 1e-8


class QuadratureError(RuntimeError):
    pass


class PoleSearchError(RuntimeError):
    def __init__(self, msg, guesses):
        super().__init__(msg)
        self.guesses = list(guesses)


@dataclass(frozen=True)
class CouplingDensity:
    """rho(w) with total weight ``weight`` = g^2 N (rad^2/s^2).

    ``width`` is the FWHM for the Lorentzian and Gaussian kinds; the
    q-Gaussian is parameterised by ``q`` and ``a`` (rad^2/s^2). Tabulated
    densities carry sorted samples and optional one-sigma errors.
    """

    kind: str
    center: float = 0.0
    weight: float = 0.0
    width: float = 0.0
    q: float = 2.0
    a: float = 0.0
    omega: Optional[np.ndarray] = field(default=None, compare=False)
    rho: Optional[np.ndarray] = field(default=None, compare=False)
    rho_err: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if self.kind == "qgaussian":
            if not 1.0 < self.q < 3.0:
                raise ValueError("q must lie in (1, 3)")
            if self.a <= 0:
                raise ValueError("a must be > 0")
        if self.kind in ("lorentzian", "gaussian") and self.width <= 0:
            raise ValueError("width must be > 0")
        if self.kind == "tabulated":
            w = np.asarray(self.omega, dtype=float)
            r = np.asarray(self.rho, dtype=float)
            if w.ndim != 1 or w.shape != r.shape or w.size < 2:
                raise ValueError("tabulated density needs matching 1-D omega/rho arrays")
            if np.any(np.diff(w) <= 0):
                raise ValueError("tabulated omega must be strictly increasing")

    # -- constructors
    @classmethod
    def qgaussian(cls, q, gamma_q, center, weight):
        return cls("qgaussian", center=center, weight=weight, q=q, a=a_from_fwhm(q, gamma_q))

    @classmethod
    def lorentzian(cls, fwhm, center, weight):
        if fwhm == 0:
            return cls("delta", center=center, weight=weight)
        return cls("lorentzian", center=center, weight=weight, width=fwhm)

    @classmethod
    def gaussian(cls, fwhm, center, weight):
        return cls("gaussian", center=center, weight=weight, width=fwhm)

    @classmethod
    def delta(cls, center, weight):
        return cls("delta", center=center, weight=weight)

    @classmethod
    def tabulated(cls, omega, rho, rho_err=None):
        w = np.asarray(omega, dtype=float)
        r = np.asarray(rho, dtype=float)
        weight = float(np.trapezoid(r, w)) if w.size > 1 else 0.0
        c = float(np.trapezoid(r * w, w) / weight) if weight > 0 else float(np.mean(w))
        err = None if rho_err is None else np.asarray(rho_err, dtype=float)
        return cls("tabulated", center=c, weight=max(weight, 0.0), omega=w, rho=r, rho_err=err)

    # -- evaluation
    @property
    def fwhm(self) -> float:
        if self.kind == "qgaussian":
            return fwhm_q(self.q, self.a)
        if self.kind == "delta":
            return 0.0
        if self.kind == "tabulated":
            return float(np.ptp(self.omega))
        return self.width

    @property
    def _gauss_a(self):
        return (self.width / 2.0) ** 2 / math.log(2.0)

    def support(self):
        """(lo, hi) absolute frequencies; infinite for the Lorentzian."""
        if self.kind == "qgaussian":
            h = qgauss_halfwidth_support(self.q, self.a, _TRUNCATION)
        elif self.kind == "gaussian":
            h = qgauss_halfwidth_support(1.0, self._gauss_a, _TRUNCATION)
        elif self.kind == "tabulated":
            return float(self.omega[0]), float(self.omega[-1])
        elif self.kind == "delta":
            return self.center, self.center
        else:
            return -math.inf, math.inf
        return self.center - h, self.center + h

    def __call__(self, omega):
        """rho(omega); parametric kinds accept complex arguments (continuation)."""
        x = np.asarray(omega) - self.center
        if self.kind == "qgaussian":
            return self.weight * qgauss_shape(self.q, self.a, x) / qgauss_norm(self.q, self.a)
        if self.kind == "gaussian":
            a = self._gauss_a
            return self.weight * np.exp(-(x * x) / a) / math.sqrt(math.pi * a)
        if self.kind == "lorentzian":
            h = self.width / 2.0
            return self.weight * (h / math.pi) / (x * x + h * h)
        if self.kind == "delta":
            return np.zeros_like(x, dtype=float)
        return np.interp(np.real(omega), self.omega, self.rho, left=0.0, right=0.0)


@dataclass
class LevelShiftSample:
    omega: np.ndarray
    R_plus: np.ndarray
    R_err: Optional[np.ndarray] = None  # complex: real part error + 1j * imag part error
    flags: Optional[list] = None


@dataclass
class PoleSet:
    poles: np.ndarray
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def positions(self):
        return self.poles.real

    @property
    def half_widths(self):
        return -self.poles.imag


# ------------------------------------------------------------- level shift


_BATCH = 256


def _numeric_shift(density: CouplingDensity, z: np.ndarray, epsrel=1e-11):
    # adaptive subdivision serves every z at once, so the cost of one call
    # grows with the spread of z; small batches keep it linear overall
    flat = z.ravel()
    parts = [_numeric_shift_batch(density, flat[k:k + _BATCH], epsrel) for k in range(0, flat.size, _BATCH)]
    return np.concatenate(parts).reshape(z.shape) if parts else np.zeros(z.shape, complex)


def _numeric_shift_batch(density: CouplingDensity, z: np.ndarray, epsrel):
    lo, hi = density.support()
    c = density.center
    s = density.fwhm
    rho_s = density.weight / s
    u_lo, u_hi = (lo - c) / s, (hi - c) / s
    zeta = (z - c) / s

    def f(u):
        return density(c + s * u) / rho_s

    inside = (zeta.real > u_lo) & (zeta.real < u_hi)
    f_z = np.where(inside, f(np.where(inside, zeta, 0.0)), 0.0)

    def integrand(u):
        d = zeta - u
        safe = np.where(d == 0, 1.0, d)
        return np.where(d == 0, 0.0, (f(u) - f_z) / safe)

    val, err = quad_vec(integrand, u_lo, u_hi, epsabs=1e-13, epsrel=epsrel, norm="max", limit=4000)
    err = float(np.max(err)) if np.ndim(err) else float(err)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(zeta - u_lo) - np.log(u_hi - zeta) - 1j * math.pi
    val = val + np.where(inside, f_z * logs, 0.0)
    tol = max(1e-8 * float(np.max(np.abs(val))) if val.size else 0.0, 1e-10)
    if not np.isfinite(err) or err > tol:
        raise QuadratureError(f"level-shift quadrature error estimate {err:.3g} above tolerance {tol:.3g}")
    return rho_s * val


def _tabulated_shift(density: CouplingDensity, z: np.ndarray):
    x = density.omega
    r = density.rho
    if np.any(z.imag < 0):
        raise ValueError("tabulated densities are not continued below the real axis")
    dx = np.diff(x)
    beta = np.diff(r) / dx
    alpha = r[:-1] - beta * x[:-1]
    out = np.empty(z.shape, dtype=complex)
    tiny = 1e-14 * float(np.ptp(x))
    for k, zk in np.ndenumerate(z):
        d = zk - x
        d = np.where(d == 0, 1j * tiny, d)
        logs = np.log(d[:-1]) - np.log(d[1:])
        out[k] = np.sum((alpha + beta * zk) * logs - beta * dx)
    return out


def level_shift(density: CouplingDensity, omega, gamma_hom=0.0, epsrel=1e-11):
    """R+(omega) with omega complex or real; ``gamma_hom`` adds +i gamma_hom/2.

    For gamma_hom = 0 on the real axis this is PV int rho/(omega - x) - i pi rho(omega).
    """
    z = np.asarray(omega, dtype=complex) + 0.5j * gamma_hom
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if density.weight == 0.0:
        out = np.zeros(z.shape, dtype=complex)
    elif density.kind == "lorentzian":
        out = density.weight / (z - density.center + 0.5j * density.width)
    elif density.kind == "delta":
        out = density.weight / (z - density.center)
    elif density.kind == "tabulated":
        out = _tabulated_shift(density, z)
    else:
        out = _numeric_shift(density, z, epsrel)
    return complex(out[0]) if scalar else out


def transmission_gcc(density: CouplingDensity, params: SystemParams, omega_grid, omega_c=None,
                     R=None) -> TransmissionSpectrum:
    """|G+_cc|^2 with damping kappa + |Im R+| (unit proportionality constant).

    ``R`` may carry precomputed level shifts on ``omega_grid``.
    """
    omega = np.asarray(omega_grid, dtype=float)
    wc = params.omega_c if omega_c is None else omega_c
    if R is None:
        R = level_shift(density, omega, params.gamma_hom)
    power = 1.0 / ((omega - wc - R.real) ** 2 + (params.kappa + np.abs(R.imag)) ** 2)
    return TransmissionSpectrum(probe=omega, power=power)


# ------------------------------------------------------------------- poles


def find_poles(density: CouplingDensity, params: SystemParams, omega_c, initial_guesses: Sequence[complex],
               tol=1e-10, max_iter=100) -> PoleSet:
    """Damped complex Newton on h(z) = z - omega_c + i kappa - R+(z)."""
    scale = max(density.fwhm, math.sqrt(density.weight), params.kappa, 1.0)

    def h(z):
        return z - omega_c + 1j * params.kappa - level_shift(density, z, params.gamma_hom)

    found, resid = [], []
    for z0 in initial_guesses:
        z = complex(z0)
        try:
            hz = h(z)
            for _ in range(max_iter):
                dz = 1e-6 * scale
                dh = (h(z + dz) - h(z - dz)) / (2 * dz)
                step = -hz / dh
                t = 1.0
                while True:
                    zn = z + t * step
                    hn = h(zn)
                    if abs(hn) < abs(hz) or t < 1e-6:
                        break
                    t *= 0.5
                z, hz = zn, hn
                if abs(hz) < tol * scale or abs(t * step) < 1e-14 * scale:
                    # two plain Newton steps take the root to rounding level
                    for _ in range(2):
                        dh = (h(z + dz) - h(z - dz)) / (2 * dz)
                        zn = z - hz / dh
                        hn = h(zn)
                        if not abs(hn) <= abs(hz):
                            break
                        z, hz = zn, hn
                    break
        except (QuadratureError, ZeroDivisionError, ValueError):
            continue
        if abs(hz) < 1e-6 * scale and z.imag <= 1e-9 * scale:
            if all(abs(z - f) > 1e-6 * scale for f in found):
                found.append(z)
                resid.append(abs(hz))
    if not found:
        raise PoleSearchError("pole search diverged from every initial guess", initial_guesses)
    order = np.argsort(np.real(found))
    return PoleSet(np.array(found)[order], np.array(resid)[order])


# ----------------------------------------------------- scan rearrangement


@dataclass
class RearrangedScans:
    """Power on a common (omega, omega_c_eff) lattice; NaN where no data."""

    omega: np.ndarray
    omega_c: np.ndarray
    power: np.ndarray  # (n_omega, n_c)
    variance: Optional[np.ndarray] = None


def rearrange_scans(shifts, probe, power, omega_c, variance=None, step=None) -> RearrangedScans:
    """Re-index raw scans onto fixed-ensemble coordinates.

    Scan k was taken with cavity-ensemble detuning ``shifts[k]`` =
    omega_c - omega_s(B_k). Its samples move to omega = probe + shift and
    omega_c_eff = omega_c + shift. Samples landing in the same lattice bin
    are averaged with inverse-variance weights (equal weights without
    ``variance``). ``probe``/``power``/``variance`` are sequences of 1-D
    arrays, one per scan; ``step`` defaults to the smallest probe spacing.
    """
    shifts = np.asarray(shifts, dtype=float)
    if shifts.ndim != 1 or len(probe) != shifts.size or len(power) != shifts.size:
        raise ValueError("one shift per scan is required")
    if not np.all(np.isfinite(shifts)):
        raise ValueError("scan with unknown field mapping (non-finite shift)")
    if step is None:
        step = min(float(np.min(np.diff(np.asarray(p, float)))) for p in probe)
    all_w = np.concatenate([np.asarray(p, float) + d for p, d in zip(probe, shifts)])
    w0 = float(np.min(all_w))
    n_w = int(round((float(np.max(all_w)) - w0) / step)) + 1
    c_vals = np.unique(np.round((omega_c + shifts) / step) * step)
    c_index = {float(v): i for i, v in enumerate(c_vals)}
    acc = np.zeros((n_w, c_vals.size))
    wsum = np.zeros_like(acc)
    for k, d in enumerate(shifts):
        p = np.asarray(probe[k], float)
        y = np.asarray(power[k], float)
        wt = np.ones_like(y) if variance is None else 1.0 / np.asarray(variance[k], float)
        i = np.rint((p + d - w0) / step).astype(int)
        j = c_index[float(np.round((omega_c + d) / step) * step)]
        np.add.at(acc[:, j], i, wt * y)
        np.add.at(wsum[:, j], i, wt)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(wsum > 0, acc / wsum, np.nan)
        var = np.where(wsum > 0, 1.0 / wsum, np.nan) if variance is not None else None
    omega = w0 + step * np.arange(n_w)
    return RearrangedScans(omega=omega, omega_c=c_vals, power=avg, variance=var)


def extract_level_shift(data: RearrangedScans, params: SystemParams, omega_fixed=None,
                        min_points=7, config: FitConfig | None = None) -> LevelShiftSample:
    """Lorentzian fit versus omega_c for each fixed omega.

    Re R+ = omega - center and Im R+ = -(hwhm - kappa). Slices whose peak
    is off-grid, or whose width is below kappa by more than twice its
    standard error, are flagged and dropped from the returned sample.
    """
    rows = range(data.omega.size) if omega_fixed is None else [
        int(np.argmin(np.abs(data.omega - w))) for w in np.atleast_1d(omega_fixed)]
    kappa = params.kappa
    out_w, out_R, out_e, flags = [], [], [], []
    for i in rows:
        y = data.power[i]
        ok = np.isfinite(y)
        if ok.sum() < min_points:
            flags.append((float(data.omega[i]), "too few points"))
            continue
        wts = None if data.variance is None else 1.0 / data.variance[i][ok]
        try:
            fit = fit_lorentzian(data.omega_c[ok], y[ok], wts, config)
        except FitError as e:
            flags.append((float(data.omega[i]), f"fit failed: {e}"))
            continue
        if fit.flag:
            flags.append((float(data.omega[i]), fit.flag))
            continue
        se = fit.stderr
        if fit.hwhm < kappa - 2.0 * se[1]:
            flags.append((float(data.omega[i]), "width below kappa"))
            continue
        w = float(data.omega[i])
        out_w.append(w)
        out_R.append(complex(w - fit.center, -(fit.hwhm - kappa)))
        out_e.append(complex(se[0], se[1]))
    return LevelShiftSample(np.array(out_w), np.array(out_R, dtype=complex), np.array(out_e, dtype=complex),
                            flags)


def reconstruct_density(samples: LevelShiftSample, gamma_hom=0.0) -> CouplingDensity:
    """rho = -Im R+ / pi + gamma_hom / (2 pi) * dRe R+/domega, with error propagation.

    The derivative uses three-point central differences on the (possibly
    non-uniform) sample grid and one-sided differences at the ends.
    """
    w = np.asarray(samples.omega, dtype=float)
    R = np.asarray(samples.R_plus)
    if w.size < 3:
        raise ValueError("need at least 3 level-shift samples")
    rho = -R.imag / math.pi
    err_re = np.zeros(w.size) if samples.R_err is None else np.abs(np.real(samples.R_err))
    err_im = np.zeros(w.size) if samples.R_err is None else np.abs(np.imag(samples.R_err))
    var = (err_im / math.pi) ** 2
    if gamma_hom != 0.0:
        dre = np.gradient(R.real, w)
        rho = rho + gamma_hom / (2.0 * math.pi) * dre
        span = np.empty(w.size)
        span[1:-1] = w[2:] - w[:-2]
        span[0], span[-1] = w[1] - w[0], w[-1] - w[-2]
        nb = np.sqrt(np.r_[err_re[1:], 0.0] ** 2 + np.r_[0.0, err_re[:-1]] ** 2)
        var = var + (gamma_hom / (2.0 * math.pi) * nb / span) ** 2
    return CouplingDensity.tabulated(w, rho, np.sqrt(var))


@dataclass
class Reconstruction:
    samples: LevelShiftSample
    density: CouplingDensity
    fit: Optional[QGaussFit]
    weight: float


def reconstruct_from_scans(shifts, probe, power, params: SystemParams, variance=None, window=None,
                           min_points=7, fit=True, config: FitConfig | None = None) -> Reconstruction:
    """Scans -> fixed-ensemble lattice -> level shift per slice -> rho -> q-Gaussian.

    ``window`` limits the slices to |omega - omega_c| <= window; the
    q-Gaussian fit uses the propagated errors only when ``variance`` is
    given (unweighted otherwise).
    """
    rs = rearrange_scans(shifts, probe, power, params.omega_c, variance)
    rows = rs.omega if window is None else rs.omega[np.abs(rs.omega - params.omega_c) <= window]
    samples = extract_level_shift(rs, params, rows, min_points, config)
    dens = reconstruct_density(samples, params.gamma_hom)
    qfit = None
    if fit:
        qfit = fit_qgaussian(dens.omega, dens.rho, dens.rho_err if variance is not None else None, config)
    return Reconstruction(samples, dens, qfit, dens.weight)


def shifted(density: CouplingDensity, delta: float) -> CouplingDensity:
    """The same density moved by ``delta`` (rad/s)."""
    if density.kind == "tabulated":
        return CouplingDensity.tabulated(density.omega + delta, density.rho, density.rho_err)
    return replace(density, center=density.center + delta)


# ------------------------------------------------------ splitting vs width


@dataclass
class SplittingPoint:
    gamma_q: float
    peaks: list
    splitting: Optional[float]


def sweep_splitting_vs_width(q, params: SystemParams, gamma_q_grid, omega_grid=None,
                             visibility=0.05) -> list:
    """Resolved doublet separation on resonance for each gamma_q.

    ``q = 2`` uses the Lorentzian closed form; gamma_q = 0 is the delta
    density. Merged peaks give ``splitting=None``.
    """
    wc = params.omega_c
    W = params.g2N
    if omega_grid is None:
        span = 2.0 * params.g_sqrtN
        omega_grid = wc + np.linspace(-span, span, 4001)
    out = []
    for gq in gamma_q_grid:
        if gq == 0:
            dens = CouplingDensity.delta(wc, W)
        elif q == 2.0:
            dens = CouplingDensity.lorentzian(gq, wc, W)
        else:
            dens = CouplingDensity.qgaussian(q, gq, wc, W)
        spec = transmission_gcc(dens, params, omega_grid, wc)
        peaks = find_peaks(spec.probe, spec.power, visibility)
        split = None
        if len(peaks) >= 2:
            top = sorted(peaks, key=lambda p: -p[1])[:2]
            split = abs(top[0][0] - top[1][0])
        out.append(SplittingPoint(float(gq), peaks, split))
    return out
