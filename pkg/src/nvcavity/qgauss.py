"""q-Gaussian (Tsallis) line shape, its FWHM and a bounded fit.

    L(w) = b + I * [1 - (1 - q) (w - w0)^2 / a] ** (1 / (1 - q)),   1 < q < 3

q = 2 is a Lorentzian with HWHM sqrt(a); q -> 1 is the Gaussian
exp(-(w - w0)^2 / a). The wings fall off as |w - w0| ** (-2 / (q - 1)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .fitting import FitConfig, FitProblem, least_squares

Q_GAUSS_LIMIT = 1e-6


def _check_q(q):
    if not 1.0 < q < 3.0:
        raise ValueError(f"q must lie in (1, 3), got {q}")


def qgauss_shape(q, a, x):
    """Unit-height shape of the offset x = w - w0; accepts complex x."""
    d = q - 1.0
    if abs(d) < Q_GAUSS_LIMIT:
        return np.exp(-(x * x) / a)
    base = 1.0 + d * (x * x) / a
    return base ** (-1.0 / d)


def qgauss_eval(q, a, omega0, amplitude, offset, omega):
    """b + I * [1 - (1 - q)(w - w0)^2 / a]^(1 / (1 - q))."""
    _check_q(q)
    if a <= 0:
        raise ValueError("a must be > 0")
    return offset + amplitude * qgauss_shape(q, a, np.asarray(omega) - omega0)


def _width_ratio(q):
    # (2^q - 2) / (2q - 2), continuous through q = 1 (-> ln 2)
    d = q - 1.0
    if d == 0.0:
        return math.log(2.0)
    return math.expm1(d * math.log(2.0)) / d


def fwhm_q(q, a):
    """gamma_q = 2 sqrt(a (2^q - 2) / (2q - 2))."""
    _check_q(q)
    return 2.0 * math.sqrt(a * _width_ratio(q))


def a_from_fwhm(q, gamma_q):
    """Inverse of :func:`fwhm_q`."""
    _check_q(q)
    return (gamma_q / 2.0) ** 2 / _width_ratio(q)


def qgauss_norm(q, a):
    """Integral over the real line of the unit-height shape."""
    _check_q(q)
    d = q - 1.0
    if abs(d) < Q_GAUSS_LIMIT:
        return math.sqrt(math.pi * a)
    m = 1.0 / d
    return math.sqrt(math.pi * a / d) * math.exp(gammaln(m - 0.5) - gammaln(m))


def qgauss_halfwidth_support(q, a, rel=1e-8):
    """|w - w0| beyond which the shape drops below ``rel``."""
    d = q - 1.0
    if abs(d) < Q_GAUSS_LIMIT:
        return math.sqrt(-a * math.log(rel))
    return math.sqrt(a * (rel ** (-d) - 1.0) / d)


@dataclass
class QGaussFit:
    q: float
    a: float
    omega0: float
    amplitude: float
    offset: float
    gamma_q: float
    stderr: dict
    residual_norm: float
    nit: int


def fit_qgaussian(omega, rho, rho_err=None, config: FitConfig | None = None,
                  q0: float = 1.5) -> QGaussFit:
    """Bounded fit of (q, a, w0, I, b) to tabulated samples.

    ``rho_err`` (one sigma per sample) turns on inverse-variance weights.
    The FWHM gamma_q and its error are propagated from (q, a).
    """
    omega = np.asarray(omega, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if omega.size < 6:
        raise ValueError("need at least 6 samples for a q-Gaussian fit")
    xs = float(np.ptp(omega)) / 10.0
    xm = float(omega[np.argmax(rho)])
    ys = float(np.max(np.abs(rho)))
    u = (omega - xm) / xs
    v = rho / ys
    half = np.nonzero(v >= 0.5 * v.max())[0]
    hw = max(0.5 * (u[half[-1]] - u[half[0]]), float(np.min(np.abs(np.diff(u)))))
    p0 = np.array([q0, a_from_fwhm(q0, 2.0 * hw), 0.0, float(v.max()), 0.0])
    weights = None
    if rho_err is not None:
        err = np.asarray(rho_err, dtype=float) / ys
        if np.all(np.isfinite(err)) and np.all(err > 0):
            weights = 1.0 / err ** 2
    lower = np.array([1.0 + 1e-9, 1e-12, -np.inf, 0.0, -np.inf])
    upper = np.array([3.0 - 1e-9, np.inf, np.inf, np.inf, np.inf])

    def resid(p):
        q, a, c, amp, b = p
        return b + amp * qgauss_shape(q, a, u - c) - v

    res = least_squares(FitProblem(resid, p0, lower, upper, weights=weights,
                                   x_scale=np.array([0.1, p0[1], 0.1, 1.0, 0.1])), config)
    q, a, c, amp, b = res.x
    cov = res.cov
    gq = fwhm_q(q, a)
    # d gamma_q / d(q, a) by central differences in the scaled units
    hq, ha = 1e-6, 1e-6 * a
    dg = np.array([(fwhm_q(min(q + hq, 3 - 1e-9), a) - fwhm_q(max(q - hq, 1 + 1e-9), a)) / (2 * hq),
                   (fwhm_q(q, a + ha) - fwhm_q(q, a - ha)) / (2 * ha)])
    g_err = math.sqrt(max(float(dg @ cov[:2, :2] @ dg), 0.0))
    se = res.stderr
    return QGaussFit(q=q, a=a * xs * xs, omega0=xm + c * xs, amplitude=amp * ys, offset=b * ys,
                     gamma_q=gq * xs,
                     stderr={"q": se[0], "a": se[1] * xs * xs, "omega0": se[2] * xs,
                             "amplitude": se[3] * ys, "offset": se[4] * ys, "gamma_q": g_err * xs},
                     residual_norm=res.residual_norm * ys, nit=res.nit)
