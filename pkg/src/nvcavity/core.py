"""Shared physical parameters, unit conventions and thermal scaling laws.

All rates and frequencies are angular (rad/s) inside the package. Values in
files and configs are ordinary frequencies f = omega / 2pi, in MHz unless a
header says otherwise; use :func:`mhz` and :func:`to_mhz` at those borders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# CODATA 2018 (h and k_B are exact in the SI)
H_PLANCK = 6.62607015e-34  # J s
HBAR = H_PLANCK / (2.0 * math.pi)  # J s
K_B = 1.380649e-23  # J / K
MU_B = 9.2740100783e-24  # J / T

TWO_PI = 2.0 * math.pi


def _scaled(x, factor):
    if np.ndim(x):
        return np.asarray(x, dtype=float) * factor
    return float(x) * factor


def mhz(f):
    """MHz -> rad/s."""
    return _scaled(f, TWO_PI * 1e6)


def to_mhz(omega):
    """rad/s -> MHz."""
    return _scaled(omega, 1.0 / (TWO_PI * 1e6))


def hz(f):
    """Hz -> rad/s."""
    return _scaled(f, TWO_PI)


@dataclass(frozen=True)
class SystemParams:
    """Cavity and ensemble constants shared by every model.

    ``kappa`` is the field decay rate, i.e. the HWHM of the bare cavity line.
    ``N`` may be huge (1e12); models only use it through ``g_sqrtN``,
    ``g2N`` and ``gN`` so nothing overflows.
    """

    omega_c: float
    kappa: float
    gamma_hom: float = 0.0
    gamma_p: float = 0.0
    g: float = 0.0
    N: float = 1.0
    eta: float = 0.0

    def __post_init__(self):
        for name in ("kappa", "gamma_hom", "gamma_p", "g", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.omega_c <= 0:
            raise ValueError(f"omega_c must be > 0, got {self.omega_c}")

    @property
    def g_sqrtN(self) -> float:
        return self.g * math.sqrt(self.N)

    @property
    def g2N(self) -> float:
        return self.g * self.g * self.N

    @property
    def gN(self) -> float:
        return self.g * self.N

    @classmethod
    def from_collective(cls, omega_c, kappa, g_sqrtN, N=1e12, **kw):
        """Build from the collective coupling g*sqrt(N) instead of g."""
        return cls(omega_c=omega_c, kappa=kappa, g=g_sqrtN / math.sqrt(N), N=N, **kw)

    def with_(self, **kw) -> "SystemParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class ThermalBath:
    temperature: float = 0.0  # kelvin

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


def _as_temperature(bath) -> float:
    return bath.temperature if isinstance(bath, ThermalBath) else float(bath)


def n_bar(bath, omega):
    """Bose-Einstein occupation 1 / (exp(hbar omega / k_B T) - 1).

    ``bath`` may be a :class:`ThermalBath` or a temperature in kelvin.
    T = 0 returns exactly 0.
    """
    T = _as_temperature(bath)
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("omega must be > 0")
    if T == 0.0:
        out = np.zeros_like(omega)
    else:
        x = HBAR * omega / (K_B * T)
        with np.errstate(over="ignore"):
            out = 1.0 / np.expm1(x)
    return float(out) if out.ndim == 0 else out


def _half_tanh(T, omega):
    # tanh(hbar omega / 2 k_B T), exact 1 at T = 0
    if T == 0.0:
        return np.ones_like(np.asarray(omega, dtype=float))
    return np.tanh(HBAR * np.asarray(omega, dtype=float) / (2.0 * K_B * T))


def sz_steady(bath, omega, sz_zero=-1.0):
    """Thermal steady-state inversion tanh(hbar omega / 2 k_B T) * sz_zero."""
    if not -1.0 <= sz_zero <= 0.0:
        raise ValueError("sz_zero must lie in [-1, 0]")
    T = _as_temperature(bath)
    if np.any(np.asarray(omega) <= 0):
        raise ValueError("omega must be > 0")
    out = _half_tanh(T, omega) * sz_zero
    return float(out) if np.ndim(out) == 0 else out


def coupling_vs_T_twolevel(params: SystemParams, bath, omega=None):
    """Collective coupling g sqrt(N tanh(hbar omega / 2 k_B T)).

    ``omega`` defaults to the cavity frequency (resonant ensemble).
    """
    omega = params.omega_c if omega is None else omega
    T = _as_temperature(bath)
    if np.any(np.asarray(omega) <= 0):
        raise ValueError("omega must be > 0")
    out = params.g_sqrtN * np.sqrt(_half_tanh(T, omega))
    return float(out) if np.ndim(out) == 0 else out


def coupling_vs_T_threelevel(params: SystemParams, bath, omega=None):
    """Collective coupling including the thermally populated m_S=+1 level,
    g sqrt(N / (1 + 3 n_bar))."""
    omega = params.omega_c if omega is None else omega
    out = params.g_sqrtN / np.sqrt(1.0 + 3.0 * n_bar(bath, omega))
    return float(out) if np.ndim(out) == 0 else out
