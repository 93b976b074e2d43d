"""NV ground-state spin-1 levels and Zeeman tuning for fields in the (001) plane.

Each of the four NV axes gets its own local frame: z along the axis and x
obtained by Gram-Schmidt of the lab [001] direction against the axis
(y = z cross x). With that choice the two axes of a subensemble see
B-vectors that differ only by sign, so their spectra coincide exactly even
with E != 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .core import HBAR, MU_B, TWO_PI, mhz

_REFERENCE = np.array([0.0, 0.0, 1.0])

NV_AXES = np.array(
    [[1.0, 1.0, 1.0], [-1.0, -1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, -1.0]]
) / math.sqrt(3.0)

BRANCHES = ("minus-I", "plus-I", "minus-II", "plus-II")


@dataclass(frozen=True)
class ZeroFieldParams:
    D: float = mhz(2880.0)
    E: float = mhz(5.0)
    g_factor: float = 2.0

    def __post_init__(self):
        if self.D <= 0:
            raise ValueError("D must be > 0")
        if self.E < 0:
            raise ValueError("E must be >= 0")

    @property
    def gyromagnetic(self) -> float:
        """Zeeman coefficient g mu_B / hbar in rad/s per tesla."""
        return self.g_factor * MU_B / HBAR


@dataclass(frozen=True)
class FieldConfig:
    magnitude: float  # tesla
    phi: float  # rad, from [100] within (001)

    def __post_init__(self):
        if self.magnitude < 0:
            raise ValueError("field magnitude must be >= 0")

    @property
    def vector(self) -> np.ndarray:
        return self.magnitude * np.array([math.cos(self.phi), math.sin(self.phi), 0.0])


@dataclass(frozen=True)
class LevelDiagram:
    """Per-orientation eigenvalues and transitions (rad/s).

    ``omega_minus``/``omega_plus`` are signed differences to the state with
    the largest m_S=0 weight. ``subensemble`` holds "I" or "II" per axis;
    I is the pair with the larger |cos| between axis and field (strongest
    tuning). ``ambiguous`` is set when all four angles coincide.
    """

    eigenvalues: np.ndarray  # (4, 3)
    omega_minus: np.ndarray  # (4,)
    omega_plus: np.ndarray  # (4,)
    cos_angle: np.ndarray  # (4,)
    subensemble: tuple
    ambiguous: bool

    def branch(self, name: str) -> float:
        """Transition frequency of a named branch, e.g. ``"minus-I"``."""
        kind, label = name.split("-")
        idx = self.subensemble.index(label)
        return float(self.omega_minus[idx] if kind == "minus" else self.omega_plus[idx])


def spin1_operators():
    """Sx, Sy, Sz for spin 1 in the |+1>, |0>, |-1> basis."""
    s = 1.0 / math.sqrt(2.0)
    sx = np.array([[0, s, 0], [s, 0, s], [0, s, 0]], dtype=complex)
    sy = np.array([[0, -1j * s, 0], [1j * s, 0, -1j * s], [0, 1j * s, 0]], dtype=complex)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return sx, sy, sz


_SX, _SY, _SZ = spin1_operators()


def local_frame(axis) -> np.ndarray:
    """Rows x, y, z of the NV frame for a given axis."""
    n = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("axis must have non-zero norm")
    n = n / norm
    x = _REFERENCE - np.dot(_REFERENCE, n) * n
    if np.linalg.norm(x) < 1e-12:
        x = np.array([1.0, 0.0, 0.0]) - n[0] * n
    x /= np.linalg.norm(x)
    y = np.cross(n, x)
    return np.vstack([x, y, n])


def build_hamiltonian(zfp: ZeroFieldParams, b_lab, axis) -> np.ndarray:
    """3x3 NV Hamiltonian in rad/s for a lab-frame field (tesla)."""
    frame = local_frame(axis)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise ValueError("axis must be a unit vector")
    bx, by, bz = frame @ np.asarray(b_lab, dtype=float)
    gm = zfp.gyromagnetic
    h = gm * (bx * _SX + by * _SY + bz * _SZ)
    h = h + zfp.D * (_SZ @ _SZ) + zfp.E * (_SX @ _SX - _SY @ _SY)
    return h


def _transitions_for_axis(zfp, b_lab, axis):
    w, v = np.linalg.eigh(build_hamiltonian(zfp, b_lab, axis))
    i0 = int(np.argmax(np.abs(v[1, :]) ** 2))
    others = [k for k in range(3) if k != i0]
    lo, hi = sorted(w[others] - w[i0])
    return w, lo, hi


def transition_frequencies(zfp: ZeroFieldParams, field: FieldConfig) -> LevelDiagram:
    b = field.vector
    eig = np.empty((4, 3))
    om = np.empty(4)
    op = np.empty(4)
    for k, axis in enumerate(NV_AXES):
        eig[k], om[k], op[k] = _transitions_for_axis(zfp, b, axis)
    bhat = np.array([math.cos(field.phi), math.sin(field.phi), 0.0])
    cos = NV_AXES @ bhat
    key = np.abs(cos)
    # pairs are {0,1} (|cos+sin|) and {2,3} (|cos-sin|)
    first_is_I = key[0] >= key[2]
    labels = ("I", "I", "II", "II") if first_is_I else ("II", "II", "I", "I")
    ambiguous = bool(np.isclose(key[0], key[2], rtol=0, atol=1e-12))
    return LevelDiagram(eig, om, op, cos, labels, ambiguous)


def field_for_resonance(zfp: ZeroFieldParams, phi: float, target: float, branch: str = "minus-I",
                        b_max: Optional[float] = None, n_grid: int = 400, tol: float = TWO_PI * 1.0) -> float:
    """Field magnitude (tesla) tuning ``branch`` to ``target`` (rad/s).

    The first bracketing interval of a grid on [0, b_max] is refined with
    Brent's method. ``tol`` bounds the frequency error (default 2pi x 1 Hz).
    ``b_max`` defaults to 95% of D / (g mu_B / hbar), just below the level
    anticrossing where the lower branch stops decreasing.
    """
    if b_max is None:
        b_max = 0.95 * zfp.D / zfp.gyromagnetic
    if branch not in BRANCHES:
        raise ValueError(f"unknown branch {branch!r}; expected one of {BRANCHES}")

    def f(b):
        return transition_frequencies(zfp, FieldConfig(b, phi)).branch(branch) - target

    grid = np.linspace(0.0, b_max, n_grid)
    vals = np.array([f(b) for b in grid])
    if abs(vals[0]) <= tol:
        return 0.0
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    if idx.size == 0:
        lo, hi = vals.min() + target, vals.max() + target
        raise ValueError(
            f"target {target / TWO_PI / 1e6:.6f} MHz not reachable on branch {branch} for "
            f"B in [0, {b_max}] T (range {lo / TWO_PI / 1e6:.6f}..{hi / TWO_PI / 1e6:.6f} MHz)"
        )
    k = idx[0]
    # xtol in tesla small enough for the frequency tolerance
    xtol = 0.1 * tol / zfp.gyromagnetic
    return float(brentq(f, grid[k], grid[k + 1], xtol=xtol, rtol=4 * np.finfo(float).eps))


def level_table(zfp: ZeroFieldParams, phi: float, b_grid) -> np.ndarray:
    """Rows (B, minus-I, plus-I, minus-II, plus-II) for a grid of tesla values."""
    rows = []
    for b in np.asarray(b_grid, dtype=float):
        d = transition_frequencies(zfp, FieldConfig(b, phi))
        rows.append([b] + [d.branch(name) for name in BRANCHES])
    return np.array(rows)
