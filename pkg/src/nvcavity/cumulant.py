"""Finite-temperature moment hierarchy for a driven cavity and N identical
two-level spins, closed at second order in cumulants.

Frame rotating at the probe frequency; H = Dc a+a + (Ds/2) sum sz
+ g sum (s+ a + a+ s-) + i eta (a+ - a). Dissipation: cavity decay kappa
with thermal occupation n_c, spin decay gamma_hom with thermal
occupation n_s, pure dephasing (gamma_p / 2)(sz rho sz - rho).

Stored moments (one spin i and one pair i != j, by permutation symmetry):

    index  moment           index  moment
    0      <a>              6      <a+ a>
    1      <s-_i>           7      <a s-_i>
    2      <sz_i>           8      <a a>
    3      <a s+_i>         9      <s-_i s-_j>
    4      <a sz_i>         10     <sz_i s+_j>
    5      <s+_i s-_j>      11     <sz_i sz_j>

Third-order moments enter the right-hand side through a provider. The
default provider is the cumulant closure; the test suite swaps in exact
values computed from a density matrix, which checks the algebra of the
hierarchy independently of the closure.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import root

from .core import SystemParams, ThermalBath, n_bar
from .oscillator import TransmissionSpectrum, coupling_from_splitting, find_peaks

NAMES = ("a", "sm", "sz", "a_sp", "a_sz", "sp_sm", "ad_a", "a_sm", "a_a", "sm_sm", "sz_sp", "sz_sz")
_REAL = (2, 5, 6, 11)
_CPLX = [k for k in range(12) if k not in _REAL]
# powers of 1/sqrt(N) carried by each moment; used only to scale the integration variables
_NPOW = np.array([0, 1, 0, 1, 0, 2, 0, 1, 0, 2, 1, 0])


class ConvergenceError(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass
class MomentState:
    values: np.ndarray = field(default_factory=lambda: np.zeros(12, dtype=complex))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).copy()
        if self.values.shape != (12,):
            raise ValueError("MomentState holds 12 moments")
        self.values[list(_REAL)] = self.values[list(_REAL)].real

    def __getattr__(self, name):
        if name in NAMES:
            return self.values[NAMES.index(name)]
        raise AttributeError(name)

    @property
    def ad_ad(self):
        """<a+ a+> = conj(<a a>)."""
        return np.conj(self.values[8])

    def ad_a_sz(self):
        """<a+ a sz>, from the closure (not an independent variable)."""
        return closure(self.values)[0]

    def check_invariants(self, tol=1e-8) -> list:
        v = self.values
        bad = []
        if not -1 - tol <= v[2].real <= 1 + tol:
            bad.append("sz outside [-1, 1]")
        if v[6].real < -tol:
            bad.append("negative photon number")
        pop = (1 + v[2].real) / 2
        if v[5].real > pop + tol:
            bad.append("spin-spin correlation above excited population")
        return bad

    @classmethod
    def thermal(cls, params: SystemParams, bath, omega_s=None):
        """Undriven equilibrium: product of thermal cavity and spin states."""
        omega_s = params.omega_c if omega_s is None else omega_s
        n_c = n_bar(bath, params.omega_c)
        sz = -1.0 / (1.0 + 2.0 * n_bar(bath, omega_s))
        v = np.zeros(12, dtype=complex)
        v[2], v[6], v[11] = sz, n_c, sz * sz
        return cls(v)

    @classmethod
    def ground(cls):
        v = np.zeros(12, dtype=complex)
        v[2], v[11] = -1.0, 1.0
        return cls(v)


@dataclass(frozen=True)
class Rates:
    """Constants of the hierarchy in rad/s."""

    kappa: float
    d_c: float
    d_s: float
    g: float
    N: float
    eta: float
    n_c: float
    n_s: float
    gamma: float
    gamma_p: float

    @property
    def G2(self):
        return self.gamma / 2.0 + self.gamma * self.n_s + self.gamma_p

    @property
    def G1(self):
        return self.gamma * (1.0 + 2.0 * self.n_s)

    @classmethod
    def build(cls, params: SystemParams, bath, omega_p, omega_s=None):
        omega_s = params.omega_c if omega_s is None else omega_s
        return cls(kappa=params.kappa, d_c=params.omega_c - omega_p, d_s=omega_s - omega_p, g=params.g,
                   N=params.N, eta=params.eta, n_c=n_bar(bath, params.omega_c), n_s=n_bar(bath, omega_s),
                   gamma=params.gamma_hom, gamma_p=params.gamma_p)


def closure(v):
    """Third-order moments T1..T9 with third cumulants set to zero.

    T1 <a+ a sz>, T2 <a a s+>, T3 <a+ a s->, T4 <a+ sz_i s-_j>, T5 <a a sz>,
    T6 <a sz_i s-_j>, T7 <a s+_i s+_j>, T8 <a+ s-_i s+_j>, T9 <a+ sz_i sz_j>.
    """
    m1, m2, m3, A1, A2, A3, A4, A5, A6, A7, A8, A9 = v
    c = np.conj
    T1 = A4 * m3 + c(A2) * m1 + A2 * c(m1) - 2 * abs(m1) ** 2 * m3
    T2 = A6 * c(m2) + 2 * A1 * m1 - 2 * m1 ** 2 * c(m2)
    T3 = A4 * m2 + c(A1) * m1 + A5 * c(m1) - 2 * abs(m1) ** 2 * m2
    T4 = c(A2) * m2 + c(A1) * m3 + c(A8) * c(m1) - 2 * c(m1) * m3 * m2
    T5 = A6 * m3 + 2 * A2 * m1 - 2 * m1 ** 2 * m3
    T6 = A2 * m2 + A5 * m3 + c(A8) * m1 - 2 * m1 * m3 * m2
    T7 = 2 * A1 * c(m2) + c(A7) * m1 - 2 * m1 * c(m2) ** 2
    T8 = c(A1) * c(m2) + c(A5) * m2 + A3 * c(m1) - 2 * c(m1) * abs(m2) ** 2
    T9 = 2 * c(A2) * m3 + A9 * c(m1) - 2 * c(m1) * m3 ** 2
    return np.array([T1, T2, T3, T4, T5, T6, T7, T8, T9])


def hierarchy_rhs(v, r: Rates, third: Optional[np.ndarray] = None):
    """Time derivatives of the 12 moments.

    ``v`` has shape (12,) or (12, n); with the latter, ``r.d_c`` and
    ``r.d_s`` may be arrays of length n (independent probe points).
    """
    m1, m2, m3, A1, A2, A3, A4, A5, A6, A7, A8, A9 = v
    T1, T2, T3, T4, T5, T6, T7, T8, T9 = closure(v) if third is None else third
    c = np.conj
    g, N, eta = r.g, r.N, r.eta
    gN, gN1 = g * N, g * (N - 1.0)
    kc = r.kappa + 1j * r.d_c
    G1, G2, gam = r.G1, r.G2, r.gamma
    ds = r.d_s
    out = np.empty(np.shape(v), dtype=complex)
    out[0] = -kc * m1 - 1j * gN * m2 + eta
    out[1] = -(G2 + 1j * ds) * m2 + 1j * g * A2
    out[2] = -G1 * m3 - gam + 4 * g * A1.imag
    out[3] = (-(kc + G2 - 1j * ds) * A1 - 1j * g * ((1 + m3) / 2 + (N - 1) * A3 + T1) + eta * c(m2))
    out[4] = (-(kc + G1) * A2 - 1j * g * (m2 + (N - 1) * c(A8)) + eta * m3 - gam * m1
              - 2j * g * (T2 - T3 - m2))
    out[5] = -2 * G2 * A3 + 2 * g * T4.imag
    out[6] = -2 * r.kappa * A4 + 2 * r.kappa * r.n_c - 2 * gN * A1.imag + 2 * (eta * m1).real
    out[7] = -(kc + G2 + 1j * ds) * A5 - 1j * gN1 * A7 + eta * m2 + 1j * g * T5
    out[8] = -2 * kc * A6 - 2j * gN * A5 + 2 * eta * m1
    out[9] = -2 * (G2 + 1j * ds) * A7 + 2j * g * T6
    out[10] = -(G1 + G2 - 1j * ds) * A8 - gam * c(m2) - 2j * g * (T7 - T8) - 1j * g * T9
    out[11] = -2 * G1 * A9 - 2 * gam * m3 + 8 * g * c(T4).imag
    for k in _REAL:
        out[k] = out[k].real
    return out


def moment_derivatives(state: MomentState, params: SystemParams, bath, omega_p, omega_s=None) -> MomentState:
    """d/dt of every stored moment under the closed hierarchy."""
    d = hierarchy_rhs(state.values, Rates.build(params, bath, omega_p, omega_s))
    out = MomentState.__new__(MomentState)
    out.values = d
    return out


# ---------------------------------------------------------------- steady state


@dataclass
class HierarchyConfig:
    rtol: float = 1e-10
    atol: float = 1e-14
    threshold: float = 1e-9  # max |dy/dt| / rate scale in scaled variables
    t_max: float = 1e4  # in units of 1 / rate scale
    pinned: bool = False
    polish: bool = True

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0 or self.threshold <= 0 or self.t_max <= 0:
            raise ValueError("tolerances and limits must be > 0")


@dataclass
class SteadyResult:
    state: MomentState
    converged: bool
    t_final: float
    residual: float
    polish_change: float = 0.0


def _pinned_rhs(v, r: Rates):
    m1, m2 = v[0], v[1]
    out = np.zeros(np.shape(v), dtype=complex)
    out[0] = -(r.kappa + 1j * r.d_c) * m1 - 1j * r.g * r.N * m2 + r.eta
    out[1] = -(r.G2 + 1j * r.d_s) * m2 - 1j * r.g * m1
    # frozen moments relax to the ground-state values they already hold;
    # this is zero along the pinned trajectory and keeps the Jacobian regular
    ground = MomentState.ground().values[2:]
    out[2:] = -r.kappa * (v[2:] - (ground[:, None] if np.ndim(v) == 2 else ground))
    return out


class _Scaled:
    """Real-vector view of n independent copies of the hierarchy, with
    sqrt(N) and rate scaling so that all variables are O(1)."""

    def __init__(self, r: Rates, pinned: bool, n: int):
        self.r = r
        self.pinned = pinned
        self.n = n
        self.rate = max(r.kappa + r.G1 + r.G2 + r.g * math.sqrt(r.N), 1e-300)
        self.s = (math.sqrt(r.N) ** (-_NPOW.astype(float)))[:, None]

    def pack(self, v):
        # real parts of all 12 moments, imaginary parts of the 8 complex ones;
        # the 20 numbers of one point are contiguous so the Jacobian is banded
        w = np.reshape(v, (12, self.n)) / self.s
        return np.concatenate([w.real, w.imag[_CPLX]]).T.ravel()

    def unpack(self, y):
        y = y.reshape(self.n, 20).T
        v = y[:12].astype(complex)
        v[_CPLX] += 1j * y[12:]
        return v * self.s

    def __call__(self, t, y):
        v = self.unpack(y)
        d = _pinned_rhs(v, self.r) if self.pinned else hierarchy_rhs(v, self.r)
        return self.pack(d) / self.rate

    def residuals(self, y):
        return np.max(np.abs(self(0.0, y).reshape(self.n, 20)), axis=1)

    def column(self, k):
        """Single-point system for column k (used for polishing)."""
        r = self.r
        rk = Rates(**{**r.__dict__, "d_c": float(np.atleast_1d(r.d_c)[k]), "d_s": float(np.atleast_1d(r.d_s)[k])})
        return _Scaled(rk, self.pinned, 1)


def _initial(config, params, bath, omega_s, initial):
    if config.pinned:
        v0 = (MomentState.ground() if initial is None else initial).values.copy()
        v0[2:] = MomentState.ground().values[2:]
        return v0
    return (MomentState.thermal(params, bath, omega_s) if initial is None else initial).values


def _steady_batch(config: HierarchyConfig, params, bath, probe, omega_s=None, initial=None):
    """Integrate all probe points together, then polish each one alone.

    Returns (values (12, n), converged mask, residuals, polish changes, t).
    The blocks never couple, so each column follows its own trajectory;
    the shared step size only affects accuracy, which the per-point
    polish removes.
    """
    probe = np.atleast_1d(np.asarray(probe, dtype=float))
    n = probe.size
    omega_s = params.omega_c if omega_s is None else omega_s
    r = Rates.build(params, bath, 0.0, omega_s)
    r = Rates(**{**r.__dict__, "d_c": params.omega_c - probe, "d_s": omega_s - probe})
    f = _Scaled(r, config.pinned, n)
    v0 = np.repeat(_initial(config, params, bath, omega_s, initial)[:, None], n, axis=1)
    y = f.pack(v0)
    t, t_seg = 0.0, 50.0
    resid = f.residuals(y)
    while np.max(resid) >= config.threshold and t < config.t_max:
        seg = min(t_seg, config.t_max - t)
        sol = solve_ivp(f, (0.0, seg), y, method="LSODA", rtol=config.rtol, atol=config.atol,
                        lband=19, uband=19)
        if not sol.success:
            break
        y = sol.y[:, -1]
        t += seg
        t_seg *= 2.0
        resid = f.residuals(y)
    vals = f.unpack(y)
    converged = resid < config.threshold
    changes = np.zeros(n)
    if config.polish:
        for k in np.nonzero(converged)[0]:
            fk = f.column(k)
            yk = fk.pack(vals[:, k])
            sol = root(lambda yy: fk(0.0, yy), yk, method="hybr", options={"xtol": 1e-14})
            # hybr may report "no further improvement" at rounding level; accept any reduction
            if np.all(np.isfinite(sol.x)) and fk.residuals(sol.x)[0] <= resid[k]:
                changes[k] = float(np.max(np.abs(sol.x - yk)) / max(np.max(np.abs(yk)), 1e-300))
                vals[:, k] = fk.unpack(sol.x)[:, 0]
                resid[k] = fk.residuals(sol.x)[0]
    return vals, converged, resid, changes, t / f.rate


def integrate_to_steady(config: HierarchyConfig, params: SystemParams, bath, omega_p,
                        initial: Optional[MomentState] = None, omega_s=None) -> SteadyResult:
    """Integrate (LSODA, switching to a stiff method when needed) until
    max |dy/dt| < threshold in scaled units, then refine by a root solve
    when ``config.polish`` is set; the refinement size is reported as
    ``polish_change``."""
    vals, conv, resid, change, t = _steady_batch(config, params, bath, [omega_p], omega_s, initial)
    state = MomentState(vals[:, 0])
    if not conv[0]:
        raise ConvergenceError(f"no steady state within t_max (residual {resid[0]:.3g})", state)
    return SteadyResult(state, True, t, float(resid[0]), float(change[0]))


def probe_spectrum(config: HierarchyConfig, params: SystemParams, bath, probe_grid,
                   omega_s=None) -> TransmissionSpectrum:
    """Steady |<a>|^2 per probe frequency; failures are masked and reported."""
    probe = np.asarray(probe_grid, dtype=float)
    if probe.size > 1 and np.any(np.diff(probe) <= 0):
        raise ValueError("probe grid must be strictly increasing")
    vals, conv, resid, _, _ = _steady_batch(config, params, bath, probe, omega_s)
    power = np.where(conv, np.abs(vals[0]) ** 2, np.nan)
    failures = {float(w): f"residual {q:.3g} above threshold" for w, q, c in zip(probe, resid, conv) if not c}
    return TransmissionSpectrum(probe=probe, power=power, mask=~conv, report={"failures": failures})


@dataclass
class RabiPoint:
    T: float
    omega_measured: Optional[float]  # None when the doublet is unresolved
    splitting: Optional[float]


def _doublet(config, params, bath, probe, visibility, refine):
    spec = probe_spectrum(config, params, bath, probe)
    good = ~spec.mask
    peaks = find_peaks(spec.probe[good], spec.power[good], visibility)
    if len(peaks) < 2:
        return None
    top = sorted(peaks, key=lambda p: -p[1])[:2]
    if refine <= 1:
        return abs(top[0][0] - top[1][0])
    step = float(np.min(np.diff(probe)))
    pos = []
    for x0, _ in top:
        fine = x0 + np.linspace(-2.0 * step, 2.0 * step, refine)
        sp = probe_spectrum(config, params, bath, fine)
        k = int(np.nanargmax(sp.power))
        k = min(max(k, 1), refine - 2)
        pos.append(find_peaks(fine[k - 1:k + 2], sp.power[k - 1:k + 2], 0.0)[0][0]
                   if sp.power[k] >= max(sp.power[k - 1], sp.power[k + 1]) else fine[k])
    return abs(pos[0] - pos[1])


def rabi_vs_temperature(config: HierarchyConfig, params: SystemParams, T_grid, probe_grid=None,
                        visibility=0.05, refine=21) -> list:
    """Coupling recovered from the hierarchy's doublet at each temperature.

    The two highest maxima on ``probe_grid`` are re-sampled on a grid
    ``refine`` times finer and located by parabolic interpolation. The
    separation is turned back into g sqrt(N_eff) with the splitting formula,
    using the thermal polarisation width gamma = 2 (gamma_hom (1/2 + n_s) + gamma_p).
    """
    if probe_grid is None:
        span = 1.2 * params.g_sqrtN
        probe_grid = params.omega_c + np.linspace(-span, span, 161)
    probe_grid = np.asarray(probe_grid, dtype=float)
    out = []
    for T in T_grid:
        bath = ThermalBath(float(T))
        sep = _doublet(config, params, bath, probe_grid, visibility, refine)
        if sep is None:
            out.append(RabiPoint(float(T), None, None))
            continue
        n_s = n_bar(bath, params.omega_c)
        gamma_eff = 2.0 * (params.gamma_hom * (0.5 + n_s) + params.gamma_p)
        out.append(RabiPoint(float(T), coupling_from_splitting(sep, params.kappa, gamma_eff), sep))
    return out


# ------------------------------------------------------------ exact oracle


def _ops(N, cutoff):
    nf = cutoff + 1
    a = np.diag(np.sqrt(np.arange(1, nf)), 1)
    sp1 = np.array([[0.0, 1.0], [0.0, 0.0]])  # basis (excited, ground)
    sz1 = np.diag([1.0, -1.0])
    dim_s = 2 ** N

    def spin(op, j):
        mats = [np.eye(2)] * N
        mats[j] = op
        out = np.array([[1.0]])
        for m in mats:
            out = np.kron(out, m)
        return out

    A = np.kron(a, np.eye(dim_s))
    SP = [np.kron(np.eye(nf), spin(sp1, j)) for j in range(N)]
    SZ = [np.kron(np.eye(nf), spin(sz1, j)) for j in range(N)]
    return A, SP, SZ


def _liouvillian(N, cutoff, r: Rates):
    A, SP, SZ = _ops(N, cutoff)
    Ad = A.T.conj()
    SM = [s.T.conj() for s in SP]
    d = A.shape[0]
    I = np.eye(d)
    H = r.d_c * Ad @ A + 1j * r.eta * (Ad - A)
    for j in range(N):
        H = H + 0.5 * r.d_s * SZ[j] + r.g * (SP[j] @ A + Ad @ SM[j])

    def left(X):
        return np.kron(I, X)

    def right(X):
        return np.kron(X.T, I)

    def dis(c, rate):
        cd = c.T.conj()
        cdc = cd @ c
        return rate * (2 * np.kron(c.conj(), c) - left(cdc) - right(cdc))

    L = -1j * (left(H) - right(H))
    L = L + dis(A, r.kappa * (r.n_c + 1)) + dis(Ad, r.kappa * r.n_c)
    for j in range(N):
        L = L + dis(SM[j], 0.5 * r.gamma * (r.n_s + 1)) + dis(SP[j], 0.5 * r.gamma * r.n_s)
        L = L + 0.5 * r.gamma_p * (np.kron(SZ[j].T, SZ[j]) - np.eye(d * d))
    return L, (A, SP, SZ)


def moments_from_rho(rho, ops, third=False):
    """All stored moments (and optionally T1..T9) of a density matrix."""
    A, SP, SZ = ops
    Ad = A.T.conj()
    SM = [s.T.conj() for s in SP]

    def ev(X):
        return np.trace(X @ rho)

    i, j = 0, 1 if len(SP) > 1 else 0
    v = np.array([ev(A), ev(SM[i]), ev(SZ[i]), ev(A @ SP[i]), ev(A @ SZ[i]),
                  ev(SP[i] @ SM[j]) if j != i else 0.0, ev(Ad @ A), ev(A @ SM[i]), ev(A @ A),
                  ev(SM[i] @ SM[j]) if j != i else 0.0, ev(SZ[i] @ SP[j]) if j != i else 0.0,
                  ev(SZ[i] @ SZ[j]) if j != i else 1.0], dtype=complex)
    if not third:
        return v
    T = np.array([ev(Ad @ A @ SZ[i]), ev(A @ A @ SP[i]), ev(Ad @ A @ SM[i]), ev(Ad @ SZ[i] @ SM[j]),
                  ev(A @ A @ SZ[i]), ev(A @ SZ[i] @ SM[j]), ev(A @ SP[i] @ SP[j]), ev(Ad @ SM[i] @ SP[j]),
                  ev(Ad @ SZ[i] @ SZ[j])], dtype=complex)
    return v, T


@dataclass
class OracleResult:
    state: MomentState
    rho: np.ndarray
    top_population: float
    cutoff_ok: bool


def exact_oracle(N_small: int, fock_cutoff: int, params: SystemParams, bath, omega_p,
                 omega_s=None) -> OracleResult:
    """Steady state of the full master equation for a few spins.

    ``params.g`` is the single-spin coupling used as is (``params.N`` is
    ignored). Warns when the top Fock level holds more than 1e-8.
    """
    if not 1 <= N_small <= 3:
        raise ValueError("exact oracle supports 1 to 3 spins")
    if fock_cutoff < 1:
        raise ValueError("fock_cutoff must be >= 1")
    if (fock_cutoff + 1) * 2 ** N_small > 10 ** 4:
        raise ValueError("Hilbert space too large for the oracle")
    r = Rates.build(params.with_(N=N_small), bath, omega_p, omega_s)
    L, ops = _liouvillian(N_small, fock_cutoff, r)
    d = ops[0].shape[0]
    M = L.copy()
    M[0, :] = np.eye(d).reshape(-1, order="F")  # trace row
    b = np.zeros(d * d, dtype=complex)
    b[0] = 1.0
    x = np.linalg.solve(M, b)
    rho = x.reshape(d, d, order="F")
    rho = 0.5 * (rho + rho.conj().T)
    dim_s = 2 ** N_small
    top = float(np.real(np.trace(rho[-dim_s:, -dim_s:])))
    ok = top <= 1e-8
    if not ok:
        warnings.warn(f"Fock cutoff {fock_cutoff} too small: top-level population {top:.3g}", RuntimeWarning)
    v = moments_from_rho(rho, ops)
    state = MomentState.__new__(MomentState)
    state.values = v
    return OracleResult(state, rho, top, ok)


def liouvillian(N_small, fock_cutoff, params: SystemParams, bath, omega_p, omega_s=None):
    """Superoperator (column-stacked vec) and the (a, [s+_j], [sz_j]) operators."""
    r = Rates.build(params.with_(N=N_small), bath, omega_p, omega_s)
    return _liouvillian(N_small, fock_cutoff, r)
