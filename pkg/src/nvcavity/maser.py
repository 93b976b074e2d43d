"""Incoherently pumped ensemble in the cavity: steady state, emission
spectrum from the two-time correlation, and (w, gamma_p) operating maps.

Phase symmetry is assumed (no coherent drive), so the only moments are

    s = <sz>,  n = <a^dag a>,  C = <a s+_j>,  D = <s+_i s-_j> (i != j),

with <a^dag a sz> factorised as n * s. In the frame of the cavity, with
Delta = omega_spin - omega_c, per-spin rates r_down = gamma_hom (n_s + 1),
r_up = gamma_hom n_s + w, R = r_down + r_up, Gamma2 = R / 2 + gamma_p and
lambda = kappa + Gamma2 - i Delta:

    dn/dt = -2 kappa (n - n_c) - 2 g N Im C
    ds/dt = -R (s - s0) + 4 g Im C,          s0 = (r_up - r_down) / R
    dD/dt = -2 Gamma2 D - 2 g s Im C
    dC/dt = -lambda C - i g [(1 + s)/2 + s n + (N - 1) D]

Setting the left sides to zero leaves one quadratic, solved in closed form.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .core import SystemParams, ThermalBath, n_bar


class MaserError(RuntimeError):
    """No physical steady state, or an unstable drift matrix."""

    def __init__(self, msg, code="failed"):
        super().__init__(msg)
        self.code = code


@dataclass(frozen=True)
class PumpedParams:
    params: SystemParams
    w: float = 0.0
    Delta: float = 0.0
    bath: ThermalBath = field(default_factory=ThermalBath)

    def __post_init__(self):
        if self.w < 0:
            raise ValueError(f"pump rate w must be >= 0, got {self.w}")

    def with_(self, **kw) -> "PumpedParams":
        return PumpedParams(**{**self.__dict__, **kw})


@dataclass(frozen=True)
class MaserSteadyState:
    sz: float
    photons: float
    cross: complex
    spinspin: float
    residual: float = 0.0


@dataclass
class EmissionSpectrum:
    omega: np.ndarray
    density: np.ndarray
    fwhm: float  # rad/s
    delta_f: float  # Hz
    peak: float  # rad/s, rotating frame
    eigenvalues: np.ndarray


@dataclass
class _Rates:
    kappa: float
    g: float
    N: float
    R: float
    s0: float
    gamma2: float
    Delta: float
    n_c: float

    @property
    def lam(self):
        return self.kappa + self.gamma2 - 1j * self.Delta


def _rates(p: PumpedParams) -> _Rates:
    sp = p.params
    if sp.kappa <= 0:
        raise ValueError("kappa must be > 0")
    omega_s = sp.omega_c + p.Delta
    n_s = n_bar(p.bath, omega_s) if omega_s > 0 else 0.0
    n_c = n_bar(p.bath, sp.omega_c)
    down = sp.gamma_hom * (n_s + 1.0)
    up = sp.gamma_hom * n_s + p.w
    R = down + up
    if R <= 0:
        raise ValueError("spin population is undamped (gamma_hom = w = 0)")
    return _Rates(sp.kappa, sp.g, sp.N, R, (up - down) / R, R / 2.0 + sp.gamma_p, p.Delta, n_c)


def _roots(a, b, c):
    """Both real roots, computed without cancellation; [] if complex."""
    if a == 0.0:
        return [] if b == 0 else [-c / b]
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return []
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    if q == 0.0:
        return [0.0, 0.0]
    return sorted([q / a, c / q])


def _terms(y, r: _Rates):
    # additive terms of each scaled equation; rhs is their row sum
    s, nt, D, cr, ci = y
    N = r.N
    G = r.g * math.sqrt(N)
    lr = r.kappa + r.gamma2
    Y = [(1.0 + s) / (2.0 * N), s * nt, (N - 1.0) / N * D]
    return [
        [-r.R * s, r.R * r.s0, 4.0 * G * ci],
        [-2.0 * r.kappa * nt, 2.0 * r.kappa * r.n_c / N, -2.0 * G * ci],
        [-2.0 * r.gamma2 * D, -2.0 * G * s * ci],
        [-lr * cr, -r.Delta * ci],
        [-lr * ci, r.Delta * cr] + [-G * t for t in Y],
    ]


def moment_rhs(y, r: _Rates):
    """Scaled moment equations; y = (s, n / N, D, Re C / sqrt N, Im C / sqrt N)."""
    return np.array([sum(t) for t in _terms(y, r)])


def moment_jacobian(y, r: _Rates):
    s, nt, D, cr, ci = y
    N = r.N
    G = r.g * math.sqrt(N)
    lr = r.kappa + r.gamma2
    return np.array([
        [-r.R, 0.0, 0.0, 0.0, 4.0 * G],
        [0.0, -2.0 * r.kappa, 0.0, 0.0, -2.0 * G],
        [-2.0 * G * ci, 0.0, -2.0 * r.gamma2, 0.0, -2.0 * G * s],
        [0.0, 0.0, 0.0, -lr, -r.Delta],
        [-G * (0.5 / N + nt), -G * s, -G * (N - 1.0) / N, r.Delta, -lr],
    ])


def _pack(st: MaserSteadyState, N):
    c = st.cross / math.sqrt(N)
    return np.array([st.sz, st.photons / N, st.spinspin, c.real, c.imag])


def _residual(st: MaserSteadyState, r: _Rates):
    """Backward error: max over equations of |sum of terms| / sum of |terms|."""
    out = 0.0
    for t in _terms(_pack(st, r.N), r):
        scale = sum(abs(x) for x in t)
        if scale > 0:
            out = max(out, abs(sum(t)) / scale)
    return float(out)


def _candidates(r: _Rates):
    """Steady states from the two quadratics, most physical first."""
    N, kap, g = r.N, r.kappa, r.g
    lam = r.lam
    beta = g * g * N * (kap + r.gamma2) / (kap * abs(lam) ** 2)
    Q = 1.0 + (N - 1.0) / N * kap / r.gamma2
    u = N * r.R / (4.0 * kap)
    n_c = r.n_c
    if beta == 0.0:
        pairs = [(r.s0, 0.0)]
    else:
        # m = n - n_c satisfies (beta Q / u) m^2 + b m + c = 0
        am = beta * Q / u
        bm = 1.0 + beta * (0.5 + n_c) / u - beta * Q * r.s0
        cm = -beta * ((1.0 + r.s0) / 2.0 + r.s0 * n_c)
        ms = _roots(am, bm, cm)
        # the inversion from its own quadratic keeps full relative accuracy
        # above threshold, where s is tiny and s0 - m / u would cancel
        as_ = beta * Q * u
        bs = -(u + beta * (0.5 + n_c) + beta * Q * u * r.s0)
        cs = u * r.s0 - beta / 2.0
        ss = _roots(as_, bs, cs)
        if len(ms) != 2 or len(ss) != 2:
            return []
        # larger m pairs with smaller s
        pairs = [(ss[0], ms[1]), (ss[1], ms[0])]
    out = []
    for s, m in pairs:
        n = n_c + m
        D = s * kap * m / (N * r.gamma2)
        # X = m / beta from the steady photon balance; the direct sum
        # (1 + s)/2 + s n + (N - 1) D cancels badly below threshold
        X = m / beta if beta > 0 else (1.0 + s) / 2.0 + s * n
        C = -1j * g * X / lam
        out.append(MaserSteadyState(float(s), float(n), complex(C), float(D)))
    return out


def _physical(st: MaserSteadyState, tol=1e-12):
    return -1.0 - tol <= st.sz <= 1.0 + tol and st.photons >= -tol * max(1.0, abs(st.photons)) \
        and st.spinspin >= -tol


def moment_stability(p: PumpedParams, steady: MaserSteadyState) -> np.ndarray:
    """Eigenvalues of the moment equations linearised at ``steady``.

    A positive real part means the fixed point is not an attractor: the
    moments then pulse instead of settling, even though the closed-form
    point and its regression spectrum still exist.
    """
    r = _rates(p)
    return np.linalg.eigvals(moment_jacobian(_pack(steady, r.N), r))


class _Budget:
    def __init__(self, fun, limit):
        self.fun, self.limit, self.calls = fun, limit, 0

    def __call__(self, t, y):
        self.calls += 1
        if self.calls > self.limit:
            raise MaserError("moment integration exceeded its evaluation budget", code="no_settle")
        return self.fun(t, y)


def integrate_moments(p: PumpedParams, t_max=None, rtol=1e-9, initial: MaserSteadyState | None = None,
                      max_evals=400_000) -> MaserSteadyState:
    """Integrate the moment equations from the all-ground state (or
    ``initial``) with Radau and the analytic Jacobian.

    The default horizon is 40 e-foldings of the slowest decay rate found
    at the closed-form fixed point. Raises :class:`MaserError` when that
    point is linearly unstable (code "pulsing") or the budget runs out.
    """
    r = _rates(p)
    y0 = np.array([-1.0, r.n_c / r.N, 0.0, 0.0, 0.0]) if initial is None else _pack(initial, r.N)
    cands = [c for c in _candidates(r) if _physical(c)]
    if not cands:
        raise MaserError("no physical steady state", code="no_root")
    stable = [(c, moment_stability(p, c).real.max()) for c in cands]
    stable = [(c, lead) for c, lead in stable if lead < 0]
    if not stable:
        raise MaserError("no linearly stable steady state; the moments pulse", code="pulsing")
    if t_max is None:
        t_max = 40.0 / min(-lead for _, lead in stable)
    # absolute tolerances from the size each moment reaches
    ref = np.max([np.abs(_pack(c, r.N)) for c, _ in stable], axis=0)
    atol = 1e-2 * rtol * np.maximum(ref, np.array([1.0, 1e-30, 1e-30, 1e-30, 1e-30]))
    # resolve single-photon seeds: an implicit step that ignores them can
    # damp the growing lasing mode and settle on the unstable dark state
    atol = np.minimum(atol, rtol / r.N)
    # never ask for more than the rounding noise of each equation's terms allows
    lr = r.kappa + r.gamma2
    noise = np.array([sum(abs(x) for x in t) for t in _terms(ref, r)])
    atol = np.maximum(atol, 1e-13 * noise / np.array([r.R, 2 * r.kappa, 2 * r.gamma2, lr, lr]))
    fun = _Budget(lambda t, y: moment_rhs(y, r), max_evals)
    jac = lambda t, y: moment_jacobian(y, r)  # noqa: E731
    y, span = y0, t_max
    for _ in range(12):
        sol = solve_ivp(fun, (0.0, span), y, method="Radau", rtol=rtol, atol=atol, jac=jac)
        if not sol.success:
            raise MaserError(f"moment integration failed: {sol.message}")
        y_new = sol.y[:, -1]
        change = np.max(np.abs(y_new - y) / np.maximum(np.abs(y_new), atol))
        y, span = y_new, t_max / 2.0
        if change < 1e-12:
            break
    s, nt, D, cr, ci = y
    st = MaserSteadyState(float(s), float(nt * r.N), complex(cr, ci) * math.sqrt(r.N), float(D))
    return MaserSteadyState(st.sz, st.photons, st.cross, st.spinspin, _residual(st, r))


def maser_steady_state(p: PumpedParams) -> MaserSteadyState:
    """Closed-form steady state of the four moment equations.

    If both quadratic roots are physical the one reached by integrating
    from the all-ground state is returned.
    """
    r = _rates(p)
    cands = [st for st in _candidates(r) if _physical(st)]
    if not cands:
        raise MaserError("no physical steady state", code="no_root")
    cands = [MaserSteadyState(c.sz, c.photons, c.cross, c.spinspin, _residual(c, r)) for c in cands]
    if len(cands) == 1:
        return cands[0]
    ref = integrate_moments(p)
    return min(cands, key=lambda c: abs(c.photons - ref.photons) / max(ref.photons, 1e-300)
               + abs(c.sz - ref.sz))


def two_time_drift(p: PumpedParams, steady: MaserSteadyState) -> np.ndarray:
    """Regression matrix for (<a^dag(t) a(0)>, <s+(t) a(0)>)."""
    r = _rates(p)
    return np.array([[-r.kappa, 1j * r.g * r.N],
                     [-1j * r.g * steady.sz, -(r.gamma2 - 1j * r.Delta)]], dtype=complex)


def _spectrum_fn(p, steady):
    r = _rates(p)
    gp = r.gamma2 - 1j * r.Delta
    g2Ns = r.g * r.g * r.N * steady.sz
    num1 = 1j * r.g * r.N * steady.cross
    n = steady.photons

    def S(omega):
        z = 1j * np.asarray(omega, dtype=float)
        # kappa * gp - g^2 N s is the small difference near threshold; keep it explicit
        det = z * z + z * (r.kappa + gp) + (r.kappa * gp - g2Ns)
        return 2.0 * np.real(((z + gp) * n + num1) / det)
    return S


def spectrum_terms(p: PumpedParams, steady: MaserSteadyState):
    """Eigenvalues mu_k and weights c_k with S(omega) = 2 Re sum c_k / (i omega - mu_k)."""
    M = two_time_drift(p, steady)
    mu, P = np.linalg.eig(M)
    v0 = np.array([steady.photons, steady.cross], dtype=complex)
    coef = P[0, :] * np.linalg.solve(P, v0)
    return mu, coef


def _stable_eigs(p, steady):
    M = two_time_drift(p, steady)
    # eigenvalues of a 2x2 from its trace and the well-conditioned determinant
    r = _rates(p)
    gp = r.gamma2 - 1j * r.Delta
    tr = M[0, 0] + M[1, 1]
    det = r.kappa * gp - r.g * r.g * r.N * steady.sz
    sq = np.sqrt(tr * tr / 4.0 - det + 0j)
    a = tr / 2.0 + sq
    b = tr / 2.0 - sq
    # recompute the smaller one from the product to avoid cancellation
    big, small = (a, b) if abs(a) >= abs(b) else (b, a)
    if big != 0:
        small = det / big
    mu = np.array([big, small])
    if np.any(mu.real >= 0):
        bad = mu[np.argmax(mu.real)]
        raise MaserError(f"unstable drift: eigenvalue {bad.real:.6g}{bad.imag:+.6g}j has Re >= 0",
                         code="unstable")
    return mu


def _fwhm(S, mu):
    centers = mu.imag
    widths = np.abs(mu.real)
    grid = np.unique(np.concatenate([c + w * np.linspace(-20, 20, 401) for c, w in zip(centers, widths)]))
    vals = S(grid)
    k = int(np.argmax(vals))
    peak, smax = grid[k], vals[k]
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    if hi > lo:
        res = minimize_scalar(lambda x: -S(x), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12 * (hi - lo)})
        if -res.fun >= smax:
            peak, smax = float(res.x), float(-res.fun)
    half = smax / 2.0
    limit = 1e6 * float(widths.max())
    edges = []
    for sign in (-1.0, 1.0):
        inner, d = peak, float(widths.min()) / 4.0
        while S(peak + sign * d) > half:
            inner = peak + sign * d
            d *= 2.0
            if d > limit:
                raise MaserError("spectrum does not fall to half maximum")
        a, b = sorted((inner, peak + sign * d))
        edges.append(brentq(lambda x: S(x) - half, a, b, xtol=1e-15 * max(abs(b - a), 1e-300), rtol=1e-15))
    return float(peak), float(smax), float(edges[1] - edges[0])


def emission_spectrum(p: PumpedParams, steady: MaserSteadyState | None = None, n_grid=2001,
                      span=10.0) -> EmissionSpectrum:
    """Spectrum 2 Re[(i omega - M)^-1 v0]_0 around its main peak and its FWHM.

    The sign convention puts a mode with Im(mu) = +x at omega = +x, i.e.
    emission above omega_c appears at positive rotating-frame frequency.
    """
    steady = maser_steady_state(p) if steady is None else steady
    mu = _stable_eigs(p, steady)
    S = _spectrum_fn(p, steady)
    shape = S
    if steady.photons == 0.0 and steady.cross == 0.0:
        # nothing is emitted; report the width of the bare correlation e^{M t}[0, 0]
        shape = _spectrum_fn(p, MaserSteadyState(steady.sz, 1.0, 0j, 0.0))
    peak, _, fw = _fwhm(shape, mu)
    omega = peak + fw * np.linspace(-span, span, n_grid)
    dens = S(omega)
    return EmissionSpectrum(omega, dens, fw, fw / (2.0 * math.pi), peak, mu)


def spectrum_integral(p: PumpedParams, steady: MaserSteadyState | None = None) -> float:
    """Numerical integral of S over the real line.

    Gauss-Kronrod on geometrically growing panels around each mode, plus
    the A / omega^2 tails beyond the last panel.
    """
    steady = maser_steady_state(p) if steady is None else steady
    mu = _stable_eigs(p, steady)
    S = _spectrum_fn(p, steady)
    centers = mu.imag
    widths = np.abs(mu.real)
    reach = 1e5 * float(max(np.max(np.abs(mu)), np.max(widths)))
    edges = [c + sgn * w * 10.0 ** k for c, w in zip(centers, widths)
             for k in np.arange(-2.0, math.log10(reach / w) + 0.5, 0.5) for sgn in (-1.0, 1.0)]
    edges = np.unique(np.clip(np.r_[edges, centers], -reach, reach))
    total = 0.0
    tol = 1e-13 * 2.0 * math.pi * abs(steady.photons) / edges.size
    for a, b in zip(edges[:-1], edges[1:]):
        total += quad(S, a, b, limit=200, epsrel=1e-10, epsabs=tol)[0]
    for L in (edges[0], edges[-1]):
        total += abs(L) * float(S(L))  # integral of A / x^2 beyond |L| with A = L^2 S(L)
    return total


@dataclass
class OperatingMap:
    """Maps indexed (gamma_p, w). ``reason`` is "ok" or a failure code for
    masked points; ``settles`` is False where the closed-form point is not an
    attractor of the moment equations (the moments pulse there; photons and
    linewidth are still those of the fixed point)."""

    w: np.ndarray
    gamma_p: np.ndarray
    photons: np.ndarray
    delta_f: np.ndarray  # Hz
    reason: np.ndarray
    settles: np.ndarray

    @property
    def mask(self):
        return self.reason != "ok"


def _map_point(base: PumpedParams, w, gp):
    try:
        p = base.with_(w=float(w), params=base.params.with_(gamma_p=float(gp)))
        st = maser_steady_state(p)
        settles = bool(np.max(moment_stability(p, st).real) < 0)
        spec = emission_spectrum(p, st, n_grid=3)
        return st.photons, spec.delta_f, "ok", settles
    except MaserError as e:
        return math.nan, math.nan, e.code, False
    except (ValueError, ArithmeticError, RuntimeError):
        return math.nan, math.nan, "failed", False


def operating_map(base: PumpedParams, w_grid, gamma_p_grid, threads: int = 1) -> OperatingMap:
    """Photon number and linewidth over a (gamma_p, w) grid; failures are
    masked with a reason code and never abort the map."""
    w_grid = np.asarray(w_grid, dtype=float)
    gp_grid = np.asarray(gamma_p_grid, dtype=float)
    jobs = [(w, gp) for gp in gp_grid for w in w_grid]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            out = list(ex.map(lambda a: _map_point(base, *a), jobs))
    else:
        out = [_map_point(base, *a) for a in jobs]
    shape = (gp_grid.size, w_grid.size)
    col = lambda k: [o[k] for o in out]  # noqa: E731
    return OperatingMap(w_grid, gp_grid,
                        np.array(col(0), dtype=float).reshape(shape),
                        np.array(col(1), dtype=float).reshape(shape),
                        np.array(col(2), dtype=object).reshape(shape),
                        np.array(col(3), dtype=bool).reshape(shape))
