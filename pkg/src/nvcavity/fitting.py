"""Bounded damped least squares (Levenberg-Marquardt) and the line-shape fits
built on it.

The engine works on a residual callable, uses forward-difference Jacobians
and keeps iterates inside box bounds by projection. Model-specific fitters
rescale their data to O(1) units before calling it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class FitError(RuntimeError):
    """Base class for fit failures. ``x`` holds the last iterate."""

    def __init__(self, msg, x=None, nit=0):
        super().__init__(msg)
        self.x = None if x is None else np.array(x)
        self.nit = nit


class MaxIterationsError(FitError):
    pass


class SingularNormalEquationsError(FitError):
    pass


class NonFiniteResidualError(FitError):
    pass


@dataclass
class FitProblem:
    residual: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None  # inverse variances, one per residual
    x_scale: Optional[np.ndarray] = None  # typical magnitude per parameter

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        n = self.x0.size
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the parameter count")
        if np.any(self.lower >= self.upper):
            raise ValueError("lower bounds must be below upper bounds")
        if np.any(self.x0 < self.lower) or np.any(self.x0 > self.upper):
            raise ValueError("initial guess outside bounds")

    def weighted(self, x):
        r = np.asarray(self.residual(x), dtype=float)
        if self.weights is not None:
            r = r * np.sqrt(self.weights)
        return r


@dataclass
class FitConfig:
    gtol: float = 1e-12
    xtol: float = 1e-12
    ftol: float = 1e-14
    max_iter: int = 200
    lambda0: float = 1e-3
    lambda_max: float = 1e16


@dataclass
class FitResult:
    x: np.ndarray
    cov: np.ndarray
    residual_norm: float
    nit: int
    converged: bool
    reason: str
    history: list = field(default_factory=list, repr=False)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def _jacobian(problem, x, r0, scale):
    n = x.size
    J = np.empty((r0.size, n))
    eps = np.sqrt(np.finfo(float).eps)
    for j in range(n):
        h = eps * max(abs(x[j]), scale[j])
        xp = x.copy()
        if xp[j] + h > problem.upper[j]:
            h = -h
        xp[j] += h
        rp = problem.weighted(xp)
        if not np.all(np.isfinite(rp)):
            raise NonFiniteResidualError(f"non-finite residual in Jacobian column {j}", x)
        J[:, j] = (rp - r0) / h
    return J


def least_squares(problem: FitProblem, config: FitConfig | None = None) -> FitResult:
    """Minimise 0.5 * ||r(x)||^2 subject to box bounds.

    The first trial step of each iteration is an undamped Gauss-Newton step
    when the previous step succeeded without damping, so linear residuals
    are solved in one iteration.
    """
    cfg = config or FitConfig()
    x = problem.x0.copy()
    r = problem.weighted(x)
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidualError("residual not finite at the initial guess", x)
    scale = (np.abs(problem.x0) if problem.x_scale is None else np.asarray(problem.x_scale, float))
    scale = np.where(scale > 0, scale, 1.0)
    cost = 0.5 * float(r @ r)
    lam = 0.0
    history = [cost]
    n = x.size
    J = None
    for it in range(1, cfg.max_iter + 1):
        J = _jacobian(problem, x, r, scale)
        grad = J.T @ r
        if np.max(np.abs(grad * scale)) <= cfg.gtol * max(cost, 1e-300) ** 0.5 or cost == 0.0:
            return _finish(problem, x, r, J, it - 1, True, "gradient", history)
        JTJ = J.T @ J
        diag = np.diag(JTJ).copy()
        diag[diag <= 0] = 1.0
        rank = np.linalg.matrix_rank(J)
        while True:
            if lam == 0.0 and rank < n:
                lam = cfg.lambda0
            A = JTJ + lam * np.diag(diag)
            try:
                step = np.linalg.solve(A, -grad)
            except np.linalg.LinAlgError:
                step = None
            if step is None or not np.all(np.isfinite(step)):
                lam = max(lam * 10.0, cfg.lambda0)
                if lam > cfg.lambda_max:
                    raise SingularNormalEquationsError("normal equations singular; damping exhausted", x, it)
                continue
            x_new = np.clip(x + step, problem.lower, problem.upper)
            projected = not np.allclose(x_new, x + step, rtol=0, atol=0)
            r_new = problem.weighted(x_new)
            if not np.all(np.isfinite(r_new)):
                cost_new = np.inf
            else:
                cost_new = 0.5 * float(r_new @ r_new)
            if cost_new <= cost:
                break
            lam = max(lam * 10.0, cfg.lambda0)
            if lam > cfg.lambda_max:
                if rank < n:
                    raise SingularNormalEquationsError("normal equations singular; damping exhausted", x, it)
                # no descent left at machine precision: numerical minimum
                return _finish(problem, x, r, J, it, True, "no further reduction", history)
        dx = x_new - x
        dcost = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        if projected:
            lam = max(lam * 2.0, cfg.lambda0)
        else:
            lam = 0.0 if lam <= cfg.lambda0 else lam / 10.0
        if np.all(np.abs(dx) <= cfg.xtol * (np.abs(x) + scale * cfg.xtol)):
            J = _jacobian(problem, x, r, scale)
            return _finish(problem, x, r, J, it, True, "step", history)
        if dcost <= cfg.ftol * cost or cost == 0.0:
            J = _jacobian(problem, x, r, scale)
            return _finish(problem, x, r, J, it, True, "cost", history)
    raise MaxIterationsError(f"no convergence after {cfg.max_iter} iterations", x, cfg.max_iter)


def _finish(problem, x, r, J, nit, converged, reason, history):
    m, n = J.shape
    dof = max(m - n, 1)
    s2 = float(r @ r) / dof
    cov = np.linalg.pinv(J.T @ J) * s2
    cov = 0.5 * (cov + cov.T)
    return FitResult(x=x, cov=cov, residual_norm=float(np.linalg.norm(r)), nit=nit,
                     converged=converged, reason=reason, history=history)


# ---------------------------------------------------------------- Lorentzian


def lorentzian(x, center, hwhm, amplitude, offset):
    return offset + amplitude / (1.0 + ((x - center) / hwhm) ** 2)


@dataclass
class LorentzianFit:
    center: float
    hwhm: float
    amplitude: float
    offset: float
    cov: np.ndarray
    residual_norm: float
    flag: Optional[str] = None

    @property
    def stderr(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def _lorentz_guess(x, y):
    k = int(np.argmax(y))
    base = float(np.min(y))
    peak = float(y[k]) - base
    half = base + 0.5 * peak
    above = np.nonzero(y >= half)[0]
    width = (x[above[-1]] - x[above[0]]) / 2.0 if above.size > 1 else (x[1] - x[0])
    return np.array([x[k], max(width, 0.5 * abs(x[1] - x[0])), peak, base])


def fit_lorentzian(x, y, weights=None, config: FitConfig | None = None) -> LorentzianFit:
    """Fit offset + A / (1 + ((x - c) / h)^2).

    Returns a :class:`LorentzianFit`; ``flag`` is set (not raised) when the
    data has no interior peak or the width runs into its bound.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 5:
        raise ValueError("need at least 5 points for a Lorentzian fit")
    order = np.argsort(x)
    x, y = x[order], y[order]
    w = None if weights is None else np.asarray(weights, float)[order]
    xs = max(float(np.ptp(x)), 1e-300)
    x_mid = float(np.mean(x))
    ys = max(float(np.max(np.abs(y))), 1e-300)
    u = (x - x_mid) / xs
    v = y / ys
    wv = None if w is None else w * ys ** 2
    p0 = _lorentz_guess(u, v)
    du = float(np.min(np.diff(u))) if u.size > 1 else 1.0
    h_min = 1e-3 * du
    lower = np.array([-np.inf, h_min, 0.0, -np.inf])
    upper = np.array([np.inf, 1e3, np.inf, np.inf])
    p0 = np.clip(p0, lower + 1e-12, upper)

    def resid(p):
        return lorentzian(u, *p) - v

    prob = FitProblem(resid, p0, lower, upper, weights=wv, x_scale=np.array([0.1, p0[1], 1.0, 1.0]))
    res = least_squares(prob, config)
    c, h, a, b = res.x
    S = np.diag([xs, xs, ys, ys])
    cov = S @ res.cov @ S
    flag = None
    interior = int(np.argmax(y)) not in (0, y.size - 1)
    if not interior or not (u[0] <= c <= u[-1]):
        flag = "peak off-grid"
    elif h <= h_min * 1.0001 or h >= upper[1] * 0.9999:
        flag = "width at bound"
    return LorentzianFit(center=c * xs + x_mid, hwhm=h * xs, amplitude=a * ys, offset=b * ys,
                         cov=cov, residual_norm=res.residual_norm * ys, flag=flag)
