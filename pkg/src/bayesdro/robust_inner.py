"""Worst-case expectation over divergence balls.

For a reference distribution with cumulant generating function
``K(t) = ln E[exp(t Z)]`` the worst-case mean of ``Z`` over a KL ball of
radius ``eps`` is ``inf_{lam > 0} lam * eps + lam * K(1 / lam)``.

Writing ``t = 1 / lam`` the first-order condition is ``t K'(t) - K(t) = eps``.
The left side is the KL divergence of the exponentially tilted law from the
reference, increasing from 0 at ``t = 0`` to ``-ln P(Z = max Z)`` as
``t -> inf``.  The solver finds that root with safeguarded Newton steps in
``ln t``, vectorised over the rows of a cost matrix.  When ``eps`` exceeds the
limit, the infimum is the ``lam -> 0`` limit, ``max Z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

__all__ = [
    "InnerResult",
    "KL",
    "PhiDivergence",
    "RowSolution",
    "kl_inner",
    "kl_inner_approx",
    "kl_inner_cgf",
    "kl_inner_exact_gaussian",
    "kl_inner_pooled",
    "kl_inner_rows",
    "phi_dual_inner",
]

DEFAULT_TOL = 1e-8
_SPAN = 8.0 * math.log(10.0)  # initial bracket: ln(t * scale) in [-_SPAN, _SPAN]


@dataclass(frozen=True)
class InnerResult:
    """Worst-case value with its dual multiplier.

    ``lambda_star`` is ``inf`` when ``eps == 0`` (the mean) and ``0.0`` with
    ``boundary=True`` when the infimum is the ``lam -> 0`` limit (the max).
    """

    value: float
    lambda_star: float
    iterations: int
    boundary: bool = False
    weights: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass
class RowSolution:
    values: np.ndarray
    lambdas: np.ndarray
    weights: np.ndarray
    boundary: np.ndarray
    iterations: int


def _root_in_log_t(hfun, eps, scale, max_iter=200):
    """Solve ``h(t) = eps`` for increasing ``h`` over ``t > 0``, per row.

    ``hfun(t)`` returns ``(h, t * h'(t))``.  The search variable is
    ``s = ln(t * scale)``; the bracket starts at ``[-_SPAN, _SPAN]`` and is
    widened geometrically until it contains the root.
    """
    eps = np.asarray(eps, dtype=float)
    scale = np.asarray(scale, dtype=float)
    lo = np.full(eps.shape, -_SPAN)
    hi = np.full(eps.shape, _SPAN)
    for _ in range(60):
        h_lo, _ = hfun(np.exp(lo) / scale)
        low_bad = h_lo > eps
        h_hi, _ = hfun(np.exp(hi) / scale)
        high_bad = h_hi < eps
        if not (low_bad.any() or high_bad.any()):
            break
        width = hi - lo
        # |s| <= 300 keeps t**2 * var finite
        lo = np.where(low_bad, np.maximum(lo - width, -300.0), lo)
        hi = np.where(high_bad, np.minimum(hi + width, 300.0), hi)
    s = np.clip(0.5 * np.log(np.maximum(2.0 * eps, 1e-300)), lo, hi)
    iterations = 0
    active = np.ones(eps.shape, dtype=bool)
    for iterations in range(1, max_iter + 1):
        h, dh = hfun(np.exp(s) / scale)
        g = h - eps
        lo = np.where(active & (g < 0), s, lo)
        hi = np.where(active & (g > 0), s, hi)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = np.where(dh > 0, g / dh, np.nan)
        newton = s - step
        ok = np.isfinite(newton) & (newton >= lo) & (newton <= hi)
        s_new = np.where(ok, newton, 0.5 * (lo + hi))
        # a converged residual keeps the current point; otherwise step
        solved = np.abs(g) <= 1e-15 * np.maximum(eps, 1e-300) + 4e-16 * np.abs(h)
        s_new = np.where(solved, s, s_new)
        done = solved | (ok & (np.abs(s_new - s) < 1e-13)) | (hi - lo < 1e-13)
        s = np.where(active, s_new, s)
        active &= ~done
        if not active.any():
            break
    return np.exp(s) / scale, iterations


def _tilt_stats(y, t):
    """Tilted statistics of ``y <= 0`` rows at rates ``t`` (one per row).

    Returns ``L = ln mean exp(t y)``, the tilted mean and variance and the
    normalised weights.
    """
    w = np.exp(t[:, None] * y)
    total = w.sum(axis=1)
    p = w / total[:, None]
    m1 = (p * y).sum(axis=1)
    var = np.maximum((p * (y - m1[:, None]) ** 2).sum(axis=1), 0.0)
    L = np.log(total / y.shape[1])
    return L, m1, var, p


def kl_inner_rows(z, eps, tol=DEFAULT_TOL) -> RowSolution:
    """Worst-case means of each row of ``z`` (equal weights within a row).

    ``eps`` is a scalar or one radius per row.  Returns values, multipliers,
    worst-case weights and boundary flags for every row.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    rows, n = z.shape
    if n == 0:
        raise ValueError("kl_inner needs at least one sample")
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (rows,)).copy()
    if np.any(eps < 0) or not np.all(np.isfinite(eps)):
        raise ValueError("ambiguity radius must be finite and non-negative")

    zmax = z.max(axis=1)
    zrange = zmax - z.min(axis=1)
    values = z.mean(axis=1)
    lambdas = np.full(rows, np.inf)
    weights = np.full((rows, n), 1.0 / n)
    boundary = np.zeros(rows, dtype=bool)

    const = zrange <= 1e-14 * np.maximum(1.0, np.abs(zmax))
    values[const] = zmax[const]
    at_max = z == zmax[:, None]
    p_max = at_max.mean(axis=1)
    limit = -np.log(p_max)
    top = ~const & (eps > 0) & (eps >= limit)
    if top.any():
        values[top] = zmax[top]
        lambdas[top] = 0.0
        boundary[top] = True
        weights[top] = at_max[top] / at_max[top].sum(axis=1, keepdims=True)

    inner = ~const & (eps > 0) & ~top
    iterations = 0
    if inner.any():
        y = (z[inner] - zmax[inner, None]) / zrange[inner, None]
        e = eps[inner]

        def hfun(tau):
            L, m1, var, _ = _tilt_stats(y, tau)
            return tau * m1 - L, tau * tau * var

        tau, iterations = _root_in_log_t(hfun, e, np.ones_like(e))
        L, _, _, p = _tilt_stats(y, tau)
        values[inner] = zmax[inner] + zrange[inner] * (e + L) / tau
        lambdas[inner] = zrange[inner] / tau
        weights[inner] = p
    # guard against round-off outside [mean, max]
    values = np.minimum(np.maximum(values, z.mean(axis=1)), zmax)
    return RowSolution(values, lambdas, weights, boundary, iterations)


def kl_inner(z_samples, eps, tol=DEFAULT_TOL) -> InnerResult:
    """Worst-case mean of equally weighted samples over a KL ball."""
    z = np.asarray(z_samples, dtype=float).ravel()
    if z.size == 0:
        raise ValueError("kl_inner needs at least one sample")
    if eps < 0:
        raise ValueError("ambiguity radius must be non-negative")
    sol = kl_inner_rows(z[None, :], float(eps), tol)
    return InnerResult(float(sol.values[0]), float(sol.lambdas[0]), sol.iterations,
                       bool(sol.boundary[0]), sol.weights[0])


def kl_inner_pooled(z, eps, tol=DEFAULT_TOL):
    """Shared-multiplier version: ``inf_lam mean_r (lam eps + lam ln mean_j exp(z_rj / lam))``.

    Returns ``(value, lambda_star, weights)`` where ``weights[r]`` is the
    tilt of row ``r`` at the common multiplier.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    rows, n = z.shape
    if eps < 0:
        raise ValueError("ambiguity radius must be non-negative")
    zmax = z.max(axis=1)
    uniform = np.full((rows, n), 1.0 / n)
    if eps == 0:
        return float(z.mean(axis=1).mean()), math.inf, uniform
    y = z - zmax[:, None]
    scale = float(np.max(-y.min(axis=1)))
    if scale <= 1e-14 * max(1.0, float(np.max(np.abs(zmax)))):
        return float(zmax.mean()), 0.0, uniform
    at_max = z == zmax[:, None]
    limit = float(np.mean(-np.log(at_max.mean(axis=1))))
    if eps >= limit:
        return float(zmax.mean()), 0.0, at_max / at_max.sum(axis=1, keepdims=True)

    def hfun(t):
        tt = np.full(rows, t[0])
        L, m1, var, _ = _tilt_stats(y, tt)
        return np.array([np.mean(t[0] * m1 - L)]), np.array([np.mean(t[0] ** 2 * var)])

    t, _ = _root_in_log_t(hfun, np.array([float(eps)]), np.array([scale]))
    L, _, _, p = _tilt_stats(y, np.full(rows, t[0]))
    value = float(zmax.mean() + (eps + L.mean()) / t[0])
    return value, float(1.0 / t[0]), p


def kl_inner_cgf(cgf: Callable, dcgf: Callable, d2cgf: Callable, eps, scale=1.0) -> InnerResult:
    """Same solver for a population law given its cumulant generating function.

    ``cgf``, ``dcgf`` and ``d2cgf`` evaluate ``K``, ``K'`` and ``K''`` at
    ``t >= 0``.  ``scale`` is a typical spread of ``Z`` (sets the bracket).
    The law is assumed to have unbounded support, so the root always exists.
    """
    if eps < 0:
        raise ValueError("ambiguity radius must be non-negative")
    if eps == 0:
        return InnerResult(float(dcgf(0.0)), math.inf, 0)

    def hfun(t):
        tt = float(t[0])
        return np.array([tt * dcgf(tt) - cgf(tt)]), np.array([tt * tt * d2cgf(tt)])

    t, it = _root_in_log_t(hfun, np.array([float(eps)]), np.array([1.0 / scale]))
    tt = float(t[0])
    return InnerResult(float((eps + cgf(tt)) / tt), 1.0 / tt, it)


def kl_inner_exact_gaussian(mu, sigma, eps) -> float:
    """Closed form ``mu + sigma * sqrt(2 eps)`` for Gaussian Z."""
    if sigma < 0 or eps < 0:
        raise ValueError("sigma and eps must be non-negative")
    return mu + sigma * math.sqrt(2.0 * eps)


def kl_inner_approx(mean, std, eps):
    """Small-radius mean/std approximation and the matching multiplier.

    Returns ``(mean + std * sqrt(2 eps), std / sqrt(2 eps))``.
    """
    if std < 0 or eps < 0:
        raise ValueError("std and eps must be non-negative")
    lam = math.inf if eps == 0 else std / math.sqrt(2.0 * eps)
    return mean + std * math.sqrt(2.0 * eps), lam


# -- generic phi-divergence dual -------------------------------------------


@dataclass(frozen=True)
class PhiDivergence:
    """A divergence generator ``phi`` with ``phi(1) = 0`` and its convex conjugate."""

    name: str
    phi: Callable
    conjugate: Callable

    def check(self, probe=np.linspace(-5.0, 5.0, 41)):
        if abs(self.phi(1.0)) > 1e-12:
            raise ValueError(f"{self.name}: phi(1) must be 0")
        a, b = probe[:-1], probe[1:]
        lhs = self.conjugate(0.5 * (a + b))
        rhs = 0.5 * (self.conjugate(a) + self.conjugate(b))
        if np.any(lhs > rhs + 1e-12 * (1 + np.abs(rhs))):
            raise ValueError(f"{self.name}: conjugate fails the midpoint convexity check")


KL = PhiDivergence(
    "kl",
    phi=lambda x: x * np.log(x) - x + 1.0 if x > 0 else 1.0,
    conjugate=lambda y: np.expm1(np.minimum(y, 700.0)),
)


def phi_dual_inner(z_samples, phi: PhiDivergence = KL, eps=0.0, tol=DEFAULT_TOL) -> InnerResult:
    """Worst-case mean over a phi-divergence ball via nested 1-D searches.

    Minimises ``lam eps + mu + mean(lam * phi*((z - mu) / lam))`` with an
    outer bounded Brent search on ``ln lam`` and an inner Brent search on
    ``mu``.
    """
    phi.check()
    z = np.asarray(z_samples, dtype=float).ravel()
    if z.size == 0:
        raise ValueError("phi_dual_inner needs at least one sample")
    if eps < 0:
        raise ValueError("ambiguity radius must be non-negative")
    zmin, zmax = float(z.min()), float(z.max())
    spread = zmax - zmin
    if spread <= 1e-14 * max(1.0, abs(zmax)):
        return InnerResult(zmax, math.inf, 0)
    if eps == 0:
        return InnerResult(float(z.mean()), math.inf, 0)

    evals = [0]

    def inner(lam):
        def f(mu):
            return lam * eps + mu + lam * np.mean(phi.conjugate((z - mu) / lam))

        res = optimize.minimize_scalar(f, bracket=(zmin - spread, zmax), tol=1e-12)
        evals[0] += res.nfev
        return res.fun

    lo, hi = math.log(1e-8 * spread), math.log(1e8 * spread)
    res = optimize.minimize_scalar(lambda u: inner(math.exp(u)), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-10})
    if res.x - lo < 1e-6:
        return InnerResult(zmax, 0.0, evals[0], boundary=True)
    return InnerResult(float(res.fun), float(math.exp(res.x)), evals[0])
