"""Rules for the size of the KL ambiguity set around f(.|theta).

* ``eps1``: estimated KL divergence from the data to f(.|theta).
* ``eps2``: half of ``eps1``.
* ``eps3``: the smallest KL ball around f(.|theta) that contains a law under
  which the empirical SAA decision satisfies the first-order (KKT)
  optimality conditions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .distributions import RandomStream
from .posterior import BayesModel, DataError, ProductModel, as_data_matrix

__all__ = [
    "AmbiguitySpec",
    "EULER_GAMMA",
    "InfeasibleCalibration",
    "calibrate",
    "epsilon1",
    "epsilon2",
    "epsilon_for_theta",
    "estimate_kl_empirical",
    "min_kl_ball",
    "optimality_constraints",
    "tilt_dual",
]

log = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649015329
MODES = ("fixed", "eps1", "eps2", "eps3")


class InfeasibleCalibration(RuntimeError):
    """No reweighting of the Monte Carlo sample makes the decision stationary."""


@dataclass(frozen=True)
class AmbiguitySpec:
    mode: str = "fixed"
    value: float = 0.0
    mc_samples: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown ambiguity mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "fixed" and not (self.value >= 0 and math.isfinite(self.value)):
            raise ValueError("fixed ambiguity radius must be finite and non-negative")
        if self.mode == "eps3" and self.mc_samples < 2:
            raise ValueError("eps3 needs at least 2 Monte Carlo samples")

    @classmethod
    def fixed(cls, value: float) -> "AmbiguitySpec":
        return cls("fixed", float(value))

    @classmethod
    def parse(cls, text: str, mc_samples: int = 100) -> "AmbiguitySpec":
        """Parse ``fixed:0.3``, ``eps1``, ``eps2`` or ``eps3``."""
        text = text.strip().lower()
        if text.startswith("fixed:"):
            return cls("fixed", float(text.split(":", 1)[1]), mc_samples)
        return cls(text, 0.0, mc_samples)

    @property
    def label(self) -> str:
        return f"{self.value:g}" if self.mode == "fixed" else self.mode


# -- eps1 / eps2 -------------------------------------------------------------


def _spacing_estimate(x, component: BayesModel, theta, bias_correction: bool) -> float:
    x = np.asarray(x, dtype=float).ravel()
    points, counts = np.unique(x, return_counts=True)
    if points.size < 2:
        raise DataError("KL estimation needs at least two distinct observations")
    anchor = component.support_lower
    if points[0] <= anchor:
        raise DataError(f"observation {points[0]!r} is not inside the support")
    n = x.size
    # piecewise-linear interpolation of the empirical cdf, anchored at the
    # lower end of the support
    nodes = np.concatenate([[anchor], points])
    levels = np.concatenate([[0.0], np.cumsum(counts) / n])
    delta = 0.5 * np.min(np.diff(nodes))
    d_pc = np.interp(points, nodes, levels) - np.interp(points - delta, nodes, levels)
    dens = component.pdf(theta, points)
    with np.errstate(divide="ignore"):
        terms = np.log(d_pc / (delta * dens))
    estimate = float(counts @ terms) / n
    if bias_correction:
        # n * spacing * density is asymptotically Exp(1); E[-ln Exp(1)] = gamma
        estimate -= EULER_GAMMA
    return estimate


def _finite_kl(x, component: BayesModel, theta) -> float:
    idx = component.support_index(x)
    p_hat = np.bincount(idx, minlength=len(component.support)) / idx.size
    seen = p_hat > 0
    probs = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore"):
        return float(np.sum(p_hat[seen] * np.log(p_hat[seen] / probs[seen])))


def estimate_kl_empirical(data, model, theta, bias_correction: bool = True, clamp: bool = True):
    """Estimated KL divergence from the data-generating law to f(.|theta).

    Continuous coordinates use the spacing estimator on a linear
    interpolation of the empirical cdf; finite coordinates compare the
    empirical mass vector with the categorical mass directly.  Product
    models add the per-coordinate divergences.
    """
    if isinstance(model, ProductModel):
        x = as_data_matrix(data, model.dim)
        total = sum(estimate_kl_empirical(x[:, k], c, theta[k], bias_correction, clamp=False)
                    for k, c in enumerate(model.components))
        return max(0.0, total) if clamp else total
    x = np.asarray(data, dtype=float).ravel()
    if model.continuous:
        est = _spacing_estimate(x, model, theta, bias_correction)
    else:
        est = _finite_kl(x, model, theta)
    return max(0.0, est) if clamp else est


def epsilon1(data, model, theta) -> float:
    return estimate_kl_empirical(data, model, theta)


def epsilon2(data, model, theta) -> float:
    return 0.5 * epsilon1(data, model, theta)


# -- eps3 --------------------------------------------------------------------


def optimality_constraints(cost_model, x_hat, tol=1e-9):
    """Linear maps encoding the KKT conditions at ``x_hat``.

    Returns ``(eq, ineq)`` matrices so that a law Q makes ``x_hat`` optimal
    iff ``eq @ E_Q[g] = 0`` and ``ineq @ E_Q[g] >= 0``, where ``g`` is the
    cost subgradient at ``x_hat``.
    """
    x = np.atleast_1d(np.asarray(x_hat, dtype=float))
    d = x.size
    eq, ineq = [], []
    if cost_model.feasible_set == "box":
        lo, hi = cost_model.lower, cost_model.upper
        for j in range(d):
            row = np.zeros(d)
            row[j] = 1.0
            at_lo = x[j] <= lo[j] + tol * max(1.0, abs(hi[j]))
            at_hi = x[j] >= hi[j] - tol * max(1.0, abs(hi[j]))
            if at_lo and at_hi:
                continue
            if at_lo:
                ineq.append(row)
            elif at_hi:
                ineq.append(-row)
            else:
                eq.append(row)
    elif cost_model.feasible_set == "simplex":
        active = np.nonzero(x > tol)[0]
        s = active[0]
        for j in range(d):
            if j == s:
                continue
            row = np.zeros(d)
            row[j], row[s] = 1.0, -1.0
            (eq if j in active else ineq).append(row)
    else:
        raise ValueError(f"unknown feasible set {cost_model.feasible_set!r}")
    return np.array(eq).reshape(-1, d), np.array(ineq).reshape(-1, d)


def _log_mean_exp_grad(F, a):
    s = F @ a
    smax = s.max()
    w = np.exp(s - smax)
    total = w.sum()
    value = smax + math.log(total / F.shape[0])
    return value, (w / total) @ F


def tilt_dual(u, v=None) -> float:
    """Minimum KL divergence from the uniform law on the rows of the features.

    Solves ``min_r mean(r ln r)`` subject to ``mean(r) = 1``,
    ``mean(r u) = 0`` and ``mean(r v) >= 0`` through its dual
    ``-min_{a, b >= 0} ln mean exp(u a + v b)``.

    Raises :class:`InfeasibleCalibration` when no reweighting satisfies the
    constraints.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    u = u.reshape(n, -1)
    v = np.zeros((n, 0)) if v is None else np.asarray(v, dtype=float).reshape(n, -1)
    F = np.hstack([u, v])
    m_eq = u.shape[1]
    if F.shape[1] == 0:
        return 0.0
    norms = np.max(np.abs(F), axis=0)
    keep = norms > 0
    if not keep.any():
        return 0.0
    F = F[:, keep] / norms[keep]
    is_eq = (np.arange(keep.size) < m_eq)[keep]
    m = F.shape[1]
    limit = math.log(n)

    if m == 1:
        f = F[:, 0]
        zero_frac = np.mean(f == 0)
        if is_eq[0]:
            if f.min() >= 0 or f.max() <= 0:
                if zero_frac > 0:
                    return -math.log(zero_frac)
                raise InfeasibleCalibration("sample subgradients all have the same sign")
        else:
            if f.mean() >= 0:
                return 0.0
            if f.max() <= 0:
                if zero_frac > 0:
                    return -math.log(zero_frac)
                raise InfeasibleCalibration("no reweighting satisfies the inequality")
        res = optimize.minimize_scalar(lambda a: _log_mean_exp_grad(F, np.array([a]))[0],
                                       bracket=(-1.0, 1.0), tol=1e-12)
        a = res.x if is_eq[0] else max(res.x, 0.0)
        value = -_log_mean_exp_grad(F, np.array([a]))[0]
    else:
        bounds = [(None, None) if e else (0.0, None) for e in is_eq]
        bounds = [(lo if lo is not None else -1e4, 1e4) for lo, _ in bounds]
        res = optimize.minimize(lambda a: _log_mean_exp_grad(F, a), np.zeros(m), jac=True,
                                method="L-BFGS-B", bounds=bounds,
                                options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000})
        value = -float(res.fun)
    if value > limit + 1e-9:
        raise InfeasibleCalibration("tilt dual is unbounded")
    return max(0.0, float(value))


def _single_theta_batch(model, theta):
    if isinstance(model, ProductModel):
        return tuple(_single_theta_batch(c, theta[k]) for k, c in enumerate(model.components))
    if model.continuous:
        return np.array([float(theta)])
    return np.asarray(theta, dtype=float)[None, :]


def min_kl_ball(theta, x_hat, model, cost_model, L: int, stream: RandomStream) -> float:
    """Radius of the smallest KL ball around f(.|theta) keeping ``x_hat`` optimal.

    Draws ``L`` scenarios from f(.|theta) and solves the sample version of
    the minimum-divergence problem through :func:`tilt_dual`.
    """
    if L < 2:
        raise ValueError("L must be at least 2")
    xi = model.sample_xi(_single_theta_batch(model, theta), L, stream)
    xi = xi.reshape(L, -1)
    g = cost_model.subgradient(x_hat, xi)
    eq, ineq = optimality_constraints(cost_model, x_hat)
    return tilt_dual(g @ eq.T, g @ ineq.T)


def epsilon_for_theta(spec: AmbiguitySpec, theta, data, model, cost_model=None, x_hat=None,
                      stream: RandomStream | None = None) -> float:
    if spec.mode == "fixed":
        return spec.value
    if spec.mode == "eps1":
        return epsilon1(data, model, theta)
    if spec.mode == "eps2":
        return epsilon2(data, model, theta)
    if x_hat is None or cost_model is None or stream is None:
        raise ValueError("eps3 needs a cost model, the SAA decision and a random stream")
    return min_kl_ball(theta, x_hat, model, cost_model, spec.mc_samples, stream)


def calibrate(spec: AmbiguitySpec, thetas, data, model, cost_model=None, x_hat=None,
              stream: RandomStream | None = None):
    """Radii for every posterior draw in ``thetas``.

    Returns ``(epsilons, n_fallback)``.  Draws where the ``eps3`` problem is
    infeasible fall back to ``eps1`` and are counted.
    """
    eps = np.empty(len(thetas))
    fallback = 0
    for i, theta in enumerate(thetas):
        sub = None if stream is None else stream.child(i)
        try:
            eps[i] = epsilon_for_theta(spec, theta, data, model, cost_model, x_hat, sub)
        except InfeasibleCalibration:
            fallback += 1
            eps[i] = epsilon1(data, model, theta)
    if fallback:
        log.warning("eps3 infeasible for %d of %d posterior draws; used eps1 instead",
                    fallback, len(thetas))
    return eps, fallback
