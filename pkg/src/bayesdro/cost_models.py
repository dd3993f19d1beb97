"""Cost functions, feasible sets and exact true-system oracles.

Two model kinds are provided:

* :class:`Newsvendor` -- ``G(x, xi) = sum_i h_i (x_i - xi_i)^+ + b_i (xi_i - x_i)^+ + c_i x_i``
  on the box ``[0, M]^d``.
* :class:`Portfolio` -- ``G(x, xi) = -xi @ x`` on the probability simplex
  (long-only, fully invested).

Scenario arrays always carry a trailing coordinate axis: ``xi`` has shape
``(..., dim)`` and ``cost`` returns shape ``(...)``.

The true distribution of each coordinate is one of the demand laws below.
They are used only to generate data and to score decisions exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, stats

from .distributions import RandomStream, sample_exponential, sample_truncated_normal

__all__ = [
    "ConfigurationError",
    "ExponentialDemand",
    "FiniteDistribution",
    "Newsvendor",
    "Portfolio",
    "TrueMoments",
    "TruncatedNormalDemand",
    "cost",
    "project_simplex",
    "subgradient",
    "true_moments",
    "true_optimum",
]


class ConfigurationError(ValueError):
    """A model or experiment was configured with unusable parameters."""


@dataclass(frozen=True)
class TrueMoments:
    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            # round-off from E[G^2] - E[G]^2
            if self.variance < -1e-9 * (1.0 + self.mean**2):
                raise ValueError(f"negative variance {self.variance}")
            object.__setattr__(self, "variance", 0.0)


# -- true demand laws -------------------------------------------------------


@dataclass(frozen=True)
class ExponentialDemand:
    mean: float

    def __post_init__(self):
        if not self.mean > 0:
            raise ConfigurationError("exponential mean must be positive")

    def sample(self, n: int, stream: RandomStream) -> np.ndarray:
        return sample_exponential(1.0 / self.mean, stream, n)

    def ppf(self, q: float) -> float:
        return -self.mean * math.log1p(-q)

    def newsvendor_moments(self, x, h, b, c):
        """Closed-form first and second moments of one newsvendor term."""
        m = self.mean
        tail = math.exp(-x / m)
        under1 = x - m * (1.0 - tail)  # E (x - xi)^+
        under2 = x * x - 2 * m * x + 2 * m * m * (1.0 - tail)  # E [(x - xi)^+]^2
        over1 = m * tail  # E (xi - x)^+
        over2 = 2 * m * m * tail
        mean = h * under1 + b * over1 + c * x
        second = h * h * under2 + b * b * over2 + 2 * c * x * (h * under1 + b * over1) + (c * x) ** 2
        return mean, second


@dataclass(frozen=True)
class TruncatedNormalDemand:
    """Normal(mean, std^2) conditioned on exceeding ``lower``."""

    mean: float
    std: float
    lower: float = 0.0

    def __post_init__(self):
        if not self.std > 0:
            raise ConfigurationError("truncated normal std must be positive")

    @cached_property
    def _dist(self):
        a = (self.lower - self.mean) / self.std
        return stats.truncnorm(a, np.inf, loc=self.mean, scale=self.std)

    def sample(self, n: int, stream: RandomStream) -> np.ndarray:
        return sample_truncated_normal(self.mean, self.std, self.lower, stream, n)

    def ppf(self, q: float) -> float:
        return float(self._dist.ppf(q))

    def newsvendor_moments(self, x, h, b, c, rtol=1e-10):
        pdf = self._dist.pdf
        lo = self.lower

        def moment(k):
            left = right = 0.0
            if x > lo:
                left = integrate.quad(
                    lambda t: (h * (x - t) + c * x) ** k * pdf(t), lo, x, epsrel=rtol, limit=200)[0]
            right = integrate.quad(
                lambda t: (b * (t - x) + c * x) ** k * pdf(t), max(x, lo), np.inf, epsrel=rtol,
                limit=200)[0]
            return left + right

        return moment(1), moment(2)


@dataclass(frozen=True)
class FiniteDistribution:
    support: tuple
    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if len(self.support) != p.size or p.size == 0:
            raise ConfigurationError("support and probabilities must have equal, non-zero length")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ConfigurationError("probabilities must be non-negative and sum to one")

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.support, dtype=float)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @property
    def mean(self) -> float:
        return float(self.points @ self.p)

    @property
    def variance(self) -> float:
        return float(((self.points - self.mean) ** 2) @ self.p)

    def sample(self, n: int, stream: RandomStream) -> np.ndarray:
        cdf = np.cumsum(self.p)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, stream.generator().random(n), side="right")
        return self.points[np.minimum(idx, self.points.size - 1)]

    def ppf(self, q: float) -> float:
        cdf = np.cumsum(self.p)
        idx = int(np.searchsorted(cdf, q - 1e-12, side="left"))
        return float(self.points[min(idx, self.points.size - 1)])

    def newsvendor_moments(self, x, h, b, c):
        g = h * np.maximum(x - self.points, 0) + b * np.maximum(self.points - x, 0) + c * x
        return float(g @ self.p), float(g**2 @ self.p)


# -- cost models ------------------------------------------------------------


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


class _CostModel:
    dim: int
    truth: tuple

    def _check(self, x, xi):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xi = np.asarray(xi, dtype=float)
        if self.dim == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
            xi = xi[..., None]
        if x.shape != (self.dim,) or xi.shape[-1] != self.dim:
            raise ValueError(
                f"dimension mismatch: model has dim {self.dim}, got x{x.shape} and xi{xi.shape}")
        return x, xi

    def sample_truth(self, n: int, stream: RandomStream) -> np.ndarray:
        """``(n, dim)`` i.i.d. draws from the true distribution."""
        if self.truth is None:
            raise ConfigurationError("no true distribution configured")
        return np.stack([t.sample(n, stream.child(k)) for k, t in enumerate(self.truth)], axis=-1)

    def is_feasible(self, x, tol=1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.allclose(self.project(x), x, atol=tol))


class Newsvendor(_CostModel):
    """Multi-item newsvendor with independent items.

    ``h``, ``b``, ``c`` and ``upper`` broadcast to ``dim`` entries.
    ``truth`` is one demand law per item (optional; needed for scoring).
    """

    feasible_set = "box"

    def __init__(self, h=3.0, b=8.0, c=0.0, upper=50.0, dim=1, truth=None):
        self.dim = int(dim)
        self.h = np.broadcast_to(np.asarray(h, dtype=float), (self.dim,)).copy()
        self.b = np.broadcast_to(np.asarray(b, dtype=float), (self.dim,)).copy()
        self.c = np.broadcast_to(np.asarray(c, dtype=float), (self.dim,)).copy()
        self.lower = np.zeros(self.dim)
        self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (self.dim,)).copy()
        if np.any(self.h <= 0) or np.any(self.b <= 0) or np.any(self.c < 0):
            raise ConfigurationError("newsvendor needs h > 0, b > 0, c >= 0")
        if np.any(self.upper <= 0):
            raise ConfigurationError("order bound M must be positive")
        if truth is not None:
            truth = tuple(truth) if isinstance(truth, (list, tuple)) else (truth,)
            if len(truth) != self.dim:
                raise ConfigurationError("need one true demand law per item")
        self.truth = truth

    def __repr__(self):
        return (f"Newsvendor(h={self.h.tolist()}, b={self.b.tolist()}, c={self.c.tolist()}, "
                f"upper={self.upper.tolist()}, truth={self.truth})")

    def cost(self, x, xi):
        x, xi = self._check(x, xi)
        d = x - xi
        return (self.h * np.maximum(d, 0) + self.b * np.maximum(-d, 0) + self.c * x).sum(axis=-1)

    def subgradient(self, x, xi):
        # at a tie xi == x the holding slope h + c is used
        x, xi = self._check(x, xi)
        return np.where(xi <= x, self.h, -self.b) + self.c

    def project(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def xi_slopes(self):
        """Slopes of ``xi -> G(x, xi)`` per item: (left of x, right of x)."""
        return -self.h, self.b

    def true_moments(self, x) -> TrueMoments:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.truth is None:
            raise ConfigurationError("no true distribution configured")
        mean = var = 0.0
        for k, law in enumerate(self.truth):
            if not hasattr(law, "newsvendor_moments"):
                raise ConfigurationError(f"unsupported true distribution {law!r}")
            m1, m2 = law.newsvendor_moments(float(x[k]), self.h[k], self.b[k], self.c[k])
            mean += m1
            var += m2 - m1 * m1  # items are independent
        return TrueMoments(float(mean), float(var))

    def fractile(self) -> np.ndarray:
        q = (self.b - self.c) / (self.b + self.h)
        if np.any(q <= 0) or np.any(q >= 1):
            raise ConfigurationError(f"critical fractile {q} outside (0, 1)")
        return q

    def true_optimum(self):
        if self.truth is None:
            raise ConfigurationError("no true distribution configured")
        if getattr(self, "_optimum", None) is None:
            q = self.fractile()
            x = self.project(np.array([law.ppf(q[k]) for k, law in enumerate(self.truth)]))
            self._optimum = (x, self.true_moments(x))
        x, mom = self._optimum
        return x.copy(), mom


class Portfolio(_CostModel):
    """Long-only portfolio with cost ``-xi @ x`` on the simplex."""

    feasible_set = "simplex"

    def __init__(self, dim=5, truth=None):
        self.dim = int(dim)
        if truth is not None:
            truth = tuple(truth)
            if len(truth) != self.dim:
                raise ConfigurationError("need one return law per asset")
            if not all(isinstance(t, FiniteDistribution) for t in truth):
                raise ConfigurationError("portfolio truth must be finite per-asset distributions")
        self.truth = truth

    def __repr__(self):
        return f"Portfolio(dim={self.dim}, truth={self.truth})"

    def cost(self, x, xi):
        x, xi = self._check(x, xi)
        return -(xi @ x)

    def subgradient(self, x, xi):
        x, xi = self._check(x, xi)
        return -xi

    def project(self, x):
        return project_simplex(x)

    def vertices(self) -> np.ndarray:
        return np.eye(self.dim)

    def true_moments(self, x) -> TrueMoments:
        if self.truth is None:
            raise ConfigurationError("no true distribution configured")
        x = np.asarray(x, dtype=float)
        mu = np.array([t.mean for t in self.truth])
        var = np.array([t.variance for t in self.truth])
        return TrueMoments(float(-(mu @ x)), float((x * x) @ var))

    def true_optimum(self):
        if self.truth is None:
            raise ConfigurationError("no true distribution configured")
        mu = np.array([t.mean for t in self.truth])
        x = np.eye(self.dim)[int(np.argmax(mu))]
        return x, self.true_moments(x)


def cost(model, x, xi):
    return model.cost(x, xi)


def subgradient(model, x, xi):
    return model.subgradient(x, xi)


def true_moments(model, x) -> TrueMoments:
    return model.true_moments(x)


def true_optimum(model):
    return model.true_optimum()
