"""Conjugate Bayesian models for the scenario distribution.

Two one-dimensional families are shipped:

* ``gamma-exponential``: exponential demand with unknown rate and a Gamma
  prior in the rate parameterisation.
* ``dirichlet-categorical``: finite support with unknown probability mass
  and a Dirichlet prior.

Multi-dimensional problems use :class:`ProductModel`, a product of
independent one-dimensional models.  Models are immutable; ``update``
returns a new model.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .distributions import RandomStream, sample_dirichlet, sample_exponential, sample_gamma

__all__ = [
    "BayesModel",
    "DataError",
    "GAMMA_EXPONENTIAL",
    "DIRICHLET_CATEGORICAL",
    "ProductModel",
    "ScenarioMatrix",
    "as_data_matrix",
    "build_scenarios",
    "model_from_dict",
    "pdf",
    "sample_theta",
    "update",
]

GAMMA_EXPONENTIAL = "gamma-exponential"
DIRICHLET_CATEGORICAL = "dirichlet-categorical"


class DataError(ValueError):
    """Observation outside the support of a model, or unusable data."""


def as_data_matrix(data, dim=None) -> np.ndarray:
    """Return observations as an ``(N, dim)`` float array."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim in (None, 1) else arr.reshape(1, -1)
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"expected {dim}-dimensional observations, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class BayesModel:
    """One-dimensional conjugate model.

    For ``gamma-exponential`` the hyperparameters are ``(shape, rate)``; for
    ``dirichlet-categorical`` they are the concentration vector aligned with
    ``support``.
    """

    family: str
    prior_hyper: tuple
    posterior_hyper: tuple
    n_observed: int = 0
    support: tuple | None = None

    def __post_init__(self):
        prior = np.asarray(self.prior_hyper, dtype=float)
        post = np.asarray(self.posterior_hyper, dtype=float)
        if self.family == GAMMA_EXPONENTIAL:
            if prior.shape != (2,) or post.shape != (2,):
                raise ValueError("gamma-exponential needs (shape, rate) hyperparameters")
        elif self.family == DIRICHLET_CATEGORICAL:
            if self.support is None or len(self.support) == 0:
                raise ValueError("dirichlet-categorical needs a non-empty support")
            if len(set(self.support)) != len(self.support):
                raise ValueError("support points must be distinct")
            if prior.shape != (len(self.support),) or post.shape != prior.shape:
                raise ValueError("Dirichlet hyperparameters must match the support length")
        else:
            raise ValueError(f"unknown family {self.family!r}")
        if np.any(prior <= 0) or np.any(post <= 0):
            raise ValueError("hyperparameters must be positive")
        if self.n_observed == 0 and not np.array_equal(prior, post):
            raise ValueError("posterior must equal prior when nothing is observed")

    @classmethod
    def gamma_exponential(cls, shape=1.0, rate=1.0) -> "BayesModel":
        hyper = (float(shape), float(rate))
        return cls(GAMMA_EXPONENTIAL, hyper, hyper)

    @classmethod
    def dirichlet_categorical(cls, support, alphas=None) -> "BayesModel":
        support = tuple(float(s) for s in support)
        if alphas is None:
            alphas = np.ones(len(support))
        hyper = tuple(float(a) for a in alphas)
        return cls(DIRICHLET_CATEGORICAL, hyper, hyper, support=support)

    @property
    def dim(self) -> int:
        return 1

    @property
    def continuous(self) -> bool:
        return self.family == GAMMA_EXPONENTIAL

    @property
    def support_lower(self) -> float:
        """Infimum of the support of f(.|theta)."""
        return 0.0 if self.continuous else min(self.support)

    def support_index(self, values) -> np.ndarray:
        """Index of each value in ``support``; raises DataError otherwise."""
        pts = np.asarray(self.support)
        values = np.asarray(values, dtype=float).ravel()
        diff = np.abs(values[:, None] - pts[None, :])
        idx = np.argmin(diff, axis=1)
        bad = diff[np.arange(values.size), idx] > 1e-9 * np.maximum(1.0, np.abs(values))
        if np.any(bad):
            raise DataError(f"observation {values[bad][0]!r} is not in the declared support")
        return idx

    def update(self, data) -> "BayesModel":
        x = np.asarray(data, dtype=float).ravel()
        post = np.asarray(self.posterior_hyper, dtype=float)
        if self.family == GAMMA_EXPONENTIAL:
            bad = x[~(x > 0)]
            if bad.size:
                raise DataError(f"exponential data must be positive, got {bad[0]!r}")
            post = post + np.array([x.size, x.sum()])
        else:
            counts = np.bincount(self.support_index(x), minlength=len(self.support))
            post = post + counts
        return BayesModel(
            self.family,
            self.prior_hyper,
            tuple(float(v) for v in post),
            self.n_observed + x.size,
            self.support,
        )

    def sample_theta(self, stream: RandomStream, size=None):
        """Posterior draws: rates (gamma) or probability vectors (Dirichlet)."""
        if self.family == GAMMA_EXPONENTIAL:
            a, b = self.posterior_hyper
            return sample_gamma(a, b, stream, size)
        return sample_dirichlet(self.posterior_hyper, stream, size)

    def sample_xi(self, theta, n: int, stream: RandomStream) -> np.ndarray:
        """``n`` i.i.d. draws from f(.|theta) for each theta in a batch.

        ``theta`` is a batch of parameters (rates of shape ``(k,)`` or mass
        vectors of shape ``(k, m)``); the result has shape ``(k, n)``.
        """
        if self.family == GAMMA_EXPONENTIAL:
            rates = np.atleast_1d(np.asarray(theta, dtype=float))
            return sample_exponential(1.0, stream, (rates.size, n)) / rates[:, None]
        probs = np.atleast_2d(np.asarray(theta, dtype=float))
        cdf = np.cumsum(probs, axis=1)
        cdf[:, -1] = 1.0
        u = stream.generator().random((probs.shape[0], n))
        idx = np.empty(u.shape, dtype=int)
        for i in range(probs.shape[0]):
            idx[i] = np.searchsorted(cdf[i], u[i], side="right")
        return np.asarray(self.support)[np.minimum(idx, probs.shape[1] - 1)]

    def pdf(self, theta, xi):
        """Density (exponential) or probability mass (categorical) of ``xi``."""
        xi = np.asarray(xi, dtype=float)
        if self.family == GAMMA_EXPONENTIAL:
            rate = float(theta)
            return np.where(xi >= 0, rate * np.exp(-rate * np.maximum(xi, 0.0)), 0.0)
        probs = np.asarray(theta, dtype=float)
        pts = np.asarray(self.support)
        match = np.isclose(xi[..., None], pts)
        return np.where(match.any(axis=-1), (match * probs).sum(axis=-1), 0.0)

    def to_dict(self) -> dict:
        out = {
            "family": self.family,
            "prior": list(self.prior_hyper),
            "posterior": list(self.posterior_hyper),
            "n_observed": self.n_observed,
        }
        if self.support is not None:
            out["support"] = list(self.support)
        return out


@dataclass(frozen=True)
class ProductModel:
    """Independent one-dimensional models, one per coordinate of xi."""

    components: tuple[BayesModel, ...]

    def __post_init__(self):
        if len(self.components) == 0:
            raise ValueError("a product model needs at least one component")

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def continuous(self) -> bool:
        return all(c.continuous for c in self.components)

    @property
    def n_observed(self) -> int:
        return self.components[0].n_observed

    def update(self, data) -> "ProductModel":
        x = as_data_matrix(data, self.dim)
        return ProductModel(tuple(c.update(x[:, k]) for k, c in enumerate(self.components)))

    def sample_theta(self, stream: RandomStream, size=None):
        """Tuple of per-coordinate draws (each batched when ``size`` is set)."""
        return tuple(c.sample_theta(stream.child(k), size) for k, c in enumerate(self.components))

    def sample_xi(self, theta, n: int, stream: RandomStream) -> np.ndarray:
        cols = [c.sample_xi(theta[k], n, stream.child(k)) for k, c in enumerate(self.components)]
        return np.stack(cols, axis=-1)

    def pdf(self, theta, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.ones(xi.shape[:-1])
        for k, c in enumerate(self.components):
            out = out * c.pdf(theta[k], xi[..., k])
        return out

    def to_dict(self) -> dict:
        return {"family": "product", "components": [c.to_dict() for c in self.components]}


def model_from_dict(d: dict):
    """Inverse of ``to_dict`` for both model kinds."""
    if d["family"] == "product":
        return ProductModel(tuple(model_from_dict(c) for c in d["components"]))
    support = d.get("support")
    return BayesModel(
        d["family"],
        tuple(float(v) for v in d["prior"]),
        tuple(float(v) for v in d.get("posterior", d["prior"])),
        int(d.get("n_observed", 0)),
        None if support is None else tuple(float(s) for s in support),
    )


@dataclass(frozen=True)
class ScenarioMatrix:
    """Posterior parameter draws with conditional scenarios.

    ``scenarios`` has shape ``(n_theta, n_xi, dim)``; row ``i`` holds
    i.i.d. draws from f(.|thetas[i]).
    """

    thetas: list
    scenarios: np.ndarray
    epsilons: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.scenarios.ndim != 3 or self.scenarios.shape[0] != len(self.thetas):
            raise ValueError("scenarios must have shape (n_theta, n_xi, dim)")
        if self.epsilons is not None:
            eps = np.asarray(self.epsilons, dtype=float)
            if eps.shape != (len(self.thetas),) or np.any(eps < 0):
                raise ValueError("epsilons must be one non-negative value per theta")

    @property
    def n_theta(self) -> int:
        return self.scenarios.shape[0]

    @property
    def n_xi(self) -> int:
        return self.scenarios.shape[1]

    def with_epsilons(self, epsilons) -> "ScenarioMatrix":
        return ScenarioMatrix(self.thetas, self.scenarios, np.asarray(epsilons, dtype=float))

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.scenarios).tobytes()).hexdigest()


def update(model, data):
    return model.update(data)


def sample_theta(model, stream: RandomStream):
    """A single posterior draw of the parameter."""
    if isinstance(model, ProductModel):
        return tuple(np.asarray(t)[0] if np.ndim(t) > 1 else float(np.asarray(t).ravel()[0])
                     for t in model.sample_theta(stream, 1))
    draw = model.sample_theta(stream, 1)
    return float(draw[0]) if model.continuous else draw[0]


def _split_thetas(model, batch, n):
    if isinstance(model, ProductModel):
        cols = [_split_thetas(c, batch[k], n) for k, c in enumerate(model.components)]
        return list(zip(*cols))
    if model.continuous:
        return [float(t) for t in batch]
    return [np.asarray(t) for t in batch]


def build_scenarios(model, n_theta: int, n_xi: int, stream: RandomStream) -> ScenarioMatrix:
    """Draw ``n_theta`` posterior parameters and ``n_xi`` scenarios for each."""
    if n_theta < 1 or n_xi < 1:
        raise ValueError("n_theta and n_xi must be at least 1")
    batch = model.sample_theta(stream.child(0), n_theta)
    xi = model.sample_xi(batch, n_xi, stream.child(1))
    if xi.ndim == 2:
        xi = xi[..., None]
    return ScenarioMatrix(_split_thetas(model, batch, n_theta), xi)


def pdf(model, theta, xi):
    return model.pdf(theta, xi)
