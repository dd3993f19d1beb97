"""Registry of the benchmark experiments.

Each entry bundles a cost model carrying its true distribution, the prior
used by the Bayesian methods, optional finite support for the Wasserstein
adversary, and default run sizes.

The finite-support truths are fixtures: the true mass vectors behind the
published finite-support tables are not available, so the vectors below
were chosen (maximum entropy subject to matching the reported true
optimum, mean and variance) and are used as-is.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .cost_models import (
    ConfigurationError,
    ExponentialDemand,
    FiniteDistribution,
    Newsvendor,
    Portfolio,
    TruncatedNormalDemand,
)
from .posterior import BayesModel, ProductModel

__all__ = ["EXPERIMENTS", "ExperimentConfig", "get_experiment"]

# true mass on demands 1..15 for the finite-support newsvendor
FINITE_NEWSVENDOR_MASS = (
    0.103233, 0.097085, 0.091231, 0.085645, 0.080337, 0.075295, 0.070508, 0.017695,
    0.023848, 0.031467, 0.040630, 0.051349, 0.063534, 0.076939, 0.091204,
)

# true mass of each asset's return on (-1, 0, 1)
PORTFOLIO_MASS = (
    (0.22445, 0.38110, 0.39445),
    (0.30, 0.40, 0.30),
    (0.25, 0.40, 0.35),
    (0.35, 0.30, 0.35),
    (0.30, 0.35, 0.35),
)


def _normalised(p):
    p = np.asarray(p, dtype=float)
    return tuple(float(v) for v in p / p.sum())


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    description: str
    cost_model: object
    prior: object
    n: int
    k: int = 200
    contamination: bool = False
    support: np.ndarray | None = field(default=None, compare=False)
    epsilon_grid: tuple = (0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0)
    wasserstein_grid: tuple = (0.1, 0.5, 1.0, 2.0, 5.0)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("data size N must be at least 1")
        if self.k < 2:
            raise ConfigurationError("K must be at least 2")

    @property
    def dim(self) -> int:
        return self.cost_model.dim

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def _newsvendor_1d(truth, n, name, description):
    return ExperimentConfig(
        name=name,
        description=description,
        cost_model=Newsvendor(h=3.0, b=8.0, c=0.0, upper=50.0, truth=truth),
        prior=BayesModel.gamma_exponential(1.0, 1.0),
        n=n,
    )


def _finite_newsvendor(name, description, contamination):
    support = tuple(float(s) for s in range(1, 16))
    truth = FiniteDistribution(support, _normalised(FINITE_NEWSVENDOR_MASS))
    return ExperimentConfig(
        name=name,
        description=description,
        cost_model=Newsvendor(h=2.0, b=10.0, c=3.0, upper=20.0, truth=truth),
        prior=BayesModel.dirichlet_categorical(support),
        n=5,
        contamination=contamination,
        support=np.array(support)[:, None],
    )


def _portfolio():
    levels = (-1.0, 0.0, 1.0)
    truth = [FiniteDistribution(levels, _normalised(p)) for p in PORTFOLIO_MASS]
    return ExperimentConfig(
        name="portfolio",
        description="5-asset long-only portfolio, returns in {-1,0,1}, Dirichlet prior",
        cost_model=Portfolio(dim=5, truth=truth),
        prior=ProductModel(tuple(BayesModel.dirichlet_categorical(levels) for _ in range(5))),
        n=10,
        support=np.array(list(itertools.product(levels, repeat=5))),
    )


EXPERIMENTS = {
    e.name: e
    for e in (
        _newsvendor_1d(TruncatedNormalDemand(10.0, 10.0, 0.0), 20, "newsvendor-1d-misspec",
                       "1-D newsvendor, truncated N(10,10^2) demand, exponential model"),
        _newsvendor_1d(ExponentialDemand(20.0), 20, "newsvendor-1d-exact",
                       "1-D newsvendor, exponential demand with mean 20, exponential model"),
        ExperimentConfig(
            name="newsvendor-multi",
            description="3-item newsvendor, truncated normal demands (10,12,15; sd 20), "
                        "exponential models",
            cost_model=Newsvendor(h=3.0, b=8.0, c=0.0, upper=50.0, dim=3,
                                  truth=[TruncatedNormalDemand(m, 20.0, 0.0) for m in (10, 12, 15)]),
            prior=ProductModel(tuple(BayesModel.gamma_exponential(1.0, 1.0) for _ in range(3))),
            n=10,
        ),
        _finite_newsvendor("newsvendor-finite",
                           "1-D newsvendor, demand on {1..15}, Dirichlet prior", False),
        _finite_newsvendor("newsvendor-finite-contaminated",
                           "as newsvendor-finite with 20% of data from a random law", True),
        _portfolio(),
    )
}


def get_experiment(name: str) -> ExperimentConfig:
    try:
        return EXPERIMENTS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}") from None
