"""Out-of-sample protocol: K replications, exact scoring, frontier aggregation.

Seed schedule for replication ``j`` under master seed ``s``:

* data: ``RandomStream(s, j).child(0)`` (contamination mask ``.child(0)``,
  clean draws ``.child(1)``, contaminant law ``.child(2)``, contaminant
  draws ``.child(3)``);
* solvers: ``RandomStream(s, j).child(1)`` for scenarios and ``.child(2)``
  for calibration (see :mod:`bayesdro.solvers`).

Every method in a replication sees the same data and the same posterior
scenarios, so results do not depend on the order in which methods or
replications are run.
"""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calibration import AmbiguitySpec
from .cost_models import ExponentialDemand, FiniteDistribution, TruncatedNormalDemand
from .distributions import RandomStream, sample_dirichlet
from .solvers import (
    SolverConfig,
    bayesian_average_solve,
    bayesian_dro_solve,
    empirical_kl_dro_solve,
    empirical_saa_solve,
    relaxed_bdro_solve,
    wasserstein_dro_solve,
)

__all__ = [
    "CONTAMINATION_RATE",
    "FrontierRecord",
    "MethodSpec",
    "ReplicationResult",
    "aggregate",
    "expand_methods",
    "generate_data",
    "run_replication",
    "run_replications",
    "sweep_frontier",
]

log = logging.getLogger(__name__)

CONTAMINATION_RATE = 0.2
GRID_METHODS = ("bdro", "bdro-relaxed", "kl-dro", "w1-dro", "w2-dro")


# -- data --------------------------------------------------------------------


def _contaminant(law, stream: RandomStream):
    """A fresh random law on the same space as ``law``."""
    if isinstance(law, FiniteDistribution):
        mass = sample_dirichlet(np.ones(len(law.support)), stream)
        return FiniteDistribution(law.support, tuple(float(p) for p in mass / mass.sum()))
    # continuous: exponential with a random mean between half and twice the true mean
    truth_mean = float(law._dist.mean()) if isinstance(law, TruncatedNormalDemand) else law.mean
    scale = float(np.exp(stream.generator().uniform(math.log(0.5), math.log(2.0))))
    return ExponentialDemand(truth_mean * scale)


def generate_data(truth, n: int, contamination: bool, stream: RandomStream) -> np.ndarray:
    """``(n, dim)`` observations from the per-coordinate laws in ``truth``.

    With contamination each observation independently comes from a
    contaminant law (redrawn per call) with probability 0.2.
    """
    if n < 1:
        raise ValueError("N must be at least 1")
    truth = tuple(truth)
    clean = np.stack([t.sample(n, stream.child(1, k)) for k, t in enumerate(truth)], axis=-1)
    if not contamination:
        return clean
    mask = stream.child(0).generator().random(n) < CONTAMINATION_RATE
    bad = np.stack([_contaminant(t, stream.child(2, k)).sample(n, stream.child(3, k))
                    for k, t in enumerate(truth)], axis=-1)
    return np.where(mask[:, None], bad, clean)


def data_digest(data) -> str:
    return hashlib.sha256(np.ascontiguousarray(data, dtype=float).tobytes()).hexdigest()


# -- methods -----------------------------------------------------------------


@dataclass(frozen=True)
class MethodSpec:
    """A method name plus its ambiguity parameter.

    ``param`` is an :class:`AmbiguitySpec` for ``bdro``, a radius for the
    other grid methods and ``None`` for ``bayes-avg``, ``saa`` and ``true``.
    """

    method: str
    param: object = None

    @property
    def label(self) -> str:
        if self.param is None:
            return "-"
        if isinstance(self.param, AmbiguitySpec):
            return self.param.label
        return f"{self.param:g}"

    @classmethod
    def parse(cls, text: str, mc_samples: int = 100) -> "MethodSpec":
        """``bdro:eps3``, ``bdro:0.1``, ``kl-dro:0.5``, ``saa`` ..."""
        name, _, arg = text.strip().partition(":")
        if name not in GRID_METHODS + ("bayes-avg", "saa", "true"):
            raise ValueError(f"unknown method {name!r}")
        if name in GRID_METHODS and not arg:
            raise ValueError(f"method {name!r} needs a parameter, e.g. {name}:0.1")
        if name == "bdro":
            spec = AmbiguitySpec.parse(arg if arg.startswith("eps") else f"fixed:{arg}",
                                       mc_samples)
            return cls(name, spec)
        if arg:
            if name not in GRID_METHODS:
                raise ValueError(f"method {name!r} takes no parameter")
            return cls(name, float(arg))
        return cls(name)


def expand_methods(methods, grid=(), modes=(), w_grid=None, mc_samples=100):
    """Cartesian product of method names with the radius grid.

    ``modes`` (``eps1``/``eps2``/``eps3``) add calibrated ``bdro`` points;
    Wasserstein methods use ``w_grid`` when given.
    """
    out = []
    for name in methods:
        if ":" in name:
            out.append(MethodSpec.parse(name, mc_samples))
        elif name == "bdro":
            out.extend(MethodSpec("bdro", AmbiguitySpec("fixed", float(e), mc_samples)) for e in grid)
            out.extend(MethodSpec("bdro", AmbiguitySpec(m, 0.0, mc_samples)) for m in modes)
        elif name in GRID_METHODS:
            values = w_grid if (w_grid is not None and name.startswith("w")) else grid
            out.extend(MethodSpec(name, float(e)) for e in values)
        else:
            out.append(MethodSpec.parse(name, mc_samples))
    return out


def _solve(spec: MethodSpec, exp, data, config: SolverConfig):
    cm, prior = exp.cost_model, exp.prior
    m = spec.method
    if m == "bdro":
        return bayesian_dro_solve(prior, data, cm, spec.param, config)
    if m == "bdro-relaxed":
        return relaxed_bdro_solve(prior, data, cm, spec.param, config)
    if m == "bayes-avg":
        return bayesian_average_solve(prior, data, cm, config)
    if m == "saa":
        return empirical_saa_solve(data, cm, config)
    if m == "kl-dro":
        return empirical_kl_dro_solve(data, cm, spec.param, config)
    if m in ("w1-dro", "w2-dro"):
        return wasserstein_dro_solve(data, cm, spec.param, int(m[1]), config, support=exp.support)
    raise ValueError(f"unknown method {m!r}")


# -- replications ------------------------------------------------------------


@dataclass
class ReplicationResult:
    replication_index: int
    method: str
    epsilon_label: str
    x: np.ndarray
    mu: float
    v: float
    epsilon_value: float
    data_digest: str
    status: str = "ok"
    solution_error: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def run_replication(exp, methods, j: int, master_seed: int, solver: dict | None = None):
    """Solve every method on replication ``j``'s data and score it exactly.

    A method that raises is recorded with ``status`` set to the error text.
    """
    stream = RandomStream(master_seed, j)
    data = generate_data(exp.cost_model.truth, exp.n, exp.contamination, stream.child(0))
    digest = data_digest(data)
    config = SolverConfig(seed=master_seed, stream_id=j, **(solver or {}))
    x_true, _ = exp.cost_model.true_optimum()
    out = []
    for spec in methods:
        try:
            if spec.method == "true":
                x, eps = x_true, 0.0
            else:
                res = _solve(spec, exp, data, config)
                x, eps = res.x_star, res.epsilon_mean
            mom = exp.cost_model.true_moments(x)
            out.append(ReplicationResult(j, spec.method, spec.label, np.asarray(x, dtype=float),
                                         mom.mean, mom.variance, float(eps), digest,
                                         solution_error=float(np.linalg.norm(x - x_true))))
        except Exception as err:  # recorded, the replication continues
            log.warning("replication %d, %s(%s) failed: %s", j, spec.method, spec.label, err)
            nan = np.full(exp.dim, np.nan)
            out.append(ReplicationResult(j, spec.method, spec.label, nan, math.nan, math.nan,
                                         math.nan, digest, status=f"{type(err).__name__}: {err}"))
    return out


def _replication_task(args):
    return run_replication(*args)


def run_replications(exp, methods, k: int, master_seed: int, jobs: int = 1, solver=None):
    """Replications ``0..k-1``, in order, optionally across worker processes."""
    tasks = [(exp, methods, j, master_seed, solver) for j in range(k)]
    if jobs <= 1:
        return [_replication_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_replication_task, tasks, chunksize=max(1, k // (4 * jobs))))


# -- aggregation -------------------------------------------------------------


@dataclass
class FrontierRecord:
    method: str
    epsilon_label: str
    mu_hat: float
    v_hat: float
    se_mu: float
    mean_solution: np.ndarray
    se_solution: np.ndarray
    mean_epsilon: float
    se_eps: float
    k: int
    n_failed: int = 0
    mean_solution_error: float = float("nan")
    se_solution_error: float = float("nan")
    status: str = field(default="ok")


def _se(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.std(values, axis=0, ddof=1) / math.sqrt(values.shape[0])


def aggregate(results) -> FrontierRecord:
    """Frontier point from one (method, radius) across replications.

    ``mu_hat`` is the mean of the true means; ``v_hat`` adds the mean true
    variance and the between-replication variance of the true means.
    Failed replications are dropped and counted.
    """
    results = list(results)
    if not results:
        raise ValueError("no results to aggregate")
    good = [r for r in results if r.ok]
    k = len(good)
    if k < 2:
        raise ValueError(f"need at least 2 successful replications, got {k}")
    mu = np.array([r.mu for r in good])
    v = np.array([r.v for r in good])
    x = np.array([r.x for r in good])
    eps = np.array([r.epsilon_value for r in good])
    err = np.array([r.solution_error for r in good])
    mu_hat = float(mu.mean())
    v_hat = float(v.mean() + np.sum((mu - mu_hat) ** 2) / (k - 1))
    n_failed = len(results) - k
    return FrontierRecord(
        method=good[0].method,
        epsilon_label=good[0].epsilon_label,
        mu_hat=mu_hat,
        v_hat=v_hat,
        se_mu=float(_se(mu)),
        mean_solution=x.mean(axis=0),
        se_solution=_se(x),
        mean_epsilon=float(eps.mean()),
        se_eps=float(_se(eps)),
        k=k,
        n_failed=n_failed,
        mean_solution_error=float(err.mean()),
        se_solution_error=float(_se(err)),
        status="ok" if n_failed == 0 else f"{n_failed} failed",
    )


def sweep_frontier(exp, methods, k: int | None = None, master_seed: int = 0, jobs: int = 1,
                   solver=None):
    """One :class:`FrontierRecord` per method spec, in the order given.

    Returns ``(records, replications)``.  A spec that failed in every
    replication yields a record with NaN statistics and a failure status.
    """
    k = exp.k if k is None else k
    if k < 2:
        raise ValueError("K must be at least 2")
    reps = run_replications(exp, methods, k, master_seed, jobs, solver)
    records = []
    for i, spec in enumerate(methods):
        column = [rep[i] for rep in reps]
        try:
            records.append(aggregate(column))
        except ValueError:
            nan = np.full(exp.dim, np.nan)
            first_error = next((r.status for r in column if not r.ok), "failed")
            records.append(FrontierRecord(spec.method, spec.label, math.nan, math.nan, math.nan,
                                          nan, nan, math.nan, math.nan, 0, len(column),
                                          status=f"all failed: {first_error}"))
    return records, reps
