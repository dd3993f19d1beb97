"""Decision rules: Bayesian-DRO and the benchmarks it is compared with.

All methods minimise a scenario-based objective over the cost model's
feasible set with the same outer optimisers:

* one-dimensional box: bounded Brent search on ``[0, M]`` (objectives that
  are piecewise linear in ``x`` are minimised exactly over their
  breakpoints instead);
* multi-dimensional box or simplex: projected subgradient with steps
  ``a / (k + b)``, keeping the best of the iterates, their running average
  and (for the simplex) the vertices.

Scenario sets are drawn once per solve and frozen for the whole outer
optimisation (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .calibration import AmbiguitySpec, calibrate
from .distributions import RandomStream
from .posterior import ScenarioMatrix, as_data_matrix, build_scenarios
from .robust_inner import kl_inner_pooled, kl_inner_rows

__all__ = [
    "METHODS",
    "NestedObjective",
    "SolveResult",
    "SolverConfig",
    "bayesian_average_solve",
    "bayesian_dro_solve",
    "empirical_kl_dro_solve",
    "empirical_saa_solve",
    "minimize_outer",
    "posterior_scenarios",
    "relaxed_bdro_solve",
    "wasserstein_dro_solve",
    "wasserstein_objective",
]

METHODS = ("bdro", "bdro-relaxed", "bayes-avg", "saa", "kl-dro", "w1-dro", "w2-dro")

# child-stream keys inside a solver stream
SCENARIO_KEY = 1
CALIBRATION_KEY = 2


@dataclass(frozen=True)
class SolverConfig:
    n_theta: int = 100
    n_xi: int = 100
    outer_tol: float = 1e-4
    max_outer_iters: int = 500
    seed: int = 0
    stream_id: int = 0
    step_a: float | None = None
    step_b: float = 10.0

    def __post_init__(self):
        if self.n_theta < 1 or self.n_xi < 1 or self.max_outer_iters < 1:
            raise ValueError("sample counts and iteration limit must be positive")
        if not self.outer_tol > 0:
            raise ValueError("outer_tol must be positive")

    @property
    def stream(self) -> RandomStream:
        return RandomStream(self.seed, self.stream_id)


@dataclass
class SolveResult:
    x_star: np.ndarray
    objective: float
    method: str
    epsilon_used: float | np.ndarray = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def epsilon_mean(self) -> float:
        return float(np.mean(self.epsilon_used))


# -- outer optimisers --------------------------------------------------------


def _minimize_breakpoints(fun, breakpoints, lower, upper):
    """Exact minimiser of a convex piecewise-linear function on ``[lower, upper]``.

    A flat bottom makes the argmin an interval; its smallest point (up to
    rounding in the values) is returned so that objectives differing by a
    constant select the same decision.
    """
    cand = np.unique(np.clip(np.concatenate([np.ravel(breakpoints), [lower, upper]]), lower, upper))
    values = np.array([fun(np.array([c])) for c in cand])
    best = values.min()
    k = int(np.argmax(values <= best + 1e-12 * max(1.0, abs(best))))
    return np.array([cand[k]]), float(values[k]), {"evaluations": cand.size, "converged": True}


def _step_scale(cost_model, config):
    if config.step_a is not None:
        return config.step_a
    if cost_model.feasible_set == "box":
        return float(np.mean(cost_model.upper - cost_model.lower)) / 10.0
    return 0.5


def minimize_outer(value_and_grad, cost_model, config: SolverConfig, x0=None, breakpoints=None):
    """Minimise a convex objective over the cost model's feasible set.

    ``value_and_grad(x)`` returns the objective and a subgradient.  When
    ``breakpoints`` is given for a one-dimensional box the objective is
    taken to be piecewise linear with those kinks and minimised exactly.
    Returns ``(x, value, diagnostics)``.
    """
    fun = lambda x: value_and_grad(x)[0]  # noqa: E731
    if cost_model.feasible_set == "box" and cost_model.dim == 1:
        lo, hi = float(cost_model.lower[0]), float(cost_model.upper[0])
        if breakpoints is not None:
            return _minimize_breakpoints(fun, breakpoints, lo, hi)
        res = optimize.minimize_scalar(lambda t: fun(np.array([t])), bounds=(lo, hi),
                                       method="bounded",
                                       options={"xatol": config.outer_tol,
                                                "maxiter": config.max_outer_iters})
        best_x, best_f = np.array([res.x]), float(res.fun)
        for end in (lo, hi):
            f_end = fun(np.array([end]))
            if f_end < best_f:
                best_x, best_f = np.array([end]), f_end
        return best_x, best_f, {"evaluations": int(res.nfev) + 2, "converged": bool(res.success)}

    a, b = _step_scale(cost_model, config), config.step_b
    x = cost_model.project(np.full(cost_model.dim, 1.0 / cost_model.dim) if x0 is None else x0)
    best_x, best_f = x.copy(), math.inf
    avg, weight = np.zeros_like(x), 0.0
    history = []
    for k in range(config.max_outer_iters):
        f, g = value_and_grad(x)
        if f < best_f:
            best_x, best_f = x.copy(), f
        history.append(best_f)
        step = a / (k + b)
        avg += step * x
        weight += step
        norm = np.linalg.norm(g)
        if norm == 0:
            break
        x = cost_model.project(x - step * g / norm)
    candidates = [avg / weight] if weight > 0 else []
    if cost_model.feasible_set == "simplex":
        candidates.extend(cost_model.vertices())
    for c in candidates:
        c = cost_model.project(c)
        f = fun(c)
        if f < best_f:
            best_x, best_f = c, f
    tail = history[-max(1, len(history) // 10):]
    converged = (tail[0] - best_f) <= config.outer_tol * (1.0 + abs(best_f))
    return best_x, float(best_f), {"evaluations": len(history) + len(candidates),
                                   "converged": bool(converged)}


# -- scenario objectives -----------------------------------------------------


class NestedObjective:
    """Posterior average of per-draw worst-case costs on frozen scenarios.

    With ``pooled=True`` one multiplier is shared by all draws (the relaxed
    formulation), which needs a scalar radius.
    """

    def __init__(self, scenarios: ScenarioMatrix, cost_model, epsilons, pooled=False):
        self.scenarios = scenarios
        self.cost_model = cost_model
        self.epsilons = np.broadcast_to(np.asarray(epsilons, dtype=float), (scenarios.n_theta,))
        self.pooled = pooled
        if pooled and np.ptp(self.epsilons) > 0:
            raise ValueError("the shared-multiplier formulation needs a single radius")
        self.boundary_rows = 0

    def costs(self, x):
        return self.cost_model.cost(x, self.scenarios.scenarios)

    def __call__(self, x):
        return self.value_and_grad(x)[0]

    def value_and_grad(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = self.costs(x)
        if self.pooled:
            value, _, weights = kl_inner_pooled(z, float(self.epsilons[0]))
        else:
            sol = kl_inner_rows(z, self.epsilons)
            value, weights = float(np.mean(sol.values)), sol.weights
            self.boundary_rows = int(sol.boundary.sum())
        g = self.cost_model.subgradient(x, self.scenarios.scenarios)
        grad = np.einsum("rj,rjd->d", weights, g) / z.shape[0]
        return value, grad


def posterior_scenarios(model, data, config: SolverConfig) -> ScenarioMatrix:
    """Scenario matrix from the posterior given ``data`` (prior ``model``)."""
    post = model.update(data)
    return build_scenarios(post, config.n_theta, config.n_xi, config.stream.child(SCENARIO_KEY))


def _initial_point(cost_model, samples):
    if cost_model.feasible_set == "box":
        q = np.clip((cost_model.b - cost_model.c) / (cost_model.b + cost_model.h), 0.0, 1.0)
        flat = samples.reshape(-1, cost_model.dim)
        return cost_model.project(np.array([np.quantile(flat[:, k], q[k])
                                             for k in range(cost_model.dim)]))
    return np.full(cost_model.dim, 1.0 / cost_model.dim)


def _solve_nested(model, data, cost_model, spec, config, method, pooled=False):
    data = as_data_matrix(data, cost_model.dim)
    if data.shape[0] == 0:
        raise ValueError("data must be non-empty")
    post = model.update(data)
    scen = build_scenarios(post, config.n_theta, config.n_xi, config.stream.child(SCENARIO_KEY))
    x_hat = None
    if spec.mode == "eps3":
        x_hat = empirical_saa_solve(data, cost_model, config).x_star
    eps, fallback = calibrate(spec, scen.thetas, data, post, cost_model, x_hat,
                              config.stream.child(CALIBRATION_KEY))
    objective = NestedObjective(scen.with_epsilons(eps), cost_model, eps, pooled=pooled)
    x0 = _initial_point(cost_model, scen.scenarios)
    x, value, diag = minimize_outer(objective.value_and_grad, cost_model, config, x0=x0)
    diag.update(scenario_digest=scen.digest(), eps3_fallbacks=fallback,
                boundary_rows=objective.boundary_rows)
    if x_hat is not None:
        diag["x_saa"] = x_hat
    return SolveResult(x, value, method, eps, diag)


def bayesian_dro_solve(model, data, cost_model, spec: AmbiguitySpec, config: SolverConfig):
    """Bayesian-DRO with per-draw KL balls sized by ``spec``.

    ``model`` is the prior; it is updated with ``data`` first.
    """
    return _solve_nested(model, data, cost_model, spec, config, "bdro")


def bayesian_average_solve(model, data, cost_model, config: SolverConfig):
    """Risk-neutral posterior average (Bayesian-DRO with radius zero)."""
    return _solve_nested(model, data, cost_model, AmbiguitySpec.fixed(0.0), config, "bayes-avg")


def relaxed_bdro_solve(model, data, cost_model, eps: float, config: SolverConfig):
    """Bayesian-DRO with a single multiplier shared across posterior draws."""
    return _solve_nested(model, data, cost_model, AmbiguitySpec.fixed(eps), config,
                         "bdro-relaxed", pooled=True)


# -- empirical methods -------------------------------------------------------


def _empirical_value_and_grad(data, cost_model, eps):
    atoms = data[None, :, :]

    def value_and_grad(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = cost_model.cost(x, atoms)
        sol = kl_inner_rows(z, eps)
        g = cost_model.subgradient(x, atoms)
        return float(sol.values[0]), sol.weights[0] @ g[0]

    return value_and_grad


def _is_piecewise_linear_1d(cost_model):
    return cost_model.feasible_set == "box" and cost_model.dim == 1


def empirical_saa_solve(data, cost_model, config: SolverConfig | None = None):
    """Sample average approximation over the observed data."""
    config = config or SolverConfig()
    data = as_data_matrix(data, cost_model.dim)
    if data.shape[0] == 0:
        raise ValueError("data must be non-empty")
    vg = _empirical_value_and_grad(data, cost_model, 0.0)
    bp = data[:, 0] if _is_piecewise_linear_1d(cost_model) else None
    x, value, diag = minimize_outer(vg, cost_model, config, x0=_initial_point(cost_model, data),
                                    breakpoints=bp)
    return SolveResult(x, value, "saa", 0.0, diag)


def empirical_kl_dro_solve(data, cost_model, eps: float, config: SolverConfig | None = None):
    """KL-DRO over reweightings of the observed atoms."""
    if eps < 0:
        raise ValueError("ambiguity radius must be non-negative")
    config = config or SolverConfig()
    data = as_data_matrix(data, cost_model.dim)
    vg = _empirical_value_and_grad(data, cost_model, float(eps))
    bp = data[:, 0] if eps == 0 and _is_piecewise_linear_1d(cost_model) else None
    x, value, diag = minimize_outer(vg, cost_model, config, x0=_initial_point(cost_model, data),
                                    breakpoints=bp)
    return SolveResult(x, value, "kl-dro", float(eps), diag)


# -- Wasserstein DRO ---------------------------------------------------------


def _newsvendor_sup(cost_model, x, data, lam, p):
    """Per-datum ``sup_{xi >= 0} G(x, xi) - lam |xi - xi_hat|^p`` and the maximiser."""
    h, b, c = cost_model.h, cost_model.b, cost_model.c
    n, d = data.shape
    if p == 2:
        # separable: one concave quadratic per piece and coordinate
        left = np.clip(data - h / (2 * lam), 0.0, x)
        right = np.maximum(data + b / (2 * lam), x)
        v_left = h * (x - left) - lam * (left - data) ** 2
        v_right = b * (right - x) - lam * (right - data) ** 2
        take_left = v_left >= v_right
        xi_star = np.where(take_left, left, right)
        values = np.where(take_left, v_left, v_right).sum(axis=1) + float(c @ x)
        return values, xi_star
    if d == 1:
        if lam < b[0]:
            return np.full(n, np.inf), data.copy()
        cand = np.stack([np.zeros(n), np.full(n, x[0]), data[:, 0]], axis=1)
        vals = cost_model.cost(x, cand[..., None]) - lam * np.abs(cand - data)
        k = np.argmax(vals, axis=1)
        return vals[np.arange(n), k], cand[np.arange(n), k][:, None]
    if np.any(h > b):
        raise NotImplementedError("order-1 Wasserstein for multi-item newsvendor needs h <= b")
    if lam < np.linalg.norm(b):
        return np.full(n, np.inf), data.copy()
    return cost_model.cost(x, data), data.copy()


def _finite_sup(cost_model, x, data, lam, p, support):
    dist = np.linalg.norm(support[None, :, :] - data[:, None, :], axis=-1) ** p
    vals = cost_model.cost(x, support)[None, :] - lam * dist
    k = np.argmax(vals, axis=1)
    return vals[np.arange(data.shape[0]), k], support[k]


def wasserstein_objective(cost_model, data, eps_tilde, p, support=None):
    """Value-and-subgradient of the Wasserstein-DRO dual in ``x``.

    The multiplier is minimised out for each ``x`` by a bounded Brent
    search.  ``support`` (shape ``(S, dim)``) restricts the adversary to a
    finite set; otherwise the newsvendor closed forms on ``[0, inf)`` are
    used.
    """
    if p not in (1, 2):
        raise ValueError("Wasserstein order must be 1 or 2")
    if eps_tilde < 0:
        raise ValueError("ambiguity radius must be non-negative")
    data = as_data_matrix(data, cost_model.dim)
    if support is not None:
        support = as_data_matrix(support, cost_model.dim)
    elif not hasattr(cost_model, "h"):
        raise ValueError("continuous Wasserstein sup is only available for the newsvendor")
    radius = eps_tilde**p

    def sup(x, lam):
        if support is not None:
            return _finite_sup(cost_model, x, data, lam, p, support)
        return _newsvendor_sup(cost_model, x, data, lam, p)

    def lam_range(x):
        if support is not None:
            gx = cost_model.cost(x, support)
            gd = cost_model.cost(x, data)
            dist = np.linalg.norm(support[None, :, :] - data[:, None, :], axis=-1) ** p
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(dist > 0, (gx[None, :] - gd[:, None]) / dist, 0.0)
            return 0.0, max(float(ratio.max()), 0.0)
        slope = np.maximum(cost_model.h, cost_model.b)
        if p == 1:
            lo = float(cost_model.b[0]) if cost_model.dim == 1 else float(np.linalg.norm(cost_model.b))
            return lo, max(lo, float(np.linalg.norm(slope)))
        return 0.0, float(np.linalg.norm(slope)) / (2.0 * max(eps_tilde, 1e-12)) * 4.0

    def value_and_grad(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if eps_tilde == 0:
            xi = data
            value = float(np.mean(cost_model.cost(x, data)))
        else:
            lo, hi = lam_range(x)
            f = lambda lam: lam * radius + float(np.mean(sup(x, lam)[0]))  # noqa: E731
            cands = [lo, hi] if lo > 0 else [hi]
            if hi > lo:
                res = optimize.minimize_scalar(f, bounds=(max(lo, 1e-12), hi), method="bounded",
                                               options={"xatol": 1e-10 * max(1.0, hi)})
                cands.append(float(res.x))
            vals = [f(lam) for lam in cands]
            lam = cands[int(np.argmin(vals))]
            value = float(min(vals))
            xi = sup(x, lam)[1]
        grad = cost_model.subgradient(x, xi).mean(axis=0)
        return value, grad

    return value_and_grad


def wasserstein_dro_solve(data, cost_model, eps_tilde: float, p: int = 1,
                          config: SolverConfig | None = None, support=None):
    """Wasserstein-DRO of order ``p`` (Euclidean ground metric) around the data."""
    config = config or SolverConfig()
    data = as_data_matrix(data, cost_model.dim)
    vg = wasserstein_objective(cost_model, data, eps_tilde, p, support)
    bp = None
    if _is_piecewise_linear_1d(cost_model) and (p == 1 or eps_tilde == 0) and support is None:
        bp = data[:, 0]
    x, value, diag = minimize_outer(vg, cost_model, config, x0=_initial_point(cost_model, data),
                                    breakpoints=bp)
    return SolveResult(x, value, f"w{p}-dro", float(eps_tilde), diag)
