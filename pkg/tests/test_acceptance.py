"""Acceptance criteria, one test per criterion with pinned tolerances.

Each test records a ``criterion N PASS|FAIL`` line that is printed in the
terminal summary.  Published reference values are pinned below next to
their reported standard errors.

``BDRO_ACCEPTANCE_K`` lowers the replication count of the table
reproduction (the default is 200); below 200 the tolerance widens from
3 to 5 standard errors.
"""

import math
import os
import time

import cvxpy as cp
import numpy as np
import pytest

from bayesdro.calibration import InfeasibleCalibration, estimate_kl_empirical, min_kl_ball
from bayesdro.calibration import AmbiguitySpec
from bayesdro.cost_models import Newsvendor, Portfolio
from bayesdro.distributions import RandomStream
from bayesdro.evaluation import expand_methods, generate_data, sweep_frontier
from bayesdro.experiments import get_experiment
from bayesdro.posterior import BayesModel, ProductModel
from bayesdro.robust_inner import kl_inner, kl_inner_cgf, kl_inner_rows
from bayesdro.solvers import (
    NestedObjective,
    SolverConfig,
    bayesian_average_solve,
    bayesian_dro_solve,
    empirical_kl_dro_solve,
    empirical_saa_solve,
    posterior_scenarios,
    relaxed_bdro_solve,
    wasserstein_dro_solve,
    wasserstein_objective,
)

from conftest import ACCEPTANCE_LINES

EXP = BayesModel.gamma_exponential()
TABLE_K = int(os.environ.get("BDRO_ACCEPTANCE_K", "200"))
TABLE_SEED = 7
TABLE_SE_MULT = 3.0 if TABLE_K >= 200 else 5.0

# published N=20 exponential-truth table: value, reported standard error
PUBLISHED = {
    "bayes-avg solution": (24.71, 0.39),
    "eps3 solution": (28.32, 0.46),
    "eps1 value": (0.18, 0.01),
    # reported as 0.03(0.00); the s.e. is below the last printed digit
    "eps3 value": (0.03, 0.00),
}
ROUNDING = 0.005  # half a unit in the last printed digit


def report(criterion, ok, detail):
    line = f"criterion {criterion:<3s} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# -- 1 ---------------------------------------------------------------------


def test_criterion_1_gaussian_exactness():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        mu, sigma, eps = rng.uniform(-100, 100), rng.uniform(0.01, 50), rng.uniform(1e-4, 5)
        r = kl_inner_cgf(lambda t: mu * t + 0.5 * sigma**2 * t * t,
                         lambda t: mu + sigma**2 * t, lambda t: sigma**2, eps, scale=sigma)
        exact = mu + sigma * math.sqrt(2 * eps)
        worst = max(worst, abs(r.value - exact) / max(abs(exact), 1e-300))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 1.0
    assert report("1", ok, f"max rel err {worst:.2e} (tol 1e-8), {elapsed:.2f}s (< 1s)")


# -- 2 ---------------------------------------------------------------------


def test_criterion_2_reductions():
    start = time.perf_counter()
    data = generate_data((get_experiment("newsvendor-1d-exact").cost_model.truth[0],), 20, False,
                         RandomStream(2, 0))
    nv = Newsvendor(h=3.0, b=8.0, upper=50.0)
    cfg = SolverConfig(seed=2)
    a = bayesian_dro_solve(EXP, data, nv, AmbiguitySpec.fixed(0.0), cfg)
    b = bayesian_average_solve(EXP, data, nv, cfg)
    ok_a = a.x_star.tobytes() == b.x_star.tobytes() and a.objective == b.objective
    k = empirical_kl_dro_solve(data, nv, 0.0)
    s = empirical_saa_solve(data, nv)
    ok_b = np.array_equal(k.x_star, s.x_star) and abs(k.objective - s.objective) <= 1e-12 * abs(
        s.objective)
    gaps = []
    scen = posterior_scenarios(EXP, data, cfg)
    for eps in (0.05, 0.2, 1.0):
        nested = bayesian_dro_solve(EXP, data, nv, AmbiguitySpec.fixed(eps), cfg)
        relaxed = relaxed_bdro_solve(EXP, data, nv, eps, cfg)
        # also compare at a common decision, where the ordering is pointwise
        x = nested.x_star
        pointwise = (NestedObjective(scen, nv, eps, pooled=True)(x)
                     - NestedObjective(scen, nv, eps)(x))
        gaps.append(min(relaxed.objective - nested.objective, pointwise))
    ok_c = min(gaps) >= -1e-12
    elapsed = time.perf_counter() - start
    ok = ok_a and ok_b and ok_c and elapsed < 30
    assert report("2", ok, f"(a) bit-identical={ok_a} (b) kl0==saa={ok_b} "
                           f"(c) min relaxed-nested gap {min(gaps):.3g} >= 0, {elapsed:.1f}s (< 30s)")


# -- 3 ---------------------------------------------------------------------


def test_criterion_3_true_benchmarks():
    start = time.perf_counter()
    x_e, m_e = get_experiment("newsvendor-1d-exact").cost_model.true_optimum()
    x_t, m_t = get_experiment("newsvendor-1d-misspec").cost_model.true_optimum()
    checks = [
        abs(x_e[0] - 25.99) <= 0.01,
        abs(m_e.mean / 77.66 - 1) <= 0.01,
        abs(x_t[0] - 17.41) <= 0.05,
        abs(m_t.mean / 30.96 - 1) <= 0.01,
    ]
    elapsed = time.perf_counter() - start
    ok = all(checks) and elapsed < 5
    assert report("3", ok, f"exp x*={x_e[0]:.4f} (25.99+-0.01) mean={m_e.mean:.3f} (77.66+-1%); "
                           f"tn x*={x_t[0]:.4f} (17.41+-0.05) mean={m_t.mean:.3f} (30.96+-1%); "
                           f"{elapsed:.2f}s")


# -- 4 and 5 share one sweep -------------------------------------------------


@pytest.fixture(scope="module")
def exponential_sweep():
    exp = get_experiment("newsvendor-1d-exact")
    methods = expand_methods(["bdro", "bayes-avg", "saa"], grid=exp.epsilon_grid,
                             modes=["eps1", "eps2", "eps3"])
    start = time.perf_counter()
    records, _ = sweep_frontier(exp, methods, k=TABLE_K, master_seed=TABLE_SEED)
    elapsed = time.perf_counter() - start
    by = {(r.method, r.epsilon_label): r for r in records}
    return exp, by, elapsed


def _within(name, value, se_ours):
    target, se_pub = PUBLISHED[name]
    se = max(se_pub, ROUNDING if se_pub == 0 else 0.0)
    z = abs(value - target) / se
    return z <= TABLE_SE_MULT, f"{name} {value:.4f} vs {target} ({z:.1f} s.e.; ours +-{se_ours:.4f})"


@pytest.mark.parametrize("item", list(PUBLISHED))
def test_criterion_4_table_reproduction(exponential_sweep, item):
    _, by, elapsed = exponential_sweep
    if item == "bayes-avg solution":
        r = by[("bayes-avg", "-")]
        value, se = r.mean_solution[0], r.se_solution[0]
    elif item == "eps3 solution":
        r = by[("bdro", "eps3")]
        value, se = r.mean_solution[0], r.se_solution[0]
    else:
        r = by[("bdro", item.split()[0])]
        value, se = r.mean_epsilon, r.se_eps
    ok, detail = _within(item, value, se)
    ok = ok and elapsed < 15 * 60
    assert report("4", ok, f"{detail}; K={TABLE_K}, tol {TABLE_SE_MULT:g} s.e., "
                           f"sweep {elapsed:.0f}s")


def test_criterion_5_frontier_shape(exponential_sweep):
    exp, by, _ = exponential_sweep
    grid = [by[("bdro", f"{e:g}")] for e in exp.epsilon_grid]
    ok_a = grid[-1].v_hat < grid[0].v_hat
    slack = [b.mu_hat - a.mu_hat + 2 * math.hypot(a.se_mu, b.se_mu) for a, b in zip(grid, grid[1:])]
    ok_b = min(slack) >= 0
    eps3, avg = by[("bdro", "eps3")], by[("bayes-avg", "-")]
    ok_c = eps3.v_hat < avg.v_hat
    ok = ok_a and ok_b and ok_c
    assert report("5", ok, f"(a) v(eps=1)={grid[-1].v_hat:.0f} < v(0)={grid[0].v_hat:.0f} "
                           f"(b) min slack {min(slack):.3f} >= 0 "
                           f"(c) v(eps3)={eps3.v_hat:.0f} < v(avg)={avg.v_hat:.0f}, "
                           f"means {eps3.mu_hat:.2f} vs {avg.mu_hat:.2f}")


# -- 6 ---------------------------------------------------------------------


def _primal_from_kkt(g, cost_model, x_hat):
    """min mean(r ln r) over reweightings that make x_hat a KKT point."""
    n = g.shape[0]
    r = cp.Variable(n, nonneg=True)
    m = g.T @ r / n
    cons = [cp.sum(r) == n]
    if cost_model.feasible_set == "box":
        for j, x in enumerate(np.atleast_1d(x_hat)):
            if x <= 0:
                cons.append(m[j] >= 0)
            elif x >= cost_model.upper[j]:
                cons.append(m[j] <= 0)
            else:
                cons.append(m[j] == 0)
    else:
        active = np.nonzero(x_hat > 1e-9)[0]
        for j in range(len(x_hat)):
            if j in active:
                cons.append(m[j] == m[active[0]])
            else:
                cons.append(m[j] >= m[active[0]])
    prob = cp.Problem(cp.Minimize(-cp.sum(cp.entr(r)) / n), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.status, prob.value


def _kl_ball_instance(rng, i):
    L = int(rng.integers(3, 9))
    stream = RandomStream(60, i)
    if i % 2 == 0:
        nv = Newsvendor(h=3.0, b=8.0, upper=50.0)
        theta = rng.uniform(0.02, 0.2)
        x_hat = np.array([rng.uniform(0.5, 49.5)])
        xi = EXP.sample_xi(np.array([theta]), L, stream)[0].reshape(L, 1)
        return theta, x_hat, EXP, nv, L, stream, nv.subgradient(x_hat, xi)
    model = ProductModel(tuple(BayesModel.dirichlet_categorical([-1, 0, 1]) for _ in range(3)))
    pf = Portfolio(dim=3)
    theta = tuple(rng.dirichlet(np.ones(3)) for _ in range(3))
    x_hat = np.zeros(3)
    support = rng.choice(3, size=int(rng.integers(1, 3)), replace=False)
    x_hat[support] = rng.dirichlet(np.ones(len(support)))
    batch = tuple(np.asarray(t)[None, :] for t in theta)
    xi = model.sample_xi(batch, L, stream).reshape(L, 3)
    return theta, x_hat, model, pf, L, stream, pf.subgradient(x_hat, xi)


def test_criterion_6a_min_kl_ball_vs_primal():
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    compared, agree_infeasible, worst, i = 0, 0, 0.0, 0
    while compared < 50:
        theta, x_hat, model, cm, L, stream, g = _kl_ball_instance(rng, i)
        i += 1
        status, primal = _primal_from_kkt(g, cm, x_hat)
        try:
            dual = min_kl_ball(theta, x_hat, model, cm, L, stream)
        except InfeasibleCalibration:
            dual = None
        if status not in ("optimal", "optimal_inaccurate"):
            agree_infeasible += dual is None
            if dual is not None:
                worst = math.inf
            continue
        if dual is None:
            # feasible only with some zero weights: the limit value is ln L
            worst = max(worst, 0.0 if primal >= math.log(L) - 1e-5 else math.inf)
        else:
            worst = max(worst, abs(dual - primal))
        compared += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5
    assert report("6a", ok, f"max |dual-primal| {worst:.2e} (tol 1e-5) over {compared} feasible "
                            f"instances, {agree_infeasible} infeasible agreed, {elapsed:.1f}s")


def _simplex_grid_max(z, eps):
    """Zooming grid search for max q.z over the simplex with KL(q||uniform) <= eps."""
    n = len(z)
    lo, hi = np.zeros(n - 1), np.ones(n - 1)
    best, best_q = -math.inf, None
    for _ in range(30):
        axes = [np.linspace(a, b, 401 if n == 2 else 161) for a, b in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n - 1)
        q = np.hstack([pts, 1 - pts.sum(1, keepdims=True)])
        q = q[(q >= 0).all(1)]
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.where(q > 0, q * np.log(q * n), 0.0).sum(1)
        feas = kl <= eps
        if feas.any():
            vals = np.where(feas, q @ z, -math.inf)
            k = int(np.argmax(vals))
            if vals[k] > best:
                best, best_q = vals[k], q[k]
        width = (hi - lo) / 4
        lo = np.clip(best_q[:-1] - width, 0, 1)
        hi = np.clip(best_q[:-1] + width, 0, 1)
    return best


def test_criterion_6b_empirical_kl_inner_vs_grid():
    rng = np.random.default_rng(66)
    worst = 0.0
    for i in range(20):
        z = rng.normal(0, 5, 2 + i % 2)
        eps = rng.uniform(0.01, 0.5)
        worst = max(worst, abs(kl_inner(z, eps).value - _simplex_grid_max(z, eps)))
    ok = worst <= 1e-5
    assert report("6b", ok, f"max |dual-grid| {worst:.2e} (tol 1e-5) on 20 two/three-atom instances")


def _w2_grid(nv, x, datum, eps_tilde):
    lams = np.geomspace(1e-2, 1e3, 4000)
    xi = np.linspace(0.0, max(4 * datum, 100.0), 80001)
    g = nv.cost(np.array([x]), xi[:, None])
    sup = np.array([np.max(g - lam * (xi - datum) ** 2) for lam in lams])
    return float(np.min(lams * eps_tilde**2 + sup))


def test_criterion_6c_w2_vs_grid():
    start = time.perf_counter()
    nv = Newsvendor(h=3.0, b=8.0, upper=50.0)
    worst = 0.0
    for datum, eps_tilde in ((10.0, 0.5), (3.0, 1.0), (25.0, 0.2)):
        vg = wasserstein_objective(nv, [datum], eps_tilde, 2)
        for x in np.linspace(max(datum - 3, 0), datum + 3, 5):
            worst = max(worst, abs(vg(np.array([x]))[0] - _w2_grid(nv, x, datum, eps_tilde)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 120
    assert report("6c", ok, f"max |dual-grid| {worst:.2e} (tol 1e-4), {elapsed:.1f}s")


# -- 7 ---------------------------------------------------------------------


def test_criterion_7_w1_equals_saa():
    rng = np.random.default_rng(7)
    nv = Newsvendor(h=3.0, b=8.0, upper=50.0)
    tol = SolverConfig().outer_tol
    worst = 0.0
    for _ in range(20):
        data = rng.exponential(20, int(rng.integers(1, 40)))
        x_saa = empirical_saa_solve(data, nv).x_star[0]
        for eps_tilde in (0.1, 1.0, 10.0):
            worst = max(worst, abs(wasserstein_dro_solve(data, nv, eps_tilde, 1).x_star[0] - x_saa))
    ok = worst <= tol
    assert report("7", ok, f"max |x_w1 - x_saa| {worst:.2e} (outer tol {tol:g}) on 60 cases")


# -- 8 ---------------------------------------------------------------------


def test_criterion_8_kl_estimator():
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    # rate-2 data against the rate-1 model, then rate 1 against itself
    est_21 = estimate_kl_empirical(rng.exponential(0.5, 10_000), EXP, 1.0)
    est_11 = estimate_kl_empirical(rng.exponential(1.0, 10_000), EXP, 1.0)
    target = math.log(2) - 0.5
    elapsed = time.perf_counter() - start
    ok = abs(est_21 - target) <= 0.1 and abs(est_11) <= 0.1 and elapsed < 10
    assert report("8", ok, f"KL(Exp2||Exp1) est {est_21:.4f} vs {target:.4f}; "
                           f"KL(Exp1||Exp1) est {est_11:.4f} vs 0 (tol 0.1), {elapsed:.2f}s")


# -- 9 ---------------------------------------------------------------------


def test_criterion_9_invariants():
    rng = np.random.default_rng(9)
    n_cases = 100
    fails = {}

    def check(name, cond):
        fails.setdefault(name, 0)
        fails[name] += not cond

    nv = Newsvendor(h=3.0, b=8.0, upper=50.0)
    truth = get_experiment("newsvendor-1d-exact").cost_model.truth
    for i in range(n_cases):
        z = rng.normal(rng.uniform(-10, 10), rng.uniform(0.1, 10), (3, int(rng.integers(2, 50))))
        e1, e2 = np.sort(rng.uniform(0, 2, 2))
        a, c = rng.uniform(0.1, 10), rng.normal(0, 10)
        v1, v2 = kl_inner_rows(z, e1).values, kl_inner_rows(z, e2).values
        check("monotone in eps", np.all(v1 <= v2 + 1e-9 * (1 + np.abs(v2))))
        shifted = kl_inner_rows(z + c, e1).values
        check("translation", np.allclose(shifted, v1 + c, rtol=1e-8, atol=1e-8))
        check("homogeneity", np.allclose(kl_inner_rows(a * z, e1).values, a * v1, rtol=1e-8,
                                         atol=1e-8))
        check("mean<=value<=max", np.all(z.mean(1) - 1e-9 <= v1)
              and np.all(v1 <= z.max(1) + 1e-9 * (1 + np.abs(z.max(1)))))

        data = rng.exponential(20, int(rng.integers(1, 15)))
        cfg = SolverConfig(n_theta=8, n_xi=8, seed=i)
        obj = NestedObjective(posterior_scenarios(EXP, data, cfg), nv, float(e1))
        x, y = rng.uniform(0, 50, 2)
        fx, g = obj.value_and_grad(np.array([x]))
        check("subgradient", obj(np.array([y])) >= fx + g[0] * (y - x) - 1e-7 * (1 + abs(fx)))

        pdata = rng.choice([-1.0, 0.0, 1.0], size=(int(rng.integers(1, 8)), 3))
        pf = Portfolio(dim=3)
        for res in (empirical_kl_dro_solve(pdata, pf, float(e1), SolverConfig(max_outer_iters=60)),
                    empirical_saa_solve(pdata, pf)):
            check("simplex feasibility", pf.is_feasible(res.x_star))

        s = RandomStream(int(rng.integers(2**31)), i)
        d1, d2 = (generate_data(truth, 10, True, s) for _ in range(2))
        r1, r2 = (bayesian_dro_solve(EXP, d1, nv, AmbiguitySpec("eps3", mc_samples=20), cfg)
                  for _ in range(2))
        check("byte-identical rerun", d1.tobytes() == d2.tobytes()
              and r1.x_star.tobytes() == r2.x_star.tobytes())
    ok = not any(fails.values())
    detail = ", ".join(f"{k} {n_cases - v}/{n_cases}" for k, v in fails.items())
    assert report("9", ok, detail)
