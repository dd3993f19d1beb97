import numpy as np
import pytest
from hypothesis import given, strategies as st

from bayesdro.cost_models import ExponentialDemand, FiniteDistribution
from bayesdro.distributions import RandomStream
from bayesdro.evaluation import (
    CONTAMINATION_RATE,
    MethodSpec,
    ReplicationResult,
    aggregate,
    expand_methods,
    generate_data,
    run_replication,
    sweep_frontier,
)
from bayesdro.experiments import get_experiment

TINY = {"n_theta": 20, "n_xi": 20}


def _result(mu, v, j=0, x=1.0):
    return ReplicationResult(j, "saa", "-", np.array([x]), mu, v, 0.0, "d")


def test_aggregate_hand_example():
    rec = aggregate([_result(1.0, 0.0), _result(3.0, 0.0, 1)])
    assert rec.mu_hat == 2.0
    assert rec.v_hat == 2.0
    assert rec.se_mu == pytest.approx(1.0)


def test_aggregate_identical_replications():
    rec = aggregate([_result(5.0, 4.0, j) for j in range(6)])
    assert rec.v_hat == pytest.approx(4.0)
    assert rec.se_mu == 0.0


def test_aggregate_needs_two():
    with pytest.raises(ValueError):
        aggregate([_result(1.0, 1.0)])
    failed = ReplicationResult(1, "saa", "-", np.array([np.nan]), np.nan, np.nan, np.nan, "d",
                               status="boom")
    with pytest.raises(ValueError):
        aggregate([_result(1.0, 1.0), failed])
    rec = aggregate([_result(1.0, 1.0), _result(2.0, 1.0, 1), failed])
    assert rec.k == 2 and rec.n_failed == 1


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(0, 1e3)), min_size=2, max_size=30))
def test_total_variance_lower_bound(pairs):
    rec = aggregate([_result(m, v, j) for j, (m, v) in enumerate(pairs)])
    assert rec.v_hat >= np.mean([v for _, v in pairs]) - 1e-9 * (1 + rec.v_hat)
    assert rec.mu_hat == pytest.approx(np.mean([m for m, _ in pairs]))


def test_contamination_fraction():
    truth = (FiniteDistribution((1.0, 2.0), (1.0, 0.0)),)
    # the clean law is a point mass, so every non-masked row must equal it
    n = 100_000
    stream = RandomStream(11, 0)
    mask = stream.child(0).generator().random(n) < CONTAMINATION_RATE
    assert abs(mask.mean() - 0.2) < 0.005
    data = generate_data(truth, n, True, stream)
    clean_rows = ~mask
    assert np.all(data[clean_rows] == 1.0)
    off = generate_data(truth, n, False, stream)
    assert np.all(off == 1.0)


def test_generate_data_deterministic():
    truth = (ExponentialDemand(20.0), ExponentialDemand(5.0))
    a = generate_data(truth, 50, True, RandomStream(3, 4))
    b = generate_data(truth, 50, True, RandomStream(3, 4))
    assert a.shape == (50, 2)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, generate_data(truth, 50, True, RandomStream(3, 5)))
    with pytest.raises(ValueError):
        generate_data(truth, 0, False, RandomStream(0))


def test_method_parsing():
    assert MethodSpec.parse("saa") == MethodSpec("saa")
    assert MethodSpec.parse("kl-dro:0.5").param == 0.5
    assert MethodSpec.parse("bdro:eps3").label == "eps3"
    assert MethodSpec.parse("bdro:0.1").label == "0.1"
    for bad in ("nope", "kl-dro", "saa:1"):
        with pytest.raises(ValueError):
            MethodSpec.parse(bad)
    specs = expand_methods(["bdro", "w1-dro", "saa"], grid=[0, 0.1], modes=["eps1"], w_grid=[2.0])
    assert [s.label for s in specs] == ["0", "0.1", "eps1", "2", "-"]


def test_shared_data_and_true_pseudo_method():
    exp = get_experiment("newsvendor-1d-exact")
    methods = [MethodSpec.parse(m) for m in ("saa", "bayes-avg", "kl-dro:0.1", "true")]
    reps = [run_replication(exp, methods, j, 2, TINY) for j in range(3)]
    for rep in reps:
        assert len({r.data_digest for r in rep}) == 1
        assert all(r.ok for r in rep)
    x_true, mom = exp.cost_model.true_optimum()
    trues = [rep[3] for rep in reps]
    assert all(t.x[0] == x_true[0] and t.mu == mom.mean and t.v == mom.variance for t in trues)
    assert len({rep[0].data_digest for rep in reps}) == 3


def test_failures_are_recorded():
    exp = get_experiment("newsvendor-1d-exact")
    rep = run_replication(exp, [MethodSpec("kl-dro", -1.0), MethodSpec("saa")], 0, 0)
    assert not rep[0].ok and "ValueError" in rep[0].status
    assert rep[1].ok
    recs, _ = sweep_frontier(exp, [MethodSpec("kl-dro", -1.0), MethodSpec("saa")], k=2)
    assert recs[0].status.startswith("all failed") and recs[0].k == 0
    assert recs[1].status == "ok"


def test_saa_consistency_large_n():
    exp = get_experiment("newsvendor-1d-exact").with_overrides(n=20_000)
    r = run_replication(exp, [MethodSpec("saa")], 0, 1)[0]
    _, mom = exp.cost_model.true_optimum()
    assert r.mu == pytest.approx(mom.mean, rel=0.01)


def test_sweep_deterministic_across_workers():
    exp = get_experiment("newsvendor-finite-contaminated")
    methods = expand_methods(["bdro", "saa", "w1-dro"], grid=[0.0, 0.2], modes=["eps3"],
                             w_grid=[0.5])
    a, _ = sweep_frontier(exp, methods, k=4, master_seed=9, solver=TINY)
    b, _ = sweep_frontier(exp, methods, k=4, master_seed=9, jobs=2, solver=TINY)
    for ra, rb in zip(a, b):
        assert repr(ra) == repr(rb)


def test_bdro_zero_endpoint_matches_average():
    exp = get_experiment("newsvendor-1d-exact")
    methods = expand_methods(["bdro", "bayes-avg"], grid=[0.0])
    recs, _ = sweep_frontier(exp, methods, k=3, master_seed=1, solver=TINY)
    assert recs[0].mu_hat == recs[1].mu_hat and recs[0].v_hat == recs[1].v_hat
