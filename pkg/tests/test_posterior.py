import numpy as np
import pytest

from bayesdro.distributions import RandomStream
from bayesdro.posterior import (
    BayesModel,
    DataError,
    ProductModel,
    build_scenarios,
    model_from_dict,
    pdf,
    sample_theta,
    update,
)


def test_gamma_update():
    post = update(BayesModel.gamma_exponential(1, 1), [2.0, 3.0])
    assert post.posterior_hyper == (3.0, 6.0)
    assert post.prior_hyper == (1.0, 1.0)
    assert post.n_observed == 2


def test_gamma_update_rejects_non_positive():
    with pytest.raises(DataError):
        BayesModel.gamma_exponential().update([1.0, -0.5])


def test_dirichlet_update():
    m = BayesModel.dirichlet_categorical([-1, 0, 1])
    post = m.update([1, 1, 0])
    assert post.posterior_hyper == (1.0, 2.0, 3.0)
    assert sum(post.posterior_hyper) == sum(m.prior_hyper) + 3
    with pytest.raises(DataError):
        m.update([0.5])


def test_prior_equals_posterior_without_data():
    m = BayesModel.gamma_exponential(2, 3)
    assert m.posterior_hyper == m.prior_hyper
    assert m.update([]).posterior_hyper == m.prior_hyper
    with pytest.raises(ValueError):
        BayesModel("gamma-exponential", (1.0, 1.0), (2.0, 1.0), 0)


def test_bad_hyperparameters():
    with pytest.raises(ValueError):
        BayesModel.gamma_exponential(0, 1)
    with pytest.raises(ValueError):
        BayesModel.dirichlet_categorical([1, 1])
    with pytest.raises(ValueError):
        BayesModel("weibull", (1.0,), (1.0,))


def test_posterior_mean_of_rate():
    post = BayesModel.gamma_exponential().update(np.full(50, 2.0))
    draws = post.sample_theta(RandomStream(0), 100_000)
    assert draws.mean() == pytest.approx(51 / 101, rel=0.01)


def test_pdf_values():
    m = BayesModel.gamma_exponential()
    assert pdf(m, 2.0, 1.0) == pytest.approx(2 * np.exp(-2))
    assert pdf(m, 2.0, -1.0) == 0.0
    d = BayesModel.dirichlet_categorical([1, 2, 3])
    assert pdf(d, [0.2, 0.3, 0.5], 2.0) == pytest.approx(0.3)
    assert pdf(d, [0.2, 0.3, 0.5], 2.5) == 0.0


def test_single_draw_shapes():
    assert isinstance(sample_theta(BayesModel.gamma_exponential(), RandomStream(1)), float)
    p = sample_theta(BayesModel.dirichlet_categorical([0, 1, 2]), RandomStream(1))
    assert p.shape == (3,) and p.sum() == pytest.approx(1.0)


def test_build_scenarios_shapes_and_determinism():
    m = BayesModel.gamma_exponential().update([1.0, 2.0, 4.0])
    a = build_scenarios(m, 7, 5, RandomStream(3))
    b = build_scenarios(m, 7, 5, RandomStream(3))
    assert a.scenarios.shape == (7, 5, 1)
    assert a.digest() == b.digest()
    assert len(a.thetas) == 7
    with pytest.raises(ValueError):
        build_scenarios(m, 0, 5, RandomStream(3))


def test_scenarios_follow_theta():
    # rows drawn with a large rate are small
    m = BayesModel.gamma_exponential(1000.0, 1.0)
    s = build_scenarios(m, 3, 20_000, RandomStream(4))
    for theta, row in zip(s.thetas, s.scenarios[:, :, 0]):
        assert row.mean() == pytest.approx(1 / theta, rel=0.03)


def test_product_model():
    pm = ProductModel(tuple(BayesModel.dirichlet_categorical([-1, 0, 1]) for _ in range(3)))
    post = pm.update([[1, 0, -1], [1, 1, 1]])
    assert post.components[0].posterior_hyper == (1.0, 1.0, 3.0)
    s = build_scenarios(post, 4, 6, RandomStream(2))
    assert s.scenarios.shape == (4, 6, 3)
    assert len(s.thetas[0]) == 3
    assert set(np.unique(s.scenarios)) <= {-1.0, 0.0, 1.0}
    assert pm.pdf(s.thetas[0], np.array([1.0, 0.0, -1.0])) > 0


def test_dict_round_trip():
    for m in (BayesModel.gamma_exponential(2, 3).update([1.0]),
              BayesModel.dirichlet_categorical([1, 2]).update([2]),
              ProductModel((BayesModel.gamma_exponential(), BayesModel.gamma_exponential()))):
        assert model_from_dict(m.to_dict()) == m
