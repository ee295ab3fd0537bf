import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mosumseg import (
    TOL_FIT,
    DomainError,
    InarchModel,
    LinearRegression,
    MeanModel,
    MedianLikeModel,
    Samples,
    SignMedianModel,
    SingularFit,
    make_model,
)
from oracles import central_jacobian, inarch_grid_fit, normal_equations


def test_score_values():
    assert MeanModel().score(Samples.from_series([5.0]), [2.0])[0, 0] == 3.0
    assert MedianLikeModel().score(Samples.from_series([0.0]), [1.0])[0, 0] == pytest.approx(0.5, abs=1e-15)
    inarch = Samples(np.array([[2.0]]), np.array([[1.0, 1.0]]))
    np.testing.assert_array_equal(InarchModel().score(inarch, [1.0, 1.0])[0], [0.0, 0.0])
    lr = Samples(np.array([[3.0]]), np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(LinearRegression(2).score(lr, [1.0, 1.0])[0], [0.0, 0.0])


def test_score_errors():
    with pytest.raises(DomainError):
        InarchModel().score(Samples(np.array([[1.0]]), np.array([[1.0, 2.0]])), [-5.0, 0.5])
    with pytest.raises(ValueError):
        MeanModel().score(Samples.from_series([1.0, 2.0]), [1.0, 2.0])


def test_simple_fits():
    assert MeanModel().fit(Samples.from_series([1.0, 2.0, 3.0]))[0] == 2.0
    for a in (0.1, 1.0, 37.5):
        assert MedianLikeModel().fit(Samples.from_series([-a, 0.0, a]))[0] == pytest.approx(0.0, abs=1e-10)


def test_linreg_matches_normal_equations():
    rng = np.random.default_rng(3)
    model = LinearRegression(3)
    for size in (5, 17, 60, 200):
        Z = np.column_stack([np.ones(size), rng.normal(1, 1, size), rng.normal(2, 1, size)])
        y = Z @ [1.0, 2.0, -1.0] + rng.standard_normal(size)
        fit = model.fit(Samples.regression(y, Z, intercept=False))
        np.testing.assert_allclose(fit, normal_equations(y, Z), rtol=0, atol=1e-10)


def test_linreg_singular_design():
    Z = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(SingularFit):
        LinearRegression(2).fit(Samples.regression(np.arange(10.0), Z, intercept=False))


def _inarch_series(n, theta, seed):
    rng = np.random.default_rng(seed)
    x = np.empty(n + 1, dtype=int)
    x[0] = 2
    for i in range(1, n + 1):
        x[i] = rng.poisson(theta[0] + theta[1] * x[i - 1])
    return x


def test_inarch_matches_grid_oracle():
    x = _inarch_series(500, (1.0, 0.5), seed=11)
    samples = Samples.counts(x)
    fit = InarchModel().fit(samples)
    y, lag = samples.response[:, 0], samples.covariates[:, 1]
    grid = inarch_grid_fit(y, lag, (0.5, 1.6), (0.2, 0.8))
    np.testing.assert_allclose(fit, grid, atol=2e-3)


def test_fit_residuals_within_tolerance():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(300)
    for model in (MeanModel(), MedianLikeModel()):
        s = Samples.from_series(x)
        assert np.linalg.norm(model.score(s, model.fit(s)).sum(axis=0)) <= TOL_FIT * len(s)
    Z = np.column_stack([np.ones(300), rng.standard_normal(300)])
    s = Samples.regression(Z @ [1.0, 2.0] + x, Z, intercept=False)
    lr = LinearRegression(2)
    assert np.linalg.norm(lr.score(s, lr.fit(s)).sum(axis=0)) <= TOL_FIT * len(s)
    s = Samples.counts(_inarch_series(300, (2.0, 0.3), seed=1))
    model = InarchModel()
    theta = model.fit(s)
    assert np.all(theta > model.lower) and np.all(theta < model.upper)
    assert np.linalg.norm(model.score(s, theta).sum(axis=0)) <= TOL_FIT * len(s)


def test_inarch_boundary_fit_satisfies_kkt():
    # i.i.d. Poisson counts usually push the slope onto its lower bound
    model = InarchModel()
    hits = 0
    for seed in range(20):
        s = Samples.counts(np.random.default_rng(seed).poisson(3.0, 200))
        theta = model.fit(s)
        assert model.projected_residual(s, theta) <= TOL_FIT * len(s)
        hits += theta[1] <= model.lower[1] * (1 + 1e-12)
    assert hits > 0


def test_inarch_degenerate_window():
    with pytest.raises(SingularFit):
        InarchModel().fit(Samples.counts(np.zeros(20, dtype=int)))


def test_eval_v():
    s = Samples.from_series(np.random.default_rng(0).standard_normal(50))
    assert MeanModel().eval_v(s, [0.3])[0, 0] == -1.0
    assert MedianLikeModel().eval_v(Samples.from_series([1.5] * 4), [1.5])[0, 0] == pytest.approx(2 / math.pi)
    Z = np.column_stack([np.ones(40), np.random.default_rng(1).standard_normal(40)])
    s = Samples.regression(np.zeros(40), Z, intercept=False)
    np.testing.assert_allclose(LinearRegression(2).eval_v(s, [0.0, 0.0]), 2 * Z.T @ Z / 40)


@pytest.mark.parametrize("name", ["mean", "median-like", "linreg", "inarch"])
def test_gradients_match_finite_differences(name):
    rng = np.random.default_rng(7)
    for _ in range(100):
        if name == "linreg":
            Z = np.column_stack([np.ones(5), rng.standard_normal((5, 2))])
            s = Samples.regression(rng.standard_normal(5), Z, intercept=False)
            theta = rng.standard_normal(3)
        elif name == "inarch":
            s = Samples.counts(rng.poisson(3.0, 6))
            theta = np.array([rng.uniform(0.5, 3), rng.uniform(0.05, 0.9)])
        else:
            s = Samples.from_series(rng.normal(0, 2, 5))
            theta = rng.normal(0, 2, 1)
        model = make_model(name, s)
        analytic = model.score_gradient(s, theta)
        numeric = central_jacobian(lambda th: model.score(s, th), theta)
        scale = max(np.abs(analytic).max(), 1e-12)
        assert np.abs(analytic - numeric).max() <= 1e-5 * scale


def test_sign_median_has_no_gradient():
    model = SignMedianModel()
    s = Samples.from_series([3.0, 1.0, 2.0])
    assert model.fit(s)[0] == 2.0
    with pytest.raises(DomainError):
        model.score_gradient(s, [2.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=40), st.floats(-50, 50))
def test_translation_equivariance(values, c):
    x = np.array(values)
    mean, med = MeanModel(), MedianLikeModel()
    shifted = Samples.from_series(x + c)
    base = Samples.from_series(x)
    assert mean.fit(shifted)[0] == pytest.approx(mean.fit(base)[0] + c, abs=1e-9)
    assert med.fit(shifted)[0] == pytest.approx(med.fit(base)[0] + c, abs=1e-8)


@pytest.mark.parametrize("name", ["mean", "median-like", "linreg", "inarch"])
def test_fit_windows_agree_with_single_fits(name):
    rng = np.random.default_rng(2)
    if name == "linreg":
        Z = np.column_stack([np.ones(120), rng.standard_normal(120)])
        s = Samples.regression(Z @ [1.0, -1.0] + rng.standard_normal(120), Z, intercept=False)
    elif name == "inarch":
        s = Samples.counts(_inarch_series(120, (1.5, 0.4), seed=4))
    else:
        s = Samples.from_series(rng.standard_normal(120))
    model = make_model(name, s)
    G = 30
    thetas, failed = model.fit_windows(s, G)
    assert not failed.any()
    for start in (0, 17, 90):
        np.testing.assert_allclose(thetas[start], model.fit(s[start:start + G]), atol=1e-7)


def test_counts_layout():
    s = Samples.counts([1, 2, 3])
    np.testing.assert_array_equal(s.response[:, 0], [2, 3])
    np.testing.assert_array_equal(s.covariates, [[1, 1], [1, 2]])
    s = Samples.counts([1, 2, 3], initial=4)
    np.testing.assert_array_equal(s.covariates[:, 1], [4, 1, 2])
    with pytest.raises(ValueError):
        Samples.counts([1.5, 2.0])
