import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bssp.datagen import BETA_S, ClassificationGenConfig, gen_classification, regression_signal
from bssp.design import template_design
from bssp.errors import ValidationError
from bssp.models import (
    ModelFit,
    fit_cv,
    fit_linear,
    fit_logistic,
    fit_model,
    lambda_max,
    linear_gradient,
    logistic_gradient,
    logistic_loss,
    predict,
)


def random_problem(rng, n=40, d=6):
    x = rng.integers(0, 2, size=(n, d)).astype(float)
    beta = rng.normal(size=d) * (rng.random(d) < 0.6)
    y = 0.5 + x @ beta + rng.normal(scale=0.5, size=n)
    w = rng.uniform(0.2, 2.0, n)
    return x, y, w


def test_exact_interpolation():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 2, size=(30, 3)).astype(float)
    y = 2 * x[:, 0] + 1
    fit = fit_linear(x, y, lambda_l1=0.0)
    assert fit.coefficients[0] == pytest.approx(2, abs=1e-8)
    assert fit.coefficients[1:] == pytest.approx([0, 0], abs=1e-8)
    assert fit.intercept == pytest.approx(1, abs=1e-8)
    np.testing.assert_allclose(predict(fit, x), y, atol=1e-8)
    assert fit.converged


def test_full_shrinkage():
    rng = np.random.default_rng(1)
    x, y, w = random_problem(rng)
    fit = fit_linear(x, y, w, lambda_l1=1e6)
    assert np.all(fit.coefficients == 0)
    assert fit.intercept == pytest.approx(np.average(y, weights=w))
    assert np.all(fit_linear(x, y, w, lambda_l1=lambda_max(x, y, w) * 1.0001).coefficients == 0)


@pytest.mark.parametrize("seed", range(50))
def test_lasso_kkt(seed):
    rng = np.random.default_rng(seed)
    x, y, w = random_problem(rng)
    lam = lambda_max(x, y, w) * rng.uniform(0.01, 0.8)
    fit = fit_linear(x, y, w, lam)
    grad, grad0 = linear_gradient(x, y, w, fit.coefficients, fit.intercept)
    assert abs(grad0) <= 1e-6
    active = fit.coefficients != 0
    assert np.all(np.abs(grad[active] + lam * np.sign(fit.coefficients[active])) <= 1e-6)
    assert np.all(np.abs(grad[~active]) <= lam + 1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1000))
def test_weight_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    x, y, w = random_problem(rng)
    a = fit_linear(x, y, w, 0.05)
    b = fit_linear(x, y, c * w, 0.05)
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-7)


def test_unit_weights_equal_no_weights():
    rng = np.random.default_rng(3)
    x, y, _ = random_problem(rng)
    a = fit_linear(x, y, None, 0.1)
    b = fit_linear(x, y, np.ones(len(y)), 0.1)
    np.testing.assert_array_equal(a.coefficients, b.coefficients)
    yb = (y > np.median(y)).astype(float)
    la = fit_logistic(x, yb, None, 0.01)
    lb = fit_logistic(x, yb, np.ones(len(y)), 0.01)
    np.testing.assert_array_equal(la.coefficients, lb.coefficients)


def test_linear_validation():
    with pytest.raises(ValidationError):
        fit_linear(np.ones((3, 2)), np.ones(3), np.zeros(3))
    with pytest.raises(ValidationError):
        fit_linear(np.ones((3, 2)), np.ones(2))
    with pytest.raises(ValidationError):
        fit_linear(np.zeros((0, 2)), np.zeros(0))


def test_balanced_subsample_recovers_projection():
    """On the resolution-5 template the omitted S1*S2 term projects onto
    S1/2 + S2/2 - 1/4 and is orthogonal to everything else."""
    X = template_design().zero_one().astype(float)
    y = regression_signal(X)
    fit = fit_linear(X, y)
    target = np.array(BETA_S) + np.array([0.5, 0.5, 0, 0, 0])
    np.testing.assert_allclose(fit.coefficients[:5], target, atol=1e-8)
    np.testing.assert_allclose(fit.coefficients[5:], 0, atol=1e-8)
    assert fit.intercept == pytest.approx(-0.25, abs=1e-8)
    rng = np.random.default_rng(0)
    coefs = np.array([fit_linear(X, y + rng.normal(scale=0.3, size=128)).coefficients for _ in range(50)])
    se = 0.3 * 2 / np.sqrt(128) / np.sqrt(50)
    assert np.all(np.abs(coefs.mean(0)[:5] - target) < 4 * se)
    assert np.all(np.abs(coefs.mean(0)[5:]) < 4 * se)


@pytest.mark.parametrize("seed", range(20))
def test_logistic_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, d = 25, 4
    x = rng.integers(0, 2, size=(n, d)).astype(float)
    y = rng.integers(0, 2, size=n).astype(float)
    w = rng.uniform(0.2, 2, n)
    beta = rng.normal(size=d)
    b0 = rng.normal()
    g, g0 = logistic_gradient(x, y, w, beta, b0)
    h = 1e-6
    fd = np.array([(logistic_loss(x, y, w, beta + h * e, b0) - logistic_loss(x, y, w, beta - h * e, b0)) / (2 * h)
                   for e in np.eye(d)])
    fd0 = (logistic_loss(x, y, w, beta, b0 + h) - logistic_loss(x, y, w, beta, b0 - h)) / (2 * h)
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)) <= 1e-4
    assert abs(g0 - fd0) / max(abs(fd0), 1e-3) <= 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_logistic_stationarity(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, size=(200, 5)).astype(float)
    p = 1 / (1 + np.exp(-(x @ rng.normal(size=5) - 0.5)))
    y = (rng.random(200) < p).astype(float)
    w = rng.uniform(0.5, 1.5, 200)
    fit = fit_logistic(x, y, w, 0.0)
    g, g0 = logistic_gradient(x, y, w, fit.coefficients, fit.intercept)
    assert fit.converged
    assert max(np.max(np.abs(g)), abs(g0)) <= 1e-6
    lam = 0.02
    fit = fit_logistic(x, y, w, lam)
    g, g0 = logistic_gradient(x, y, w, fit.coefficients, fit.intercept)
    active = fit.coefficients != 0
    assert abs(g0) <= 1e-6
    assert np.all(np.abs(g[active] + lam * np.sign(fit.coefficients[active])) <= 1e-6)
    assert np.all(np.abs(g[~active]) <= lam + 1e-6)


def test_logistic_null_model():
    rng = np.random.default_rng(5)
    x = rng.integers(0, 2, size=(4000, 3)).astype(float)
    y = (rng.random(4000) < 0.3).astype(float)
    fit = fit_logistic(x, y)
    assert np.all(np.abs(fit.coefficients) < 0.15)
    assert fit.intercept == pytest.approx(np.log(0.3 / 0.7), abs=0.15)


def test_logistic_separable_with_penalty():
    x = np.array([[0.0], [0.0], [1.0], [1.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    fit = fit_logistic(x, y, lambda_l1=0.01)
    assert fit.converged
    assert np.all(np.isfinite(fit.coefficients)) and fit.coefficients[0] > 0
    capped = fit_logistic(x, y, lambda_l1=0.0, max_iter=30)
    assert np.all(np.isfinite(capped.coefficients))


def test_logistic_validation():
    with pytest.raises(ValidationError):
        fit_logistic(np.ones((3, 1)), np.ones(3))
    with pytest.raises(ValidationError):
        fit_logistic(np.ones((3, 1)), np.array([0, 1, 2]))


@pytest.mark.parametrize("seed", range(10))
def test_plain_lr_picks_up_spurious_v5(seed):
    ds = gen_classification(ClassificationGenConfig(bias_rate=0.85, seed=seed))
    fit = fit_logistic(ds.X, ds.y)
    assert fit.coefficients[9] > 0


def test_predict_constant_and_dimension():
    zero = ModelFit(np.zeros(3), 0.7, "linear", 0.0, True, 1)
    np.testing.assert_array_equal(predict(zero, np.ones((4, 3))), np.full(4, 0.7))
    logit = ModelFit(np.zeros(3), 0.7, "logistic", 0.0, True, 1)
    np.testing.assert_allclose(predict(logit, np.ones((4, 3))), 1 / (1 + np.exp(-0.7)))
    with pytest.raises(ValidationError):
        predict(zero, np.ones((4, 2)))


def test_model_fit_json_roundtrip():
    fit = ModelFit(np.array([0.5, -1.0]), 0.25, "logistic", 0.1, True, 7)
    data = json.loads(fit.to_json())
    assert data["family"] == "logistic" and data["lambda"] == 0.1
    back = ModelFit.from_dict(data)
    np.testing.assert_array_equal(back.coefficients, fit.coefficients)
    assert back.to_dict() == fit.to_dict()
    with pytest.raises(ValidationError):
        ModelFit(np.array([np.nan]), 0.0, "linear", 0.0, True, 1)


def test_cv_selects_from_grid_and_is_deterministic():
    rng = np.random.default_rng(9)
    x, y, w = random_problem(rng, n=120)
    a = fit_cv(x, y, w, seed=4)
    b = fit_cv(x, y, w, seed=4)
    assert a.lambda_l1 in a.cv["grid"]
    assert len(a.cv["grid"]) == 20
    np.testing.assert_array_equal(a.coefficients, b.coefficients)
    fixed = fit_model(x, y, w, lambda_l1=0.0)
    assert fixed.cv is None
    yb = (y > np.median(y)).astype(float)
    lr = fit_cv(x, yb, family="logistic", seed=1)
    assert lr.family == "logistic" and lr.lambda_l1 in lr.cv["grid"]
