import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mulch import gp
from mulch.gp import (
    GpModel,
    KernelParams,
    SingularCovarianceError,
    count_fits,
    expected_improvement,
    expected_improvement_from,
    fit,
    log_marginal_likelihood,
    predict,
    propose,
    suggest,
)
from mulch.priors import LengthscaleBox
from mulch.space import CONTINUOUS, INTEGER, Parameter, SearchSpace, encode
from oracles import dense_oracle, random_instance


@pytest.mark.parametrize("seed", range(20))
def test_matches_dense_oracle(seed):
    X, y, kern, Xs = random_instance(np.random.default_rng(seed))
    model = GpModel.build(X, y, kern)
    mean, var = model.predict_many(Xs)
    m_ref, v_ref, lml_ref = dense_oracle(X, y, kern, Xs)
    np.testing.assert_allclose(mean, m_ref, atol=1e-8, rtol=0)
    np.testing.assert_allclose(var, v_ref, atol=1e-8, rtol=0)
    assert abs(log_marginal_likelihood(X, y, kern) - lml_ref) <= 1e-8


def test_single_point_lml_closed_form():
    kern = KernelParams((0.5,), 1.7, 0.01)
    # standardized single target is 0
    assert log_marginal_likelihood([[0.2]], [3.0], kern) == pytest.approx(-0.5 * math.log(2 * math.pi * 1.71), abs=1e-12)


def test_duplicate_rows_zero_noise_singular():
    X = np.array([[0.1, 0.2], [0.1, 0.2], [0.5, 0.5]])
    kern = KernelParams((0.3, 0.3), 1.0, 0.0)
    with pytest.raises(SingularCovarianceError):
        log_marginal_likelihood(X, [1.0, 2.0, 3.0], kern)
    with pytest.raises(SingularCovarianceError):
        GpModel.build(X, [1.0, 2.0, 3.0], kern)


@pytest.mark.parametrize("seed", range(8))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X, y, kern, _ = random_instance(rng, n_max=25, d_max=4)
    ys = (y - y.mean()) / y.std()
    log_params = kern.to_log_params()
    _, grad = gp._lml_grad(log_params, X, ys)
    h = 1e-5
    for k in range(len(log_params)):
        e = np.zeros_like(log_params)
        e[k] = h
        fd = (gp._lml_grad(log_params + e, X, ys)[0] - gp._lml_grad(log_params - e, X, ys)[0]) / (2 * h)
        assert abs(grad[k] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_single_observation_model():
    model = fit([[0.4, 0.6]], [2.5])
    box = LengthscaleBox.default(2)
    np.testing.assert_allclose(np.log(model.kernel.lengthscales), (np.array(box.lower) + box.upper) / 2)
    mean, var = predict(model, [0.4, 0.6])
    assert abs(mean - 2.5) <= math.sqrt(model.kernel.noise_variance) + 1e-9


def test_interpolates_training_points():
    rng = np.random.default_rng(0)
    X = rng.random((8, 2))
    y = X.sum(1)
    model = GpModel.build(X, y, KernelParams((0.4, 0.4), 1.0, 1e-8))
    for x, t in zip(X, y):
        assert abs(predict(model, x)[0] - t) <= 1e-4


def test_prior_reversion():
    X = np.array([[0.0], [0.1], [0.2]])
    y = np.array([1.0, 2.0, 4.0])
    model = GpModel.build(X, y, KernelParams((0.05,), 1.3, 1e-6))
    mean, var = predict(model, [50.0])
    assert mean == pytest.approx(y.mean(), rel=0.01)
    assert var == pytest.approx(1.3 * y.std() ** 2, rel=0.01)


@given(st.integers(0, 10_000))
def test_training_variance_bounded_by_noise(seed):
    rng = np.random.default_rng(seed)
    X, y, kern, _ = random_instance(rng, n_max=20, d_max=3)
    model = GpModel.build(X, y, kern)
    _, var = model.predict_many(X)
    assert np.all(var <= model.y_scale**2 * (kern.noise_variance + 1e-8))


def test_fitted_lengthscale_interior():
    interior = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.random((30, 1))
        y = np.sin(6 * X[:, 0]) + 0.05 * rng.normal(size=30)
        model = fit(X, y, seed=seed)
        log_ls = math.log(model.kernel.lengthscales[0])
        interior += math.log(1e-2) + 1e-6 < log_ls < math.log(1e2) - 1e-6
    assert interior >= 16


def test_point_box_is_exact():
    rng = np.random.default_rng(1)
    X = rng.random((12, 2))
    y = X[:, 0] - X[:, 1]
    box = LengthscaleBox((math.log(0.3), math.log(0.7)), (math.log(0.3), math.log(0.7)))
    model = fit(X, y, box)
    assert model.kernel.lengthscales == (math.exp(math.log(0.3)), math.exp(math.log(0.7)))


def test_fit_deterministic_and_counted():
    rng = np.random.default_rng(2)
    X = rng.random((15, 3))
    y = np.cos(4 * X).sum(1)
    with count_fits() as n:
        a = fit(X, y, seed=5)
        b = fit(X, y, seed=5)
    assert n[0] == 2
    assert a.kernel == b.kernel


def test_fit_beats_every_start():
    rng = np.random.default_rng(3)
    X = rng.random((20, 2))
    y = np.sin(5 * X[:, 0]) + X[:, 1]
    model = fit(X, y, seed=0)
    best = log_marginal_likelihood(X, y, model.kernel)
    box = LengthscaleBox.default(2)
    lo = np.r_[box.lower, gp.SIGNAL_BOX[0], gp.NOISE_BOX[0]]
    hi = np.r_[box.upper, gp.SIGNAL_BOX[1], gp.NOISE_BOX[1]]
    for log_params in [(lo + hi) / 2] + list(lo + gp.unit_points(len(lo), 7, "quasi", 0) * (hi - lo)):
        assert best >= log_marginal_likelihood(X, y, KernelParams.from_log_params(log_params)) - 1e-9


# -- expected improvement -----------------------------------------------------

def test_ei_at_zero_z():
    assert expected_improvement_from(0.7, 1.0, 0.7)[0] == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)


def test_ei_zero_sigma():
    assert expected_improvement_from(0.2, 0.0, 0.5)[0] == 0.0
    assert expected_improvement_from(0.9, 0.0, 0.5)[0] == pytest.approx(0.4)
    assert expected_improvement_from(0.9, 0.0, 0.5, "min")[0] == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_ei_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    mu, sigma, best = rng.normal(), rng.uniform(0.05, 2), rng.normal()
    draws = np.maximum(rng.normal(mu, sigma, 10**6) - best, 0)
    se = draws.std() / math.sqrt(draws.size)
    assert abs(expected_improvement_from(mu, sigma, best)[0] - draws.mean()) <= 3 * se + 1e-12


@given(st.floats(-5, 5), st.floats(0, 5), st.floats(0, 5), st.floats(-5, 5), st.sampled_from(["max", "min"]))
def test_ei_nonnegative_and_monotone_in_sigma(mu, s1, s2, best, direction):
    lo, hi = sorted((s1, s2))
    e_lo = expected_improvement_from(mu, lo, best, direction)[0]
    e_hi = expected_improvement_from(mu, hi, best, direction)[0]
    assert e_lo >= 0 and e_hi >= 0
    assert e_hi >= e_lo - 1e-12


def test_ei_min_direction_mirrors_max():
    assert expected_improvement_from(-0.3, 0.8, -0.1, "min")[0] == pytest.approx(
        expected_improvement_from(0.3, 0.8, 0.1, "max")[0], abs=1e-15)


def test_expected_improvement_uses_predictive():
    model = GpModel.build([[0.0], [1.0]], [0.0, 1.0], KernelParams((0.5,), 1.0, 1e-6))
    mean, var = predict(model, [0.5])
    assert expected_improvement(model, [0.5], 1.0) == pytest.approx(
        expected_improvement_from(mean, math.sqrt(var), 1.0)[0], abs=1e-15)


# -- suggestion ---------------------------------------------------------------

UNIT = SearchSpace((Parameter("x", CONTINUOUS, 0.0, 1.0),))


def test_suggest_finds_known_optimum():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        xs = rng.random(10)
        y = -(xs - 0.3) ** 2
        model = fit(xs[:, None], y, seed=seed)
        c = suggest(model, UNIT, float(y.max()), n_candidates=256, seed=seed)
        hits += abs(c["x"] - 0.3) <= 0.1
    assert hits >= 18


def test_single_candidate():
    model = GpModel.build([[0.2], [0.8]], [0.0, 1.0], KernelParams((0.3,), 1.0, 1e-6))
    out = propose(model, UNIT, 1.0, n_candidates=1, seed=3, k=3)
    assert len(out) == 1
    UNIT.validate(out[0][0])


def test_identical_candidates():
    space = SearchSpace((Parameter("k", INTEGER, 3, 3), Parameter("j", INTEGER, 5, 5)))
    model = GpModel.build([[0.0, 0.0]], [1.0], KernelParams((1.0, 1.0), 1.0, 1e-4))
    assert dict(suggest(model, space, 1.0, n_candidates=16)) == {"k": 3, "j": 5}


def test_propose_top_k_distinct_and_valid():
    space = SearchSpace((Parameter("x", CONTINUOUS, 0.0, 1.0), Parameter("n", INTEGER, 1, 10)))
    rng = np.random.default_rng(0)
    configs = [{"x": float(a), "n": int(b)} for a, b in zip(rng.random(12), rng.integers(1, 11, 12))]
    X = np.array([encode(space, c) for c in configs])
    model = fit(X, X[:, 0] - (X[:, 1] - 0.5) ** 2)
    out = propose(model, space, 0.0, k=4, seed=1)
    assert len(out) == 4 and len({c for c, _ in out}) == 4
    for c, score in out:
        space.validate(c)
        assert score >= 0
    assert out[0][1] >= max(s for _, s in out[1:])
