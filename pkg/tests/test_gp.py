import math
import warnings

import numpy as np
import pytest
import scipy.stats as ss
from hypothesis import given, strategies as st

from dgpkern import (BaseKernel, Dataset, GPModel, NotPSDError, Wrap, eval_effective,
                     from_label, gram, log_marginal_likelihood, posterior_predict, sample_prior)
from dgpkern.optimize import _Objective, hyper_vector


def const(s):
    return BaseKernel('Const', {'sigma': s})


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        Dataset([0.0, np.nan], [1.0, 2.0])
    d = Dataset([0.0, 1.0], [1.0, 2.0])
    assert d.X.shape == (2, 1) and d.names == ('x1', 'y')


def test_gram_single_point_and_factor_identity():
    g = gram(from_label('SE[SE]'), np.array([[0.3]]))
    assert g.K.shape == (1, 1) and g.K[0, 0] == 1.0
    X = np.linspace(0, 5, 50)
    g = gram(from_label('SE[SE]'), X)
    assert g.jitter_added == 0.0
    resid = g.chol @ g.chol.T - (g.K + g.jitter_added * np.eye(50))
    assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(g.K)
    np.testing.assert_array_equal(g.K, g.K.T)


def test_gram_duplicate_rows_need_jitter():
    X = np.array([0.0, 0.5, 0.5, 1.0])
    g = gram(BaseKernel('SE', {'sigma': 1, 'ell': 1}), X)
    assert g.jitter_added > 0


def test_gram_indefinite_kernel_is_reported():
    # the three-layer erf plateau form is not positive definite on a fine grid
    erf = Wrap('ErfSESESE', {'sigma': 1, 'ell': 1, 'sigma_mid': 1.4, 'ell_mid': 1},
               BaseKernel('SE', {'sigma': 1.2, 'ell': 1}))
    with pytest.raises(NotPSDError, match='ErfSESESE'):
        gram(erf, np.linspace(-5, 5, 201))


def test_sample_prior_const_and_determinism():
    f = sample_prior(const(1.7), np.linspace(0, 1, 5), 4000, seed=3)
    # rank-one Gram: the jitter ladder adds ~1e-10 sigma^2, i.e. ~1e-5 sigma wiggle
    assert np.allclose(f, f[:, :1], rtol=0, atol=1e-4 * 1.7)
    assert np.var(f[:, 0]) == pytest.approx(1.7 ** 2, rel=0.1)
    g = sample_prior(const(1.7), np.linspace(0, 1, 5), 4000, seed=3)
    np.testing.assert_array_equal(f, g)


def test_sample_prior_second_moments():
    spec = from_label('SC[SE]')
    f = sample_prior(spec, np.array([0.0, 0.8]), 100_000, seed=1)
    prod = f[:, 0] * f[:, 1]
    se = prod.std(ddof=1) / math.sqrt(prod.size)
    assert abs(prod.mean() - eval_effective(spec, 0.0, 0.8)) < 4 * se
    assert abs(f[:, 0].mean()) < 4 * f[:, 0].std() / math.sqrt(f.shape[0])


def test_sample_prior_shared_noise_vector():
    X = np.linspace(0, 3, 7)
    a = sample_prior(BaseKernel('SE', {'sigma': 1, 'ell': 0.5}), X, 3, seed=9)
    b = sample_prior(BaseKernel('SE', {'sigma': 2, 'ell': 0.5}), X, 3, seed=9)
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12)


def test_lml_examples():
    m = GPModel(const(1.0), 1e-300, Dataset([0.0], [0.0]))
    assert log_marginal_likelihood(m) == pytest.approx(-0.5 * math.log(2 * math.pi), rel=1e-12)
    m = GPModel(const(math.sqrt(3)), 1.0, Dataset([0.0], [2.0]))
    hand = -0.5 * 4 / 4 - 0.5 * math.log(4) - 0.5 * math.log(2 * math.pi)
    assert log_marginal_likelihood(m) == pytest.approx(hand, rel=1e-14)
    assert hand == pytest.approx(-2.112086, abs=5e-7)


@pytest.mark.parametrize('lbl', ['SE', 'SE[SE]', 'SC[SE]', 'NuN[SE]', 'SE[SE[SE]]'])
def test_lml_against_scipy(lbl, rng):
    X = np.sort(rng.uniform(0, 5, 30))
    y = np.sin(X) + 0.1 * rng.normal(size=30)
    spec = from_label(lbl)
    K = np.array([[eval_effective(spec, a, b) for b in X] for a in X]) + 0.05 * np.eye(30)
    ref = ss.multivariate_normal(np.zeros(30), K).logpdf(y)
    assert log_marginal_likelihood(GPModel(spec, 0.05, Dataset(X, y))) == pytest.approx(ref, rel=1e-10)


def test_lml_data_fit_term_peaks_at_zero(rng):
    X = rng.uniform(0, 3, 10)
    y = rng.normal(size=10)
    spec = from_label('SE')
    vals = [log_marginal_likelihood(GPModel(spec, 0.1, Dataset(X, s * y))) for s in (1, 0.5, 0)]
    assert vals[0] < vals[1] < vals[2]


def test_lml_finite_difference_consistency(rng):
    X = np.sort(rng.uniform(0, 5, 25))
    y = np.cos(2 * X) + 0.1 * rng.normal(size=25)
    m = GPModel(from_label('SE[SE]'), 0.05, Dataset(X, y))
    obj, base = _Objective(m), hyper_vector(m).log_values
    for k in range(base.size):
        def grad(h):
            e = np.zeros(base.size)
            e[k] = h
            return (obj.lml(base + e) - obj.lml(base - e)) / (2 * h)
        g4, g5 = grad(1e-4), grad(1e-5)
        assert g4 == pytest.approx(g5, rel=1e-2, abs=1e-6)


def test_predict_interpolates_and_reverts(rng):
    X = np.sort(rng.uniform(0, 5, 15))
    y = np.sin(X)
    m = GPModel(BaseKernel('SE', {'sigma': 1.3, 'ell': 0.7}), 1e-10, Dataset(X, y))
    mean, var = posterior_predict(m, X)
    np.testing.assert_allclose(mean, y, atol=1e-5)
    mean, var = posterior_predict(m, np.array([200.0]), include_noise=True)
    assert abs(mean[0]) < 1e-12 and var[0] == pytest.approx(1.3 ** 2 + 1e-10, rel=1e-12)


def test_predict_far_from_data_se_se(rng):
    X = np.sort(rng.uniform(0, 5, 12))
    y = np.sin(X)
    spec = from_label('SE[SE]')
    noise = 0.01
    m = GPModel(spec, noise, Dataset(X, y))
    mean, var = posterior_predict(m, np.array([500.0]))
    c = 1 / math.sqrt(3)
    K = np.array([[eval_effective(spec, a, b) for b in X] for a in X]) + noise * np.eye(12)
    ones = np.ones(12)
    assert var[0] == pytest.approx(1 - c * c * ones @ np.linalg.solve(K, ones), rel=1e-9)
    assert mean[0] == pytest.approx(c * ones @ np.linalg.solve(K, y), rel=1e-9)


@given(st.integers(0, 2 ** 31), st.sampled_from(['SE', 'SE[SE]', 'SC[SE]', 'SE[SC]']))
def test_predictive_variance_bounded_and_monotone(seed, lbl):
    r = np.random.default_rng(seed)
    X = r.uniform(0, 5, 8)
    y = r.normal(size=8)
    spec = from_label(lbl)
    Xs = r.uniform(-1, 6, 5)
    _, var = posterior_predict(GPModel(spec, 0.1, Dataset(X, y)), Xs)
    assert np.all(var <= eval_effective(spec, 0.0, 0.0) + 1e-12)
    # adding an observation at x* cannot raise the variance there
    X2, y2 = np.append(X, Xs[0]), np.append(y, 0.0)
    _, var2 = posterior_predict(GPModel(spec, 0.1, Dataset(X2, y2)), Xs[:1])
    assert var2[0] <= var[0] + 1e-12


def test_predict_dimension_mismatch():
    m = GPModel(from_label('SE'), 0.1, Dataset(np.zeros((3, 2)), np.zeros(3)))
    with pytest.raises(ValueError):
        posterior_predict(m, np.zeros((2, 3)))


def test_model_needs_positive_noise():
    with pytest.raises(ValueError):
        GPModel(from_label('SE'), 0.0, Dataset([0.0], [0.0]))
