import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_psd
from dgpkern import BaseKernel, Wrap, eval_effective, from_label
from dgpkern.moments import (MvnSpec, ancestral_sample, coincident_fourth_moments,
                             fourth_moment_sc_pairing, fourth_moment_se_pairing,
                             gauss_linear_expectation, gauss_quadratic_expectation,
                             heavy_tail_report, isserlis_fourth, mc_estimate, p_pairing,
                             pair_moments_mc, q_pairing, sc_pair_expectation,
                             sign_flip_symmetry_check)

D = np.array([[1.0, -1.0], [-1.0, 1.0]])


def mc(values):
    """Plain mean and standard error from i.i.d. draws (independent oracle)."""
    v = np.asarray(values)
    return v.mean(), v.std(ddof=1) / math.sqrt(v.size)


def assert_mc(values, target, n_se=4.0):
    m, se = mc(values)
    assert abs(m - target) <= n_se * se + 1e-12, (m, se, target)


# -- Gaussian expectations ---------------------------------------------------

def test_mvn_validation():
    with pytest.raises(ValueError):
        MvnSpec(None, [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        MvnSpec(None, [[1.0, 0.5], [0.4, 1.0]])
    assert np.all(MvnSpec(None, np.eye(2)).mean == 0)


def test_quadratic_examples():
    mvn = MvnSpec(None, np.eye(2))
    assert gauss_quadratic_expectation(mvn, np.zeros((2, 2))) == 1.0
    assert gauss_quadratic_expectation(mvn, D) == pytest.approx(1 / math.sqrt(3), rel=1e-14)


@given(st.floats(-0.99, 0.99), st.floats(0.2, 3.0))
def test_quadratic_reduces_to_se_wrap(rho, ell):
    mvn = MvnSpec(None, [[1.0, rho], [rho, 1.0]])
    assert gauss_quadratic_expectation(mvn, D / ell ** 2) == pytest.approx(
        (1 + 2 * (1 - rho) / ell ** 2) ** -0.5, rel=1e-12)


def test_quadratic_with_mean_against_sampling(rng):
    K = random_psd(rng, 3, 0.5)
    v = np.array([0.3, -0.2, 0.5])
    J = random_psd(rng, 3, 0.4)
    x = rng.multivariate_normal(v, K, size=400_000)
    vals = np.exp(-0.5 * np.einsum('ni,ij,nj->n', x, J, x))
    assert_mc(vals, gauss_quadratic_expectation(MvnSpec(v, K), J))


def test_quadratic_divergent():
    with pytest.raises(ArithmeticError):
        gauss_quadratic_expectation(MvnSpec(None, np.eye(2)), np.diag([-2.0, 0.0]))


def test_linear_examples(rng):
    mvn = MvnSpec(None, np.eye(2))
    assert gauss_linear_expectation(mvn, [0.0, 0.0]) == 1.0
    assert gauss_linear_expectation(mvn, [1.0, 0.0]) == pytest.approx(math.exp(0.5), rel=1e-15)
    same = MvnSpec(None, np.ones((2, 2)))
    assert sc_pair_expectation(same, 0.37) == pytest.approx(1.0, rel=1e-14)
    K = np.array([[1.0, 0.3], [0.3, 0.8]])
    x = rng.multivariate_normal([0, 0], K, size=400_000)
    assert_mc(np.cos((x[:, 0] - x[:, 1]) / 0.7), sc_pair_expectation(MvnSpec(None, K), 0.7))


# -- fourth-moment pairings ------------------------------------------------------

def test_se_pairing_block_diagonal_factorizes():
    K = np.zeros((4, 4))
    K[:2, :2] = [[1.0, 0.4], [0.4, 1.2]]
    K[2:, 2:] = [[0.7, 0.1], [0.1, 0.5]]
    se_pair = lambda a, b, c: (1 + (a + b - 2 * c)) ** -0.5
    got = fourth_moment_se_pairing(K, 1.0, (0, 1, 2, 3))
    assert got == pytest.approx(se_pair(1.0, 1.2, 0.4) * se_pair(0.7, 0.5, 0.1), rel=1e-14)


@given(st.floats(-0.99, 1.0), st.floats(0.3, 3))
def test_se_pairing_repeated_pair(rho, ell):
    K = np.array([[1.0, rho], [rho, 1.0]])
    # E[exp(-d^2 / ell^2)] with d of variance s is (1 + 2 s / ell^2)^(-1/2)
    s = 2 * (1 - rho)
    assert fourth_moment_se_pairing(K, ell, (0, 1, 0, 1)) == pytest.approx(
        (1 + 2 * s / ell ** 2) ** -0.5, rel=1e-12)


def test_sc_pairing_examples():
    assert fourth_moment_sc_pairing(np.zeros((4, 4)), 1.0, (0, 1, 2, 3)) == 1.0
    K = np.zeros((4, 4))
    K[:2, :2] = [[1.0, 0.4], [0.4, 1.2]]
    K[2:, 2:] = [[0.7, 0.1], [0.1, 0.5]]
    pair = lambda a, b, c: math.exp(-(a + b - 2 * c) / 2)
    assert fourth_moment_sc_pairing(K, 1.0, (0, 1, 2, 3)) == pytest.approx(
        pair(1.0, 1.2, 0.4) * pair(0.7, 0.5, 0.1), rel=1e-14)


@pytest.mark.parametrize('seed', range(3))
def test_pairings_against_sampling(seed):
    rng = np.random.default_rng(seed)
    K = random_psd(rng, 4, 0.8)
    ell = rng.uniform(0.5, 1.5)
    h = rng.multivariate_normal(np.zeros(4), K, size=1_000_000)
    d1, d2 = h[:, 0] - h[:, 1], h[:, 2] - h[:, 3]
    assert_mc(np.exp(-(d1 ** 2 + d2 ** 2) / (2 * ell ** 2)),
              fourth_moment_se_pairing(K, ell, (0, 1, 2, 3)))
    assert_mc(np.cos(d1 / ell) * np.cos(d2 / ell), fourth_moment_sc_pairing(K, ell, (0, 1, 2, 3)))


def test_isserlis_q_examples():
    K = np.array([[2.0]])
    assert isserlis_fourth(q_pairing(K), (0, 0, 0, 0)) == pytest.approx(3 * 4.0)
    K = np.diag([2.0, 3.0])
    total, parts = isserlis_fourth(q_pairing(K), (0, 0, 1, 1), terms=True)
    assert total == 6.0 and sorted(parts) == [0.0, 0.0, 6.0]


# -- ancestral sampler ------------------------------------------------------------

def test_ancestral_se_se_unit_distance():
    spec = from_label('SE[SE]')
    f = ancestral_sample(spec, [0.0, 1.0], 1_000_000, seed=11)
    est = mc_estimate(f[:, 0] * f[:, 1], 11)
    assert est.within(eval_effective(spec, 0.0, 1.0), 3.0)
    assert eval_effective(spec, 0.0, 1.0) == pytest.approx(0.748075, abs=5e-7)
    for col in range(2):
        assert mc_estimate(f[:, col], 11).within(0.0, 4.0)


def test_ancestral_degenerate_inner_layer():
    # a vanishing first layer leaves every output correlated at sigma2^2
    spec = Wrap('SE', {'sigma': 1.5, 'ell': 1.0}, BaseKernel('SE', {'sigma': 1e-6, 'ell': 1.0}))
    f = ancestral_sample(spec, [0.0, 2.0, 5.0], 200_000, seed=2)
    for est in pair_moments_mc(spec, None, [(0, 1), (0, 2), (1, 2)], 0, 2, samples=f):
        assert est.within(2.25, 4.0)


def test_ancestral_lane_prefix_and_determinism():
    spec = from_label('SC[SE]')
    X = [0.0, 0.7, 1.9]
    a = ancestral_sample(spec, X, 25_000, seed=5)
    b = ancestral_sample(spec, X, 10_000, seed=5)
    np.testing.assert_array_equal(a[:10_000], b)
    e1 = mc_estimate(a[:, 0] * a[:, 2], 5)
    e2 = mc_estimate(ancestral_sample(spec, X, 25_000, seed=5)[:, 0] * a[:, 2], 5)
    assert e1 == e2


def test_depth_three_recursion_is_a_gaussian_middle_approximation():
    # the recursion treats the (non-Gaussian) middle layer as a GP with its
    # effective kernel; the true three-layer process departs from it and the
    # gap closes as the first layer shrinks and the middle layer turns Gaussian
    gaps = []
    for s1 in (1.0, 0.3, 0.1):
        leaf = BaseKernel('SE', {'sigma': s1, 'ell': 1.0})
        spec = Wrap('SE', {'sigma': 1.0, 'ell': 0.3}, Wrap('SE', {'sigma': 1.0, 'ell': 1.0}, leaf))
        f = ancestral_sample(spec, [0.0, 1.5], 200_000, seed=1)
        gaps.append(mc_estimate(f[:, 0] * f[:, 1], 1).value - eval_effective(spec, 0.0, 1.5))
    assert gaps[0] > gaps[1] > gaps[2] > 0
    assert gaps[2] < 0.1 * gaps[0]


# -- heavy tails --------------------------------------------------------------------

def test_heavy_tail_report_against_oracle():
    spec = Wrap('SE', {'sigma': 1.0, 'ell': 1.0}, BaseKernel('SE', {'sigma': 1.0, 'ell': 0.8}))
    rep = heavy_tail_report(spec, [0.0, 0.5, 1.3], n=400_000, seed=4)
    assert rep.ok, [(r.quartet, r.analytic_p, r.mc) for r in rep.rows if not r.mc.within(r.analytic_p)]
    # a single point is Gaussian under both; coincident pairs are heavier under p
    single = [r for r in rep.rows if len(set(r.quartet)) == 1]
    assert all(abs(r.margin) < 1e-12 for r in single)
    paired = [r for r in rep.rows if r.quartet[0] == r.quartet[1] != r.quartet[2] == r.quartet[3]]
    assert paired and all(r.margin > 1e-3 for r in paired)


def test_heavy_tail_block_independent_pairing():
    # points far apart: the (ab)(cd) pairing factorizes exactly
    spec = from_label('SE[SE]')
    X = np.array([0.0, 0.3, 40.0, 40.4])
    K_inner = np.array([[BaseKernel('SE', {'sigma': 1, 'ell': 1})(a, b) for b in X] for a in X])
    K_eff = np.array([[eval_effective(spec, a, b) for b in X] for a in X])
    p, q = p_pairing(spec, K_inner), q_pairing(K_eff)
    assert p(0, 1, 2, 3) == pytest.approx(q(0, 1, 2, 3), rel=1e-12)


def test_coincident_fourth_moment_conventions():
    spec = from_label('SE[SE]')
    vals = coincident_fourth_moments(spec, 0.0, 0.0)
    # at one point f is Gaussian with variance 1: E f^4 = 3 under both
    assert vals['p_isserlis'] == pytest.approx(3.0) and vals['q_isserlis'] == pytest.approx(3.0)
    assert vals['q_single_cross'] == pytest.approx(2.0)
    f = ancestral_sample(spec, [0.0, 0.9], 1_000_000, seed=8)
    est = mc_estimate(f[:, 0] ** 2 * f[:, 1] ** 2, 8)
    vals = coincident_fourth_moments(spec, 0.0, 0.9)
    assert est.within(vals['p_isserlis'], 4.0)
    assert not est.within(vals['p_single_cross'], 10.0)


# -- sign flips ----------------------------------------------------------------------

@pytest.mark.parametrize('lbl', ['SE[SE]', 'SC[SE]', 'SE[SE[SE]]'])
def test_sign_flip_symmetry(lbl):
    assert sign_flip_symmetry_check(from_label(lbl), [0.0, 0.4, 1.1, 2.0], 20, seed=1)


def test_sign_flip_broken_by_inner_mean():
    assert not sign_flip_symmetry_check(from_label('NuN[SE]'), [0.0, 0.4, 1.1], 10, seed=1,
                                        inner_mean=0.8)
