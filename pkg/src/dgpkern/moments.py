"""
Exact moments of two-layer deep GPs and Monte-Carlo oracles for them.

The analytic side covers Gaussian expectations of exponential quadratic and
exponential linear forms, the joint (fourth-moment) expectations of pairs of
SE and SC kernel values, and Isserlis assembly of fourth moments. The
oracle side simulates the un-marginalized stack layer by layer.

Conventions. Fourth-moment pairings are written for the kernels as used in
the stacks, exp(-d^2 / 2 ell^2) and cos(d / ell), where d = h_a - h_b. The
unit-exponent forms exp(-d^2) and cos(d) are the special cases
ell = 1/sqrt(2) and ell = 1 respectively.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._chain import Chain, _layer_gram_np, cross_cov, sample_latent_layer
from .compose import flatten, label
from .gp import NotPSDError, factor
from .kernels import KernelError
from .rng import lane_generator, lanes

__all__ = ['MvnSpec', 'MomentEstimate', 'gauss_quadratic_expectation',
           'gauss_linear_expectation', 'sc_pair_expectation', 'fourth_moment_se_pairing',
           'fourth_moment_sc_pairing', 'PAIRINGS', 'isserlis_fourth', 'q_pairing',
           'p_pairing', 'ancestral_sample', 'mc_estimate', 'pair_moments_mc',
           'fourth_moment_mc', 'heavy_tail_report', 'coincident_fourth_moments',
           'joint_log_density', 'sign_flip_symmetry_check', 'HeavyTailReport']

N_BATCHES = 100


@dataclass
class MvnSpec:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = cov.shape[0]
        mean = np.zeros(n) if self.mean is None else np.asarray(self.mean, dtype=float)
        if cov.shape != (n, n) or mean.shape != (n,):
            raise ValueError("mean must be (n,) and cov (n, n)")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise ValueError("covariance is not symmetric")
        jitter = 1e-10 * max(np.trace(cov) / n, 1e-300)
        try:
            np.linalg.cholesky(cov + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive semidefinite") from None
        self.mean, self.cov = mean, cov


@dataclass
class MomentEstimate:
    value: float
    std_error: float
    n_samples: int
    seed: int

    def within(self, target, n_se=4.0, atol=1e-12):
        return abs(self.value - target) <= n_se * self.std_error + atol


def gauss_quadratic_expectation(mvn, J):
    """E[exp(-x^T J x / 2)] for x ~ N(v, K).

    Uses A = J (I + K J)^{-1} = (I + J K)^{-1} J, which equals
    K^{-1}[I - (I + K J)^{-1}] but needs no inverse of K.
    """
    K, v = mvn.cov, mvn.mean
    J = np.atleast_2d(np.asarray(J, dtype=float))
    n = K.shape[0]
    if J.shape != (n, n):
        raise ValueError(f"J must be {n}x{n}")
    det = np.linalg.det(np.eye(n) + K @ J)
    if not det > 0:
        raise ArithmeticError(f"|I + K J| = {det:.3g} <= 0: the expectation diverges")
    A = np.linalg.solve(np.eye(n) + J @ K, J)
    return float(math.exp(-0.5 * v @ A @ v) / math.sqrt(det))


def gauss_linear_expectation(mvn, u):
    """E[exp(u . x)] for x ~ N(v, K); ``u`` may be complex (characteristic
    function), in which case the complex value is returned."""
    u = np.asarray(u)
    val = np.exp(u @ mvn.mean + 0.5 * u @ mvn.cov @ u)
    return complex(val) if np.iscomplexobj(val) else float(val)


def sc_pair_expectation(mvn, ell, i=0, j=1):
    """E[cos((x_i - x_j) / ell)], the real part of E[exp(i (x_i - x_j)/ell)]."""
    u = np.zeros(mvn.cov.shape[0], dtype=complex)
    u[i] += 1j / ell
    u[j] -= 1j / ell
    return float(np.real(gauss_linear_expectation(mvn, u)))


def _difference_cov(K, quartet):
    """Covariance of (h_i - h_j, h_m - h_l)."""
    i, j, m, l = quartet
    s11 = K[i, i] + K[j, j] - 2.0 * K[i, j]
    s22 = K[m, m] + K[l, l] - 2.0 * K[m, l]
    s12 = K[i, m] - K[i, l] - K[j, m] + K[j, l]
    return s11, s22, s12


def fourth_moment_se_pairing(K, ell, quartet):
    """E[exp(-(h_i-h_j)^2/2ell^2 - (h_m-h_l)^2/2ell^2)] for h ~ N(0, K).

    Equals [G_ij G_ml - V]^{-1/2} with G = 1 + s/ell^2 (s the variance of
    a difference) and V = (k_im + k_jl - k_il - k_jm)^2 / ell^4.
    """
    K = np.asarray(K, dtype=float)
    s11, s22, s12 = _difference_cov(K, quartet)
    g1 = 1.0 + s11 / ell ** 2
    g2 = 1.0 + s22 / ell ** 2
    V = (s12 / ell ** 2) ** 2
    det = g1 * g2 - V
    if not det > 0:
        raise ArithmeticError(f"G_ij G_ml - V = {det:.3g} <= 0: covariance is not PSD")
    return det ** -0.5


def fourth_moment_sc_pairing(K, ell, quartet):
    """E[cos((h_i-h_j)/ell) cos((h_m-h_l)/ell)] for h ~ N(0, K).

    Averages the four sign combinations exp(+-i d1/ell +- i d2/ell); the
    two pairs of conjugates give exp(-(s11+s22)/2ell^2) cosh(s12/ell^2).
    """
    K = np.asarray(K, dtype=float)
    s11, s22, s12 = _difference_cov(K, quartet)
    plus = math.exp(-(s11 + s22 + 2.0 * s12) / (2.0 * ell ** 2))
    minus = math.exp(-(s11 + s22 - 2.0 * s12) / (2.0 * ell ** 2))
    return 0.5 * (plus + minus)


PAIRINGS = ((0, 1, 2, 3), (0, 2, 1, 3), (0, 3, 1, 2))


def isserlis_fourth(pair_fn, quartet, terms=False):
    """Sum of ``pair_fn(a, b, c, d)`` over the three ways of splitting the
    quartet into two pairs. With ``terms=True`` the three summands are
    returned as well."""
    q = tuple(quartet)
    parts = [pair_fn(q[a], q[b], q[c], q[d]) for a, b, c, d in PAIRINGS]
    total = float(sum(parts))
    return (total, parts) if terms else total


def q_pairing(K_eff):
    """Pair function of the Gaussian approximation: k_ab k_cd."""
    K_eff = np.asarray(K_eff, dtype=float)
    return lambda a, b, c, d: float(K_eff[a, b] * K_eff[c, d])


def _two_layer(spec):
    leaf, wraps = flatten(spec)
    if len(wraps) != 1 or wraps[0].outer not in ('SE', 'SC'):
        raise KernelError(f"exact fourth moments need an SE[.] or SC[.] stack over a "
                          f"Gaussian layer, got {label(spec)}")
    return leaf, wraps[0]


def p_pairing(spec, K_inner):
    """Pair function of the exact two-layer process: E_h[k(h_a,h_b) k(h_c,h_d)]
    with h ~ N(0, K_inner)."""
    _, outer = _two_layer(spec)
    K_inner = np.asarray(K_inner, dtype=float)
    s2 = outer.params['sigma'] ** 2
    ell = outer.params['ell']
    if outer.outer == 'SE':
        return lambda a, b, c, d: s2 * s2 * fourth_moment_se_pairing(K_inner, ell, (a, b, c, d))

    def sc(a, b, c, d):
        e1 = math.exp(-_difference_cov(K_inner, (a, b, a, b))[0] / (2.0 * ell ** 2))
        e2 = math.exp(-_difference_cov(K_inner, (c, d, c, d))[0] / (2.0 * ell ** 2))
        both = fourth_moment_sc_pairing(K_inner, ell, (a, b, c, d))
        return 0.25 * s2 * s2 * (1.0 + e1 + e2 + both)
    return sc


# -- ancestral sampler ---------------------------------------------------

def _inputs(X):
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def ancestral_sample(spec, X, n, seed, inner_mean=0.0, return_latents=False):
    """Simulate the stack layer by layer at inputs X.

    Each replicate draws h1 ~ N(inner_mean, K1(X)) and then every wrap layer
    from a zero-mean GP over the previous layer's values. Returns the (n, N)
    output values, plus the list of hidden layers when ``return_latents``.
    Replicates are generated in fixed lanes of Philox streams, so any
    replicate's value depends only on (seed, its index).
    """
    X = _inputs(X)
    leaf, wraps = flatten(spec)
    for w in wraps:
        if w.outer == 'ErfSESESE':
            raise KernelError("ErfSESESE is an approximation with no ancestral process")
    N = X.shape[0]
    K1 = cross_cov(Chain.from_spec(leaf), X)
    L1, _ = factor(K1, what=f"input-layer Gram of {label(spec)}")
    chain = Chain.from_spec(spec)
    depth = 1 + len(wraps)

    out = np.empty((n, N))
    hidden = [np.empty((n, N)) for _ in wraps] if return_latents else None
    for b, start, stop in lanes(n):
        z = lane_generator(seed, b).standard_normal((stop - start, depth, N))
        h = inner_mean + z[:, 0, :] @ L1.T
        for w in range(len(wraps)):
            if hidden is not None:
                hidden[w][start:stop] = h
            h, failed = sample_latent_layer(h, z[:, w + 1, :], chain.wrap_codes[w],
                                            chain.wrap_params[w])
            if failed:
                raise NotPSDError(f"{failed} replicates of layer {w + 2} of "
                                  f"{label(spec)} failed Cholesky at max jitter")
        out[start:stop] = h
    return (out, hidden) if return_latents else out


def mc_estimate(values, seed, n_batches=N_BATCHES):
    """Mean of ``values`` with a batch-means standard error."""
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    batches = np.array([b.mean() for b in np.array_split(values, min(n_batches, n))])
    se = float(batches.std(ddof=1) / math.sqrt(batches.size)) if batches.size > 1 else math.inf
    return MomentEstimate(float(values.mean()), se, int(n), int(seed))


def pair_moments_mc(spec, X, pairs, n, seed, samples=None):
    """MC estimates of E[f_i f_j] for each (i, j) in ``pairs``."""
    f = ancestral_sample(spec, X, n, seed) if samples is None else samples
    return [mc_estimate(f[:, i] * f[:, j], seed) for i, j in pairs]


def fourth_moment_mc(spec, X, quartet, n, seed, samples=None):
    f = ancestral_sample(spec, X, n, seed) if samples is None else samples
    i, j, m, l = quartet
    return mc_estimate(f[:, i] * f[:, j] * f[:, m] * f[:, l], seed)


# -- heavy tails ---------------------------------------------------------

@dataclass
class QuartetRow:
    quartet: tuple
    analytic_p: float
    analytic_q: float
    p_terms: list
    q_terms: list
    mc: MomentEstimate = None

    @property
    def margin(self):
        return self.analytic_p - self.analytic_q


@dataclass
class HeavyTailReport:
    spec_label: str
    rows: list = field(default_factory=list)
    tol: float = 1e-12
    n_se: float = 4.0

    @property
    def min_margin(self):
        return min(r.margin for r in self.rows)

    @property
    def inequalities_hold(self):
        return all(r.margin >= -self.tol for r in self.rows)

    @property
    def oracle_agrees(self):
        return all(r.mc is None or r.mc.within(r.analytic_p, self.n_se) for r in self.rows)

    @property
    def ok(self):
        return self.inequalities_hold and self.oracle_agrees


def heavy_tail_report(spec, X, n=0, seed=0, quartets=None, tol=1e-12, samples=None):
    """Compare exact (p) and Gaussian-approximation (q) fourth moments.

    ``quartets`` defaults to every multiset of four point indices. With
    ``n > 0`` each row also carries an ancestral-sampling estimate of the
    exact fourth moment.
    """
    X = _inputs(X)
    leaf, _ = _two_layer(spec)
    K_inner = cross_cov(Chain.from_spec(leaf), X)
    K_eff = cross_cov(Chain.from_spec(spec), X)
    p_fn, q_fn = p_pairing(spec, K_inner), q_pairing(K_eff)
    if quartets is None:
        quartets = itertools.combinations_with_replacement(range(X.shape[0]), 4)
    if n > 0 and samples is None:
        samples = ancestral_sample(spec, X, n, seed)
    report = HeavyTailReport(label(spec), tol=tol)
    for q in quartets:
        q = tuple(int(i) for i in q)
        p, p_terms = isserlis_fourth(p_fn, q, terms=True)
        qv, q_terms = isserlis_fourth(q_fn, q, terms=True)
        mc = fourth_moment_mc(spec, X, q, n, seed, samples) if samples is not None else None
        report.rows.append(QuartetRow(q, p, qv, p_terms, q_terms, mc))
    return report


def coincident_fourth_moments(spec, x, y):
    """E[f(x)^2 f(y)^2] under p and q, two ways.

    ``isserlis`` counts both cross pairings (what the exact process and a
    Monte-Carlo run give); ``single_cross`` keeps only one of them, the
    form sigma^4 {1 + ...} sometimes quoted for this moment.
    """
    X = np.vstack([np.atleast_1d(np.asarray(x, dtype=float)),
                   np.atleast_1d(np.asarray(y, dtype=float))])
    leaf, _ = _two_layer(spec)
    K_inner = cross_cov(Chain.from_spec(leaf), X)
    K_eff = cross_cov(Chain.from_spec(spec), X)
    p_fn, q_fn = p_pairing(spec, K_inner), q_pairing(K_eff)
    quartet = (0, 0, 1, 1)
    p, p_terms = isserlis_fourth(p_fn, quartet, terms=True)
    q, q_terms = isserlis_fourth(q_fn, quartet, terms=True)
    return {'p_isserlis': p, 'q_isserlis': q,
            'p_single_cross': p_terms[0] + p_terms[1],
            'q_single_cross': q_terms[0] + q_terms[1]}


# -- sign-flip symmetry ----------------------------------------------------

def _mvn_logpdf(x, mean, K):
    L, _ = factor(K)
    r = sla.solve_triangular(L, x - mean, lower=True, check_finite=False)
    return float(-0.5 * r @ r - np.sum(np.log(np.diag(L))) - 0.5 * len(x) * math.log(2 * math.pi))


def joint_log_density(spec, X, f, latents, inner_mean=0.0):
    """log p(f, h^1..h^{L-1} | X) of the un-marginalized stack."""
    X = _inputs(X)
    leaf, wraps = flatten(spec)
    chain = Chain.from_spec(spec)
    if len(latents) != len(wraps):
        raise ValueError(f"expected {len(wraps)} hidden layers, got {len(latents)}")
    K1 = cross_cov(Chain.from_spec(leaf), X)
    layers = list(latents) + [f]
    lp = _mvn_logpdf(layers[0], np.full(X.shape[0], float(inner_mean)), K1)
    for w in range(len(wraps)):
        h, nxt = layers[w], layers[w + 1]
        K = _layer_gram_np(np.asarray(h, dtype=float)[None, :], chain.wrap_codes[w],
                           chain.wrap_params[w])[0]
        lp += _mvn_logpdf(nxt, np.zeros_like(nxt), K)
    return lp


def sign_flip_deviation(spec, X, trials, seed, inner_mean=0.0):
    """Largest relative change of the joint log-density when hidden layers
    are negated (all together, and each one alone) over seeded draws."""
    leaf, wraps = flatten(spec)
    if not wraps:
        return 0.0
    f, hidden = ancestral_sample(spec, X, trials, seed, inner_mean, return_latents=True)
    flips = [tuple(range(len(wraps)))] + [(w,) for w in range(len(wraps))]
    worst = 0.0
    for t in range(trials):
        h = [layer[t] for layer in hidden]
        base = joint_log_density(spec, X, f[t], h, inner_mean)
        for flip in flips:
            hf = [-v if w in flip else v for w, v in enumerate(h)]
            other = joint_log_density(spec, X, f[t], hf, inner_mean)
            worst = max(worst, abs(other - base) / max(1.0, abs(base)))
    return worst


def sign_flip_symmetry_check(spec, X, trials, seed, inner_mean=0.0, rtol=1e-10):
    """True iff negating hidden layers leaves the joint density unchanged
    (to ``rtol``) in every trial. Holds for zero prior means."""
    return sign_flip_deviation(spec, X, trials, seed, inner_mean) <= rtol
