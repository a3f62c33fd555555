"""
Exact GP inference over any kernel stack.

Gaussian observation noise is assumed throughout. Everything goes through a
Cholesky factor of K + (noise + jitter) I, with jitter taken from a fixed
ladder and reported back.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ._chain import Chain, cross_cov, diag_cov
from .compose import label
from .rng import lane_generator

__all__ = ['NotPSDError', 'Dataset', 'GramResult', 'GPModel', 'JITTER_LADDER', 'gram',
           'factor', 'sample_prior', 'standard_normals', 'log_marginal_likelihood',
           'posterior_predict', 'lml_from_chain']

# multiples of the mean diagonal tried in turn
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)

_LOG_2PI = math.log(2.0 * math.pi)


class NotPSDError(ArithmeticError):
    """Cholesky failed even at the largest jitter."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    names: tuple = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("X must be a non-empty (N, D) array")
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset has non-finite entries")
        if self.names is None:
            self.names = tuple(f"x{d + 1}" for d in range(X.shape[1])) + ('y',)
        self.X, self.y = X, y

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.names)


@dataclass
class GramResult:
    K: np.ndarray
    jitter_added: float
    chol: np.ndarray
    noise: float = 0.0


def factor(K, noise=0.0, what="covariance"):
    """Lower Cholesky factor of K + (noise + jitter) I with the jitter ladder.

    Returns (chol, jitter_added).
    """
    n = K.shape[0]
    scale = float(np.mean(np.diag(K)))
    if not scale > 0.0:
        scale = 1.0
    for rel in JITTER_LADDER:
        jitter = rel * scale
        A = K + (noise + jitter) * np.eye(n)
        try:
            L = sla.cholesky(A, lower=True, check_finite=False)
        except sla.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, jitter
    raise NotPSDError(f"{what} is not positive definite even with jitter "
                      f"{JITTER_LADDER[-1]:g} x mean diagonal")


def gram(spec, X, noise=0.0):
    K = cross_cov(Chain.from_spec(spec), X)
    L, jitter = factor(K, noise, what=f"Gram matrix of {label(spec)}")
    return GramResult(K, jitter, L, noise)


def standard_normals(seed, n, N):
    """(n, N) standard normals, one row per function. For a fixed N, row r
    depends only on (seed, r)."""
    return lane_generator(seed).standard_normal((n, N))


def sample_prior(spec, X, n_functions, seed, z=None):
    """Draw functions from the effective GP at inputs X.

    ``z`` overrides the standard-normal draws; pass the same ``z`` to
    several kernels to compare them on a shared noise vector (with a fixed
    seed and size the default draws are already shared).
    """
    g = gram(spec, X)
    N = g.K.shape[0]
    if z is None:
        z = standard_normals(seed, n_functions, N)
    z = np.asarray(z, dtype=float)
    if z.shape != (n_functions, N):
        raise ValueError(f"z must have shape {(n_functions, N)}")
    return z @ g.chol.T


@dataclass
class GPModel:
    spec: object
    noise_variance: float
    data: Dataset

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")


def _lml(K, y, noise):
    L, _ = factor(K, noise)
    alpha = sla.cho_solve((L, True), y, check_finite=False)
    n = y.shape[0]
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG_2PI)


def log_marginal_likelihood(model):
    K = cross_cov(Chain.from_spec(model.spec), model.data.X)
    return _lml(K, model.data.y, model.noise_variance)


def lml_from_chain(chain, X, y, noise):
    """LML straight from an array-form kernel (optimizer inner loop)."""
    return _lml(cross_cov(chain, X), y, noise)


def posterior_predict(model, X_star, include_noise=False):
    """Predictive mean and variance of the latent function (plus the noise
    variance when ``include_noise``)."""
    chain = Chain.from_spec(model.spec)
    X = model.data.X
    X_star = np.asarray(X_star, dtype=float)
    if X_star.ndim == 1:
        X_star = X_star[:, None] if X.shape[1] == 1 else X_star[None, :]
    if X_star.shape[1] != X.shape[1]:
        raise ValueError(f"test inputs have dimension {X_star.shape[1]}, "
                         f"training inputs {X.shape[1]}")
    K = cross_cov(chain, X)
    L, _ = factor(K, model.noise_variance)
    Ks = cross_cov(chain, X, X_star)
    alpha = sla.cho_solve((L, True), model.data.y, check_finite=False)
    mean = Ks.T @ alpha
    v = sla.solve_triangular(L, Ks, lower=True, check_finite=False)
    var = diag_cov(chain, X_star) - np.einsum('ij,ij->j', v, v)
    if np.any(var < -1e-10):
        warnings.warn(f"negative predictive variance {var.min():.3g} clamped to 0",
                      RuntimeWarning, stacklevel=2)
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + model.noise_variance
    return mean, var
