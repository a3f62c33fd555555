"""
Single-layer covariance functions.

All kernels act on points in R^D. SC and NuN are scalar kernels in their
natural form; for D > 1 the squared distance, squared norms and the dot
product stand in for the scalar squares, which keeps them symmetric and
exact at D = 1.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ['BaseKernel', 'KernelError', 'BASE_PARAMS', 'eval_base', 'diag_value',
           'as_point']

# parameter names per base kernel; Lin defaults to sigma=1 (plain dot product)
BASE_PARAMS = {
    'SE': ('sigma', 'ell'),
    'SC': ('sigma', 'ell'),
    'Lin': ('sigma',),
    'NuN': ('sigma', 'alpha', 'beta'),
    'Const': ('sigma',),
}

_DEFAULTS = {'Lin': {'sigma': 1.0}}


class KernelError(ValueError):
    """Invalid kernel parameters or incompatible inputs."""


def check_positive(kind, params):
    for name, value in params.items():
        if not np.isfinite(value) or value <= 0:
            raise KernelError(f"{kind}: parameter {name}={value!r} must be positive")


@dataclass(frozen=True)
class BaseKernel:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BASE_PARAMS:
            raise KernelError(f"unknown base kernel {self.kind!r}")
        params = dict(_DEFAULTS.get(self.kind, {}))
        params.update({k: float(v) for k, v in self.params.items()})
        expected = set(BASE_PARAMS[self.kind])
        if set(params) != expected:
            raise KernelError(f"{self.kind} expects parameters {sorted(expected)}, "
                              f"got {sorted(params)}")
        check_positive(self.kind, params)
        if self.kind == 'NuN' and not params['alpha'] > params['beta']:
            raise KernelError("NuN requires alpha > beta > 0")
        object.__setattr__(self, 'params', params)

    @property
    def variance(self):
        return self.params['sigma'] ** 2

    def __call__(self, x, y):
        return eval_base(self, x, y)


def as_point(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise KernelError("an input point must be a scalar or a 1-d vector")
    if not np.all(np.isfinite(x)):
        raise KernelError("input point has non-finite entries")
    return x


def _pair(x, y):
    x, y = as_point(x), as_point(y)
    if x.shape != y.shape:
        raise KernelError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return x, y


def eval_base(kernel, x, y):
    x, y = _pair(x, y)
    p = kernel.params
    s2 = p['sigma'] ** 2
    kind = kernel.kind
    if kind == 'SE':
        r2 = np.sum((x - y) ** 2)
        return float(s2 * np.exp(-0.5 * r2 / p['ell'] ** 2))
    if kind == 'SC':
        r = np.sqrt(np.sum((x - y) ** 2))
        return float(s2 * np.cos(0.5 * r / p['ell']) ** 2)
    if kind == 'Lin':
        return float(s2 * np.dot(x, y))
    if kind == 'NuN':
        q = p['alpha'] * (x @ x) - 2.0 * p['beta'] * (x @ y) + p['alpha'] * (y @ y)
        return float(s2 * np.exp(-0.5 * q))
    return float(s2)


def diag_value(kernel, x):
    """k(x, x) without forming a pair."""
    x = as_point(x)
    p = kernel.params
    s2 = p['sigma'] ** 2
    if kernel.kind == 'Lin':
        return float(s2 * (x @ x))
    if kernel.kind == 'NuN':
        return float(s2 * np.exp(-(p['alpha'] - p['beta']) * (x @ x)))
    return float(s2)
