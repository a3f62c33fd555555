"""
Effective kernels of deep GP stacks.

A stack is written outer-to-inner, e.g. SE[SC[NuN]]: the input goes into the
NuN layer, its output into the SC layer, and so on. Every wrap transform is
the exact second moment of the outer kernel under the bivariate Gaussian of
the inner layer, so it only needs the triple (k_ii, k_jj, k_ij) of the inner
kernel. Stacks deeper than two use the same transforms recursively, treating
the inner stack as a Gaussian layer with its effective kernel.
"""

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from .kernels import BASE_PARAMS, BaseKernel, KernelError, as_point, check_positive
from .kernels import diag_value, eval_base

__all__ = ['Sum', 'Wrap', 'KernelSpec', 'InnerEval', 'WRAP_PARAMS', 'wrap_outer',
           'eval_effective', 'eval_three_layer_erf', 'chi', 'expected_sq_derivative',
           'flatten', 'spec_to_dict', 'spec_from_dict', 'spec_to_json', 'spec_from_json',
           'from_label', 'label', 'spec_params', 'with_params', 'signal_variance']

WRAP_PARAMS = {
    'SE': ('sigma', 'ell'),
    'SC': ('sigma', 'ell'),
    'NuN': ('sigma', 'alpha', 'beta'),
    # SE[SE[.]] collapsed with the plateau/erf approximation; sigma, ell are the
    # outer layer and sigma_mid, ell_mid the middle one
    'ErfSESESE': ('sigma', 'ell', 'sigma_mid', 'ell_mid'),
}


@dataclass(frozen=True)
class Sum:
    """Sum of base kernels, used as a single Gaussian input layer."""
    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms or not all(isinstance(t, BaseKernel) for t in terms):
            raise KernelError("a Sum node holds one or more base kernels")
        object.__setattr__(self, 'terms', terms)


@dataclass(frozen=True)
class Wrap:
    outer: str
    params: dict
    inner: 'KernelSpec' = field(repr=True)

    def __post_init__(self):
        if self.outer not in WRAP_PARAMS:
            raise KernelError(f"unknown outer kernel {self.outer!r}")
        params = {k: float(v) for k, v in self.params.items()}
        if set(params) != set(WRAP_PARAMS[self.outer]):
            raise KernelError(f"{self.outer} wrap expects {WRAP_PARAMS[self.outer]}, "
                              f"got {sorted(params)}")
        check_positive(self.outer, params)
        if self.outer == 'NuN' and not params['alpha'] > params['beta']:
            raise KernelError("NuN requires alpha > beta > 0")
        if not isinstance(self.inner, (BaseKernel, Sum, Wrap)):
            raise KernelError("inner must be a kernel spec")
        if self.outer == 'ErfSESESE' and isinstance(self.inner, Wrap):
            raise KernelError("ErfSESESE already holds two layers and wraps only a "
                              "base (Gaussian) layer")
        object.__setattr__(self, 'params', params)

    @property
    def variance(self):
        return self.params['sigma'] ** 2


KernelSpec = Union[BaseKernel, Sum, Wrap]


class InnerEval(NamedTuple):
    k_ii: float
    k_jj: float
    k_ij: float

    def check(self, rtol=1e-12):
        a, b, c = self
        scale = max(abs(a), abs(b), 1e-300)
        if a < -rtol * scale or b < -rtol * scale:
            raise KernelError(f"negative inner variance in {tuple(self)}")
        if c * c > a * b + rtol * scale * scale:
            raise KernelError(f"inner 2x2 covariance is not PSD: {tuple(self)}")
        return self


def _wrap(kind, p, a, b, c, s=None):
    """Raw wrap transform, no PSD validation. ``s`` is the inner gap
    k_ii + k_jj - 2 k_ij when known more accurately than that difference
    and is then clamped at zero against roundoff; without it the transform
    is continued past coincidence (chi's central difference relies on
    that)."""
    return _wrap_pair(kind, p, a, b, c, s)[0]


def _wrap_pair(kind, p, a, b, c, s=None, a_next=None, b_next=None):
    """(wrapped value, its gap). The NuN gap needs the wrapped diagonal
    values ``a_next`` and ``b_next``; the stationary wraps do not."""
    s2 = p['sigma'] ** 2
    if kind == 'NuN':
        al, be = p['alpha'], p['beta']
        q = 1.0 + al * (a + b) - 2.0 * be * c + (al * al - be * be) * (a * b - c * c)
        v = s2 / math.sqrt(q)
        if a_next is None:
            return v, math.nan
        return v, a_next + b_next - 2.0 * v
    s = a + b - 2.0 * c if s is None else max(s, 0.0)
    if kind == 'SE':
        u = s / p['ell'] ** 2
        r = math.sqrt(1.0 + u)
        # 1 - 1/r without cancellation
        return s2 / r, 2.0 * s2 * u / (r * (r + 1.0))
    if kind == 'SC':
        e = math.expm1(-0.5 * s / p['ell'] ** 2)
        return 0.5 * s2 * (2.0 + e), -s2 * e
    # ErfSESESE
    if s <= 0.0:
        return s2, 0.0
    far = s2 / math.sqrt(1.0 + 2.0 * p['sigma_mid'] ** 2 / p['ell'] ** 2)
    drop = (s2 - far) * math.erfc(p['ell_mid'] / math.sqrt(2.0 * s))
    return s2 - drop, 2.0 * drop


def _base_gap(kernel, x, y):
    """k(x, x) + k(y, y) - 2 k(x, y) of a base kernel without cancellation."""
    p = kernel.params
    s2 = p['sigma'] ** 2
    r2 = float(np.sum((x - y) ** 2))
    if kernel.kind == 'SE':
        return -2.0 * s2 * math.expm1(-0.5 * r2 / p['ell'] ** 2)
    if kernel.kind == 'SC':
        return 2.0 * s2 * math.sin(0.5 * math.sqrt(r2) / p['ell']) ** 2
    if kernel.kind == 'Lin':
        return s2 * r2
    if kernel.kind == 'NuN':
        return diag_value(kernel, x) + diag_value(kernel, y) - 2.0 * eval_base(kernel, x, y)
    return 0.0


def wrap_outer(outer_kind, outer_params, inner):
    """Compose an outer kernel over an inner layer given its 2x2 covariance.

    ``inner`` is an :class:`InnerEval` (or any (k_ii, k_jj, k_ij) triple).
    """
    inner = InnerEval(*map(float, inner)).check()
    node = Wrap(outer_kind, outer_params, BaseKernel('Const', {'sigma': 1.0}))
    if outer_kind == 'ErfSESESE':
        return eval_three_layer_erf(node.params, inner)
    a, b, c = inner
    if outer_kind != 'NuN':
        # k_ij^2 <= k_ii k_jj already implies a + b - 2c >= 0 up to roundoff
        c = min(c, 0.5 * (a + b))
    return _wrap(outer_kind, node.params, a, b, c)


def eval_three_layer_erf(params, inner):
    """Plateau approximation of SE[SE[k]] for a Gaussian first layer k.

    The middle layer's random kernel value is replaced by a step: the full
    sigma^2 while |h_i - h_j| <= ell_mid, the far-field value of the SE
    wrap beyond. Averaging the step over h_i - h_j ~ N(0, s), with
    s = k_ii + k_jj - 2 k_ij, weights the two levels by erf(ell_mid / sqrt(2 s))
    and its complement.

    ``params`` holds sigma/ell (outer) and sigma_mid/ell_mid (middle). The
    coincident limit k_ij -> k_ii is taken analytically and gives sigma^2.
    """
    a, b, c = inner
    if c > a * (1 + 1e-12) + 1e-300 or c > b * (1 + 1e-12) + 1e-300:
        raise KernelError("three-layer erf kernel requires k_ij <= k_ii, k_jj")
    p = {k: float(v) for k, v in params.items()}
    check_positive('ErfSESESE', p)
    return _wrap('ErfSESESE', p, a, b, c)


def eval_effective(spec, x, y):
    """Effective covariance of a stack between two input points."""
    x, y = as_point(x), as_point(y)
    if x.shape != y.shape:
        raise KernelError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return _eval(spec, x, y)


def _eval(spec, x, y):
    return _eval_pair(spec, x, y)[0]


def _eval_pair(spec, x, y):
    """(k(x, y), k(x, x) + k(y, y) - 2 k(x, y)) with the gap carried
    through every layer rather than formed at the end."""
    if isinstance(spec, BaseKernel):
        return eval_base(spec, x, y), _base_gap(spec, x, y)
    if isinstance(spec, Sum):
        return (sum(eval_base(t, x, y) for t in spec.terms),
                sum(_base_gap(t, x, y) for t in spec.terms))
    a = _eval(spec.inner, x, x)
    b = _eval(spec.inner, y, y)
    c, s = _eval_pair(spec.inner, x, y)
    a_next = b_next = None
    if spec.outer == 'NuN':
        a_next = _wrap(spec.outer, spec.params, a, a, a)
        b_next = _wrap(spec.outer, spec.params, b, b, b)
    return _wrap_pair(spec.outer, spec.params, a, b, c, s, a_next, b_next)


def flatten(spec):
    """Split a stack into its Gaussian input layer and the wraps above it,
    innermost wrap first."""
    wraps = []
    while isinstance(spec, Wrap):
        wraps.append(spec)
        spec = spec.inner
    return spec, wraps[::-1]


def signal_variance(layer):
    """sigma^2 of a base layer (summed over the terms of a Sum)."""
    if isinstance(layer, Sum):
        return sum(t.variance for t in layer.terms)
    return layer.variance


def _expand_erf(wraps):
    # the erf form approximates SE[SE[.]]; chi uses the stack it stands for
    out = []
    for w in wraps:
        if w.outer == 'ErfSESESE':
            p = w.params
            out.append(('SE', {'sigma': p['sigma_mid'], 'ell': p['ell_mid']}))
            out.append(('SE', {'sigma': p['sigma'], 'ell': p['ell']}))
        else:
            out.append((w.outer, w.params))
    return out


def chi(spec, method='auto'):
    """Expressivity parameter: slope of the normalized effective kernel with
    respect to the normalized input-layer kernel at coincidence.

    ``method`` is ``'analytic'`` (SE wraps only), ``'fd'`` (central finite
    difference with step 1e-6 * sigma_in^2) or ``'auto'``.
    """
    leaf, wraps = flatten(spec)
    if not wraps:
        raise KernelError("chi needs at least one wrap layer")
    layers = _expand_erf(wraps)
    d0 = signal_variance(leaf)
    pure_se = all(kind == 'SE' for kind, _ in layers)
    if method == 'analytic' or (method == 'auto' and pure_se):
        if not pure_se:
            raise KernelError("analytic chi is only available for SE wraps")
        out, below = 1.0, d0
        for _, p in layers:
            out *= below / p['ell'] ** 2
            below = p['sigma'] ** 2
        return out
    if method not in ('auto', 'fd'):
        raise ValueError(f"unknown method {method!r}")

    diags = [d0]
    for kind, p in layers:
        d = diags[-1]
        diags.append(_wrap(kind, p, d, d, d))

    def phi(k):
        for (kind, p), d in zip(layers, diags):
            k = _wrap(kind, p, d, d, k)
        return k

    h = 1e-6 * d0
    slope = (phi(d0 + h) - phi(d0 - h)) / (2.0 * h)
    return slope * d0 / diags[-1]


def _input_scale(leaf):
    terms = leaf.terms if isinstance(leaf, Sum) else (leaf,)
    ells = [t.params['ell'] for t in terms if 'ell' in t.params]
    return min(ells) if ells else 1.0


def expected_sq_derivative(spec, at, levels=6, rtol=1e-4, max_levels=40):
    """E[f'(x)^2] of a 1-d effective GP at ``at``.

    Uses E[(f(x1) - f(x2))^2] / (x1 - x2)^2 over halving separations
    centred on ``at``, with Richardson extrapolation in h^2 over the last
    ``levels`` halvings. Halving continues until two successive
    extrapolations agree to ``rtol``; stacks with a large chi vary on a much
    shorter scale than their input layer, so that can take many steps.
    The squared differences come from the cancellation-free gap, so small
    separations stay accurate. Raises KernelError when the estimate does not
    settle within ``max_levels`` halvings, which is what a kernel that is
    not twice differentiable at coincidence produces.
    """
    at = as_point(at)
    if at.shape != (1,):
        raise KernelError("expected_sq_derivative is defined for 1-d inputs")
    if not 2 <= levels <= max_levels:
        raise ValueError("need 2 <= levels <= max_levels")
    leaf, _ = flatten(spec)
    h0 = 0.2 * _input_scale(leaf)

    table = []
    for m in range(max_levels):
        h = h0 / 2 ** m
        x1, x2 = at - 0.5 * h, at + 0.5 * h
        var = _eval_pair(spec, x1, x2)[1]
        row = [var / h ** 2]
        for j in range(1, min(m, levels - 1) + 1):
            prev = table[m - 1][j - 1]
            row.append(row[j - 1] + (row[j - 1] - prev) / (4 ** j - 1))
        table.append(row)
        if m + 1 < levels:
            continue
        best, before = table[-1][-1], table[-2][-1]
        if abs(best - before) <= rtol * abs(best) + 1e-12:
            return best
    raise KernelError(f"derivative estimate does not converge ({before!r} -> {best!r}); "
                      "kernel is not smooth at coincidence")


# -- serialization ---------------------------------------------------------

def spec_to_dict(spec):
    if isinstance(spec, BaseKernel):
        return {'kind': 'leaf', 'base': spec.kind, 'params': dict(spec.params)}
    if isinstance(spec, Sum):
        return {'kind': 'sum', 'terms': [spec_to_dict(t) for t in spec.terms]}
    return {'kind': 'wrap', 'outer': spec.outer, 'params': dict(spec.params),
            'inner': spec_to_dict(spec.inner)}


def spec_from_dict(doc):
    try:
        kind = doc['kind']
        if kind == 'leaf':
            return BaseKernel(doc['base'], doc.get('params', {}))
        if kind == 'sum':
            return Sum(tuple(spec_from_dict(t) for t in doc['terms']))
        if kind == 'wrap':
            return Wrap(doc['outer'], doc.get('params', {}), spec_from_dict(doc['inner']))
    except (KeyError, TypeError) as exc:
        raise KernelError(f"malformed kernel document: {exc!r}") from None
    raise KernelError(f"unknown node kind {kind!r}")


def spec_to_json(spec, **kwargs):
    return json.dumps(spec_to_dict(spec), **kwargs)


def spec_from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise KernelError(f"invalid kernel JSON: {exc}") from None
    return spec_from_dict(doc)


_UNIT = {'sigma': 1.0, 'ell': 1.0, 'alpha': 2.0, 'beta': 1.0,
         'sigma_mid': 1.0, 'ell_mid': 1.0}


def _unit(names):
    return {n: _UNIT[n] for n in names}


def from_label(text):
    """Build a stack with unit parameters from a label such as ``SE[SC[NuN]]``
    or ``SE[Lin+SE]`` (NuN defaults to alpha=2, beta=1)."""
    text = text.replace(' ', '')
    if '[' in text:
        if not text.endswith(']'):
            raise KernelError(f"bad kernel label {text!r}")
        outer, inner = text[:-1].split('[', 1)
        if outer not in WRAP_PARAMS:
            raise KernelError(f"unknown outer kernel {outer!r}")
        return Wrap(outer, _unit(WRAP_PARAMS[outer]), from_label(inner))
    if '+' in text:
        return Sum(tuple(from_label(t) for t in text.split('+')))
    if text not in BASE_PARAMS:
        raise KernelError(f"unknown base kernel {text!r}")
    return BaseKernel(text, _unit(BASE_PARAMS[text]))


def label(spec):
    if isinstance(spec, BaseKernel):
        return spec.kind
    if isinstance(spec, Sum):
        return '+'.join(t.kind for t in spec.terms)
    return f"{spec.outer}[{label(spec.inner)}]"


# -- flat parameter access (optimizer) -------------------------------------

def spec_params(spec):
    """Ordered (name, value) pairs, input layer first."""
    leaf, wraps = flatten(spec)
    out = []
    if isinstance(leaf, Sum):
        for t, term in enumerate(leaf.terms):
            out += [(f"layer1.term{t}.{n}", v) for n, v in term.params.items()]
    else:
        out += [(f"layer1.{n}", v) for n, v in leaf.params.items()]
    for depth, w in enumerate(wraps, start=2):
        out += [(f"layer{depth}.{n}", v) for n, v in w.params.items()]
    return out


def with_params(spec, values):
    """Copy of ``spec`` with parameters replaced from a name -> value map."""
    leaf, wraps = flatten(spec)

    def pick(prefix, params):
        return {n: values.get(f"{prefix}.{n}", v) for n, v in params.items()}

    if isinstance(leaf, Sum):
        node = Sum(tuple(BaseKernel(t.kind, pick(f"layer1.term{i}", t.params))
                         for i, t in enumerate(leaf.terms)))
    else:
        node = BaseKernel(leaf.kind, pick("layer1", leaf.params))
    for depth, w in enumerate(wraps, start=2):
        node = Wrap(w.outer, pick(f"layer{depth}", w.params), node)
    return node


def diag_effective(spec, x):
    """Effective variance at a point."""
    x = as_point(x)
    if isinstance(spec, BaseKernel):
        return diag_value(spec, x)
    return _eval(spec, x, x)
