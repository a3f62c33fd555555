import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dgpkern import BaseKernel, KernelError, diag_value, eval_base

pos = st.floats(0.05, 5.0)
coord = st.floats(-4.0, 4.0)


def se(sigma=1.0, ell=1.0):
    return BaseKernel('SE', {'sigma': sigma, 'ell': ell})


def test_se_coincident_is_variance():
    assert eval_base(se(), 0.3, 0.3) == 1.0


def test_se_unit_distance():
    assert eval_base(se(), [0.0, 0.0], [0.6, 0.8]) == pytest.approx(math.exp(-0.5), rel=1e-15)
    assert math.exp(-0.5) == pytest.approx(0.60653, abs=5e-6)


def test_lin_dot_product():
    assert eval_base(BaseKernel('Lin'), [1, 2], [3, 4]) == 11.0
    assert BaseKernel('Lin').params == {'sigma': 1.0}


def test_sc_coincident():
    assert eval_base(BaseKernel('SC', {'sigma': 1, 'ell': 1}), 2.0, 2.0) == 1.0


def test_sc_value_is_cos_squared():
    k = BaseKernel('SC', {'sigma': 1.5, 'ell': 0.7})
    assert eval_base(k, 0.0, 1.3) == pytest.approx(2.25 * math.cos(1.3 / 1.4) ** 2, rel=1e-14)


def test_diag_values():
    assert diag_value(se(sigma=2.0), [5.0, -1.0]) == 4.0
    assert diag_value(BaseKernel('Lin'), [3.0, 4.0]) == 25.0
    nun = BaseKernel('NuN', {'sigma': 1, 'alpha': 2, 'beta': 1})
    # exp(-(alpha - beta) x^2) at x = 1 is exp(-1)
    assert diag_value(nun, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert diag_value(nun, 1.0) == eval_base(nun, 1.0, 1.0)


@pytest.mark.parametrize('kind,params', [
    ('SE', {'sigma': 0.0, 'ell': 1.0}),
    ('SC', {'sigma': 1.0, 'ell': -1.0}),
    ('NuN', {'sigma': 1.0, 'alpha': 1.0, 'beta': 1.0}),
    ('NuN', {'sigma': 1.0, 'alpha': 0.5, 'beta': 1.0}),
    ('SE', {'sigma': 1.0}),
    ('Foo', {}),
])
def test_invalid_parameters(kind, params):
    with pytest.raises(KernelError):
        BaseKernel(kind, params)


def test_dimension_mismatch():
    with pytest.raises(KernelError):
        eval_base(se(), [0.0, 1.0], [0.0])


def kernels():
    return st.one_of(
        st.builds(lambda s, l: BaseKernel('SE', {'sigma': s, 'ell': l}), pos, pos),
        st.builds(lambda s, l: BaseKernel('SC', {'sigma': s, 'ell': l}), pos, pos),
        st.builds(lambda s: BaseKernel('Lin', {'sigma': s}), pos),
        st.builds(lambda s, b, d: BaseKernel('NuN', {'sigma': s, 'alpha': b + d, 'beta': b}),
                  pos, pos, pos),
        st.builds(lambda s: BaseKernel('Const', {'sigma': s}), pos),
    )


@given(kernels(), st.lists(coord, min_size=2, max_size=2), st.lists(coord, min_size=2, max_size=2))
def test_symmetry_and_diag(k, x, y):
    # NuN exponents are sums of terms rounded in a different order under the
    # swap (and in the diagonal form); exp's relative error grows with them
    size = k.params.get('alpha', 0.0) * float(np.dot(x, x) + np.dot(y, y))
    assert eval_base(k, x, y) == pytest.approx(eval_base(k, y, x), rel=1e-14 * max(1.0, size),
                                               abs=1e-300)
    assert diag_value(k, x) == pytest.approx(eval_base(k, x, x), rel=1e-14 * max(1.0, size),
                                             abs=1e-300)


@given(pos, pos, coord, coord, coord)
def test_stationarity_and_bounds(s, l, x, y, shift):
    for kind in ('SE', 'SC'):
        k = BaseKernel(kind, {'sigma': s, 'ell': l})
        v = eval_base(k, x, y)
        assert v == pytest.approx(eval_base(k, x + shift, y + shift), rel=1e-9, abs=1e-12)
        assert 0.0 <= v <= s * s * (1 + 1e-15)
    nun = BaseKernel('NuN', {'sigma': s, 'alpha': l + 0.1, 'beta': l})
    assert 0.0 <= eval_base(nun, x, y) <= s * s


@given(kernels(), st.integers(0, 2 ** 32 - 1))
def test_gram_is_psd(k, seed):
    X = np.random.default_rng(seed).uniform(-3, 3, size=(12, 1))
    K = np.array([[eval_base(k, a, b) for b in X] for a in X])
    jitter = 1e-8 * k.params['sigma'] ** 2 * max(1.0, np.max(np.diag(K)) / k.params['sigma'] ** 2)
    np.linalg.cholesky(K + jitter * np.eye(len(X)))
