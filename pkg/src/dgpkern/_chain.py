"""
Flat ("chain") form of a kernel stack and the hot loops over it.

A stack is an input layer (one or more base kernels summed) followed by a
list of wraps. Per pair of points the chain keeps the triple
(k_ii, k_jj, k_ij) and pushes it through each wrap, so evaluation costs
O(depth) per pair instead of the 3^depth of the recursive definition.

Every kernel here has a numba and a numpy implementation with the same
operation order; :mod:`dgpkern._accel` decides which one runs.
"""

import math

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import erfc

from . import _accel
from .compose import Sum, flatten
from .kernels import KernelError

LEAF_CODES = {'SE': 0, 'SC': 1, 'Lin': 2, 'NuN': 3, 'Const': 4}
WRAP_CODES = {'SE': 0, 'SC': 1, 'NuN': 2, 'ErfSESESE': 3}

# per-replicate Cholesky: jitter ladder and pivot floor, both x mean diagonal
JITTERS = np.array([0.0, 1e-10, 1e-8, 1e-6])
PIVOT_FLOOR = 1e-13


def _leaf_row(kernel):
    p = kernel.params
    s2 = p['sigma'] ** 2
    if kernel.kind in ('SE', 'SC'):
        return [s2, p['ell'], 0.0]
    if kernel.kind == 'NuN':
        return [s2, p['alpha'], p['beta']]
    return [s2, 0.0, 0.0]


def _wrap_row(wrap):
    p = wrap.params
    s2 = p['sigma'] ** 2
    if wrap.outer == 'NuN':
        return [s2, p['alpha'], p['beta'], 0.0]
    if wrap.outer == 'ErfSESESE':
        return [s2, p['ell'], p['sigma_mid'] ** 2, p['ell_mid']]
    return [s2, p['ell'], 0.0, 0.0]


class Chain:
    """Array form of a stack: leaf codes/params and wrap codes/params."""

    def __init__(self, leaf_codes, leaf_params, wrap_codes, wrap_params):
        self.leaf_codes = np.asarray(leaf_codes, dtype=np.int64)
        self.leaf_params = np.asarray(leaf_params, dtype=float).reshape(-1, 3)
        self.wrap_codes = np.asarray(wrap_codes, dtype=np.int64)
        self.wrap_params = np.asarray(wrap_params, dtype=float).reshape(-1, 4)

    @classmethod
    def from_spec(cls, spec):
        leaf, wraps = flatten(spec)
        terms = leaf.terms if isinstance(leaf, Sum) else (leaf,)
        return cls([LEAF_CODES[t.kind] for t in terms],
                   [_leaf_row(t) for t in terms],
                   [WRAP_CODES[w.outer] for w in wraps],
                   [_wrap_row(w) for w in wraps])

    @property
    def depth(self):
        return 1 + len(self.wrap_codes)


# -- numba kernels ---------------------------------------------------------
#
# Besides k_ij every loop carries the gap s_ij = k_ii + k_jj - 2 k_ij, built
# from expm1 / sin / erfc forms for the stationary layers. Forming it as a
# difference of the three kernel values loses everything below roughly
# 1e-16 k_ii, which a wrap with a length scale far below sqrt(k_ii) turns
# into O(1) errors.

@_accel.njit
def _leaf_pair_nb(codes, params, xx, yy, xy, r2):
    k = 0.0
    s = 0.0
    for t in range(codes.shape[0]):
        s2 = params[t, 0]
        c = codes[t]
        if c == 0:
            e = -0.5 * r2 / (params[t, 1] * params[t, 1])
            k += s2 * math.exp(e)
            s -= 2.0 * s2 * math.expm1(e)
        elif c == 1:
            h = 0.5 * math.sqrt(r2) / params[t, 1]
            q = math.cos(h)
            k += s2 * (q * q)
            q = math.sin(h)
            s += 2.0 * s2 * (q * q)
        elif c == 2:
            k += s2 * xy
            s += s2 * r2
        elif c == 3:
            al = params[t, 1]
            be = params[t, 2]
            v = s2 * math.exp(-0.5 * (al * xx - 2.0 * be * xy + al * yy))
            k += v
            s += s2 * math.exp(-(al - be) * xx) + s2 * math.exp(-(al - be) * yy) - 2.0 * v
        else:
            k += s2
    return k, s


@_accel.njit
def _wrap_pair_nb(code, p, a, b, c, s, a_next, b_next):
    if code == 2:
        al = p[1]
        be = p[2]
        q = 1.0 + al * (a + b) - 2.0 * be * c + (al * al - be * be) * (a * b - c * c)
        v = p[0] / math.sqrt(q)
        return v, a_next + b_next - 2.0 * v
    if s < 0.0:
        s = 0.0
    if code == 0:
        u = s / (p[1] * p[1])
        r = math.sqrt(1.0 + u)
        # 1 - 1/r without cancellation
        return p[0] / r, 2.0 * p[0] * u / (r * (r + 1.0))
    if code == 1:
        e = math.expm1(-0.5 * s / (p[1] * p[1]))
        return 0.5 * p[0] * (2.0 + e), -p[0] * e
    if s == 0.0:
        return p[0], 0.0
    far = p[0] / math.sqrt(1.0 + 2.0 * p[2] / (p[1] * p[1]))
    drop = (p[0] - far) * math.erfc(p[3] / math.sqrt(2.0 * s))
    return p[0] - drop, 2.0 * drop


@_accel.njit
def _diag_chain_nb(X, lc, lp, wc, wp):
    n = X.shape[0]
    nw = wc.shape[0]
    d = np.empty((n, nw + 1))
    for i in range(n):
        xx = 0.0
        for k in range(X.shape[1]):
            xx += X[i, k] * X[i, k]
        v, _ = _leaf_pair_nb(lc, lp, xx, xx, xx, 0.0)
        d[i, 0] = v
        for w in range(nw):
            v, _ = _wrap_pair_nb(wc[w], wp[w], v, v, v, 0.0, 0.0, 0.0)
            d[i, w + 1] = v
    return d


@_accel.njit
def _cross_nb(X1, X2, lc, lp, wc, wp, symmetric):
    n1 = X1.shape[0]
    n2 = X2.shape[0]
    nw = wc.shape[0]
    dim = X1.shape[1]
    d1 = _diag_chain_nb(X1, lc, lp, wc, wp)
    d2 = d1 if symmetric else _diag_chain_nb(X2, lc, lp, wc, wp)
    out = np.empty((n1, n2))
    for i in range(n1):
        start = i if symmetric else 0
        for j in range(start, n2):
            xx = 0.0
            yy = 0.0
            xy = 0.0
            r2 = 0.0
            for k in range(dim):
                a = X1[i, k]
                b = X2[j, k]
                xx += a * a
                yy += b * b
                xy += a * b
                r2 += (a - b) * (a - b)
            c, s = _leaf_pair_nb(lc, lp, xx, yy, xy, r2)
            for w in range(nw):
                c, s = _wrap_pair_nb(wc[w], wp[w], d1[i, w], d2[j, w], c, s,
                                     d1[i, w + 1], d2[j, w + 1])
            out[i, j] = c
            if symmetric:
                out[j, i] = c
    return out


# -- numpy twins -----------------------------------------------------------

def _leaf_pair_np(codes, params, xx, yy, xy, r2):
    shape = np.broadcast(xx, yy, xy, r2).shape
    k = np.zeros(shape)
    s = np.zeros(shape)
    for t in range(codes.shape[0]):
        s2, p1, p2 = params[t]
        c = codes[t]
        if c == 0:
            e = -0.5 * r2 / (p1 * p1)
            k += s2 * np.exp(e)
            s -= 2.0 * s2 * np.expm1(e)
        elif c == 1:
            h = 0.5 * np.sqrt(r2) / p1
            q = np.cos(h)
            k += s2 * (q * q)
            q = np.sin(h)
            s += 2.0 * s2 * (q * q)
        elif c == 2:
            k += s2 * xy
            s += s2 * r2
        elif c == 3:
            v = s2 * np.exp(-0.5 * (p1 * xx - 2.0 * p2 * xy + p1 * yy))
            k += v
            s += s2 * np.exp(-(p1 - p2) * xx) + s2 * np.exp(-(p1 - p2) * yy) - 2.0 * v
        else:
            k += s2
    return k, s


def _wrap_pair_np(code, p, a, b, c, s, a_next, b_next):
    if code == 2:
        al, be = p[1], p[2]
        q = 1.0 + al * (a + b) - 2.0 * be * c + (al * al - be * be) * (a * b - c * c)
        v = p[0] / np.sqrt(q)
        return v, a_next + b_next - 2.0 * v
    s = np.maximum(s, 0.0)
    if code == 0:
        u = s / (p[1] * p[1])
        r = np.sqrt(1.0 + u)
        return p[0] / r, 2.0 * p[0] * u / (r * (r + 1.0))
    if code == 1:
        e = np.expm1(-0.5 * s / (p[1] * p[1]))
        return 0.5 * p[0] * (2.0 + e), -p[0] * e
    pos = s > 0.0
    far = p[0] / math.sqrt(1.0 + 2.0 * p[2] / (p[1] * p[1]))
    ec = np.where(pos, erfc(p[3] / np.sqrt(np.where(pos, 2.0 * s, 1.0))), 0.0)
    drop = (p[0] - far) * ec
    return p[0] - drop, 2.0 * drop


def _diag_chain_np(X, lc, lp, wc, wp):
    xx = np.einsum('ij,ij->i', X, X)
    zero = np.zeros_like(xx)
    v, _ = _leaf_pair_np(lc, lp, xx, xx, xx, zero)
    cols = [v]
    for w in range(wc.shape[0]):
        v, _ = _wrap_pair_np(wc[w], wp[w], v, v, v, zero, zero, zero)
        cols.append(v)
    return np.stack(cols, axis=1)


def _cross_np(X1, X2, lc, lp, wc, wp, symmetric):
    d1 = _diag_chain_np(X1, lc, lp, wc, wp)
    d2 = d1 if symmetric else _diag_chain_np(X2, lc, lp, wc, wp)
    xx = np.einsum('ij,ij->i', X1, X1)[:, None]
    yy = np.einsum('ij,ij->i', X2, X2)[None, :]
    xy = X1 @ X2.T
    r2 = cdist(X1, X2, 'sqeuclidean')
    c, s = _leaf_pair_np(lc, lp, xx, yy, xy, r2)
    for w in range(wc.shape[0]):
        c, s = _wrap_pair_np(wc[w], wp[w], d1[:, w][:, None], d2[:, w][None, :], c, s,
                             d1[:, w + 1][:, None], d2[:, w + 1][None, :])
    if symmetric:
        c = np.triu(c) + np.triu(c, 1).T
    return c


# -- public entry points ---------------------------------------------------

def _as_inputs(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise KernelError("inputs must be an (N, D) array")
    return np.ascontiguousarray(X)


def cross_cov(chain, X1, X2=None):
    """Effective covariance matrix between two point sets (X2=None: Gram)."""
    symmetric = X2 is None
    X1 = _as_inputs(X1)
    X2 = X1 if symmetric else _as_inputs(X2)
    if X1.shape[1] != X2.shape[1]:
        raise KernelError(f"dimension mismatch: {X1.shape[1]} vs {X2.shape[1]}")
    fn = _cross_nb if _accel.use_numba() else _cross_np
    return fn(X1, X2, chain.leaf_codes, chain.leaf_params,
              chain.wrap_codes, chain.wrap_params, symmetric)


def diag_cov(chain, X):
    X = _as_inputs(X)
    fn = _diag_chain_nb if _accel.use_numba() else _diag_chain_np
    return fn(X, chain.leaf_codes, chain.leaf_params, chain.wrap_codes, chain.wrap_params)[:, -1]


# -- latent layer sampling (ancestral sampler) -----------------------------

@_accel.njit
def _layer_gram_nb(h, code, p, K):
    N = h.shape[0]
    for i in range(N):
        for j in range(i, N):
            if code == 0:
                d = h[i] - h[j]
                v = p[0] * math.exp(-0.5 * (d * d) / (p[1] * p[1]))
            elif code == 1:
                q = math.cos(0.5 * (h[i] - h[j]) / p[1])
                v = p[0] * (q * q)
            else:
                v = p[0] * math.exp(-0.5 * (p[1] * (h[i] * h[i]) - 2.0 * p[2] * (h[i] * h[j])
                                            + p[1] * (h[j] * h[j])))
            K[i, j] = v
            K[j, i] = v


@_accel.njit
def _chol_nb(K, jitter, floor, L):
    N = K.shape[0]
    for j in range(N):
        s = K[j, j] + jitter
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > floor:
            return False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, N):
            acc = K[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / d
    return True


@_accel.njit
def _latent_nb(h, z, code, p, jitters, floor):
    n, N = h.shape
    out = np.empty((n, N))
    K = np.empty((N, N))
    L = np.zeros((N, N))
    failed = 0
    for r in range(n):
        _layer_gram_nb(h[r], code, p, K)
        scale = 0.0
        for i in range(N):
            scale += K[i, i]
        scale = scale / N
        if not scale > 0.0:
            for i in range(N):
                out[r, i] = 0.0
            continue
        ok = False
        for t in range(jitters.shape[0]):
            if _chol_nb(K, jitters[t] * scale, floor * scale, L):
                ok = True
                break
        if not ok:
            failed += 1
            for i in range(N):
                out[r, i] = np.nan
            continue
        for i in range(N):
            acc = 0.0
            for k in range(i + 1):
                acc += L[i, k] * z[r, k]
            out[r, i] = acc
    return out, failed


def _layer_gram_np(h, code, p):
    hi, hj = h[:, :, None], h[:, None, :]
    if code == 0:
        d = hi - hj
        K = p[0] * np.exp(-0.5 * (d * d) / (p[1] * p[1]))
    elif code == 1:
        q = np.cos(0.5 * (hi - hj) / p[1])
        K = p[0] * (q * q)
    else:
        K = p[0] * np.exp(-0.5 * (p[1] * (hi * hi) - 2.0 * p[2] * (hi * hj) + p[1] * (hj * hj)))
    # mirror the upper triangle like the scalar kernel does
    iu = np.triu_indices(h.shape[1], 1)
    K[:, iu[1], iu[0]] = K[:, iu[0], iu[1]]
    return K


def _chol_np(K, jitter, floor):
    n, N, _ = K.shape
    L = np.zeros_like(K)
    ok = np.ones(n, dtype=bool)
    for j in range(N):
        s = K[:, j, j] + jitter
        for k in range(j):
            s = s - L[:, j, k] * L[:, j, k]
        ok &= s > floor
        d = np.sqrt(np.where(s > floor, s, 1.0))
        L[:, j, j] = d
        for i in range(j + 1, N):
            acc = K[:, i, j]
            for k in range(j):
                acc = acc - L[:, i, k] * L[:, j, k]
            L[:, i, j] = acc / d
    return L, ok


def _latent_np(h, z, code, p, jitters, floor):
    n, N = h.shape
    K = _layer_gram_np(h, code, p)
    scale = np.zeros(n)
    for i in range(N):
        scale = scale + K[:, i, i]
    scale = scale / N
    out = np.full((n, N), np.nan)
    zero = ~(scale > 0.0)
    out[zero] = 0.0
    todo = np.flatnonzero(~zero)
    for jit in jitters:
        if todo.size == 0:
            break
        L, ok = _chol_np(K[todo], jit * scale[todo], floor * scale[todo])
        rows = todo[ok]
        Lk, zk = L[ok], z[rows]
        vals = np.empty((rows.size, N))
        for i in range(N):
            acc = np.zeros(rows.size)
            for k in range(i + 1):
                acc = acc + Lk[:, i, k] * zk[:, k]
            vals[:, i] = acc
        out[rows] = vals
        todo = todo[~ok]
    return out, int(todo.size)


def sample_latent_layer(h, z, code, params):
    """Draw the next layer given the current one, one replicate per row.

    ``h`` and ``z`` are (n, N); each row gets its own Gram matrix over the
    N latent values and its own jitter ladder. Returns (samples, n_failed).
    """
    if code == WRAP_CODES['ErfSESESE']:
        raise KernelError("the erf three-layer form is an approximation and has no "
                          "ancestral process to sample")
    h = np.ascontiguousarray(h, dtype=float)
    z = np.ascontiguousarray(z, dtype=float)
    params = np.ascontiguousarray(params, dtype=float)
    fn = _latent_nb if _accel.use_numba() else _latent_np
    return fn(h, z, int(code), params, JITTERS, PIVOT_FLOOR)
