"""
CSV datasets and synthetic generators.

CSV layout: optional ``#`` comment lines, one header row, then numeric rows.
A dataset file has columns x1..xD,y; any other numeric CSV written by this
package reads back through :func:`read_csv` as well.
"""

import csv
import io

import numpy as np

from .compose import BaseKernel, from_label, spec_params, with_params
from .gp import Dataset, sample_prior
from .rng import lane_generator

__all__ = ['read_csv', 'write_csv', 'load_dataset', 'save_dataset', 'gen_two_scale',
           'gen_pure_noise', 'gen_from_kernel', 'random_hypers', 'NONPERIODIC_STACKS',
           'SE_FAMILY']

# generators for the chi sweep: the non-periodic two-layer stacks
NONPERIODIC_STACKS = ('SE[SE]', 'SC[SE]', 'SE[Lin]', 'SC[Lin]', 'SE[Lin+SE]', 'NuN[SE]')
SE_FAMILY = ('SE[SE]', 'SE[Lin]', 'SE[Lin+SE]', 'NuN[SE]')

_STREAM_X, _STREAM_F, _STREAM_NOISE, _STREAM_HYPER = 11, 12, 13, 14


def _fmt(v):
    return repr(float(v))


def write_csv(out, names, rows, comments=()):
    """Write a header + rows CSV to a path or text stream. Floats are written
    with ``repr`` so values round-trip exactly."""
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(names)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    text = buf.getvalue()
    if hasattr(out, 'write'):
        out.write(text)
    else:
        with open(out, 'w', newline='') as fh:
            fh.write(text)


def read_csv(source):
    """Return (names, rows) with rows as a float array. Non-numeric cells
    are rejected."""
    if hasattr(source, 'read'):
        text = source.read()
    else:
        with open(source, newline='') as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith('#')]
    if not lines:
        raise ValueError("CSV has no header row")
    reader = csv.reader(lines)
    names = [n.strip() for n in next(reader)]
    rows = []
    for k, row in enumerate(reader, start=2):
        if len(row) != len(names):
            raise ValueError(f"row {k} has {len(row)} cells, header has {len(names)}")
        try:
            rows.append([float(c) for c in row])
        except ValueError:
            raise ValueError(f"row {k} has a non-numeric or missing cell") from None
    return names, np.array(rows, dtype=float).reshape(-1, len(names))


def load_dataset(source):
    names, data = read_csv(source)
    yi = names.index('y') if 'y' in names else len(names) - 1
    xi = [i for i in range(len(names)) if i != yi]
    if not xi:
        raise ValueError("dataset needs at least one input column")
    return Dataset(data[:, xi], data[:, yi], tuple(names[i] for i in xi) + (names[yi],))


def save_dataset(out, data, comments=()):
    names = list(data.names[:-1]) + ['y']
    write_csv(out, names, np.column_stack([data.X, data.y]), comments)


def _noise(seed, n, sigma):
    return sigma * lane_generator(seed, stream=_STREAM_NOISE).standard_normal(n)


def gen_two_scale(seed, n=80, x_range=(0.0, 10.0), long=(1.0, 2.0), short=(0.3, 0.3),
                  noise=0.05):
    """Slow SE draw plus a fast SE draw plus white noise; (sigma, ell) pairs.

    A short-scale sigma of 0 leaves single-scale SE data.
    """
    X = np.sort(lane_generator(seed, stream=_STREAM_X).uniform(*x_range, size=n))
    z = lane_generator(seed, stream=_STREAM_F).standard_normal((2, n))
    y = sample_prior(BaseKernel('SE', {'sigma': long[0], 'ell': long[1]}), X, 1, seed,
                     z=z[:1])[0]
    if short[0] > 0:
        y = y + sample_prior(BaseKernel('SE', {'sigma': short[0], 'ell': short[1]}), X, 1,
                             seed, z=z[1:])[0]
    return Dataset(X, y + _noise(seed, n, noise))


def gen_pure_noise(seed, n=90, sigma=0.2, x_range=(0.0, 10.0)):
    """White noise around the zero function on an even grid."""
    X = np.linspace(*x_range, n)
    return Dataset(X, _noise(seed, n, sigma))


def random_hypers(spec, seed, log_range=(-1.0, 1.0)):
    """Copy of ``spec`` with every parameter exp(U(log_range)); NuN keeps
    alpha > beta by drawing alpha = beta (1 + exp(U))."""
    rng = lane_generator(seed, stream=_STREAM_HYPER)
    names = [n for n, _ in spec_params(spec)]
    vals = dict(zip(names, np.exp(rng.uniform(*log_range, size=len(names))).tolist()))
    for n in names:
        if n.endswith('.alpha'):
            b = n[:-len('alpha')] + 'beta'
            vals[n] = vals[b] * (1.0 + vals[n])
    return with_params(spec, vals)


def gen_from_kernel(spec, seed, n=150, x_range=(0.0, 10.0), noise=0.1, randomize=True,
                    log_range=(-1.0, 1.0)):
    """One GP draw from a stack at sorted uniform inputs, plus noise.

    Returns (dataset, generating spec).
    """
    if isinstance(spec, str):
        spec = from_label(spec)
    if randomize:
        spec = random_hypers(spec, seed, log_range)
    X = np.sort(lane_generator(seed, stream=_STREAM_X).uniform(*x_range, size=n))
    z = lane_generator(seed, stream=_STREAM_F).standard_normal((1, n))
    f = sample_prior(spec, X, 1, seed, z=z)[0]
    return Dataset(X, f + _noise(seed, n, noise)), spec
