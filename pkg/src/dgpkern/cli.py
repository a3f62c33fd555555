"""
Command-line front end: ``dgpkern <command> [options]``.

Every command is a pure function of its resolved configuration and seed.
Options come from an optional JSON file (``--config``) and are overridden by
flags. CSV outputs start with ``#`` lines echoing that configuration; the
only non-deterministic content, a timestamp, is added with ``--timestamp``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 validation
failure.
"""

import argparse
import datetime
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .compose import Wrap, from_label, label, spec_from_dict, spec_to_dict
from .data import (NONPERIODIC_STACKS, gen_from_kernel, gen_pure_noise, gen_two_scale,
                   load_dataset, read_csv, save_dataset, write_csv)
from .gp import GPModel, NotPSDError, posterior_predict, sample_prior, standard_normals
from .kernels import BaseKernel, KernelError
from .moments import ancestral_sample, heavy_tail_report, mc_estimate
from .optimize import FitReport, chi_sweep, optimize
from ._chain import Chain, cross_cov

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


# -- configuration -------------------------------------------------------

DEFAULTS = {
    'sample-prior': {'kernel': ['SE[SE]'], 'preset': None, 'samples': 3,
                     'grid': [-5.0, 5.0, 201], 'psd_clip': None},
    'gen-data': {'generator': 'two_scale', 'kernel': None, 'n': None, 'noise': None,
                 'options': {}},
    'fit': {'data': None, 'kernel': None, 'restarts': 20, 'budget': 2000,
            'noise_init': 0.1},
    'predict': {'report': None, 'data': None, 'at': None, 'grid': None,
                'include_noise': False, 'kernel': None},
    'chi-sweep': {'generators': list(NONPERIODIC_STACKS), 'samples': 3, 'restarts': 20,
                  'budget': 2000, 'n': 150, 'fit_kernel': 'SE[SE[SE]]'},
    'moments': {'kernel': 'SE[SE]', 'samples': 200_000, 'points': [0.0, 0.5, 1.0, 2.0],
                'n_se': 4.0, 'corrupt': 1.0},
}


def parse_kernel(value):
    """A kernel given as a label (``SE[SE]``), inline JSON, a dict, or a path
    to a JSON file."""
    if isinstance(value, (BaseKernel, Wrap)):
        return value
    try:
        if isinstance(value, dict):
            return spec_from_dict(value)
        text = str(value).strip()
        if text.startswith('{'):
            return spec_from_dict(json.loads(text))
        if os.path.exists(text):
            with open(text) as fh:
                return spec_from_dict(json.load(fh))
        return from_label(text)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"bad kernel spec {value!r}: {exc}") from None


def _kernel_doc(spec):
    return spec_to_dict(spec)


def _unit_distance_kernels():
    # SE and SE[SE] kernels taking the values 0.8, 0.5, 0.2 at unit distance
    # (unit output variance, inner and outer length scales 1 for SE[SE])
    out = []
    for t in (0.8, 0.5, 0.2):
        out.append(BaseKernel('SE', {'sigma': 1.0, 'ell': 1.0 / math.sqrt(-2.0 * math.log(t))}))
    for t in (0.8, 0.5, 0.2):
        ratio2 = (1.0 / t ** 2 - 1.0) / (2.0 * (1.0 - math.exp(-0.5)))
        out.append(Wrap('SE', {'sigma': 1.0, 'ell': 1.0},
                        BaseKernel('SE', {'sigma': math.sqrt(ratio2), 'ell': 1.0})))
    return out


THREE_LAYER_RATIOS = ((0.8, 0.8), (1.0, 1.0), (1.4, 1.2))


def _three_layer_kernels():
    # erf plateau form and the recursion for each (sigma2/ell3, sigma1/ell2)
    # with sigma3 = ell1 = 1 and ell2 = ell3 = 1
    out = []
    for r2, r1 in THREE_LAYER_RATIOS:
        leaf = BaseKernel('SE', {'sigma': r1, 'ell': 1.0})
        out.append(Wrap('ErfSESESE', {'sigma': 1.0, 'ell': 1.0, 'sigma_mid': r2,
                                      'ell_mid': 1.0}, leaf))
    for r2, r1 in THREE_LAYER_RATIOS:
        leaf = BaseKernel('SE', {'sigma': r1, 'ell': 1.0})
        mid = Wrap('SE', {'sigma': r2, 'ell': 1.0}, leaf)
        out.append(Wrap('SE', {'sigma': 1.0, 'ell': 1.0}, mid))
    return out


PRESETS = {'unit-distance': _unit_distance_kernels, 'three-layer': _three_layer_kernels}


# -- output helpers ------------------------------------------------------

def _header(command, cfg, stamp):
    lines = [f"dgpkern {__version__} {command}",
             "config: " + json.dumps(cfg, sort_keys=True, separators=(',', ':'))]
    if stamp:
        lines.append("generated: " + datetime.datetime.now(datetime.timezone.utc).isoformat())
    return lines


def _emit(text, out):
    if out in (None, '-'):
        sys.stdout.write(text)
    else:
        with open(out, 'w', newline='') as fh:
            fh.write(text)


def _csv_text(names, rows, comments):
    buf = io.StringIO()
    write_csv(buf, names, rows, comments)
    return buf.getvalue()


def _load_data(path):
    if path is None:
        raise UsageError("a dataset path is required (config 'data' or --data)")
    try:
        return load_dataset(path)
    except OSError as exc:
        raise ValidationError(f"cannot read dataset {path}: {exc}") from None
    except ValueError as exc:
        raise ValidationError(f"invalid dataset {path}: {exc}") from None


def _grid(spec):
    try:
        lo, hi, num = spec
        num = int(num)
    except (TypeError, ValueError):
        raise UsageError(f"grid must be [start, stop, count], got {spec!r}") from None
    if num < 1 or not (math.isfinite(lo) and math.isfinite(hi)):
        raise UsageError(f"bad grid {spec!r}")
    return np.linspace(float(lo), float(hi), num)


# -- commands --------------------------------------------------------------

def cmd_sample_prior(cfg, seed):
    """Grid plus sampled function columns; every kernel uses the same
    standard-normal draws so their samples are directly comparable."""
    if cfg['preset'] is not None:
        if cfg['preset'] not in PRESETS:
            raise UsageError(f"unknown preset {cfg['preset']!r}; have {sorted(PRESETS)}")
        kernels = PRESETS[cfg['preset']]()
    else:
        kernels = [parse_kernel(k) for k in cfg['kernel']]
    n = int(cfg['samples'])
    if n < 1:
        raise UsageError("samples must be >= 1")
    clip = cfg['psd_clip']
    if clip is None:
        # the erf plateau form is indefinite at the preset parameters
        clip = cfg['preset'] == 'three-layer'
    x = _grid(cfg['grid'])
    cols, names, comments = [x], ['x'], []
    for i, spec in enumerate(kernels):
        comments.append(f"k{i}: {label(spec)} "
                        + json.dumps(_kernel_doc(spec), sort_keys=True, separators=(',', ':')))
        try:
            f = sample_prior(spec, x, n, seed)
        except NotPSDError:
            if not clip:
                raise
            f, lowest = _clipped_samples(spec, x, n, seed)
            comments.append(f"k{i}: not positive definite (lowest eigenvalue {lowest:.6g}); "
                            "sampled from the eigenvalue-clipped matrix")
        cols.extend(f)
        names.extend(f"k{i}_f{r + 1}" for r in range(n))
    return names, np.column_stack(cols), comments


def _clipped_samples(spec, x, n, seed):
    K = cross_cov(Chain.from_spec(spec), x)
    w, V = np.linalg.eigh(K)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return standard_normals(seed, n, x.size) @ root.T, float(w[0])


def cmd_gen_data(cfg, seed):
    gen = cfg['generator']
    kwargs = dict(cfg.get('options') or {})
    if cfg.get('n') is not None:
        kwargs['n'] = int(cfg['n'])
    if gen == 'two_scale':
        if cfg.get('noise') is not None:
            kwargs['noise'] = float(cfg['noise'])
        return gen_two_scale(seed, **kwargs), []
    if gen == 'pure_noise':
        if cfg.get('noise') is not None:
            kwargs['sigma'] = float(cfg['noise'])
        return gen_pure_noise(seed, **kwargs), []
    if gen == 'from_kernel':
        if cfg.get('kernel') is None:
            raise UsageError("from_kernel needs a kernel")
        if cfg.get('noise') is not None:
            kwargs['noise'] = float(cfg['noise'])
        data, spec = gen_from_kernel(parse_kernel(cfg['kernel']), seed, **kwargs)
        doc = json.dumps(_kernel_doc(spec), sort_keys=True, separators=(',', ':'))
        return data, [f"generating kernel: {doc}"]
    raise UsageError(f"unknown generator {gen!r}")


def cmd_fit(cfg, seed):
    data = _load_data(cfg['data'])
    if cfg['kernel'] is None:
        raise UsageError("fit needs a kernel")
    spec = parse_kernel(cfg['kernel'])
    template = GPModel(spec, float(cfg['noise_init']), data)
    return optimize(template, restarts=int(cfg['restarts']), seed=seed,
                    budget=int(cfg['budget']))


def _same_structure(a, b):
    return label(a) == label(b)


def cmd_predict(cfg, seed):
    if cfg['report'] is None:
        raise UsageError("predict needs a fit report")
    try:
        with open(cfg['report']) as fh:
            report = FitReport.from_json(fh.read())
    except OSError as exc:
        raise ValidationError(f"cannot read report {cfg['report']}: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"invalid fit report {cfg['report']}: {exc}") from None
    if cfg.get('kernel') is not None and not _same_structure(parse_kernel(cfg['kernel']),
                                                            report.spec):
        raise ValidationError(f"report holds {label(report.spec)}, config asks for "
                              f"{label(parse_kernel(cfg['kernel']))}")
    data = _load_data(cfg['data'])
    if cfg.get('at') is not None:
        try:
            _, X_star = read_csv(cfg['at'])
        except (OSError, ValueError) as exc:
            raise ValidationError(f"cannot read prediction inputs: {exc}") from None
    else:
        grid = cfg['grid'] or [float(data.X.min()), float(data.X.max()), 201]
        X_star = _grid(grid)[:, None]
    if X_star.shape[1] != data.X.shape[1]:
        raise ValidationError(f"prediction inputs have {X_star.shape[1]} columns, "
                              f"training inputs {data.X.shape[1]}")
    mean, var = posterior_predict(report.model(data), X_star,
                                  include_noise=bool(cfg['include_noise']))
    names = list(data.names[:-1]) + ['mean', 'var']
    comments = [f"model: {label(report.spec)} best_lml={report.best_lml!r}"]
    return names, np.column_stack([X_star, mean, var]), comments


def cmd_chi_sweep(cfg, seed):
    gens = [parse_kernel(g) for g in cfg['generators']]
    rows = chi_sweep(gens, draws=int(cfg['samples']), seed=seed,
                     restarts=int(cfg['restarts']), budget=int(cfg['budget']),
                     n=int(cfg['n']), fit_label=cfg['fit_kernel'])
    index = {label(g): i for i, g in enumerate(gens)}
    comments = [f"generator {i}: {name}" for name, i in index.items()]
    table = [[index[r.generator], r.draw_seed, r.restart, r.final_lml, r.log_chi]
             for r in rows]
    names = ['generator_kernel', 'draw_seed', 'restart', 'final_lml', 'log_chi']
    return names, np.array(table, dtype=float).reshape(-1, 5), comments


def cmd_moments(cfg, seed):
    """Ancestral-sampling checks of a stack at a few inputs.

    Pair rows compare the Monte-Carlo second moment with the effective
    kernel; quartet rows (two-layer SE/SC outer stacks) compare the exact
    fourth moment with its Monte-Carlo estimate and with the Gaussian
    approximation. ``corrupt`` scales every analytic value (self-test hook).
    """
    spec = parse_kernel(cfg['kernel'])
    X = np.asarray(cfg['points'], dtype=float).reshape(-1, 1)
    n = int(cfg['samples'])
    if n < 200:
        raise UsageError("moments needs samples >= 200")
    n_se, corrupt = float(cfg['n_se']), float(cfg['corrupt'])
    f = ancestral_sample(spec, X, n, seed)
    K = cross_cov(Chain.from_spec(spec), X) * corrupt
    rows, ok = [], True
    N = X.shape[0]
    for i in range(N):
        for j in range(i, N):
            est = mc_estimate(f[:, i] * f[:, j], seed)
            passed = est.within(K[i, j], n_se)
            ok &= passed
            rows.append([2, i, j, -1, -1, K[i, j], math.nan, math.nan, est.value,
                         est.std_error, float(passed)])
    leaf_wraps = isinstance(spec, Wrap) and not isinstance(spec.inner, Wrap)
    if leaf_wraps and spec.outer in ('SE', 'SC'):
        report = heavy_tail_report(spec, X, n=n, seed=seed, samples=f)
        for r in report.rows:
            p, q = r.analytic_p * corrupt, r.analytic_q
            passed = r.mc.within(p, n_se) and r.margin >= -report.tol
            ok &= passed
            rows.append([4, *r.quartet, p, q, r.margin, r.mc.value, r.mc.std_error,
                         float(passed)])
    names = ['order', 'i', 'j', 'k', 'l', 'analytic', 'gaussian_q', 'margin', 'mc', 'mc_se',
             'pass']
    comments = ["points: " + json.dumps(X.ravel().tolist()),
                f"kernel: {label(spec)} "
                + json.dumps(_kernel_doc(spec), sort_keys=True, separators=(',', ':')),
                f"all checks passed: {bool(ok)}"]
    return names, np.array(rows, dtype=float), comments, ok


# -- argument parsing --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON file of options')
    common.add_argument('--seed', type=int, default=None, help='master seed (default 0)')
    common.add_argument('--out', help='output path (default stdout)')
    common.add_argument('--timestamp', action='store_true',
                        help='add a generation time to the header comments')

    p = _Parser(prog='dgpkern', description='Deep-GP effective kernels: sampling, '
                'fitting and moment checks.')
    p.add_argument('--version', action='version', version=f"dgpkern {__version__}")
    sub = p.add_subparsers(dest='command', required=True, parser_class=_Parser)

    s = sub.add_parser('sample-prior', parents=[common], help='draw prior functions on a grid')
    s.add_argument('--kernel', action='append', help='label, JSON or path; repeatable')
    s.add_argument('--preset', choices=sorted(PRESETS))
    s.add_argument('--samples', type=int, help='functions per kernel')
    s.add_argument('--grid', type=float, nargs=3, metavar=('START', 'STOP', 'COUNT'))
    s.add_argument('--psd-clip', action=argparse.BooleanOptionalAction, default=None,
                   help='sample indefinite kernels from their eigenvalue-clipped matrix')

    s = sub.add_parser('gen-data', parents=[common], help='write a synthetic dataset')
    s.add_argument('--generator', choices=['two_scale', 'pure_noise', 'from_kernel'])
    s.add_argument('--kernel')
    s.add_argument('--n', type=int)
    s.add_argument('--noise', type=float)

    s = sub.add_parser('fit', parents=[common], help='type-II ML fit, writes a JSON report')
    s.add_argument('--data')
    s.add_argument('--kernel')
    s.add_argument('--restarts', type=int)
    s.add_argument('--budget', type=int)

    s = sub.add_parser('predict', parents=[common], help='predictive mean and variance')
    s.add_argument('--report')
    s.add_argument('--data')
    s.add_argument('--kernel', help='expected kernel; must match the report')
    s.add_argument('--at', help='CSV of prediction inputs')
    s.add_argument('--grid', type=float, nargs=3, metavar=('START', 'STOP', 'COUNT'))
    s.add_argument('--include-noise', action='store_true', default=None)

    s = sub.add_parser('chi-sweep', parents=[common], help='final LML against log chi')
    s.add_argument('--kernel', action='append', dest='generators',
                   help='generator stack; repeatable (default: non-periodic table)')
    s.add_argument('--samples', type=int, help='datasets per generator')
    s.add_argument('--restarts', type=int)
    s.add_argument('--budget', type=int)
    s.add_argument('--n', type=int)

    s = sub.add_parser('moments', parents=[common], help='Monte-Carlo moment checks')
    s.add_argument('--kernel')
    s.add_argument('--samples', type=int)
    s.add_argument('--points', type=float, nargs='+')
    s.add_argument('--corrupt', type=float, help=argparse.SUPPRESS)
    return p


def resolve(args):
    """Defaults, then the config file, then explicit flags."""
    cfg = json.loads(json.dumps(DEFAULTS[args.command]))
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        seed = loaded.pop('seed', None)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        cfg.update(loaded)
    else:
        seed = None
    skip = {'command', 'config', 'seed', 'out', 'timestamp'}
    for key, value in vars(args).items():
        if key not in skip and value is not None:
            cfg[key] = value
    seed = args.seed if args.seed is not None else (seed if seed is not None else 0)
    if not 0 <= int(seed) < 2 ** 64:
        raise UsageError("seed must be an unsigned 64-bit integer")
    return cfg, int(seed)


def _json_safe(cfg):
    return {k: (spec_to_dict(v) if isinstance(v, (BaseKernel, Wrap)) else v)
            for k, v in cfg.items()}


def run(argv=None):
    args = build_parser().parse_args(argv)
    cfg, seed = resolve(args)
    header = _header(args.command, {**_json_safe(cfg), 'seed': seed}, args.timestamp)
    if args.command == 'gen-data':
        data, extra = cmd_gen_data(cfg, seed)
        buf = io.StringIO()
        save_dataset(buf, data, header + extra)
        _emit(buf.getvalue(), args.out)
        return EXIT_OK
    if args.command == 'fit':
        report = cmd_fit(cfg, seed)
        report.extra = {'config': {**_json_safe(cfg), 'seed': seed}}
        _emit(report.to_json() + '\n', args.out)
        return EXIT_OK
    if args.command == 'moments':
        names, rows, comments, ok = cmd_moments(cfg, seed)
        _emit(_csv_text(names, rows, header + comments), args.out)
        if not ok:
            sys.stderr.write("dgpkern moments: an oracle or inequality check failed\n")
            return EXIT_VALIDATION
        return EXIT_OK
    command = {'sample-prior': cmd_sample_prior, 'predict': cmd_predict,
               'chi-sweep': cmd_chi_sweep}[args.command]
    names, rows, comments = command(cfg, seed)
    _emit(_csv_text(names, rows, header + comments), args.out)
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except UsageError as exc:
        sys.stderr.write(f"dgpkern: usage error: {exc}\n")
        return EXIT_USAGE
    except ValidationError as exc:
        sys.stderr.write(f"dgpkern: validation failed: {exc}\n")
        return EXIT_VALIDATION
    except (NotPSDError, ArithmeticError, KernelError) as exc:
        sys.stderr.write(f"dgpkern: numerical failure: {exc}\n")
        return EXIT_NUMERICAL


if __name__ == '__main__':
    sys.exit(main())
