"""
Type-II maximum likelihood for kernel stacks.

Multi-restart Nelder-Mead on the negative log marginal likelihood in log
parameter space. Restart r draws its initial point from its own Philox
stream, so restarts can run in any order and the report is a pure function
of (model, data, seed).
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.optimize as so

from ._chain import Chain
from .compose import Wrap, chi, label, spec_from_dict, spec_params, spec_to_dict, with_params
from .gp import Dataset, GPModel, NotPSDError, lml_from_chain
from .rng import lane_generator

__all__ = ['HyperVector', 'RestartResult', 'FitReport', 'hyper_vector', 'model_from_vector',
           'optimize', 'profile_lml', 'ProfileCurve', 'NOISE', 'chi_sweep', 'SweepRow']

NOISE = 'noise_variance'
INIT_RANGE = (-10.0, 10.0)
SIMPLEX_STEP = 1.0
PERTURBATION = 0.5
LOG_BOX = 300.0
_OPT_STREAM = 7


@dataclass
class HyperVector:
    names: list
    log_values: np.ndarray

    def __post_init__(self):
        self.names = list(self.names)
        self.log_values = np.asarray(self.log_values, dtype=float)
        if len(self.names) != self.log_values.shape[0]:
            raise ValueError("names and values differ in length")

    def values(self):
        return dict(zip(self.names, np.exp(self.log_values).tolist()))


def hyper_vector(model):
    names, vals = zip(*(spec_params(model.spec) + [(NOISE, model.noise_variance)]))
    return HyperVector(names, np.log(vals))


def model_from_vector(template, hv, data=None):
    vals = hv.values()
    spec = with_params(template.spec, vals)
    return GPModel(spec, vals[NOISE], template.data if data is None else data)


class _Objective:
    """Negative LML as a function of log parameters, writing straight into
    the array form of the stack."""

    def __init__(self, template):
        self.spec = template.spec
        self.X, self.y = template.data.X, template.data.y
        self.chain = Chain.from_spec(self.spec)
        self.names = [n for n, _ in spec_params(self.spec)] + [NOISE]
        self.slots = self._slots()
        self.nun = list(self._nun_pairs())
        self.nfev = 0

    def _slots(self):
        slots = []
        for name in self.names[:-1]:
            layer, *rest = name.split('.')
            param = rest[-1]
            depth = int(layer[len('layer'):])
            if depth == 1:
                row = int(rest[0][len('term'):]) if len(rest) == 2 else 0
                col, sq = {'sigma': (0, True), 'ell': (1, False), 'alpha': (1, False),
                           'beta': (2, False)}[param]
                slots.append((self.chain.leaf_params, row, col, sq))
            else:
                col, sq = {'sigma': (0, True), 'ell': (1, False), 'alpha': (1, False),
                           'beta': (2, False), 'sigma_mid': (2, True),
                           'ell_mid': (3, False)}[param]
                slots.append((self.chain.wrap_params, depth - 2, col, sq))
        return slots

    def _nun_pairs(self):
        index = {n: i for i, n in enumerate(self.names)}
        for n in self.names:
            if n.endswith('.alpha'):
                yield index[n], index[n[:-len('alpha')] + 'beta']

    def lml(self, logv):
        # beyond this box squared parameters under/overflow
        if not np.all(np.abs(logv) <= LOG_BOX):
            return -math.inf
        theta = np.exp(logv)
        for a, b in self.nun:
            if not theta[a] > theta[b]:
                return -math.inf
        for (arr, row, col, sq), v in zip(self.slots, theta):
            arr[row, col] = v * v if sq else v
        try:
            val = lml_from_chain(self.chain, self.X, self.y, theta[-1])
        except (NotPSDError, ZeroDivisionError, FloatingPointError):
            return -math.inf
        return val if math.isfinite(val) else -math.inf

    def __call__(self, logv):
        self.nfev += 1
        return -self.lml(logv)


@dataclass
class RestartResult:
    init: list
    final: list
    lml: float
    iterations: int
    converged: bool
    init_lml: float = -math.inf


@dataclass
class FitReport:
    best: HyperVector
    best_lml: float
    per_restart: list
    chi_at_best: float
    seed: int
    spec: object = None
    noise_variance: float = None
    budget: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            'names': self.best.names,
            'log_values': self.best.log_values.tolist(),
            'best_lml': self.best_lml,
            'chi_at_best': self.chi_at_best,
            'seed': self.seed,
            'budget': self.budget,
            'noise_variance': self.noise_variance,
            'kernel': spec_to_dict(self.spec),
            'per_restart': [asdict(r) for r in self.per_restart],
            **({'extra': self.extra} if self.extra else {}),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        rows = [RestartResult(**r) for r in doc['per_restart']]
        return cls(HyperVector(doc['names'], doc['log_values']), doc['best_lml'], rows,
                   doc['chi_at_best'], doc['seed'], spec_from_dict(doc['kernel']),
                   doc['noise_variance'], doc.get('budget', 0), doc.get('extra', {}))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def model(self, data):
        return GPModel(self.spec, self.noise_variance, data)


def _run_restart(objective, x0, rng, budget, xatol):
    best_x, best_f = x0.copy(), objective(x0)
    init_f = best_f
    start = x0
    iterations, converged = 0, False
    while objective.nfev < budget:
        simplex = start + SIMPLEX_STEP * np.vstack([np.zeros_like(start), np.eye(start.size)])
        res = so.minimize(objective, start, method='Nelder-Mead',
                          options={'maxfev': budget - objective.nfev, 'xatol': xatol,
                                   'fatol': math.inf, 'initial_simplex': simplex})
        iterations += int(res.nit)
        if res.fun < best_f:
            best_x, best_f = np.asarray(res.x, dtype=float), float(res.fun)
        if math.isfinite(res.fun):
            converged = bool(res.success) and objective.nfev < budget
            break
        # stuck where the LML is not finite: nudge and go again
        start = best_x + rng.uniform(-PERTURBATION, PERTURBATION, size=best_x.size)
    return best_x, best_f, init_f, iterations, converged


def optimize(template, restarts=20, seed=0, budget=2000, xatol=1e-6, init_range=INIT_RANGE):
    """Fit all kernel parameters and the noise variance of ``template``.

    Each restart starts from log-parameters drawn uniformly from
    ``init_range`` and runs Nelder-Mead until the simplex is smaller than
    ``xatol`` or ``budget`` LML evaluations are used.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if budget < 100:
        raise ValueError("budget must be >= 100 evaluations per restart")
    rows, finals = [], []
    names = None
    for r in range(restarts):
        objective = _Objective(template)
        names = objective.names
        rng = lane_generator(seed, r, stream=_OPT_STREAM)
        x0 = rng.uniform(*init_range, size=len(names))
        for a, b in objective.nun:
            # start inside the feasible region alpha > beta
            if x0[a] <= x0[b]:
                x0[a], x0[b] = x0[b], x0[a]
        x, f, f0, nit, conv = _run_restart(objective, x0, rng, budget, xatol)
        rows.append(RestartResult(x0.tolist(), x.tolist(), -f, nit, conv, -f0))
        finals.append(x)
    lmls = [row.lml for row in rows]
    if not any(math.isfinite(v) for v in lmls):
        raise ArithmeticError("no restart reached a finite log marginal likelihood")
    k = int(np.argmax(lmls))
    best = HyperVector(names, finals[k])
    model = model_from_vector(template, best)
    chi_best = chi(model.spec) if isinstance(model.spec, Wrap) else math.nan
    return FitReport(best, lmls[k], rows, chi_best, int(seed), model.spec,
                     model.noise_variance, budget)


@dataclass
class ProfileCurve:
    name: str
    grid: np.ndarray
    lml: np.ndarray
    argmax: int
    interior_max: bool
    increasing: list

    @property
    def best(self):
        return float(self.grid[self.argmax])


def profile_lml(template, param_name, grid):
    """LML along one parameter (natural units) with the rest held at the
    template's values."""
    grid = np.asarray(grid, dtype=float).ravel()
    if not np.all(np.isfinite(grid)) or np.any(grid <= 0):
        raise ValueError("profile grid must be finite and positive")
    objective = _Objective(template)
    if param_name not in objective.names:
        raise KeyError(f"unknown parameter {param_name!r}; have {objective.names}")
    base = hyper_vector(template).log_values
    k = objective.names.index(param_name)
    out = np.empty(grid.size)
    for g, value in enumerate(grid):
        v = base.copy()
        v[k] = math.log(value)
        out[g] = objective.lml(v)
    argmax = int(np.argmax(out))
    steps = np.diff(out)
    return ProfileCurve(param_name, grid, out, argmax, 0 < argmax < grid.size - 1,
                        (steps > 0).tolist())


def fit_dataset(spec, data, noise_variance=0.1, **kwargs):
    """Shorthand: optimize ``spec`` on a :class:`Dataset`."""
    if not isinstance(data, Dataset):
        data = Dataset(*data)
    return optimize(GPModel(spec, noise_variance, data), **kwargs)


@dataclass
class SweepRow:
    generator: str
    draw_seed: int
    restart: int
    final_lml: float
    log_chi: float


def chi_sweep(generators, draws=3, seed=0, restarts=20, budget=2000, n=150, fit_label='SE[SE[SE]]'):
    """Fit ``fit_label`` to data drawn from each generator stack with random
    hyperparameters; one row per restart with its final LML and log chi."""
    from .compose import from_label
    from .data import gen_from_kernel
    fit_spec = from_label(fit_label)
    rows = []
    for g, gen in enumerate(generators):
        for d in range(draws):
            draw_seed = seed + 1000 * g + d
            data, _ = gen_from_kernel(gen, draw_seed, n=n)
            template = GPModel(fit_spec, 0.1, data)
            rep = optimize(template, restarts=restarts, seed=draw_seed, budget=budget)
            for r, row in enumerate(rep.per_restart):
                spec = model_from_vector(template, HyperVector(rep.best.names, row.final)).spec
                rows.append(SweepRow(gen if isinstance(gen, str) else label(gen), draw_seed,
                                     r, row.lml, math.log(chi(spec))))
    return rows
