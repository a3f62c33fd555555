"""
Numba against pure-numpy timings for the hot loops.

    python benchmarks/bench_backends.py [--repeat 5]

Cases: Gram assembly of a three-layer stack, one LML evaluation (the
optimizer inner loop), and ancestral sampling of a two-layer stack. Each is
run once per backend to warm up (JIT compilation excluded), then timed as
the best of ``--repeat`` runs. Outputs of the two backends are compared too
(second-moment matrices for the sampler).
"""

import argparse
import time

import numpy as np

from dgpkern import _accel
from dgpkern._chain import Chain, cross_cov
from dgpkern.compose import from_label
from dgpkern.gp import lml_from_chain
from dgpkern.moments import ancestral_sample


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def second_moments(spec, X, n=20_000):
    f = ancestral_sample(spec, X, n, 1)
    return f.T @ f / n


def cases():
    rng = np.random.default_rng(0)
    chain3 = Chain.from_spec(from_label('SE[SE[SE]]'))
    X500 = np.sort(rng.uniform(0, 10, 500))[:, None]
    X160 = X500[::3][:160]
    y160 = np.sin(X160[:, 0])
    spec2 = from_label('SE[SE]')
    X8 = np.linspace(0, 3, 8)
    return {
        'gram SE[SE[SE]] N=500': lambda: cross_cov(chain3, X500),
        'lml SE[SE[SE]] N=160': lambda: lml_from_chain(chain3, X160, y160, 0.1),
        # per-replicate Gram matrices are ill-conditioned, so the two backends'
        # last-digit exp differences show up in single draws; compare moments
        'ancestral SE[SE] N=8 n=20000': lambda: second_moments(spec2, X8),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split('\n\n')[0])
    ap.add_argument('--repeat', type=int, default=5)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    previous = _accel.backend()
    try:
        print(f"{'case':32s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s} {'max |diff|':>11s}")
        for name, fn in cases().items():
            _accel.set_backend('numba')
            t_nb, out_nb = best_time(fn, args.repeat), fn()
            _accel.set_backend('numpy')
            t_np, out_np = best_time(fn, args.repeat), fn()
            diff = float(np.max(np.abs(np.asarray(out_nb) - np.asarray(out_np))))
            print(f"{name:32s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f} {diff:11.3g}")
    finally:
        _accel.set_backend(previous)


if __name__ == '__main__':
    main()
