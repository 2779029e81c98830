"""Compiled against numpy kernels on the lagged-effect scenario.

    python benchmarks/bench_kernels.py [--sizes 300 1000] [--repeat 5]

Prints the median wall time of one profile fit (every candidate change point)
and of one full-range likelihood evaluation, per backend and sample size.
"""
import argparse
import statistics
import timeit

import numpy as np

from cpcox import ScenarioConfig, sample_dataset
from cpcox import _pykernels
from cpcox._design import build_design
from cpcox.rng import stream

try:
    from cpcox import _ckernels
except ImportError:
    _ckernels = None


def _time(fn, repeat, number):
    return statistics.median(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[300, 1000])
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args(argv)
    backends = {"numpy": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    print(f"{'n':>6} {'backend':>8} {'profile_fit ms':>15} {'side_eval us':>13}")
    for n in a.sizes:
        D = build_design(sample_dataset(ScenarioConfig.lagged_effect(n), stream(0, n)))
        split = np.arange(D.K + 1, dtype=np.intp)
        gamma = np.array([-0.7])
        base = None
        for name, k in backends.items():
            fit = _time(lambda: k.profile_fit(D.V, D.R, D.E, D.d, split, 1e-8, 50, 30, 50.0),
                        a.repeat, 3)
            ev = _time(lambda: k.side_eval(D.V, D.R, D.E, D.d, 0, D.K, gamma), a.repeat, 200)
            base = base or fit
            print(f"{n:>6} {name:>8} {fit * 1e3:>15.2f} {ev * 1e6:>13.1f}"
                  f"   (x{base / fit:.1f} vs numpy)")


if __name__ == "__main__":
    main()
