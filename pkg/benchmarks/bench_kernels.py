"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run on both backends with identical inputs; the table shows
the best wall time of ``--repeat`` runs and the largest absolute difference
between the two results.
"""

import argparse
import timeit

import numpy as np

from sgd_sobolev import _pykernels, kernels

try:
    from sgd_sobolev import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    ca, va = rng.standard_normal(400), rng.standard_normal((400, 16))
    yield "gram_power_sum 400x400 w=16 k=3", lambda impl: kernels.gram_power_sum(ca, va, ca, va, 3, impl)
    cb, vb = rng.standard_normal(2000), rng.standard_normal((2000, 3))
    yield "gram_power_sum 2000x2000 w=3 k=2", lambda impl: kernels.gram_power_sum(cb, vb, cb, vb, 2, impl)
    a = rng.standard_normal((20, 8))
    v = rng.standard_normal((64, 8))
    batches = np.argsort(rng.random((500, 20)), axis=1)[:, :5]
    yield "batch_apply 500 batches x 64 terms", lambda impl: kernels.batch_apply(v, a, batches, 0.01, impl)
    state = rng.standard_normal((4000, 3))
    a3 = rng.standard_normal((5, 3))
    rows = np.argsort(rng.random((4000, 5)), axis=1)[:, :2]
    yield "rowwise_apply 4000 replicas", lambda impl: kernels.rowwise_apply(state, a3, rows, 0.1, impl)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<38}{'python ms':>11}{'compiled ms':>13}{'speedup':>9}{'max diff':>11}")
    for name, fn in cases(rng):
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:<38}{t_py:>11.2f}{'-':>13}{'-':>9}{'-':>11}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        diff = float(np.max(np.abs(np.asarray(fn(_pykernels)) - np.asarray(fn(_ckernels)))))
        print(f"{name:<38}{t_py:>11.2f}{t_c:>13.2f}{t_py / t_c:>8.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()
