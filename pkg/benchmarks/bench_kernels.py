"""Compare the compiled and numpy sweep kernels on full time steps.

    python3 benchmarks/bench_kernels.py [--sizes 32 64 96] [--substrates 2] [--repeats 5]
"""

import argparse
import time

import numpy as np

from lodfvm import kernels
from lodfvm.grid import DensityField, GridSpec, SubstrateParams
from lodfvm.metrics import count_systems
from lodfvm.solver import StepCoefficients, step


def time_step(spec, subs, backend, repeats):
    c = StepCoefficients.build(spec, subs)
    f = DensityField(spec, np.random.default_rng(0).random(spec.n_values))
    step(f, c, backend=backend)  # warm-up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        step(f, c, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, f.data


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 96])
    ap.add_argument("--substrates", type=int, default=2)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    names = kernels.available()
    print("n,S," + ",".join(f"{n}_ms,{n}_Meq_per_s" for n in names) + (",speedup,bitwise_equal" if len(names) > 1 else ""))
    for n in args.sizes:
        spec = GridSpec.from_counts(n, n, n, args.substrates, dt=0.01)
        subs = SubstrateParams.uniform(args.substrates, 1e5, 0.1)
        eqs = count_systems(spec) * n
        cols, results = [], {}
        for name in names:
            t, data = time_step(spec, subs, kernels.get_backend(name), args.repeats)
            results[name] = (t, data)
            cols += [f"{t * 1e3:.2f}", f"{eqs / t / 1e6:.1f}"]
        if len(names) > 1:
            speedup = results["python"][0] / results["cython"][0]
            same = np.array_equal(results["python"][1], results["cython"][1])
            cols += [f"{speedup:.2f}", str(same)]
        print(f"{n},{args.substrates}," + ",".join(cols))


if __name__ == "__main__":
    main()
