"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from robsae import _backend
from robsae.model import A_MIN
from robsae.rng import replication_seed
from robsae.simulator import SimScenario, generate_replication


def cases(k, data):
    y, X, D = data.y, data.X, data.D
    beta, A = np.array([0.1, -0.9, 1.1]), 1.2
    return {
        "gamma_obj_grad (m=100)": lambda: k.gamma_obj_grad(y, X, D, beta, A, 0.3),
        "robust_moments (m=100)": lambda: k.robust_moments(y, X, D, beta, A, 0.3),
        "fit_ml": lambda: k.fit_ml(y, X, D, 1e-8, 200, 0.5, A_MIN),
        "fit_gamma (gamma=0.3)": lambda: k.fit_gamma(y, X, D, beta, A, 0.3, 1e-8, 200, 0.5, A_MIN),
        "gamma path, 101 grid points": lambda: [k.fit_gamma(y, X, D, beta, A, g, 1e-8, 200, 0.5, A_MIN)
                                                for g in np.arange(1, 101) / 100],
    }


def best_time(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scenario", default="V")
    args = ap.parse_args()
    if _backend.compiled_kernels is None:
        raise SystemExit("compiled extension is not built; run `pip install -e . --no-build-isolation`")
    data, _, _ = generate_replication(SimScenario(args.scenario), replication_seed(0, 0))
    py = cases(_backend.python_kernels, data)
    cc = cases(_backend.compiled_kernels, data)
    print(f"{'kernel':32s} {'python':>12s} {'compiled':>12s} {'speed-up':>9s}")
    for name in py:
        tp, tc = best_time(py[name], args.repeat), best_time(cc[name], args.repeat)
        print(f"{name:32s} {tp * 1e3:10.3f}ms {tc * 1e3:10.3f}ms {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
