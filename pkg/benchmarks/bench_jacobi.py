"""Timing comparison of the two Jacobi eigensolver backends.

Runs the same cyclic-sweep protocol sym_eig uses on random symmetric
matrices, once with the compiled extension and once with the pure-Python
fallback, and checks the outputs agree bit for bit.

    python3 benchmarks/bench_jacobi.py --sizes 32,64,128,256 --repeats 3
"""

import argparse
import importlib
import math
import time

import numpy as np

from gsplab.numerics import JACOBI_MAX_SWEEPS, JACOBI_OFFDIAG_TOL, Rng


def load_backends():
    backends = []
    try:
        backends.append(("cython", importlib.import_module("gsplab._jacobi")))
    except ImportError:
        print("compiled extension not importable; timing the fallback only")
    backends.append(("python", importlib.import_module("gsplab._jacobi_py")))
    return backends


def run_once(impl, matrix):
    work = np.array(matrix, dtype=np.float64, order="C", copy=True)
    vecs = np.eye(work.shape[0], dtype=np.float64, order="C")
    target = JACOBI_OFFDIAG_TOL * math.sqrt(float(np.sum(work * work)))
    start = time.perf_counter()
    sweeps = int(impl.jacobi_sweeps(work, vecs, target, JACOBI_MAX_SWEEPS))
    elapsed = time.perf_counter() - start
    return elapsed, sweeps, work, vecs


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="32,64,128,256",
                        help="comma-separated matrix sizes")
    parser.add_argument("--repeats", type=int, default=3,
                        help="repeats per size; best time is reported")
    parser.add_argument("--seed", type=int, default=20240817)
    args = parser.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",") if s]

    backends = load_backends()
    rng = Rng(args.seed)
    header = f"{'n':>6} " + "".join(f"{name + ' (ms)':>14}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10} {'identical':>10}"
    print(header)
    for n in sizes:
        raw = rng.spawn(n).normal((n, n))
        matrix = 0.5 * (raw + raw.T)
        line = f"{n:>6} "
        results = []
        for name, impl in backends:
            best = math.inf
            outcome = None
            for _ in range(args.repeats):
                elapsed, sweeps, work, vecs = run_once(impl, matrix)
                if elapsed < best:
                    best = elapsed
                    outcome = (sweeps, work, vecs)
            results.append((best, outcome))
            line += f"{best * 1e3:>14.2f}"
        if len(results) == 2:
            (t_fast, out_fast), (t_py, out_py) = results
            same = (out_fast[0] == out_py[0]
                    and np.array_equal(out_fast[1], out_py[1])
                    and np.array_equal(out_fast[2], out_py[2]))
            line += f"{t_py / t_fast:>9.1f}x {'yes' if same else 'NO':>10}"
            if not same:
                raise SystemExit(f"backend outputs differ at n={n}")
        print(line)


if __name__ == "__main__":
    main()
