"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Each kernel is timed on inputs shaped like those seen during a default run
(probe on 1000 x 3 representations, kurtosis on 1000 x 3 outputs, SGD on a
32 x 6 weight matrix). ``--end-to-end`` also times one full default training
run per backend in a subprocess.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hda import kernels


def _probe_inputs(rng, n=1000, d=3, hidden=16, classes=2):
    x = rng.normal(size=(n, d))
    y = rng.integers(0, classes, size=n).astype(np.int64)
    params = (rng.normal(scale=0.5, size=(d, hidden)), np.zeros(hidden),
              rng.normal(scale=0.5, size=(hidden, classes)), np.zeros(classes))
    return x, y, params


def bench_kernels(repeat: int):
    rng = np.random.default_rng(0)
    x, y, params = _probe_inputs(rng)
    out_x = rng.normal(size=(1000, 3))
    w, g = rng.normal(size=(32, 6)), rng.normal(size=(32, 6))

    def probe(impl):
        p = [a.copy() for a in params]
        kernels.probe_train(x, y, *p, epochs=200, lr=0.1, impl=impl)

    cases = {
        "probe_train (200 epochs)": (probe, 1),
        "probe_predict": (lambda impl: kernels.probe_predict(x, *params, impl=impl), 200),
        "column_kurtosis": (lambda impl: kernels.column_kurtosis(out_x, impl=impl), 500),
        "sgd_momentum_update": (lambda impl: kernels.sgd_momentum_update(
            w, g, np.zeros_like(w), 1e-3, 0.9, 5e-4, impl=impl), 5000),
    }
    impls = kernels.backends()
    header = f"{'kernel':<26}" + "".join(f"{name + ' (ms)':>16}" for name in impls)
    if len(impls) > 1:
        header += f"{'speedup':>10}"
    print(header)
    for label, (fn, number) in cases.items():
        times = {}
        for name, impl in impls.items():
            best = min(timeit.repeat(lambda: fn(impl), number=number, repeat=repeat))
            times[name] = best / number * 1e3
        row = f"{label:<26}" + "".join(f"{times[n]:>16.4f}" for n in impls)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.2f}x"
        print(row)


def bench_end_to_end():
    code = ("import time; from hda.runner import load_config, run_experiment;"
            "t=time.perf_counter(); run_experiment(load_config('default'), write_files=False);"
            "print(time.perf_counter()-t)")
    print()
    for name, flag in (("cython", "0"), ("python", "1")):
        env = dict(os.environ, HDA_PURE_PYTHON=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        print(f"default run, {name:<7} backend: {float(res.stdout.strip()):.2f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    bench_kernels(args.repeat)
    if args.end_to_end:
        bench_end_to_end()


if __name__ == "__main__":
    main()
