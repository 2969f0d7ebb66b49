"""Compare the compiled and numpy kernels on single-trial calls and a short run.

    python3 benchmarks/bench_kernels.py [--calls N] [--steps N]
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from smm import _kernels_py
from smm.model import init_params

try:
    from smm import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def time_calls(fn, n: int) -> float:
    t0 = time.perf_counter()
    for _ in range(n):
        fn()
    return (time.perf_counter() - t0) / n


def bench_backend(mod, calls: int) -> dict[str, float]:
    params = init_params(0)
    arrays = params.arrays()
    rng = np.random.default_rng(0)
    probs_us = time_calls(lambda: mod.probs(*arrays, 2, 3, 1), calls) * 1e6
    ws = [a.copy() for a in arrays]
    idx = rng.integers(0, 5, size=(calls, 2))
    it = iter(idx)

    def step():
        a, b = next(it)
        mod.train_step(*ws, int(a), int(b), 1, int(a + b + 1), 0.025)

    step_us = time_calls(step, calls) * 1e6
    return {"probs_us": probs_us, "train_step_us": step_us}


def time_run(steps: int, pure: bool) -> float:
    env = dict(os.environ, SMM_PURE_PYTHON="1" if pure else "0")
    code = ("import time,tempfile;from smm.config import RunConfig;from smm.trainer import run_experiment;"
            f"d=tempfile.mkdtemp();t=time.perf_counter();run_experiment(RunConfig(total_steps={steps},out_dir=d));"
            "print(time.perf_counter()-t)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--calls", type=int, default=20000)
    p.add_argument("--steps", type=int, default=10000)
    args = p.parse_args(argv)
    backends = [("python", _kernels_py)] + ([("cython", _kernels_c)] if _kernels_c else [])
    results = {name: bench_backend(mod, args.calls) for name, mod in backends}
    print(f"{'backend':<8} {'probs (us)':>11} {'train_step (us)':>16}")
    for name, r in results.items():
        print(f"{name:<8} {r['probs_us']:>11.2f} {r['train_step_us']:>16.2f}")
    if _kernels_c is None:
        print("compiled kernels not built; only the numpy backend was timed")
        return 0
    py, cy = results["python"], results["cython"]
    print(f"speedup  {py['probs_us'] / cy['probs_us']:>11.1f}x {py['train_step_us'] / cy['train_step_us']:>15.1f}x")
    t_py, t_cy = time_run(args.steps, True), time_run(args.steps, False)
    print(f"{args.steps}-step run: python {t_py:.2f} s, cython {t_cy:.2f} s ({t_py / t_cy:.1f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
