"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 200]

Times each kernel on desk-scale inputs, then runs whole environment steps and
Adam updates in a subprocess per backend (the backend is chosen at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from coopmi.env import commons
from coopmi.env import kernels as env_kernels
from coopmi.tensor import kernels as opt_kernels

END_TO_END = """
import time, numpy as np
from coopmi.env import commons, kernels
from coopmi.tensor import ParameterSet, Adam
s = commons.reset(commons.builtin_map("commons_default"), 10, seed=0)
acts = np.random.default_rng(0).integers(0, 8, (N, 10))
t = time.perf_counter()
for a in acts:
    commons.step(s, a)
    commons.observation_indices(s)
env = (time.perf_counter() - t) / N
ps = ParameterSet()
p = ps.add("w", np.zeros(87_000))
opt = Adam(1e-3)
t = time.perf_counter()
for _ in range(N):
    p.grad[...] = 1e-3
    opt.step(ps)
adam = (time.perf_counter() - t) / N
print(kernels.BACKEND, env, adam)
"""


def per_call(fn, repeat):
    return min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat


def kernel_table(repeat):
    rng = np.random.default_rng(0)
    state = commons.reset(commons.builtin_map("commons_default"), 10, seed=0)
    codes = rng.integers(0, 7, size=(state.map.height, state.map.width)).astype(np.uint8)
    rows, cols = rng.integers(0, codes.shape[0], 10), rng.integers(0, codes.shape[1], 10)
    ors = rng.integers(0, 4, 10)
    apples = (rng.random(codes.shape) < 0.3).astype(np.uint8)
    walls = state.map.walls.astype(np.uint8)
    val, m, g = (rng.normal(size=87_000) for _ in range(3))
    v = np.abs(rng.normal(size=87_000))
    rows_out = []
    for name, be in env_kernels.backends().items():
        rows_out.append((name, "extract_views (10 agents)", per_call(lambda: be.extract_views(codes, rows, cols, ors), repeat)))
        rows_out.append((name, "neighbor_counts", per_call(lambda: be.neighbor_counts(apples), repeat)))
        rows_out.append((name, "trace_beam", per_call(lambda: be.trace_beam(walls, 5, 5, 1), repeat)))
    for name, be in opt_kernels.backends().items():
        rows_out.append((name, "adam_update (87k params)",
                         per_call(lambda: be.adam_update(val, m, v, g.copy(), 0.9, 0.999, 0.5, 0.5, 1e-9, 1e-8), repeat)))
    return rows_out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    if len(env_kernels.backends()) < 2:
        print("compiled kernels are not built; only the numpy fallback is available")
    print(f"{'backend':8s} {'kernel':28s} {'us/call':>10s}")
    for name, kernel, sec in kernel_table(args.repeat):
        print(f"{name:8s} {kernel:28s} {sec * 1e6:10.1f}")
    print()
    print(f"{'backend':8s} {'env step + views (us)':>22s} {'adam step (us)':>16s}")
    for pure in ("", "1"):
        env = dict(os.environ, COOPMI_PURE_PYTHON=pure)
        if not pure:
            env.pop("COOPMI_PURE_PYTHON")
        out = subprocess.run([sys.executable, "-c", f"N = {args.repeat}\n" + END_TO_END], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"{out[0]:8s} {float(out[1]) * 1e6:22.1f} {float(out[2]) * 1e6:16.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
