"""Compare the compiled and numpy segment kernels, alone and inside a training epoch.

    python benchmarks/bench_kernels.py [--repeat 5] [--epochs 5]

The epoch timing runs in subprocesses because the backend is fixed at import.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from omnigraph.core import kernels

EPOCH_SCRIPT = """
import json, time
from omnigraph.config import RunConfig
from omnigraph.core import kernels
from omnigraph.data import generate_synthetic
from omnigraph.training import train_model
data = generate_synthetic(60, seed=0)
cfg = RunConfig(d=32, heads=4, patience={epochs}, seed=0)
start = time.perf_counter()
train_model(cfg, data[:50], data[50:], seed=0, epochs={epochs})
print(json.dumps({{"backend": kernels.BACKEND, "seconds": time.perf_counter() - start}}))
"""


def bench_kernel(name, fn, impls, repeat, rows, width, buckets):
    rng = np.random.default_rng(0)
    index = rng.integers(0, buckets, size=rows)
    values = rng.normal(size=(rows, width))
    out = {}
    for impl_name, impl in impls.items():
        t = min(timeit.repeat(lambda: fn(index, values, buckets, impl=impl), number=20, repeat=repeat)) / 20
        out[impl_name] = t
    return out


def bench_epoch(epochs, pure):
    env = dict(os.environ, OMNIGRAPH_PURE_PYTHON="1" if pure else "0")
    res = subprocess.run([sys.executable, "-c", EPOCH_SCRIPT.format(epochs=epochs)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--epochs", type=int, default=5)
    args = parser.parse_args()
    impls = kernels.implementations()
    if "cython" not in impls:
        print("compiled kernels not built; only the numpy backend is available")
    for rows, width, buckets in ((2_000, 4, 200), (50_000, 16, 5_000)):
        for name, fn in (("scatter_add", kernels.scatter_add), ("segment_max", kernels.segment_max)):
            t = bench_kernel(name, fn, impls, args.repeat, rows, width, buckets)
            line = "  ".join(f"{k} {v * 1e6:9.1f} us" for k, v in t.items())
            ratio = f"  speedup {t['python'] / t['cython']:.1f}x" if "cython" in t else ""
            print(f"{name:12s} rows={rows:<6d} width={width:<3d} {line}{ratio}")
    runs = [bench_epoch(args.epochs, pure=True)]
    if "cython" in impls:
        runs.append(bench_epoch(args.epochs, pure=False))
    for r in runs:
        print(f"train {args.epochs} epochs  {r['backend']:7s} {r['seconds']:.2f} s")
    if len(runs) == 2:
        print(f"train speedup {runs[0]['seconds'] / runs[1]['seconds']:.2f}x")


if __name__ == "__main__":
    main()
