"""Time the compiled kernels against their numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Shapes mirror one training step of the default model (batch 256, 64-dim
embeddings, 50-item histories, ~1.7M Adam-managed parameters).
"""

import argparse
import timeit

import numpy as np

from drp import kernels


def cases(rng):
    n_params = 1_730_000
    value, grad = rng.normal(size=n_params), rng.normal(size=n_params)
    m, v = np.zeros(n_params), np.zeros(n_params)
    table = rng.normal(size=(20_000, 64))
    hist = rng.integers(0, 20_000, size=(256, 50)).astype(np.int32)
    lengths = rng.integers(0, 51, size=256).astype(np.int64)
    pooled = np.empty((256, 64))
    idx = rng.integers(0, 20_000, size=256).astype(np.int64)
    rows = rng.normal(size=(256, 64))
    grad_table = np.zeros_like(table)
    return {
        "adam_update (1.73M params)": lambda k: k.adam_update(value, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, 10),
        "mean_pool_forward (256x50x64)": lambda k: k.mean_pool_forward(table, hist, lengths, pooled),
        "mean_pool_backward (256x50x64)": lambda k: k.mean_pool_backward(grad_table, hist, lengths, rows),
        "scatter_add_rows (256x64)": lambda k: k.scatter_add_rows(grad_table, idx, rows),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    backends = kernels.backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy fallback is available")
    bench = cases(np.random.default_rng(0))
    header = f"{'kernel':34s}" + "".join(f"{name:>12s}" for name in backends) + "     speedup"
    print(header)
    print("-" * len(header))
    for label, fn in bench.items():
        times = {}
        for name, mod in backends.items():
            fn(mod)  # warm-up
            times[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
        row = f"{label:34s}" + "".join(f"{times[n]:10.3f}ms" for n in backends)
        if "cython" in times:
            row += f"  {times['python'] / times['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
