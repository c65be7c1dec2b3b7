"""Compare the compiled tree kernels against the numpy fallback.

Runs identical training and prediction workloads through both backends,
checks that outputs match bit for bit, and reports wall-clock medians.

    python3 benchmarks/bench_kernels.py [--rows 20000] [--trees 30] [--repeat 5]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from fmekit import kernels
from fmekit.dataset import ColumnKind, Dataset
from fmekit.predictor import CartOptions, ForestOptions, train_cart, train_forest


def make_data(rows: int, seed: int = 11) -> Dataset:
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-3.0, 3.0, rows)
    x2 = rng.normal(0.0, 2.0, rows)
    x3 = rng.uniform(0.0, 1.0, rows)
    cat = rng.choice(["a", "b", "c", "d"], rows)
    bump = np.where(cat == "a", 2.0, np.where(cat == "b", -1.0, 0.0))
    y = np.sin(x1) * 3.0 + x2 * x2 * 0.5 + bump + rng.normal(0.0, 0.3, rows)
    return Dataset(
        "bench",
        [
            ("x1", ColumnKind.NUMERIC, x1),
            ("x2", ColumnKind.NUMERIC, x2),
            ("x3", ColumnKind.NUMERIC, x3),
            ("cat", ColumnKind.CATEGORICAL, list(cat)),
            ("y", ColumnKind.NUMERIC, y),
        ],
        target="y",
    )


def use_backend(module) -> None:
    kernels.best_split_pos = module.best_split_pos
    kernels.tree_apply = module.tree_apply


def timed(fn, repeat: int):
    times = []
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return result, statistics.median(times)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--trees", type=int, default=30)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = kernels.available_backends()
    print(f"active backend: {kernels.BACKEND}; available: {sorted(backends)}")
    data = make_data(args.rows)
    probe = data.columns_mapping(["x1", "x2", "x3", "cat"])

    rows = []
    outputs = {}
    original = (kernels.best_split_pos, kernels.tree_apply)
    try:
        for name in sorted(backends):
            use_backend(backends[name])
            cart, t_cart = timed(
                lambda: train_cart(data, "y", CartOptions(min_node_size=20)),
                args.repeat,
            )
            forest, t_forest = timed(
                lambda: train_forest(
                    data, "y",
                    ForestOptions(n_trees=args.trees, seed=7, min_node_size=20),
                ),
                args.repeat,
            )
            _, t_pred = timed(lambda: forest.predict_batch(probe), args.repeat)
            outputs[name] = (
                cart.predict_batch(probe),
                forest.predict_batch(probe),
            )
            rows.append((name, t_cart, t_forest, t_pred))
    finally:
        kernels.best_split_pos, kernels.tree_apply = original

    print(f"\n{'backend':<10} {'cart fit':>10} {'forest fit':>11} {'predict':>10}")
    for name, t_cart, t_forest, t_pred in rows:
        print(f"{name:<10} {t_cart:>9.3f}s {t_forest:>10.3f}s {t_pred:>9.3f}s")

    if len(rows) == 2:
        names = [r[0] for r in rows]
        a, b = outputs[names[0]], outputs[names[1]]
        same = all(np.array_equal(x, y) for x, y in zip(a, b))
        print(f"\noutputs bit-identical across backends: {same}")
        base = {n: t for n, t, _, _ in rows}
        fit = {n: t for n, _, t, _ in rows}
        if "python" in base and "compiled" in base:
            print(f"cart fit speedup:   {base['python'] / base['compiled']:.1f}x")
            print(f"forest fit speedup: {fit['python'] / fit['compiled']:.1f}x")
        if not same:
            return 1
    else:
        print("\ncompiled backend not built; nothing to compare")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
