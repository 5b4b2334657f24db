#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the scaled forward pass and the backward/smoothing pass on synthetic
emission tables at a few panel sizes, then a whole-likelihood evaluation.

Run:  python benchmarks/bench_kernels.py [--reps 5]
"""

import argparse
import time

import numpy as np

from mlar import _kernels
from mlar._config import HAVE_NUMBA


def _timeit(fn, reps):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(n, T, q, reps, rng):
    probs = rng.random((n, T, q)) + 0.05
    w_init = np.full(q, 1.0 / q)
    raw = rng.random((q, q)) + 0.1
    w_trans = raw / raw.sum(axis=1, keepdims=True)
    weights = rng.random(n)

    rows = []
    ahat, c = _kernels.forward_numpy(probs, w_init, w_trans)
    t_np_f = _timeit(lambda: _kernels.forward_numpy(probs, w_init, w_trans), reps)
    t_np_b = _timeit(lambda: _kernels.backward_numpy(probs, w_trans, ahat, c, weights), reps)
    rows.append(("numpy", t_np_f, t_np_b))

    if HAVE_NUMBA:
        _kernels.forward_numba(probs, w_init, w_trans)  # warm the jit
        _kernels.backward_numba(probs, w_trans, ahat, c, weights)
        t_nb_f = _timeit(lambda: _kernels.forward_numba(probs, w_init, w_trans), reps)
        t_nb_b = _timeit(lambda: _kernels.backward_numba(probs, w_trans, ahat, c, weights), reps)
        rows.append(("numba", t_nb_f, t_nb_b))

        a2, c2 = _kernels.forward_numba(probs, w_init, w_trans)
        g1, F1 = _kernels.backward_numpy(probs, w_trans, ahat, c, weights)
        g2, F2 = _kernels.backward_numba(probs, w_trans, a2, c2, weights)
        agree = np.allclose(ahat, a2) and np.allclose(g1, g2) and np.allclose(F1, F2)
    else:
        agree = None

    print(f"\nn={n} T={T} q={q}")
    print(f"  {'backend':8s} {'forward':>12s} {'backward':>12s}")
    for name, tf, tb in rows:
        print(f"  {name:8s} {tf * 1e3:10.2f}ms {tb * 1e3:10.2f}ms")
    if len(rows) == 2:
        print(f"  speedup  {rows[0][1] / rows[1][1]:10.2f}x {rows[0][2] / rows[1][2]:10.2f}x")
        print(f"  outputs agree: {agree}")


def bench_loglik(reps):
    from mlar import (
        ModelSpec,
        Parameters,
        ResponseFamily,
        SimControl,
        build_grid,
        simulate_dataset,
        total_loglik,
    )

    spec = ModelSpec(ResponseFamily("ordinal-logit", 5), p=2, k=3, q=61)
    params = Parameters(
        cut=[3.0, 1.0, -1.0, -3.0],
        beta=[0.5, -0.3],
        sigma=2.0,
        xi=[0.0, 2.0, -2.0],
        rho=[0.9, 0.5, 0.3],
        pi=[0.5, 0.3, 0.2],
    )
    sim = simulate_dataset(spec, params, SimControl(n=2000, T=8, seed=0))
    grid = build_grid(spec, params.rho)
    total_loglik(params, grid, sim.data, spec)  # warm
    t = _timeit(lambda: total_loglik(params, grid, sim.data, spec), reps)
    print(f"\nfull likelihood (n=2000, T=8, k=3, q=61): {t * 1e3:.1f}ms "
          f"[{'numba' if _kernels.forward is not _kernels.forward_numpy else 'numpy'} backend]")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if not HAVE_NUMBA:
        print("numba unavailable; benchmarking the numpy path only")
    for n, T, q in ((200, 8, 21), (2000, 8, 61), (7000, 8, 61)):
        bench_case(n, T, q, args.reps, rng)
    bench_loglik(args.reps)


if __name__ == "__main__":
    main()
