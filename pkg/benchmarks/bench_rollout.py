"""Benchmark the compiled rollout kernel against the numpy fallback.

Two regimes matter: the per-agent call pattern of a protocol round (tiny
batches, called constantly) and bulk Monte Carlo batches (consistency
tests, sweeps).  Run as:

    python benchmarks/bench_rollout.py
"""

from __future__ import annotations

import time

import numpy as np

from fedlqr import _rollout_py
from fedlqr.rng import spawn_generator

try:
    from fedlqr import _rollout

    HAVE_COMPILED = True
except ImportError:
    _rollout = None
    HAVE_COMPILED = False


def make_batch(rng, s, t, n=3, rho=0.7):
    a_cl = rng.standard_normal((s, n, n))
    a_cl *= rho / np.abs(np.linalg.eigvals(a_cl)).max(axis=1)[:, None, None]
    w = np.stack([h @ h.T + np.eye(n) for h in rng.standard_normal((s, n, n))])
    x0 = rng.standard_normal((s, t, n))
    return np.ascontiguousarray(a_cl), np.ascontiguousarray(w), x0


def time_backend(fn, batches, tau, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for a_cl, w, x0 in batches:
            fn(a_cl, w, x0, tau, 1e8, 1e12)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    rng = spawn_generator(20_250_810)
    cases = [
        ("protocol round (800 calls, S=5, T=1, tau=15)",
         [make_batch(rng, 5, 1) for _ in range(800)], 15, 5),
        ("bulk batch (1 call, S=20000, T=1, tau=15)",
         [make_batch(rng, 20_000, 1)], 15, 3),
        ("long horizon (1 call, S=2000, T=4, tau=300)",
         [make_batch(rng, 2_000, 4)], 300, 3),
    ]
    print(f"compiled extension available: {HAVE_COMPILED}")
    for label, batches, tau, repeats in cases:
        t_py = time_backend(_rollout_py.rollout_cost_batch, batches, tau, repeats)
        line = f"{label}\n  python  : {t_py * 1e3:8.1f} ms"
        if HAVE_COMPILED:
            t_c = time_backend(_rollout.rollout_cost_batch, batches, tau, repeats)
            line += f"\n  compiled: {t_c * 1e3:8.1f} ms   ({t_py / t_c:5.1f}x)"
            worst = 0.0
            for a_cl, w, x0 in batches:
                c = _rollout.rollout_cost_batch(a_cl, w, x0, tau, 1e8, 1e12)
                p = _rollout_py.rollout_cost_batch(a_cl, w, x0, tau, 1e8, 1e12)
                scale = np.maximum(1.0, np.abs(p))
                worst = max(worst, float(np.max(np.abs(c - p) / scale)))
            line += f"   max rel deviation {worst:.2e}"
            assert worst < 1e-12, "backends disagree beyond roundoff"
        print(line)


if __name__ == "__main__":
    main()
