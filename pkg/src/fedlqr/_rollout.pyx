# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled rollout kernel: batched finite-horizon quadratic-cost trajectories.

Semantics match fedlqr._rollout_py.rollout_cost_batch exactly (up to
floating-point summation order): for each (perturbation s, trajectory j),
starting from x0[s, j], accumulate x' W[s] x over tau steps of x <- A_cl[s] x,
returning cap for any trajectory whose state norm exceeds guard.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def rollout_cost_batch(
    double[:, :, ::1] a_cl,
    double[:, :, ::1] w,
    double[:, :, ::1] x0,
    int tau,
    double guard,
    double cap,
):
    """Costs with shape (S, T) for a_cl, w of shape (S, n, n) and x0 (S, T, n)."""
    cdef Py_ssize_t S = x0.shape[0]
    cdef Py_ssize_t T = x0.shape[1]
    cdef Py_ssize_t n = x0.shape[2]
    if a_cl.shape[0] != S or w.shape[0] != S:
        raise ValueError("batch sizes of a_cl, w, x0 disagree")
    if a_cl.shape[1] != n or a_cl.shape[2] != n or w.shape[1] != n or w.shape[2] != n:
        raise ValueError("matrix dimensions disagree with state dimension")
    if tau < 1:
        raise ValueError("tau must be >= 1")

    out_arr = np.empty((S, T), dtype=np.float64)
    x_arr = np.empty(n, dtype=np.float64)
    y_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] x = x_arr
    cdef double[::1] y = y_arr

    cdef Py_ssize_t s, j, t, i, l
    cdef double total, norm2, quad, row, guard2
    guard2 = guard * guard

    for s in range(S):
        for j in range(T):
            for i in range(n):
                x[i] = x0[s, j, i]
            total = 0.0
            for t in range(tau):
                norm2 = 0.0
                for i in range(n):
                    norm2 += x[i] * x[i]
                if norm2 > guard2:
                    total = cap
                    break
                quad = 0.0
                for i in range(n):
                    row = 0.0
                    for l in range(n):
                        row += w[s, i, l] * x[l]
                    quad += x[i] * row
                total += quad
                for i in range(n):
                    row = 0.0
                    for l in range(n):
                        row += a_cl[s, i, l] * x[l]
                    y[i] = row
                for i in range(n):
                    x[i] = y[i]
            out[s, j] = total
    return out_arr
