"""Pure-numpy fallback for the rollout kernel.

Used when the compiled extension is unavailable (or forced off through
FEDLQR_FORCE_PY=1).  Same semantics as fedlqr._rollout; results agree with
the compiled path to floating-point roundoff.
"""

from __future__ import annotations

import numpy as np


def rollout_cost_batch(a_cl, w, x0, tau, guard, cap):
    """Costs with shape (S, T) for a_cl, w of shape (S, n, n) and x0 (S, T, n)."""
    a_cl = np.asarray(a_cl, dtype=float)
    w = np.asarray(w, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    S, T, n = x0.shape
    if a_cl.shape != (S, n, n) or w.shape != (S, n, n):
        raise ValueError("matrix dimensions disagree with x0 batch")
    if tau < 1:
        raise ValueError("tau must be >= 1")

    x = x0.copy()
    costs = np.zeros((S, T))
    capped = np.zeros((S, T), dtype=bool)
    guard2 = guard * guard
    for _ in range(tau):
        capped |= np.einsum("sti,sti->st", x, x) > guard2
        x[capped] = 0.0  # frozen once capped; keeps later steps finite
        costs += np.einsum("sti,sij,stj->st", x, w, x)
        x = np.einsum("sij,stj->sti", a_cl, x)
    costs[capped] = cap
    return costs
