"""Exact discrete-time LQR machinery.

Stability tests, Lyapunov/Riccati solvers, closed-form infinite-horizon
costs and policy gradients.  Everything is deterministic dense linear
algebra on small matrices; these routines are the ground truth against
which all model-free estimates are checked.

Conventions: dynamics ``x+ = A x + B u`` with state feedback ``u = -K x``;
cost weight per step ``x'Qx + u'Ru``; the initial state is zero-mean with
covariance ``sigma0`` (identity by default), so the exact cost of a
stabilizing gain is ``trace(P_K sigma0)`` for the closed-loop Lyapunov
solution ``P_K``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnstableSystemError(RuntimeError):
    """Closed loop is not Schur stable where stability is required."""


class ConvergenceError(RuntimeError):
    """Iterative solver failed to meet its residual contract."""


def _as_square(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _require_symmetric(m: np.ndarray, name: str, tol: float = 1e-9) -> np.ndarray:
    if np.linalg.norm(m - m.T) > tol * (1.0 + np.linalg.norm(m)):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class LtiSystem:
    """One agent's (A, B) pair."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = _as_square(self.a, "a")
        b = np.asarray(self.b, dtype=float)
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise ValueError(
                f"b must have {a.shape[0]} rows to match a, got shape {b.shape}"
            )
        if not np.all(np.isfinite(b)):
            raise ValueError("b has non-finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n_x(self) -> int:
        return self.a.shape[0]

    @property
    def n_u(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True)
class CostMatrices:
    """Quadratic stage-cost weights: q >= 0 on the state, r > 0 on the input."""

    q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        q = _require_symmetric(_as_square(self.q, "q"), "q")
        r = _require_symmetric(_as_square(self.r, "r"), "r")
        if np.linalg.eigvalsh(r).min() <= 0:
            raise ValueError("r must be positive definite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)


def gain_shape(sys: LtiSystem) -> tuple[int, int]:
    return (sys.n_u, sys.n_x)


def closed_loop(sys: LtiSystem, k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.shape != gain_shape(sys):
        raise ValueError(f"gain shape {k.shape} incompatible with system {gain_shape(sys)}")
    return sys.a - sys.b @ k


def spectral_radius(m: np.ndarray) -> float:
    """max |eigenvalue| of a square matrix."""
    m = _as_square(m, "m")
    return float(np.abs(np.linalg.eigvals(m)).max())


def is_schur_stable(sys: LtiSystem, k: np.ndarray, margin: float = 1e-9) -> bool:
    """True iff rho(A - B K) < 1 - margin.

    The margin keeps the answer steady under floating-point eigenvalue
    jitter right at the unit circle.
    """
    return spectral_radius(closed_loop(sys, k)) < 1.0 - margin


def solve_dlyap(a_cl: np.ndarray, w: np.ndarray, kron_limit: int = 8) -> np.ndarray:
    """Solve P = a_cl' P a_cl + w for Schur-stable a_cl and symmetric w.

    Small systems (n <= kron_limit) use the Kronecker vectorization solve;
    larger ones use squared-operator doubling.  The result is symmetrized
    and must satisfy ||P - a_cl' P a_cl - w||_F <= 1e-10 (1 + ||P||_F).
    """
    a_cl = _as_square(a_cl, "a_cl")
    w = _require_symmetric(_as_square(w, "w"), "w")
    if spectral_radius(a_cl) >= 1.0:
        raise UnstableSystemError("a_cl is not Schur stable; Lyapunov sum diverges")
    n = a_cl.shape[0]
    if n <= kron_limit:
        lhs = np.eye(n * n) - np.kron(a_cl.T, a_cl.T)
        p = np.linalg.solve(lhs, w.reshape(-1)).reshape(n, n)
    else:
        # doubling: after j steps p = sum_{i<2^j} (A')^i w A^i
        p = w.copy()
        m = a_cl.copy()
        for _ in range(128):
            step = m.T @ p @ m
            p_next = p + step
            m = m @ m
            if np.linalg.norm(step) <= 1e-16 * (1.0 + np.linalg.norm(p_next)):
                p = p_next
                break
            p = p_next
    p = 0.5 * (p + p.T)
    resid = np.linalg.norm(p - a_cl.T @ p @ a_cl - w)
    if resid > 1e-10 * (1.0 + np.linalg.norm(p)):
        raise ConvergenceError(f"Lyapunov residual {resid:.3e} exceeds contract")
    return p


def solve_dare(
    sys: LtiSystem,
    cost: CostMatrices,
    tol: float = 1e-12,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Fixed-point iteration for the discrete algebraic Riccati equation.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA from P = Q until the
    update stalls below tol (relative), then verifies the residual is within
    1e-9 (1 + ||P||_F).
    """
    a, b, q, r = sys.a, sys.b, cost.q, cost.r
    p = q.copy()
    for _ in range(max_iter):
        bpa = b.T @ p @ a
        p_next = q + a.T @ p @ a - bpa.T @ np.linalg.solve(r + b.T @ p @ b, bpa)
        p_next = 0.5 * (p_next + p_next.T)
        if np.linalg.norm(p_next - p) <= tol * (1.0 + np.linalg.norm(p_next)):
            p = p_next
            break
        p = p_next
    else:
        raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} steps")
    bpa = b.T @ p @ a
    resid = np.linalg.norm(p - (q + a.T @ p @ a - bpa.T @ np.linalg.solve(r + b.T @ p @ b, bpa)))
    if resid > 1e-9 * (1.0 + np.linalg.norm(p)):
        raise ConvergenceError(f"Riccati residual {resid:.3e} exceeds contract")
    return p


def optimal_gain(sys: LtiSystem, cost: CostMatrices) -> np.ndarray:
    """K* = (R + B'PB)^-1 B'PA with P from solve_dare."""
    p = solve_dare(sys, cost)
    return np.linalg.solve(cost.r + sys.b.T @ p @ sys.b, sys.b.T @ p @ sys.a)


def _default_sigma0(sys: LtiSystem, sigma0) -> np.ndarray:
    if sigma0 is None:
        return np.eye(sys.n_x)
    sigma0 = _require_symmetric(_as_square(sigma0, "sigma0"), "sigma0")
    return sigma0


def exact_cost(
    sys: LtiSystem,
    cost: CostMatrices,
    k: np.ndarray,
    sigma0: np.ndarray | None = None,
) -> float:
    """Infinite-horizon cost trace(P_K sigma0) of a stabilizing gain."""
    k = np.asarray(k, dtype=float)
    a_cl = closed_loop(sys, k)
    if spectral_radius(a_cl) >= 1.0:
        raise UnstableSystemError("gain does not stabilize the system; cost is infinite")
    sigma0 = _default_sigma0(sys, sigma0)
    p = solve_dlyap(a_cl, cost.q + k.T @ cost.r @ k)
    return float(np.trace(p @ sigma0))


def cost_and_gradient(
    sys: LtiSystem,
    cost: CostMatrices,
    k: np.ndarray,
    sigma0: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Exact cost and its gradient with respect to the gain, in one pass.

    Gradient: 2 ((R + B'P_K B) K - B'P_K A) Sigma_K, where Sigma_K solves
    Sigma = sigma0 + A_cl Sigma A_cl'.
    """
    k = np.asarray(k, dtype=float)
    a_cl = closed_loop(sys, k)
    if spectral_radius(a_cl) >= 1.0:
        raise UnstableSystemError("gain does not stabilize the system")
    sigma0 = _default_sigma0(sys, sigma0)
    p = solve_dlyap(a_cl, cost.q + k.T @ cost.r @ k)
    sigma_k = solve_dlyap(a_cl.T, sigma0)
    grad = 2.0 * ((cost.r + sys.b.T @ p @ sys.b) @ k - sys.b.T @ p @ sys.a) @ sigma_k
    return float(np.trace(p @ sigma0)), grad


def exact_policy_gradient(
    sys: LtiSystem,
    cost: CostMatrices,
    k: np.ndarray,
    sigma0: np.ndarray | None = None,
) -> np.ndarray:
    return cost_and_gradient(sys, cost, k, sigma0)[1]
