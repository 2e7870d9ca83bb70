"""Model-free gradient oracle: one-point smoothing over policy perturbations.

Each estimate perturbs the gain on the Frobenius sphere of radius r, prices
every perturbed policy by finite rollouts (or by the exact cost in
exact-oracle mode), and averages (d / r^2) J_hat_s U_s over perturbations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fedlqr import kernels
from fedlqr.lqr import (
    CostMatrices,
    LtiSystem,
    closed_loop,
    gain_shape,
)


@dataclass(frozen=True)
class RolloutParams:
    """Sampling configuration for one gradient estimate.

    n_s perturbations, n_traj rollouts per perturbation, tau steps per
    rollout, smoothing radius in Frobenius norm.  x0_std scales the
    per-coordinate standard normal initial state.  A trajectory whose state
    norm passes `guard` is priced at `cost_cap` instead of its running sum;
    exact-oracle mode applies the same cap to destabilizing perturbations.
    """

    n_s: int = 5
    n_traj: int = 1
    tau: int = 15
    radius: float = 0.1
    x0_std: float = 1.0
    use_exact_cost: bool = False
    guard: float = 1e8
    cost_cap: float = 1e12

    def __post_init__(self):
        if self.n_s < 1 or self.n_traj < 1 or self.tau < 1:
            raise ValueError("n_s, n_traj and tau must all be >= 1")
        if self.radius <= 0:
            raise ValueError("smoothing radius must be positive")
        if self.x0_std <= 0:
            raise ValueError("x0_std must be positive")


@dataclass
class ZoEstimate:
    gradient: np.ndarray
    samples_used: int
    perturbed_costs: list[float] = field(default_factory=list)


def sample_perturbation(
    dims: tuple[int, int], radius: float, rng: np.random.Generator
) -> np.ndarray:
    """Uniform draw on the Frobenius sphere of the given radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    while True:
        u = rng.standard_normal(dims)
        norm = np.linalg.norm(u)
        if norm > 0:
            return (radius / norm) * u


def rollout_cost(
    sys: LtiSystem,
    cost: CostMatrices,
    k: np.ndarray,
    tau: int,
    rng: np.random.Generator,
    x0_std: float = 1.0,
    guard: float = 1e8,
    cost_cap: float = 1e12,
) -> float:
    """One finite-horizon trajectory cost under u = -K x.

    Draws x0 with independent N(0, x0_std^2) coordinates, accumulates
    x'Qx + u'Ru over tau steps, and returns cost_cap if the state ever
    exceeds the guard norm.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    k = np.asarray(k, dtype=float)
    a_cl = closed_loop(sys, k)
    w = cost.q + k.T @ cost.r @ k
    x0 = x0_std * rng.standard_normal((1, 1, sys.n_x))
    costs = kernels.rollout_cost_batch(
        a_cl[None].copy(), w[None].copy(), x0, int(tau), guard, cost_cap
    )
    return float(costs[0, 0])


def estimate_gradient(
    sys: LtiSystem,
    cost: CostMatrices,
    k: np.ndarray,
    params: RolloutParams,
    rng: np.random.Generator,
) -> ZoEstimate:
    """One-point zeroth-order gradient estimate at k.

    For each perturbation U_s: K_hat = k + U_s, J_hat_s is the mean of
    n_traj rollout costs at K_hat (or the exact cost in exact-oracle mode),
    and the estimate is (1/n_s) sum_s (d / r^2) J_hat_s U_s with
    d = n_u * n_x.  Destabilizing perturbations are tolerated through the
    cost cap, so no stability precondition is placed on k itself.
    """
    k = np.asarray(k, dtype=float)
    n_u, n_x = gain_shape(sys)
    if k.shape != (n_u, n_x):
        raise ValueError(f"gain shape {k.shape} incompatible with system ({n_u}, {n_x})")
    d = n_u * n_x
    r = params.radius

    u = rng.standard_normal((params.n_s, n_u, n_x))
    norms = np.linalg.norm(u.reshape(params.n_s, -1), axis=1)
    norms[norms == 0.0] = 1.0  # zero draw has probability zero; avoid 0/0
    u *= (r / norms)[:, None, None]
    k_hat = k[None] + u

    if params.use_exact_cost:
        j_hat = _batched_exact_costs(sys, cost, k_hat, params.x0_std, params.cost_cap)
        samples = params.n_s
    else:
        a_cl = sys.a[None] - np.einsum("ij,sjk->sik", sys.b, k_hat)
        w = cost.q[None] + np.einsum("sji,jk,skl->sil", k_hat, cost.r, k_hat)
        x0 = params.x0_std * rng.standard_normal((params.n_s, params.n_traj, n_x))
        costs = kernels.rollout_cost_batch(
            np.ascontiguousarray(a_cl),
            np.ascontiguousarray(w),
            x0,
            params.tau,
            params.guard,
            params.cost_cap,
        )
        j_hat = costs.mean(axis=1)
        samples = params.n_s * params.n_traj

    gradient = (d / r**2) * np.einsum("s,sij->ij", j_hat, u) / params.n_s
    return ZoEstimate(gradient=gradient, samples_used=samples, perturbed_costs=j_hat.tolist())


def _batched_exact_costs(
    sys: LtiSystem,
    cost: CostMatrices,
    k_batch: np.ndarray,
    x0_std: float,
    cost_cap: float,
) -> np.ndarray:
    """Infinite-horizon costs trace(P_K) x0_std^2 for a batch of gains.

    Vectorizes the Kronecker Lyapunov solve across the batch; destabilizing
    gains get the cap, matching the rollout path's divergence guard.
    """
    n = sys.n_x
    a_cl = sys.a[None] - np.einsum("ij,sjk->sik", sys.b, k_batch)
    w = cost.q[None] + np.einsum("sji,jk,skl->sil", k_batch, cost.r, k_batch)
    stable = np.abs(np.linalg.eigvals(a_cl)).max(axis=1) < 1.0
    out = np.full(k_batch.shape[0], cost_cap)
    if np.any(stable):
        at = a_cl[stable].transpose(0, 2, 1)
        lhs = np.eye(n * n)[None] - np.einsum("sij,skl->sikjl", at, at).reshape(-1, n * n, n * n)
        vec_p = np.linalg.solve(lhs, w[stable].reshape(-1, n * n, 1))[..., 0]
        diag_idx = np.arange(n) * (n + 1)
        out[stable] = x0_std**2 * vec_p[:, diag_idx].sum(axis=1)
    return out
