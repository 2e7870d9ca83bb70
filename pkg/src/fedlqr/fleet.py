"""Heterogeneous agent population around a fixed nominal plant.

Agent 1 is the unperturbed nominal; agents 2..M perturb it by
A + gamma1 Z1 and B + gamma2 Z2 with gamma ~ U(0, eps), redrawing any agent
the shared initial gain fails to stabilize with margin.  Both masks have
unit spectral norm, so ||A_n - A||_2 <= eps1 and ||B_n - B||_2 <= eps2 hold
by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from fedlqr.lqr import CostMatrices, LtiSystem, closed_loop, spectral_radius

NOMINAL_A = np.array(
    [
        [1.20, 0.50, 0.40],
        [0.01, 0.75, 0.30],
        [0.10, 0.02, 1.50],
    ]
)
NOMINAL_B = np.eye(3)
COST_Q = 2.0 * np.eye(3)
COST_R = 0.5 * np.eye(3)
INITIAL_GAIN_SCALE = 1.62


class FleetGenerationError(RuntimeError):
    """Retry cap exceeded: requested heterogeneity too large for the gain."""


@dataclass(frozen=True)
class HeterogeneityMasks:
    """Fixed perturbation directions for A and B, unit spectral norm each.

    The A mask heats the plant; the B mask weakens actuation (negative), so
    both perturbations reduce the closed-loop stability margin and larger
    eps is genuinely harder.  A same-sign B mask would add control
    authority and partially cancel the A perturbation at the initial gain.
    """

    z1: np.ndarray = field(default_factory=lambda: np.ones((3, 3)) / 3.0)
    z2: np.ndarray = field(default_factory=lambda: -np.ones((3, 3)) / 3.0)


@dataclass
class Fleet:
    systems: list[LtiSystem]
    cost: CostMatrices
    nominal: LtiSystem
    eps1: float
    eps2: float

    @property
    def size(self) -> int:
        return len(self.systems)

    def to_json(self) -> str:
        def mat(m):
            return {"rows": m.shape[0], "cols": m.shape[1], "entries": m.ravel().tolist()}

        payload = {
            "eps1": self.eps1,
            "eps2": self.eps2,
            "cost": {"q": mat(self.cost.q), "r": mat(self.cost.r)},
            "nominal": {"a": mat(self.nominal.a), "b": mat(self.nominal.b)},
            "systems": [{"a": mat(s.a), "b": mat(s.b)} for s in self.systems],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Fleet":
        def mat(obj):
            return np.array(obj["entries"], dtype=float).reshape(obj["rows"], obj["cols"])

        payload = json.loads(text)
        return cls(
            systems=[LtiSystem(mat(s["a"]), mat(s["b"])) for s in payload["systems"]],
            cost=CostMatrices(mat(payload["cost"]["q"]), mat(payload["cost"]["r"])),
            nominal=LtiSystem(mat(payload["nominal"]["a"]), mat(payload["nominal"]["b"])),
            eps1=payload["eps1"],
            eps2=payload["eps2"],
        )


def nominal_system() -> tuple[LtiSystem, CostMatrices, np.ndarray]:
    """The reference plant, cost weights and initial stabilizing gain."""
    sys = LtiSystem(NOMINAL_A.copy(), NOMINAL_B.copy())
    cost = CostMatrices(COST_Q.copy(), COST_R.copy())
    k0 = INITIAL_GAIN_SCALE * np.eye(3)
    return sys, cost, k0


def generate_fleet(
    m: int,
    eps1: float,
    eps2: float,
    masks: HeterogeneityMasks | None = None,
    rng: np.random.Generator | None = None,
    k0: np.ndarray | None = None,
    stability_margin: float = 0.02,
    max_retries: int = 1000,
) -> Fleet:
    """Draw an M-agent fleet; every member is stabilized by k0 with margin.

    Redraws (up to max_retries per agent) any draw with
    rho(A - B k0) >= 1 - stability_margin, so a jointly stabilizing initial
    gain holds by construction rather than by luck.
    """
    if m < 1:
        raise ValueError("fleet size must be >= 1")
    if eps1 < 0 or eps2 < 0:
        raise ValueError("heterogeneity levels must be nonnegative")
    nominal, cost, default_k0 = nominal_system()
    masks = masks or HeterogeneityMasks()
    k0 = default_k0 if k0 is None else np.asarray(k0, dtype=float)
    rng = rng or np.random.default_rng()

    if spectral_radius(closed_loop(nominal, k0)) >= 1.0 - stability_margin:
        raise FleetGenerationError("initial gain does not stabilize the nominal system")

    systems = [nominal]
    for _ in range(1, m):
        for _ in range(max_retries):
            gamma1 = rng.uniform(0.0, eps1) if eps1 > 0 else 0.0
            gamma2 = rng.uniform(0.0, eps2) if eps2 > 0 else 0.0
            candidate = LtiSystem(nominal.a + gamma1 * masks.z1, nominal.b + gamma2 * masks.z2)
            if spectral_radius(closed_loop(candidate, k0)) < 1.0 - stability_margin:
                systems.append(candidate)
                break
        else:
            raise FleetGenerationError(
                f"no stabilizable draw within {max_retries} retries at eps=({eps1}, {eps2})"
            )
    return Fleet(systems=systems, cost=cost, nominal=nominal, eps1=eps1, eps2=eps2)


def heterogeneity_stats(gradients: list[np.ndarray]) -> tuple[float, float]:
    """Tight empirical dispersion of a gradient batch around its mean.

    Returns (sigma, b): root mean squared deviation and max deviation in
    Frobenius norm.
    """
    if not gradients:
        raise ValueError("gradient list is empty")
    stack = np.stack([np.asarray(g, dtype=float) for g in gradients])
    deltas = stack - stack.mean(axis=0)
    norms = np.linalg.norm(deltas.reshape(len(gradients), -1), axis=1)
    return float(np.sqrt(np.mean(norms**2))), float(norms.max())
