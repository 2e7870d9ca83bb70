"""Scalar uplink codec.

A client flattens its gradient row-major, projects it onto a seeded unit
Rademacher direction, and uploads one scalar plus the 64-bit seed.  The
server regenerates the direction from the seed (bit-identically, see
fedlqr.rng) and accumulates scalar * direction; the round aggregate is
(d / M) times the accumulator, reshaped back to gain layout.

Flattening order is row-major (C order) everywhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from fedlqr.rng import rademacher_signs

_WIRE = struct.Struct("<IIQd")  # round, agent_id, seed, scalar


@dataclass(frozen=True)
class ScalarMessage:
    """One agent's uplink payload for one round."""

    round: int
    agent_id: int
    seed: int
    scalar: float

    def pack(self) -> bytes:
        return _WIRE.pack(self.round, self.agent_id, self.seed, self.scalar)

    @classmethod
    def unpack(cls, data: bytes) -> "ScalarMessage":
        rnd, agent, seed, scalar = _WIRE.unpack(data)
        return cls(round=rnd, agent_id=agent, seed=seed, scalar=scalar)


def rademacher_direction(d: int, seed: int) -> np.ndarray:
    """Unit Rademacher direction: entries +-1/sqrt(d), deterministic in seed."""
    return rademacher_signs(seed, d) / np.sqrt(d)


def encode(gradient: np.ndarray, direction: np.ndarray) -> float:
    """Inner product of the row-major flattened gradient with the direction."""
    flat = np.asarray(gradient, dtype=float).ravel()
    direction = np.asarray(direction, dtype=float)
    if flat.shape != direction.shape:
        raise ValueError(
            f"gradient of dimension {flat.shape[0]} does not match direction "
            f"of dimension {direction.shape[0]}"
        )
    return float(np.dot(direction, flat))


def decode_accumulate(acc: np.ndarray, message: ScalarMessage, d: int) -> np.ndarray:
    """acc + scalar * direction regenerated from the message seed."""
    acc = np.asarray(acc, dtype=float)
    if acc.shape != (d,):
        raise ValueError(f"accumulator shape {acc.shape} does not match d={d}")
    return acc + message.scalar * rademacher_direction(d, message.seed)


def aggregate(acc: np.ndarray, num_agents: int, shape: tuple[int, int]) -> np.ndarray:
    """(d / M) * acc reshaped to gain layout (inverse of the flattening)."""
    if num_agents < 1:
        raise ValueError("num_agents must be >= 1")
    acc = np.asarray(acc, dtype=float)
    d = shape[0] * shape[1]
    if acc.shape != (d,):
        raise ValueError(f"accumulator shape {acc.shape} does not match shape {shape}")
    return (d / num_agents) * acc.reshape(shape)


def sign_ensemble(d: int) -> np.ndarray:
    """All 2^d unit sign vectors, shape (2^d, d).  Guarded to d <= 12."""
    if not 1 <= d <= 12:
        raise ValueError("exhaustive ensemble is limited to 1 <= d <= 12")
    rows = np.arange(2**d, dtype=np.uint64)[:, None] >> np.arange(d, dtype=np.uint64)
    signs = np.where(rows & np.uint64(1), 1.0, -1.0)
    return signs / np.sqrt(d)


def reconstruct_exhaustive(gradient: np.ndarray) -> np.ndarray:
    """Average of d (v v') g over the full sign ensemble; equals g exactly.

    Test hook for replacing the sampled direction by its ensemble mean.
    """
    g = np.asarray(gradient, dtype=float)
    flat = g.ravel()
    v = sign_ensemble(flat.shape[0])
    recon = flat.shape[0] * (v.T @ (v @ flat)) / v.shape[0]
    return recon.reshape(g.shape)
