"""Portable seeded randomness shared by clients and server.

Uplink direction regeneration has to be bit-identical regardless of which
process or platform produces it, so every sign pattern is derived from
SplitMix64, a fixed 64-bit generator with published constants (Vigna's
``splitmix64.c``, public domain).  One generator output yields one sign via
its most significant bit.

Reference outputs (first three, decimal) used as frozen test vectors:

    seed 0        16294208416658607535 7960286522194355700 487617019471545679
    seed 1        10451216379200822465 13757245211066428519 17911839290282890590
    seed 1234567  6457827717110365317 3203168211198807973 9817491932198370423

Simulation-level randomness (initial states, policy perturbations, fleet
draws) goes through numpy Generators keyed by :func:`derive_seed`, which
folds an arbitrary tuple of integers through the same mixer.  Streams keyed
by (run_seed, round, agent, purpose) are therefore independent of scheduling
order, which is what makes multi-worker runs reproducible.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Stream purposes, folded into derive_seed keys so the draws for different
# roles never overlap even for equal (round, agent) indices.
PURPOSE_FLEET = 1
PURPOSE_ZO = 2
PURPOSE_DIRECTION = 3
PURPOSE_CHECKS = 4


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance one step; returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK64
    return state, _mix64(state)


def splitmix64_sequence(seed: int, count: int) -> list[int]:
    """First `count` outputs for `seed`, as Python ints."""
    state = seed & _MASK64
    out = []
    for _ in range(count):
        state, value = splitmix64_next(state)
        out.append(value)
    return out


def splitmix64_block(seeds: np.ndarray, count: int) -> np.ndarray:
    """Vectorized outputs, shape (len(seeds), count), dtype uint64.

    Bit-identical to :func:`splitmix64_sequence` applied per seed.
    """
    states = np.asarray(seeds, dtype=np.uint64).copy()
    out = np.empty((states.shape[0], count), dtype=np.uint64)
    golden = np.uint64(_GOLDEN)
    m1 = np.uint64(_MIX1)
    m2 = np.uint64(_MIX2)
    for i in range(count):
        states += golden
        z = (states ^ (states >> np.uint64(30))) * m1
        z = (z ^ (z >> np.uint64(27))) * m2
        out[:, i] = z ^ (z >> np.uint64(31))
    return out


def rademacher_signs(seed: int, d: int) -> np.ndarray:
    """Deterministic +-1 pattern of length d: MSB of successive outputs."""
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    block = splitmix64_block(np.array([seed], dtype=np.uint64), d)[0]
    return np.where(block >> np.uint64(63), 1.0, -1.0)


def rademacher_signs_batch(seeds: np.ndarray, d: int) -> np.ndarray:
    """Sign patterns for many seeds at once, shape (len(seeds), d)."""
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    block = splitmix64_block(np.asarray(seeds, dtype=np.uint64), d)
    return np.where(block >> np.uint64(63), 1.0, -1.0)


def derive_seed(*parts: int) -> int:
    """Fold an integer key tuple into one 64-bit seed.

    Each part is absorbed as ``h = mix64(h + GOLDEN + part)``, so any change
    in any position changes the result.  Deterministic across platforms.
    """
    h = 0
    for part in parts:
        h = _mix64((h + _GOLDEN + (int(part) & _MASK64)) & _MASK64)
    return h


def spawn_generator(*parts: int) -> np.random.Generator:
    """numpy Generator keyed by an integer tuple via derive_seed."""
    return np.random.default_rng(derive_seed(*parts))
