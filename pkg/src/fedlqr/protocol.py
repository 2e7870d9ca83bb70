"""Server-side optimization loops: scalar-projection uplink and the
full-gradient baseline.

Both loops share one engine; they differ only in what the clients upload
and how the server forms the round direction.  Per-round telemetry records
the exact gradient of the average cost (measurement only, never visible to
the algorithm), the mean client estimate, and the error decomposition
between them.

All randomness is keyed by (run_seed, round, agent, purpose), so traces are
bit-reproducible regardless of scheduling or worker count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from fedlqr import codec
from fedlqr.config import ExperimentConfig
from fedlqr.fleet import Fleet, heterogeneity_stats
from fedlqr.lqr import (
    UnstableSystemError,
    cost_and_gradient,
    exact_cost,
    is_schur_stable,
    optimal_gain,
)
from fedlqr.rng import PURPOSE_DIRECTION, PURPOSE_ZO, derive_seed, spawn_generator
from fedlqr.zo import RolloutParams, estimate_gradient

SCALAR_BITS = 32  # wire width of one transmitted value


def uplink_bits(algorithm: str, m: int, d: int, policy: str = "scalars_only") -> int:
    """Uplink bits per round for M agents and gain dimension d."""
    if algorithm == "scalar":
        bits = m * SCALAR_BITS
        if policy == "scalars_plus_seeds":
            bits += m * SCALAR_BITS
        return bits
    if algorithm == "baseline":
        return m * d * SCALAR_BITS
    raise ValueError(f"unknown algorithm: {algorithm}")


@dataclass
class RoundRecord:
    round: int
    k_before: np.ndarray
    messages: tuple[codec.ScalarMessage, ...]
    aggregated_direction: np.ndarray
    true_gradient: np.ndarray | None
    mean_zo_gradient: np.ndarray
    e_proj_norm: float
    e_zo_norm: float
    e_tot_norm: float
    beta_t: float
    sigma_t: float
    b_t: float
    cost_avg: float
    cost_avg_after: float
    ref_gap: float
    ref_gap_after: float
    grad_norm: float
    uplink_bits_round: int
    all_stable: bool


@dataclass
class RunTrace:
    algorithm: str
    config: dict
    run_seed: int
    records: list[RoundRecord] = field(default_factory=list)
    final_gain: np.ndarray | None = None
    cumulative_bits: int = 0
    halted_round: int | None = None
    wall_time_s: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def _norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(m).ravel()))


def _fleet_cost_and_gradient(fleet: Fleet, k, sigma0):
    """Exact telemetry at k: (per-agent grads, J_avg, grad of J_avg).

    grads and the average gradient are None when some agent's loop is
    unstable at k; the average cost is then +inf.
    """
    costs, grads = [], []
    for sys in fleet.systems:
        try:
            c, g = cost_and_gradient(sys, fleet.cost, k, sigma0)
        except UnstableSystemError:
            c, g = float("inf"), None
        costs.append(c)
        grads.append(g)
    if any(g is None for g in grads):
        return None, float("inf"), None
    return grads, float(np.mean(costs)), np.mean(grads, axis=0)


def run_scalar_fed_lqr(fleet: Fleet, config: ExperimentConfig, run_seed: int | None = None) -> RunTrace:
    """Scalar-projection federated run: one scalar plus seed per agent-round."""
    return _run(fleet, config, "scalar", run_seed)


def run_fedlqr_baseline(fleet: Fleet, config: ExperimentConfig, run_seed: int | None = None) -> RunTrace:
    """Full-gradient federated baseline: identical loop, d values per agent-round."""
    return _run(fleet, config, "baseline", run_seed)


def run_protocol(
    fleet: Fleet, config: ExperimentConfig, algorithm: str, run_seed: int | None = None
) -> RunTrace:
    """Dispatch by algorithm name ('scalar' or 'baseline')."""
    return _run(fleet, config, algorithm, run_seed)


def _run(fleet: Fleet, config: ExperimentConfig, algorithm: str, run_seed: int | None) -> RunTrace:
    config.validate()
    if algorithm not in ("scalar", "baseline"):
        raise ValueError(f"unknown algorithm: {algorithm}")
    seed = config.run_seed if run_seed is None else run_seed
    started = time.perf_counter()

    n_u, n_x = fleet.nominal.n_u, fleet.nominal.n_x
    d = n_u * n_x
    k0 = config.k0_scale * np.eye(n_u, n_x)
    for i, sys in enumerate(fleet.systems):
        if not is_schur_stable(sys, k0):
            raise ValueError(f"initial gain does not stabilize fleet member {i}")

    sigma0 = config.x0_std**2 * np.eye(n_x)
    k_ref = optimal_gain(fleet.nominal, fleet.cost)
    j_ref = exact_cost(fleet.nominal, fleet.cost, k_ref, sigma0)

    def ref_gap(k):
        try:
            return (exact_cost(fleet.nominal, fleet.cost, k, sigma0) - j_ref) / j_ref
        except UnstableSystemError:
            return float("inf")

    params = RolloutParams(
        n_s=config.n_s,
        n_traj=config.n_traj,
        tau=config.tau,
        radius=config.radius,
        x0_std=config.x0_std,
        guard=config.guard,
        cost_cap=config.cost_cap,
    )
    bits_round = uplink_bits(algorithm, fleet.size, d, config.bit_policy)

    trace = RunTrace(algorithm=algorithm, config=config.as_dict(), run_seed=seed)
    k = k0.copy()
    grads, cost_avg, g_true = _fleet_cost_and_gradient(fleet, k, sigma0)

    for t in range(config.t_rounds):
        # client phase: local gradient estimates (order-independent streams)
        if config.oracle_mode == "exact":
            if grads is None:
                # exact oracle undefined outside the stabilizing set
                trace.halted_round = t
                break
            estimates = list(grads)
        else:
            estimates = [
                estimate_gradient(
                    sys, fleet.cost, k, params, spawn_generator(seed, t, n, PURPOSE_ZO)
                ).gradient
                for n, sys in enumerate(fleet.systems)
            ]

        g_mean = np.mean(estimates, axis=0)
        sigma_t, b_t = heterogeneity_stats(estimates)

        # server phase: decode in ascending agent order, aggregate, update
        if algorithm == "scalar":
            if config.projection == "exhaustive":
                messages: tuple[codec.ScalarMessage, ...] = ()
                g_bar = np.mean([codec.reconstruct_exhaustive(g) for g in estimates], axis=0)
            else:
                uploads = []
                for n in range(fleet.size):
                    xi = derive_seed(seed, t, n, PURPOSE_DIRECTION)
                    direction = codec.rademacher_direction(d, xi)
                    uploads.append(
                        codec.ScalarMessage(
                            round=t, agent_id=n, seed=xi,
                            scalar=codec.encode(estimates[n], direction),
                        )
                    )
                messages = tuple(uploads)
                acc = np.zeros(d)
                for msg in messages:  # server regenerates each direction from the seed
                    acc = codec.decode_accumulate(acc, msg, d)
                g_bar = codec.aggregate(acc, fleet.size, (n_u, n_x))
        else:
            messages = ()
            g_bar = g_mean

        if g_true is not None:
            e_proj = _norm(g_bar - g_mean)
            e_zo = _norm(g_mean - g_true)
            e_tot = _norm(g_bar - g_true)
            grad_norm = _norm(g_true)
            beta_t = e_tot / grad_norm if grad_norm > 0 else float("nan")
        else:
            e_proj = _norm(g_bar - g_mean)
            e_zo = e_tot = grad_norm = beta_t = float("nan")

        k_next = k - config.eta * g_bar
        all_stable = all(is_schur_stable(sys, k_next) for sys in fleet.systems)
        next_grads, next_cost_avg, next_g_true = _fleet_cost_and_gradient(fleet, k_next, sigma0)

        trace.records.append(
            RoundRecord(
                round=t,
                k_before=k.copy(),
                messages=messages,
                aggregated_direction=g_bar,
                true_gradient=g_true,
                mean_zo_gradient=g_mean,
                e_proj_norm=e_proj,
                e_zo_norm=e_zo,
                e_tot_norm=e_tot,
                beta_t=beta_t,
                sigma_t=sigma_t,
                b_t=b_t,
                cost_avg=cost_avg,
                cost_avg_after=next_cost_avg,
                ref_gap=ref_gap(k),
                ref_gap_after=ref_gap(k_next),
                grad_norm=grad_norm,
                uplink_bits_round=bits_round,
                all_stable=all_stable,
            )
        )
        trace.cumulative_bits += bits_round

        if not all_stable and config.instability_policy == "halt":
            trace.halted_round = t
            k = k_next
            break
        k = k_next
        grads, cost_avg, g_true = next_grads, next_cost_avg, next_g_true

    trace.final_gain = k
    trace.wall_time_s = time.perf_counter() - started
    return trace


# ---------------------------------------------------------------------------
# trace export

CSV_HEADER = "round,cost_avg,ref_gap,e_proj,e_zo,e_tot,beta_t,grad_norm,bits_cum,all_stable"


def _fmt(x: float) -> str:
    return repr(float(x))


def trace_to_csv(trace: RunTrace) -> str:
    lines = [CSV_HEADER]
    bits = 0
    for r in trace.records:
        bits += r.uplink_bits_round
        lines.append(
            ",".join(
                [
                    str(r.round),
                    _fmt(r.cost_avg),
                    _fmt(r.ref_gap),
                    _fmt(r.e_proj_norm),
                    _fmt(r.e_zo_norm),
                    _fmt(r.e_tot_norm),
                    _fmt(r.beta_t),
                    _fmt(r.grad_norm),
                    str(bits),
                    str(int(r.all_stable)),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def trace_summary(trace: RunTrace) -> dict:
    last = trace.records[-1] if trace.records else None
    return {
        "algorithm": trace.algorithm,
        "run_seed": trace.run_seed,
        "config": trace.config,
        "rounds_completed": len(trace.records),
        "halted_round": trace.halted_round,
        "cumulative_bits": trace.cumulative_bits,
        "final_ref_gap": None if last is None else last.ref_gap_after,
        "final_cost_avg": None if last is None else last.cost_avg_after,
        "unstable_rounds": sum(1 for r in trace.records if not r.all_stable),
        "wall_time_s": trace.wall_time_s,
    }
