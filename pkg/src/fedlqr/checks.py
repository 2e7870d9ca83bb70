"""Empirical verification of the convergence theory on concrete runs.

Nothing here proves anything; each check instantiates an inequality or a
scaling law with measured quantities and reports whether the run satisfied
it.  Smoothness and curvature constants are estimated by sampling, and the
projection bound's absolute constant is fitted, since only the bound's
shape is falsifiable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from fedlqr.fleet import Fleet
from fedlqr.lqr import UnstableSystemError, cost_and_gradient
from fedlqr.protocol import RoundRecord, RunTrace
from fedlqr.rng import rademacher_signs_batch
from fedlqr.zo import sample_perturbation


# ---------------------------------------------------------------------------
# smoothness / curvature estimation


@dataclass
class SmoothnessEstimate:
    l_hat: float
    mu_hat: float
    sample_points: int
    sublevel_c: float
    j_star: float


def _avg_cost_grad(fleet: Fleet, k: np.ndarray, sigma0: np.ndarray | None):
    costs, grads = [], []
    for sys in fleet.systems:
        try:
            c, g = cost_and_gradient(sys, fleet.cost, k, sigma0)
        except UnstableSystemError:
            return float("inf"), None
        costs.append(c)
        grads.append(g)
    return float(np.mean(costs)), np.mean(grads, axis=0)


def estimate_smoothness(
    fleet: Fleet,
    k_ref: np.ndarray,
    n_samples: int,
    radius: float,
    rng: np.random.Generator,
    sigma0: np.ndarray | None = None,
    descent_steps: int = 10_000,
) -> SmoothnessEstimate:
    """Sampled Lipschitz and curvature constants of the average cost.

    Runs a long exact-gradient descent from k_ref to get a cost baseline,
    then samples gain pairs near the descent path, rejected to the sublevel
    set {J_avg <= J_avg(k_ref)}.  l_hat is the max gradient-difference
    ratio over pairs; mu_hat the min of ||grad||^2 / (2 (J - J*)).
    """
    k_ref = np.asarray(k_ref, dtype=float)
    c_level, g0 = _avg_cost_grad(fleet, k_ref, sigma0)
    if g0 is None:
        raise ValueError("k_ref does not stabilize the whole fleet")

    # rough curvature probe to set the descent stepsize
    l_rough = 0.0
    h = 1e-5 * (1.0 + np.linalg.norm(k_ref))
    for _ in range(5):
        delta = sample_perturbation(k_ref.shape, h, rng)
        _, g1 = _avg_cost_grad(fleet, k_ref + delta, sigma0)
        if g1 is not None:
            l_rough = max(l_rough, np.linalg.norm(g1 - g0) / h)
    if l_rough <= 0:
        raise ValueError("could not probe curvature near k_ref")

    eta = 0.5 / l_rough
    k = k_ref.copy()
    j, g = c_level, g0
    anchors = [(k.copy(), j, g.copy())]
    thin = max(1, descent_steps // 100)
    for step in range(descent_steps):
        k_next = k - eta * g
        j_next, g_next = _avg_cost_grad(fleet, k_next, sigma0)
        if g_next is None or j_next > j:
            eta *= 0.5  # overshoot: back off and retry
            if eta < 1e-18:
                break
            continue
        k, j, g = k_next, j_next, g_next
        if (step + 1) % thin == 0:
            anchors.append((k.copy(), j, g.copy()))
    j_star = j

    l_hat = 0.0
    mu_hat = float("inf")
    floor = 1e-12 * (1.0 + abs(j_star))
    accepted = 0
    prev = None
    i = 0
    attempts = 0
    while accepted < n_samples and attempts < 50 * n_samples:
        attempts += 1
        k_anchor, _, g_anchor = anchors[i % len(anchors)]
        i += 1
        k_s = k_anchor + sample_perturbation(k_ref.shape, radius * rng.uniform(0.1, 1.0), rng)
        j_s, g_s = _avg_cost_grad(fleet, k_s, sigma0)
        if g_s is None or j_s > c_level:
            continue
        accepted += 1
        dk = np.linalg.norm(k_s - k_anchor)
        if dk > 0:
            l_hat = max(l_hat, np.linalg.norm(g_s - g_anchor) / dk)
        if prev is not None:
            dk = np.linalg.norm(k_s - prev[0])
            if dk > 0:
                l_hat = max(l_hat, np.linalg.norm(g_s - prev[1]) / dk)
        prev = (k_s, g_s)
        if j_s - j_star > floor:
            mu_hat = min(mu_hat, 0.5 * np.linalg.norm(g_s) ** 2 / (j_s - j_star))
    if accepted == 0 or not np.isfinite(mu_hat) or l_hat <= 0:
        raise ValueError("no usable stabilizing samples found in the sublevel set")
    return SmoothnessEstimate(
        l_hat=float(l_hat),
        mu_hat=float(mu_hat),
        sample_points=accepted,
        sublevel_c=float(c_level),
        j_star=float(j_star),
    )


# ---------------------------------------------------------------------------
# one-step descent


@dataclass
class DescentCheck:
    applicable: bool
    satisfied: bool
    lhs: float
    rhs: float
    margin: float
    eta_max: float
    eta_ok: bool
    reason: str = ""


def check_one_step_descent(record: RoundRecord, l_hat: float, eta: float) -> DescentCheck:
    """Instantiate the one-step descent inequality with measured beta_t.

    lhs is the realized next-round average cost; rhs the guaranteed bound
    J - eta [(1 - beta) - (L eta / 2)(1 + beta)^2] ||g||^2.  Not applicable
    when beta_t >= 1 or any ingredient is non-finite.
    """
    beta = record.beta_t
    ingredients = [record.cost_avg, record.cost_avg_after, beta, record.grad_norm]
    if not all(np.isfinite(v) for v in ingredients):
        return DescentCheck(False, False, np.nan, np.nan, np.nan, np.nan, False, "non-finite telemetry")
    if beta >= 1.0:
        return DescentCheck(False, False, np.nan, np.nan, np.nan, np.nan, False, "beta_t >= 1")
    eta_max = 2.0 * (1.0 - beta) / (l_hat * (1.0 + beta) ** 2)
    rhs = record.cost_avg - eta * (
        (1.0 - beta) - 0.5 * l_hat * eta * (1.0 + beta) ** 2
    ) * record.grad_norm**2
    lhs = record.cost_avg_after
    slack = 1e-9 * (1.0 + abs(record.cost_avg))
    return DescentCheck(
        applicable=True,
        satisfied=bool(lhs <= rhs + slack),
        lhs=float(lhs),
        rhs=float(rhs),
        margin=float(rhs - lhs),
        eta_max=float(eta_max),
        eta_ok=bool(0.0 < eta < eta_max),
    )


def scan_descent(trace: RunTrace, l_hat: float) -> dict:
    """Fraction of rounds satisfying the descent bound among applicable ones."""
    eta = trace.config["eta"]
    checks = [check_one_step_descent(r, l_hat, eta) for r in trace.records]
    applicable = [c for c in checks if c.applicable]
    premise = [c for c in applicable if c.eta_ok]
    return {
        "rounds": len(checks),
        "applicable": len(applicable),
        "premise_rounds": len(premise),
        "satisfied_of_premise": sum(c.satisfied for c in premise),
        "satisfied_of_applicable": sum(c.satisfied for c in applicable),
    }


def annotated_trace_csv(trace: RunTrace, l_hat: float) -> str:
    """Trace CSV with per-round descent-check columns appended."""
    from fedlqr.protocol import trace_to_csv

    eta = trace.config["eta"]
    lines = trace_to_csv(trace).strip().splitlines()
    out = [lines[0] + ",descent_applicable,descent_satisfied,descent_margin,eta_ok"]
    for line, record in zip(lines[1:], trace.records):
        chk = check_one_step_descent(record, l_hat, eta)
        out.append(
            f"{line},{int(chk.applicable)},{int(chk.satisfied)},"
            f"{repr(float(chk.margin))},{int(chk.eta_ok)}"
        )
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# projection-error concentration


@dataclass
class BoundCell:
    d: int
    m: int
    sigma: float
    b_mean: float
    median: float
    quantile: float
    bound_shape: float
    c_hat: float
    trials: int


@dataclass
class BoundCheckReport:
    delta: float
    cells: list[BoundCell] = field(default_factory=list)
    slopes: dict = field(default_factory=dict)  # d -> log-log slope of median vs m
    c_hat_median: float = float("nan")

    def as_dict(self) -> dict:
        return {
            "delta": self.delta,
            "cells": [asdict(c) for c in self.cells],
            "slopes": {str(k): v for k, v in self.slopes.items()},
            "c_hat_median": self.c_hat_median,
        }


def projection_bound_sweep(
    d_list: list[int],
    m_list: list[int],
    delta: float,
    trials: int,
    rng: np.random.Generator,
    sigma: float = 0.0,
) -> BoundCheckReport:
    """Monte Carlo sweep of the reconstruction error over (d, M) cells.

    Per trial the agents share one fixed unit-norm gradient, optionally
    dispersed by centered deviations of root-mean-square norm `sigma`; the
    cell records the median and (1 - delta) quantile of the aggregate error
    norm, the bound shape they are compared to, and the fitted constant.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    report = BoundCheckReport(delta=delta)
    for d in d_list:
        g = rng.standard_normal(d)
        g /= np.linalg.norm(g)
        for m in m_list:
            seeds = rng.integers(0, 2**63, size=trials * m, dtype=np.uint64)
            v = rademacher_signs_batch(seeds, d).reshape(trials, m, d) / np.sqrt(d)
            if sigma > 0:
                z = rng.standard_normal((trials, m, d))
                z -= z.mean(axis=1, keepdims=True)
                rms = np.sqrt(np.mean(np.linalg.norm(z, axis=2) ** 2, axis=1))
                z *= (sigma / rms)[:, None, None]
                grads = g[None, None, :] + z
                b_t = np.linalg.norm(z, axis=2).max(axis=1)
            else:
                grads = np.broadcast_to(g, (trials, m, d))
                b_t = np.zeros(trials)
            proj = np.einsum("tmd,tmd->tm", v, grads)
            recon = (d / m) * np.einsum("tm,tmd->td", proj, v)
            err = np.linalg.norm(recon - g[None, :], axis=1)
            lead = (d - 1) * np.log(2 * d / delta) / m
            shape = np.sqrt(lead) * (1.0 + sigma) + lead * (1.0 + float(b_t.mean()))
            quant = float(np.quantile(err, 1.0 - delta))
            report.cells.append(
                BoundCell(
                    d=d,
                    m=m,
                    sigma=sigma,
                    b_mean=float(b_t.mean()),
                    median=float(np.median(err)),
                    quantile=quant,
                    bound_shape=float(shape),
                    c_hat=quant / float(shape),
                    trials=trials,
                )
            )
        if len(m_list) >= 2:
            cells = [c for c in report.cells if c.d == d]
            slope = np.polyfit(
                np.log([c.m for c in cells]), np.log([c.median for c in cells]), 1
            )[0]
            report.slopes[d] = float(slope)
    report.c_hat_median = float(np.median([c.c_hat for c in report.cells]))
    return report


# ---------------------------------------------------------------------------
# stability condition


@dataclass
class StabilityConditionReport:
    feasible: bool
    beta_required: float
    beta_realized_max: float
    eta_used: float
    eta_max_at_beta: float
    eta_ok: bool
    conservative: bool
    degenerate_rounds: int
    rounds_used: int


def check_stability_condition(
    trace: RunTrace, epsilon: float, delta: float, c_hat: float, l_hat: float | None = None
) -> StabilityConditionReport:
    """Smallest uniform beta satisfying eps + zeta_t <= beta ||g_t|| over the run.

    zeta_t instantiates the horizon-uniform projection bound with the fitted
    constant.  Rounds with vanishing true gradient are degenerate and
    excluded (reported).  `conservative` flags realized relative errors well
    below the uniform requirement.
    """
    records = trace.records
    t_horizon = max(1, len(records))
    m = trace.config["m"]
    d = records[0].aggregated_direction.size if records else 0
    log_term = np.log(2 * d * t_horizon / delta) if d else np.nan

    beta_req = 0.0
    realized = 0.0
    degenerate = 0
    used = 0
    for r in records:
        g_norm = r.grad_norm
        g_mean_norm = float(np.linalg.norm(r.mean_zo_gradient))
        if not np.isfinite(g_norm) or g_norm <= 0:
            degenerate += 1
            continue
        lead = (d - 1) * log_term / m
        zeta = c_hat * (
            np.sqrt(lead) * (g_mean_norm + r.sigma_t) + lead * (g_mean_norm + r.b_t)
        )
        beta_req = max(beta_req, (epsilon + zeta) / g_norm)
        if np.isfinite(r.beta_t):
            realized = max(realized, r.beta_t)
        used += 1

    feasible = beta_req < 1.0
    eta_used = trace.config["eta"]
    if feasible and l_hat is not None:
        eta_max = 2.0 * (1.0 - beta_req) / (l_hat * (1.0 + beta_req) ** 2)
        eta_ok = eta_used < eta_max
    else:
        eta_max = 0.0 if not feasible else float("nan")
        eta_ok = False
    return StabilityConditionReport(
        feasible=bool(feasible),
        beta_required=float(beta_req),
        beta_realized_max=float(realized),
        eta_used=float(eta_used),
        eta_max_at_beta=float(eta_max),
        eta_ok=bool(eta_ok),
        conservative=bool(feasible and realized < 0.5 * beta_req),
        degenerate_rounds=degenerate,
        rounds_used=used,
    )


# ---------------------------------------------------------------------------
# linear rate


@dataclass
class LinearRateReport:
    rho_hat: float
    fraction_contracting: float
    empirical_rate: float
    rounds_checked: int
    rounds_excluded: int
    vacuous: bool


def check_linear_rate(
    trace: RunTrace, est: SmoothnessEstimate, beta: float, start_round: int = 10
) -> LinearRateReport:
    """Per-round contraction of the cost gap against the rate envelope.

    rho_hat = 1 - mu (1 - beta)^2 / (L (1 + beta)^2); the report gives the
    fraction of checked rounds with gap(t+1) <= rho_hat gap(t) and the
    geometric rate fitted to log gap.  Rounds at or below the numerical
    floor are excluded.
    """
    rho_hat = 1.0 - est.mu_hat * (1.0 - beta) ** 2 / (est.l_hat * (1.0 + beta) ** 2)
    vacuous = rho_hat >= 1.0 - 1e-9  # beta near 1: envelope indistinguishable from flat
    floor = 1e-12 * (1.0 + abs(est.j_star))

    checked = 0
    contracting = 0
    excluded = 0
    log_gaps = []
    rounds = []
    for r in trace.records[start_round:]:
        gap = r.cost_avg - est.j_star
        gap_next = r.cost_avg_after - est.j_star
        if not (np.isfinite(gap) and np.isfinite(gap_next)) or gap <= floor or gap_next <= floor:
            excluded += 1
            continue
        checked += 1
        if gap_next <= rho_hat * gap:
            contracting += 1
        log_gaps.append(np.log(gap))
        rounds.append(r.round)
    if len(rounds) >= 2:
        slope = np.polyfit(rounds, log_gaps, 1)[0]
        empirical_rate = float(np.exp(slope))
    else:
        empirical_rate = float("nan")
    return LinearRateReport(
        rho_hat=float(rho_hat),
        fraction_contracting=contracting / checked if checked else float("nan"),
        empirical_rate=empirical_rate,
        rounds_checked=checked,
        rounds_excluded=excluded,
        vacuous=bool(vacuous),
    )
