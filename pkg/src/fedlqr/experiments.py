"""Monte Carlo experiment harness: sweeps, metrics and plot-data emission.

Metrics follow the benchmark protocol: the normalized reference gap
(J1(K) - J1(K1*)) / J1(K1*) against the nominal plant's optimum, and the
recovery percentage 100 (1 - gap) clamped to [0, 100].  Runs are keyed by
(run_seed, run_index), so results are identical no matter how many workers
execute them.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from fedlqr.config import ExperimentConfig
from fedlqr.fleet import generate_fleet
from fedlqr.lqr import (
    CostMatrices,
    LtiSystem,
    UnstableSystemError,
    exact_cost,
    optimal_gain,
)
from fedlqr.protocol import run_protocol, trace_summary, trace_to_csv
from fedlqr.rng import PURPOSE_FLEET, derive_seed, spawn_generator


def normalized_reference_gap(
    k: np.ndarray,
    nominal: LtiSystem,
    cost: CostMatrices,
    sigma0: np.ndarray | None = None,
) -> float:
    """(J1(K) - J1(K1*)) / J1(K1*); +inf when K destabilizes the nominal plant."""
    k_ref = optimal_gain(nominal, cost)
    j_ref = exact_cost(nominal, cost, k_ref, sigma0)
    try:
        return (exact_cost(nominal, cost, k, sigma0) - j_ref) / j_ref
    except UnstableSystemError:
        return float("inf")


def recovery_percentage(gap: float) -> float:
    """100 (1 - gap), clamped to [0, 100]; +inf gap maps to 0."""
    if not np.isfinite(gap):
        return 0.0
    return float(100.0 * min(1.0, max(0.0, 1.0 - gap)))


@dataclass
class MetricSeries:
    """Per-round aggregates of one (algorithm, eps) cell over mc_runs.

    Entry t is the state at the start of round t: gap of the gain K_t and
    the uplink bits paid for rounds 0..t-1.  This is exactly what the
    per-run trace CSVs carry, so stored traces rebuild the series verbatim.
    """

    algorithm: str
    eps: float
    rounds: np.ndarray
    bits_cum: np.ndarray
    gap_mean: np.ndarray
    gap_stderr: np.ndarray
    recovery_mean: np.ndarray
    final_gaps: list[float] = field(default_factory=list)
    halted_runs: int = 0

    @property
    def final_gap_mean(self) -> float:
        return float(np.mean(self.final_gaps))

    def at_budget(self, budget_bits: float) -> tuple[int, float, float]:
        """(round, gap_mean, recovery_mean) of the last state within budget."""
        idx = np.searchsorted(self.bits_cum, budget_bits, side="right") - 1
        if idx < 0:
            return -1, float("inf"), 0.0
        return int(self.rounds[idx]), float(self.gap_mean[idx]), float(self.recovery_mean[idx])


def _single_run(config: ExperimentConfig, algorithm: str, run_index: int):
    fleet_index = 0 if config.fix_fleet else run_index
    fleet = generate_fleet(
        config.m,
        config.eps1,
        config.eps2,
        rng=spawn_generator(config.run_seed, fleet_index, PURPOSE_FLEET),
        stability_margin=config.stability_margin,
    )
    trace = run_protocol(fleet, config, algorithm, run_seed=derive_seed(config.run_seed, run_index))
    gaps = np.full(config.t_rounds, np.inf)  # rounds after a halt keep the sentinel
    bits_round = trace.records[0].uplink_bits_round if trace.records else 0
    bits = bits_round * np.arange(config.t_rounds)
    for r in trace.records:
        gaps[r.round] = r.ref_gap
    return algorithm, run_index, gaps, bits, trace


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    workers: int = 1,
    write_traces: bool = True,
) -> dict[str, MetricSeries]:
    """Execute mc_runs independent (fleet, run) pairs per selected algorithm.

    Returns one MetricSeries per algorithm; when out_dir is given, writes
    per-run trace CSVs, per-kind metric CSVs and a JSON summary.
    """
    config.validate()
    started = time.perf_counter()
    jobs = [
        (config, algorithm, run_index)
        for algorithm in config.algorithms()
        for run_index in range(config.mc_runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_single_run_star, jobs))
    else:
        results = [_single_run_star(job) for job in jobs]
    results.sort(key=lambda item: (item[0], item[1]))  # (algorithm, run_index)

    series: dict[str, MetricSeries] = {}
    summaries = []
    traces = {}
    diagnostics = {}
    for algorithm in config.algorithms():
        rows = [item for item in results if item[0] == algorithm]
        gap_matrix = np.stack([item[2] for item in rows])
        if config.t_rounds > 160:
            diagnostics[algorithm] = {"smoothed_monotone_fraction": smoothed_monotonicity(gap_matrix)}
        bits = rows[0][3]
        gap_mean = gap_matrix.mean(axis=0)
        gap_stderr = gap_matrix.std(axis=0, ddof=0) / np.sqrt(len(rows))
        recovery = np.array(
            [np.mean([recovery_percentage(g) for g in gap_matrix[:, t]]) for t in range(gap_matrix.shape[1])]
        )
        series[algorithm] = MetricSeries(
            algorithm=algorithm,
            eps=config.eps1,
            rounds=np.arange(config.t_rounds),
            bits_cum=bits,
            gap_mean=gap_mean,
            gap_stderr=gap_stderr,
            recovery_mean=recovery,
            final_gaps=[
                item[4].records[-1].ref_gap_after if item[4].records else float("inf")
                for item in rows
            ],
            halted_runs=sum(1 for item in rows if item[4].halted_round is not None),
        )
        for item in rows:
            summaries.append(trace_summary(item[4]))
            traces[(algorithm, item[1])] = item[4]

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if write_traces:
            trace_dir = out / "traces"
            trace_dir.mkdir(exist_ok=True)
            for (algorithm, run_index), trace in traces.items():
                name = f"{algorithm}_eps{config.eps1:g}_run{run_index}.csv"
                (trace_dir / name).write_text(trace_to_csv(trace))
        emit_plot_data(list(series.values()), "gap_vs_round", out / "gap_vs_round.csv")
        emit_plot_data(list(series.values()), "recovery_vs_bits", out / "recovery_vs_bits.csv")
        summary = {
            "config": config.as_dict(),
            "wall_time_s": time.perf_counter() - started,
            "runs": summaries,
            "final_gap_mean": {a: s.final_gap_mean for a, s in series.items()},
            "diagnostics": diagnostics,
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return series


def _single_run_star(job):
    return _single_run(*job)


def smoothed_monotonicity(gap_matrix: np.ndarray, window: int = 50, start: int = 100,
                          slack: float = 5e-3) -> float:
    """Diagnostic: fraction of runs whose smoothed gap is non-increasing.

    The gap of each run is moving-averaged over `window` rounds; a run
    counts as monotone when, after `start`, the smoothed curve never rises
    by more than `slack` relative.  Not a hard invariant (noise floors
    wobble); reported in the run summary.
    """
    monotone = 0
    for gaps in gap_matrix:
        if not np.all(np.isfinite(gaps)):
            continue
        kernel = np.ones(window) / window
        smooth = np.convolve(gaps, kernel, mode="valid")
        tail = smooth[start:]
        if tail.size < 2 or np.all(np.diff(tail) <= slack * tail[:-1]):
            monotone += 1
    return monotone / gap_matrix.shape[0]


def sweep(
    config: ExperimentConfig,
    eps_levels: list[float],
    out_dir: str | Path,
    workers: int = 1,
    budget_bits: float = 6e5,
) -> list[MetricSeries]:
    """Grid over heterogeneity levels; emits merged plot data and budget bars."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_series: list[MetricSeries] = []
    for eps in eps_levels:
        cell_config = replace(config, eps1=eps, eps2=eps)
        cell_dir = out / f"eps{eps:g}"
        cell = run_experiment(cell_config, out_dir=cell_dir, workers=workers)
        all_series.extend(cell.values())
    emit_plot_data(all_series, "gap_vs_round", out / "gap_vs_round.csv")
    emit_plot_data(all_series, "recovery_vs_bits", out / "recovery_vs_bits.csv")
    emit_plot_data(all_series, "budget_bar", out / "budget_bar.csv", budget_bits=budget_bits)
    return all_series


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_plot_data(
    series: list[MetricSeries],
    kind: str,
    path: str | Path,
    budget_bits: float = 6e5,
) -> Path:
    """Write one CSV of the requested kind; deterministic row ordering."""
    if not series:
        raise ValueError("no series to emit")
    path = Path(path)
    ordered = sorted(series, key=lambda s: (s.algorithm, s.eps))
    lines: list[str] = []
    if kind == "gap_vs_round":
        lines.append("round,algorithm,eps,gap_mean,gap_stderr")
        for s in ordered:
            for t in range(len(s.rounds)):
                lines.append(
                    f"{int(s.rounds[t])},{s.algorithm},{_fmt(s.eps)},"
                    f"{_fmt(s.gap_mean[t])},{_fmt(s.gap_stderr[t])}"
                )
    elif kind == "recovery_vs_bits":
        lines.append("bits_cum,algorithm,eps,recovery_mean,gap_mean")
        rows = []
        for s in ordered:
            for t in range(len(s.rounds)):
                rows.append((int(s.bits_cum[t]), s.algorithm, s.eps, s.recovery_mean[t], s.gap_mean[t]))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        for bits, algorithm, eps, rec, gap in rows:
            lines.append(f"{bits},{algorithm},{_fmt(eps)},{_fmt(rec)},{_fmt(gap)}")
    elif kind == "budget_bar":
        lines.append("algorithm,eps,budget_bits,round,recovery_mean,gap_mean")
        for s in ordered:
            rnd, gap, rec = s.at_budget(budget_bits)
            lines.append(
                f"{s.algorithm},{_fmt(s.eps)},{int(budget_bits)},{rnd},{_fmt(rec)},{_fmt(gap)}"
            )
    else:
        raise ValueError(f"unknown plot kind: {kind}")
    path.write_text("\n".join(lines) + "\n")
    return path
