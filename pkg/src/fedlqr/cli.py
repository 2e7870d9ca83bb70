"""Command-line harness.

Subcommands:
  simulate  one config -> traces + metrics
  sweep     grid over heterogeneity levels and algorithms
  validate  run the theory-check suites; nonzero exit on failure
  plotdata  re-emit plot CSVs from stored traces
  selftest  codec enumeration + solver residual suite

FEDLQR_OUTDIR sets the default output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from fedlqr import checks, codec, kernels, lqr
from fedlqr.config import ExperimentConfig, apply_overrides, load_config
from fedlqr.experiments import (
    MetricSeries,
    emit_plot_data,
    recovery_percentage,
    run_experiment,
    sweep,
)
from fedlqr.fleet import generate_fleet, nominal_system
from fedlqr.protocol import run_protocol
from fedlqr.rng import PURPOSE_CHECKS, PURPOSE_FLEET, spawn_generator


def _default_outdir() -> str:
    return os.environ.get("FEDLQR_OUTDIR", "out")


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.set:
        config = apply_overrides(config, args.set)
    return config


def cmd_simulate(args) -> int:
    config = _load(args)
    out = Path(args.out or _default_outdir())
    series = run_experiment(config, out_dir=out, workers=args.workers)
    for name, s in series.items():
        print(f"{name}: final gap mean {s.final_gap_mean:.6f} over {config.mc_runs} runs "
              f"({s.halted_runs} halted)")
    print(f"wrote {out}")
    return 0


def cmd_sweep(args) -> int:
    config = _load(args)
    eps_levels = [float(x) for x in args.eps.split(",")]
    out = Path(args.out or _default_outdir())
    all_series = sweep(config, eps_levels, out, workers=args.workers, budget_bits=args.budget)
    for s in all_series:
        print(f"{s.algorithm} eps={s.eps:g}: final gap mean {s.final_gap_mean:.6f}")
    print(f"wrote {out}")
    return 0


def cmd_plotdata(args) -> int:
    # Rebuild series from stored per-run trace CSVs (traces/<algo>_eps<eps>_run<i>.csv).
    trace_dir = Path(args.traces)
    files = sorted(trace_dir.glob("*_eps*_run*.csv"))
    if not files:
        print(f"no trace CSVs found under {trace_dir}", file=sys.stderr)
        return 2
    groups: dict[tuple[str, float], list[Path]] = {}
    for f in files:
        stem = f.stem
        algo, rest = stem.split("_eps", 1)
        eps_str, _ = rest.split("_run", 1)
        groups.setdefault((algo, float(eps_str)), []).append(f)
    series = []
    for (algo, eps), paths in sorted(groups.items()):
        gap_rows, bits = [], None
        for p in sorted(paths):
            rows = p.read_text().strip().splitlines()[1:]
            cols = [r.split(",") for r in rows]
            gap_rows.append(np.array([float(c[2]) for c in cols]))
            through = np.array([int(c[8]) for c in cols])
            bits = through - through[0]  # bits paid before each round
        gaps = np.stack(gap_rows)
        series.append(
            MetricSeries(
                algorithm=algo,
                eps=eps,
                rounds=np.arange(gaps.shape[1]),
                bits_cum=bits,
                gap_mean=gaps.mean(axis=0),
                gap_stderr=gaps.std(axis=0, ddof=0) / np.sqrt(gaps.shape[0]),
                recovery_mean=np.array(
                    [np.mean([recovery_percentage(g) for g in gaps[:, t]]) for t in range(gaps.shape[1])]
                ),
                final_gaps=[float(g[-1]) for g in gaps],
            )
        )
    out = Path(args.out or _default_outdir()) / f"{args.kind}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    emit_plot_data(series, args.kind, out, budget_bits=args.budget)
    print(f"wrote {out}")
    return 0


def cmd_selftest(args) -> int:
    failures = []
    rng = spawn_generator(123, PURPOSE_CHECKS)

    # codec: exhaustive unbiasedness and direction regeneration
    for d in (4, 9):
        g = rng.standard_normal(d)
        recon = codec.reconstruct_exhaustive(g)
        if not np.allclose(recon, g, rtol=0, atol=1e-12 * (1 + np.abs(g).max())):
            failures.append(f"exhaustive reconstruction failed at d={d}")
    seeds = rng.integers(0, 2**63, size=200, dtype=np.uint64)
    for seed in seeds:
        v1 = codec.rademacher_direction(9, int(seed))
        v2 = codec.rademacher_direction(9, int(seed))
        if not np.array_equal(v1, v2):
            failures.append("direction regeneration is not bit-identical")
            break

    # solvers: residual contracts on random stable systems
    for trial in range(50):
        n = int(rng.integers(1, 9))
        a = rng.standard_normal((n, n))
        a *= rng.uniform(0.2, 0.95) / max(lqr.spectral_radius(a), 1e-12)
        w_half = rng.standard_normal((n, n))
        w = w_half @ w_half.T + np.eye(n)
        p = lqr.solve_dlyap(a, w)
        resid = np.linalg.norm(p - a.T @ p @ a - w)
        if resid > 1e-10 * (1 + np.linalg.norm(p)):
            failures.append(f"Lyapunov residual contract violated (trial {trial})")

    sys_, cost, _ = nominal_system()
    p = lqr.solve_dare(sys_, cost)
    k_star = lqr.optimal_gain(sys_, cost)
    if not lqr.is_schur_stable(sys_, k_star):
        failures.append("optimal gain does not stabilize the nominal plant")
    grad_norm = np.linalg.norm(lqr.exact_policy_gradient(sys_, cost, k_star))
    if grad_norm > 1e-8:
        failures.append(f"gradient at the optimum is {grad_norm:.2e}")

    print(f"kernel backend: {kernels.BACKEND}")
    if failures:
        for f in failures:
            print(f"FAIL: {f}")
        return 1
    print("selftest OK")
    return 0


def cmd_validate(args) -> int:
    config = _load(args)
    out = Path(args.out or _default_outdir())
    out.mkdir(parents=True, exist_ok=True)
    report: dict = {}
    hard_failures: list[str] = []

    quick = args.quick
    t_rounds = 200 if quick else 1000
    mc = 2 if quick else 5

    # projection concentration and fitted constant
    sweep_report = checks.projection_bound_sweep(
        d_list=[4, 9],
        m_list=[8, 32, 128, 512] if quick else [8, 32, 128, 512, 2048],
        delta=0.05,
        trials=200,
        rng=spawn_generator(config.run_seed, 1, PURPOSE_CHECKS),
    )
    report["projection_sweep"] = sweep_report.as_dict()
    for d, slope in sweep_report.slopes.items():
        if not -0.60 <= slope <= -0.40:
            hard_failures.append(f"projection error slope at d={d} is {slope:.3f}")

    # smoothness on the homogeneous fleet
    fleet = generate_fleet(config.m, 0.0, 0.0, rng=spawn_generator(config.run_seed, 0, PURPOSE_FLEET))
    k0 = config.k0_scale * np.eye(fleet.nominal.n_u, fleet.nominal.n_x)
    sigma0 = config.x0_std**2 * np.eye(fleet.nominal.n_x)
    est = checks.estimate_smoothness(
        fleet, k0, n_samples=100 if quick else 300, radius=0.05,
        rng=spawn_generator(config.run_seed, 2, PURPOSE_CHECKS), sigma0=sigma0,
        descent_steps=2000 if quick else 10_000,
    )
    report["smoothness"] = {
        "l_hat": est.l_hat, "mu_hat": est.mu_hat,
        "sample_points": est.sample_points, "sublevel_c": est.sublevel_c,
        "j_star": est.j_star,
    }
    if not (est.l_hat >= est.mu_hat > 0):
        hard_failures.append("smoothness estimates violate l_hat >= mu_hat > 0")

    # descent scan on an exact-oracle scalar run
    exact_cfg = replace(config, oracle_mode="exact", t_rounds=t_rounds, mc_runs=mc,
                        algorithm="scalar")
    descent_stats = []
    unstable_total = 0
    for run_index in range(mc):
        trace = run_protocol(fleet, exact_cfg, "scalar", run_seed=run_index)
        if run_index == 0:
            (out / "descent_trace.csv").write_text(checks.annotated_trace_csv(trace, est.l_hat))
        stats = checks.scan_descent(trace, est.l_hat)
        descent_stats.append(stats)
        unstable_total += sum(1 for r in trace.records if not r.all_stable)
        stability = checks.check_stability_condition(
            trace, epsilon=0.0, delta=0.05, c_hat=sweep_report.c_hat_median, l_hat=est.l_hat
        )
        report.setdefault("stability_condition", []).append(
            {k: getattr(stability, k) for k in (
                "feasible", "beta_required", "beta_realized_max", "conservative",
                "degenerate_rounds")}
        )
        rate = checks.check_linear_rate(trace, est, beta=0.2)
        report.setdefault("linear_rate", []).append(
            {"rho_hat": rate.rho_hat, "fraction_contracting": rate.fraction_contracting,
             "empirical_rate": rate.empirical_rate, "rounds_checked": rate.rounds_checked}
        )
    report["descent"] = descent_stats
    premise = sum(s["premise_rounds"] for s in descent_stats)
    satisfied = sum(s["satisfied_of_premise"] for s in descent_stats)
    if premise and satisfied < premise:
        hard_failures.append(f"descent bound violated on {premise - satisfied}/{premise} premise rounds")
    if unstable_total:
        hard_failures.append(f"{unstable_total} unstable rounds in exact-oracle runs")

    report["hard_failures"] = hard_failures
    (out / "validate.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(f"wrote {out / 'validate.json'}")
    if hard_failures:
        for f in hard_failures:
            print(f"FAIL: {f}")
        return 1
    print("validate OK")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fedlqr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", nargs="*", metavar="KEY=VALUE", help="config overrides")
        p.add_argument("--out", help="output directory (default $FEDLQR_OUTDIR or ./out)")
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("simulate", help="run one configured experiment")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid over heterogeneity levels")
    common(p)
    p.add_argument("--eps", default="0,0.5", help="comma-separated heterogeneity levels")
    p.add_argument("--budget", type=float, default=6e5, help="bit budget for the comparison bar")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="run theory-check suites")
    common(p)
    p.add_argument("--quick", action="store_true", help="smaller, faster battery")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plotdata", help="re-emit plot CSVs from stored traces")
    p.add_argument("--traces", required=True, help="directory with per-run trace CSVs")
    p.add_argument("--kind", required=True,
                   choices=["gap_vs_round", "recovery_vs_bits", "budget_bar"])
    p.add_argument("--budget", type=float, default=6e5)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("selftest", help="codec + solver sanity suite")
    p.set_defaults(func=cmd_selftest)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
