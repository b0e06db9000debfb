"""Command-line front end.

Two entry points: ``estimate`` runs the pipeline on a user CSV and writes an
EstimationReport as JSON; ``simulate`` runs the Monte Carlo experiments and
writes JSON plus plot-ready CSV summaries. Exit codes: 0 success, 1 usage
error, 2 data or numeric error.

Report JSON schema (``"schema": "caliper-match/1"``, keys snake_case, UTF-8):

    schema, seed, n_estimation, caliper, alpha
    config            {mode, link, caliper{kind, s}, delta_override, alpha,
                       bandwidths{kappa0, kappa1, alpha, beta, kappa0_index, cutoff}}
    estimates         {tau_hat, tau_t_hat, n_used_ate, n1, p1_hat, unmatched_treated}
    variance          {v_tau, v_sigma_pi, theta_term, v_tau_t, v_t_sigma_pi,
                       theta_term_t, v_total_ate, v_total_att, n_hat, window_lo,
                       window_hi, clamped{...}, q_hat_0/1, q_hat_t0/t1,
                       bandwidth_score, bandwidth_index}
    ci_ate, ci_att    {center, halfwidth, lo, hi}
    match_diagnostics {n, min_m, max_m, mean_m, unmatched, delta}
    propensity        {theta_hat, loglik, iterations, converged, grad_sup_norm,
                       link} or null in known-score mode
    n_clamped_scores
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import secrets
import sys

import numpy as np

from .data import ingest_csv
from .dgp import (
    CoverageSummary,
    coverage_experiment,
    default_dgp,
    matches_growth_experiment,
)
from .errors import CaliperMatchError
from .inference import PipelineConfig, run_pipeline
from .matching import CaliperRule
from .variance import KernelBandwidths

USAGE_EXIT = 1
DATA_EXIT = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="caliper-match", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    est = sub.add_parser("estimate", help="estimate ATE/ATT from a CSV file")
    est.add_argument("--csv", required=True, help="input CSV path")
    est.add_argument("--y", required=True, help="outcome column name")
    est.add_argument("--d", required=True, help="treatment column name")
    est.add_argument("--x", required=True, help="comma-separated covariate columns")
    est.add_argument("--known-scores", default=None, metavar="COL",
                     help="column of known propensity scores; skips fitting")
    est.add_argument("--intercept", action=argparse.BooleanOptionalAction, default=True,
                     help="include an intercept in the propensity model")
    est.add_argument("--link", choices=["logit", "probit"], default="logit")
    est.add_argument("--caliper", choices=["datadep", "fixed"], default="datadep")
    est.add_argument("--s", type=float, default=1.0, help="fixed-caliper scale s")
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--seed", type=int, default=None)
    est.add_argument("--kappa0", type=float, default=1.0)
    est.add_argument("--kappa1", type=float, default=0.1)
    est.add_argument("--alpha-bw", type=float, default=1.0 / 4.5)
    est.add_argument("--beta-bw", type=float, default=1.0 / 4.25)
    est.add_argument("--out", default="report.json", help="report output path")

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    sim_sub = sim.add_subparsers(dest="experiment")

    cov = sim_sub.add_parser("coverage", help="confidence-interval coverage study")
    cov.add_argument("--n", type=int, default=4000)
    cov.add_argument("--reps", type=int, default=400)
    cov.add_argument("--alpha", type=float, default=0.05)
    cov.add_argument("--mode", choices=["known", "estimated"], default="estimated")
    cov.add_argument("--effect", choices=["homogeneous", "heterogeneous"],
                     default="homogeneous")
    cov.add_argument("--seed", type=int, default=None)
    cov.add_argument("--threads", type=int, default=None)
    cov.add_argument("--out-prefix", default="coverage")
    cov.add_argument("--acceptance", action="store_true",
                     help="print pass/fail against the built-in thresholds")

    mat = sim_sub.add_parser("matches", help="match-count growth study")
    mat.add_argument("--levels", default="1000,4000,16000",
                     help="comma-separated increasing sample sizes")
    mat.add_argument("--reps", type=int, default=50)
    mat.add_argument("--rule", choices=["datadep", "fixed"], default="fixed")
    mat.add_argument("--s", type=float, default=1.0)
    mat.add_argument("--seed", type=int, default=None)
    mat.add_argument("--out-prefix", default="matches")
    mat.add_argument("--acceptance", action="store_true")
    return parser


def _resolve_seed(seed):
    if seed is not None:
        return int(seed)
    return secrets.randbits(63)


def _resolve_threads(value):
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("CALIPER_MATCH_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _caliper_rule(kind: str, s: float) -> CaliperRule:
    if kind == "fixed":
        return CaliperRule.fixed(s)
    return CaliperRule.data_dependent()


def _check(cond, message):
    if not cond:
        raise _UsageError(message)


def _validate_common(args):
    if hasattr(args, "alpha"):
        _check(0.0 < args.alpha < 1.0, "--alpha must lie strictly between 0 and 1")
    if hasattr(args, "s"):
        _check(args.s > 0, "--s must be positive")
    if hasattr(args, "reps"):
        _check(args.reps >= 1, "--reps must be at least 1")
    if hasattr(args, "n"):
        _check(args.n >= 8, "--n must be at least 8")
    if hasattr(args, "threads") and args.threads is not None:
        _check(args.threads >= 1, "--threads must be at least 1")
    if hasattr(args, "kappa0"):
        _check(args.kappa0 > 0 and args.kappa1 > 0, "kernel scales must be positive")
        _check(0.0 < args.alpha_bw < args.beta_bw < 0.25,
               "need 0 < --alpha-bw < --beta-bw < 1/4")


def cmd_estimate(args) -> int:
    _validate_common(args)
    schema = {
        "y": args.y,
        "d": args.d,
        "x": [c for c in args.x.split(",") if c],
        "intercept": args.intercept,
    }
    seed = _resolve_seed(args.seed)
    bw = KernelBandwidths(kappa0=args.kappa0, kappa1=args.kappa1,
                          alpha=args.alpha_bw, beta=args.beta_bw)
    try:
        table = ingest_csv(args.csv, schema)
        known_scores = None
        mode = "estimated"
        if args.known_scores:
            import pandas as pd

            frame = pd.read_csv(args.csv)
            if args.known_scores not in frame.columns:
                raise CaliperMatchError(f"score column {args.known_scores!r} not found")
            known_scores = frame[args.known_scores].to_numpy(dtype=np.float64)
            if not np.all(np.isfinite(known_scores)) or np.any(
                    (known_scores <= 0.0) | (known_scores >= 1.0)):
                raise CaliperMatchError(
                    f"column {args.known_scores!r} must hold scores strictly inside (0, 1)")
            mode = "known"
        config = PipelineConfig(
            mode=mode,
            link=args.link,
            caliper=_caliper_rule(args.caliper, args.s),
            alpha=args.alpha,
            bandwidths=bw,
        )
        report = run_pipeline(table, config, seed=seed, known_scores=known_scores)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except CaliperMatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")

    est = report.estimates
    print(f"n (estimation sample): {report.n_estimation}")
    print(f"caliper: {report.caliper:.6g}")
    print(f"ATE: {est.tau_hat:.6g}   {100 * (1 - report.alpha):g}% CI "
          f"[{report.ci_ate.lo:.6g}, {report.ci_ate.hi:.6g}]")
    print(f"ATT: {est.tau_t_hat:.6g}   {100 * (1 - report.alpha):g}% CI "
          f"[{report.ci_att.lo:.6g}, {report.ci_att.hi:.6g}]")
    diag = report.diagnostics
    print(f"matches per unit: min {diag.min_m}, max {diag.max_m}, "
          f"mean {diag.mean_m:.2f}; unmatched: {diag.unmatched}")
    clamped = [k for k, v in report.variance.clamped.items() if v]
    if clamped:
        print(f"warning: variance components clamped at zero: {', '.join(clamped)}")
    print(f"report written to {args.out}")
    return 0


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _coverage_acceptance(summary: CoverageSummary) -> list:
    lines = []
    ok_cov_ate = 0.915 <= summary.coverage_ate <= 0.980
    ok_cov_att = 0.915 <= summary.coverage_att <= 0.980
    se = summary.sd_tau_hat / np.sqrt(max(summary.reps - summary.n_failed, 1))
    ok_bias = abs(summary.mean_tau_hat - summary.true_tau) <= 3 * se
    lines.append(("coverage_ate in [0.915, 0.980]", ok_cov_ate,
                  f"{summary.coverage_ate:.4f}"))
    lines.append(("coverage_att in [0.915, 0.980]", ok_cov_att,
                  f"{summary.coverage_att:.4f}"))
    lines.append(("|mean(tau_hat) - tau| <= 3 se", ok_bias,
                  f"|{summary.mean_tau_hat:.5f} - {summary.true_tau:g}| vs 3*{se:.5f}"))
    return lines


def cmd_simulate_coverage(args) -> int:
    _validate_common(args)
    seed = _resolve_seed(args.seed)
    threads = _resolve_threads(args.threads)
    dgp = default_dgp(effect=args.effect)
    try:
        summary = coverage_experiment(
            dgp, n=args.n, reps=args.reps, alpha=args.alpha, mode=args.mode,
            seed=seed, threads=threads,
        )
    except CaliperMatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT

    payload = {"schema": "caliper-match/1", "experiment": "coverage",
               "seed": seed, **summary.to_dict()}
    _write_json(f"{args.out_prefix}.json", payload)
    with open(f"{args.out_prefix}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rep", "tau_hat", "tau_t_hat", "ci_width_ate"])
        for r, (a, b, w) in enumerate(zip(summary.tau_hats, summary.tau_t_hats,
                                          summary.widths_ate)):
            writer.writerow([r, repr(float(a)), repr(float(b)), repr(float(w))])

    print(f"coverage ATE: {summary.coverage_ate:.4f}  ATT: {summary.coverage_att:.4f} "
          f"({summary.reps - summary.n_failed}/{summary.reps} reps)")
    print(f"mean tau_hat: {summary.mean_tau_hat:.5f} (true {summary.true_tau:g}), "
          f"mean CI width: {summary.mean_width_ate:.5f}")
    if args.acceptance:
        failed = 0
        for name, ok, detail in _coverage_acceptance(summary):
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
            failed += 0 if ok else 1
        return DATA_EXIT if failed else 0
    return 0


def cmd_simulate_matches(args) -> int:
    _validate_common(args)
    seed = _resolve_seed(args.seed)
    try:
        levels = [int(v) for v in args.levels.split(",") if v]
    except ValueError:
        print("error: --levels must be comma-separated integers", file=sys.stderr)
        return USAGE_EXIT
    rule = _caliper_rule("fixed" if args.rule == "fixed" else "datadep", args.s)
    dgp = default_dgp()
    try:
        rows = matches_growth_experiment(dgp, levels, args.reps, rule, seed)
    except (CaliperMatchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT

    payload = {"schema": "caliper-match/1", "experiment": "matches", "seed": seed,
               "rule": {"kind": rule.kind, "s": rule.s},
               "rows": [row.to_dict() for row in rows]}
    _write_json(f"{args.out_prefix}.json", payload)
    with open(f"{args.out_prefix}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "median_min_m", "median_max_m", "min_ratio",
                         "max_ratio", "frac_all_matched", "violations"])
        for row in rows:
            d = row.to_dict()
            writer.writerow([d[k] for k in ("n", "median_min_m", "median_max_m",
                                            "min_ratio", "max_ratio",
                                            "frac_all_matched", "violations")])

    for row in rows:
        print(f"n={row.n}: median min M={row.median_min_m:g}, "
              f"median max M={row.median_max_m:g}, max/log n={row.max_ratio:.2f}, "
              f"all matched in {100 * row.frac_all_matched:.0f}% of reps")
    if args.acceptance:
        checks = []
        ratios = [row.max_ratio for row in rows]
        checks.append(("median max M / log n band <= 3",
                       max(ratios) <= 3 * min(ratios),
                       f"ratios {['%.2f' % r for r in ratios]}"))
        fracs = [row.frac_all_matched for row in rows]
        if rule.kind == "fixed":
            nondec = all(b >= a - 1e-12 for a, b in zip(fracs, fracs[1:]))
            checks.append(("frac(min M >= 1) nondecreasing, >= 0.95 at top",
                           nondec and fracs[-1] >= 0.95,
                           f"fracs {['%.2f' % f for f in fracs]}"))
        else:
            checks.append(("data-dependent: min M >= 1 in 100% of reps",
                           all(row.violations == 0 and row.frac_all_matched == 1.0
                               for row in rows),
                           f"violations {[row.violations for row in rows]}"))
        failed = 0
        for name, ok, detail in checks:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
            failed += 0 if ok else 1
        return DATA_EXIT if failed else 0
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError(parser.format_usage())
        if args.command == "estimate":
            return cmd_estimate(args)
        if args.command == "simulate":
            if args.experiment == "coverage":
                return cmd_simulate_coverage(args)
            if args.experiment == "matches":
                return cmd_simulate_matches(args)
            raise _UsageError("simulate needs a subcommand: coverage or matches")
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return USAGE_EXIT
    except CaliperMatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except Exception as exc:  # noqa: BLE001 - the shell contract is exit 2
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
