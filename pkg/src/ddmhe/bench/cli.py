"""Command line entry point: ``ddmhe <subcommand> --config <path> [options]``.

Exit codes: 0 success, 2 configuration rejected, 3 solver failure during a
run, 4 assumption check failed (bypass with ``--force``), 5 error bound
violated.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..euoss import (AssumptionViolation, constants_report, format_csv_row, format_key_value,
                     nominal_bound_params, robust_bound_params)
from ..mhe import HankelBlocks, StepRecord, write_estimates_csv
from ..plant import read_dataset, write_dataset
from .config import ESTIMATORS, ConfigSchemaError, load_config
from .pipeline import (BenchOutcome, check_bound_domination, compare_runs, estimator_config, prepare,
                       prepare_seed, radii, run_bench, run_one, validation_for, write_artifacts, write_compare)
from .report import emit_csv

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ASSUMPTION, EXIT_BOUND = 0, 2, 3, 4, 5

log = logging.getLogger("ddmhe")


def _seeds(text):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddmhe", description="Data-driven moving horizon estimation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "collect": "simulate the offline experiment and write the data sets",
        "constants": "detectability constants and bound constants",
        "estimate": "run one estimator on one seed",
        "bench": "all configured estimators, R settings and seeds",
        "compare": "data-driven vs model-based RMSE table",
        "check-bounds": "check that errors stay below the theoretical bounds",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--out", default=None, help="output directory (default: from the config)")
        p.add_argument("--seeds", type=_seeds, default=None, help="comma-separated seeds overriding the config")
        p.add_argument("--force", action="store_true", help="run even if assumption checks fail")
        p.add_argument("--mode", choices=ESTIMATORS, default=None, help="restrict to one estimator")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "estimate":
            p.add_argument("--r-setting", default=None, help="label from R_settings (default: first)")
            p.add_argument("--dataset", default=None, help="offline CSV written by 'collect'")
    return parser


def _report_validation(outcome) -> bool:
    ok = True
    for (est, R, s), rep in outcome.validation.items():
        for c in rep.failures():
            print(f"assumption check failed [{est} {R} seed={s}] {c.name}: {c.detail}", file=sys.stderr)
            ok = False
    return ok


def _solver_exit(failures, out_dir) -> int:
    if not failures:
        return EXIT_OK
    for lab, s, t, st in failures[:20]:
        print(f"solver failure: {lab} seed={s} t={t} status={st}", file=sys.stderr)
    print(f"{len(failures)} non-optimal steps; see {out_dir / 'failures.log'}", file=sys.stderr)
    return EXIT_SOLVER


def cmd_collect(cfg, args, out_dir):
    for s in args.seeds or cfg.seeds:
        ctx = prepare_seed(cfg, s)
        path, _ = write_dataset(ctx.dataset, out_dir / f"seed_{s}" / "offline.csv")
        print(f"wrote {path}")
    return EXIT_OK


def cmd_constants(cfg, args, out_dir):
    seed = (args.seeds or cfg.seeds)[0]
    ctx = prepare_seed(cfg, seed)
    if ctx.constants is None:
        print(f"constants unavailable: {ctx.constants_error}", file=sys.stderr)
        return EXIT_OK if args.force else EXIT_ASSUMPTION
    c = ctx.constants
    report = constants_report(c)
    status = EXIT_OK
    for R, Rw in cfg.R_settings.items():
        try:
            nb = nominal_bound_params(c, cfg.P_weight, Rw, cfg.rho, cfg.L)
        except AssumptionViolation as exc:
            print(f"assumption check failed: {exc}", file=sys.stderr)
            status = EXIT_ASSUMPTION
            continue
        report.update({f"{R}_nominal_{k}": v for k, v in nb.__dict__.items()})
        u_max, x_max = radii(cfg, ctx)
        rb = robust_bound_params(c, ctx.dataset, estimator_config(cfg, "dd-robust", R), u_max, x_max,
                                 allow_short_horizon=True)
        report.update({f"{R}_robust_{k}": v for k, v in rb.__dict__.items()})
    report["eta_le_rho"] = c.eta <= cfg.rho
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "constants.txt").write_text(format_key_value(report))
    (out_dir / "constants.csv").write_text(format_csv_row(report))
    for key in ("eta", "p0", "r0"):
        print(f"{key}={report[key]!r}")
    for R in cfg.R_settings:
        if f"{R}_nominal_L_min" in report:
            print(f"{R}: L_min={report[f'{R}_nominal_L_min']} robust_L_min={report[f'{R}_robust_L_min']}")
    print(f"eta <= rho ({cfg.rho}): {'pass' if c.eta <= cfg.rho else 'FAIL'}")
    if c.eta > cfg.rho:
        status = EXIT_ASSUMPTION
    return EXIT_OK if args.force else status


def cmd_estimate(cfg, args, out_dir):
    seed = (args.seeds or cfg.seeds)[0]
    mode = args.mode or cfg.estimators[0]
    R = args.r_setting or next(iter(cfg.R_settings))
    if R not in cfg.R_settings:
        print(f"unknown R setting {R!r}; available: {', '.join(cfg.R_settings)}", file=sys.stderr)
        return EXIT_CONFIG
    ctx = prepare_seed(cfg, seed)
    if args.dataset:
        ctx.dataset = read_dataset(args.dataset)
        ctx.blocks = HankelBlocks.from_dataset(ctx.dataset, cfg.L)
        ctx.identified = None
    outcome = BenchOutcome(validation={(mode, R, seed): validation_for(cfg, ctx, mode, R)})
    if not _report_validation(outcome) and not args.force:
        return EXIT_ASSUMPTION
    run = run_one(cfg, ctx, mode, R)
    stem = f"estimate_{mode}_{R}_seed{seed}"
    emit_csv(run, out_dir / f"{stem}.csv")
    recs = [StepRecord(t, run.x_hat[t], run.cost[t], run.status[t], run.solve_ms[t]) for t in range(run.T)]
    write_estimates_csv(recs, out_dir / f"{stem}_stream.csv", run.n)
    print(f"wrote {out_dir / (stem + '.csv')}; final error {run.err_norm[-1]:.6g}")
    outcome.runs.append(run)
    return _solver_exit(outcome.solver_failures(), out_dir)


def _run(cfg, args, out_dir, estimators):
    outcome = prepare(cfg, args.seeds, estimators)
    if not _report_validation(outcome) and not args.force:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_artifacts(cfg, outcome, out_dir)
        return outcome, EXIT_ASSUMPTION
    run_bench(cfg, estimators=estimators, outcome=outcome)
    write_artifacts(cfg, outcome, out_dir)
    return outcome, None


def cmd_bench(cfg, args, out_dir):
    estimators = (args.mode,) if args.mode else cfg.estimators
    outcome, code = _run(cfg, args, out_dir, estimators)
    if code is not None:
        return code
    print(f"{len(outcome.runs)} runs written to {out_dir}")
    return _solver_exit(outcome.solver_failures(), out_dir)


def cmd_compare(cfg, args, out_dir):
    dd = args.mode if args.mode in ("dd-nominal", "dd-robust") else "dd-robust"
    outcome, code = _run(cfg, args, out_dir, (dd, "model-based"))
    if code is not None:
        return code
    rows = compare_runs(outcome.runs, cfg.steady_state_fraction)
    write_compare(rows, out_dir / "compare.csv")
    wins = sum(r["dd_wins"] for r in rows)
    print(f"data-driven RMSE(x3,x4) <= model-based in {wins} of {len(rows)} (seed, R) pairs")
    for R in cfg.R_settings:
        sub = [r for r in rows if r["R_setting"] == R]
        if sub:
            print(f"  {R}: dd {np.mean([r['dd_combined'] for r in sub]):.4g} "
                  f"mb {np.mean([r['mb_combined'] for r in sub]):.4g}")
    return _solver_exit(outcome.solver_failures(), out_dir)


def cmd_check_bounds(cfg, args, out_dir):
    estimators = (args.mode,) if args.mode else tuple(e for e in cfg.estimators if e != "model-based")
    if not estimators:
        estimators = ("dd-nominal",)
    outcome, code = _run(cfg, args, out_dir, estimators)
    if code is not None:
        return code
    checks = check_bound_domination(outcome.runs)
    lines = []
    for c in checks:
        lines.append(f"{c.label} seed={c.seed} max_error={c.max_error!r} min_margin={c.worst_margin!r} "
                     f"violations={len(c.violations)}")
    for r in outcome.runs:
        if r.bound is None:
            lines.append(f"{r.label} seed={r.seed} max_error={float(r.err_norm.max())!r} bound=unavailable")
    (out_dir / "bounds.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    code = _solver_exit(outcome.solver_failures(), out_dir)
    if code:
        return code
    return EXIT_OK if all(c.ok for c in checks) else EXIT_BOUND


COMMANDS = {"collect": cmd_collect, "constants": cmd_constants, "estimate": cmd_estimate,
            "bench": cmd_bench, "compare": cmd_compare, "check-bounds": cmd_check_bounds}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigSchemaError as exc:
        for m in exc.messages:
            print(f"config error: {m}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out if args.out else cfg.output_dir)
    return COMMANDS[args.command](cfg, args, out_dir)


if __name__ == "__main__":
    sys.exit(main())
