"""Experiment pipelines: offline collection, estimator runs, bounds, tables."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..baseline import IdentifiedModel, ModelBasedMHE, identify_lsq
from ..euoss import (AssumptionViolation, EUossConstants, estimate_euoss_constants, nominal_bound_params,
                     nominal_error_bound, propose_radii, robust_bound_params, robust_error_bound)
from ..mhe import DataDrivenMHE, EstimatorConfig, HankelBlocks, ValidationReport, validate_config
from ..plant import DataSet, FourTankParams, SimRecord, collect_offline_data, simulate, sinusoidal_input
from ..solver.observer import DetectabilityError
from ..solver.qp import OPTIMAL
from .config import ExperimentConfig
from .report import (RunResult, emit_aggregate, emit_csv, emit_summary, emit_svg_lineplot, rmse,
                     steady_state_window)

log = logging.getLogger(__name__)

_STREAMS = {"input": 1, "state": 2, "output": 3, "online": 4}


def derive_seed(seed: int, stream: str) -> int:
    """Independent, reproducible sub-seed per random stream of one experiment seed."""
    return 1000 * int(seed) + _STREAMS[stream]


def offline_dataset(cfg: ExperimentConfig, seed: int) -> DataSet:
    ds = collect_offline_data(
        cfg.plant,
        cfg.offline_input.with_seed(derive_seed(seed, "input")),
        cfg.N,
        cfg.offline_state_noise.with_seed(derive_seed(seed, "state")),
        cfg.offline_output_noise.with_seed(derive_seed(seed, "output")),
        x0=cfg.offline_x0,
    )
    # the declared bounds used by the estimator come from the configuration
    return replace(ds, eps_x_bound=cfg.eps_x_bound, eps_y_bound=cfg.eps_y_bound)


def online_input(cfg: ExperimentConfig) -> np.ndarray:
    return sinusoidal_input(cfg.T, cfg.m, cfg.input_offset, cfg.input_amplitude, cfg.input_period)


def online_record(cfg: ExperimentConfig, seed: int) -> SimRecord:
    return simulate(cfg.plant, cfg.x0, online_input(cfg), cfg.online_noise.with_seed(derive_seed(seed, "online")))


def estimator_config(cfg: ExperimentConfig, estimator: str, R_label: str) -> EstimatorConfig:
    robust = estimator == "dd-robust"
    return EstimatorConfig(
        L=cfg.L, rho=cfg.rho, P_weight=cfg.P_weight, R_weight=cfg.R_settings[R_label],
        state_lower=cfg.state_lower, state_upper=cfg.state_upper,
        mode="robust" if robust else "nominal",
        c_alpha=cfg.c_alpha if robust else None, c_sigma_x=cfg.c_sigma_x if robust else None,
        eps_x_bound=cfg.eps_x_bound if robust else None, eps_y_bound=cfg.eps_y_bound if robust else None,
        settings=cfg.settings,
    )


@dataclass
class SeedContext:
    seed: int
    dataset: DataSet
    record: SimRecord
    blocks: HankelBlocks
    constants: Optional[EUossConstants] = None
    constants_error: Optional[str] = None
    identified: Optional[IdentifiedModel] = None


def compute_constants(cfg: ExperimentConfig, ds: DataSet):
    """Detectability constants, or ``(None, reason)`` when they are not available.

    Simulated data carry clean copies; the constants are computed from those,
    which is the setting in which the data-driven procedure is exact. The
    nonlinear plant has no such constants.
    """
    if isinstance(cfg.plant, FourTankParams):
        return None, "nonlinear plant: detectability constants not defined"
    try:
        clean = ds.x_d_true is not None and ds.y_d_true is not None
        return estimate_euoss_constants(ds, lyap_Q=cfg.lyap_Q, observer=cfg.observer,
                                        settings=cfg.settings, use_clean=clean), None
    except (ValueError, DetectabilityError) as exc:
        return None, str(exc)


def prepare_seed(cfg: ExperimentConfig, seed: int) -> SeedContext:
    ds = offline_dataset(cfg, seed)
    ctx = SeedContext(seed, ds, online_record(cfg, seed), HankelBlocks.from_dataset(ds, cfg.L))
    ctx.constants, ctx.constants_error = compute_constants(cfg, ds)
    if "model-based" in cfg.estimators:
        ctx.identified = identify_lsq(ds)
    return ctx


def radii(cfg: ExperimentConfig, ctx: SeedContext) -> tuple[float, float]:
    u = np.vstack([ctx.dataset.u_d.samples, ctx.record.u.samples])
    x_off = ctx.dataset.x_d_true.samples if ctx.dataset.x_d_true is not None else ctx.dataset.x_d_noisy.samples
    x = np.vstack([x_off, ctx.record.x.samples])
    u_prop, x_prop = propose_radii(u, x, cfg.radius_margin)
    return (cfg.u_max if cfg.u_max is not None else u_prop,
            cfg.x_max if cfg.x_max is not None else x_prop)


def bound_series(cfg: ExperimentConfig, ctx: SeedContext, estimator: str, R_label: str):
    """Theoretical error bound per time step, or ``None`` if it cannot be evaluated."""
    c = ctx.constants
    if c is None or estimator == "model-based":
        return None, {}
    ecfg = estimator_config(cfg, estimator, R_label)
    e0 = float(np.linalg.norm(cfg.x0 - cfg.prior0))
    v = ctx.record.v.samples
    try:
        if estimator == "dd-nominal":
            prm = nominal_bound_params(c, ecfg.P_weight, ecfg.R_weight, cfg.rho, cfg.L)
            series = np.array([nominal_error_bound(t, e0, v, prm) for t in range(cfg.T)])
            return series, {"L_min": prm.L_min, "rate": prm.lambda_tilde}
        u_max, x_max = radii(cfg, ctx)
        prm = robust_bound_params(c, ctx.dataset, ecfg, u_max, x_max, allow_short_horizon=True)
        series = np.array([robust_error_bound(t, e0, v, prm) for t in range(cfg.T)])
        return series, {"L_min": prm.L_min, "rate": prm.lambda_check, "gamma": prm.gamma_value}
    except AssumptionViolation as exc:
        log.warning("no bound for %s: %s", estimator, exc)
        return None, {}


def validation_for(cfg: ExperimentConfig, ctx: SeedContext, estimator: str, R_label: str) -> ValidationReport:
    ecfg = estimator_config(cfg, estimator, R_label)
    L_min = None
    if ctx.constants is not None and estimator != "model-based":
        try:
            L_min = nominal_bound_params(ctx.constants, ecfg.P_weight, ecfg.R_weight, cfg.rho, cfg.L).L_min
        except AssumptionViolation:
            pass
    consts = ctx.constants if estimator != "model-based" else None
    return validate_config(ecfg, ctx.blocks, consts, ctx.dataset, L_min)


def run_one(cfg: ExperimentConfig, ctx: SeedContext, estimator: str, R_label: str) -> RunResult:
    ecfg = estimator_config(cfg, estimator, R_label)
    if estimator == "model-based":
        est = ModelBasedMHE(ctx.identified if ctx.identified is not None else identify_lsq(ctx.dataset),
                            ecfg, cfg.prior0)
    else:
        est = DataDrivenMHE(ctx.blocks, ecfg, cfg.prior0)
    rec = ctx.record
    x_hat = est.run(rec.u.samples, rec.y_measured.samples)
    recs = est.records
    bound, info = bound_series(cfg, ctx, estimator, R_label)
    return RunResult(
        estimator=estimator, R_setting=R_label, seed=ctx.seed, x_true=rec.x.samples.copy(), x_hat=x_hat,
        cost=np.array([r.cost for r in recs]), status=[r.status for r in recs],
        solve_ms=np.array([r.solve_ms for r in recs]), bound=bound, meta=info)


@dataclass
class BenchOutcome:
    runs: list = field(default_factory=list)
    validation: dict = field(default_factory=dict)
    contexts: dict = field(default_factory=dict)

    @property
    def validation_ok(self) -> bool:
        return all(r.ok for r in self.validation.values())

    def solver_failures(self) -> list:
        out = []
        for r in self.runs:
            for t, s in enumerate(r.status):
                if s not in (OPTIMAL, "prior"):
                    out.append((r.label, r.seed, t, s))
        return out


def prepare(cfg: ExperimentConfig, seeds: Optional[Sequence[int]] = None,
            estimators: Optional[Sequence[str]] = None) -> BenchOutcome:
    """Offline data, constants and assumption checks for every seed; no estimation yet."""
    seeds = cfg.seeds if seeds is None else tuple(seeds)
    estimators = cfg.estimators if estimators is None else tuple(estimators)
    out = BenchOutcome()
    for s in seeds:
        ctx = prepare_seed(cfg, s)
        out.contexts[s] = ctx
        for est in estimators:
            for R in cfg.R_settings:
                out.validation[(est, R, s)] = validation_for(cfg, ctx, est, R)
    return out


def run_bench(cfg: ExperimentConfig, seeds=None, estimators=None, outcome: Optional[BenchOutcome] = None) -> BenchOutcome:
    estimators = cfg.estimators if estimators is None else tuple(estimators)
    out = outcome if outcome is not None else prepare(cfg, seeds, estimators)
    for s, ctx in out.contexts.items():
        for est in estimators:
            for R in cfg.R_settings:
                out.runs.append(run_one(cfg, ctx, est, R))
    return out


def write_artifacts(cfg: ExperimentConfig, out: BenchOutcome, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_seed = {}
    for r in out.runs:
        emit_csv(r, out_dir / f"seed_{r.seed}" / f"{r.label}.csv")
        by_seed.setdefault(r.seed, []).append(r)
    if cfg.plots:
        for seed, runs in by_seed.items():
            t = np.arange(runs[0].T)
            for i in range(runs[0].n):
                series = {"true": (t, runs[0].x_true[:, i])}
                series.update({r.label: (t, r.x_hat[:, i]) for r in runs})
                emit_svg_lineplot(series, out_dir / f"seed_{seed}" / f"x{i + 1}.svg",
                                  title=f"{cfg.name}: x{i + 1}, seed {seed}", ylabel=f"x{i + 1}")
    if out.runs:
        emit_aggregate(out.runs, out_dir / "aggregate.csv", cfg.steady_state_fraction)
        emit_summary(out.runs, out_dir / "summary.csv", cfg.steady_state_fraction)
    lines = []
    for (est, R, s), rep in out.validation.items():
        lines.append(f"# {est} {R} seed={s}")
        lines.extend(rep.lines())
    (out_dir / "validation.txt").write_text("\n".join(lines) + "\n")
    fails = out.solver_failures()
    if fails:
        (out_dir / "failures.log").write_text(
            "".join(f"{lab} seed={s} t={t} status={st}\n" for lab, s, t, st in fails))
    return out_dir


# ---------------------------------------------------------------------------
# comparisons and checks

def combined_rmse(run: RunResult, states=(2, 3), fraction: float = 0.5) -> float:
    win = steady_state_window(run.T, fraction)
    return float(np.sqrt(np.mean([rmse(run, i, win) ** 2 for i in states])))


def compare_runs(runs: Sequence[RunResult], fraction: float = 0.5, states=(2, 3)) -> list:
    """Per seed and R setting: data-driven vs model-based RMSE on ``states``.

    The data-driven side is the robust variant when present, otherwise the
    nominal one. A seed counts as a data-driven win when its combined RMSE is
    not larger than the model-based one.
    """
    index = {(r.estimator, r.R_setting, r.seed): r for r in runs}
    rows = []
    for (est, R, s), mb in sorted(index.items(), key=lambda kv: (kv[0][1], kv[0][2])):
        if est != "model-based":
            continue
        dd = index.get(("dd-robust", R, s)) or index.get(("dd-nominal", R, s))
        if dd is None:
            continue
        win = steady_state_window(dd.T, fraction)
        d_c, m_c = combined_rmse(dd, states, fraction), combined_rmse(mb, states, fraction)
        rows.append({"R_setting": R, "seed": s, "dd_estimator": dd.estimator,
                     **{f"dd_rmse_x{i + 1}": rmse(dd, i, win) for i in states},
                     **{f"mb_rmse_x{i + 1}": rmse(mb, i, win) for i in states},
                     "dd_combined": d_c, "mb_combined": m_c, "dd_wins": d_c <= m_c})
    return rows


def write_compare(rows: list, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return path
    keys = list(rows[0])
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(str(r[k]) if isinstance(r[k], (str, bool, int)) else repr(float(r[k])) for k in keys))
    path.write_text("\n".join(lines) + "\n")
    return path


@dataclass
class BoundCheck:
    label: str
    seed: int
    max_error: float
    worst_margin: float
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def check_bound_domination(runs: Sequence[RunResult], rtol: float = 1e-9, atol: float = 1e-6) -> list:
    """For runs carrying a bound, list the times where the error exceeds it.

    ``atol`` absorbs the QP solver's own accuracy; a zero bound (exact prior,
    no noise) can otherwise be "violated" by round-off.
    """
    out = []
    for r in runs:
        if r.bound is None:
            continue
        e = r.err_norm
        slack = r.bound * (1 + rtol) + atol - e
        bad = [int(t) for t in np.nonzero(slack < 0)[0]]
        out.append(BoundCheck(r.label, r.seed, float(e.max()), float(np.min(r.bound - e)), bad))
    return out


def increment_variance(run: RunResult, states=(2, 3), fraction: float = 0.5) -> float:
    """Sample variance of the step-to-step changes of the selected estimates (steady window)."""
    start, stop = steady_state_window(run.T, fraction)
    d = np.diff(run.x_hat[start:stop][:, list(states)], axis=0)
    return float(np.mean(np.var(d, axis=0, ddof=1)))
