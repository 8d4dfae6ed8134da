"""Data-driven moving horizon estimation.

The estimator never sees a model. Its only "model" is a set of Hankel
matrices built from one offline input/state/output record, and every
candidate trajectory in the horizon is a combination ``H @ alpha`` of their
columns. The programs are condensed: the state sequence and the output
slack are eliminated, leaving ``alpha`` (nominal) or ``(alpha, sigma_x)``
(robust) as decision variables.

Timing follows the prediction form. At time ``t`` the windows hold
``u(t-w .. t-1)`` and ``y(t-w .. t-1)`` with ``w = min(t, L)``, and the
published estimate is the last state of the reconstructed window.
"""
from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .plant import DataSet
from .solver.linalg import check_pd, lambda_min
from .solver.qp import OPTIMAL, QuadraticProgram, SolveResult, SolverSettings, solve_qp
from .trajectories import build_hankel, is_persistently_exciting

log = logging.getLogger(__name__)

MODES = ("nominal", "robust")


class ConfigError(ValueError):
    pass


class EstimatorStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning of the data-driven estimator.

    ``state_lower``/``state_upper`` describe the box constraint set; ``None``
    means unbounded on that side. Robust mode additionally needs the two
    regularizer weights and the declared offline noise bounds.
    """

    L: int
    rho: float
    P_weight: np.ndarray
    R_weight: np.ndarray
    state_lower: Optional[np.ndarray] = None
    state_upper: Optional[np.ndarray] = None
    mode: str = "nominal"
    c_alpha: Optional[float] = None
    c_sigma_x: Optional[float] = None
    eps_x_bound: Optional[float] = None
    eps_y_bound: Optional[float] = None
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ConfigError(f"L must be a positive integer, got {self.L}")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"rho must lie in (0, 1), got {self.rho}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        try:
            P = check_pd(self.P_weight, "P_weight")
            R = check_pd(self.R_weight, "R_weight")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        n = P.shape[0]
        lo = np.full(n, -np.inf) if self.state_lower is None else np.asarray(self.state_lower, dtype=float).reshape(-1)
        hi = np.full(n, np.inf) if self.state_upper is None else np.asarray(self.state_upper, dtype=float).reshape(-1)
        if lo.shape[0] != n or hi.shape[0] != n:
            raise ConfigError(f"state bounds must have length n={n}")
        if np.any(lo > hi):
            raise ConfigError("state_lower exceeds state_upper")
        if self.mode == "robust":
            for name in ("c_alpha", "c_sigma_x"):
                val = getattr(self, name)
                if val is None or not val > 0:
                    raise ConfigError(f"robust mode needs a positive {name}, got {val}")
            for name in ("eps_x_bound", "eps_y_bound"):
                val = getattr(self, name)
                if val is not None and not val >= 0:
                    raise ConfigError(f"{name} must be nonnegative, got {val}")
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "P_weight", P)
        object.__setattr__(self, "R_weight", R)
        object.__setattr__(self, "state_lower", lo)
        object.__setattr__(self, "state_upper", hi)

    @property
    def n(self) -> int:
        return self.P_weight.shape[0]

    @property
    def p(self) -> int:
        return self.R_weight.shape[0]

    @property
    def regularizer_weight(self) -> float:
        """``c_alpha * (eps_x + eps_y)``; zero in nominal mode."""
        if self.mode != "robust":
            return 0.0
        if self.eps_x_bound is None or self.eps_y_bound is None:
            raise ConfigError("robust mode needs eps_x_bound and eps_y_bound")
        return float(self.c_alpha) * (float(self.eps_x_bound) + float(self.eps_y_bound))


@dataclass(frozen=True)
class DepthBlocks:
    """Hankel matrices for a window of ``depth`` inputs/outputs and ``depth + 1`` states."""

    depth: int
    Hu: np.ndarray
    Hy: np.ndarray
    Hx: np.ndarray


class HankelBlocks:
    """Immutable Hankel data for depths ``1..L``; shareable across estimators.

    For depth ``k`` the input and output matrices use ``u^d, y^d`` over
    ``[0, N-2]`` and the state matrix uses ``x^d`` over ``[0, N-1]``, so all
    three have ``N - k`` columns.
    """

    def __init__(self, u_d, x_d, y_d, L: int):
        u_d, x_d, y_d = (np.asarray(a, dtype=float) for a in (u_d, x_d, y_d))
        u_d, x_d, y_d = (a[:, None] if a.ndim == 1 else a for a in (u_d, x_d, y_d))
        N = u_d.shape[0]
        if x_d.shape[0] != N or y_d.shape[0] != N:
            raise ValueError("offline sequences must share their length")
        if L + 1 > N - 1:
            raise ValueError(f"horizon L={L} too long for N={N} offline samples")
        self.N, self.L = N, L
        self.m, self.n, self.p = u_d.shape[1], x_d.shape[1], y_d.shape[1]
        self.u_d, self.x_d = u_d, x_d
        self._depths = {}
        for k in range(1, L + 1):
            Hu = build_hankel(u_d[:N - 1], k).data
            Hy = build_hankel(y_d[:N - 1], k).data
            Hx = build_hankel(x_d, k + 1).data
            self._depths[k] = DepthBlocks(k, Hu, Hy, Hx)

    @classmethod
    def from_dataset(cls, ds: DataSet, L: int) -> "HankelBlocks":
        return cls(ds.u_d.samples, ds.x_d_noisy.samples, ds.y_d_noisy.samples, L)

    def at_depth(self, k: int) -> DepthBlocks:
        if k not in self._depths:
            raise ValueError(f"no Hankel blocks for depth {k} (have 1..{self.L})")
        return self._depths[k]

    @property
    def Hu(self) -> np.ndarray:
        return self._depths[self.L].Hu

    @property
    def Hy(self) -> np.ndarray:
        return self._depths[self.L].Hy

    @property
    def Hx(self) -> np.ndarray:
        return self._depths[self.L].Hx


@dataclass
class StepRecord:
    t: int
    x_hat: np.ndarray
    cost: float
    status: str
    solve_ms: float


@dataclass
class EstimatorState:
    """Sliding windows and the estimate history of one estimator stream."""

    L: int
    prior0: np.ndarray
    t: int = 0
    window_u: deque = field(default=None)
    window_y: deque = field(default=None)
    estimate_history: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    def __post_init__(self):
        self.prior0 = np.asarray(self.prior0, dtype=float).reshape(-1)
        if self.window_u is None:
            self.window_u = deque(maxlen=self.L)
        if self.window_y is None:
            self.window_y = deque(maxlen=self.L)

    @property
    def window(self) -> int:
        return min(self.t, self.L)

    def prior(self) -> tuple[np.ndarray, int]:
        """Prior estimate and the time it refers to (filtering prior)."""
        if self.t < self.L:
            return self.prior0, 0
        return self.estimate_history[self.t - self.L], self.t - self.L

    def u_window(self) -> np.ndarray:
        return np.concatenate(list(self.window_u))

    def y_window(self) -> np.ndarray:
        return np.concatenate(list(self.window_y))


@dataclass
class MheSolution:
    x_hat_seq: np.ndarray
    sigma_y_hat: np.ndarray
    alpha_hat: np.ndarray
    cost: float
    solver_report: SolveResult
    sigma_x_hat: Optional[np.ndarray] = None
    hankel_residual: float = 0.0

    @property
    def x_hat(self) -> np.ndarray:
        return self.x_hat_seq[-1]


@dataclass
class CondensedProblem:
    """A QP plus what is needed to map its solution back to trajectories."""

    qp: QuadraticProgram
    blocks: DepthBlocks
    u_window: np.ndarray
    y_window: np.ndarray
    robust: bool

    def decode(self, res: SolveResult) -> MheSolution:
        b = self.blocks
        k = b.Hu.shape[1]
        alpha = res.z[:k]
        xs = b.Hx @ alpha
        sigma_x = None
        if self.robust:
            sigma_x = res.z[k:]
            xs = xs - sigma_x
        n = b.Hx.shape[0] // (b.depth + 1)
        p = b.Hy.shape[0] // b.depth
        sig_y = (self.y_window - b.Hy @ alpha).reshape(b.depth, p)
        resid = float(np.abs(b.Hu @ alpha - self.u_window).max(initial=0.0))
        return MheSolution(
            x_hat_seq=xs.reshape(b.depth + 1, n),
            sigma_y_hat=sig_y,
            alpha_hat=alpha,
            cost=res.objective,
            solver_report=res,
            sigma_x_hat=None if sigma_x is None else sigma_x.reshape(b.depth + 1, n),
            hankel_residual=resid,
        )


def stage_weights(depth: int, rho: float) -> np.ndarray:
    """Discount of the output residual at window position ``i`` (0 = oldest).

    Position ``i`` holds time ``t - depth + i``, i.e. ``k = depth - i`` steps
    back, and gets weight ``rho**k``.
    """
    return rho ** (depth - np.arange(depth, dtype=float))


def _assemble(b: DepthBlocks, u_w, y_w, prior, cfg: EstimatorConfig, robust: bool) -> CondensedProblem:
    depth = b.depth
    n = cfg.n
    cols = b.Hu.shape[1]
    if u_w.shape[0] != b.Hu.shape[0] or y_w.shape[0] != b.Hy.shape[0]:
        raise EstimatorStateError(f"window sizes {u_w.shape[0]}/{y_w.shape[0]} do not match depth {depth}")
    P, R = cfg.P_weight, cfg.R_weight
    prior_w = cfg.rho ** depth
    w = stage_weights(depth, cfg.rho)
    ns = n * (depth + 1) if robust else 0
    d = cols + ns

    # affine maps z -> first state of the window, z -> stacked output residual
    Ex0 = np.zeros((n, d))
    Ex0[:, :cols] = b.Hx[:n]
    if robust:
        Ex0[:, cols:cols + n] = -np.eye(n)
    Wy = np.kron(np.diag(w), R)
    Hy = b.Hy

    H = np.zeros((d, d))
    f = np.zeros(d)
    H += 2 * prior_w * Ex0.T @ P @ Ex0
    f += -2 * prior_w * Ex0.T @ P @ prior
    H[:cols, :cols] += 2 * Hy.T @ Wy @ Hy
    f[:cols] += -2 * Hy.T @ Wy @ y_w
    offset = prior_w * prior @ P @ prior + y_w @ Wy @ y_w
    if robust:
        idx = np.arange(cols)
        H[idx, idx] += 2 * cfg.regularizer_weight
        sidx = np.arange(cols, d)
        H[sidx, sidx] += 2 * float(cfg.c_sigma_x)

    A_eq = np.zeros((b.Hu.shape[0], d))
    A_eq[:, :cols] = b.Hu

    lo = np.tile(cfg.state_lower, depth + 1)
    hi = np.tile(cfg.state_upper, depth + 1)
    keep = np.isfinite(lo) | np.isfinite(hi)
    A_x = np.zeros((n * (depth + 1), d))
    A_x[:, :cols] = b.Hx
    if robust:
        A_x[:, cols:] = -np.eye(ns)
    qp = QuadraticProgram(H=0.5 * (H + H.T), f=f, A_eq=A_eq, b_eq=u_w,
                          A_in=A_x[keep], lb=lo[keep], ub=hi[keep], offset=float(offset))
    return CondensedProblem(qp, b, u_w, y_w, robust)


def _require_robust(cfg: EstimatorConfig):
    if cfg.mode != "robust":
        raise ConfigError("robust program requested but the configuration is nominal")
    if cfg.eps_x_bound is None or cfg.eps_y_bound is None:
        raise ConfigError("robust mode needs eps_x_bound and eps_y_bound")


def build_nominal_problem(blocks: HankelBlocks, state: EstimatorState, cfg: EstimatorConfig) -> CondensedProblem:
    """Condensed horizon-``L`` program at time ``t >= L``."""
    if state.t < cfg.L or len(state.window_u) < cfg.L:
        raise EstimatorStateError(f"MHE needs a full window (t={state.t}, L={cfg.L})")
    prior, _ = state.prior()
    return _assemble(blocks.at_depth(cfg.L), state.u_window(), state.y_window(), prior, cfg, robust=False)


def build_fie_problem(blocks: HankelBlocks, state: EstimatorState, cfg: EstimatorConfig,
                      robust: bool = False) -> CondensedProblem:
    """Full-information program at ``1 <= t < L``, anchored at ``x_hat(0)``."""
    t = state.t
    if not 1 <= t < cfg.L:
        raise EstimatorStateError(f"full-information startup needs 1 <= t < L, got t={t}")
    if robust:
        _require_robust(cfg)
    return _assemble(blocks.at_depth(t), state.u_window(), state.y_window(), state.prior0, cfg, robust)


def build_robust_problem(blocks: HankelBlocks, state: EstimatorState, cfg: EstimatorConfig) -> CondensedProblem:
    """Robust program at ``t >= L`` with decision variables ``(alpha, sigma_x)``."""
    _require_robust(cfg)
    if state.t < cfg.L or len(state.window_u) < cfg.L:
        raise EstimatorStateError(f"MHE needs a full window (t={state.t}, L={cfg.L})")
    prior, _ = state.prior()
    return _assemble(blocks.at_depth(cfg.L), state.u_window(), state.y_window(), prior, cfg, robust=True)


def build_problem(blocks: HankelBlocks, state: EstimatorState, cfg: EstimatorConfig) -> CondensedProblem:
    """The program due at ``state.t`` (``t >= 1``) for the configured mode."""
    robust = cfg.mode == "robust"
    if state.t < cfg.L:
        return build_fie_problem(blocks, state, cfg, robust=robust)
    if robust:
        return build_robust_problem(blocks, state, cfg)
    return build_nominal_problem(blocks, state, cfg)


def advance(state: EstimatorState, solve_fn: Callable[[EstimatorState], tuple], new_u=None, new_y=None):
    """Shared bookkeeping of one estimator tick.

    ``solve_fn(state)`` returns ``(x_hat, cost, status)`` for ``t >= 1``. On a
    non-optimal status the previous estimate is reused (degraded mode).
    """
    t = state.t
    if t == 0:
        x_hat, cost, status, ms = state.prior0.copy(), 0.0, "prior", 0.0
    else:
        t0 = time.perf_counter()
        x_hat, cost, status = solve_fn(state)
        ms = 1e3 * (time.perf_counter() - t0)
        if status != OPTIMAL:
            log.warning("t=%d: solver status %s; reusing the previous estimate", t, status)
            x_hat = state.estimate_history[t - 1].copy()
    state.estimate_history[t] = np.asarray(x_hat, dtype=float)
    state.records.append(StepRecord(t, state.estimate_history[t], float(cost), status, ms))
    if new_u is not None or new_y is not None:
        if new_u is None or new_y is None:
            raise EstimatorStateError("new_u and new_y must be supplied together")
        state.window_u.append(np.asarray(new_u, dtype=float).reshape(-1))
        state.window_y.append(np.asarray(new_y, dtype=float).reshape(-1))
        state.t += 1
    return state.estimate_history[t]


def step(state: EstimatorState, blocks: HankelBlocks, cfg: EstimatorConfig, new_u=None, new_y=None):
    """Publish ``x_hat(t)`` from data up to ``t - 1``, then push ``(u(t), y(t))``."""

    def solve(st):
        prob = build_problem(blocks, st, cfg)
        res = solve_qp(prob.qp, cfg.settings)
        if res.status != OPTIMAL:
            return None, res.objective, res.status
        sol = prob.decode(res)
        return sol.x_hat, sol.cost, res.status

    return advance(state, solve, new_u, new_y)


class DataDrivenMHE:
    """Stateful wrapper: one instance per estimate stream."""

    def __init__(self, blocks: HankelBlocks, cfg: EstimatorConfig, prior0):
        if blocks.L < cfg.L:
            raise ValueError(f"Hankel blocks built for L={blocks.L} < configured L={cfg.L}")
        self.blocks, self.cfg = blocks, cfg
        self.state = EstimatorState(cfg.L, prior0)

    def step(self, u_t, y_t) -> np.ndarray:
        """Estimate for the current time, then consume the sample observed at it."""
        return step(self.state, self.blocks, self.cfg, u_t, y_t)

    def run(self, u_seq, y_seq) -> np.ndarray:
        u_seq, y_seq = np.asarray(u_seq, dtype=float), np.asarray(y_seq, dtype=float)
        return np.array([self.step(u, y) for u, y in zip(u_seq, y_seq)])

    @property
    def records(self) -> list:
        return self.state.records


def write_estimates_csv(records, path, n: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["t"] + [f"x_hat_{i + 1}" for i in range(n)] + ["cost", "solver_status", "solve_ms"]
    lines = [",".join(header)]
    for r in records:
        lines.append(",".join([str(r.t)] + [repr(float(v)) for v in r.x_hat]
                              + [repr(r.cost), r.status, f"{r.solve_ms:.3f}"]))
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# configuration checks

@dataclass
class Check:
    name: str
    passed: Optional[bool]
    detail: str
    blocking: bool = True


@dataclass
class ValidationReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.passed is not False for c in self.checks if c.blocking)

    def failures(self) -> list:
        return [c for c in self.checks if c.passed is False and c.blocking]

    def lines(self) -> list:
        out = []
        for c in self.checks:
            tag = "SKIP" if c.passed is None else ("PASS" if c.passed else ("FAIL" if c.blocking else "WARN"))
            out.append(f"[{tag}] {c.name}: {c.detail}")
        return out


def robust_weight_minima(eta, p0, r0, L, N, n, p) -> tuple[float, float]:
    """Smallest admissible ``(c_alpha, c_sigma_x)`` for the robust program."""
    c_alpha = max((eta - eta ** (L + 1)) / (1 - eta) * r0 * np.sqrt(p) * (N - 1), 2 * p0 * np.sqrt(n * N))
    return float(c_alpha), float(p0)


def validate_config(cfg: EstimatorConfig, blocks: Optional[HankelBlocks] = None, constants=None,
                    dataset: Optional[DataSet] = None, L_min: Optional[int] = None) -> ValidationReport:
    """Check the standing assumptions of the estimator; never raises."""
    checks = []
    u_d = dataset.u_d.samples if dataset is not None else (blocks.u_d if blocks is not None else None)
    n = cfg.n
    if u_d is not None:
        order = cfg.L + n + 1
        try:
            rep = is_persistently_exciting(u_d, order)
            ok = rep.full_row_rank
            detail = f"rank H_{order}(u^d) = {rep.numerical_rank} of {rep.matrix_rows}"
        except ValueError as exc:
            ok, detail = False, str(exc)
        checks.append(Check("persistent excitation of order L+n+1", ok, detail))
    else:
        checks.append(Check("persistent excitation of order L+n+1", None, "no offline data supplied"))

    if constants is None:
        for name in ("eta <= rho", "lambda_min(P) >= p0", "lambda_min(R) >= r0"):
            checks.append(Check(name, None, "constants not available"))
    else:
        eta, p0, r0 = constants.eta, constants.p0, constants.r0
        checks.append(Check("eta <= rho", eta <= cfg.rho, f"eta = {eta:.6g}, rho = {cfg.rho:.6g}"))
        lp, lr = lambda_min(cfg.P_weight), lambda_min(cfg.R_weight)
        checks.append(Check("lambda_min(P) >= p0", lp >= p0, f"{lp:.6g} vs p0 = {p0:.6g}"))
        checks.append(Check("lambda_min(R) >= r0", lr >= r0, f"{lr:.6g} vs r0 = {r0:.6g}"))
        if cfg.mode == "robust":
            N = dataset.N if dataset is not None else (blocks.N if blocks is not None else None)
            if N is None:
                checks.append(Check("robust weight minima", None, "offline length unknown"))
            else:
                ca, cs = robust_weight_minima(eta, p0, r0, cfg.L, N, n, cfg.p)
                checks.append(Check("c_alpha minimum", cfg.c_alpha >= ca, f"{cfg.c_alpha:.6g} vs {ca:.6g}"))
                checks.append(Check("c_sigma_x minimum", cfg.c_sigma_x >= cs, f"{cfg.c_sigma_x:.6g} vs {cs:.6g}"))
    if L_min is not None:
        checks.append(Check("L >= L_min (contraction guarantee)", cfg.L >= L_min,
                            f"L = {cfg.L}, L_min = {L_min}", blocking=False))
    return ValidationReport(checks)
