"""Identify-then-estimate baseline.

A linear model is fitted to the offline record by least squares and used in a
moving horizon estimator whose cost, timing and prior handling match the
data-driven estimator, so the two differ only in how trajectories are
parametrized.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mhe import EstimatorConfig, EstimatorState, advance, stage_weights
from .plant import DataSet, StateSpaceModel
from .solver.qp import OPTIMAL, QuadraticProgram, solve_qp
from .trajectories import rank_report


class IdentificationError(ValueError):
    pass


@dataclass(frozen=True)
class IdentifiedModel:
    model: StateSpaceModel
    residual_state: float
    residual_output: float


def identify_lsq(dataset: DataSet, estimate_feedthrough: bool = False) -> IdentifiedModel:
    """Least-squares ``(A, B, C[, D])`` from the (noisy) offline record.

    ``[A B] = X1 pinv([X0; U0])``. Without feedthrough ``C = Y0 pinv(X0)``,
    otherwise ``[C D] = Y0 pinv([X0; U0])``.
    """
    x = dataset.x_d_noisy.samples
    u = dataset.u_d.samples
    y = dataset.y_d_noisy.samples
    X0, X1, U0, Y0 = x[:-1].T, x[1:].T, u[:-1].T, y[:-1].T
    n, m = X0.shape[0], U0.shape[0]
    S = np.vstack([X0, U0])
    rep = rank_report(S)
    if not rep.full_row_rank:
        raise IdentificationError(
            f"[X0; U0] has rank {rep.numerical_rank} < {rep.matrix_rows}: the offline input is not "
            "persistently exciting")
    AB = X1 @ np.linalg.pinv(S)
    A, B = AB[:, :n], AB[:, n:]
    if estimate_feedthrough:
        CD = Y0 @ np.linalg.pinv(S)
        C, D = CD[:, :n], CD[:, n:]
    else:
        C, D = Y0 @ np.linalg.pinv(X0), np.zeros((Y0.shape[0], m))
    res_x = float(np.linalg.norm(X1 - A @ X0 - B @ U0))
    res_y = float(np.linalg.norm(Y0 - C @ X0 - D @ U0))
    return IdentifiedModel(StateSpaceModel(A, B, C, D), res_x, res_y)


@dataclass
class ModelBasedProblem:
    qp: QuadraticProgram
    depth: int
    n: int
    p: int

    def x_hat_seq(self, z) -> np.ndarray:
        return z[:self.n * (self.depth + 1)].reshape(self.depth + 1, self.n)

    def sigma_y(self, z) -> np.ndarray:
        return z[self.n * (self.depth + 1):].reshape(self.depth, self.p)


def build_model_based_mhe(model: IdentifiedModel | StateSpaceModel, state: EstimatorState,
                          cfg: EstimatorConfig) -> ModelBasedProblem:
    """Program over ``x(t-w..t)`` and ``sigma_y(t-w..t-1)``, ``w = min(t, L)``."""
    sys = model.model if isinstance(model, IdentifiedModel) else model
    t, w = state.t, state.window
    if t < 1:
        raise ValueError("the model-based program needs t >= 1")
    n, m, p = sys.n, sys.m, sys.p
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    u_w = state.u_window().reshape(w, m)
    y_w = state.y_window().reshape(w, p)
    prior, _ = state.prior()
    nx, ns = n * (w + 1), p * w
    d = nx + ns
    P, R = cfg.P_weight, cfg.R_weight
    prior_w = cfg.rho ** w
    sw = stage_weights(w, cfg.rho)

    H = np.zeros((d, d))
    f = np.zeros(d)
    H[:n, :n] = 2 * prior_w * P
    f[:n] = -2 * prior_w * P @ prior
    for i in range(w):
        s = slice(nx + i * p, nx + (i + 1) * p)
        H[s, s] = 2 * sw[i] * R
    offset = prior_w * prior @ P @ prior

    # dynamics: x(k+1) - A x(k) = B u(k); outputs: C x(k) + sigma(k) = y(k) - D u(k)
    A_eq = np.zeros((w * (n + p), d))
    b_eq = np.zeros(w * (n + p))
    for i in range(w):
        r = slice(i * n, (i + 1) * n)
        A_eq[r, i * n:(i + 1) * n] = -A
        A_eq[r, (i + 1) * n:(i + 2) * n] = np.eye(n)
        b_eq[r] = B @ u_w[i]
        r = slice(w * n + i * p, w * n + (i + 1) * p)
        A_eq[r, i * n:(i + 1) * n] = C
        A_eq[r, nx + i * p:nx + (i + 1) * p] = np.eye(p)
        b_eq[r] = y_w[i] - D @ u_w[i]

    lo = np.tile(cfg.state_lower, w + 1)
    hi = np.tile(cfg.state_upper, w + 1)
    keep = np.isfinite(lo) | np.isfinite(hi)
    A_in = np.zeros((nx, d))
    A_in[:, :nx] = np.eye(nx)
    qp = QuadraticProgram(H=H, f=f, A_eq=A_eq, b_eq=b_eq, A_in=A_in[keep], lb=lo[keep], ub=hi[keep],
                          offset=float(offset))
    return ModelBasedProblem(qp, w, n, p)


class ModelBasedMHE:
    """Estimator stream driven by an identified model; same interface as the data-driven one."""

    def __init__(self, model: IdentifiedModel | StateSpaceModel, cfg: EstimatorConfig, prior0):
        self.model, self.cfg = model, cfg
        self.state = EstimatorState(cfg.L, prior0)

    def _solve(self, st):
        prob = build_model_based_mhe(self.model, st, self.cfg)
        res = solve_qp(prob.qp, self.cfg.settings)
        if res.status != OPTIMAL:
            return None, res.objective, res.status
        return prob.x_hat_seq(res.z)[-1], res.objective, res.status

    def step(self, u_t, y_t) -> np.ndarray:
        return advance(self.state, self._solve, u_t, y_t)

    def run(self, u_seq, y_seq) -> np.ndarray:
        return np.array([self.step(u, y) for u, y in zip(np.asarray(u_seq, float), np.asarray(y_seq, float))])

    @property
    def records(self) -> list:
        return self.state.records


def dump_model(model: IdentifiedModel | StateSpaceModel, path) -> Path:
    """Plain-text dump: ``# name rows cols`` headers followed by matrix rows."""
    sys = model.model if isinstance(model, IdentifiedModel) else model
    lines = []
    for name in ("A", "B", "C", "D"):
        M = getattr(sys, name)
        lines.append(f"# {name} {M.shape[0]} {M.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in M)
    if isinstance(model, IdentifiedModel):
        lines.append(f"# residual_state {model.residual_state!r}")
        lines.append(f"# residual_output {model.residual_output!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_model(path) -> StateSpaceModel:
    mats, name, rows, shape = {}, None, [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            parts = line[1:].split()
            if name is not None:
                mats[name] = np.array(rows, dtype=float).reshape(shape)
                name = None
            if len(parts) == 3:
                name, shape, rows = parts[0], (int(parts[1]), int(parts[2])), []
        elif line.strip():
            rows.append([float(v) for v in line.split()])
    if name is not None:
        mats[name] = np.array(rows, dtype=float).reshape(shape)
    return StateSpaceModel(mats["A"], mats["B"], mats["C"], mats["D"])
