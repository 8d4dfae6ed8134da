"""Dense operator-splitting (ADMM) solver for convex quadratic programs.

Problem form::

    minimize    0.5 z' H z + f' z + offset
    subject to  A_eq z = b_eq
                lb <= A_in z <= ub

Equalities and inequalities are stacked into one constraint block
``l <= A z <= u`` and solved with the alternating-direction iteration of
Stellato et al. (OSQP), on a Ruiz-equilibrated copy of the data. An
active-set polish step, attempted periodically, returns the exact KKT
point once the active set has been identified.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_RHO_EQ_SCALE = 1e3
_RHO_MIN = 1e-6
_RHO_MAX = 1e6
_SCALE_MIN, _SCALE_MAX = 1e-4, 1e4


@dataclass(frozen=True)
class QuadraticProgram:
    H: np.ndarray
    f: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    offset: float = 0.0

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        d = H.shape[0]
        if H.shape != (d, d):
            raise ValueError(f"H must be square, got {H.shape}")
        scale = max(1.0, float(np.abs(H).max(initial=0.0)))
        if np.abs(H - H.T).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("H must be symmetric")
        f = np.asarray(self.f, dtype=float).reshape(-1)
        if f.shape[0] != d:
            raise ValueError(f"f has length {f.shape[0]}, expected {d}")
        A_eq = np.zeros((0, d)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, dtype=float))
        b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(-1)
        if A_eq.shape[1] != d or A_eq.shape[0] != b_eq.shape[0]:
            raise ValueError(f"equality block inconsistent: A_eq {A_eq.shape}, b_eq {b_eq.shape}, d={d}")
        A_in = np.zeros((0, d)) if self.A_in is None else np.atleast_2d(np.asarray(self.A_in, dtype=float))
        q = A_in.shape[0]
        lb = np.full(q, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        ub = np.full(q, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if A_in.shape[1] != d or lb.shape[0] != q or ub.shape[0] != q:
            raise ValueError(f"inequality block inconsistent: A_in {A_in.shape}, lb {lb.shape}, ub {ub.shape}")
        if np.any(lb > ub):
            raise ValueError("lb must not exceed ub")
        for name, val in (("H", 0.5 * (H + H.T)), ("f", f), ("A_eq", A_eq), ("b_eq", b_eq),
                          ("A_in", A_in), ("lb", lb), ("ub", ub)):
            object.__setattr__(self, name, val)

    @property
    def d(self) -> int:
        return self.H.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z + self.offset)

    def stacked(self):
        A = np.vstack([self.A_eq, self.A_in])
        l = np.concatenate([self.b_eq, self.lb])
        u = np.concatenate([self.b_eq, self.ub])
        return A, l, u


@dataclass(frozen=True)
class SolverSettings:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iter: int = 20000
    step_parameter: float = 0.1
    polish: bool = True
    sigma: float = 1e-6
    relaxation: float = 1.6
    check_every: int = 10
    polish_every: int = 50
    adaptive_step: bool = True
    scaling_iter: int = 10
    eps_infeasible: float = 1e-7

    def __post_init__(self):
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.step_parameter > 0:
            raise ValueError("step_parameter must be positive")


@dataclass
class SolveResult:
    z: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    objective: float
    iterations: int
    y: np.ndarray = field(default=None, repr=False)
    eps_primal: float = 0.0
    eps_dual: float = 0.0
    polished: bool = False

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _residuals(P, q, A, l, u, x, y, settings):
    """Unscaled primal/dual residuals and their scale-aware tolerances."""
    Ax = A @ x
    z = np.clip(Ax, l, u)
    Px = P @ x
    Aty = A.T @ y
    r_prim = float(np.abs(Ax - z).max(initial=0.0))
    r_dual = float(np.abs(Px + q + Aty).max(initial=0.0))
    eps_p = settings.eps_abs + settings.eps_rel * max(np.abs(Ax).max(initial=0.0), np.abs(z).max(initial=0.0))
    eps_d = settings.eps_abs + settings.eps_rel * max(np.abs(Px).max(initial=0.0),
                                                      np.abs(Aty).max(initial=0.0),
                                                      np.abs(q).max(initial=0.0))
    return r_prim, r_dual, eps_p, eps_d


def _ruiz(P, q, A, iters):
    d, m = P.shape[0], A.shape[0]
    D, E, c = np.ones(d), np.ones(m), 1.0
    Ps, qs, As = P.copy(), q.copy(), A.copy()

    def inv_sqrt(norms):
        norms = np.where(norms < _SCALE_MIN, 1.0, norms)
        return 1.0 / np.sqrt(np.clip(norms, _SCALE_MIN, _SCALE_MAX))

    for _ in range(iters):
        col = np.abs(Ps).max(axis=0)
        if m:
            col = np.maximum(col, np.abs(As).max(axis=0))
        Dt = inv_sqrt(col)
        Et = inv_sqrt(np.abs(As).max(axis=1)) if m else np.ones(0)
        Ps = Dt[:, None] * Ps * Dt[None, :]
        qs = Dt * qs
        As = Et[:, None] * As * Dt[None, :]
        D *= Dt
        E *= Et
        cost_norm = max(np.abs(Ps).max(axis=0).mean(), np.abs(qs).max(initial=0.0))
        ct = 1.0 / np.clip(cost_norm if cost_norm >= _SCALE_MIN else 1.0, _SCALE_MIN, _SCALE_MAX)
        Ps *= ct
        qs *= ct
        c *= ct
    return Ps, qs, As, D, E, c


class _Admm:
    def __init__(self, qp: QuadraticProgram, settings: SolverSettings):
        self.qp = qp
        self.s = settings
        P, q = qp.H, qp.f
        A, l, u = qp.stacked()
        self.P, self.q, self.A, self.l, self.u = P, q, A, l, u
        self.Ps, self.qs, self.As, self.D, self.E, self.c = _ruiz(P, q, A, settings.scaling_iter)
        self.ls = np.where(np.isfinite(l), self.E * l, l)
        self.us = np.where(np.isfinite(u), self.E * u, u)
        self.is_eq = np.isfinite(l) & np.isfinite(u) & ((u - l) <= 1e-12 * np.maximum(1.0, np.abs(l)))
        self.is_free = np.isinf(l) & np.isinf(u)
        self.set_rho(settings.step_parameter)

    def set_rho(self, rho):
        self.rho = float(np.clip(rho, _RHO_MIN, _RHO_MAX))
        vec = np.full(self.As.shape[0], self.rho)
        vec[self.is_eq] = _RHO_EQ_SCALE * self.rho
        vec[self.is_free] = _RHO_MIN
        self.rho_vec = vec
        K = self.Ps + self.s.sigma * np.eye(self.Ps.shape[0]) + self.As.T @ (vec[:, None] * self.As)
        self.factor = sla.cho_factor(K)

    def unscale(self, x, y):
        return self.D * x, self.E * y / self.c

    def residuals(self, x, y):
        xu, yu = self.unscale(x, y)
        return _residuals(self.P, self.q, self.A, self.l, self.u, xu, yu, self.s)

    def polish(self, x, z, y):
        """Solve the equality-constrained KKT system on the guessed active set."""
        d = self.Ps.shape[0]
        lower = ((z - self.ls) < -y) & ~self.is_eq
        upper = ((self.us - z) < y) & ~self.is_eq
        active = self.is_eq | lower | upper
        Aa = self.As[active]
        ba = np.where(upper, self.us, self.ls)[active]
        k = Aa.shape[0]
        K = np.block([[self.Ps, Aa.T], [Aa, np.zeros((k, k))]])
        rhs = np.concatenate([-self.qs, ba])
        sol = sla.lstsq(K, rhs, lapack_driver="gelsd")[0]
        xp = sol[:d]
        yp = np.zeros_like(y)
        yp[active] = sol[d:]
        # multipliers must carry the sign of the bound they hold
        tol = 1e-9 * max(1.0, np.abs(yp).max(initial=0.0))
        if np.any(yp[lower & ~upper] > tol) or np.any(yp[upper & ~lower] < -tol):
            return None
        r_p, r_d, e_p, e_d = self.residuals(xp, yp)
        if r_p <= e_p and r_d <= e_d:
            return xp, yp, (r_p, r_d, e_p, e_d)
        return None

    def primal_infeasible(self, dy):
        dyu = self.E * dy
        norm = np.abs(dyu).max(initial=0.0)
        if norm < 1e-14:
            return False
        eps = self.s.eps_infeasible * norm
        if np.abs(self.A.T @ dyu).max(initial=0.0) > eps:
            return False
        pos, neg = np.maximum(dyu, 0.0), np.minimum(dyu, 0.0)
        if np.any((pos > 0) & np.isinf(self.u)) or np.any((neg < 0) & np.isinf(self.l)):
            return False
        support = pos[pos > 0] @ self.u[pos > 0] + neg[neg < 0] @ self.l[neg < 0]
        return support < -eps

    def dual_infeasible(self, dx):
        dxu = self.D * dx
        norm = np.abs(dxu).max(initial=0.0)
        if norm < 1e-14:
            return False
        eps = self.s.eps_infeasible * norm
        if np.abs(self.P @ dxu).max(initial=0.0) > eps * max(1.0, np.abs(self.P).max(initial=0.0)):
            return False
        if self.q @ dxu >= -eps:
            return False
        Adx = self.A @ dxu
        ok_hi = np.isinf(self.u) | (Adx <= eps)
        ok_lo = np.isinf(self.l) | (Adx >= -eps)
        return bool(np.all(ok_hi & ok_lo))

    def result(self, x, y, status, it, res, polished=False):
        xu, yu = self.unscale(x, y)
        r_p, r_d, e_p, e_d = res
        return SolveResult(z=xu, status=status, primal_residual=r_p, dual_residual=r_d,
                           objective=self.qp.objective(xu), iterations=it, y=yu,
                           eps_primal=e_p, eps_dual=e_d, polished=polished)

    def run(self) -> SolveResult:
        s = self.s
        d, m = self.Ps.shape[0], self.As.shape[0]
        x, z, y = np.zeros(d), np.clip(np.zeros(m), self.ls, self.us), np.zeros(m)
        a = s.relaxation
        if s.polish:
            pol = self.polish(x, z, y)
            if pol is not None:
                return self.result(pol[0], pol[1], OPTIMAL, 0, pol[2], polished=True)
        res = self.residuals(x, y)
        for it in range(1, s.max_iter + 1):
            x_prev, y_prev = x, y
            rhs = s.sigma * x - self.qs + self.As.T @ (self.rho_vec * z - y)
            xt = sla.cho_solve(self.factor, rhs)
            zt = self.As @ xt
            x = a * xt + (1 - a) * x
            z_rel = a * zt + (1 - a) * z
            z = np.clip(z_rel + y / self.rho_vec, self.ls, self.us)
            y = y + self.rho_vec * (z_rel - z)

            if it % s.check_every and it != s.max_iter:
                continue
            res = self.residuals(x, y)
            r_p, r_d, e_p, e_d = res
            if r_p <= e_p and r_d <= e_d:
                if s.polish:
                    pol = self.polish(x, z, y)
                    if pol is not None:
                        return self.result(pol[0], pol[1], OPTIMAL, it, pol[2], polished=True)
                return self.result(x, y, OPTIMAL, it, res)
            if s.polish and it % s.polish_every == 0:
                pol = self.polish(x, z, y)
                if pol is not None:
                    return self.result(pol[0], pol[1], OPTIMAL, it, pol[2], polished=True)
            if it >= 100:
                if self.primal_infeasible(y - y_prev):
                    return self.result(x, y, INFEASIBLE, it, res)
                if self.dual_infeasible(x - x_prev):
                    return self.result(x, y, UNBOUNDED, it, res)
            if s.adaptive_step and m:
                self.adapt_rho(x, z, y)
        return self.result(x, y, MAX_ITER, s.max_iter, res)

    def adapt_rho(self, x, z, y):
        Ax = self.As @ x
        Px = self.Ps @ x
        Aty = self.As.T @ y
        rp = np.abs(Ax - z).max(initial=0.0) / max(np.abs(Ax).max(initial=0.0), np.abs(z).max(initial=0.0), 1e-30)
        rd = np.abs(Px + self.qs + Aty).max(initial=0.0) / max(
            np.abs(Px).max(initial=0.0), np.abs(Aty).max(initial=0.0), np.abs(self.qs).max(initial=0.0), 1e-30)
        if rp == 0 or rd == 0:
            return
        new = self.rho * np.sqrt(rp / rd)
        if new > 5 * self.rho or new < self.rho / 5:
            self.set_rho(new)


def solve_qp(qp: QuadraticProgram, settings: SolverSettings = SolverSettings()) -> SolveResult:
    """Solve ``qp``; never raises on infeasibility, reports it through ``status``."""
    result = _Admm(qp, settings).run()
    if result.status != OPTIMAL:
        log.debug("QP finished with status %s after %d iterations", result.status, result.iterations)
    return result


def dump_qp(qp: QuadraticProgram, path) -> Path:
    """Write ``qp`` as plain text: one ``# name rows cols`` header per block, then rows."""
    path = Path(path)
    blocks = [("H", qp.H), ("f", qp.f[None, :]), ("A_eq", qp.A_eq), ("b_eq", qp.b_eq[None, :]),
              ("A_in", qp.A_in), ("lb", qp.lb[None, :]), ("ub", qp.ub[None, :]),
              ("offset", np.array([[qp.offset]]))]
    lines = []
    for name, mat in blocks:
        lines.append(f"# {name} {mat.shape[0]} {mat.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in mat)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_qp(path) -> QuadraticProgram:
    blocks, name, rows, shape = {}, None, [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            if name is not None:
                blocks[name] = np.array(rows, dtype=float).reshape(shape)
            _, name, r, c = line.split()
            shape, rows = (int(r), int(c)), []
        elif line.strip():
            rows.append([float(v) for v in line.split()])
    blocks[name] = np.array(rows, dtype=float).reshape(shape)
    return QuadraticProgram(H=blocks["H"], f=blocks["f"][0], A_eq=blocks["A_eq"], b_eq=blocks["b_eq"][0],
                            A_in=blocks["A_in"], lb=blocks["lb"][0], ub=blocks["ub"][0],
                            offset=float(blocks["offset"][0, 0]))
