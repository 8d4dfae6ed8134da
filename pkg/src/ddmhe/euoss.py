"""Detectability constants from data and the error-bound machinery built on them.

``(A, C)`` is recovered from one noise-free input/state/output record, an
observer gain ``L`` makes ``A + L C`` Schur, and a Lyapunov matrix ``P_e``
of the observer error yields the triple ``(p0, r0, eta)`` of the
output-to-state stability estimate

    |x1(t) - x2(t)| <= p0 |x1(0) - x2(0)| eta^t
                       + sum_{tau=1..t} r0 |y1(t-tau) - y2(t-tau)| eta^tau.

The remaining functions turn these constants into the decay rates, gains and
offsets of the nominal and robust estimation-error bounds.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .mhe import EstimatorConfig
from .plant import DataSet
from .solver.linalg import lambda_max, lambda_min, pinv_norm, spectral_radius, weighted_operator_norm
from .solver.lyapunov import solve_discrete_lyapunov
from .solver.observer import solve_observer_gain
from .solver.qp import SolverSettings
from .trajectories import RankReport, build_hankel, rank_report

log = logging.getLogger(__name__)

L_MIN_SEARCH_CAP = 100_000


class RankConditionError(ValueError):
    pass


class AssumptionViolation(ValueError):
    pass


class HorizonTooShortError(ValueError):
    def __init__(self, msg, L_min):
        super().__init__(msg)
        self.L_min = L_min


@dataclass(frozen=True)
class EUossConstants:
    p0: float
    r0: float
    eta: float
    P_e: np.ndarray = field(repr=False)
    gain_L: np.ndarray = field(repr=False)
    A_L: np.ndarray = field(repr=False)
    A_hat: Optional[np.ndarray] = field(default=None, repr=False)
    B_hat: Optional[np.ndarray] = field(default=None, repr=False)
    C_hat: Optional[np.ndarray] = field(default=None, repr=False)
    r0_formula: float = 0.0
    r0_decay: float = 0.0
    output_rank: Optional[RankReport] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.A_L.shape[0]


def euoss_from_gain(A_hat, C_hat, gain_L, lyap_Q=None) -> EUossConstants:
    """Constants for a given stabilizing gain.

    ``r0`` is the larger of ``|L|_{P_e} sqrt(lambda_max(P_e))`` and
    ``|L|_{P_e} / (eta sqrt(lambda_min(P_e)))``. The second term is what the
    error recursion ``e+ = A_L e - L dy`` needs so that the estimate holds
    for every ``P_e``; the first is the customary closed form. Both are
    clamped to at least one.
    """
    A_hat = np.atleast_2d(np.asarray(A_hat, dtype=float))
    C_hat = np.atleast_2d(np.asarray(C_hat, dtype=float))
    gain_L = np.asarray(gain_L, dtype=float).reshape(A_hat.shape[0], C_hat.shape[0])
    n = A_hat.shape[0]
    Q = np.eye(n) if lyap_Q is None else np.asarray(lyap_Q, dtype=float)
    A_L = A_hat + gain_L @ C_hat
    P_e = solve_discrete_lyapunov(A_L, Q)
    eta = weighted_operator_norm(A_L, P_e, mode="induced")
    lmin, lmax = lambda_min(P_e), lambda_max(P_e)
    p0 = max(1.0, math.sqrt(lmax / lmin))
    gain_norm = weighted_operator_norm(gain_L, P_e, mode="euclidean_input")
    r0_formula = gain_norm * math.sqrt(lmax)
    r0_decay = gain_norm / (eta * math.sqrt(lmin)) if eta > 0 else 0.0
    r0 = max(1.0, r0_formula, r0_decay)
    return EUossConstants(p0=p0, r0=r0, eta=eta, P_e=P_e, gain_L=gain_L, A_L=A_L, A_hat=A_hat,
                          C_hat=C_hat, r0_formula=r0_formula, r0_decay=r0_decay)


def recover_model(u_d, x_d, y_d, tol=None):
    """``(A, B, C)`` from ``[X0; U0] G = [I; 0]`` and ``[X0; U0] G' = [0; I]``.

    Returns the matrices plus rank reports of ``[X0; U0]`` and ``[X1; Y0]``.
    """
    u_d, x_d, y_d = (np.asarray(a, dtype=float) for a in (u_d, x_d, y_d))
    N = u_d.shape[0]
    n = x_d.shape[1]
    X0 = build_hankel(x_d[:N - 1], 1).data
    U0 = build_hankel(u_d[:N - 1], 1).data
    X1 = build_hankel(x_d[1:], 1).data
    Y0 = build_hankel(y_d[:N - 1], 1).data
    S = np.vstack([X0, U0])
    rep = rank_report(S, tol)
    if not rep.full_row_rank:
        raise RankConditionError(
            f"state/input data matrix has rank {rep.numerical_rank} < {rep.matrix_rows}; "
            "the offline input is not persistently exciting enough")
    out_rep = rank_report(np.vstack([X1, Y0]), tol)
    S_pinv = np.linalg.pinv(S)
    G = S_pinv[:, :n]
    G_u = S_pinv[:, n:]
    return X1 @ G, X1 @ G_u, Y0 @ G, rep, out_rep


def estimate_euoss_constants(dataset: DataSet, lyap_Q=None, observer: str = "lmi",
                             settings: SolverSettings = SolverSettings(), use_clean: bool = False) -> EUossConstants:
    """Data-driven ``(p0, r0, eta)`` for the plant behind ``dataset``.

    Exact on noise-free data. With noisy data the recovered matrices are
    perturbed and the constants carry no guarantee; a warning is logged.
    """
    if use_clean:
        dataset = dataset.clean()
    elif dataset.eps_bar > 0:
        log.warning("computing detectability constants from noisy offline data (bound %.3g); "
                    "the result is not guaranteed", dataset.eps_bar)
    A_hat, B_hat, C_hat, _, out_rep = recover_model(
        dataset.u_d.samples, dataset.x_d_noisy.samples, dataset.y_d_noisy.samples)
    n, p = A_hat.shape[0], C_hat.shape[0]
    if out_rep.numerical_rank != n + p:
        log.warning("rank [X1; Y0] = %d, expected n + p = %d", out_rep.numerical_rank, n + p)
    gain, _ = solve_observer_gain(A_hat, C_hat, settings, method=observer)
    c = euoss_from_gain(A_hat, C_hat, gain, lyap_Q)
    return EUossConstants(**{**c.__dict__, "B_hat": B_hat, "output_rank": out_rep})


def euoss_rhs(t: int, dx0: float, dy_norms, consts: EUossConstants) -> float:
    """Right-hand side of the output-to-state estimate at time ``t``."""
    dy = np.asarray(dy_norms, dtype=float)
    tau = np.arange(1, t + 1)
    return float(consts.p0 * dx0 * consts.eta ** t + np.sum(consts.r0 * dy[t - tau] * consts.eta ** tau))


# ---------------------------------------------------------------------------
# nominal bound

def c_J(t: int, p0: float, r0: float, rho: float) -> float:
    """``p0 rho^t + r0 (rho - rho^(t+1)) / (1 - rho)``."""
    return p0 * rho ** t + r0 * (rho - rho ** (t + 1)) / (1 - rho)


def cJ_is_decreasing(p0: float, r0: float, rho: float) -> bool:
    """Whether ``c_J`` decreases in ``t``: it does iff ``rho < p0 / (p0 + r0)``."""
    return rho < p0 / (p0 + r0)


@dataclass(frozen=True)
class NominalBoundParams:
    rho: float
    lam: float
    p2: float
    r2: float
    P0: float
    R0: float
    mu: float
    lambda_tilde: float
    L: int
    L_min: Optional[int]
    decreasing: bool


def _nominal_gains(consts, p2, r2, rho, L):
    cj = c_J(0, consts.p0, consts.r0, rho) if cJ_is_decreasing(consts.p0, consts.r0, rho) \
        else c_J(L, consts.p0, consts.r0, rho)
    return consts.p0 + math.sqrt(cj * p2), consts.r0 + math.sqrt(cj * r2)


def _smallest_horizon(P0_of, lam, cap=L_MIN_SEARCH_CAP):
    for Lp in range(1, cap + 1):
        if P0_of(Lp) * lam ** Lp < 1.0:
            return Lp
    return None


def nominal_bound_params(consts: EUossConstants, P_weight, R_weight, rho: float, L: int) -> NominalBoundParams:
    if consts.eta > rho:
        raise AssumptionViolation(f"eta = {consts.eta:.6g} exceeds rho = {rho:.6g}")
    p2, r2 = lambda_max(P_weight), lambda_max(R_weight)
    lam = math.sqrt(rho)
    P0, R0 = _nominal_gains(consts, p2, r2, rho, L)
    L_min = _smallest_horizon(lambda Lp: _nominal_gains(consts, p2, r2, rho, Lp)[0], lam)
    return NominalBoundParams(rho=rho, lam=lam, p2=p2, r2=r2, P0=P0, R0=R0, mu=P0 * lam ** L,
                              lambda_tilde=P0 ** (1.0 / L) * lam, L=L, L_min=L_min,
                              decreasing=cJ_is_decreasing(consts.p0, consts.r0, rho))


def _noise_norms(v_seq):
    v = np.asarray(v_seq, dtype=float)
    return np.abs(v) if v.ndim == 1 else np.linalg.norm(v, axis=1)


def _decay_sum(t, e0, v_norms, P0, R0, rate):
    tau = np.arange(1, t + 1)
    return float(P0 * e0 * rate ** t + np.sum(R0 * v_norms[t - tau] * rate ** tau))


def nominal_error_bound(t: int, e0: float, v_seq, params: NominalBoundParams) -> float:
    """``P0 e0 lt^t + sum_{tau=1..t} R0 |v(t - tau)| lt^tau`` with ``lt = lambda_tilde``."""
    return _decay_sum(t, e0, _noise_norms(v_seq), params.P0, params.R0, params.lambda_tilde)


# ---------------------------------------------------------------------------
# robust bound

@dataclass(frozen=True)
class RobustBoundParams:
    c_J_tilde_max: float
    P0_tilde: float
    R0_tilde: float
    mu_tilde: float
    lambda_check: float
    alpha_max: float
    H_ux: float
    sigma_x_max: float
    sigma_eps_y_max: float
    c4: float
    c5: float
    gamma_value: float
    u_max: float
    x_max: float
    L: int
    lam: float
    L_min: Optional[int]

    @property
    def contractive(self) -> bool:
        return self.mu_tilde < 1.0

    def gamma_at(self, t: int) -> float:
        """Offset at time ``t``: the limit value when contractive, else the finite partial sum."""
        if self.contractive:
            return self.gamma_value
        per_block = self.c4 * (self.lam - self.lam ** (self.L + 1)) / (1 - self.lam) + self.c5
        k = np.arange(t // self.L + 1, dtype=float)
        return float(per_block * np.sum(self.mu_tilde ** k))


def _c_J_tilde_max(consts, rho, L, c_sigma, reg):
    return max(c_J(L, consts.p0, consts.r0, rho), c_J(0, consts.p0, consts.r0, rho)) + c_sigma + reg


def robust_bound_params(consts: EUossConstants, dataset: DataSet, cfg: EstimatorConfig, u_max: float,
                        x_max: float, L: Optional[int] = None, allow_short_horizon: bool = False) -> RobustBoundParams:
    """Gains, decay and offset of the robust error bound.

    The slack bounds use the Frobenius norm of noise matrices with the actual
    Hankel shapes, ``sqrt(rows * cols) * eps``.

    Raises:
        HorizonTooShortError: if ``mu_tilde >= 1`` and ``allow_short_horizon``
            is false. With the flag the offset is reported through
            ``gamma_at(t)`` as a finite-time sum and ``gamma_value`` is inf.
    """
    L = cfg.L if L is None else int(L)
    if cfg.c_alpha is None or cfg.c_sigma_x is None:
        raise ValueError("robust bound needs c_alpha and c_sigma_x")
    eps_x = dataset.eps_x_bound if cfg.eps_x_bound is None else cfg.eps_x_bound
    eps_y = dataset.eps_y_bound if cfg.eps_y_bound is None else cfg.eps_y_bound
    rho = cfg.rho
    lam = math.sqrt(rho)
    p2, r2 = lambda_max(cfg.P_weight), lambda_max(cfg.R_weight)
    reg = float(cfg.c_alpha) * (eps_x + eps_y)
    c_sig = float(cfg.c_sigma_x)
    cjt = _c_J_tilde_max(consts, rho, L, c_sig, reg)
    P0t = consts.p0 + math.sqrt(cjt * p2)
    R0t = consts.r0 + math.sqrt(2 * cjt * r2)
    mu = P0t * lam ** L

    N, n, p = dataset.N, dataset.n, dataset.p
    u, x = dataset.u_d.samples, dataset.x_d_noisy.samples
    Hu = build_hankel(u[:N - 1], L).data
    Hx1 = build_hankel(x[:N - L], 1).data
    H_ux = pinv_norm(np.vstack([Hu, Hx1]))
    u_max, x_max = float(u_max), float(x_max)
    alpha_max = H_ux * (L * u_max + x_max)
    cols = N - L
    sigma_x_max = math.sqrt(n * (L + 1) * cols) * eps_x * alpha_max
    sigma_y_max = math.sqrt(p * L * cols) * eps_y * alpha_max
    c4 = math.sqrt(2 * cjt * r2) * sigma_y_max
    c5 = math.sqrt(cjt * reg) * alpha_max + math.sqrt(cjt * c_sig) * sigma_x_max
    L_min = _smallest_horizon(
        lambda Lp: consts.p0 + math.sqrt(_c_J_tilde_max(consts, rho, Lp, c_sig, reg) * p2), lam)
    if mu < 1.0:
        gamma = (c4 * (lam - lam ** (L + 1)) / (1 - lam) + c5) / (1 - mu)
    elif allow_short_horizon:
        gamma = math.inf
    else:
        raise HorizonTooShortError(
            f"mu_tilde = {mu:.6g} >= 1 at L = {L}; the robust contraction needs L >= {L_min}", L_min)
    return RobustBoundParams(c_J_tilde_max=cjt, P0_tilde=P0t, R0_tilde=R0t, mu_tilde=mu,
                             lambda_check=mu ** (1.0 / L), alpha_max=alpha_max, H_ux=H_ux,
                             sigma_x_max=sigma_x_max, sigma_eps_y_max=sigma_y_max, c4=c4, c5=c5,
                             gamma_value=gamma, u_max=u_max, x_max=x_max, L=L, lam=lam, L_min=L_min)


def robust_error_bound(t: int, e0: float, v_seq, params: RobustBoundParams) -> float:
    """``P0~ e0 lc^t + sum R0~ |v(t - tau)| lc^tau + gamma`` with ``lc = mu~^(1/L)``."""
    base = _decay_sum(t, e0, _noise_norms(v_seq), params.P0_tilde, params.R0_tilde, params.lambda_check)
    return base + params.gamma_at(t)


def propose_radii(u_seq, x_seq, margin: float = 1.1) -> tuple[float, float]:
    """Radii of the input and state sets from an observed envelope, inflated by ``margin``."""
    u = np.asarray(u_seq, dtype=float)
    x = np.asarray(x_seq, dtype=float)
    u = u[:, None] if u.ndim == 1 else u
    x = x[:, None] if x.ndim == 1 else x
    return margin * float(np.linalg.norm(u, axis=1).max()), margin * float(np.linalg.norm(x, axis=1).max())


# ---------------------------------------------------------------------------
# reporting

def constants_report(consts: EUossConstants, nominal: Optional[NominalBoundParams] = None,
                     robust: Optional[RobustBoundParams] = None) -> dict:
    out = {
        "eta": consts.eta, "p0": consts.p0, "r0": consts.r0,
        "r0_formula": consts.r0_formula, "r0_decay": consts.r0_decay,
        "spectral_radius_A_L": spectral_radius(consts.A_L),
    }
    if consts.output_rank is not None:
        out["rank_X1_Y0"] = consts.output_rank.numerical_rank
    if nominal is not None:
        out.update({f"nominal_{k}": v for k, v in asdict(nominal).items()})
    if robust is not None:
        out.update({f"robust_{k}": v for k, v in asdict(robust).items()})
    return out


def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def format_key_value(report: dict) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in report.items())


def format_csv_row(report: dict, header: bool = True) -> str:
    keys = list(report)
    row = ",".join(_fmt(report[k]) for k in keys)
    return (",".join(keys) + "\n" + row + "\n") if header else row + "\n"
