from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .linalg import check_pd, spectral_radius


class NotSchurError(ValueError):
    pass


def solve_discrete_lyapunov(A_cl, Q) -> np.ndarray:
    """``P`` with ``A_cl^T P A_cl - P + Q = 0`` for Schur ``A_cl`` and ``Q`` positive definite."""
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    Q = check_pd(Q, "Q")
    if A_cl.shape != Q.shape:
        raise ValueError(f"shape mismatch: A_cl {A_cl.shape}, Q {Q.shape}")
    r = spectral_radius(A_cl)
    if r >= 1.0:
        raise NotSchurError(f"A_cl is not Schur stable (spectral radius {r:.6g})")
    # scipy solves a X a^H - X + q = 0; the bilinear route maps it to a
    # continuous Lyapunov equation handled by Bartels-Stewart
    P = sla.solve_discrete_lyapunov(A_cl.T, Q, method="bilinear")
    # one step of iterative refinement on the residual
    R = A_cl.T @ P @ A_cl - P + Q
    P = P + sla.solve_discrete_lyapunov(A_cl.T, 0.5 * (R + R.T), method="bilinear")
    return 0.5 * (P + P.T)


def lyapunov_residual(A_cl, P, Q) -> float:
    """Relative Frobenius residual of ``A^T P A - P + Q``."""
    A_cl, P, Q = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A_cl, P, Q))
    R = A_cl.T @ P @ A_cl - P + Q
    return float(np.linalg.norm(R) / max(1.0, np.linalg.norm(P)))
