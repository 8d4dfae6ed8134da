"""Observer gain synthesis for ``x+ = A x``, ``y = C x``.

The default route solves the observer LMI

    [[P, (P A + W C)^T], [P A + W C, P]] >= eps I,   L = P^{-1} W

by alternating projections between the PSD cone and the affine image of
``(P, W)``. The LMI is homogeneous in ``(P, W)``, so any strictly feasible
point can be rescaled to clear the margin; the projection therefore targets
``>= I`` directly.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sla

from .linalg import spectral_radius
from .lyapunov import solve_discrete_lyapunov
from .qp import SolverSettings

log = logging.getLogger(__name__)

SCHUR_MARGIN = 1e-9
LMI_MAX_ROUNDS = 2000


class DetectabilityError(RuntimeError):
    """Observer synthesis failed; the pair (A, C) is likely not detectable."""


def _sym_basis(n):
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def _lmi_operator(A, C):
    """Columns are vec of the block matrix for each basis element of (P, W)."""
    n, p = A.shape[0], C.shape[0]
    cols = []
    for E in _sym_basis(n):
        cols.append(np.block([[E, (E @ A).T], [E @ A, E]]).ravel())
    for i in range(n):
        for j in range(p):
            Wij = np.zeros((n, p))
            Wij[i, j] = 1.0
            G = Wij @ C
            Z = np.zeros((n, n))
            cols.append(np.block([[Z, G.T], [G, Z]]).ravel())
    return np.array(cols).T


def _unpack(theta, n, p):
    P = np.zeros((n, n))
    k = 0
    for i in range(n):
        for j in range(i, n):
            P[i, j] = P[j, i] = theta[k]
            k += 1
    W = theta[k:].reshape(n, p)
    return P, W


def _gain_from(P, W):
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return None
    return np.linalg.solve(P, W)


def _lmi_gain(A, C, max_iter):
    n, p = A.shape[0], C.shape[0]
    Phi = _lmi_operator(A, C)
    Phi_pinv = np.linalg.pinv(Phi)
    S = np.eye(2 * n)
    for it in range(max_iter):
        theta = Phi_pinv @ S.ravel()
        P, W = _unpack(theta, n, p)
        L = _gain_from(P, W)
        if L is not None and spectral_radius(A + L @ C) < 1.0 - SCHUR_MARGIN:
            log.debug("observer LMI feasible after %d projections", it)
            return L
        M = (Phi @ theta).reshape(2 * n, 2 * n)
        w, V = np.linalg.eigh(0.5 * (M + M.T))
        S = (V * np.maximum(w, 1.0)) @ V.T
    return None


def _dual_lqr_gain(A, C):
    """Stationary Kalman predictor gain with unit covariances, sign flipped to ``A + L C``."""
    n, p = A.shape[0], C.shape[0]
    X = sla.solve_discrete_are(A.T, C.T, np.eye(n), np.eye(p))
    return -A @ X @ C.T @ np.linalg.inv(C @ X @ C.T + np.eye(p))


def solve_observer_gain(A, C, settings: SolverSettings = SolverSettings(), method: str = "lmi"):
    """Gain ``L`` with ``A + L C`` Schur and a Lyapunov certificate ``P``.

    Args:
        A: n x n state matrix.
        C: p x n output matrix.
        settings: ``max_iter`` caps the number of projection rounds.
        method: ``"lmi"`` (alternating projections, returning ``L = 0`` when
            ``A`` is already Schur and falling back to the Riccati gain if
            the projections stall) or ``"dual_lqr"`` (discrete Riccati
            equation of the dual system).

    Returns:
        ``(L, P)`` where ``P`` solves ``A_L^T P A_L - P + I = 0``.

    Raises:
        DetectabilityError: if no stabilizing gain was found.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n, p = A.shape[0], C.shape[0]
    if A.shape != (n, n) or C.shape[1] != n:
        raise ValueError(f"shape mismatch: A {A.shape}, C {C.shape}")
    if method == "lmi":
        if spectral_radius(A) < 1.0 - SCHUR_MARGIN:
            L = np.zeros((n, p))
        else:
            L = _lmi_gain(A, C, min(settings.max_iter, LMI_MAX_ROUNDS))
            if L is None:
                # projections converge slowly on badly conditioned pairs
                log.info("observer LMI projections stalled; falling back to the dual Riccati gain")
                try:
                    L = _dual_lqr_gain(A, C)
                except (np.linalg.LinAlgError, ValueError):
                    L = None
    elif method == "dual_lqr":
        try:
            L = _dual_lqr_gain(A, C)
        except (np.linalg.LinAlgError, ValueError):
            L = None
    else:
        raise ValueError(f"unknown observer method {method!r}")
    if L is None or spectral_radius(A + L @ C) >= 1.0 - SCHUR_MARGIN:
        raise DetectabilityError(
            "observer synthesis infeasible: the detectability assumption on the pair (A, C) appears violated")
    P = solve_discrete_lyapunov(A + L @ C, np.eye(n))
    return L, P
