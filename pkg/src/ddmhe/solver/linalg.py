"""Small dense helpers: spectra, weighted norms, pseudo-inverse norms."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla


def spectral_radius(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def eig_sym(S) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvectors of the symmetric part of ``S``."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    return np.linalg.eigh(0.5 * (S + S.T))


def lambda_min(S) -> float:
    return float(eig_sym(S)[0][0])


def lambda_max(S) -> float:
    return float(eig_sym(S)[0][-1])


def check_pd(P, name: str = "P") -> np.ndarray:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[0] != P.shape[1]:
        raise ValueError(f"{name} must be square, got {P.shape}")
    if not np.allclose(P, P.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(P).max())):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(0.5 * (P + P.T))
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return 0.5 * (P + P.T)


def weighted_operator_norm(M, P, mode: str = "auto") -> float:
    """Operator norm of ``M`` measured in ``|.|_P`` on the output side.

    ``mode="induced"`` gives ``max |M w|_P / |w|_P`` (``M`` square),
    ``mode="euclidean_input"`` gives ``max |M w|_P / |w|``; ``"auto"`` picks
    the former for square ``M`` and the latter otherwise.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    P = check_pd(P)
    if M.shape[0] != P.shape[0]:
        raise ValueError(f"M has {M.shape[0]} rows but P is {P.shape}")
    if mode == "auto":
        mode = "induced" if M.shape[0] == M.shape[1] else "euclidean_input"
    G = M.T @ P @ M
    G = 0.5 * (G + G.T)
    if mode == "induced":
        if M.shape[0] != M.shape[1]:
            raise ValueError("induced weighted norm needs a square M")
        top = sla.eigh(G, P, eigvals_only=True)[-1]
    elif mode == "euclidean_input":
        top = np.linalg.eigvalsh(G)[-1]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(np.sqrt(max(top, 0.0)))


def pinv_norm(M, rtol: float = 1e-12) -> float:
    """Spectral norm of the Moore-Penrose inverse, i.e. one over the smallest nonzero singular value."""
    s = np.linalg.svd(np.atleast_2d(np.asarray(M, dtype=float)), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0.0
    s = s[s > rtol * max(np.atleast_2d(M).shape) * s[0]]
    return float(1.0 / s[-1])
