"""Sequences, block-Hankel lifts and rank diagnostics.

A trajectory is stored time-major, ``samples[k]`` being the sample at time k.
Hankel matrices follow the usual convention: column ``j`` is the stacked
window ``samples[j], ..., samples[j + L - 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# relative factor in the default numerical-rank tolerance
RANK_RTOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Trajectory:
    """A finite sequence of equally sized real vectors, shape ``(N, dim)``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2:
            raise ValueError(f"trajectory samples must be 1-D or 2-D, got shape {s.shape}")
        if s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError("trajectory needs length >= 1 and dim >= 1")
        object.__setattr__(self, "samples", _frozen(s))

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def window(self, start: int, stop: int) -> "Trajectory":
        """Samples ``start .. stop`` inclusive."""
        if not 0 <= start <= stop < self.length:
            raise IndexError(f"window [{start}, {stop}] outside [0, {self.length - 1}]")
        return Trajectory(self.samples[start:stop + 1])

    def stacked(self) -> np.ndarray:
        return self.samples.reshape(-1).copy()

    def __len__(self):
        return self.length


def as_trajectory(x) -> Trajectory:
    return x if isinstance(x, Trajectory) else Trajectory(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class HankelMatrix:
    depth: int
    block_dim: int
    data: np.ndarray = field(repr=False)

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    def block_row(self, i: int) -> np.ndarray:
        """Rows belonging to window position ``i`` (0-based)."""
        d = self.block_dim
        return self.data[i * d:(i + 1) * d]

    def block_rows(self, start: int, stop: int) -> np.ndarray:
        d = self.block_dim
        return self.data[start * d:stop * d]


@dataclass(frozen=True)
class RankReport:
    matrix_rows: int
    matrix_cols: int
    numerical_rank: int
    singular_values: np.ndarray = field(repr=False)
    tolerance: float

    @property
    def full_row_rank(self) -> bool:
        return self.numerical_rank == self.matrix_rows


def build_hankel(traj, L: int) -> HankelMatrix:
    """Depth-``L`` block-Hankel matrix of ``traj``.

    Shape is ``(dim * L, N - L + 1)``; raises ``ValueError`` if ``L > N``.

    >>> build_hankel([0., 1., 2., 3.], 2).data
    array([[0., 1., 2.],
           [1., 2., 3.]])
    """
    traj = as_trajectory(traj)
    N, dim = traj.length, traj.dim
    if L < 1:
        raise ValueError(f"Hankel depth must be positive, got {L}")
    if L > N:
        raise ValueError(f"Hankel depth L={L} exceeds trajectory length N={N}")
    windows = np.lib.stride_tricks.sliding_window_view(traj.samples, (L, dim))[:, 0]
    # windows: (N - L + 1, L, dim) -> columns are stacked windows
    data = windows.reshape(N - L + 1, L * dim).T
    return HankelMatrix(depth=L, block_dim=dim, data=_frozen(data))


def default_rank_tol(s: np.ndarray, shape: tuple[int, int]) -> float:
    if s.size == 0:
        return 0.0
    return max(shape) * s[0] * RANK_RTOL


def rank_report(M: np.ndarray, tol: float | None = None) -> RankReport:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    s = np.linalg.svd(M, compute_uv=False)
    if tol is None:
        tol = default_rank_tol(s, M.shape)
    rank = int(np.sum(s > tol))
    return RankReport(M.shape[0], M.shape[1], rank, s, float(tol))


def is_persistently_exciting(u, L: int, tol: float | None = None) -> RankReport:
    """Rank report of ``H_L(u)``; ``full_row_rank`` iff ``u`` is PE of order ``L``.

    Short sequences are not an error: the Hankel matrix simply cannot reach
    rank ``dim * L`` and the report says so.
    """
    return rank_report(build_hankel(u, L).data, tol)


def check_state_input_rank(x, u, L: int, tol: float | None = None) -> RankReport:
    """Rank of ``[H_1(x[0..N-L]); H_L(u[0..N-1])]`` (rows ``n + m L``)."""
    x, u = as_trajectory(x), as_trajectory(u)
    if x.length != u.length:
        raise ValueError(f"state and input lengths differ: {x.length} vs {u.length}")
    N = x.length
    if L > N:
        raise ValueError(f"depth L={L} exceeds trajectory length N={N}")
    Hx = build_hankel(x.window(0, N - L), 1).data
    Hu = build_hankel(u, L).data
    return rank_report(np.vstack([Hx, Hu]), tol)


def stack_blocks(stack: Sequence[HankelMatrix | np.ndarray]) -> np.ndarray:
    if len(stack) == 0:
        raise ValueError("empty Hankel stack")
    mats = [h.data if isinstance(h, HankelMatrix) else np.atleast_2d(h) for h in stack]
    cols = {m.shape[1] for m in mats}
    if len(cols) != 1:
        raise ValueError(f"Hankel blocks disagree on column count: {sorted(cols)}")
    return np.vstack(mats)


def lstsq_min_norm(M: np.ndarray, b: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Minimum-norm least-squares solution by truncated SVD."""
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if tol is None:
        tol = default_rank_tol(s, M.shape)
    keep = s > tol
    coef = (U[:, keep].T @ b) / s[keep]
    return Vt[keep].T @ coef


def span_residual(stack, target, tol: float | None = None) -> tuple[np.ndarray, float]:
    """Least-squares ``alpha`` for ``stack @ alpha = target`` and the misfit norm."""
    M = stack_blocks(stack)
    target = np.asarray(target, dtype=float).reshape(-1)
    if target.shape[0] != M.shape[0]:
        raise ValueError(f"target height {target.shape[0]} != stack height {M.shape[0]}")
    alpha = lstsq_min_norm(M, target, tol)
    return alpha, float(np.linalg.norm(M @ alpha - target))
