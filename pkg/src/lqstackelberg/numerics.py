"""Shared numerical kernels: backward RK4 on matrix ODEs, SVD pseudo-inverse,
range and positive-semidefiniteness certificates.

All routines are deterministic: same inputs, bit-identical outputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import TimeGrid

__all__ = [
    "MatrixPath",
    "PinvResult",
    "BlowUp",
    "NonFinite",
    "integrate_backward_rk4",
    "pinv",
    "range_check",
    "psd_check",
    "BLOWUP_NORM",
]

#: Frobenius-norm threshold above which a backward integration is declared blown up.
BLOWUP_NORM = 1e8


class BlowUp(RuntimeError):
    """Backward integration exceeded the norm cap.

    Attributes
    ----------
    time : float
        Time at which the cap was first exceeded.
    """

    def __init__(self, time: float, norm: float):
        super().__init__(f"matrix ODE blow-up near t={time:.6g} (|M|_F={norm:.3g})")
        self.time = time
        self.norm = norm


class NonFinite(RuntimeError):
    """NaN or Inf appeared during integration or simulation."""

    def __init__(self, time: float, where: str = ""):
        msg = f"non-finite values near t={time:.6g}"
        if where:
            msg += f" in {where}"
        super().__init__(msg)
        self.time = time
        self.where = where


@dataclass
class MatrixPath:
    """Values of a matrix (or vector) function at the nodes of a TimeGrid.

    values[k] is the value at grid.nodes[k]; values has shape (N+1, *shape).
    """

    grid: TimeGrid
    values: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.values.shape[1:]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.values[k]

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation between nodes; exact at the nodes."""
        g = self.grid
        slack = 16.0 * np.finfo(float).eps * max(1.0, abs(g.T))
        if t < -slack or t > g.T + slack:
            raise ValueError(f"t={t} outside [0, {g.T}]")
        u = min(max(t, 0.0), g.T) / g.h
        k = int(u)
        if k >= g.N:
            return self.values[g.N]
        w = u - k
        if w == 0.0:
            return self.values[k]
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def thin(self, stride: int) -> "MatrixPath":
        """Keep every stride-th node (N must be divisible by stride)."""
        if self.grid.N % stride != 0:
            raise ValueError(f"stride {stride} does not divide N={self.grid.N}")
        return MatrixPath(TimeGrid(self.grid.T, self.grid.N // stride),
                          self.values[::stride].copy())


def integrate_backward_rk4(
    field: Callable[[float, np.ndarray], np.ndarray],
    terminal: np.ndarray,
    grid: TimeGrid,
    post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> MatrixPath:
    """Integrate dM/dt = field(t, M) backward from M(T) = terminal.

    Classical RK4 marching t_N -> t_0; the terminal node is assigned exactly
    (no arithmetic).  ``post_step`` optionally post-processes each accepted
    node value (e.g. re-symmetrization for Riccati flows).

    Raises
    ------
    BlowUp
        If any stage state or accepted value exceeds ``BLOWUP_NORM`` in
        Frobenius norm; the exception carries the time of first excess.
    NonFinite
        If NaN/Inf appears.
    """
    terminal = np.asarray(terminal, dtype=float)
    nodes = grid.nodes
    out = np.empty((grid.N + 1,) + terminal.shape, dtype=float)
    out[grid.N] = terminal

    norm0 = float(np.linalg.norm(terminal))
    if not np.isfinite(norm0):
        raise NonFinite(grid.T, "terminal value")
    if norm0 > BLOWUP_NORM:
        raise BlowUp(grid.T, norm0)

    M = terminal
    for k in range(grid.N, 0, -1):
        t1 = nodes[k]
        t0 = nodes[k - 1]
        h = t1 - t0
        tm = t1 - 0.5 * h

        try:
            k1 = field(t1, M)
            s2 = M - 0.5 * h * k1
            _guard(s2, tm)
            k2 = field(tm, s2)
            s3 = M - 0.5 * h * k2
            _guard(s3, tm)
            k3 = field(tm, s3)
            s4 = M - h * k3
            _guard(s4, t0)
            k4 = field(t0, s4)

            M = M - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if post_step is not None:
                M = post_step(M)
            _guard(M, t0)
        except (BlowUp, NonFinite) as e:
            # Nodes k..N were accepted before the failure; expose them so the
            # caller can keep the trustworthy tail of the path.
            e.partial_values = out
            e.valid_from = k
            raise
        out[k - 1] = M

    return MatrixPath(grid, out)


def _guard(M: np.ndarray, t: float):
    nrm = float(np.linalg.norm(M))
    if np.isnan(nrm):
        raise NonFinite(t)
    if nrm > BLOWUP_NORM:
        raise BlowUp(t, nrm)


@dataclass
class PinvResult:
    """Moore-Penrose pseudo-inverse with its numerical rank decision.

    pinv : the pseudo-inverse matrix
    rank : number of singular values kept
    singular_values : all singular values, descending
    """

    pinv: np.ndarray
    rank: int
    singular_values: np.ndarray


def pinv(M: np.ndarray, rel_tol: float = 1e-10) -> PinvResult:
    """SVD-based Moore-Penrose pseudo-inverse.

    Singular values at or below ``rel_tol * sigma_max`` are treated as zero.
    For a retained-rank decomposition the four Moore-Penrose identities hold
    to ~1e-10 * |M|.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return PinvResult(np.zeros(M.shape[::-1]), 0, s)
    cutoff = rel_tol * s[0]
    rank = int(np.sum(s > cutoff))
    if rank == 0:
        return PinvResult(np.zeros(M.shape[::-1]), 0, s)
    inv_s = np.zeros_like(s)
    inv_s[:rank] = 1.0 / s[:rank]
    P = (vt.T * inv_s) @ u.T
    return PinvResult(P, rank, s)


def range_check(M: np.ndarray, R: np.ndarray, tol: float = 1e-8) -> bool:
    """True iff the columns of M lie in the range of R.

    Tested as |(I - R R^+) M|_F <= tol * max(1, |M|_F).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    proj = R @ pinv(R).pinv
    defect = float(np.linalg.norm(M - proj @ M))
    return defect <= tol * max(1.0, float(np.linalg.norm(M)))


def psd_check(M: np.ndarray, tol: float = 1e-8) -> bool:
    """True iff the symmetric part of M is positive semidefinite up to -tol."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    S = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(S)
    return bool(w[0] >= -tol)
