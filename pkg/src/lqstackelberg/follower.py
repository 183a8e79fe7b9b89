"""Follower stage: backward matrix Riccati flow, feedback gain, auxiliary
offset equation and the follower's value for a given leader control profile.

The Riccati flow uses the Moore-Penrose pseudo-inverse of the control-weight
block R11 + D1' P D1 and therefore tolerates a singular weight as long as the
range condition holds; psd/range certificates are evaluated at every node and
reported, never raised, by the solver itself.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import GameSpec, TimeGrid, eval_coefficient
from .numerics import BlowUp, MatrixPath, integrate_backward_rk4, pinv, psd_check, range_check

__all__ = [
    "FollowerCertificates",
    "FollowerSolution",
    "FollowerAux",
    "CertificateFailure",
    "solve_follower_riccati",
    "follower_gain",
    "solve_follower_aux",
    "follower_value",
]


class CertificateFailure(RuntimeError):
    """A downstream stage needed certificates that the solve did not earn."""


@dataclass
class FollowerCertificates:
    psd_ok: bool
    range_ok: bool
    blow_up: Optional[float] = None  # time of blow-up, if any

    @property
    def solvable(self) -> bool:
        return self.psd_ok and self.range_ok and self.blow_up is None

    def failure_reason(self) -> Optional[str]:
        if self.blow_up is not None:
            return f"closed-loop not solvable (blow-up near t={self.blow_up:.6g})"
        if not self.range_ok:
            return "range condition violated"
        if not self.psd_ok:
            return "psd condition violated"
        return None


@dataclass
class FollowerSolution:
    """Riccati path P1 (n x n), gain Theta1 (m1 x n), weight path Rhat11
    (= R11 + D1' P1 D1, m1 x m1), and node-wise certificates."""

    P1: MatrixPath
    Theta1: MatrixPath
    Rhat11: MatrixPath
    certificates: FollowerCertificates


@dataclass
class FollowerAux:
    """Deterministic auxiliary pair for a deterministic leader profile.

    The martingale integrand is identically zero for deterministic
    coefficients, so it is carried only for interface completeness.
    """

    eta1: MatrixPath  # (n,)
    zeta1: MatrixPath  # (n,), identically zero
    v1: MatrixPath  # (m1,)


class _HalfGridCoeffs:
    """Coefficient samples on the doubled index set {k*h/2}: index j <-> t = j*h/2.

    Gives the RK4 field exact values at nodes and half-nodes without repeated
    interpolation work.
    """

    def __init__(self, spec: GameSpec, grid: TimeGrid, names):
        self.h2 = grid.h / 2.0
        fine = TimeGrid(grid.T, 2 * grid.N)
        ts = fine.nodes
        for name in names:
            src = getattr(spec, name, None)
            if src is None:
                head, leaf = name.split(".")
                src = getattr(getattr(spec, head), leaf)
            vals = np.stack([eval_coefficient(src, float(t), grid) for t in ts])
            setattr(self, name.replace(".", "_"), vals)

    def index(self, t: float) -> int:
        return int(round(t / self.h2))


_FOLLOWER_COEFFS = ("A", "B1", "B2", "C", "D1", "D2", "b", "sigma",
                    "p1.Q", "p1.S1", "p1.S2", "p1.R11", "p1.R12",
                    "p1.q", "p1.rho1")


def solve_follower_riccati(spec: GameSpec, grid: TimeGrid) -> FollowerSolution:
    """Integrate the follower's Riccati equation backward from G1.

    Each accepted node is re-symmetrized.  psd/range certificates are checked
    at every node; a blow-up is recorded in the certificates (remaining nodes
    are NaN) rather than raised.
    """
    co = _HalfGridCoeffs(spec, grid, _FOLLOWER_COEFFS)
    G1 = spec.p1.G

    def field(t: float, P: np.ndarray) -> np.ndarray:
        j = co.index(t)
        A = co.A[j]
        B1 = co.B1[j]
        C = co.C[j]
        D1 = co.D1[j]
        Q = co.p1_Q[j]
        S11 = co.p1_S1[j]
        R111 = co.p1_R11[j]
        PC = P @ C
        Rhat = R111 + D1.T @ (P @ D1)
        Shat = B1.T @ P + D1.T @ PC + S11
        Rdag = pinv(Rhat).pinv
        return -(P @ A + A.T @ P + C.T @ PC + Q - Shat.T @ (Rdag @ Shat))

    blow_time = None
    valid_from = 0
    try:
        P1 = integrate_backward_rk4(field, G1, grid,
                                    post_step=lambda M: 0.5 * (M + M.T))
        values = P1.values
    except BlowUp as e:
        blow_time = e.time
        values = getattr(e, "partial_values", None)
        if values is None:
            values = np.full((grid.N + 1,) + G1.shape, np.nan)
            values[grid.N] = G1
            valid_from = grid.N
        else:
            valid_from = getattr(e, "valid_from", grid.N)
            values[:valid_from] = np.nan
        P1 = MatrixPath(grid, values)

    n, m1 = spec.dims.n, spec.dims.m1
    theta = np.full((grid.N + 1, m1, n), np.nan)
    rhat_path = np.full((grid.N + 1, m1, m1), np.nan)
    psd_ok = True
    range_ok = True
    for k in range(valid_from, grid.N + 1):
        j = 2 * k
        P = values[k]
        D1 = co.D1[j]
        Rhat = co.p1_R11[j] + D1.T @ (P @ D1)
        Shat = co.B1[j].T @ P + D1.T @ (P @ co.C[j]) + co.p1_S1[j]
        rhat_path[k] = Rhat
        psd_ok = psd_ok and psd_check(Rhat)
        range_ok = range_ok and range_check(Shat, Rhat)
        theta[k] = -pinv(Rhat).pinv @ Shat

    certs = FollowerCertificates(psd_ok=psd_ok, range_ok=range_ok, blow_up=blow_time)
    return FollowerSolution(
        P1=P1,
        Theta1=MatrixPath(grid, theta),
        Rhat11=MatrixPath(grid, rhat_path),
        certificates=certs,
    )


def follower_gain(sol: FollowerSolution) -> MatrixPath:
    """The follower's feedback gain; refuses if the certificates failed."""
    reason = sol.certificates.failure_reason()
    if reason is not None:
        raise CertificateFailure(reason)
    return sol.Theta1


def solve_follower_aux(spec: GameSpec, sol: FollowerSolution,
                       u2_profile: MatrixPath) -> FollowerAux:
    """Backward offset equation for a *deterministic* leader profile u2(t).

    With deterministic coefficients the martingale integrand vanishes, so the
    offset solves a plain linear backward ODE with terminal value g1.  P1 is
    interpolated linearly between its nodes.
    """
    reason = sol.certificates.failure_reason()
    if reason is not None:
        raise CertificateFailure(reason)
    grid = sol.P1.grid
    co = _HalfGridCoeffs(spec, grid, _FOLLOWER_COEFFS)
    u2v = u2_profile.values
    if u2v.shape[0] == grid.N + 1:
        # resample the control onto the half-grid by linear interpolation
        u2_half = np.empty((2 * grid.N + 1,) + u2v.shape[1:])
        u2_half[::2] = u2v
        u2_half[1::2] = 0.5 * (u2v[:-1] + u2v[1:])
    else:
        raise ValueError("u2 profile must live on the solver grid")
    P_half = np.empty((2 * grid.N + 1,) + sol.P1.shape)
    P_half[::2] = sol.P1.values
    P_half[1::2] = 0.5 * (sol.P1.values[:-1] + sol.P1.values[1:])

    def field(t: float, eta: np.ndarray) -> np.ndarray:
        j = co.index(t)
        P = P_half[j]
        A = co.A[j]
        B1 = co.B1[j]
        B2 = co.B2[j]
        C = co.C[j]
        D1 = co.D1[j]
        D2 = co.D2[j]
        Rhat = co.p1_R11[j] + D1.T @ (P @ D1)
        ShatT = P @ B1 + C.T @ (P @ D1) + co.p1_S1[j].T
        Rdag = pinv(Rhat).pinv
        K = ShatT @ Rdag
        u2 = u2_half[j]
        sigma = co.sigma[j]
        Psig = P @ sigma
        drift = (
            (A.T - K @ B1.T) @ eta
            + (C.T @ (P @ D2) + co.p1_S2[j].T + P @ B2 - K @ (co.p1_R12[j] + D1.T @ (P @ D2))) @ u2
            - K @ (D1.T @ Psig + co.p1_rho1[j])
            + C.T @ Psig + co.p1_q[j] + P @ co.b[j]
        )
        return -drift

    eta1 = integrate_backward_rk4(field, spec.p1.g, grid)
    zeta1 = MatrixPath(grid, np.zeros_like(eta1.values))

    m1 = spec.dims.m1
    v1 = np.empty((grid.N + 1, m1))
    for k in range(grid.N + 1):
        j = 2 * k
        P = sol.P1.values[k]
        D1 = co.D1[j]
        Rhat = sol.Rhat11.values[k]
        sigma = co.sigma[j]
        w = (co.B1[j].T @ eta1.values[k]
             + (co.p1_R12[j] + D1.T @ (P @ co.D2[j])) @ u2v[k]
             + D1.T @ (P @ sigma) + co.p1_rho1[j])
        v1[k] = -pinv(Rhat).pinv @ w
    return FollowerAux(eta1=eta1, zeta1=zeta1, v1=MatrixPath(grid, v1))


def follower_value(x: np.ndarray, spec: GameSpec, sol: FollowerSolution,
                   aux: FollowerAux, u2_profile: MatrixPath) -> float:
    """Best-response value of the follower against the deterministic profile u2.

    Composite-trapezoid quadrature of the completed-square integrand on the
    solver grid, plus the quadratic terms at t=0.
    """
    grid = sol.P1.grid
    co = _HalfGridCoeffs(spec, grid, _FOLLOWER_COEFFS + ("p1.R22", "p1.rho2"))
    x = np.asarray(x, dtype=float)
    u2v = u2_profile.values
    vals = np.empty(grid.N + 1)
    for k in range(grid.N + 1):
        j = 2 * k
        P = sol.P1.values[k]
        eta = aux.eta1.values[k]
        zeta = aux.zeta1.values[k]
        u2 = u2v[k]
        D1 = co.D1[j]
        D2 = co.D2[j]
        sigma = co.sigma[j]
        Psig = P @ sigma
        R22h = co.p1_R22[j] + D2.T @ (P @ D2)
        lin2 = co.p1_rho2[j] + D2.T @ Psig + co.B2[j].T @ eta + D2.T @ zeta
        w = (co.B1[j].T @ eta + D1.T @ zeta
             + (co.p1_R12[j] + D1.T @ (P @ D2)) @ u2
             + D1.T @ Psig + co.p1_rho1[j])
        Rdag = pinv(sol.Rhat11.values[k]).pinv
        vals[k] = (
            u2 @ (R22h @ u2)
            + 2.0 * (lin2 @ u2)
            + 2.0 * (eta @ co.b[j])
            + 2.0 * (zeta @ sigma)
            + sigma @ Psig
            - w @ (Rdag @ w)
        )
    integral = grid.h * (float(vals.sum()) - 0.5 * (vals[0] + vals[-1]))
    P0 = sol.P1.values[0]
    eta0 = aux.eta1.values[0]
    return float(x @ (P0 @ x) + 2.0 * (eta0 @ x) + integral)
