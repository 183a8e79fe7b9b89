"""Leader stage: fold the follower's optimal response into the dynamics and
cost ("hat" coefficients), stack state and follower-adjoint into a doubled
system, solve the leader's non-self-adjoint Riccati flow and offset equation,
and build the resulting feedback policy for both players.

All inverses here are true inverses guarded by condition-number checks, never
pseudo-inverses: the leader construction assumes the follower's control weight
is invertible.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .follower import CertificateFailure, FollowerSolution
from .model import GameSpec, TimeGrid, eval_coefficient
from .numerics import BlowUp, MatrixPath, integrate_backward_rk4

__all__ = [
    "COND_LIMIT",
    "SingularRhat",
    "SingularFactor",
    "NotHomogeneous",
    "LeaderReduction",
    "AugmentedSystem",
    "LeaderCertificates",
    "LeaderSolution",
    "StackelbergPolicy",
    "reduce_leader",
    "assemble_augmented",
    "solve_leader_riccati",
    "solve_leader_riccati_certified",
    "solve_eta",
    "leader_gains",
    "build_policy",
    "leader_value",
]

#: Condition-number ceiling for every true inverse taken in this module.
COND_LIMIT = 1e12


class SingularRhat(RuntimeError):
    """The follower's effective control weight is numerically singular, so the
    reduction (which needs its true inverse) refuses."""

    def __init__(self, time: float, cond: float):
        super().__init__(
            f"follower control weight not invertible at t={time:.6g} "
            f"(cond={cond:.3g})")
        self.time = time
        self.cond = cond


class SingularFactor(RuntimeError):
    """A factor inside the leader Riccati flow lost invertibility."""

    def __init__(self, time: float, which: str, cond: float):
        super().__init__(f"{which} not invertible at t={time:.6g} (cond={cond:.3g})")
        self.time = time
        self.which = which
        self.cond = cond


class NotHomogeneous(ValueError):
    """The closed-form value needs a fully homogeneous problem."""


def _cond_solve(M: np.ndarray, rhs: np.ndarray, t: float, which: str) -> np.ndarray:
    """solve(M, rhs) with a condition-number guard."""
    c = float(np.linalg.cond(M))
    if not np.isfinite(c) or c > COND_LIMIT:
        raise SingularFactor(t, which, c)
    return np.linalg.solve(M, rhs)


@dataclass
class LeaderReduction:
    """Hat coefficients sampled at the nodes of ``grid`` (arrays of shape
    (K+1, ...)).  Produced by reduce_leader; consumed by assemble_augmented
    and build_policy."""

    grid: TimeGrid
    B1: np.ndarray  # n x m1, original control-1 drift coefficient
    D1: np.ndarray  # n x m1, original control-1 diffusion coefficient
    Rhat111: np.ndarray  # m1 x m1
    Rhat112: np.ndarray  # m1 x m2
    Rhat121: np.ndarray  # m2 x m1
    rhohat11: np.ndarray  # m1
    Shat11: np.ndarray  # m1 x n
    Shat12: np.ndarray  # m2 x n
    Ahat: np.ndarray  # n x n
    Chat: np.ndarray  # n x n
    Dhat1: np.ndarray  # n x n
    Fhat1: np.ndarray  # n x n
    Bhat1: np.ndarray  # n x n
    Bhat2: np.ndarray  # n x m2
    Dhat2: np.ndarray  # n x m2
    bhat: np.ndarray  # n
    sigmahat: np.ndarray  # n
    Fhat2: np.ndarray  # m2 x n
    betahat: np.ndarray  # n
    Qhat11: np.ndarray  # n x n
    Qhat12: np.ndarray  # n x n
    Qhat13: np.ndarray  # n x n
    Qhat22: np.ndarray  # n x n
    Qhat23: np.ndarray  # n x n
    Qhat33: np.ndarray  # n x n
    Khat1: np.ndarray  # m2 x n
    Khat2: np.ndarray  # m2 x n
    Khat3: np.ndarray  # m2 x n
    Rhat2: np.ndarray  # m2 x m2
    qhat1: np.ndarray  # n
    qhat2: np.ndarray  # n
    qhat3: np.ndarray  # n
    rhohat: np.ndarray  # m2
    lhat: np.ndarray  # scalar per node


@dataclass
class AugmentedSystem:
    """Doubled system: state X = (state, follower-adjoint), dimension 2n.

    Coefficient arrays are sampled at the nodes of ``grid`` (shape (K+1, ...)),
    so an integrator running on a grid whose step is a multiple of this one
    reads exact values at all its stage times via ``index``.
    """

    grid: TimeGrid
    n: int
    calA: np.ndarray  # 2n x 2n
    calB1: np.ndarray  # 2n x 2n
    calB2: np.ndarray  # 2n x m2
    calC: np.ndarray  # 2n x 2n
    calD1: np.ndarray  # 2n x 2n
    calD2: np.ndarray  # 2n x m2
    calF1: np.ndarray  # 2n x 2n
    calF2: np.ndarray  # m2 x 2n
    calQ2: np.ndarray  # 2n x 2n
    rhat2: np.ndarray  # m2 x m2 (leader's reduced control weight)
    rhohat: np.ndarray  # m2 (leader's reduced control offset)
    bbold: np.ndarray  # 2n
    sigmabold: np.ndarray  # 2n
    betabold: np.ndarray  # 2n
    calG2: np.ndarray  # 2n x 2n, terminal weight (constant)
    gbold: np.ndarray  # 2n, terminal offset (constant)
    X0: np.ndarray  # 2n
    #: source problem, kept so downstream cost evaluation needs no extra plumbing
    spec: Optional[GameSpec] = None

    def index(self, t: float) -> int:
        """Node index of time t; t must sit on (within ulps of) a node."""
        return int(round(t / self.grid.h))

    def path(self, name: str) -> MatrixPath:
        """Wrap one coefficient array as an interpolating MatrixPath."""
        return MatrixPath(self.grid, getattr(self, name))


@dataclass
class LeaderCertificates:
    invertible_IminusPD1: bool
    invertible_Rtilde: bool
    blow_up: Optional[float] = None
    min_margin_IminusPD1: float = 0.0  # min over nodes of 1/cond
    min_margin_Rtilde: float = 0.0

    @property
    def solvable(self) -> bool:
        return (self.invertible_IminusPD1 and self.invertible_Rtilde
                and self.blow_up is None)

    def failure_reason(self) -> Optional[str]:
        if self.blow_up is not None:
            return f"leader equation blow-up near t={self.blow_up:.6g}"
        if not self.invertible_IminusPD1:
            return "leader factor (I - P*D1) lost invertibility"
        if not self.invertible_Rtilde:
            return "leader effective control weight lost invertibility"
        return None


@dataclass
class LeaderSolution:
    """Everything the leader stage produces on the solver grid."""

    P: MatrixPath  # 2n x 2n
    eta: MatrixPath  # 2n
    zeta: MatrixPath  # 2n, identically zero
    Theta2bold: MatrixPath  # m2 x 2n
    v2: MatrixPath  # m2
    certificates: LeaderCertificates
    n: int

    def _block(self, i: int, j: int) -> MatrixPath:
        n = self.n
        return MatrixPath(self.P.grid,
                          self.P.values[:, i * n:(i + 1) * n, j * n:(j + 1) * n].copy())

    @property
    def P1(self) -> MatrixPath:
        return self._block(0, 0)

    @property
    def P2(self) -> MatrixPath:
        return self._block(0, 1)

    @property
    def P3(self) -> MatrixPath:
        return self._block(1, 0)

    @property
    def P4(self) -> MatrixPath:
        return self._block(1, 1)


_REDUCE_COEFFS = ("A", "B1", "B2", "C", "D1", "D2", "b", "sigma",
                  "p1.S1", "p1.S2", "p1.R11", "p1.R12", "p1.q", "p1.rho1",
                  "p2.Q", "p2.S1", "p2.S2", "p2.R11", "p2.R12", "p2.R21",
                  "p2.R22", "p2.q", "p2.rho1", "p2.rho2")


def reduce_leader(spec: GameSpec, fsol: FollowerSolution, grid: TimeGrid) -> LeaderReduction:
    """Fold the follower's feedback into dynamics and cost.

    Samples land on the nodes of the grid the follower was solved on (which
    may be finer than ``grid``); ``grid`` itself fixes the interpretation of
    any sampled coefficient paths in ``spec``.
    """
    reason = fsol.certificates.failure_reason()
    if reason is not None:
        raise CertificateFailure(reason)

    fine = fsol.P1.grid
    ts = fine.nodes
    K = fine.N
    n, m1, m2 = spec.dims.n, spec.dims.m1, spec.dims.m2

    co = {}
    for name in _REDUCE_COEFFS:
        if "." in name:
            head, leaf = name.split(".")
            src = getattr(getattr(spec, head), leaf)
        else:
            src = getattr(spec, name)
        co[name] = np.stack([eval_coefficient(src, float(t), grid) for t in ts])

    out = {"B1": co["B1"].copy(), "D1": co["D1"].copy()}
    shapes = {
        "Rhat111": (m1, m1), "Rhat112": (m1, m2), "Rhat121": (m2, m1),
        "rhohat11": (m1,), "Shat11": (m1, n), "Shat12": (m2, n),
        "Ahat": (n, n), "Chat": (n, n), "Dhat1": (n, n), "Fhat1": (n, n),
        "Bhat1": (n, n), "Bhat2": (n, m2), "Dhat2": (n, m2),
        "bhat": (n,), "sigmahat": (n,), "Fhat2": (m2, n), "betahat": (n,),
        "Qhat11": (n, n), "Qhat12": (n, n), "Qhat13": (n, n),
        "Qhat22": (n, n), "Qhat23": (n, n), "Qhat33": (n, n),
        "Khat1": (m2, n), "Khat2": (m2, n), "Khat3": (m2, n),
        "Rhat2": (m2, m2), "qhat1": (n,), "qhat2": (n,), "qhat3": (n,),
        "rhohat": (m2,), "lhat": (),
    }
    for k, shp in shapes.items():
        out[k] = np.empty((K + 1,) + shp)

    # z = (state, eta, zeta, u2) maps to (state, u1, u2) via W z + c, and the
    # leader's reduced cost is the congruence of the player-2 weight by (W, c).
    nz = 3 * n + m2
    ix = slice(0, n)
    ie = slice(n, 2 * n)
    iz = slice(2 * n, 3 * n)
    iu = slice(3 * n, nz)

    for j in range(K + 1):
        t = float(ts[j])
        P1 = fsol.P1.values[j]
        A, B1, B2, C = co["A"][j], co["B1"][j], co["B2"][j], co["C"][j]
        D1, D2, b, sig = co["D1"][j], co["D2"][j], co["b"][j], co["sigma"][j]
        P1C = P1 @ C

        Rhat111 = co["p1.R11"][j] + D1.T @ (P1 @ D1)
        cond = float(np.linalg.cond(Rhat111))
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularRhat(t, cond)
        L = np.linalg.inv(Rhat111)

        Shat11 = B1.T @ P1 + D1.T @ P1C + co["p1.S1"][j]
        Shat12 = B2.T @ P1 + D2.T @ P1C + co["p1.S2"][j]
        rhohat11 = co["p1.rho1"][j] + D1.T @ (P1 @ sig)
        Rhat112 = co["p1.R12"][j] + D1.T @ (P1 @ D2)
        Rhat121 = Rhat112.T

        LS = L @ Shat11
        out["Rhat111"][j] = Rhat111
        out["Rhat112"][j] = Rhat112
        out["Rhat121"][j] = Rhat121
        out["rhohat11"][j] = rhohat11
        out["Shat11"][j] = Shat11
        out["Shat12"][j] = Shat12
        out["Ahat"][j] = A - B1 @ LS
        out["Chat"][j] = C - D1 @ LS
        out["Dhat1"][j] = -D1 @ (L @ D1.T)
        out["Fhat1"][j] = -B1 @ (L @ B1.T)
        out["Bhat1"][j] = -B1 @ (L @ D1.T)
        out["Bhat2"][j] = B2 - B1 @ (L @ Rhat112)
        out["Dhat2"][j] = D2 - D1 @ (L @ Rhat112)
        out["bhat"][j] = b - B1 @ (L @ rhohat11)
        out["sigmahat"][j] = sig - D1 @ (L @ rhohat11)
        out["Fhat2"][j] = Shat12 - Rhat121 @ LS
        out["betahat"][j] = (C.T @ (P1 @ sig) + co["p1.q"][j] + P1 @ b
                             - Shat11.T @ (L @ rhohat11))

        # Congruence of the player-2 cost by the optimal-response map.
        W = np.zeros((n + m1 + m2, nz))
        W[:n, ix] = np.eye(n)
        W[n:n + m1, ix] = -LS
        W[n:n + m1, ie] = -L @ B1.T
        W[n:n + m1, iz] = -L @ D1.T
        W[n:n + m1, iu] = -L @ Rhat112
        W[n + m1:, iu] = np.eye(m2)
        c = np.zeros(n + m1 + m2)
        c[n:n + m1] = -L @ rhohat11

        Phi = np.zeros((n + m1 + m2, n + m1 + m2))
        Phi[:n, :n] = co["p2.Q"][j]
        Phi[:n, n:n + m1] = co["p2.S1"][j].T
        Phi[:n, n + m1:] = co["p2.S2"][j].T
        Phi[n:n + m1, :n] = co["p2.S1"][j]
        Phi[n:n + m1, n:n + m1] = co["p2.R11"][j]
        Phi[n:n + m1, n + m1:] = co["p2.R12"][j]
        Phi[n + m1:, :n] = co["p2.S2"][j]
        Phi[n + m1:, n:n + m1] = co["p2.R21"][j]
        Phi[n + m1:, n + m1:] = co["p2.R22"][j]
        phi = np.concatenate([co["p2.q"][j], co["p2.rho1"][j], co["p2.rho2"][j]])

        H = W.T @ Phi @ W
        H = 0.5 * (H + H.T)
        h = W.T @ (Phi @ c + phi)

        out["Qhat11"][j] = H[ix, ix]
        out["Qhat12"][j] = H[ie, ix]
        out["Qhat13"][j] = H[iz, ix]
        out["Qhat22"][j] = H[ie, ie]
        out["Qhat23"][j] = H[iz, ie]
        out["Qhat33"][j] = H[iz, iz]
        out["Khat1"][j] = H[iu, ix]
        out["Khat2"][j] = H[iu, ie]
        out["Khat3"][j] = H[iu, iz]
        out["Rhat2"][j] = H[iu, iu]
        out["qhat1"][j] = h[ix]
        out["qhat2"][j] = h[ie]
        out["qhat3"][j] = h[iz]
        out["rhohat"][j] = h[iu]
        out["lhat"][j] = c @ (Phi @ c) + 2.0 * (phi @ c)

    return LeaderReduction(grid=fine, **out)


def assemble_augmented(red: LeaderReduction, spec: GameSpec, x: np.ndarray) -> AugmentedSystem:
    """Stack the reduced problem into the doubled (2n) standard form.

    Terminal data pair as (player-2 terminal offset, follower offset terminal):
    the backward variable stacks (leader adjoint, follower offset), so its
    terminal value is (g2, g1).
    """
    n, m2 = spec.dims.n, spec.dims.m2
    K = red.grid.N
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"initial state must have shape ({n},)")

    Z = np.zeros((n, n))
    calA = np.empty((K + 1, 2 * n, 2 * n))
    calB1 = np.empty_like(calA)
    calC = np.empty_like(calA)
    calD1 = np.empty_like(calA)
    calF1 = np.empty_like(calA)
    calQ2 = np.empty_like(calA)
    calB2 = np.empty((K + 1, 2 * n, m2))
    calD2 = np.empty_like(calB2)
    calF2 = np.empty((K + 1, m2, 2 * n))
    bbold = np.empty((K + 1, 2 * n))
    sigmabold = np.empty_like(bbold)
    betabold = np.empty_like(bbold)

    for j in range(K + 1):
        calA[j] = np.block([[red.Ahat[j], Z], [red.Qhat12[j], red.Ahat[j]]])
        calC[j] = np.block([[red.Chat[j], Z], [red.Qhat13[j], red.Chat[j]]])
        calF1[j] = np.block([[Z, red.Fhat1[j]], [red.Fhat1[j].T, red.Qhat22[j]]])
        calB1[j] = np.block([[Z, red.Bhat1[j]], [red.Bhat1[j], red.Qhat23[j].T]])
        calD1[j] = np.block([[Z, red.Dhat1[j]], [red.Dhat1[j].T, red.Qhat33[j]]])
        calQ2[j] = np.block([[red.Qhat11[j], Z], [Z, Z]])
        calB2[j] = np.vstack([red.Bhat2[j], red.Khat2[j].T])
        calD2[j] = np.vstack([red.Dhat2[j], red.Khat3[j].T])
        calF2[j] = np.hstack([red.Khat1[j], red.Fhat2[j]])
        bbold[j] = np.concatenate([red.bhat[j], red.qhat2[j]])
        sigmabold[j] = np.concatenate([red.sigmahat[j], red.qhat3[j]])
        betabold[j] = np.concatenate([red.qhat1[j], red.betahat[j]])

    calG2 = np.zeros((2 * n, 2 * n))
    calG2[:n, :n] = spec.p2.G
    gbold = np.concatenate([spec.p2.g, spec.p1.g])
    X0 = np.concatenate([x, np.zeros(n)])

    return AugmentedSystem(
        grid=red.grid, n=n,
        calA=calA, calB1=calB1, calB2=calB2, calC=calC, calD1=calD1,
        calD2=calD2, calF1=calF1, calF2=calF2, calQ2=calQ2,
        rhat2=red.Rhat2, rhohat=red.rhohat,
        bbold=bbold, sigmabold=sigmabold, betabold=betabold,
        calG2=calG2, gbold=gbold, X0=X0, spec=spec,
    )


def _leader_rhs(aug: AugmentedSystem, t: float, P: np.ndarray) -> np.ndarray:
    """Right side of dP/dt for the leader flow (gain-substituted form)."""
    j = aug.index(t)
    A = aug.calA[j]
    B1 = aug.calB1[j]
    B2 = aug.calB2[j]
    C = aug.calC[j]
    D1 = aug.calD1[j]
    D2 = aug.calD2[j]
    F1 = aug.calF1[j]
    F2 = aug.calF2[j]
    Q2 = aug.calQ2[j]
    R2 = aug.rhat2[j]

    IPD = np.eye(P.shape[0]) - P @ D1
    K = _cond_solve(IPD, P, t, "I - P*D1")  # (I - P D1)^{-1} P
    CB = C + B1.T @ P
    KCB = K @ CB
    KD2 = K @ D2
    Rt = R2 + D2.T @ KD2
    L = B2.T @ P + F2 + D2.T @ KCB
    Theta = -_cond_solve(Rt, L, t, "effective control weight")
    CtPB1 = C.T + P @ B1
    dP = (A.T @ P + P @ A + P @ (F1 @ P) + Q2 + CtPB1 @ KCB
          + (P @ B2 + F2.T + CtPB1 @ KD2) @ Theta)
    return -dP


def solve_leader_riccati(aug: AugmentedSystem, grid: TimeGrid) -> MatrixPath:
    """Backward RK4 for the doubled Riccati flow from its terminal weight.

    No symmetrization: the flow is not self-adjoint in general.  Invertibility
    of (I - P*D1) and of the effective control weight is checked at every
    field evaluation.
    """
    return integrate_backward_rk4(lambda t, P: _leader_rhs(aug, t, P),
                                  aug.calG2, grid)


def solve_leader_riccati_certified(
        aug: AugmentedSystem, grid: TimeGrid) -> Tuple[MatrixPath, LeaderCertificates]:
    """solve_leader_riccati plus node-wise condition margins; a blow-up is
    captured in the certificates (values NaN below the blow-up node) instead
    of raised."""
    blow_time = None
    valid_from = 0
    try:
        P = solve_leader_riccati(aug, grid)
        values = P.values
    except BlowUp as e:
        blow_time = e.time
        values = getattr(e, "partial_values", None)
        if values is None:
            values = np.full((grid.N + 1,) + aug.calG2.shape, np.nan)
            values[grid.N] = aug.calG2
            valid_from = grid.N
        else:
            valid_from = getattr(e, "valid_from", grid.N)
            values[:valid_from] = np.nan
        P = MatrixPath(grid, values)

    margin_ipd = np.inf
    margin_rt = np.inf
    ok_ipd = True
    ok_rt = True
    eye = np.eye(2 * aug.n)
    for k in range(valid_from, grid.N + 1):
        t = float(grid.nodes[k])
        j = aug.index(t)
        Pk = values[k]
        IPD = eye - Pk @ aug.calD1[j]
        c1 = float(np.linalg.cond(IPD))
        margin_ipd = min(margin_ipd, 0.0 if not np.isfinite(c1) else 1.0 / c1)
        ok_ipd = ok_ipd and np.isfinite(c1) and c1 <= COND_LIMIT
        if np.isfinite(c1) and c1 <= COND_LIMIT:
            K = np.linalg.solve(IPD, Pk)
            Rt = aug.rhat2[j] + aug.calD2[j].T @ (K @ aug.calD2[j])
            c2 = float(np.linalg.cond(Rt))
            margin_rt = min(margin_rt, 0.0 if not np.isfinite(c2) else 1.0 / c2)
            ok_rt = ok_rt and np.isfinite(c2) and c2 <= COND_LIMIT
        else:
            ok_rt = False

    certs = LeaderCertificates(
        invertible_IminusPD1=ok_ipd,
        invertible_Rtilde=ok_rt,
        blow_up=blow_time,
        min_margin_IminusPD1=float(margin_ipd),
        min_margin_Rtilde=float(margin_rt),
    )
    return P, certs


def _eta_rhs(aug: AugmentedSystem, t: float, P: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Right side of d(eta)/dt with the martingale integrand deleted."""
    j = aug.index(t)
    A = aug.calA[j]
    B1 = aug.calB1[j]
    B2 = aug.calB2[j]
    C = aug.calC[j]
    D1 = aug.calD1[j]
    D2 = aug.calD2[j]
    F1 = aug.calF1[j]
    F2 = aug.calF2[j]
    R2 = aug.rhat2[j]
    sig = aug.sigmabold[j]

    IPD = np.eye(P.shape[0]) - P @ D1
    K = _cond_solve(IPD, P, t, "I - P*D1")
    CtPB1 = C.T + P @ B1
    Rt = R2 + D2.T @ (K @ D2)
    M2 = CtPB1 @ (K @ D2) + F2.T + P @ B2
    rhs_v = (B2.T + D2.T @ (K @ B1.T)) @ eta + D2.T @ (K @ sig) + aug.rhohat[j]
    v2 = -_cond_solve(Rt, rhs_v, t, "effective control weight")
    drift = ((A.T + CtPB1 @ (K @ B1.T) + P @ F1) @ eta + M2 @ v2
             + CtPB1 @ (K @ sig) + aug.betabold[j] + P @ aug.bbold[j])
    return -drift


def solve_eta(aug: AugmentedSystem, P: MatrixPath, grid: TimeGrid) -> MatrixPath:
    """Backward offset equation for the leader, terminal value the stacked
    terminal offsets.

    The flow of P is re-integrated jointly so the offset sees stage-consistent
    values of P (not interpolants); the joint P nodes are asserted identical
    to the given path.
    """
    d = 2 * aug.n
    terminal = np.concatenate([aug.calG2, aug.gbold[:, None]], axis=1)

    def field(t: float, S: np.ndarray) -> np.ndarray:
        Pm = S[:, :d]
        eta = S[:, d]
        dP = _leader_rhs(aug, t, Pm)
        deta = _eta_rhs(aug, t, Pm, eta)
        return np.concatenate([dP, deta[:, None]], axis=1)

    joint = integrate_backward_rk4(field, terminal, grid)
    if not np.array_equal(joint.values[:, :, :d], P.values):
        raise ValueError("offset equation saw a different Riccati path than supplied")
    return MatrixPath(grid, joint.values[:, :, d].copy())


def leader_gains(aug: AugmentedSystem, P: MatrixPath, eta: MatrixPath,
                 grid: TimeGrid) -> Tuple[MatrixPath, MatrixPath]:
    """Node-wise feedback gain (m2 x 2n) and offset (m2) of the leader."""
    d = 2 * aug.n
    m2 = aug.rhat2.shape[-1]
    eye = np.eye(d)
    theta = np.empty((grid.N + 1, m2, d))
    v2 = np.empty((grid.N + 1, m2))
    for k in range(grid.N + 1):
        t = float(grid.nodes[k])
        j = aug.index(t)
        Pk = P.values[k]
        D2 = aug.calD2[j]
        B1 = aug.calB1[j]
        IPD = eye - Pk @ aug.calD1[j]
        K = _cond_solve(IPD, Pk, t, "I - P*D1")
        Rt = aug.rhat2[j] + D2.T @ (K @ D2)
        Lmat = (aug.calB2[j].T @ Pk + aug.calF2[j]
                + D2.T @ (K @ (aug.calC[j] + B1.T @ Pk)))
        theta[k] = -_cond_solve(Rt, Lmat, t, "effective control weight")
        rhs_v = ((aug.calB2[j].T + D2.T @ (K @ B1.T)) @ eta.values[k]
                 + D2.T @ (K @ aug.sigmabold[j]) + aug.rhohat[j])
        v2[k] = -np.linalg.solve(Rt, rhs_v)
    return MatrixPath(grid, theta), MatrixPath(grid, v2)


@dataclass
class StackelbergPolicy:
    """Affine feedback maps for both players on the doubled state.

    The follower's control at (t, X) is K_X(t) X + K_eta(t) eta(t) + k_const(t);
    the leader's is Theta2bold(t) X + v2(t).  eta is the leader's deterministic
    offset path, carried here so both maps close over deterministic data only.
    """

    K_X: MatrixPath  # m1 x 2n
    K_eta: MatrixPath  # m1 x 2n
    k_const: MatrixPath  # m1
    Theta2bold: MatrixPath  # m2 x 2n
    v2: MatrixPath  # m2
    eta: MatrixPath  # 2n

    def u1(self, t: float, X: np.ndarray) -> np.ndarray:
        gain = self.K_X.at(t)
        const = self.K_eta.at(t) @ self.eta.at(t) + self.k_const.at(t)
        return np.asarray(X) @ gain.T + const

    def u2(self, t: float, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.Theta2bold.at(t).T + self.v2.at(t)


def build_policy(spec: GameSpec, fsol: FollowerSolution, red: LeaderReduction,
                 aug: AugmentedSystem, P: MatrixPath, eta: MatrixPath,
                 gains: Tuple[MatrixPath, MatrixPath]) -> StackelbergPolicy:
    """Assemble both players' affine feedback maps on the doubled state.

    The follower map folds its own offset/martingale response to the leader's
    equilibrium behavior into gains on (state, adjoint) plus deterministic
    offset terms, following the doubled-state representation of the follower's
    control.
    """
    theta2, v2 = gains
    grid = theta2.grid
    n, m1 = spec.dims.n, spec.dims.m1
    d = 2 * n
    eye = np.eye(d)

    fine_h = red.grid.h
    K_X = np.empty((grid.N + 1, m1, d))
    K_eta = np.empty_like(K_X)
    k_const = np.empty((grid.N + 1, m1))

    for k in range(grid.N + 1):
        t = float(grid.nodes[k])
        j = int(round(t / fine_h))
        Pk = P.values[k]
        R111 = red.Rhat111[j]
        D2 = aug.calD2[j]
        B1 = aug.calB1[j]

        # row blocks (S 0), (0 B1'), (0 D1') on the doubled state
        S_row = np.zeros((m1, d))
        S_row[:, :n] = red.Shat11[j]
        B_row = np.zeros((m1, d))
        B_row[:, n:] = red.B1[j].T
        D_row = np.zeros((m1, d))
        D_row[:, n:] = red.D1[j].T

        IPD = eye - Pk @ aug.calD1[j]
        Kf = _cond_solve(IPD, Pk, t, "I - P*D1")
        Rt = aug.rhat2[j] + D2.T @ (Kf @ D2)
        Rcal = np.linalg.solve(Rt.T, (red.Rhat112[j] + D_row @ (Kf @ D2)).T).T
        CB = aug.calC[j] + B1.T @ Pk
        KCB = Kf @ CB

        kx = (S_row + B_row @ Pk + D_row @ KCB
              - Rcal @ (D2.T @ KCB + aug.calB2[j].T @ Pk + aug.calF2[j]))
        ke = (B_row + D_row @ (Kf @ B1.T)
              - Rcal @ (D2.T @ (Kf @ B1.T) + aug.calB2[j].T))
        kc = (red.rhohat11[j] - Rcal @ aug.rhohat[j]
              + (D_row @ Kf - Rcal @ (D2.T @ Kf)) @ aug.sigmabold[j])

        K_X[k] = -np.linalg.solve(R111, kx)
        K_eta[k] = -np.linalg.solve(R111, ke)
        k_const[k] = -np.linalg.solve(R111, kc)

    return StackelbergPolicy(
        K_X=MatrixPath(grid, K_X),
        K_eta=MatrixPath(grid, K_eta),
        k_const=MatrixPath(grid, k_const),
        Theta2bold=theta2,
        v2=v2,
        eta=eta,
    )


def leader_value(x: np.ndarray, P: MatrixPath, spec: GameSpec) -> float:
    """Closed-form value of the leader for homogeneous problems.

    Refuses unless every driver, offset, and linear cost term is identically
    zero (drift/diffusion constants, linear cost coefficients, and terminal
    offsets of both players).
    """
    pieces = {
        "drift constant": spec.b, "diffusion constant": spec.sigma,
        "player-1 linear state cost": spec.p1.q,
        "player-1 linear control costs": spec.p1.rho1,
        "player-1 linear control costs (2)": spec.p1.rho2,
        "player-2 linear state cost": spec.p2.q,
        "player-2 linear control costs": spec.p2.rho1,
        "player-2 linear control costs (2)": spec.p2.rho2,
    }
    for label, path in pieces.items():
        if float(np.max(np.abs(path.values))) != 0.0:
            raise NotHomogeneous(f"{label} is nonzero")
    if float(np.max(np.abs(spec.p1.g))) != 0.0 or float(np.max(np.abs(spec.p2.g))) != 0.0:
        raise NotHomogeneous("terminal offset is nonzero")

    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    P1_0 = P.values[0][:n, :n]
    return float(x @ (P1_0 @ x))
