"""Numerical verification of the computed equilibrium.

Four families of evidence:

* adjoint reconstruction + stationarity residual (first-order condition as an
  algebraic identity along simulated paths),
* central-difference directional derivatives of both players' costs at the
  equilibrium (open-loop first-order condition, common random numbers),
* convexity probes of the homogeneous second-variation problems,
* best-response cost comparisons under strategy/control perturbations.

All Monte Carlo comparisons reuse the identical Brownian increment tensors
(common random numbers), so cost differences are low-variance and a zero
perturbation reproduces the unperturbed leg bit for bit.

These checks sample finitely many perturbations: they provide evidence for
the equilibrium property, not a proof.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .leader import AugmentedSystem, StackelbergPolicy
from .model import GameSpec, TimeGrid, eval_coefficient
from .numerics import MatrixPath, integrate_backward_rk4, pinv
from .pipeline import GameSolution, solve_game
from .simulate import (CostTables, SimConfig, closed_loop_affine,
                       path_chunks, path_increments, run_chunked,
                       simulate_closed_loop, _mean_se, _sub_times)

__all__ = [
    "EVIDENCE_NOTE",
    "VerificationReport",
    "reconstruct_adjoints",
    "stationarity_residual",
    "gateaux_check",
    "convexity_probe",
    "best_response_check",
    "value_consistency",
    "verification_report",
    "piecewise_constant_control",
    "random_directions",
    "random_perturbations",
    "zero_follower_perturbation",
    "zero_leader_perturbation",
]

EVIDENCE_NOTE = ("finite perturbation sampling: these checks are numerical "
                 "evidence for the equilibrium property, not a proof")


# ---------------------------------------------------------------------------
# adjoint reconstruction and stationarity
# ---------------------------------------------------------------------------

def reconstruct_adjoints(P: MatrixPath, eta: MatrixPath, X_ens: np.ndarray,
                         aug: AugmentedSystem, v2: MatrixPath,
                         grid: TimeGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Backward variable Y = P X + eta and its martingale integrand Z,
    node-wise along each simulated path of the doubled state.

    The feedback gain is recomputed from (aug, P); the offset ``v2`` is taken
    as given so injected offsets propagate into Z.
    """
    from .leader import leader_gains
    X_ens = np.asarray(X_ens, dtype=float)
    if X_ens.ndim != 3 or X_ens.shape[1] != grid.N + 1 or X_ens.shape[2] != 2 * aug.n:
        raise ValueError(
            f"X ensemble must be (paths, {grid.N + 1}, {2 * aug.n}), "
            f"got {X_ens.shape}")
    theta, _ = leader_gains(aug, P, eta, grid)
    maps = closed_loop_affine(aug, P, eta, theta, v2, grid.nodes)
    Y = np.empty_like(X_ens)
    Z = np.empty_like(X_ens)
    for k in range(grid.N + 1):
        Y[:, k] = X_ens[:, k] @ P.values[k].T + eta.values[k]
        Z[:, k] = X_ens[:, k] @ maps.Zmat[k].T + maps.Zvec[k]
    return Y, Z


def stationarity_residual(aug: AugmentedSystem, P: MatrixPath, eta: MatrixPath,
                          X_ens: np.ndarray, Y_ens: np.ndarray,
                          Z_ens: np.ndarray, gains: Tuple[MatrixPath, MatrixPath],
                          grid: TimeGrid) -> float:
    """RMS (over paths, nodes, components) of the leader's pointwise
    stationarity expression, normalized by the RMS of its largest term."""
    theta, v2 = gains
    M = X_ens.shape[0]
    m2 = aug.rhat2.shape[-1]
    terms = np.zeros((4, M, grid.N + 1, m2))
    for k in range(grid.N + 1):
        t = float(grid.nodes[k])
        j = aug.index(t)
        R2 = aug.rhat2[j]
        terms[0, :, k] = X_ens[:, k] @ (R2 @ theta.values[k] + aug.calF2[j]).T
        terms[1, :, k] = Y_ens[:, k] @ aug.calB2[j]
        terms[2, :, k] = Z_ens[:, k] @ aug.calD2[j]
        terms[3, :, k] = R2 @ v2.values[k] + aug.rhohat[j]
    resid = terms.sum(axis=0)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    scale = max(float(np.sqrt(np.mean(term ** 2))) for term in terms)
    if scale == 0.0:
        return 0.0
    return rms / scale


# ---------------------------------------------------------------------------
# direction / perturbation sampling
# ---------------------------------------------------------------------------

def piecewise_constant_control(rng: np.random.Generator, T: float, shape: tuple,
                               intervals: int = 8, scale: float = 1.0) -> Callable:
    """Random piecewise-constant map t -> array(shape) on ``intervals`` equal
    sub-intervals of [0, T], normalized to L2 norm ``scale``."""
    vals = rng.standard_normal((intervals,) + shape)
    nrm = float(np.sqrt((vals ** 2).sum() * (T / intervals)))
    if nrm > 0.0:
        vals = vals * (scale / nrm)

    def control(t: float) -> np.ndarray:
        idx = min(int(t / T * intervals), intervals - 1)
        return vals[idx]

    return control


def _zero_control(shape: tuple) -> Callable:
    z = np.zeros(shape)
    return lambda t: z


def random_directions(seed: int, count: int, spec: GameSpec,
                      intervals: int = 8) -> List[Tuple[Callable, Callable]]:
    """(v1, v2) direction pairs for gateaux_check, unit L2 norm each."""
    rng = np.random.Generator(np.random.Philox(key=np.array(
        [seed & ((1 << 64) - 1), 0x6A7E], dtype=np.uint64)))
    T = spec.horizon
    out = []
    for _ in range(count):
        v1 = piecewise_constant_control(rng, T, (spec.dims.m1,), intervals)
        v2 = piecewise_constant_control(rng, T, (spec.dims.m2,), intervals)
        out.append((v1, v2))
    return out


def random_perturbations(seed: int, count_follower: int, count_leader: int,
                         spec: GameSpec, scale: float = 0.25,
                         intervals: int = 8) -> List[dict]:
    """Strategy perturbations for best_response_check.

    Follower entries carry a gain offset dtheta(t) (m1 x n) and an offset
    dv(t); leader entries carry a deterministic control offset w(t)."""
    rng = np.random.Generator(np.random.Philox(key=np.array(
        [seed & ((1 << 64) - 1), 0xBE57], dtype=np.uint64)))
    T = spec.horizon
    n, m1, m2 = spec.dims.n, spec.dims.m1, spec.dims.m2
    out = []
    for i in range(count_follower):
        out.append({
            "player": 1, "label": f"follower-{i}",
            "dtheta": piecewise_constant_control(rng, T, (m1, n), intervals, scale),
            "dv": piecewise_constant_control(rng, T, (m1,), intervals, scale),
        })
    for i in range(count_leader):
        out.append({
            "player": 2, "label": f"leader-{i}",
            "w": piecewise_constant_control(rng, T, (m2,), intervals, scale),
        })
    return out


def zero_follower_perturbation() -> dict:
    return {"player": 1, "label": "follower-zero",
            "dtheta": None, "dv": None}


def zero_leader_perturbation() -> dict:
    return {"player": 2, "label": "leader-zero", "w": None}


# ---------------------------------------------------------------------------
# shared replay engine
# ---------------------------------------------------------------------------

class _Engine:
    """Precomputed tables for equilibrium replay and perturbed re-integration
    on a fixed (grid, substeps) discretization.

    The replay leg steps the doubled closed-loop SDE; perturbed legs
    re-integrate the raw state equation under modified controls with the same
    Brownian increments.
    """

    def __init__(self, sol: GameSolution, cfg: SimConfig, grid: TimeGrid):
        if sol.leader is None or sol.policy is None:
            raise ValueError("equilibrium verification needs a solvable game")
        spec = sol.spec
        aug = sol.augmented
        P, eta = sol.leader.P, sol.leader.eta
        if grid.N != P.grid.N or grid.T != P.grid.T:
            raise ValueError("verification grid must match the solution grid")
        self.sol = sol
        self.spec = spec
        self.aug = aug
        self.cfg = cfg
        self.grid = grid
        self.n = spec.dims.n
        self.m1 = spec.dims.m1
        self.m2 = spec.dims.m2
        self.substeps = cfg.substeps
        self.n_sub = grid.N * cfg.substeps
        self.dt = grid.h / cfg.substeps
        self.taus = _sub_times(grid, cfg.substeps)
        taus = self.taus

        policy = sol.policy
        maps = closed_loop_affine(aug, P, eta, policy.Theta2bold, policy.v2, taus)
        self.MdT = maps.drift_M.transpose(0, 2, 1).copy()
        self.MsT = maps.diff_M.transpose(0, 2, 1).copy()
        self.cd, self.cs = maps.drift_c, maps.diff_c
        self.ZmT = maps.Zmat.transpose(0, 2, 1).copy()
        self.Zv = maps.Zvec
        self.thetaT = maps.theta.transpose(0, 2, 1).copy()
        self.v2v = maps.v2
        self.u1gainT = np.stack([policy.K_X.at(float(t)).T for t in taus])
        self.u1const = np.stack([
            policy.K_eta.at(float(t)) @ policy.eta.at(float(t))
            + policy.k_const.at(float(t)) for t in taus])

        self.Pv = np.stack([P.at(float(t)) for t in taus])
        self.etav = np.stack([eta.at(float(t)) for t in taus])

        dyn = {leaf: np.stack([eval_coefficient(getattr(spec, leaf), float(t), grid)
                               for t in taus])
               for leaf in ("A", "B1", "B2", "C", "D1", "D2", "b", "sigma")}
        self.AT = dyn["A"].transpose(0, 2, 1).copy()
        self.B1T = dyn["B1"].transpose(0, 2, 1).copy()
        self.B2T = dyn["B2"].transpose(0, 2, 1).copy()
        self.CT = dyn["C"].transpose(0, 2, 1).copy()
        self.D1T = dyn["D1"].transpose(0, 2, 1).copy()
        self.D2T = dyn["D2"].transpose(0, 2, 1).copy()
        self.bv, self.sigv = dyn["b"], dyn["sigma"]
        self.dyn = dyn

        self.ctab = CostTables(spec, taus, grid)

        red = sol.reduction
        rgrid = red.grid
        rpath = lambda arr: MatrixPath(rgrid, arr)
        self.Shat11 = np.stack([rpath(red.Shat11).at(float(t)) for t in taus])
        self.Rhat111 = np.stack([rpath(red.Rhat111).at(float(t)) for t in taus])
        self.Rhat112 = np.stack([rpath(red.Rhat112).at(float(t)) for t in taus])
        self.rhohat11 = np.stack([rpath(red.rhohat11).at(float(t)) for t in taus])
        self.AhatP = rpath(red.Ahat)
        self.Fhat2P = rpath(red.Fhat2)
        # follower feedback pieces for perturbed-leader legs
        self.u1_S = np.empty((len(taus), self.m1, self.n))
        self.u1_B = np.empty((len(taus), self.m1, self.n))
        self.u1_D = np.empty((len(taus), self.m1, self.n))
        self.u1_R = np.empty((len(taus), self.m1, self.m2))
        self.u1_r = np.empty((len(taus), self.m1))
        for j in range(len(taus)):
            Ri = np.linalg.inv(self.Rhat111[j])
            self.u1_S[j] = Ri @ self.Shat11[j]
            self.u1_B[j] = Ri @ dyn["B1"][j].T
            self.u1_D[j] = Ri @ dyn["D1"][j].T
            self.u1_R[j] = Ri @ self.Rhat112[j]
            self.u1_r[j] = Ri @ self.rhohat11[j]

        self.theta1T = np.stack([sol.follower.Theta1.at(float(t)).T for t in taus])

    # -- sampling helpers ---------------------------------------------------

    def sample(self, control: Optional[Callable], shape: tuple) -> np.ndarray:
        """Sample a deterministic control map at all substep times."""
        if control is None:
            return np.zeros((len(self.taus),) + shape)
        return np.stack([np.asarray(control(float(t)), dtype=float)
                         for t in self.taus])

    def delta_eta(self, w_arr: np.ndarray) -> np.ndarray:
        """Exact follower-offset response to a deterministic leader offset:
        backward linear ODE with the reduced-system generator, zero terminal.

        Returned at substep resolution by linear interpolation of an RK4 run
        on the substep grid."""
        sub_grid = TimeGrid(self.grid.T, self.n_sub)
        wpath = MatrixPath(sub_grid, np.asarray(w_arr, dtype=float))

        def fld(t: float, de: np.ndarray) -> np.ndarray:
            d = -(self.AhatP.at(t).T @ de[:, 0] + self.Fhat2P.at(t).T @ wpath.at(t))
            return d[:, None]

        out = integrate_backward_rk4(fld, np.zeros((self.n, 1)), sub_grid)
        return out.values[:, :, 0]

    # -- equilibrium replay ---------------------------------------------------

    def replay(self, a: int, b: int) -> Tuple[np.ndarray, np.ndarray]:
        """Integrate the doubled closed-loop SDE for paths [a, b); returns
        (X path array (b-a, n_sub+1, 2n), increments (b-a, n_sub))."""
        dW = path_increments(self.cfg.seed, a, b, self.n_sub, self.dt)
        k = b - a
        X = np.empty((k, self.n_sub + 1, 2 * self.n))
        X[:, 0] = self.aug.X0
        for j in range(self.n_sub):
            x = X[:, j]
            X[:, j + 1] = (x + (x @ self.MdT[j] + self.cd[j]) * self.dt
                           + (x @ self.MsT[j] + self.cs[j]) * dW[:, j:j + 1])
        return X, dW

    def eq_controls(self, Xeq: np.ndarray, j: int) -> Tuple[np.ndarray, np.ndarray]:
        x = Xeq[:, j]
        return (x @ self.u1gainT[j] + self.u1const[j],
                x @ self.thetaT[j] + self.v2v[j])

    # -- perturbed legs -------------------------------------------------------

    def leg_follower_strategy(self, Xeq, dW, dthetaT, dv):
        """Re-integrate the raw state with the follower playing the perturbed
        strategy (gain + offset) against the replayed leader control process.
        dthetaT: (L, n, m1) transposed gain offsets; dv: (L, m1)."""
        k = Xeq.shape[0]
        x = Xeq[:, 0, :self.n].copy()
        c1 = np.zeros(k)
        c2 = np.zeros(k)
        for j in range(self.n_sub):
            u1_eq, u2_eq = self.eq_controls(Xeq, j)
            v1_replay = u1_eq - Xeq[:, j, :self.n] @ self.theta1T[j]
            u1 = x @ (self.theta1T[j] + dthetaT[j]) + v1_replay + dv[j]
            u2 = u2_eq
            c1 += self.ctab.running(j, x, u1, u2, "1") * self.dt
            c2 += self.ctab.running(j, x, u1, u2, "2") * self.dt
            drift = (x @ self.AT[j] + u1 @ self.B1T[j] + u2 @ self.B2T[j]
                     + self.bv[j])
            diff = (x @ self.CT[j] + u1 @ self.D1T[j] + u2 @ self.D2T[j]
                    + self.sigv[j])
            x = x + drift * self.dt + diff * dW[:, j:j + 1]
        c1 += self.ctab.terminal(x, "1")
        c2 += self.ctab.terminal(x, "2")
        return c1, c2

    def leg_follower_process(self, Xeq, dW, dv, u1_scale: float = 1.0):
        """Re-integrate the raw state with the follower's control process
        offset by dv (open-loop perturbation), leader process fixed.

        u1_scale rescales the follower's base process (1.0 leaves it bit-for-
        bit untouched); used to probe non-optimal base controls."""
        k = Xeq.shape[0]
        x = Xeq[:, 0, :self.n].copy()
        c1 = np.zeros(k)
        c2 = np.zeros(k)
        for j in range(self.n_sub):
            u1_eq, u2_eq = self.eq_controls(Xeq, j)
            u1 = u1_scale * u1_eq + dv[j]
            u2 = u2_eq
            c1 += self.ctab.running(j, x, u1, u2, "1") * self.dt
            c2 += self.ctab.running(j, x, u1, u2, "2") * self.dt
            drift = (x @ self.AT[j] + u1 @ self.B1T[j] + u2 @ self.B2T[j]
                     + self.bv[j])
            diff = (x @ self.CT[j] + u1 @ self.D1T[j] + u2 @ self.D2T[j]
                    + self.sigv[j])
            x = x + drift * self.dt + diff * dW[:, j:j + 1]
        c1 += self.ctab.terminal(x, "1")
        c2 += self.ctab.terminal(x, "2")
        return c1, c2

    def leg_leader(self, Xeq, dW, w, deta):
        """Leader control process offset by deterministic w; follower responds
        exactly (rational response): its offset path shifts by deta and its
        feedback map is applied to the re-integrated state.
        w: (L, m2); deta: (L, n)."""
        k = Xeq.shape[0]
        x = Xeq[:, 0, :self.n].copy()
        c1 = np.zeros(k)
        c2 = np.zeros(k)
        for j in range(self.n_sub):
            _, u2_eq = self.eq_controls(Xeq, j)
            u2 = u2_eq + w[j]
            Yj = Xeq[:, j] @ self.Pv[j].T + self.etav[j]
            Zj = Xeq[:, j] @ self.ZmT[j] + self.Zv[j]
            eta1 = Yj[:, self.n:] + deta[j]
            zeta1 = Zj[:, self.n:]
            u1 = -(x @ self.u1_S[j].T + eta1 @ self.u1_B[j].T
                   + zeta1 @ self.u1_D[j].T + u2 @ self.u1_R[j].T
                   + self.u1_r[j])
            c1 += self.ctab.running(j, x, u1, u2, "1") * self.dt
            c2 += self.ctab.running(j, x, u1, u2, "2") * self.dt
            drift = (x @ self.AT[j] + u1 @ self.B1T[j] + u2 @ self.B2T[j]
                     + self.bv[j])
            diff = (x @ self.CT[j] + u1 @ self.D1T[j] + u2 @ self.D2T[j]
                    + self.sigv[j])
            x = x + drift * self.dt + diff * dW[:, j:j + 1]
        c1 += self.ctab.terminal(x, "1")
        c2 += self.ctab.terminal(x, "2")
        return c1, c2


# ---------------------------------------------------------------------------
# checks built on the engine
# ---------------------------------------------------------------------------

def _resolve_solution(spec: GameSpec, sol: Optional[GameSolution],
                      grid: Optional[TimeGrid]) -> Tuple[GameSolution, TimeGrid]:
    if sol is None:
        grid = grid or TimeGrid(spec.horizon, 1000)
        sol = solve_game(spec, grid)
        if sol.policy is None:
            raise ValueError(f"game is not closed-loop solvable: "
                             f"{sol.report.reason}")
    elif grid is None:
        grid = sol.leader.P.grid
    return sol, grid


def gateaux_check(spec: GameSpec, policy: StackelbergPolicy,
                  directions: Sequence[Tuple[Optional[Callable], Optional[Callable]]],
                  eps: float, cfg: SimConfig, *, sol: Optional[GameSolution] = None,
                  grid: Optional[TimeGrid] = None,
                  follower_scale: float = 1.0) -> List[dict]:
    """Central-difference directional derivatives of J1 (follower direction,
    leader process fixed) and of J2 (leader direction, follower responding),
    at eps and 2*eps with a Richardson-extrapolated value reported.

    When sol/grid are omitted the game is solved internally on a 1000-step
    grid.  follower_scale rescales the follower's base control process before
    perturbing (1.0 = the equilibrium process, bit-for-bit); with a scale != 1
    the J1 derivatives probe a deliberately non-optimal base point."""
    sol, grid = _resolve_solution(spec, sol, grid)
    eng = _Engine(sol, cfg, grid)
    M = cfg.paths
    per_dir = []
    for v1, v2 in directions:
        entry = {}
        if v1 is not None:
            entry["v1"] = eng.sample(v1, (eng.m1,))
        if v2 is not None:
            w = eng.sample(v2, (eng.m2,))
            entry["v2"] = w
            entry["deta"] = eng.delta_eta(w)
        per_dir.append(entry)

    # per-direction, per-leg cost buffers: +eps, -eps, +2eps, -2eps
    bufs = {}
    for i, entry in enumerate(per_dir):
        for pl in (1, 2):
            if ("v1" if pl == 1 else "v2") in entry:
                bufs[(i, pl)] = np.empty((4, M))
    eq1 = np.empty(M)
    eq2 = np.empty(M)

    def job(c, a, b):
        Xeq, dW = eng.replay(a, b)
        z1 = eng.leg_follower_process(Xeq, dW, np.zeros((len(eng.taus), eng.m1)),
                                      follower_scale)
        zl = eng.leg_leader(Xeq, dW, np.zeros((len(eng.taus), eng.m2)),
                            np.zeros((len(eng.taus), eng.n)))
        eq1[a:b] = z1[0]
        eq2[a:b] = zl[1]
        for i, entry in enumerate(per_dir):
            if "v1" in entry:
                v = entry["v1"]
                res = bufs[(i, 1)]
                for s, fac in enumerate((eps, -eps, 2 * eps, -2 * eps)):
                    c1, _ = eng.leg_follower_process(Xeq, dW, fac * v,
                                                     follower_scale)
                    res[s, a:b] = c1
            if "v2" in entry:
                w, de = entry["v2"], entry["deta"]
                res = bufs[(i, 2)]
                for s, fac in enumerate((eps, -eps, 2 * eps, -2 * eps)):
                    _, c2 = eng.leg_leader(Xeq, dW, fac * w, fac * de)
                    res[s, a:b] = c2

    run_chunked(M, cfg.workers, job)

    J1_eq, _ = _mean_se(eq1)
    J2_eq, _ = _mean_se(eq2)
    out = []
    for i, entry in enumerate(per_dir):
        for pl in (1, 2):
            if (i, pl) not in bufs:
                continue
            res = bufs[(i, pl)]
            d1 = (res[0] - res[1]) / (2.0 * eps)
            d2 = (res[2] - res[3]) / (4.0 * eps)
            est, se = _mean_se(d1)
            est2, _ = _mean_se(d2)
            J_eq = J1_eq if pl == 1 else J2_eq
            scale = max(1.0, abs(J_eq))
            out.append({
                "direction": i,
                "player": pl,
                "estimate": est,
                "se": se,
                "eps": eps,
                "estimate_2eps": est2,
                "richardson": (4.0 * est - est2) / 3.0,
                "scale": scale,
                "tolerance": 5e-3 * scale,
                "pass": abs(est) <= 5e-3 * scale,
            })
    return out


def best_response_check(spec: GameSpec, policy: StackelbergPolicy,
                        perturbations: Sequence[dict], cfg: SimConfig, *,
                        sol: Optional[GameSolution] = None,
                        grid: Optional[TimeGrid] = None) -> List[dict]:
    """Cost change against the equilibrium leg under each perturbation with
    common random numbers; pass iff the change is not significantly negative.

    Follower entries perturb the follower's strategy (gain + offset) with the
    leader's control process replayed; leader entries offset the leader's
    control process with the follower responding rationally.  When sol/grid
    are omitted the game is solved internally on a 1000-step grid."""
    sol, grid = _resolve_solution(spec, sol, grid)
    eng = _Engine(sol, cfg, grid)
    M = cfg.paths
    L = len(eng.taus)

    items = []
    for p in perturbations:
        if p["player"] == 1:
            dtheta = eng.sample(p.get("dtheta"), (eng.m1, eng.n))
            items.append({
                "player": 1, "label": p.get("label", "follower"),
                "dthetaT": dtheta.transpose(0, 2, 1).copy(),
                "dv": eng.sample(p.get("dv"), (eng.m1,)),
            })
        elif p["player"] == 2:
            w = eng.sample(p.get("w"), (eng.m2,))
            items.append({
                "player": 2, "label": p.get("label", "leader"),
                "w": w,
                "deta": (eng.delta_eta(w) if p.get("w") is not None
                         else np.zeros((L, eng.n))),
            })
        else:
            raise ValueError(f"perturbation player must be 1 or 2: {p}")

    deltas = np.empty((len(items), M))
    zero_dthetaT = np.zeros((L, eng.n, eng.m1))
    zero_dv = np.zeros((L, eng.m1))
    zero_w = np.zeros((L, eng.m2))
    zero_deta = np.zeros((L, eng.n))

    def job(c, a, b):
        Xeq, dW = eng.replay(a, b)
        base1, _ = eng.leg_follower_strategy(Xeq, dW, zero_dthetaT, zero_dv)
        _, base2 = eng.leg_leader(Xeq, dW, zero_w, zero_deta)
        for i, it in enumerate(items):
            if it["player"] == 1:
                c1, _ = eng.leg_follower_strategy(Xeq, dW, it["dthetaT"], it["dv"])
                deltas[i, a:b] = c1 - base1
            else:
                _, c2 = eng.leg_leader(Xeq, dW, it["w"], it["deta"])
                deltas[i, a:b] = c2 - base2

    run_chunked(M, cfg.workers, job)

    out = []
    for i, it in enumerate(items):
        dj, se = _mean_se(deltas[i])
        out.append({
            "player": it["player"],
            "label": it["label"],
            "delta_J": dj,
            "se": se,
            "tolerance": -3.0 * se,
            "pass": dj >= -3.0 * se,
            "strictly_positive": dj > 3.0 * se,
        })
    return out


def convexity_probe(sol: GameSolution, which: str, samples: int,
                    cfg: SimConfig) -> float:
    """Minimum of (estimated homogeneous quadratic cost) / ||u||^2 over random
    deterministic controls, simulating the zero-initial homogeneous system.

    which = "follower": the follower's second-variation problem in its own
    control.  which = "leader": the reduced leader problem, with the exact
    deterministic offset response integrated per control."""
    spec = sol.spec
    grid = sol.grid
    n = spec.dims.n
    substeps = cfg.substeps
    n_sub = grid.N * substeps
    dt = grid.h / substeps
    taus = _sub_times(grid, substeps)
    rng = np.random.Generator(np.random.Philox(key=np.array(
        [cfg.seed & ((1 << 64) - 1), 0xC0CE], dtype=np.uint64)))
    M = cfg.paths

    best = np.inf
    if which == "follower":
        m = spec.dims.m1
        dyn = {leaf: np.stack([eval_coefficient(getattr(spec, leaf), float(t), grid)
                               for t in taus]) for leaf in ("A", "B1", "C", "D1")}
        w = {leaf: np.stack([eval_coefficient(getattr(spec.p1, leaf), float(t), grid)
                             for t in taus]) for leaf in ("Q", "S1", "R11")}
        G = spec.p1.G
        for _ in range(samples):
            u_fn = piecewise_constant_control(rng, grid.T, (m,))
            u = np.stack([u_fn(float(t)) for t in taus])
            unorm = float(((u[:-1] ** 2).sum()) * dt)
            cost = np.zeros(M)
            for a, b in path_chunks(M):
                dW = path_increments(cfg.seed, a, b, n_sub, dt)
                xc = np.zeros((b - a, n))
                acc = np.zeros(b - a)
                for j in range(n_sub):
                    uj = u[j]
                    acc += ((xc @ w["Q"][j] * xc).sum(axis=1)
                            + 2.0 * (xc @ w["S1"][j].T @ uj)
                            + float(uj @ w["R11"][j] @ uj)) * dt
                    drift = xc @ dyn["A"][j].T + dyn["B1"][j] @ uj
                    diff = xc @ dyn["C"][j].T + dyn["D1"][j] @ uj
                    xc = xc + drift * dt + diff * dW[:, j:j + 1]
                acc += (xc @ G * xc).sum(axis=1)
                cost[a:b] = acc
            best = min(best, float(np.mean(cost)) / unorm)
    elif which == "leader":
        red = sol.reduction
        if red is None:
            raise ValueError("leader probe needs a completed reduction")
        m = spec.dims.m2
        rgrid = red.grid
        hat = {name: np.stack([MatrixPath(rgrid, getattr(red, name)).at(float(t))
                               for t in taus])
               for name in ("Ahat", "Chat", "Fhat1", "Bhat1", "Bhat2", "Dhat2",
                            "Qhat11", "Qhat12", "Qhat22", "Khat1", "Khat2",
                            "Rhat2")}
        AhatP = MatrixPath(rgrid, red.Ahat)
        Fhat2P = MatrixPath(rgrid, red.Fhat2)
        G2 = spec.p2.G
        sub_grid = TimeGrid(grid.T, n_sub)
        for _ in range(samples):
            u_fn = piecewise_constant_control(rng, grid.T, (m,))
            u = np.stack([u_fn(float(t)) for t in taus])
            unorm = float(((u[:-1] ** 2).sum()) * dt)

            def fld(t, e):
                return -(AhatP.at(t).T @ e[:, 0]
                         + Fhat2P.at(t).T @ u_fn(float(t)))[:, None]

            eta0 = integrate_backward_rk4(fld, np.zeros((n, 1)), sub_grid).values[:, :, 0]
            cost = np.zeros(M)
            for a, b in path_chunks(M):
                dW = path_increments(cfg.seed, a, b, n_sub, dt)
                xc = np.zeros((b - a, n))
                acc = np.zeros(b - a)
                for j in range(n_sub):
                    uj, ej = u[j], eta0[j]
                    acc += ((xc @ hat["Qhat11"][j] * xc).sum(axis=1)
                            + 2.0 * (xc @ hat["Qhat12"][j].T @ ej)
                            + float(ej @ hat["Qhat22"][j] @ ej)
                            + 2.0 * (xc @ hat["Khat1"][j].T @ uj)
                            + 2.0 * float(ej @ hat["Khat2"][j].T @ uj)
                            + float(uj @ hat["Rhat2"][j] @ uj)) * dt
                    drift = (xc @ hat["Ahat"][j].T + hat["Fhat1"][j] @ ej
                             + hat["Bhat2"][j] @ uj)
                    diff = (xc @ hat["Chat"][j].T + hat["Bhat1"][j].T @ ej
                            + hat["Dhat2"][j] @ uj)
                    xc = xc + drift * dt + diff * dW[:, j:j + 1]
                acc += (xc @ G2 * xc).sum(axis=1)
                cost[a:b] = acc
            best = min(best, float(np.mean(cost)) / unorm)
    else:
        raise ValueError("which must be 'follower' or 'leader'")
    return best


def value_consistency(sol: GameSolution, cfg: SimConfig) -> dict:
    """Monte Carlo cross-check of both players' values at equilibrium.

    J1 is compared against the follower's value formula evaluated pathwise
    with the reconstructed adjoints (common random numbers, so the difference
    estimator is tight); J2 against the closed-form quadratic when the
    problem is homogeneous."""
    eng = _Engine(sol, cfg, sol.grid)
    spec = sol.spec
    M = cfg.paths
    n = eng.n
    taus = eng.taus
    dt = eng.dt
    grid = sol.grid

    fsol = sol.follower
    P1v = np.stack([fsol.P1.at(float(t)) for t in taus])
    Rdag = np.stack([pinv(fsol.Rhat11.at(float(t))).pinv for t in taus])
    w1 = eng.ctab.run["1"]
    dyn = eng.dyn

    direct1 = np.empty(M)
    direct2 = np.empty(M)
    value1 = np.empty(M)

    x0 = np.asarray(spec.x0, dtype=float)
    eta1_0 = (sol.leader.P.values[0] @ sol.augmented.X0
              + sol.leader.eta.values[0])[n:]
    v1_head = float(x0 @ (P1v[0] @ x0)) + 2.0 * float(eta1_0 @ x0)

    def job(c, a, b):
        Xeq, dW = eng.replay(a, b)
        acc1 = np.zeros(b - a)
        acc2 = np.zeros(b - a)
        accv = np.zeros(b - a)
        for j in range(eng.n_sub):
            x = Xeq[:, j, :n]
            u1, u2 = eng.eq_controls(Xeq, j)
            acc1 += eng.ctab.running(j, x, u1, u2, "1") * dt
            acc2 += eng.ctab.running(j, x, u1, u2, "2") * dt

            Yj = Xeq[:, j] @ eng.Pv[j].T + eng.etav[j]
            Zj = Xeq[:, j] @ eng.ZmT[j] + eng.Zv[j]
            eta1 = Yj[:, n:]
            zeta1 = Zj[:, n:]
            P1, sig, b_ = P1v[j], dyn["sigma"][j], dyn["b"][j]
            D1, D2, B1, B2 = dyn["D1"][j], dyn["D2"][j], dyn["B1"][j], dyn["B2"][j]
            P1sig = P1 @ sig
            R22eff = w1["R22"][j] + D2.T @ (P1 @ D2)
            lin2 = w1["rho2"][j] + D2.T @ P1sig
            iv = (u2 @ R22eff * u2).sum(axis=1)
            iv += 2.0 * (u2 * (eta1 @ B2 + zeta1 @ D2 + lin2)).sum(axis=1)
            iv += 2.0 * (eta1 @ b_) + 2.0 * (zeta1 @ sig) + float(sig @ P1sig)
            wvec = (eta1 @ B1 + zeta1 @ D1 + u2 @ (w1["R12"][j] + D1.T @ (P1 @ D2)).T
                    + (D1.T @ P1sig + w1["rho1"][j]))
            iv -= (wvec @ Rdag[j] * wvec).sum(axis=1)
            accv += iv * dt
        x = Xeq[:, -1, :n]
        acc1 += eng.ctab.terminal(x, "1")
        acc2 += eng.ctab.terminal(x, "2")
        direct1[a:b] = acc1
        direct2[a:b] = acc2
        value1[a:b] = v1_head + accv

    run_chunked(M, cfg.workers, job)

    J1, se1 = _mean_se(direct1)
    J2, se2 = _mean_se(direct2)
    V1, seV1 = _mean_se(value1)
    darr = direct1 - value1
    d1, sed1 = _mean_se(darr)
    return {
        "J1_hat": J1, "J1_se": se1,
        "J2_hat": J2, "J2_se": se2,
        "V1_hat": V1, "V1_se": seV1,
        "J1_minus_V1": d1, "J1_minus_V1_se": sed1,
    }


# ---------------------------------------------------------------------------
# report orchestration
# ---------------------------------------------------------------------------

@dataclass
class VerificationReport:
    stationarity_rms: float
    stationarity_tolerance: float
    gateaux: List[dict]
    best_response: List[dict]
    convexity_min: float
    convexity_tolerance: float
    overall: bool
    note: str = EVIDENCE_NOTE

    def to_dict(self) -> dict:
        return {
            "stationarity_rms": self.stationarity_rms,
            "stationarity_tolerance": self.stationarity_tolerance,
            "gateaux": self.gateaux,
            "best_response": self.best_response,
            "convexity_min": self.convexity_min,
            "convexity_tolerance": self.convexity_tolerance,
            "overall": self.overall,
            "note": self.note,
        }


def verification_report(sol: GameSolution, cfg: SimConfig,
                        n_directions: int = 3, n_perturbations: int = 2,
                        n_convexity: int = 4, eps: float = 1e-3) -> VerificationReport:
    """Run the full verification battery at modest Monte Carlo sizes."""
    if sol.leader is None:
        raise ValueError("cannot verify an unsolvable game")
    spec, grid = sol.spec, sol.grid

    stat_cfg = SimConfig(paths=min(cfg.paths, 256), substeps=1, seed=cfg.seed,
                         store_trajectories=True, workers=cfg.workers)
    res = simulate_closed_loop(sol.augmented, sol.policy, sol.leader.P,
                               sol.leader.eta, stat_cfg, grid)
    Y, Z = reconstruct_adjoints(sol.leader.P, sol.leader.eta,
                                res.trajectories["X"], sol.augmented,
                                sol.leader.v2, grid)
    stat = stationarity_residual(sol.augmented, sol.leader.P, sol.leader.eta,
                                 res.trajectories["X"], Y, Z,
                                 (sol.leader.Theta2bold, sol.leader.v2), grid)

    dirs = random_directions(cfg.seed, n_directions, spec)
    gcfg = SimConfig(paths=min(cfg.paths, 2048), substeps=cfg.substeps,
                     seed=cfg.seed, workers=cfg.workers)
    gateaux = gateaux_check(spec, sol.policy, dirs, eps, gcfg, sol=sol, grid=grid)

    perts = random_perturbations(cfg.seed, n_perturbations, n_perturbations, spec)
    perts.append(zero_follower_perturbation())
    br = best_response_check(spec, sol.policy, perts, gcfg, sol=sol, grid=grid)

    ccfg = SimConfig(paths=min(cfg.paths, 1024), substeps=cfg.substeps,
                     seed=cfg.seed, workers=cfg.workers)
    conv = min(convexity_probe(sol, "follower", n_convexity, ccfg),
               convexity_probe(sol, "leader", n_convexity, ccfg))

    stat_tol = 1e-6
    conv_tol = -1e-6
    ok = (stat <= stat_tol
          and all(g["pass"] for g in gateaux)
          and all(b["pass"] for b in br)
          and conv >= conv_tol)
    return VerificationReport(
        stationarity_rms=stat,
        stationarity_tolerance=stat_tol,
        gateaux=gateaux,
        best_response=br,
        convexity_min=conv,
        convexity_tolerance=conv_tol,
        overall=bool(ok),
    )
