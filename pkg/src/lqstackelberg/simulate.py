"""Euler-Maruyama Monte Carlo for the closed-loop doubled system and for the
raw two-player dynamics under arbitrary feedback, plus cost estimation.

Determinism contract: every path owns a counter-based RNG stream keyed by
(seed, path index), paths are processed in fixed-size chunks writing disjoint
output slices, and all cross-chunk reductions happen single-threaded in chunk
order — so results are bit-identical for any worker-thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .leader import AugmentedSystem, StackelbergPolicy, _cond_solve
from .model import GameSpec, TimeGrid, eval_coefficient
from .numerics import MatrixPath, NonFinite

__all__ = [
    "CHUNK",
    "SimConfig",
    "SimResult",
    "CostTables",
    "AffineMaps",
    "AuxIntegrator",
    "EquilibriumAdjoint",
    "path_increments",
    "path_chunks",
    "run_chunked",
    "closed_loop_affine",
    "simulate_closed_loop",
    "simulate_raw",
    "equilibrium_feedbacks",
    "estimate_costs",
    "dump_trajectories",
]

#: Fixed chunk size; part of the determinism contract (chunk boundaries must
#: not depend on the worker count).
CHUNK = 2048

_MASK64 = (1 << 64) - 1


@dataclass
class SimConfig:
    """Monte Carlo run parameters.

    store_trajectories: False (store nothing), True (store every node), or an
    integer stride s > 0 (store every s-th node; s must divide the grid's N).
    Stored trajectories cost paths*(nodes/s)*(dim) floats — caller's budget.
    workers: worker threads for chunk processing; does not affect results.
    """

    paths: int = 10_000
    substeps: int = 1
    seed: int = 0
    store_trajectories: Union[bool, int] = False
    workers: int = 1

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def stride(self) -> int:
        """Trajectory thinning stride; 0 means don't store."""
        s = self.store_trajectories
        if s is False or s is None or s == 0:
            return 0
        if s is True:
            return 1
        s = int(s)
        if s < 1:
            raise ValueError("store_trajectories stride must be >= 1")
        return s


@dataclass
class SimResult:
    J1_hat: float
    J1_se: float
    J2_hat: float
    J2_se: float
    mean_path: Optional[MatrixPath] = None
    std_path: Optional[MatrixPath] = None
    stationarity_rms: Optional[float] = None
    trajectories: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "J1_hat": self.J1_hat, "J1_se": self.J1_se,
            "J2_hat": self.J2_hat, "J2_se": self.J2_se,
            "stationarity_rms": self.stationarity_rms,
        }


# ---------------------------------------------------------------------------
# RNG and scheduling
# ---------------------------------------------------------------------------

def path_increments(seed: int, start: int, stop: int, n_steps: int,
                    dt: float) -> np.ndarray:
    """Brownian increments, one row per path in [start, stop).

    Each path draws its whole increment vector from its own Philox stream
    keyed by (seed, path index), so the tensor is independent of chunking.
    """
    out = np.empty((stop - start, n_steps))
    for i, pid in enumerate(range(start, stop)):
        key = np.array([seed & _MASK64, pid], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        out[i] = gen.standard_normal(n_steps)
    out *= np.sqrt(dt)
    return out


def path_chunks(M: int) -> list:
    return [(a, min(a + CHUNK, M)) for a in range(0, M, CHUNK)]


def run_chunked(M: int, workers: int, job: Callable[[int, int, int], None]) -> None:
    """Run job(chunk_index, start, stop) over all chunks, possibly threaded.

    Jobs must write only to disjoint slices / per-chunk slots; they must not
    reduce into shared scalars.
    """
    chunks = path_chunks(M)
    if workers <= 1:
        for c, (a, b) in enumerate(chunks):
            job(c, a, b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(job, c, a, b) for c, (a, b) in enumerate(chunks)]
            for f in futures:
                f.result()


def _mean_se(values: np.ndarray) -> tuple:
    m = float(np.mean(values))
    if values.size < 2:
        return m, 0.0
    return m, float(np.std(values, ddof=1) / np.sqrt(values.size))


# ---------------------------------------------------------------------------
# cost evaluation
# ---------------------------------------------------------------------------

_RUNNING_LEAVES = ("Q", "S1", "S2", "R11", "R12", "R22", "q", "rho1", "rho2")


class CostTables:
    """Both players' cost weights sampled at the quadrature times ``taus``.

    ``grid`` fixes the interpretation of sampled coefficient paths in the
    problem data (times in taus may fall between its nodes).
    """

    def __init__(self, spec: GameSpec, taus: np.ndarray, grid: TimeGrid):
        self.taus = np.asarray(taus, dtype=float)
        self.run = {}
        self.term = {}
        for tag, pl in (("1", spec.p1), ("2", spec.p2)):
            self.run[tag] = {
                leaf: np.stack([eval_coefficient(getattr(pl, leaf), float(t), grid)
                                for t in self.taus])
                for leaf in _RUNNING_LEAVES
            }
            self.term[tag] = (pl.G, pl.g)

    def running(self, j: int, x: np.ndarray, u1: np.ndarray, u2: np.ndarray,
                tag: str) -> np.ndarray:
        w = self.run[tag]
        l = (x @ w["Q"][j] * x).sum(axis=1)
        l += 2.0 * ((x @ w["S1"][j].T) * u1).sum(axis=1)
        l += 2.0 * ((x @ w["S2"][j].T) * u2).sum(axis=1)
        l += (u1 @ w["R11"][j] * u1).sum(axis=1)
        l += 2.0 * ((u2 @ w["R12"][j].T) * u1).sum(axis=1)
        l += (u2 @ w["R22"][j] * u2).sum(axis=1)
        l += 2.0 * (x @ w["q"][j])
        l += 2.0 * (u1 @ w["rho1"][j])
        l += 2.0 * (u2 @ w["rho2"][j])
        return l

    def terminal(self, x: np.ndarray, tag: str) -> np.ndarray:
        G, g = self.term[tag]
        return (x @ G * x).sum(axis=1) + 2.0 * (x @ g)


def estimate_costs(x_ens: np.ndarray, u1_ens: np.ndarray, u2_ens: np.ndarray,
                   spec: GameSpec) -> SimResult:
    """Per-path left-Riemann quadrature of both cost functionals plus
    terminal terms; ensembles are (paths, nodes, dim) on the uniform grid
    spanning [0, horizon]."""
    x_ens = np.asarray(x_ens, dtype=float)
    u1_ens = np.asarray(u1_ens, dtype=float)
    u2_ens = np.asarray(u2_ens, dtype=float)
    if x_ens.ndim != 3 or u1_ens.ndim != 3 or u2_ens.ndim != 3:
        raise ValueError("ensembles must be (paths, nodes, dim) arrays")
    M, K1 = x_ens.shape[0], x_ens.shape[1]
    if u1_ens.shape[:2] != (M, K1) or u2_ens.shape[:2] != (M, K1):
        raise ValueError(
            f"ensemble shapes disagree: x {x_ens.shape}, u1 {u1_ens.shape}, "
            f"u2 {u2_ens.shape}")
    n, m1, m2 = spec.dims.n, spec.dims.m1, spec.dims.m2
    if x_ens.shape[2] != n or u1_ens.shape[2] != m1 or u2_ens.shape[2] != m2:
        raise ValueError("ensemble dims do not match the problem dims")

    grid = TimeGrid(spec.horizon, K1 - 1)
    ctab = CostTables(spec, grid.nodes, grid)
    c1 = np.zeros(M)
    c2 = np.zeros(M)
    for j in range(K1 - 1):
        c1 += ctab.running(j, x_ens[:, j], u1_ens[:, j], u2_ens[:, j], "1") * grid.h
        c2 += ctab.running(j, x_ens[:, j], u1_ens[:, j], u2_ens[:, j], "2") * grid.h
    c1 += ctab.terminal(x_ens[:, -1], "1")
    c2 += ctab.terminal(x_ens[:, -1], "2")
    J1, se1 = _mean_se(c1)
    J2, se2 = _mean_se(c2)
    return SimResult(J1_hat=J1, J1_se=se1, J2_hat=J2, J2_se=se2)


# ---------------------------------------------------------------------------
# closed-loop affine maps
# ---------------------------------------------------------------------------

@dataclass
class AffineMaps:
    """Time-sampled affine representation of the equilibrium dynamics:
    drift = drift_M X + drift_c, diffusion = diff_M X + diff_c, and the
    pathwise martingale-integrand reconstruction Z = Zmat X + Zvec."""

    taus: np.ndarray
    drift_M: np.ndarray
    drift_c: np.ndarray
    diff_M: np.ndarray
    diff_c: np.ndarray
    Zmat: np.ndarray
    Zvec: np.ndarray
    theta: np.ndarray
    v2: np.ndarray


def closed_loop_affine(aug: AugmentedSystem, P: MatrixPath, eta: MatrixPath,
                       theta_path: MatrixPath, v2_path: MatrixPath,
                       taus: np.ndarray) -> AffineMaps:
    """Evaluate the equilibrium drift/diffusion maps at each time in taus.

    Gain and solution paths are interpolated linearly between their nodes, per
    the substepping contract.
    """
    taus = np.asarray(taus, dtype=float)
    d = 2 * aug.n
    eye = np.eye(d)
    pA = aug.path("calA")
    pB1 = aug.path("calB1")
    pB2 = aug.path("calB2")
    pC = aug.path("calC")
    pD1 = aug.path("calD1")
    pD2 = aug.path("calD2")
    pF1 = aug.path("calF1")
    pb = aug.path("bbold")
    psig = aug.path("sigmabold")

    L = taus.shape[0]
    m2 = aug.rhat2.shape[-1]
    out = AffineMaps(
        taus=taus,
        drift_M=np.empty((L, d, d)), drift_c=np.empty((L, d)),
        diff_M=np.empty((L, d, d)), diff_c=np.empty((L, d)),
        Zmat=np.empty((L, d, d)), Zvec=np.empty((L, d)),
        theta=np.empty((L, m2, d)), v2=np.empty((L, m2)),
    )
    for j, t in enumerate(taus):
        t = float(t)
        Pt = P.at(t)
        et = eta.at(t)
        Th = theta_path.at(t)
        vt = v2_path.at(t)
        A, B1, B2 = pA.at(t), pB1.at(t), pB2.at(t)
        C, D1, D2 = pC.at(t), pD1.at(t), pD2.at(t)
        F1, b, sig = pF1.at(t), pb.at(t), psig.at(t)

        IPD = eye - Pt @ D1
        Zm = _cond_solve(IPD, Pt @ (C + D2 @ Th + B1.T @ Pt), t, "I - P*D1")
        Zv = _cond_solve(IPD, Pt @ (B1.T @ et + D2 @ vt + sig), t, "I - P*D1")
        out.drift_M[j] = A + B2 @ Th + F1 @ Pt + B1 @ Zm
        out.drift_c[j] = F1 @ et + B1 @ Zv + B2 @ vt + b
        out.diff_M[j] = C + D2 @ Th + B1.T @ Pt + D1 @ Zm
        out.diff_c[j] = B1.T @ et + D1 @ Zv + D2 @ vt + sig
        out.Zmat[j] = Zm
        out.Zvec[j] = Zv
        out.theta[j] = Th
        out.v2[j] = vt
    return out


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------

def _first_bad_path(x: np.ndarray, start: int) -> int:
    rows = np.isfinite(x).all(axis=1)
    return start + int(np.argmin(rows))


def _sub_times(grid: TimeGrid, substeps: int) -> np.ndarray:
    return np.linspace(0.0, grid.T, grid.N * substeps + 1)


def _finalize_paths(grid: TimeGrid, stride: int, sums: np.ndarray,
                    sqs: np.ndarray, M: int):
    """Combine per-chunk moment partials (in chunk order) into mean/std paths."""
    S = sums.sum(axis=0)
    Q = sqs.sum(axis=0)
    mean = S / M
    if M > 1:
        var = np.maximum(Q - M * mean * mean, 0.0) / (M - 1)
    else:
        var = np.zeros_like(mean)
    std = np.sqrt(var)
    if stride > 1:
        thin_grid = TimeGrid(grid.T, grid.N // stride)
        return (MatrixPath(thin_grid, mean[::stride].copy()),
                MatrixPath(thin_grid, std[::stride].copy()))
    return MatrixPath(grid, mean), MatrixPath(grid, std)


def _check_stride(stride: int, N: int):
    if stride and N % stride != 0:
        raise ValueError(f"trajectory stride {stride} must divide N={N}")


def simulate_closed_loop(aug: AugmentedSystem, policy: StackelbergPolicy,
                         P: MatrixPath, eta: MatrixPath, cfg: SimConfig,
                         grid: TimeGrid) -> SimResult:
    """Euler-Maruyama on the doubled equilibrium SDE; both players' costs are
    accumulated by left-Riemann quadrature at substep resolution, evaluated on
    the original-state block and the policy's controls."""
    spec = aug.spec
    if spec is None:
        raise ValueError("augmented system carries no source problem data")
    n = aug.n
    d = 2 * n
    M = cfg.paths
    substeps = cfg.substeps
    n_sub = grid.N * substeps
    dt = grid.h / substeps
    taus = _sub_times(grid, substeps)
    stride = cfg.stride()
    _check_stride(stride, grid.N)

    maps = closed_loop_affine(aug, P, eta, policy.Theta2bold, policy.v2, taus)
    # transposed copies so the hot loop is row-batch @ (d, d)
    MdT = maps.drift_M.transpose(0, 2, 1).copy()
    MsT = maps.diff_M.transpose(0, 2, 1).copy()
    cd, cs = maps.drift_c, maps.diff_c
    thetaT = maps.theta.transpose(0, 2, 1).copy()
    v2v = maps.v2
    u1gainT = np.stack([policy.K_X.at(float(t)).T for t in taus])
    u1const = np.stack([
        policy.K_eta.at(float(t)) @ policy.eta.at(float(t)) + policy.k_const.at(float(t))
        for t in taus])

    ctab = CostTables(spec, taus, grid)
    m1 = u1const.shape[1]
    m2 = v2v.shape[1]

    chunks = path_chunks(M)
    costs1 = np.empty(M)
    costs2 = np.empty(M)
    sums = np.zeros((len(chunks), grid.N + 1, d))
    sqs = np.zeros_like(sums)
    if stride:
        keep = grid.N // stride + 1
        Xs = np.empty((M, keep, d))
        u1s = np.empty((M, keep, m1))
        u2s = np.empty((M, keep, m2))

    def job(c: int, a: int, b: int):
        dW = path_increments(cfg.seed, a, b, n_sub, dt)
        X = np.tile(aug.X0, (b - a, 1))
        acc1 = np.zeros(b - a)
        acc2 = np.zeros(b - a)
        for j in range(n_sub):
            u1 = X @ u1gainT[j] + u1const[j]
            u2 = X @ thetaT[j] + v2v[j]
            if j % substeps == 0:
                k = j // substeps
                sums[c, k] = X.sum(axis=0)
                sqs[c, k] = (X * X).sum(axis=0)
                if stride and k % stride == 0:
                    Xs[a:b, k // stride] = X
                    u1s[a:b, k // stride] = u1
                    u2s[a:b, k // stride] = u2
            acc1 += ctab.running(j, X[:, :n], u1, u2, "1") * dt
            acc2 += ctab.running(j, X[:, :n], u1, u2, "2") * dt
            X = X + (X @ MdT[j] + cd[j]) * dt + (X @ MsT[j] + cs[j]) * dW[:, j:j + 1]
            if not np.isfinite(X).all():
                raise NonFinite(float(taus[j + 1]),
                                f"path {_first_bad_path(X, a)}")
        sums[c, grid.N] = X.sum(axis=0)
        sqs[c, grid.N] = (X * X).sum(axis=0)
        u1 = X @ u1gainT[n_sub] + u1const[n_sub]
        u2 = X @ thetaT[n_sub] + v2v[n_sub]
        if stride:
            Xs[a:b, -1] = X
            u1s[a:b, -1] = u1
            u2s[a:b, -1] = u2
        acc1 += ctab.terminal(X[:, :n], "1")
        acc2 += ctab.terminal(X[:, :n], "2")
        costs1[a:b] = acc1
        costs2[a:b] = acc2

    run_chunked(M, cfg.workers, job)

    J1, se1 = _mean_se(costs1)
    J2, se2 = _mean_se(costs2)
    mean_path, std_path = _finalize_paths(grid, stride, sums, sqs, M)
    traj = None
    if stride:
        traj = {"t": grid.nodes[::stride].copy(), "X": Xs, "u1": u1s, "u2": u2s}
    return SimResult(J1_hat=J1, J1_se=se1, J2_hat=J2, J2_se=se2,
                     mean_path=mean_path, std_path=std_path, trajectories=traj)


class AuxIntegrator:
    """Per-path auxiliary state evolved alongside simulate_raw's state, so
    feedback maps can depend on more than (t, x) — e.g. an adjoint block.

    dim: auxiliary state dimension; prepare(taus) is called once with the
    substep times before any path runs; init/step must be pure (no mutation of
    shared state) since chunks may run concurrently.
    """

    dim: int = 0

    def prepare(self, taus: np.ndarray) -> None:
        pass

    def init(self, n_paths: int) -> np.ndarray:
        return np.zeros((n_paths, self.dim))

    def step(self, j: int, t: float, x: np.ndarray, aux: np.ndarray,
             dW: np.ndarray, dt: float) -> np.ndarray:
        raise NotImplementedError


_DYN_LEAVES = ("A", "B1", "B2", "C", "D1", "D2", "b", "sigma")


def simulate_raw(spec: GameSpec, u1_feedback: Callable, u2_feedback: Callable,
                 cfg: SimConfig, grid: TimeGrid,
                 aux: Optional[AuxIntegrator] = None) -> SimResult:
    """Euler-Maruyama on the original state equation under supplied feedback.

    Feedback signature: u(t, x, aux_state) -> (paths, m) or (m,); aux_state is
    None unless an AuxIntegrator is supplied.  Same RNG/chunk discipline as
    simulate_closed_loop, so runs with the same seed share increments path
    for path.
    """
    n, m1, m2 = spec.dims.n, spec.dims.m1, spec.dims.m2
    M = cfg.paths
    substeps = cfg.substeps
    n_sub = grid.N * substeps
    dt = grid.h / substeps
    taus = _sub_times(grid, substeps)
    stride = cfg.stride()
    _check_stride(stride, grid.N)

    dyn = {leaf: np.stack([eval_coefficient(getattr(spec, leaf), float(t), grid)
                           for t in taus]) for leaf in _DYN_LEAVES}
    AT = dyn["A"].transpose(0, 2, 1).copy()
    B1T = dyn["B1"].transpose(0, 2, 1).copy()
    B2T = dyn["B2"].transpose(0, 2, 1).copy()
    CT = dyn["C"].transpose(0, 2, 1).copy()
    D1T = dyn["D1"].transpose(0, 2, 1).copy()
    D2T = dyn["D2"].transpose(0, 2, 1).copy()
    bv, sigv = dyn["b"], dyn["sigma"]

    if aux is not None:
        aux.prepare(taus)

    ctab = CostTables(spec, taus, grid)
    chunks = path_chunks(M)
    costs1 = np.empty(M)
    costs2 = np.empty(M)
    sums = np.zeros((len(chunks), grid.N + 1, n))
    sqs = np.zeros_like(sums)
    if stride:
        keep = grid.N // stride + 1
        Xs = np.empty((M, keep, n))
        u1s = np.empty((M, keep, m1))
        u2s = np.empty((M, keep, m2))

    def controls(j, x, auxstate, npaths):
        t = float(taus[j])
        u1 = np.asarray(u1_feedback(t, x, auxstate), dtype=float)
        u2 = np.asarray(u2_feedback(t, x, auxstate), dtype=float)
        if u1.ndim == 1:
            u1 = np.broadcast_to(u1, (npaths, m1))
        if u2.ndim == 1:
            u2 = np.broadcast_to(u2, (npaths, m2))
        return u1, u2

    def job(c: int, a: int, b: int):
        dW = path_increments(cfg.seed, a, b, n_sub, dt)
        x = np.tile(np.asarray(spec.x0, dtype=float), (b - a, 1))
        auxstate = aux.init(b - a) if aux is not None else None
        acc1 = np.zeros(b - a)
        acc2 = np.zeros(b - a)
        for j in range(n_sub):
            u1, u2 = controls(j, x, auxstate, b - a)
            if j % substeps == 0:
                k = j // substeps
                sums[c, k] = x.sum(axis=0)
                sqs[c, k] = (x * x).sum(axis=0)
                if stride and k % stride == 0:
                    Xs[a:b, k // stride] = x
                    u1s[a:b, k // stride] = u1
                    u2s[a:b, k // stride] = u2
            acc1 += ctab.running(j, x, u1, u2, "1") * dt
            acc2 += ctab.running(j, x, u1, u2, "2") * dt
            dWj = dW[:, j:j + 1]
            drift = x @ AT[j] + u1 @ B1T[j] + u2 @ B2T[j] + bv[j]
            diff = x @ CT[j] + u1 @ D1T[j] + u2 @ D2T[j] + sigv[j]
            if aux is not None:
                auxstate = aux.step(j, float(taus[j]), x, auxstate, dWj, dt)
            x = x + drift * dt + diff * dWj
            if not np.isfinite(x).all():
                raise NonFinite(float(taus[j + 1]), f"path {_first_bad_path(x, a)}")
        u1, u2 = controls(n_sub, x, auxstate, b - a)
        sums[c, grid.N] = x.sum(axis=0)
        sqs[c, grid.N] = (x * x).sum(axis=0)
        if stride:
            Xs[a:b, -1] = x
            u1s[a:b, -1] = u1
            u2s[a:b, -1] = u2
        acc1 += ctab.terminal(x, "1")
        acc2 += ctab.terminal(x, "2")
        costs1[a:b] = acc1
        costs2[a:b] = acc2

    run_chunked(M, cfg.workers, job)

    J1, se1 = _mean_se(costs1)
    J2, se2 = _mean_se(costs2)
    mean_path, std_path = _finalize_paths(grid, stride, sums, sqs, M)
    traj = None
    if stride:
        traj = {"t": grid.nodes[::stride].copy(), "X": Xs, "u1": u1s, "u2": u2s}
    return SimResult(J1_hat=J1, J1_se=se1, J2_hat=J2, J2_se=se2,
                     mean_path=mean_path, std_path=std_path, trajectories=traj)


class EquilibriumAdjoint(AuxIntegrator):
    """Auxiliary integrator carrying the adjoint block of the doubled state,
    stepping the lower rows of the equilibrium affine maps with the shared
    Brownian increments; lets the equilibrium policy be replayed through
    simulate_raw."""

    def __init__(self, aug: AugmentedSystem, P: MatrixPath, eta: MatrixPath,
                 theta: MatrixPath, v2: MatrixPath):
        self._aug = aug
        self._P = P
        self._eta = eta
        self._theta = theta
        self._v2 = v2
        self.dim = aug.n

    def prepare(self, taus: np.ndarray) -> None:
        n = self._aug.n
        maps = closed_loop_affine(self._aug, self._P, self._eta, self._theta,
                                  self._v2, taus)
        self._MdT = maps.drift_M[:, n:, :].transpose(0, 2, 1).copy()
        self._cd = maps.drift_c[:, n:].copy()
        self._MsT = maps.diff_M[:, n:, :].transpose(0, 2, 1).copy()
        self._cs = maps.diff_c[:, n:].copy()

    def step(self, j, t, x, aux, dW, dt):
        X = np.concatenate([x, aux], axis=1)
        return (aux + (X @ self._MdT[j] + self._cd[j]) * dt
                + (X @ self._MsT[j] + self._cs[j]) * dW)


def equilibrium_feedbacks(aug: AugmentedSystem, policy: StackelbergPolicy,
                          P: MatrixPath, eta: MatrixPath):
    """(u1_feedback, u2_feedback, aux) tuple replaying the equilibrium policy
    through simulate_raw; aux integrates the adjoint block."""
    auxint = EquilibriumAdjoint(aug, P, eta, policy.Theta2bold, policy.v2)

    def u1_fb(t, x, auxstate):
        return policy.u1(t, np.concatenate([x, auxstate], axis=1))

    def u2_fb(t, x, auxstate):
        return policy.u2(t, np.concatenate([x, auxstate], axis=1))

    return u1_fb, u2_fb, auxint


def dump_trajectories(result: SimResult, file) -> None:
    """Write stored trajectories as CSV: t, path_id, X*, u1_*, u2_*."""
    if result.trajectories is None:
        raise ValueError("simulation was run without store_trajectories")
    tr = result.trajectories
    t, X, u1, u2 = tr["t"], tr["X"], tr["u1"], tr["u2"]
    d, m1, m2 = X.shape[2], u1.shape[2], u2.shape[2]
    own = isinstance(file, (str, bytes))
    fh = open(file, "w") if own else file
    try:
        header = (["t", "path_id"]
                  + [f"X{i + 1}" for i in range(d)]
                  + [f"u1_{i + 1}" for i in range(m1)]
                  + [f"u2_{i + 1}" for i in range(m2)])
        fh.write(",".join(header) + "\n")
        for pid in range(X.shape[0]):
            for k in range(t.shape[0]):
                row = [f"{t[k]:.17g}", str(pid)]
                row += [f"{v:.17g}" for v in X[pid, k]]
                row += [f"{v:.17g}" for v in u1[pid, k]]
                row += [f"{v:.17g}" for v in u2[pid, k]]
                fh.write(",".join(row) + "\n")
    finally:
        if own:
            fh.close()
