"""Problem data for two-player linear-quadratic leader-follower diffusion games.

Contents
--------
- Dims, TimeGrid: dimensions and the uniform solver grid
- CoefficientPath: a constant or node-sampled (piecewise-linear) coefficient
- PlayerCost, GameSpec: full problem description
- validate_spec -> ValidationReport: non-throwing invariant checks
- eval_coefficient: evaluate a coefficient at an arbitrary time
- JSON helpers: spec_from_dict / spec_to_dict / load_problem

Everything is immutable after construction: arrays are copied and marked
read-only, so a validated spec cannot drift under downstream stages.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Dims",
    "TimeGrid",
    "CoefficientPath",
    "PlayerCost",
    "GameSpec",
    "CheckRecord",
    "ValidationReport",
    "validate_spec",
    "eval_coefficient",
    "const",
    "sampled",
    "zeros_path",
    "spec_from_dict",
    "spec_to_dict",
    "load_problem",
]


def _frozen(a, shape=None) -> np.ndarray:
    """Copy ``a`` as a float64 array, optionally check shape, and freeze it."""
    arr = np.array(a, dtype=float)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"expected shape {tuple(shape)}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dims:
    """State and control dimensions: n state, m1 follower, m2 leader."""

    n: int
    m1: int
    m2: int


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_N = T with t_k = k*T/N."""

    T: float
    N: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0.0):
            raise ValueError(f"horizon must be positive and finite, got {self.T}")
        if self.N < 1:
            raise ValueError(f"grid needs at least one step, got N={self.N}")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        # linspace pins both endpoints exactly
        return np.linspace(0.0, self.T, self.N + 1)

    def doubled(self) -> "TimeGrid":
        return TimeGrid(self.T, 2 * self.N)


class CoefficientPath:
    """A time-dependent coefficient: constant, or uniformly sampled in time.

    Sampled paths are interpreted piecewise-linearly between their own sample
    times (uniform over the horizon) and are exact at those times.  ``shape``
    is the per-time shape, e.g. (n, n) for a matrix or (n,) for a vector.
    """

    __slots__ = ("values", "is_constant")

    def __init__(self, values, is_constant: bool):
        self.values = _frozen(values)
        self.is_constant = bool(is_constant)
        if not is_constant and self.values.ndim < 1:
            raise ValueError("sampled path needs a leading node axis")

    @property
    def shape(self) -> tuple:
        return self.values.shape if self.is_constant else self.values.shape[1:]

    @property
    def kind(self) -> str:
        return "constant" if self.is_constant else "sampled"

    @property
    def num_samples(self) -> Optional[int]:
        return None if self.is_constant else self.values.shape[0]

    def __repr__(self):
        return f"CoefficientPath({self.kind}, shape={self.shape})"


def const(a) -> CoefficientPath:
    """Wrap a constant matrix/vector as a coefficient path."""
    return CoefficientPath(a, is_constant=True)


def sampled(stack) -> CoefficientPath:
    """Wrap a (num_samples, *shape) stack of uniform samples of the horizon.

    The samples are read as values at equally spaced times 0, T/K, ..., T and
    the path is their piecewise-linear interpolant (see eval_coefficient).
    """
    return CoefficientPath(stack, is_constant=False)


def zeros_path(*shape) -> CoefficientPath:
    return const(np.zeros(shape))


def eval_coefficient(path: CoefficientPath, t: float, grid: TimeGrid) -> np.ndarray:
    """Value of ``path`` at time ``t``; ``grid`` supplies the horizon.

    A sampled path is the piecewise-linear interpolant of its uniform samples
    over [0, T] — its own spacing, independent of the evaluation grid — and is
    exact (bitwise) at its own sample times.  Solvers may therefore evaluate
    the same path on refined grids; samples that line up with a solve node are
    reproduced, times in between are interpolated.  ``t`` outside [0, T] is a
    domain error; values within a few ulp of the endpoints are clamped to
    tolerate accumulated rounding in integrators.
    """
    slack = 16.0 * np.finfo(float).eps * max(1.0, abs(grid.T))
    if t < -slack or t > grid.T + slack:
        raise ValueError(f"t={t} outside [0, {grid.T}]")
    t = min(max(t, 0.0), grid.T)
    if path.is_constant:
        return path.values
    nodes = path.values
    K = nodes.shape[0] - 1
    if K == 0:
        return nodes[0]
    u = t / (grid.T / K)
    r = round(u)
    if abs(u - r) <= 4.0 * np.finfo(float).eps * max(1.0, abs(u)):
        u = float(r)
    k = int(u)
    if k >= K:
        return nodes[K]
    w = u - k
    if w == 0.0:
        return nodes[k]
    return (1.0 - w) * nodes[k] + w * nodes[k + 1]


@dataclass(frozen=True)
class PlayerCost:
    """One player's cost weights.

    Running cost:  <Q x, x> + 2<S1 x, u1> + 2<S2 x, u2>
                   + <R11 u1, u1> + 2<R12 u2, u1> + <R22 u2, u2>
                   + 2<q, x> + 2<rho1, u1> + 2<rho2, u2>
    Terminal:      <G x(T), x(T)> + 2<g, x(T)>

    R21 is carried explicitly and must equal R12^T at every node.
    """

    Q: CoefficientPath
    S1: CoefficientPath
    S2: CoefficientPath
    R11: CoefficientPath
    R12: CoefficientPath
    R21: CoefficientPath
    R22: CoefficientPath
    q: CoefficientPath
    rho1: CoefficientPath
    rho2: CoefficientPath
    G: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "G", _frozen(self.G))
        object.__setattr__(self, "g", _frozen(self.g))


@dataclass(frozen=True)
class GameSpec:
    """Complete description of the leader-follower game.

    Dynamics: dx = [A x + B1 u1 + B2 u2 + b] ds + [C x + D1 u1 + D2 u2 + sigma] dW
    with a one-dimensional Brownian motion W. p1 is the follower, p2 the leader.
    """

    horizon: float
    dims: Dims
    x0: np.ndarray
    A: CoefficientPath
    B1: CoefficientPath
    B2: CoefficientPath
    C: CoefficientPath
    D1: CoefficientPath
    D2: CoefficientPath
    b: CoefficientPath
    sigma: CoefficientPath
    p1: PlayerCost
    p2: PlayerCost

    def __post_init__(self):
        object.__setattr__(self, "x0", _frozen(self.x0))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckRecord:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str = ""):
        self.checks.append(CheckRecord(name, bool(passed), detail))

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail}
                for c in self.checks
            ],
        }

    def __str__(self):
        lines = [f"validation: {'ok' if self.ok else 'FAILED'}"]
        for c in self.checks:
            mark = "ok " if c.passed else "BAD"
            lines.append(f"  [{mark}] {c.name}" + (f": {c.detail}" if c.detail else ""))
        return "\n".join(lines)


def _path_nodes(path: CoefficientPath) -> np.ndarray:
    """All stored values of a path, with a leading node axis (length 1 if constant)."""
    if path.is_constant:
        return path.values[None, ...]
    return path.values


def _sym_defect(stack: np.ndarray) -> float:
    return float(np.max(np.abs(stack - np.swapaxes(stack, -1, -2)))) if stack.size else 0.0


def validate_spec(spec: GameSpec, grid: Optional[TimeGrid] = None) -> ValidationReport:
    """Check shapes, symmetry and finiteness. Returns a report, never raises.

    Pure: calling it twice gives the same report and mutates nothing.  A failed
    report is the caller's signal to stop before the solver stages.
    """
    rep = ValidationReport()
    d = spec.dims
    n, m1, m2 = d.n, d.m1, d.m2

    rep.add("dims positive", n >= 1 and m1 >= 1 and m2 >= 1, f"n={n}, m1={m1}, m2={m2}")
    rep.add(
        "horizon positive",
        bool(np.isfinite(spec.horizon) and spec.horizon > 0),
        f"T={spec.horizon}",
    )
    rep.add("x0 shape", spec.x0.shape == (n,), f"{spec.x0.shape}")
    rep.add("x0 finite", bool(np.all(np.isfinite(spec.x0))))

    expected = {
        "A": (n, n), "B1": (n, m1), "B2": (n, m2),
        "C": (n, n), "D1": (n, m1), "D2": (n, m2),
        "b": (n,), "sigma": (n,),
    }
    paths = {k: getattr(spec, k) for k in expected}
    for pl, tag in ((spec.p1, "p1"), (spec.p2, "p2")):
        expected.update({
            f"{tag}.Q": (n, n), f"{tag}.S1": (m1, n), f"{tag}.S2": (m2, n),
            f"{tag}.R11": (m1, m1), f"{tag}.R12": (m1, m2),
            f"{tag}.R21": (m2, m1), f"{tag}.R22": (m2, m2),
            f"{tag}.q": (n,), f"{tag}.rho1": (m1,), f"{tag}.rho2": (m2,),
        })
        for name in ("Q", "S1", "S2", "R11", "R12", "R21", "R22", "q", "rho1", "rho2"):
            paths[f"{tag}.{name}"] = getattr(pl, name)

    sample_counts = set()
    for name, shape in expected.items():
        p = paths[name]
        rep.add(f"shape {name}", p.shape == shape, f"declared {p.shape}, expected {shape}")
        rep.add(f"finite {name}", bool(np.all(np.isfinite(p.values))))
        if not p.is_constant:
            sample_counts.add(p.num_samples)

    if sample_counts:
        rep.add(
            "sampled node counts consistent",
            len(sample_counts) == 1,
            f"counts {sorted(sample_counts)}",
        )
        if grid is not None:
            want = grid.N + 1
            rep.add(
                "sampled node count matches grid",
                sample_counts == {want},
                f"grid wants {want}",
            )

    tol = 1e-12

    def sym_check(name, stack):
        rep.add(f"symmetric {name}", _sym_defect(stack) <= tol * (1.0 + float(np.max(np.abs(stack), initial=0.0))))

    for pl, tag in ((spec.p1, "p1"), (spec.p2, "p2")):
        sym_check(f"{tag}.Q", _path_nodes(pl.Q))
        sym_check(f"{tag}.R11", _path_nodes(pl.R11))
        sym_check(f"{tag}.R22", _path_nodes(pl.R22))
        r12 = _path_nodes(pl.R12)
        r21 = _path_nodes(pl.R21)
        if r12.shape[0] != r21.shape[0]:
            # one constant, one sampled: broadcast the constant
            reps = max(r12.shape[0], r21.shape[0])
            r12 = np.broadcast_to(r12, (reps,) + r12.shape[1:])
            r21 = np.broadcast_to(r21, (reps,) + r21.shape[1:])
        defect = float(np.max(np.abs(r12 - np.swapaxes(r21, -1, -2)))) if r12.size else 0.0
        rep.add(f"{tag}.R12 == {tag}.R21^T", defect <= tol * (1.0 + float(np.max(np.abs(r12), initial=0.0))))
        rep.add(f"shape {tag}.G", pl.G.shape == (n, n), f"{pl.G.shape}")
        rep.add(f"shape {tag}.g", pl.g.shape == (n,), f"{pl.g.shape}")
        rep.add(f"finite {tag}.G", bool(np.all(np.isfinite(pl.G))))
        rep.add(f"finite {tag}.g", bool(np.all(np.isfinite(pl.g))))
        rep.add(f"symmetric {tag}.G", _sym_defect(pl.G[None]) <= tol * (1.0 + float(np.max(np.abs(pl.G), initial=0.0))))

    return rep


# ---------------------------------------------------------------------------
# JSON problem files
# ---------------------------------------------------------------------------

def _coeff_from_json(obj, shape: Sequence[int], name: str) -> CoefficientPath:
    if obj is None:
        return zeros_path(*shape)
    if isinstance(obj, dict):
        if "samples" not in obj:
            raise ValueError(f"{name}: coefficient object must carry 'samples'")
        stack = np.array(obj["samples"], dtype=float)
        if stack.shape[1:] != tuple(shape):
            raise ValueError(
                f"{name}: sample shape {stack.shape[1:]} != expected {tuple(shape)}"
            )
        return sampled(stack)
    arr = np.array(obj, dtype=float)
    if arr.shape != tuple(shape):
        raise ValueError(f"{name}: shape {arr.shape} != expected {tuple(shape)}")
    return const(arr)


def _coeff_to_json(path: CoefficientPath):
    if path.is_constant:
        return path.values.tolist()
    return {"samples": path.values.tolist()}


def _player_from_json(obj: dict, d: Dims, tag: str) -> PlayerCost:
    n, m1, m2 = d.n, d.m1, d.m2
    get = obj.get
    return PlayerCost(
        Q=_coeff_from_json(get("Q"), (n, n), f"{tag}.Q"),
        S1=_coeff_from_json(get("S1"), (m1, n), f"{tag}.S1"),
        S2=_coeff_from_json(get("S2"), (m2, n), f"{tag}.S2"),
        R11=_coeff_from_json(get("R11"), (m1, m1), f"{tag}.R11"),
        R12=_coeff_from_json(get("R12"), (m1, m2), f"{tag}.R12"),
        R21=_coeff_from_json(get("R21"), (m2, m1), f"{tag}.R21"),
        R22=_coeff_from_json(get("R22"), (m2, m2), f"{tag}.R22"),
        q=_coeff_from_json(get("q"), (n,), f"{tag}.q"),
        rho1=_coeff_from_json(get("rho1"), (m1,), f"{tag}.rho1"),
        rho2=_coeff_from_json(get("rho2"), (m2,), f"{tag}.rho2"),
        G=np.array(get("G", np.zeros((n, n))), dtype=float),
        g=np.array(get("g", np.zeros(n)), dtype=float),
    )


def spec_from_dict(obj: dict) -> GameSpec:
    """Build a GameSpec from the JSON problem-file structure.

    Required keys: horizon, dims{n,m1,m2}, dynamics (may be empty).
    Every omitted coefficient — x0 and the player blocks included — defaults
    to zeros of the right shape.
    Matrices are nested row-major arrays; vectors are flat arrays; a
    time-sampled coefficient is {"samples": [value_at_node_0, ...]}.
    """
    try:
        d = Dims(int(obj["dims"]["n"]), int(obj["dims"]["m1"]), int(obj["dims"]["m2"]))
        T = float(obj["horizon"])
        dyn = obj["dynamics"]
    except KeyError as e:
        raise ValueError(f"problem file missing required key: {e}") from None
    n, m1, m2 = d.n, d.m1, d.m2
    return GameSpec(
        horizon=T,
        dims=d,
        x0=np.array(obj.get("x0", np.zeros(n)), dtype=float),
        A=_coeff_from_json(dyn.get("A"), (n, n), "A"),
        B1=_coeff_from_json(dyn.get("B1"), (n, m1), "B1"),
        B2=_coeff_from_json(dyn.get("B2"), (n, m2), "B2"),
        C=_coeff_from_json(dyn.get("C"), (n, n), "C"),
        D1=_coeff_from_json(dyn.get("D1"), (n, m1), "D1"),
        D2=_coeff_from_json(dyn.get("D2"), (n, m2), "D2"),
        b=_coeff_from_json(dyn.get("b"), (n,), "b"),
        sigma=_coeff_from_json(dyn.get("sigma"), (n,), "sigma"),
        p1=_player_from_json(obj.get("player1", {}), d, "player1"),
        p2=_player_from_json(obj.get("player2", {}), d, "player2"),
    )


def spec_to_dict(spec: GameSpec) -> dict:
    def player(pl: PlayerCost) -> dict:
        return {
            "Q": _coeff_to_json(pl.Q), "S1": _coeff_to_json(pl.S1), "S2": _coeff_to_json(pl.S2),
            "R11": _coeff_to_json(pl.R11), "R12": _coeff_to_json(pl.R12),
            "R21": _coeff_to_json(pl.R21), "R22": _coeff_to_json(pl.R22),
            "q": _coeff_to_json(pl.q), "rho1": _coeff_to_json(pl.rho1),
            "rho2": _coeff_to_json(pl.rho2),
            "G": pl.G.tolist(), "g": pl.g.tolist(),
        }

    return {
        "horizon": spec.horizon,
        "dims": {"n": spec.dims.n, "m1": spec.dims.m1, "m2": spec.dims.m2},
        "x0": spec.x0.tolist(),
        "dynamics": {
            "A": _coeff_to_json(spec.A), "B1": _coeff_to_json(spec.B1),
            "B2": _coeff_to_json(spec.B2), "C": _coeff_to_json(spec.C),
            "D1": _coeff_to_json(spec.D1), "D2": _coeff_to_json(spec.D2),
            "b": _coeff_to_json(spec.b), "sigma": _coeff_to_json(spec.sigma),
        },
        "player1": player(spec.p1),
        "player2": player(spec.p2),
    }


def load_problem(path) -> GameSpec:
    """Read a JSON problem file from ``path``."""
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    return spec_from_dict(obj)
