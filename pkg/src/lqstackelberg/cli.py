"""Command-line front end.

``game solve|simulate|verify`` run the pipeline on a JSON problem file;
``game example-rd`` and ``game example-openloop`` run the built-in showcase
problems.  Artifacts (CSV trajectories, JSON reports) land in --out.

Exit codes: 0 success, 1 I/O or validation error, 2 problem correctly
detected as not closed-loop solvable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click
import numpy as np

from .builtin_problems import open_loop_only_spec, resource_development_spec
from .model import GameSpec, TimeGrid, load_problem
from .numerics import MatrixPath
from .pipeline import GameSolution, solve_game
from .simulate import SimConfig, simulate_closed_loop
from .verify import verification_report

__all__ = ["RunConfig", "run", "emit_csv", "read_csv", "game", "main"]


@dataclass
class RunConfig:
    command: str
    input: Optional[str] = None
    grid: int = 2000
    paths: int = 10_000
    substeps: int = 1
    seed: int = 0
    horizon: Optional[float] = None
    out: str = "."
    threads: int = 1


# ---------------------------------------------------------------------------
# CSV / JSON plumbing
# ---------------------------------------------------------------------------

def _entry_names(prefix: str, shape: tuple) -> list:
    if len(shape) == 0:
        return [prefix]
    if len(shape) == 1:
        return [f"{prefix}{i + 1}" for i in range(shape[0])]
    if len(shape) == 2:
        return [f"{prefix}{i + 1}{j + 1}"
                for i in range(shape[0]) for j in range(shape[1])]
    raise ValueError(f"cannot name entries of shape {shape}")


def emit_csv(path: MatrixPath, file, prefix: str = "P") -> None:
    """Write a time-indexed path as CSV: t plus row-major entry columns, full
    double precision (17 significant digits)."""
    vals = path.values
    K = vals.shape[0]
    names = _entry_names(prefix, vals.shape[1:])
    flat = vals.reshape(K, -1)
    own = isinstance(file, (str, bytes, Path))
    fh = open(file, "w") if own else file
    try:
        fh.write(",".join(["t"] + names) + "\n")
        for k in range(K):
            row = [f"{path.grid.nodes[k]:.17g}"]
            row += [f"{v:.17g}" for v in flat[k]]
            fh.write(",".join(row) + "\n")
    finally:
        if own:
            fh.close()


def read_csv(file) -> tuple:
    """Inverse of emit_csv: returns (column names, t array, value array)."""
    own = isinstance(file, (str, bytes, Path))
    fh = open(file, "r") if own else file
    try:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    finally:
        if own:
            fh.close()
    data = np.array(rows, dtype=float)
    return header[1:], data[:, 0], data[:, 1:]


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonify(payload), f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# pipeline driver
# ---------------------------------------------------------------------------

def _builtin_spec(cfg: RunConfig) -> GameSpec:
    T = cfg.horizon if cfg.horizon is not None else 1.0
    if cfg.command == "example-rd":
        return resource_development_spec(horizon=T)
    if cfg.command == "example-openloop":
        return open_loop_only_spec(horizon=T)
    raise ValueError(f"no built-in problem for command {cfg.command!r}")


def _write_solve_artifacts(sol: GameSolution, outdir: Path) -> None:
    emit_csv(sol.follower.P1, outdir / "follower_P1.csv", prefix="P")
    if sol.leader is not None:
        emit_csv(sol.leader.P, outdir / "leader_P.csv", prefix="P")
        emit_csv(sol.leader.eta, outdir / "eta.csv", prefix="eta")
        _emit_gains(sol, outdir / "gains.csv")
    _write_json(outdir / "solve_report.json", sol.report.to_dict())


def _emit_gains(sol: GameSolution, path: Path) -> None:
    """Leader equilibrium gain and offset, one row per node."""
    theta = sol.leader.Theta2bold
    v2 = sol.leader.v2
    K = theta.values.shape[0]
    names = (_entry_names("Theta", theta.values.shape[1:])
             + _entry_names("v", v2.values.shape[1:]))
    with open(path, "w") as fh:
        fh.write(",".join(["t"] + names) + "\n")
        for k in range(K):
            row = [f"{theta.grid.nodes[k]:.17g}"]
            row += [f"{v:.17g}" for v in theta.values[k].ravel()]
            row += [f"{v:.17g}" for v in v2.values[k].ravel()]
            fh.write(",".join(row) + "\n")


def run(cfg: RunConfig) -> int:
    """Execute one CLI command; returns the process exit code."""
    try:
        if cfg.command in ("example-rd", "example-openloop"):
            spec = _builtin_spec(cfg)
        else:
            if cfg.input is None:
                raise ValueError(f"{cfg.command} requires --input FILE")
            spec = load_problem(cfg.input)
        if cfg.grid < 2:
            raise ValueError("--grid must be at least 2")
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
    except (OSError, ValueError, KeyError) as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except json.JSONDecodeError as e:
        click.echo(f"error: malformed problem file: {e}", err=True)
        return 1

    grid = TimeGrid(spec.horizon, cfg.grid)
    try:
        sol = solve_game(spec, grid)
    except ValueError as e:
        click.echo(f"error: {e}", err=True)
        return 1

    _write_solve_artifacts(sol, outdir)
    if not sol.report.solvable:
        click.echo(f"not closed-loop solvable: {sol.report.reason}", err=True)
        return 2

    if cfg.command in ("simulate", "verify", "example-rd"):
        scfg = SimConfig(paths=cfg.paths, substeps=cfg.substeps, seed=cfg.seed,
                         workers=cfg.threads)
        res = simulate_closed_loop(sol.augmented, sol.policy, sol.leader.P,
                                   sol.leader.eta, scfg, grid)
        summary = res.to_dict()
        summary["config"] = {"grid": cfg.grid, "paths": cfg.paths,
                             "substeps": cfg.substeps, "seed": cfg.seed}
        _write_json(outdir / "sim_summary.json", summary)

    if cfg.command in ("verify", "example-rd"):
        vcfg = SimConfig(paths=min(cfg.paths, 2048), substeps=cfg.substeps,
                         seed=cfg.seed, workers=cfg.threads)
        rep = verification_report(sol, vcfg)
        _write_json(outdir / "verification.json", rep.to_dict())

    return 0


# ---------------------------------------------------------------------------
# click wiring
# ---------------------------------------------------------------------------

def _common(f):
    f = click.option("--out", default=".", show_default=True,
                     help="output directory")(f)
    f = click.option("--horizon", type=float, default=None,
                     help="horizon override (built-in examples only)")(f)
    f = click.option("--seed", type=int, default=0, show_default=True)(f)
    f = click.option("--substeps", type=int, default=1, show_default=True)(f)
    f = click.option("--paths", type=int, default=10_000, show_default=True,
                     help="Monte Carlo sample paths")(f)
    f = click.option("--grid", type=int, default=2000, show_default=True,
                     help="time grid intervals N")(f)
    f = click.option("--threads", type=int, default=1, show_default=True,
                     help="worker threads (never affects results)")(f)
    return f


@click.group()
def game():
    """Closed-loop hierarchical LQ game solver."""


def _dispatch(command, input=None, **kw):
    cfg = RunConfig(command=command, input=input, **kw)
    code = run(cfg)
    if code != 0:
        raise SystemExit(code)


@game.command("solve")
@click.option("--input", required=True, type=click.Path(), help="problem JSON")
@_common
def _cmd_solve(**kw):
    """Solve both stages and emit trajectory CSVs and the solve report."""
    _dispatch("solve", **kw)


@game.command("simulate")
@click.option("--input", required=True, type=click.Path(), help="problem JSON")
@_common
def _cmd_simulate(**kw):
    """Solve, then Monte Carlo the closed-loop system (adds sim_summary.json)."""
    _dispatch("simulate", **kw)


@game.command("verify")
@click.option("--input", required=True, type=click.Path(), help="problem JSON")
@_common
def _cmd_verify(**kw):
    """Solve, simulate, and run the verification battery (verification.json)."""
    _dispatch("verify", **kw)


@game.command("example-rd")
@_common
def _cmd_example_rd(**kw):
    """Built-in resource-development showcase (solve + simulate + verify)."""
    _dispatch("example-rd", **kw)


@game.command("example-openloop")
@_common
def _cmd_example_openloop(**kw):
    """Built-in problem solvable only open-loop: demonstrates detection."""
    _dispatch("example-openloop", **kw)


def main(argv=None) -> int:
    """Console entry point; returns the exit code."""
    try:
        game.main(args=argv, standalone_mode=False)
        return 0
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.ClickException as e:
        e.show()
        return 1
