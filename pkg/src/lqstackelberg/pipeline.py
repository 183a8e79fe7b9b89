"""End-to-end solve: follower stage on a doubled grid (so the leader's
integrator sees exact half-step samples), reduction, doubled-system assembly,
leader Riccati + offset, gains, and the final feedback policy.

A failed solvability certificate is reported, not raised: the returned
GameSolution carries whatever stage output exists plus a SolveReport saying
what stopped and why.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .follower import (FollowerSolution, solve_follower_riccati)
from .leader import (AugmentedSystem, LeaderCertificates, LeaderReduction,
                     LeaderSolution, SingularFactor, SingularRhat,
                     StackelbergPolicy, assemble_augmented, build_policy,
                     leader_gains, reduce_leader, solve_eta,
                     solve_leader_riccati_certified)
from .model import GameSpec, TimeGrid, validate_spec
from .numerics import MatrixPath

__all__ = ["SolveReport", "GameSolution", "solve_game"]


@dataclass
class SolveReport:
    solvable: bool
    reason: Optional[str]
    follower: dict
    leader: Optional[dict]

    def to_dict(self) -> dict:
        return {
            "solvable": self.solvable,
            "reason": self.reason,
            "follower": self.follower,
            "leader": self.leader,
        }


@dataclass
class GameSolution:
    spec: GameSpec
    grid: TimeGrid
    follower: FollowerSolution
    reduction: Optional[LeaderReduction]
    augmented: Optional[AugmentedSystem]
    leader: Optional[LeaderSolution]
    policy: Optional[StackelbergPolicy]
    report: SolveReport


def _follower_cert_dict(fsol: FollowerSolution) -> dict:
    c = fsol.certificates
    return {
        "psd_ok": bool(c.psd_ok),
        "range_ok": bool(c.range_ok),
        "blow_up": None if c.blow_up is None else float(c.blow_up),
    }


def _leader_cert_dict(c: LeaderCertificates) -> dict:
    return {
        "invertible_IminusPD1": bool(c.invertible_IminusPD1),
        "invertible_Rtilde": bool(c.invertible_Rtilde),
        "blow_up": None if c.blow_up is None else float(c.blow_up),
        "min_margin_IminusPD1": float(c.min_margin_IminusPD1),
        "min_margin_Rtilde": float(c.min_margin_Rtilde),
    }


def _thin_follower(fsol: FollowerSolution, grid: TimeGrid) -> FollowerSolution:
    """Restrict a follower solution from the doubled grid back to ``grid``."""
    stride = fsol.P1.grid.N // grid.N
    if stride == 1:
        return fsol
    return FollowerSolution(
        P1=fsol.P1.thin(stride),
        Theta1=fsol.Theta1.thin(stride),
        Rhat11=fsol.Rhat11.thin(stride),
        certificates=fsol.certificates,
    )


def solve_game(spec: GameSpec, grid: TimeGrid) -> GameSolution:
    """Run both stages; never raises on solvability failures (see report)."""
    report = validate_spec(spec)
    if not report.ok:
        bad = "; ".join(f"{c.name} ({c.detail})" if c.detail else c.name
                        for c in report.failures())
        raise ValueError(f"invalid problem data: {bad}")

    grid2 = grid.doubled()
    fsol2 = solve_follower_riccati(spec, grid2)
    fsol = _thin_follower(fsol2, grid)
    fdict = _follower_cert_dict(fsol2)

    freason = fsol2.certificates.failure_reason()
    if freason is not None:
        return GameSolution(
            spec=spec, grid=grid, follower=fsol, reduction=None,
            augmented=None, leader=None, policy=None,
            report=SolveReport(False, freason, fdict, None))

    try:
        red = reduce_leader(spec, fsol2, grid)
    except SingularRhat as e:
        return GameSolution(
            spec=spec, grid=grid, follower=fsol, reduction=None,
            augmented=None, leader=None, policy=None,
            report=SolveReport(False, str(e), fdict, None))

    aug = assemble_augmented(red, spec, spec.x0)

    try:
        P, lcerts = solve_leader_riccati_certified(aug, grid)
    except SingularFactor as e:
        return GameSolution(
            spec=spec, grid=grid, follower=fsol, reduction=red,
            augmented=aug, leader=None, policy=None,
            report=SolveReport(False, str(e), fdict, None))

    if not lcerts.solvable:
        return GameSolution(
            spec=spec, grid=grid, follower=fsol, reduction=red,
            augmented=aug, leader=None, policy=None,
            report=SolveReport(False, lcerts.failure_reason(), fdict,
                               _leader_cert_dict(lcerts)))

    eta = solve_eta(aug, P, grid)
    zeta = MatrixPath(grid, np.zeros((grid.N + 1, 2 * aug.n)))
    gains = leader_gains(aug, P, eta, grid)
    lsol = LeaderSolution(P=P, eta=eta, zeta=zeta, Theta2bold=gains[0],
                          v2=gains[1], certificates=lcerts, n=aug.n)
    policy = build_policy(spec, fsol2, red, aug, P, eta, gains)

    return GameSolution(
        spec=spec, grid=grid, follower=fsol, reduction=red, augmented=aug,
        leader=lsol, policy=policy,
        report=SolveReport(True, None, fdict, _leader_cert_dict(lcerts)))
