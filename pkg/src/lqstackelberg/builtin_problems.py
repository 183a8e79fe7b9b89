"""Built-in example problems.

Two scalar games ship with the package:

* ``resource_development_spec`` — a stock that one player depletes by
  extraction effort while the other prices access to it; extraction hurts the
  stock through the drift, noise is proportional to the stock level.  Both
  stage equations stay regular, so this is the standard smoke test for the
  full pipeline.

* ``open_loop_only_spec`` — a degenerate game whose follower pays nothing for
  control effort (zero running weight).  The follower's effective weight is
  identically singular and the range certificate fails, so the closed-loop
  construction must refuse; useful for exercising the failure path.
"""
from __future__ import annotations

import math

import numpy as np

from .model import Dims, GameSpec, PlayerCost, const, zeros_path

__all__ = ["resource_development_spec", "open_loop_only_spec", "tanh_benchmark_spec"]


def _scalar_cost(Q=0.0, S1=0.0, S2=0.0, R11=0.0, R12=0.0, R22=0.0,
                 G=0.0) -> PlayerCost:
    return PlayerCost(
        Q=const(np.array([[Q]])),
        S1=const(np.array([[S1]])),
        S2=const(np.array([[S2]])),
        R11=const(np.array([[R11]])),
        R12=const(np.array([[R12]])),
        R21=const(np.array([[R12]])),
        R22=const(np.array([[R22]])),
        q=zeros_path(1),
        rho1=zeros_path(1),
        rho2=zeros_path(1),
        G=np.array([[G]]),
        g=np.zeros(1),
    )


def resource_development_spec(horizon: float = 1.0, x0: float = 1.0,
                              decay: float = 0.05,
                              extraction: float = math.sqrt(2.5),
                              vol: float = math.sqrt(0.000065)) -> GameSpec:
    """Scalar stock-and-extraction game; all coefficients constant.

    The stock decays at rate decay/2, shrinks with the follower's extraction
    effort (weight ``extraction``), grows with the leader's investment, and
    carries multiplicative noise ``vol``.  The follower earns on the stock and
    pays quadratically for effort; the leader pays for the stock level it must
    support and for its own investment.
    """
    return GameSpec(
        horizon=float(horizon),
        dims=Dims(n=1, m1=1, m2=1),
        x0=np.array([float(x0)]),
        A=const(np.array([[-decay / 2.0]])),
        B1=const(np.array([[-extraction]])),
        B2=const(np.array([[1.0]])),
        C=const(np.array([[vol]])),
        D1=const(np.array([[0.0]])),
        D2=const(np.array([[0.0]])),
        b=zeros_path(1),
        sigma=zeros_path(1),
        p1=_scalar_cost(Q=0.8, R11=1.0),
        p2=_scalar_cost(Q=-0.8, R22=1.0),
    )


def open_loop_only_spec(horizon: float = 1.0, x0: float = 1.0) -> GameSpec:
    """Scalar game with a free-rider follower: zero running control weight.

    The follower's effective control weight is identically zero, the range
    certificate fails, and no closed-loop equilibrium of the kind constructed
    here exists (an open-loop analysis would still go through).
    """
    return GameSpec(
        horizon=float(horizon),
        dims=Dims(n=1, m1=1, m2=1),
        x0=np.array([float(x0)]),
        A=const(np.array([[0.0]])),
        B1=const(np.array([[1.0]])),
        B2=const(np.array([[1.0]])),
        C=const(np.array([[0.0]])),
        D1=const(np.array([[0.0]])),
        D2=const(np.array([[0.0]])),
        b=zeros_path(1),
        sigma=zeros_path(1),
        p1=_scalar_cost(Q=0.0, R11=0.0, G=1.0),
        p2=_scalar_cost(Q=0.0, R22=1.0, G=1.0),
    )


def tanh_benchmark_spec(horizon: float = 1.0, x0: float = 1.0,
                        noise: float = 0.0) -> GameSpec:
    """Scalar benchmark whose follower Riccati flow has a closed form.

    With unit control gain and unit state/control weights and no terminal
    weight, the follower's Riccati path is hyperbolic-tangent in time-to-go.
    The leader data is benign (unit control weight, mild state weight), and
    ``noise`` sets an additive diffusion constant for stochastic runs.
    """
    spec = GameSpec(
        horizon=float(horizon),
        dims=Dims(n=1, m1=1, m2=1),
        x0=np.array([float(x0)]),
        A=const(np.array([[0.0]])),
        B1=const(np.array([[1.0]])),
        B2=const(np.array([[1.0]])),
        C=const(np.array([[0.0]])),
        D1=const(np.array([[0.0]])),
        D2=const(np.array([[0.0]])),
        b=zeros_path(1),
        sigma=const(np.array([float(noise)])),
        p1=_scalar_cost(Q=1.0, R11=1.0),
        p2=_scalar_cost(Q=1.0, R22=1.0),
    )
    return spec
