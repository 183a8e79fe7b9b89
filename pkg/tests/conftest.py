import numpy as np
import pytest

import lqstackelberg as lq


@pytest.fixture(scope="session")
def rd_spec():
    return lq.resource_development_spec()


@pytest.fixture(scope="session")
def rd_sol(rd_spec):
    """Resource-development game solved on a medium grid (unit-test scale)."""
    grid = lq.TimeGrid(1.0, 400)
    sol = lq.solve_game(rd_spec, grid)
    assert sol.report.solvable
    return sol


@pytest.fixture(scope="session")
def tanh_spec():
    return lq.tanh_benchmark_spec()


@pytest.fixture(scope="session")
def tanh_sol(tanh_spec):
    grid = lq.TimeGrid(1.0, 1000)
    sol = lq.solve_game(tanh_spec, grid)
    assert sol.report.solvable
    return sol


def random_small_game(rng, n=None, m1=None, m2=None, horizon=0.5,
                      reduced_form=False):
    """A random damped game instance with dims <= 3 that passes the
    certificates (mild weights, short horizon keep both Riccati flows tame).

    reduced_form=True zeroes B1, D1, D2, which collapses every doubled-state
    block that couples through the follower; the leader equation then matches
    the textbook state-noise LQR Riccati (used by the reduced-form oracle
    tests).
    """
    n = int(rng.integers(1, 4)) if n is None else n
    m1 = int(rng.integers(1, 4)) if m1 is None else m1
    m2 = int(rng.integers(1, 4)) if m2 is None else m2

    def mat(r, c, scale):
        return scale * rng.standard_normal((r, c))

    def psd(k, scale):
        L = rng.standard_normal((k, k))
        return scale * (L @ L.T) / k

    A = mat(n, n, 0.5)
    B1 = np.zeros((n, m1)) if reduced_form else mat(n, m1, 0.5)
    B2 = mat(n, m2, 0.5)
    C = mat(n, n, 0.3)
    D1 = np.zeros((n, m1)) if reduced_form else mat(n, m1, 0.3)
    D2 = np.zeros((n, m2)) if reduced_form else mat(n, m2, 0.3)

    def cost(mq, mg, ridge):
        Q = psd(n, mq)
        R11 = psd(m1, 0.3) + ridge * np.eye(m1)
        R22 = psd(m2, 0.3) + ridge * np.eye(m2)
        R12 = mat(m1, m2, 0.1)
        return lq.PlayerCost(
            Q=lq.const(Q),
            S1=lq.const(mat(m1, n, 0.1)),
            S2=lq.const(mat(m2, n, 0.1)),
            R11=lq.const(R11),
            R12=lq.const(R12),
            R21=lq.const(R12.T),
            R22=lq.const(R22),
            q=lq.const(0.1 * rng.standard_normal(n)),
            rho1=lq.const(0.1 * rng.standard_normal(m1)),
            rho2=lq.const(0.1 * rng.standard_normal(m2)),
            G=psd(n, mg),
            g=0.1 * rng.standard_normal(n),
        )

    return lq.GameSpec(
        horizon=horizon,
        dims=lq.Dims(n=n, m1=m1, m2=m2),
        x0=rng.standard_normal(n),
        A=lq.const(A), B1=lq.const(B1), B2=lq.const(B2),
        C=lq.const(C), D1=lq.const(D1), D2=lq.const(D2),
        b=lq.const(0.1 * rng.standard_normal(n)),
        sigma=lq.const(0.1 * rng.standard_normal(n)),
        p1=cost(0.5, 0.3, 1.0),
        p2=cost(0.5, 0.3, 1.0),
    )
