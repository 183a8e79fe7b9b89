"""Monte Carlo machinery: quadrature oracles, exact moment recursions,
replay equivalence between the doubled and raw simulators, and the
determinism contract (workers, substeps, chunking)."""
import io

import numpy as np
import numpy.testing as npt
import pytest

import lqstackelberg as lq
import refcalc
from lqstackelberg.simulate import CHUNK, path_increments


def _ones_spec():
    """Scalar problem with every cost weight equal to one."""
    one = [[1.0]]
    pl = {"Q": one, "S1": one, "S2": one, "R11": one, "R12": one,
          "R21": one, "R22": one, "q": [1.0], "rho1": [1.0], "rho2": [1.0],
          "G": one, "g": [1.0]}
    return lq.spec_from_dict({
        "horizon": 1.0, "dims": {"n": 1, "m1": 1, "m2": 1}, "x0": [1.0],
        "dynamics": {}, "player1": pl, "player2": pl,
    })


def test_estimate_costs_counts_every_term():
    # x = u1 = u2 = 1 with unit weights: each of the nine running terms
    # contributes (1 or 2), total 15; terminal adds 1 + 2.
    spec = _ones_spec()
    K = 8  # h = 1/8 is exact in binary, so the quadrature is exact
    ones = np.ones((4, K + 1, 1))
    res = lq.estimate_costs(ones, ones, ones, spec)
    assert res.J1_hat == 18.0
    assert res.J2_hat == 18.0
    assert res.J1_se == 0.0 and res.J2_se == 0.0


def test_estimate_costs_se_is_sample_std_over_sqrt_m():
    spec = _ones_spec()
    xvals = np.array([0.3, -1.2, 0.8, 2.0, -0.4])
    x = np.tile(xvals[:, None, None], (1, 2, 1))  # constant per path, K=1
    u = np.zeros((5, 2, 1))
    res = lq.estimate_costs(x, u, u, spec)
    costs = 2.0 * (xvals**2 + 2.0 * xvals)  # running*h + terminal, u = 0
    assert res.J1_hat == pytest.approx(float(np.mean(costs)), rel=1e-14)
    assert res.J1_se == pytest.approx(
        float(np.std(costs, ddof=1) / np.sqrt(5)), rel=1e-14)
    assert res.J2_hat == res.J1_hat


def test_estimate_costs_shape_validation():
    spec = _ones_spec()
    ones = np.ones((4, 9, 1))
    with pytest.raises(ValueError, match="\\(paths, nodes, dim\\)"):
        lq.estimate_costs(np.ones((4, 9)), ones, ones, spec)
    with pytest.raises(ValueError, match="shapes disagree"):
        lq.estimate_costs(ones, np.ones((4, 8, 1)), ones, spec)
    with pytest.raises(ValueError, match="dims"):
        lq.estimate_costs(np.ones((4, 9, 2)), ones, ones, spec)


def test_sim_config_validation():
    with pytest.raises(ValueError, match="paths"):
        lq.SimConfig(paths=0)
    with pytest.raises(ValueError, match="substeps"):
        lq.SimConfig(substeps=0)
    with pytest.raises(ValueError, match="workers"):
        lq.SimConfig(workers=0)
    assert lq.SimConfig().stride() == 0
    assert lq.SimConfig(store_trajectories=True).stride() == 1
    assert lq.SimConfig(store_trajectories=5).stride() == 5
    with pytest.raises(ValueError, match="stride"):
        lq.SimConfig(store_trajectories=-2).stride()


def test_path_increments_independent_of_chunking():
    full = path_increments(9, 0, 10, 5, 0.01)
    part = path_increments(9, 3, 7, 5, 0.01)
    npt.assert_array_equal(full[3:7], part)
    # different seeds decorrelate
    other = path_increments(10, 0, 10, 5, 0.01)
    assert float(np.max(np.abs(full - other))) > 1e-3


def _drift_noise_spec(a=0.5, c=0.3):
    return lq.spec_from_dict({
        "horizon": 1.0, "dims": {"n": 1, "m1": 1, "m2": 1}, "x0": [1.0],
        "dynamics": {"A": [[a]], "C": [[c]]},
        "player1": {"R11": [[1.0]]}, "player2": {"R22": [[1.0]]},
    })


def _zero_u(t, x, aux):
    return np.zeros(1)


def test_moment_paths_match_exact_euler_recursion():
    # uncontrolled dx = a x ds + c x dW: the Euler chain has closed-form
    # first/second moments, so the ensemble paths must track them.
    a, c = 0.5, 0.3
    spec = _drift_noise_spec(a, c)
    grid = lq.TimeGrid(1.0, 32)
    M = 20_000
    cfg = lq.SimConfig(paths=M, seed=2, workers=2)
    res = lq.simulate_raw(spec, _zero_u, _zero_u, cfg, grid)

    dt = grid.h
    m = 1.0
    S = 1.0
    for k in range(grid.N + 1):
        mean_k = res.mean_path.values[k, 0]
        std_k = res.std_path.values[k, 0]
        se = std_k / np.sqrt(M)
        assert abs(mean_k - m) <= 5.0 * se + 1e-12
        assert abs(std_k**2 + mean_k**2 - S) <= 8.0 * S / np.sqrt(M) + 1e-12
        m *= 1.0 + a * dt
        S *= (1.0 + a * dt) ** 2 + c * c * dt
    # the chain mean at T converges to e^{aT} as dt -> 0 (weak order 1);
    # at this step size the chain-vs-limit gap is already the dominant error
    assert abs(res.mean_path.values[-1, 0] - np.exp(a)) < 0.05


def test_substeps_refine_without_changing_the_chain():
    # N=16 with substeps=3 and N=48 with substeps=1 walk the same Euler chain
    # on identical times with identical increments, so costs agree bitwise.
    spec = _drift_noise_spec()
    M = 500
    coarse = lq.simulate_raw(spec, _zero_u, _zero_u,
                             lq.SimConfig(paths=M, seed=4, substeps=3),
                             lq.TimeGrid(1.0, 16))
    fine = lq.simulate_raw(spec, _zero_u, _zero_u,
                           lq.SimConfig(paths=M, seed=4, substeps=1),
                           lq.TimeGrid(1.0, 48))
    assert coarse.J1_hat == fine.J1_hat
    assert coarse.J2_hat == fine.J2_hat
    npt.assert_array_equal(coarse.mean_path.values, fine.mean_path.values[::3])


def test_zero_noise_closed_loop_matches_moment_oracle(tanh_sol):
    # no diffusion at all: one path is the whole ensemble, and the simulated
    # cost must equal the exact discrete-chain expectation to rounding.
    cfg = lq.SimConfig(paths=2, seed=0)
    res = lq.simulate_closed_loop(tanh_sol.augmented, tanh_sol.policy,
                                  tanh_sol.leader.P, tanh_sol.leader.eta,
                                  cfg, tanh_sol.grid)
    assert res.J1_se == 0.0 and res.J2_se == 0.0

    d1, d2 = refcalc.discrete_costs(tanh_sol, tanh_sol.grid.N)
    assert res.J1_hat == pytest.approx(d1, abs=1e-9)
    assert res.J2_hat == pytest.approx(d2, abs=1e-9)

    # and the chain itself sits O(dt) from the continuous-time cost
    c1, c2 = refcalc.continuous_costs(tanh_sol, 2000)
    assert abs(res.J1_hat - c1) < 5e-3
    assert abs(res.J2_hat - c2) < 5e-3


def test_raw_replay_matches_closed_loop(rd_sol):
    cfg = lq.SimConfig(paths=64, seed=11, store_trajectories=True)
    closed = lq.simulate_closed_loop(rd_sol.augmented, rd_sol.policy,
                                     rd_sol.leader.P, rd_sol.leader.eta,
                                     cfg, rd_sol.grid)
    u1_fb, u2_fb, aux = lq.equilibrium_feedbacks(
        rd_sol.augmented, rd_sol.policy, rd_sol.leader.P, rd_sol.leader.eta)
    raw = lq.simulate_raw(rd_sol.spec, u1_fb, u2_fb, cfg, rd_sol.grid, aux=aux)

    n = rd_sol.spec.dims.n
    npt.assert_allclose(raw.trajectories["X"],
                        closed.trajectories["X"][:, :, :n],
                        rtol=1e-12, atol=1e-13)
    npt.assert_allclose(raw.trajectories["u1"], closed.trajectories["u1"],
                        rtol=1e-11, atol=1e-13)
    npt.assert_allclose(raw.trajectories["u2"], closed.trajectories["u2"],
                        rtol=1e-11, atol=1e-13)
    assert raw.J1_hat == pytest.approx(closed.J1_hat, rel=1e-11)
    assert raw.J2_hat == pytest.approx(closed.J2_hat, rel=1e-11)


def test_worker_count_does_not_change_results(rd_sol):
    M = CHUNK + 952  # two chunks
    results = []
    for w in (1, 4, 8):
        cfg = lq.SimConfig(paths=M, seed=5, workers=w)
        results.append(lq.simulate_closed_loop(
            rd_sol.augmented, rd_sol.policy, rd_sol.leader.P,
            rd_sol.leader.eta, cfg, rd_sol.grid))
    for r in results[1:]:
        assert r.J1_hat == results[0].J1_hat
        assert r.J2_hat == results[0].J2_hat
        assert r.J1_se == results[0].J1_se
        npt.assert_array_equal(r.mean_path.values, results[0].mean_path.values)
        npt.assert_array_equal(r.std_path.values, results[0].std_path.values)


def test_monte_carlo_agrees_with_discrete_oracle(rd_sol):
    M = 20_000
    cfg = lq.SimConfig(paths=M, seed=123, workers=2)
    res = lq.simulate_closed_loop(rd_sol.augmented, rd_sol.policy,
                                  rd_sol.leader.P, rd_sol.leader.eta,
                                  cfg, rd_sol.grid)
    d1, d2 = refcalc.discrete_costs(rd_sol, rd_sol.grid.N)
    assert abs(res.J1_hat - d1) <= 3.5 * res.J1_se
    assert abs(res.J2_hat - d2) <= 3.5 * res.J2_se
    assert res.J1_se > 0.0 and res.J2_se > 0.0


def test_trajectory_store_and_dump(rd_sol):
    cfg = lq.SimConfig(paths=3, seed=8, store_trajectories=100)
    res = lq.simulate_closed_loop(rd_sol.augmented, rd_sol.policy,
                                  rd_sol.leader.P, rd_sol.leader.eta,
                                  cfg, rd_sol.grid)
    keep = rd_sol.grid.N // 100 + 1
    assert res.trajectories["X"].shape == (3, keep, 2)
    assert res.trajectories["t"].shape == (keep,)

    buf = io.StringIO()
    lq.dump_trajectories(res, buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "t,path_id,X1,X2,u1_1,u2_1"
    assert len(lines) == 1 + 3 * keep
    # %.17g survives the round trip
    cells = lines[1].split(",")
    assert float(cells[0]) == res.trajectories["t"][0]
    assert cells[1] == "0"
    assert float(cells[2]) == res.trajectories["X"][0, 0, 0]
    assert float(cells[4]) == res.trajectories["u1"][0, 0, 0]

    with pytest.raises(ValueError, match="must divide"):
        lq.simulate_closed_loop(rd_sol.augmented, rd_sol.policy,
                                rd_sol.leader.P, rd_sol.leader.eta,
                                lq.SimConfig(paths=2, store_trajectories=7),
                                rd_sol.grid)
    plain = lq.SimConfig(paths=2)
    res2 = lq.simulate_closed_loop(rd_sol.augmented, rd_sol.policy,
                                   rd_sol.leader.P, rd_sol.leader.eta,
                                   plain, rd_sol.grid)
    with pytest.raises(ValueError, match="store_trajectories"):
        lq.dump_trajectories(res2, io.StringIO())


def test_nonfinite_feedback_is_reported():
    spec = _drift_noise_spec()
    grid = lq.TimeGrid(1.0, 10)

    def bad_u(t, x, aux):
        return np.full(1, np.inf)

    with pytest.raises(lq.NonFinite) as ei, np.errstate(invalid="ignore"):
        lq.simulate_raw(spec, bad_u, _zero_u, lq.SimConfig(paths=3), grid)
    assert "path 0" in ei.value.where
    assert ei.value.time == pytest.approx(grid.h)
