"""Closed-loop Stackelberg equilibria for linear-quadratic stochastic
differential games.

The package solves the two-stage problem in layers: a follower Riccati
equation with pseudo-inverse feedback, a reduction folding the follower's
rational response into the leader's data, a doubled-dimension leader Riccati
equation and offset ODE, Monte Carlo simulation of the resulting closed loop,
and a battery of numerical equilibrium checks.
"""

from .builtin_problems import (open_loop_only_spec, resource_development_spec,
                               tanh_benchmark_spec)
from .follower import (CertificateFailure, FollowerCertificates, FollowerSolution,
                       follower_gain, follower_value, solve_follower_aux,
                       solve_follower_riccati)
from .leader import (AugmentedSystem, LeaderCertificates, LeaderReduction,
                     LeaderSolution, NotHomogeneous, SingularFactor,
                     SingularRhat, StackelbergPolicy, assemble_augmented,
                     build_policy, leader_gains, leader_value, reduce_leader,
                     solve_eta, solve_leader_riccati,
                     solve_leader_riccati_certified)
from .model import (CoefficientPath, Dims, GameSpec, PlayerCost, TimeGrid,
                    ValidationReport, const, eval_coefficient, load_problem,
                    sampled, spec_from_dict, spec_to_dict, validate_spec,
                    zeros_path)
from .numerics import (BlowUp, MatrixPath, NonFinite, integrate_backward_rk4,
                       pinv, psd_check, range_check)
from .pipeline import GameSolution, SolveReport, solve_game
from .simulate import (SimConfig, SimResult, dump_trajectories,
                       equilibrium_feedbacks, estimate_costs,
                       simulate_closed_loop, simulate_raw)
from .verify import (VerificationReport, best_response_check, convexity_probe,
                     gateaux_check, reconstruct_adjoints,
                     stationarity_residual, value_consistency,
                     verification_report)

__version__ = "0.1.0"
