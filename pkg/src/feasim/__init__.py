"""Feasibility-weighted imitation from demonstrators with different dynamics."""

from .core import Environment, Metric, Trajectory, collect_transitions, distance, expected_return, rollout, step
from .envs import generate_demos, make_env, scripted_expert
from .feasibility import (
    FeasibilityRecord,
    ScoreConfig,
    budget_sample,
    demonstrator_distribution,
    feasibility,
    feasibility_stochastic,
    score_trajectory,
    transition_sampling_distribution,
)
from .fmdp import FMdp, FMdpState, build_onestep_fmdp, build_trajectory_fmdp
from .imitate import fit_weighted_bc, id_feas_weights, recover_action, uniform_weights
from .solver import SolverConfig, TabularPolicy, q_learning, value_iteration

__version__ = "0.1.0"
