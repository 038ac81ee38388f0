"""Tabular dynamic programming, graph-filter policy evaluation and BellNet."""

from .environments import GridSpec, build_cliff_mdp, mirror_spec
from .experiments import ExperimentConfig, nerr, run_depth_sweep, run_order_sweep, run_transfer
from .graph_filter import apply_filter, classical_coeffs, filtered_evaluation, fit_minimal_filter
from .mdp import (
    NumericError,
    TabularMdp,
    bellman_backup,
    bellman_optimality_backup,
    greedy_policy,
    idx,
    policy_transition,
    softmax_policy,
    unidx,
    unvec,
    vec,
)
from .model import BellNetModel, extract_deterministic_policy, forward, layer_forward
from .solvers import (
    SolverReport,
    optimal_q,
    policy_evaluation_exact,
    policy_evaluation_iterative,
    policy_iteration,
    value_iteration,
)
from .training import TrainConfig, bellman_target, loss_and_gradient, train

__version__ = "0.1.0"
