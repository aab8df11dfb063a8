"""Shielded Q-learning for time-window temporal logic tasks on uncertain MDPs."""
from .automaton import Fsa, compile_relaxed, export_dot, trivial_fsa
from .harness import ExperimentConfig, oracle_report, preset, run_case, sweep
from .learner import Hyper, evaluate, greedy_policy, train
from .model import GridSpec, KnowledgeSets, Mdp, build_grid
from .oracle import dp_exact_reach, dp_worst_case_shielded
from .product import (
    INF,
    build_product,
    build_time_product,
    check_assumptions,
    check_initial_condition,
    distance_to_accepting,
)
from .shield import ShieldConfig, build_shield, go_policy, prune_actions, reach_lower_bound
from .twtl import parse, time_bound

__version__ = "0.1.0"
