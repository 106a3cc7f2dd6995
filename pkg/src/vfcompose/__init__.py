"""Tabular MDP toolkit for composing region-local controllers.

A controller made of sub-policies that each act on one region of the state
space is optimal overall when every region is solved with the next region's
value function as its exit reward. This package provides the model types,
solvers, the restriction operator, composition procedures, a small
behaviour-tree layer and two families of example worlds.
"""
from .bt import BtNode, Status, TickResult, execute, operating_regions, tick
from .composition import (
    AssumptionError,
    AssumptionReport,
    CompositionResult,
    SwitchingPolicy,
    check_assumption,
    compose_local,
    compose_manual_learned,
    compose_mixture,
    constrain,
    decoupled_solve,
    evaluate_switching_policy,
    recursive_compose,
    value_function_gap,
)
from .mdp import (
    InvalidMdpError,
    Mdp,
    Policy,
    RegionPartition,
    Transition,
    mdp_neighbors,
    one_step_frontier,
    validate,
)
from .restriction import (
    FORBIDDEN,
    BoundaryValue,
    RestrictedMdp,
    constant_boundary,
    continuation_boundary,
    forbidden_boundary,
    mixture_boundary,
    restrict,
)
from .solvers import (
    NEG_INF,
    DivergenceError,
    LearnConfig,
    SolveConfig,
    Sweep,
    bellman_backup,
    brute_force_optimal,
    greedy_policy,
    policy_evaluation,
    q_learning,
    value_iteration,
)

__version__ = "0.1.0"

__all__ = [
    "BtNode",
    "Status",
    "TickResult",
    "execute",
    "operating_regions",
    "tick",
    "AssumptionError",
    "AssumptionReport",
    "CompositionResult",
    "SwitchingPolicy",
    "check_assumption",
    "compose_local",
    "compose_manual_learned",
    "compose_mixture",
    "constrain",
    "decoupled_solve",
    "evaluate_switching_policy",
    "recursive_compose",
    "value_function_gap",
    "InvalidMdpError",
    "Mdp",
    "Policy",
    "RegionPartition",
    "Transition",
    "mdp_neighbors",
    "one_step_frontier",
    "validate",
    "FORBIDDEN",
    "BoundaryValue",
    "RestrictedMdp",
    "constant_boundary",
    "continuation_boundary",
    "forbidden_boundary",
    "mixture_boundary",
    "restrict",
    "NEG_INF",
    "DivergenceError",
    "LearnConfig",
    "SolveConfig",
    "Sweep",
    "bellman_backup",
    "brute_force_optimal",
    "greedy_policy",
    "policy_evaluation",
    "q_learning",
    "value_iteration",
]
