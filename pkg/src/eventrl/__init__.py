"""Distributed value-function learning with event-triggered communication."""
from .analysis import (
    AssumptionReport,
    BoundReport,
    InequalityReport,
    bound_rhs,
    check_assumptions,
    check_key_inequality,
    estimate_gradient_covariance,
    min_rho,
    performance_metric,
    theorem_bound_check,
)
from .estimator import EventTriggeredVFA
from .features import (
    IndicatorBasis,
    PolynomialBasis2,
    SecondMomentSummary,
    indicator_basis,
    polynomial_basis_deg2,
    second_moment,
)
from .learner import (
    AssumptionViolation,
    DivergenceError,
    HyperParams,
    LinearValue,
    QuadraticObjective,
    RunRecord,
    TabularValue,
    objective_exact,
    optimal_weights,
    run_inner_loop,
    run_outer_loop,
    server_update,
    stochastic_gradient,
)
from .mdp import (
    DataTuple,
    GridWorld,
    LinearGaussian,
    TupleBatch,
    exact_bellman_target,
    make_gridworld,
    make_linear_gaussian,
    make_rng,
    sample_tuples,
)
from .trigger import GainEstimate, TriggerPolicy, decide, oracle_gain, threshold

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport",
    "BoundReport",
    "InequalityReport",
    "bound_rhs",
    "check_assumptions",
    "check_key_inequality",
    "estimate_gradient_covariance",
    "min_rho",
    "performance_metric",
    "theorem_bound_check",
    "IndicatorBasis",
    "PolynomialBasis2",
    "SecondMomentSummary",
    "indicator_basis",
    "polynomial_basis_deg2",
    "second_moment",
    "AssumptionViolation",
    "DivergenceError",
    "HyperParams",
    "LinearValue",
    "QuadraticObjective",
    "RunRecord",
    "TabularValue",
    "objective_exact",
    "optimal_weights",
    "run_inner_loop",
    "run_outer_loop",
    "server_update",
    "stochastic_gradient",
    "DataTuple",
    "GridWorld",
    "LinearGaussian",
    "TupleBatch",
    "exact_bellman_target",
    "make_gridworld",
    "make_linear_gaussian",
    "make_rng",
    "sample_tuples",
    "EventTriggeredVFA",
    "GainEstimate",
    "TriggerPolicy",
    "decide",
    "oracle_gain",
    "threshold",
]
