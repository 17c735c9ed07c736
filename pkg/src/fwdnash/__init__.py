"""Forward-utility Nash and mean-field equilibria for CARA relative-performance portfolio games."""

from .exceptions import (
    DegenerateEquilibrium,
    DimensionMismatch,
    DomainError,
    FwdNashError,
    IllConditionedWarning,
    NoConstantEquilibrium,
    NoConvergence,
    ParseError,
    PreconditionError,
)
from .market import (
    AgentType,
    CaraForwardUtility,
    PopulationSpec,
    TypeDistribution,
    eval_utility,
    risk_tolerance_check,
    spde_residual_n,
    validate_type,
)
from .nplayer import (
    AggregatesN,
    EquilibriumN,
    aggregates_n,
    best_response,
    best_response_iteration,
    equilibrium_n,
    lambda_equilibrium,
    lambda_from_others,
    nash_residual,
    single_stock_equilibrium_n,
)
from .meanfield import (
    AggregatesMF,
    EquilibriumMF,
    mf_aggregates,
    mf_equilibrium,
    mf_lambda,
    mf_spde_residual,
    single_stock_equilibrium_mf,
)
from .estimators import MeanFieldNash, NPlayerNash, check_types

__version__ = "0.1.0"
