"""Peer effects on count outcomes in co-authorship networks."""

from peercount.errors import (
    EquilibriumError,
    FormationError,
    NumericalError,
    OptimizationError,
    PeercountError,
    ValidationError,
)
from peercount.estimate import EstimateResult, npl_fit, select_R_bar, standard_errors
from peercount.formation import DyadFrame, fit_dyadic_logit, sieve_terms
from peercount.game import (
    CostLadder,
    GameParams,
    choice_probabilities,
    peer_effect_bound,
    solve_equilibrium,
)
from peercount.netbuild import (
    InteractionNetwork,
    PeriodSpec,
    build_adjacency,
    build_covariates,
    covid_index,
    row_normalize,
)
from peercount.simulate import SimConfig, simulate_dataset, simulate_outcomes

__version__ = "0.1.0"
__all__ = [
    "CostLadder",
    "DyadFrame",
    "EquilibriumError",
    "EstimateResult",
    "FormationError",
    "GameParams",
    "InteractionNetwork",
    "NumericalError",
    "OptimizationError",
    "PeercountError",
    "PeriodSpec",
    "SimConfig",
    "ValidationError",
    "build_adjacency",
    "build_covariates",
    "choice_probabilities",
    "covid_index",
    "fit_dyadic_logit",
    "npl_fit",
    "peer_effect_bound",
    "row_normalize",
    "select_R_bar",
    "sieve_terms",
    "simulate_dataset",
    "simulate_outcomes",
    "solve_equilibrium",
    "standard_errors",
]
