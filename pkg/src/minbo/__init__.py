"""Information borrowing from multiple secondary datasets.

Empirical-likelihood weights computed per secondary dataset are merged
by averaging, aggregating, or omnibus schemes and re-weight the main
logistic estimating equation, improving efficiency without risking
consistency under working-model misspecification.
"""

from .empirical_likelihood import ELFit, fit_el, solve_lambda, two_step_gmm_init
from .estimator import BetaSolution, fit_unweighted, fit_weighted
from .model_core import (
    CrossSectionalDataset,
    LongitudinalDataset,
    MainDataset,
    SecondaryDataset,
    WorkingModelSpec,
    cross_sectional_spec,
    default_basis,
    h_eval,
    h_jacobian,
    longitudinal_spec,
    main_score,
    main_score_jacobian,
)
from .numerics import RngStream, normal_quantile, sample_mvn, solve_spd
from .schemes import (
    IntegratedScore,
    SchemeSpec,
    build_scheme,
    iib_weights,
    integrate_scores,
    resolve_iib,
)
from .simulation import (
    MonteCarloSummary,
    SimulationConfig,
    gen_scenario,
    monte_carlo,
    run_replicate,
)
from .variance import (
    EstimateReport,
    VarianceComponents,
    scheme_variance,
    summarize,
    variance_components,
)

__version__ = "0.1.0"

__all__ = [
    "BetaSolution",
    "CrossSectionalDataset",
    "ELFit",
    "EstimateReport",
    "IntegratedScore",
    "LongitudinalDataset",
    "MainDataset",
    "MonteCarloSummary",
    "RngStream",
    "SchemeSpec",
    "SecondaryDataset",
    "SimulationConfig",
    "VarianceComponents",
    "WorkingModelSpec",
    "build_scheme",
    "cross_sectional_spec",
    "default_basis",
    "fit_el",
    "fit_unweighted",
    "fit_weighted",
    "gen_scenario",
    "h_eval",
    "h_jacobian",
    "iib_weights",
    "integrate_scores",
    "longitudinal_spec",
    "main_score",
    "main_score_jacobian",
    "monte_carlo",
    "normal_quantile",
    "resolve_iib",
    "run_replicate",
    "sample_mvn",
    "scheme_variance",
    "solve_spd",
    "summarize",
    "two_step_gmm_init",
    "variance_components",
]
