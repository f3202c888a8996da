"""Sample size and power for propensity-score weighting estimators."""

from .design import (
    DesignInputs,
    DesignResult,
    GridCell,
    Sidedness,
    power_at,
    sample_size,
    sensitivity_grid,
    ztest_size,
)
from .errors import (
    BoundViolationError,
    ConvergenceError,
    DomainError,
    EstimationError,
    InconsistencyError,
    InfeasibleOverlapError,
    RankDeficiencyError,
)
from .outcome import OutcomeModel, OutcomeSummary, RSquaredBound, solve_outcome_model
from .propensity import (
    BetaPropensity,
    LogitNormalPropensity,
    OverlapSpec,
    beta_to_logitnormal,
    overlap_from_beta,
    overlap_from_scores,
    propensity_law,
    solve_beta,
)
from .variance import (
    Estimand,
    TiltingFunction,
    VarianceBreakdown,
    WateDenominator,
    ate_variance_raw,
    ate_variance_std,
    hajek_sandwich_variance,
    wate_variance,
    wate_variance_std,
)

__version__ = "0.1.0"
