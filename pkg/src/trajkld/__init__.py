"""Treatment decision rules from longitudinal trajectories.

Each arm's outcome trajectory is a linear mixed model whose fixed effects
are tilted by a scalar biosignature ``alpha @ x``.  The index vector is chosen
to maximize the expected symmetric Kullback-Leibler divergence between the
arms' coefficient distributions, and subjects are assigned to the arm with
the steeper average tangent slope.
"""

from .evaluation import CvPlan, CvResult, UndefinedValueError, cross_validate, ipwe, pcd
from .kld import (InvalidDistributionError, PurityCoeffs, kld_gaussian, mc_purity_oracle,
                  population_purity, purity_coeffs, subject_purity, sym_kld)
from .lmm import (FitError, GroupFit, InsufficientDataError, LmmFitOptions, fit_group,
                  marginal_loglik)
from .rules import (ChangeScoreRule, ConstantRule, Decision, KldRule, ats_weights, decide,
                    fit_changescore_rule, true_rule)
from .search import SearchError, SearchOptions, estimate_alpha, purity_objective
from .simulation import (Scenario, ScenarioResult, apply_missingness, default_truth, desk_grid,
                         gen_dataset, run_grid)
from .trajectory import (BasisSpec, CovariateMoments, FittedModel, GroupParams, SubjectRecord,
                         TrialData, design_matrix, eval_basis)

__all__ = [
    "CvPlan",
    "CvResult",
    "UndefinedValueError",
    "cross_validate",
    "ipwe",
    "pcd",
    "InvalidDistributionError",
    "PurityCoeffs",
    "kld_gaussian",
    "mc_purity_oracle",
    "population_purity",
    "purity_coeffs",
    "subject_purity",
    "sym_kld",
    "FitError",
    "GroupFit",
    "InsufficientDataError",
    "LmmFitOptions",
    "fit_group",
    "marginal_loglik",
    "ChangeScoreRule",
    "ConstantRule",
    "Decision",
    "KldRule",
    "ats_weights",
    "decide",
    "fit_changescore_rule",
    "true_rule",
    "SearchError",
    "SearchOptions",
    "estimate_alpha",
    "purity_objective",
    "Scenario",
    "ScenarioResult",
    "apply_missingness",
    "default_truth",
    "desk_grid",
    "gen_dataset",
    "run_grid",
    "BasisSpec",
    "CovariateMoments",
    "FittedModel",
    "GroupParams",
    "SubjectRecord",
    "TrialData",
    "design_matrix",
    "eval_basis",
]

__version__ = "0.1.0"
