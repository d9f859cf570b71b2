"""Treatment decision rules.

All rules code arms as 1 and 2 and assume a larger outcome slope is better;
callers whose outcome improves downward should negate it first.  Ties go to
arm 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .lmm import LmmFitOptions, fit_group
from .search import SearchOptions, estimate_alpha, estimate_covariate_moments, unit_vector
from .trajectory import BasisSpec, FittedModel, TrialData, canonical_sign, eval_basis


@dataclass(frozen=True)
class Decision:
    assignment: int
    margin: float


def _assign(margin):
    return np.where(np.asarray(margin) > 0, 2, 1)


def ats_weights(spec: BasisSpec, t_first: float, t_last: float) -> np.ndarray:
    """Weights turning coefficients into the average tangent slope on [t_first, t_last]."""
    if not t_last > t_first:
        raise ValueError("t_last must exceed t_first")
    return (eval_basis(t_last, spec) - eval_basis(t_first, spec)) / (t_last - t_first)


def ats_margin(params: tuple, w, ats: np.ndarray):
    """ATS(arm 2) - ATS(arm 1) at biosignature value(s) ``w``."""
    g1, g2 = params
    w = np.asarray(w, dtype=float)
    return ats @ (g2.beta - g1.beta) + w * (ats @ (g2.gamma - g1.gamma))


def decide(model: FittedModel, x, spec: BasisSpec, t_first: float, t_last: float) -> Decision:
    x = np.asarray(x, dtype=float)
    if x.shape != model.alpha.shape:
        raise ValueError("covariate vector has the wrong length")
    margin = float(ats_margin(model.params, model.alpha @ x, ats_weights(spec, t_first, t_last)))
    return Decision(2 if margin > 0 else 1, margin)


def true_rule(truth: tuple, b1, b2, x, alpha_true, spec: BasisSpec, t_first: float, t_last: float):
    """Oracle arm for a subject whose random effects under both arms are known.

    Accepts a single subject or stacked rows (``x`` of shape (n, p), ``b1``
    and ``b2`` of shape (n, q)).
    """
    ats = ats_weights(spec, t_first, t_last)
    x = np.asarray(x, dtype=float)
    w = x @ np.asarray(alpha_true, dtype=float)
    margin = ats_margin(truth, w, ats) + (np.asarray(b2) - np.asarray(b1)) @ ats
    out = _assign(margin)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KldRule:
    model: FittedModel
    t_first: float
    t_last: float

    def margin(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return ats_margin(self.model.params, X @ self.model.alpha,
                          ats_weights(self.model.spec, self.t_first, self.t_last))

    def assign(self, X):
        return _assign(self.margin(X))


@dataclass(frozen=True)
class ChangeScoreRule:
    coef_diff: np.ndarray
    intercept_diff: float

    def __post_init__(self):
        if not (np.all(np.isfinite(self.coef_diff)) and np.isfinite(self.intercept_diff)):
            raise ValueError("change-score rule has non-finite coefficients")

    def assign(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _assign(self.intercept_diff + X @ self.coef_diff)


def change_scores(subjects):
    """Last-minus-first observed outcome for subjects with at least two visits."""
    keep = [s for s in subjects if s.n_obs >= 2]
    x = np.array([s.covariates for s in keep], dtype=float)
    dy = np.array([s.outcomes[-1] - s.outcomes[0] for s in keep])
    return x, dy


def fit_changescore_rule(data: TrialData) -> ChangeScoreRule:
    coefs = []
    for k in (1, 2):
        x, dy = change_scores(data.group(k))
        if dy.size < data.p + 2:
            raise ValueError(f"arm {k} has {dy.size} usable subjects, need {data.p + 2}")
        design = np.column_stack([np.ones(dy.size), x.reshape(dy.size, data.p)])
        coefs.append(np.linalg.lstsq(design, dy, rcond=None)[0])
    diff = coefs[1] - coefs[0]
    return ChangeScoreRule(diff[1:], float(diff[0]))


def apply_changescore_rule(rule: ChangeScoreRule, x) -> int:
    return int(rule.assign(x)[0])


@dataclass(frozen=True)
class ConstantRule:
    arm: int

    def assign(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.arm, dtype=int)


# Rule builders: picklable callables mapping training data to a rule.

@dataclass(frozen=True)
class LsKldBuilder:
    spec: BasisSpec = BasisSpec()
    search_opts: SearchOptions = SearchOptions()
    lmm_opts: LmmFitOptions = LmmFitOptions()

    def __call__(self, data: TrialData) -> KldRule:
        model = estimate_alpha(data, self.spec, self.search_opts, self.lmm_opts)
        return KldRule(model, data.design_times[0], data.design_times[-1])

    def with_seed(self, seed: int) -> "LsKldBuilder":
        return replace(self, search_opts=replace(self.search_opts, seed=seed))


@dataclass(frozen=True)
class FixedAlphaBuilder:
    """Refits both arms at a given index vector (e.g. the true one) and applies the ATS rule."""

    alpha: tuple
    spec: BasisSpec = BasisSpec()
    lmm_opts: LmmFitOptions = LmmFitOptions()

    def __call__(self, data: TrialData) -> KldRule:
        alpha = canonical_sign(unit_vector(self.alpha))
        fits = [fit_group(data.group(k), alpha, self.spec, self.lmm_opts) for k in (1, 2)]
        model = FittedModel(alpha, (fits[0].params, fits[1].params),
                            estimate_covariate_moments(data),
                            fits[0].loglik + fits[1].loglik, np.nan, self.spec)
        return KldRule(model, data.design_times[0], data.design_times[-1])


def changescore_builder(data: TrialData) -> ChangeScoreRule:
    return fit_changescore_rule(data)


@dataclass(frozen=True)
class ConstantBuilder:
    arm: int

    def __call__(self, data: TrialData) -> ConstantRule:
        return ConstantRule(self.arm)
