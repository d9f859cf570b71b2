"""Proportion of correct decisions, matched-mean value estimate, repeated k-fold CV."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .trajectory import TrialData

log = logging.getLogger(__name__)


class UndefinedValueError(ValueError):
    """No subject received the arm recommended by the rule."""


def pcd(predicted, truth) -> float:
    predicted = np.asarray(predicted).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if predicted.size == 0 or predicted.size != truth.size:
        raise ValueError("predicted and truth must be nonempty and of equal length")
    return float(np.mean(predicted == truth))


def ipwe(improvements, observed, predicted) -> float:
    """Mean improvement among subjects whose observed arm agrees with the rule."""
    u = np.asarray(improvements, dtype=float).reshape(-1)
    a = np.asarray(observed).reshape(-1)
    a_hat = np.asarray(predicted).reshape(-1)
    if not (u.size == a.size == a_hat.size):
        raise ValueError("inputs must have equal length")
    match = a == a_hat
    if not match.any():
        raise UndefinedValueError("no subject's observed arm matches the rule")
    return float(u[match].sum() / match.sum())


def improvements(data: TrialData, lower_is_better: bool = False):
    """Per-subject change score oriented so that larger means more improvement.

    Uses the last observed visit; returns the scores and the number of
    subjects whose last observation precedes the final design time.
    """
    last = data.design_times[-1]
    u = np.array([s.outcomes[-1] - s.outcomes[0] for s in data.subjects])
    if lower_is_better:
        u = -u
    n_early = sum(1 for s in data.subjects if s.times[-1] < last)
    return u, n_early


@dataclass(frozen=True)
class CvPlan:
    n_folds: int = 10
    n_repeats: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_folds < 2 or self.n_repeats < 1:
            raise ValueError("need n_folds >= 2 and n_repeats >= 1")


def stratified_folds(groups, n_folds: int, rng) -> np.ndarray:
    """Fold label per subject; each arm is dealt round-robin after shuffling."""
    groups = np.asarray(groups)
    fold = np.empty(groups.size, dtype=int)
    offset = 0
    for k in np.unique(groups):
        idx = np.flatnonzero(groups == k)
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = (np.arange(idx.size) + offset) % n_folds
        offset += idx.size
    return fold


@dataclass
class CvResult:
    values: np.ndarray          # (n_repeats, n_folds), nan where the fold was skipped
    n_failed: int
    n_early: int                # subjects whose U uses a visit before the final design time
    errors: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.nanmean(self.values))

    @property
    def sd(self) -> float:
        return float(np.nanstd(self.values, ddof=1))

    def rows(self):
        for r in range(self.values.shape[0]):
            for f in range(self.values.shape[1]):
                yield r, f, self.values[r, f]


def cross_validate(data: TrialData, rule_builder, plan: CvPlan = CvPlan(),
                   lower_is_better: bool = False) -> CvResult:
    """Repeated stratified k-fold CV of a rule builder, scored by the matched-mean value."""
    u, n_early = improvements(data, lower_is_better)
    groups = data.groups
    x = data.covariates
    rng = np.random.default_rng(np.random.SeedSequence([plan.seed, 0xCF]))
    values = np.full((plan.n_repeats, plan.n_folds), np.nan)
    errors = []
    for r in range(plan.n_repeats):
        fold = stratified_folds(groups, plan.n_folds, rng)
        for f in range(plan.n_folds):
            test = np.flatnonzero(fold == f)
            train = np.flatnonzero(fold != f)
            try:
                rule = rule_builder(data.subset(train))
                values[r, f] = ipwe(u[test], groups[test], rule.assign(x[test]))
            except Exception as exc:  # noqa: BLE001 - a failed fold is recorded and skipped
                errors.append((r, f, repr(exc)))
                log.debug("CV repeat %d fold %d skipped: %s", r, f, exc)
    return CvResult(values, len(errors), n_early, errors)
