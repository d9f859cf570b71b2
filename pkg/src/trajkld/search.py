"""Nelder-Mead search for the unit-norm index vector with maximal estimated purity."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .kld import InvalidDistributionError, population_purity, purity_coeffs, purity_terms
from .lmm import (FitError, GroupStats, LmmFitOptions, covariance_from_factor, fit_group_stats,
                  fit_raw, group_stats)
from .trajectory import BasisSpec, CovariateMoments, FittedModel, TrialData, canonical_sign

log = logging.getLogger(__name__)


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchOptions:
    n_restarts: int = 5
    max_evals: int = 2000
    simplex_init_scale: float = 0.25
    purity_tol: float = 1e-6
    seed: int = 0
    warm_start: bool = True

    def __post_init__(self):
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.max_evals < 3:
            raise ValueError("max_evals too small")


def estimate_covariate_moments(data: TrialData) -> CovariateMoments:
    x = data.covariates
    if x.shape[0] < 2:
        raise ValueError("need at least two subjects to estimate covariate moments")
    return CovariateMoments(x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False, ddof=1)))


def unit_vector(alpha) -> np.ndarray:
    """Normalize to unit length; a vector whose norm is already exactly 1 is returned as is."""
    alpha = np.asarray(alpha, dtype=float)
    for _ in range(4):
        norm = np.linalg.norm(alpha)
        if not norm > 0:
            raise ValueError("alpha must be nonzero")
        if norm == 1.0:
            break
        alpha = alpha / norm
    return alpha


class PurityObjective:
    """Estimated population purity as a function of an (unnormalized) index vector.

    Caches the alpha-independent sufficient statistics of both arms so each
    evaluation only reruns the two mixed-model fits.
    """

    def __init__(self, data: TrialData, spec: BasisSpec = BasisSpec(),
                 lmm_opts: LmmFitOptions = LmmFitOptions(), moments: CovariateMoments | None = None):
        self.data = data
        self.spec = spec
        self.lmm_opts = lmm_opts
        self.moments = moments if moments is not None else estimate_covariate_moments(data)
        self.stats: tuple[GroupStats, GroupStats] = (
            group_stats(data.group(1), spec), group_stats(data.group(2), spec))
        self.n_evals = 0

    def fit(self, alpha):
        alpha = unit_vector(alpha)
        f1 = fit_group_stats(self.stats[0], alpha, self.lmm_opts)
        f2 = fit_group_stats(self.stats[1], alpha, self.lmm_opts)
        coeffs = purity_coeffs(f1.params, f2.params)
        return alpha, f1, f2, population_purity(coeffs, self.moments, alpha)

    def __call__(self, alpha) -> float:
        # same arithmetic as fit() without building result objects
        self.n_evals += 1
        try:
            alpha = unit_vector(alpha)
            q = self.stats[0].q
            raw = [fit_raw(st, st.x @ alpha, self.lmm_opts) for st in self.stats]
            (phi1, L1, _, _, _), (phi2, L2, _, _, _) = raw
            coeffs = purity_terms(phi1[:q] - phi2[:q], phi1[q:] - phi2[q:],
                                  covariance_from_factor(L1), covariance_from_factor(L2))
            return population_purity(coeffs, self.moments, alpha)
        except (FitError, InvalidDistributionError, np.linalg.LinAlgError) as exc:
            log.debug("purity evaluation failed: %s", exc)
            return -np.inf


def purity_objective(alpha, data: TrialData, spec: BasisSpec = BasisSpec(),
                     lmm_opts: LmmFitOptions = LmmFitOptions()) -> float:
    return PurityObjective(data, spec, lmm_opts)(alpha)


def changescore_direction(data: TrialData) -> np.ndarray:
    """Leading eigenvector of the between-arm scatter of cov(x, change score).

    With two arms the scatter matrix has rank one, so this is the normalized
    difference of the arms' covariate/change-score cross-covariances.
    """
    cross = []
    for k in (1, 2):
        subs = [s for s in data.group(k) if s.n_obs >= 2]
        if len(subs) < 2:
            return np.eye(data.p)[0]
        x = np.array([s.covariates for s in subs])
        dy = np.array([s.outcomes[-1] - s.outcomes[0] for s in subs])
        cross.append((x - x.mean(0)).T @ (dy - dy.mean()) / (len(subs) - 1))
    cross = np.array(cross)
    scatter = (cross - cross.mean(0)).T @ (cross - cross.mean(0))
    vals, vecs = np.linalg.eigh(scatter)
    if not vals[-1] > 0:
        return np.eye(data.p)[0]
    return canonical_sign(vecs[:, -1])


def _starts(data: TrialData, opts: SearchOptions):
    rng = np.random.default_rng(np.random.SeedSequence([opts.seed, 0x5EA]))
    starts = []
    if opts.warm_start:
        starts.append(changescore_direction(data))
    for _ in range(opts.n_restarts):
        v = rng.standard_normal(data.p)
        starts.append(v / np.linalg.norm(v))
    return starts


_FAILED = 1e300  # stand-in for a failed evaluation inside the simplex


def _nelder_mead(objective, x0, opts: SearchOptions):
    p = x0.size
    simplex = np.vstack([x0, x0 + opts.simplex_init_scale * np.eye(p)])
    def neg(a):
        val = objective(a)
        return -val if np.isfinite(val) else _FAILED

    res = optimize.minimize(
        neg, x0, method="Nelder-Mead",
        options={"initial_simplex": simplex, "maxfev": opts.max_evals,
                 "fatol": opts.purity_tol, "xatol": 1e-4, "adaptive": False})
    return res.x, (-res.fun if res.fun < _FAILED else -np.inf)


def estimate_alpha(data: TrialData, spec: BasisSpec = BasisSpec(),
                   search_opts: SearchOptions = SearchOptions(),
                   lmm_opts: LmmFitOptions = LmmFitOptions()) -> FittedModel:
    """Index vector maximizing the estimated purity, with both arms refit at it."""
    return run_search(data, spec, search_opts, lmm_opts)[0]


def run_search(data: TrialData, spec: BasisSpec = BasisSpec(),
               search_opts: SearchOptions = SearchOptions(),
               lmm_opts: LmmFitOptions = LmmFitOptions()):
    """Like :func:`estimate_alpha` but also returns ``(alpha, purity)`` for every start."""
    starts = _starts(data, search_opts) if data.p > 1 else []
    objective = PurityObjective(data, spec, lmm_opts)
    if data.p == 1:
        candidates = [np.ones(1)]
    else:
        candidates = []
        for x0 in starts:
            x, val = _nelder_mead(objective, x0, search_opts)
            if np.isfinite(val) and np.linalg.norm(x) > 0:
                candidates.append(canonical_sign(unit_vector(x)))
    best = None
    failures = []
    restarts = []
    for alpha in candidates:
        try:
            a, f1, f2, q = objective.fit(alpha)
        except (FitError, InvalidDistributionError, np.linalg.LinAlgError) as exc:
            failures.append(str(exc))
            continue
        restarts.append((a, q))
        if best is None or q > best[3]:
            best = (a, f1, f2, q)
    if best is None:
        raise SearchError(f"all starts failed ({len(failures)} failures): {failures[:3]}")
    alpha, f1, f2, q = best
    log.debug("estimate_alpha: %d objective evaluations", objective.n_evals)
    model = FittedModel(alpha, (f1.params, f2.params), objective.moments,
                        f1.loglik + f2.loglik, q, spec)
    return model, restarts
