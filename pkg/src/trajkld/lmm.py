"""Maximum-likelihood fit of one arm's mixed model for a fixed index vector.

Model for subject i: ``y_i = G(t_i) (beta + b_i + gamma * (alpha' x_i)) + e_i``
with ``b_i ~ N(0, D)`` and ``e_i ~ N(0, s2 I)``.  Missing visits are simply
absent rows of ``G(t_i)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from . import _lmm_kernels as kern
from .trajectory import BasisSpec, GroupParams, design_matrix

log = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    pass


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class LmmFitOptions:
    max_iter: int = 500
    loglik_tol: float = 1e-8
    variance_floor: float = 1e-6
    optimizer: str = "direct"  # "em" or "direct" (Fisher scoring with EM fallback)

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not (self.loglik_tol > 0 and self.variance_floor > 0):
            raise ValueError("tolerances must be positive")
        if self.optimizer not in ("em", "direct"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class GroupFit:
    params: GroupParams
    loglik: float
    n_iter: int
    converged: bool
    trace: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class GroupStats:
    """Sufficient statistics of one arm, pooled over subjects sharing a visit pattern.

    Only ``x`` and the pattern membership ``pattern`` are kept per subject;
    the alpha-dependent sums are formed by :meth:`weighted`.  Outcomes are
    stored minus ``shift`` (their pooled mean) so the raw second moments stay
    small; the intercept absorbs the shift and the likelihood is unchanged.
    """

    S: np.ndarray        # (k, q, q) G'G per visit pattern
    m: np.ndarray        # (k,) observations per subject in the pattern
    cnt: np.ndarray      # (k,) subjects in the pattern
    sr: np.ndarray       # (k, q) sum of G'y
    srr: np.ndarray      # (k, q, q) sum of (G'y)(G'y)'
    syy: np.ndarray      # (k,) sum of y'y
    r: np.ndarray        # (n, q) per-subject G'y
    pattern: np.ndarray  # (n, k) one-hot pattern membership
    x: np.ndarray        # (n, p) covariates
    shift: float = 0.0

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def q(self) -> int:
        return self.r.shape[1]

    def weighted(self, w):
        """Per-pattern sum w, sum w^2 and sum w G'y."""
        H = self.pattern.T
        return H @ w, H @ (w * w), H @ (w[:, None] * self.r)

    def arrays(self, w):
        return (self.S, self.m, self.cnt, self.sr, self.srr, self.syy) + self.weighted(w)


def group_stats(subjects, spec: BasisSpec) -> GroupStats:
    subjects = list(subjects)
    q = spec.q
    n = len(subjects)
    keys = {}
    member = np.empty(n, dtype=int)
    S = []
    m = []
    r = np.empty((n, q))
    yy = np.empty(n)
    shift = float(np.mean(np.concatenate([s.outcomes for s in subjects]))) if n else 0.0
    for i, s in enumerate(subjects):
        key = s.times.tobytes()
        G = design_matrix(s.times, spec)
        if key not in keys:
            keys[key] = len(S)
            S.append(G.T @ G)
            m.append(s.n_obs)
        member[i] = keys[key]
        y = s.outcomes - shift
        r[i] = G.T @ y
        yy[i] = y @ y
    k = len(S)
    H = np.zeros((n, k))
    H[np.arange(n), member] = 1.0
    x = np.array([s.covariates for s in subjects], dtype=float).reshape(n, -1)
    return GroupStats(np.array(S).reshape(k, q, q), np.array(m, dtype=float), H.sum(axis=0),
                      H.T @ r, np.einsum("ni,nj,nk->kij", r, r, H), H.T @ yy, r, H, x, shift)


def subject_design(s, alpha, spec: BasisSpec):
    """Fixed design ``[G | G w]`` and random design ``G`` for one subject."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size != s.covariates.size:
        raise ValueError("covariate length does not match alpha")
    G = design_matrix(s.times, spec)
    w = float(s.covariates @ alpha)
    return np.hstack([G, G * w]), G


def loglik_from_stats(params: GroupParams, st: GroupStats, alpha) -> float:
    if params.q != st.q:
        raise ValueError("parameter dimension does not match basis")
    try:
        L = np.linalg.cholesky(params.d)
    except np.linalg.LinAlgError as exc:
        raise ValueError("random-effect covariance is not positive definite") from exc
    w = st.x @ np.asarray(alpha, dtype=float)
    phi = np.concatenate([params.beta, params.gamma])
    phi[0] -= st.shift
    ll = kern.loglik_at(*st.arrays(w), phi, L, params.sigma2)
    if not np.isfinite(ll):
        raise ValueError("marginal covariance is not positive definite")
    return float(ll)


def marginal_loglik(params: GroupParams, subjects, alpha, spec: BasisSpec) -> float:
    return loglik_from_stats(params, group_stats(subjects, spec), alpha)


def fit_raw(st: GroupStats, w, opts: LmmFitOptions = LmmFitOptions()):
    """Core of :func:`fit_group_stats` on biosignature values ``w``.

    Returns ``(phi, L, s2, trace, converged)`` with ``phi = (beta, gamma)`` and
    ``D = L L'``, skipping the construction of result objects.
    """
    q = st.q
    if st.n < 2 * q + 2:
        raise InsufficientDataError(f"need at least {2 * q + 2} subjects, got {st.n}")
    if st.m.max() < q:
        raise InsufficientDataError(f"no subject has at least {q} observations")
    arrs = st.arrays(w)
    L0 = np.sqrt(0.1) * np.eye(q)
    s20 = max(kern.ols_resid_var(*arrs), opts.variance_floor)
    method = kern.EM if opts.optimizer == "em" else kern.SCORING
    phi, L, s2, trace, converged = kern.fit(*arrs, L0, s20, opts.max_iter, opts.loglik_tol,
                                            opts.variance_floor, method)
    if not (trace.size and np.all(np.isfinite(phi)) and np.isfinite(trace[-1])):
        raise FitError("mixed-model fit did not reach a finite log-likelihood")
    phi[0] += st.shift
    return phi, L, s2, trace, converged


def covariance_from_factor(L):
    d = L @ L.T
    return 0.5 * (d + d.T)


def fit_group_stats(st: GroupStats, alpha, opts: LmmFitOptions = LmmFitOptions()) -> GroupFit:
    """ML fit of one arm from precomputed sufficient statistics.

    D starts at 0.1 I and sigma2 at the pooled least-squares residual variance.
    """
    w = st.x @ np.asarray(alpha, dtype=float)
    phi, L, s2, trace, converged = fit_raw(st, w, opts)
    q = st.q
    params = GroupParams(phi[:q], phi[q:], covariance_from_factor(L), s2)
    return GroupFit(params, float(trace[-1]), trace.size - 1, bool(converged), trace)


def fit_group(subjects, alpha, spec: BasisSpec, opts: LmmFitOptions = LmmFitOptions()) -> GroupFit:
    return fit_group_stats(group_stats(subjects, spec), alpha, opts)
