"""Gaussian Kullback-Leibler divergences and the purity of a biosignature.

The purity of a subject with biosignature value ``w`` is the symmetric KLD
between the two arms' trajectory-coefficient distributions
``N(beta_k + gamma_k * w, D_k)``.  It is a quadratic ``a1 + a2 w + a3 w^2``
in ``w``, so averaging over the covariate distribution only needs the first
two moments of ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .trajectory import CovariateMoments, GroupParams

MAX_CONDITION = 1e12


class InvalidDistributionError(ValueError):
    """Covariance matrix is not symmetric positive definite (or is too ill-conditioned)."""


def _cholesky(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2:
        s = np.atleast_2d(s)
    scale = np.abs(s).max()
    if s.shape[0] != s.shape[1] or not np.isfinite(scale):
        raise InvalidDistributionError("covariance must be a finite square matrix")
    if np.abs(s - s.T).max() > 1e-14 + 1e-10 * scale:
        raise InvalidDistributionError("covariance must be symmetric")
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise InvalidDistributionError("covariance is not positive definite") from exc
    diag = chol.diagonal()
    lo, hi = diag.min(), diag.max()
    if lo <= 0 or (hi / lo) ** 2 > MAX_CONDITION:
        raise InvalidDistributionError("covariance is numerically singular")
    return chol


def _inv_spd(s: np.ndarray) -> np.ndarray:
    linv = np.linalg.inv(_cholesky(s))
    return linv.T @ linv


def kld_gaussian(m1, s1, m2, s2):
    """KL(N(m1, s1) || N(m2, s2)).

    ``m1`` and ``m2`` may carry leading batch dimensions (broadcast against
    each other); the covariances are shared across the batch.
    """
    s1 = np.atleast_2d(np.asarray(s1, dtype=float))
    s2 = np.atleast_2d(np.asarray(s2, dtype=float))
    m1 = np.atleast_1d(np.asarray(m1, dtype=float))
    m2 = np.atleast_1d(np.asarray(m2, dtype=float))
    dim = s1.shape[0]
    if s2.shape != s1.shape or m1.shape[-1] != dim or m2.shape[-1] != dim:
        raise ValueError("dimension mismatch")
    c1 = _cholesky(s1)
    c2 = _cholesky(s2)
    a = linalg.solve_triangular(c2, c1, lower=True)
    trace = np.sum(a * a)
    logdet = 2.0 * (np.sum(np.log(np.diag(c2))) - np.sum(np.log(np.diag(c1))))
    diff = m2 - m1
    sol = linalg.solve_triangular(c2, diff.reshape(-1, dim).T, lower=True)
    maha = np.sum(sol * sol, axis=0).reshape(diff.shape[:-1])
    out = 0.5 * (trace + maha - dim + logdet)
    if np.ndim(out) == 0:
        return max(float(out), 0.0)
    return np.maximum(out, 0.0)


def sym_kld(m1, s1, m2, s2):
    return kld_gaussian(m1, s1, m2, s2) + kld_gaussian(m2, s2, m1, s1)


@dataclass(frozen=True)
class PurityCoeffs:
    a1: float
    a2: float
    a3: float


def purity_coeffs(g1: GroupParams, g2: GroupParams) -> PurityCoeffs:
    if g1.q != g2.q:
        raise ValueError("group parameter dimensions differ")
    return purity_terms(g1.beta - g2.beta, g1.gamma - g2.gamma, g1.d, g2.d)


def purity_terms(db, dg, d1, d2) -> PurityCoeffs:
    """Coefficients from the arm differences in beta and gamma and the two covariances."""
    q = d1.shape[0]
    d1inv = _inv_spd(d1)
    d2inv = _inv_spd(d2)
    dsum = d1inv + d2inv
    # constant is -q: the symmetric KLD of two q-dimensional normals
    a1 = -q + 0.5 * np.sum(d1inv * d2) + 0.5 * np.sum(d2inv * d1) + 0.5 * db @ dsum @ db
    a2 = dg @ dsum @ db
    a3 = 0.5 * dg @ dsum @ dg
    return PurityCoeffs(float(a1), float(a2), float(a3))


def subject_purity(c: PurityCoeffs, w):
    w = np.asarray(w, dtype=float)
    out = c.a1 + c.a2 * w + c.a3 * w * w
    return float(out) if out.ndim == 0 else out


def population_purity(c: PurityCoeffs, m: CovariateMoments, alpha) -> float:
    alpha = np.asarray(alpha, dtype=float)
    second = np.outer(m.mu, m.mu) + m.sigma
    return float(c.a1 + c.a2 * (m.mu @ alpha) + c.a3 * alpha @ second @ alpha)


def population_purity_grad(c: PurityCoeffs, m: CovariateMoments, alpha) -> np.ndarray:
    """Gradient of :func:`population_purity` in ``alpha`` with the coefficients held fixed."""
    alpha = np.asarray(alpha, dtype=float)
    return c.a2 * m.mu + 2.0 * c.a3 * (np.outer(m.mu, m.mu) + m.sigma) @ alpha


def mc_purity_oracle(g1: GroupParams, g2: GroupParams, m: CovariateMoments, alpha,
                     n_draws: int = 100_000, seed=None):
    """Monte-Carlo estimate of the population purity and its standard error.

    Draws biosignature values from their Gaussian working distribution and
    averages the symmetric KLD evaluated directly on the two conditional
    coefficient distributions (no use of :func:`purity_coeffs`).
    """
    if n_draws < 10_000:
        raise ValueError("n_draws must be at least 1e4")
    alpha = np.asarray(alpha, dtype=float)
    rng = np.random.default_rng(seed)
    mean = float(m.mu @ alpha)
    sd = float(np.sqrt(max(alpha @ m.sigma @ alpha, 0.0)))
    w = mean + sd * rng.standard_normal(n_draws)
    m1 = g1.beta[None, :] + w[:, None] * g1.gamma[None, :]
    m2 = g2.beta[None, :] + w[:, None] * g2.gamma[None, :]
    vals = sym_kld(m1, g1.d, m2, g2.d)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_draws))


def _random_spd(rng, q, ridge):
    a = rng.standard_normal((q, q))
    return a @ a.T / q + ridge * np.eye(q)


def random_purity_case(rng, q: int = 3, p: int = 3):
    """Random arm parameters, covariate moments and unit index vector."""
    g1 = GroupParams(rng.normal(0, 1, q), rng.normal(0, 1, q), _random_spd(rng, q, 0.2), 1.0)
    g2 = GroupParams(rng.normal(0, 1, q), rng.normal(0, 1, q), _random_spd(rng, q, 0.2), 1.0)
    moments = CovariateMoments(rng.normal(0, 1, p), _random_spd(rng, p, 0.1))
    alpha = rng.standard_normal(p)
    return g1, g2, moments, alpha / np.linalg.norm(alpha)


@dataclass(frozen=True)
class OracleReport:
    n_cases: int
    n_within: int      # closed form within ``n_se`` Monte-Carlo SEs
    max_z: float
    required: int

    @property
    def passed(self) -> bool:
        return self.n_within >= self.required


def purity_oracle_suite(seed: int = 0, n_cases: int = 50, n_draws: int = 100_000,
                        n_se: float = 3.0, required: int | None = None) -> OracleReport:
    """Compare the closed-form population purity with its Monte-Carlo estimate on random cases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0AC]))
    required = int(np.ceil(0.94 * n_cases)) if required is None else required
    zs = []
    for _ in range(n_cases):
        g1, g2, m, alpha = random_purity_case(rng, q=3, p=int(rng.integers(1, 6)))
        exact = population_purity(purity_coeffs(g1, g2), m, alpha)
        est, se = mc_purity_oracle(g1, g2, m, alpha, n_draws, seed=rng)
        zs.append(abs(exact - est) / se)
    zs = np.array(zs)
    return OracleReport(n_cases, int(np.sum(zs <= n_se)), float(zs.max()), required)
