"""Time bases, design matrices and the domain types shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BasisSpec:
    """Polynomial basis g(t) = (1, t, ..., t^degree)."""

    degree: int = 2
    kind: str = "polynomial"

    def __post_init__(self):
        if self.kind != "polynomial":
            raise ValueError(f"unsupported basis kind {self.kind!r}")
        if int(self.degree) < 1:
            raise ValueError("basis degree must be >= 1")

    @property
    def q(self) -> int:
        return self.degree + 1


def eval_basis(t: float, spec: BasisSpec) -> np.ndarray:
    return float(t) ** np.arange(spec.q, dtype=float)


def design_matrix(times, spec: BasisSpec) -> np.ndarray:
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0:
        raise ValueError("degenerate subject: no observation times")
    return times[:, None] ** np.arange(spec.q, dtype=float)[None, :]


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    group: int
    times: np.ndarray
    outcomes: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        # owned contiguous copies: strided views change BLAS rounding
        t = np.array(self.times, dtype=float).reshape(-1)
        y = np.array(self.outcomes, dtype=float).reshape(-1)
        x = np.array(self.covariates, dtype=float).reshape(-1)
        if self.group not in (1, 2):
            raise ValueError(f"subject {self.id}: group must be 1 or 2, got {self.group}")
        if t.size == 0 or t.size != y.size:
            raise ValueError(f"subject {self.id}: times and outcomes must be nonempty and equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"subject {self.id}: times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError(f"subject {self.id}: non-finite entries")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "covariates", x)

    @property
    def n_obs(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class TrialData:
    subjects: tuple
    p: int
    design_times: np.ndarray

    def __post_init__(self):
        subjects = tuple(self.subjects)
        grid = np.asarray(self.design_times, dtype=float).reshape(-1)
        object.__setattr__(self, "subjects", subjects)
        object.__setattr__(self, "design_times", grid)
        groups = {s.group for s in subjects}
        if groups != {1, 2}:
            raise ValueError("trial data must contain both group labels 1 and 2")
        for s in subjects:
            if s.covariates.size != self.p:
                raise ValueError(f"subject {s.id}: expected {self.p} covariates, got {s.covariates.size}")
            if not np.all(np.isin(s.times, grid)):
                raise ValueError(f"subject {s.id}: times not on the design grid")

    def group(self, k: int) -> list:
        return [s for s in self.subjects if s.group == k]

    @property
    def covariates(self) -> np.ndarray:
        return np.array([s.covariates for s in self.subjects], dtype=float).reshape(-1, self.p)

    @property
    def groups(self) -> np.ndarray:
        return np.array([s.group for s in self.subjects], dtype=int)

    def subset(self, index) -> "TrialData":
        return TrialData(tuple(self.subjects[i] for i in index), self.p, self.design_times)


@dataclass(frozen=True)
class GroupParams:
    """Mixed-model parameters of one arm: fixed effects, index coefficients,
    random-effect covariance and residual variance."""

    beta: np.ndarray
    gamma: np.ndarray
    d: np.ndarray
    sigma2: float

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        d = np.asarray(self.d, dtype=float)
        q = beta.size
        if gamma.size != q or d.shape != (q, q):
            raise ValueError("inconsistent GroupParams dimensions")
        if np.abs(d - d.T).max() > 1e-12 * max(1.0, np.abs(d).max()):
            raise ValueError("random-effect covariance must be symmetric")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "d", 0.5 * (d + d.T))
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def q(self) -> int:
        return self.beta.size

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "gamma": self.gamma.tolist(),
                "d": self.d.tolist(), "sigma2": self.sigma2}

    @classmethod
    def from_dict(cls, obj: dict) -> "GroupParams":
        return cls(np.array(obj["beta"]), np.array(obj["gamma"]), np.array(obj["d"]), obj["sigma2"])


@dataclass(frozen=True)
class CovariateMoments:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=float).reshape(mu.size, mu.size)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


def canonical_sign(alpha) -> np.ndarray:
    """Flip ``alpha`` so that its first nonzero component is positive."""
    alpha = np.asarray(alpha, dtype=float)
    nz = np.flatnonzero(alpha)
    if nz.size and alpha[nz[0]] < 0:
        return -alpha
    return alpha


@dataclass(frozen=True)
class FittedModel:
    alpha: np.ndarray
    params: tuple  # (GroupParams for arm 1, GroupParams for arm 2)
    moments: CovariateMoments
    loglik: float
    purity: float
    spec: BasisSpec = field(default_factory=BasisSpec)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        if abs(np.linalg.norm(alpha) - 1.0) > 1e-10:
            raise ValueError("alpha must have unit norm")
        if not np.array_equal(canonical_sign(alpha), alpha):
            raise ValueError("alpha must have its first nonzero component positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "params", tuple(self.params))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "groups": {"1": self.params[0].to_dict(), "2": self.params[1].to_dict()},
            "moments": {"mu": self.moments.mu.tolist(), "sigma": self.moments.sigma.tolist()},
            "loglik": self.loglik,
            "purity": self.purity,
            "basis": {"kind": self.spec.kind, "degree": self.spec.degree},
        }


def mean_trajectory(params: GroupParams, w: float, t: float, spec: BasisSpec) -> float:
    """Population trajectory at time ``t`` for biosignature value ``w``."""
    return float(eval_basis(t, spec) @ (params.beta + params.gamma * w))
