"""Synthetic two-arm trials with quadratic trajectories, missingness, and the scenario grid.

Random numbers come from hierarchical streams keyed by
``(scenario seed, replication, purpose)`` so that adding a method or changing
the test-set size never perturbs the training data.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .evaluation import pcd
from .lmm import LmmFitOptions
from .rules import FixedAlphaBuilder, LsKldBuilder, changescore_builder, true_rule
from .search import SearchOptions
from .trajectory import (BasisSpec, CovariateMoments, GroupParams, SubjectRecord, TrialData,
                         design_matrix)

log = logging.getLogger(__name__)

DESIGN_TIMES = np.arange(8.0)
BETA1 = np.array([20.0, 3.0, -0.5])
BETA2 = np.array([20.0, 2.3, -0.4])
D1 = np.array([[0.5, -0.1, -0.01],
               [-0.1, 0.5, -0.01],
               [-0.01, -0.01, 0.01]])
D2 = np.array([[0.4, -0.12, -0.01],
               [-0.12, 0.5, -0.01],
               [-0.01, -0.01, 0.01]])
SIGMA2 = 1.0
MCAR_RATE = 0.4
DROPOUT_RATE = 0.5
N_ALWAYS_OBSERVED = 2  # weeks 0 and 1 are never deleted

MISSINGNESS = ("none", "mcar", "dropout")

# stream purposes
_DATA, _MISSING, _TEST, _SEARCH = 1, 2, 3, 4


def _rng(seed, rep, purpose):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(rep), purpose]))


def covariate_mean(p: int) -> np.ndarray:
    """(-p, -(p-1), ..., 2, 1): magnitudes p..1 with the first half negative.

    For even p this is orthogonal to (1, ..., p), so the true biosignature has
    mean zero.
    """
    mu = np.arange(p, 0, -1, dtype=float)
    mu[: p // 2] *= -1
    return mu


def default_truth(theta_deg: float, p: int):
    """True arm parameters, true index vector and covariate moments for one scenario."""
    th = np.deg2rad(theta_deg)
    g1 = GroupParams(BETA1, [0.0, np.cos(th), np.sin(th)], D1, SIGMA2)
    g2 = GroupParams(BETA2, [0.0, np.cos(th), -np.sin(th)], D2, SIGMA2)
    alpha = np.arange(1, p + 1, dtype=float)
    alpha /= np.linalg.norm(alpha)
    idx = np.arange(p)
    sigma = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    return (g1, g2), alpha, CovariateMoments(covariate_mean(p), sigma)


@dataclass(frozen=True)
class Scenario:
    theta_deg: float
    p: int
    missingness: str = "none"
    n_train_per_group: int = 100
    n_test: int = 1000
    n_reps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.theta_deg < 0 or self.p < 1:
            raise ValueError("theta_deg must be >= 0 and p >= 1")
        if min(self.n_train_per_group, self.n_test, self.n_reps) < 1:
            raise ValueError("sample sizes and replication count must be >= 1")
        if self.missingness not in MISSINGNESS:
            raise ValueError(f"unknown missingness mode {self.missingness!r}")


@dataclass(frozen=True)
class TruthBundle:
    params: tuple
    alpha: np.ndarray
    moments: CovariateMoments
    b1: np.ndarray   # (n, q) random effects under arm 1
    b2: np.ndarray   # (n, q) random effects under arm 2


def _draw_subjects(rng, n, truth, alpha, moments):
    x = rng.multivariate_normal(moments.mu, moments.sigma, size=n, method="cholesky")
    q = truth[0].q
    b1 = rng.multivariate_normal(np.zeros(q), truth[0].d, size=n, method="cholesky")
    b2 = rng.multivariate_normal(np.zeros(q), truth[1].d, size=n, method="cholesky")
    return x, b1, b2


def gen_dataset(scn: Scenario, rep_index: int, spec: BasisSpec = BasisSpec()):
    """Training trial (before missingness) plus the truth needed by the oracle rule."""
    truth, alpha, moments = default_truth(scn.theta_deg, scn.p)
    rng = _rng(scn.seed, rep_index, _DATA)
    n = 2 * scn.n_train_per_group
    x, b1, b2 = _draw_subjects(rng, n, truth, alpha, moments)
    arm = np.repeat([1, 2], scn.n_train_per_group)
    G = design_matrix(DESIGN_TIMES, spec)
    w = x @ alpha
    eps = rng.standard_normal((n, DESIGN_TIMES.size))
    subjects = []
    for i in range(n):
        g = truth[arm[i] - 1]
        b = b1[i] if arm[i] == 1 else b2[i]
        y = G @ (g.beta + b + g.gamma * w[i]) + np.sqrt(g.sigma2) * eps[i]
        subjects.append(SubjectRecord(f"s{i + 1:04d}", int(arm[i]), DESIGN_TIMES, y, x[i]))
    data = TrialData(tuple(subjects), scn.p, DESIGN_TIMES)
    return data, TruthBundle(truth, alpha, moments, b1, b2)


def gen_test_set(scn: Scenario, rep_index: int):
    """Covariates and both arms' random effects for ``n_test`` fresh subjects."""
    truth, alpha, moments = default_truth(scn.theta_deg, scn.p)
    rng = _rng(scn.seed, rep_index, _TEST)
    x, b1, b2 = _draw_subjects(rng, scn.n_test, truth, alpha, moments)
    return x, TruthBundle(truth, alpha, moments, b1, b2)


def apply_missingness(data: TrialData, mode: str, seed) -> TrialData:
    """Delete visits: MCAR at rate 0.4 after week 1, or dropout after week 1 with probability 0.5."""
    if mode not in MISSINGNESS:
        raise ValueError(f"unknown missingness mode {mode!r}")
    if mode == "none":
        return data
    rng = np.random.default_rng(seed)
    late = data.design_times[N_ALWAYS_OBSERVED:]
    out = []
    for s in data.subjects:
        is_late = np.isin(s.times, late)
        if mode == "mcar":
            drop = is_late & (rng.random(s.n_obs) < MCAR_RATE)
        else:
            drop = is_late & (rng.random() < DROPOUT_RATE)
        keep = ~drop
        out.append(SubjectRecord(s.id, s.group, s.times[keep], s.outcomes[keep], s.covariates))
    return TrialData(tuple(out), data.p, data.design_times)


def training_data(scn: Scenario, rep_index: int, spec: BasisSpec = BasisSpec()):
    data, truth = gen_dataset(scn, rep_index, spec)
    seed = np.random.SeedSequence([scn.seed, rep_index, _MISSING])
    return apply_missingness(data, scn.missingness, seed), truth


# --- scenario grid -----------------------------------------------------------

@dataclass(frozen=True)
class ScenarioResult:
    scenario: Scenario
    method: str
    mean_pcd: float
    sd_pcd: float
    n_ok: int
    n_fail: int
    pcds: tuple = ()

    def row(self) -> dict:
        out = asdict(self.scenario)
        out.update(method=self.method, mean_pcd=self.mean_pcd, sd_pcd=self.sd_pcd,
                   n_ok=self.n_ok, n_fail=self.n_fail)
        return out


ACTUAL_ALPHA = "actual-alpha"

# Search budget for the grid: the warm start plus one random restart, each
# capped at 400 objective evaluations, keeps the desk-scale grid on one core
# within its time limit.  Single fits use the fuller SearchOptions() defaults.
DESK_SEARCH = SearchOptions(n_restarts=1, max_evals=400)


def default_methods(spec: BasisSpec = BasisSpec(), search_opts: SearchOptions | None = None,
                    lmm_opts: LmmFitOptions = LmmFitOptions()) -> dict:
    search_opts = search_opts or DESK_SEARCH
    return {"ls-kld": LsKldBuilder(spec, search_opts, lmm_opts),
            "changescore": changescore_builder}


def run_replication(scn: Scenario, rep_index: int, methods: dict, spec: BasisSpec = BasisSpec(),
                    lmm_opts: LmmFitOptions = LmmFitOptions()) -> dict:
    """PCD of every method (plus the true-alpha reference) on one replication; nan marks a failure."""
    data, truth = training_data(scn, rep_index, spec)
    x_test, test_truth = gen_test_set(scn, rep_index)
    t0, t1 = DESIGN_TIMES[0], DESIGN_TIMES[-1]
    labels = true_rule(test_truth.params, test_truth.b1, test_truth.b2, x_test,
                       test_truth.alpha, spec, t0, t1)
    builders = dict(methods)
    builders[ACTUAL_ALPHA] = FixedAlphaBuilder(tuple(truth.alpha), spec, lmm_opts)
    out = {}
    for name, builder in builders.items():
        if hasattr(builder, "with_seed"):
            builder = builder.with_seed(
                int(np.random.SeedSequence([scn.seed, rep_index, _SEARCH]).generate_state(1)[0]))
        try:
            rule = builder(data)
            out[name] = pcd(rule.assign(x_test), labels)
        except Exception as exc:  # noqa: BLE001 - one failed replication must not stop the grid
            log.warning("scenario %s rep %d method %s failed: %s", scn, rep_index, name, exc)
            out[name] = np.nan
    return out


def _run_task(args):
    return run_replication(*args)


def n_workers() -> int:
    env = os.environ.get("TRAJKLD_THREADS")
    if env:
        return max(1, int(env))
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def run_grid(scenarios, methods: dict | None = None, spec: BasisSpec = BasisSpec(),
             lmm_opts: LmmFitOptions = LmmFitOptions(), workers: int | None = None):
    """Train every method on every replication of every scenario and summarize PCD."""
    scenarios = list(scenarios)
    methods = default_methods(spec, lmm_opts=lmm_opts) if methods is None else methods
    tasks = [(scn, rep, methods, spec, lmm_opts) for scn in scenarios for rep in range(scn.n_reps)]
    workers = n_workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            per_rep = list(pool.map(_run_task, tasks, chunksize=4))
    else:
        per_rep = [_run_task(t) for t in tasks]
    results = []
    pos = 0
    names = list(methods) + [ACTUAL_ALPHA]
    for scn in scenarios:
        reps = per_rep[pos: pos + scn.n_reps]
        pos += scn.n_reps
        for name in names:
            vals = np.array([r[name] for r in reps], dtype=float)
            ok = vals[np.isfinite(vals)]
            results.append(ScenarioResult(
                scn, name,
                float(ok.mean()) if ok.size else np.nan,
                float(ok.std(ddof=1)) if ok.size > 1 else np.nan,
                int(ok.size), int(vals.size - ok.size), tuple(vals.tolist())))
    return results


def desk_grid(n_reps: int = 50, seed: int = 2024, full: bool = False, **kw):
    """Scenario list: the reduced desk-scale grid, or the full 4 x 4 x 3 grid."""
    thetas = (0.0, 1.0, 2.0, 5.0) if full else (0.0, 1.0, 5.0)
    ps = (2, 10, 20, 30) if full else (2, 10)
    n_reps = 200 if full else n_reps
    out = []
    for miss in MISSINGNESS:
        for p in ps:
            for th in thetas:
                out.append(Scenario(th, p, miss, n_reps=n_reps, seed=seed + len(out), **kw))
    return out
