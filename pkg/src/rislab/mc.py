"""Monte-Carlo experiment engine over user drops and channel replicates.

Seeding is counter based: drop ``d`` places its users with
``SeedSequence(seed, spawn_key=(0, d))`` and replicate ``r`` of that drop
draws its channels with ``SeedSequence(seed, spawn_key=(1, d, r))``. Results
are therefore independent of batching, thread count and execution order.
Drops run in a thread pool; per-drop results are reduced in drop order.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.random import SeedSequence, default_rng

from . import phase, snr
from .channel import ScenarioConfig, build_scenario, sample_channels
from .errors import DomainError, RisLabError
from .specfun import SeriesControl

TARGET_DB = 5.0
CHUNK = 256


@dataclass(frozen=True)
class ExperimentConfig:
    """What to simulate and how much of it."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    method: str = "sd_los"
    layout: str = "C"
    n_drops: int = 100
    n_replicates: int = 1000
    master_seed: int = 0
    cisd_tol: float = 1e-4
    cisd_max_iters: int = 50

    def __post_init__(self):
        problems = []
        if self.method not in phase.METHODS:
            problems.append(f"method must be one of {phase.METHODS}")
        if self.layout not in ("A", "B", "C"):
            problems.append("layout must be A, B or C")
        if self.n_drops < 1 or self.n_replicates < 1:
            problems.append("n_drops and n_replicates must be >= 1")
        if not self.cisd_tol > 0 or self.cisd_max_iters < 1:
            problems.append("cisd tol must be > 0 and max_iters >= 1")
        if self.master_seed < 0:
            problems.append("master_seed must be >= 0")
        if problems:
            raise DomainError("; ".join(problems))


@dataclass(frozen=True)
class ExperimentResult:
    """Aggregates of one experiment. Standard errors use per-drop means."""

    method: str
    n_drops: int
    n_replicates: int
    mean_snr_user: np.ndarray
    mean_snr_user_se: np.ndarray
    mean_snr: float
    mean_snr_se: float
    mean_terms: np.ndarray
    mean_terms_se: np.ndarray
    mean_sum_rate: float
    mean_sum_rate_se: float
    mean_iterations: float
    mean_iterations_se: float
    excluded: int
    wall_seconds: float = 0.0

    @property
    def mean_snr_db(self):
        return to_db(self.mean_snr)

    @property
    def mean_snr_db_se(self):
        return 10.0 / math.log(10.0) * self.mean_snr_se / self.mean_snr

    @property
    def mean_snr_user_db(self):
        return to_db(self.mean_snr_user)

    @property
    def failure_rate(self):
        return self.excluded / (self.n_drops * self.n_replicates)


@dataclass(frozen=True)
class _DropStats:
    snr_user: np.ndarray      # (K,) mean scaled SNR per user
    terms: np.ndarray         # (K, 6) mean raw terms
    terms_var: np.ndarray     # (K, 6) replicate variance of the raw terms
    iterations: float
    n_valid: int
    excluded: int


def to_db(x):
    return 10.0 * np.log10(x)


def worker_count(requested=None):
    """Threads to use: ``requested``, else ``RIS_LAB_THREADS`` (0 = all cores)."""
    n = requested
    if n is None:
        env = os.environ.get("RIS_LAB_THREADS", "0").strip() or "0"
        try:
            n = int(env)
        except ValueError as exc:
            raise DomainError(f"RIS_LAB_THREADS must be an integer, got {env!r}") from exc
    if n < 0:
        raise DomainError("thread count must be >= 0")
    return n or (os.cpu_count() or 1)


def drop_rng(seed, d):
    return default_rng(SeedSequence(seed, spawn_key=(0, d)))


def replicate_rngs(seed, d, start, stop):
    return [default_rng(SeedSequence(seed, spawn_key=(1, d, r))) for r in range(start, stop)]


def drop_scenario(cfg, d):
    return build_scenario(cfg.scenario, layout=cfg.layout, rng=drop_rng(cfg.master_seed, d))


def _simulate_drop(cfg, methods, d):
    """All requested methods on the same channel draws of drop ``d``."""
    try:
        return _simulate_drop_inner(cfg, methods, d)
    except RisLabError as exc:
        if not str(exc).startswith("drop "):
            exc.args = (f"drop {d}: {exc}",) + exc.args[1:]
        raise


def _simulate_drop_inner(cfg, methods, d):
    s = drop_scenario(cfg, d)
    R = cfg.n_replicates
    terms = {m: np.empty((R, s.K, 6)) for m in methods}
    iters = {m: np.empty(R) for m in methods}
    bad = {m: np.zeros(R, dtype=bool) for m in methods}
    for c0 in range(0, R, CHUNK):
        c1 = min(R, c0 + CHUNK)
        rngs = replicate_rngs(cfg.master_seed, d, c0, c1)
        ch = sample_channels(s, rngs)
        for m in methods:
            try:
                sel = phase.select_batch(m, s, ch, rngs=rngs, tol=cfg.cisd_tol,
                                         max_iters=cfg.cisd_max_iters)
            except RisLabError as exc:
                exc.args = (f"drop {d}, replicates {c0}..{c1 - 1}: {exc}",) + exc.args[1:]
                raise
            terms[m][c0:c1] = snr.batch_terms(s, ch, sel.phi)
            iters[m][c0:c1] = sel.iterations
            bad[m][c0:c1] = sel.degenerate
    out = {}
    for m in methods:
        ok = ~bad[m]
        t = terms[m][ok]
        n = int(ok.sum())
        if n == 0:
            raise DomainError(f"every replicate of drop {d} was degenerate")
        tot = snr.totals_from_terms(t, s.es_over_sigma2)
        out[m] = _DropStats(tot.mean(axis=0), t.mean(axis=0),
                            t.var(axis=0, ddof=1) if n > 1 else np.zeros_like(t[0]),
                            float(iters[m][ok].mean()), n, R - n)
    return out


def _map_drops(fn, n_drops, threads):
    n = min(worker_count(threads), n_drops)
    if n == 1:
        return [fn(d) for d in range(n_drops)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, range(n_drops)))


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    m = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(len(x)) if len(x) > 1 else np.full_like(m, np.nan)
    return m, se


def _aggregate(cfg, method, drops, wall):
    snr_user = np.stack([d.snr_user for d in drops])
    K = snr_user.shape[1]
    u_m, u_se = _mean_se(snr_user)
    a_m, a_se = _mean_se(snr_user.mean(axis=1))
    t_m, t_se = _mean_se(np.stack([d.terms for d in drops]))
    if len(drops) == 1:
        t_se = np.sqrt(drops[0].terms_var / drops[0].n_valid)
    rate = np.log2(1.0 + snr_user).sum(axis=1) / K
    r_m, r_se = _mean_se(rate)
    i_m, i_se = _mean_se([d.iterations for d in drops])
    return ExperimentResult(
        method=method, n_drops=cfg.n_drops, n_replicates=cfg.n_replicates,
        mean_snr_user=u_m, mean_snr_user_se=u_se, mean_snr=float(a_m), mean_snr_se=float(a_se),
        mean_terms=t_m, mean_terms_se=t_se, mean_sum_rate=float(r_m),
        mean_sum_rate_se=float(r_se), mean_iterations=float(i_m),
        mean_iterations_se=float(i_se), excluded=int(sum(d.excluded for d in drops)),
        wall_seconds=wall)


def run_methods(cfg, methods, threads=None):
    """Run several phase methods on shared channel draws.

    Sharing draws makes differences between methods much less noisy than
    independent runs. Returns a dict ``method -> ExperimentResult``.
    """
    methods = list(dict.fromkeys(methods))
    for m in methods:
        if m not in phase.METHODS:
            raise DomainError(f"unknown method {m!r}")
    t0 = time.perf_counter()
    per_drop = _map_drops(lambda d: _simulate_drop(cfg, methods, d), cfg.n_drops, threads)
    wall = time.perf_counter() - t0
    return {m: _aggregate(cfg, m, [p[m] for p in per_drop], wall) for m in methods}


def run_experiment(cfg, threads=None):
    """Simulate ``cfg.method`` over all drops and replicates."""
    return run_methods(cfg, [cfg.method], threads)[cfg.method]


# ---------------------------------------------------------------------------
# Analytic side
# ---------------------------------------------------------------------------

def analytic_drop_terms(cfg, ctl=None, threads=None):
    """Closed-form raw terms per drop, shape (n_drops, K, 6), at the config's scale."""
    ctl = ctl or SeriesControl()
    return np.stack(_map_drops(lambda d: snr.mean_terms_all(drop_scenario(cfg, d), ctl),
                               cfg.n_drops, threads))


def es_for_target(mean_at_unit, target_db=TARGET_DB):
    """``Es/sigma^2`` that maps a mean SNR at unit scale onto ``target_db``."""
    if not mean_at_unit > 0:
        raise DomainError("mean SNR at unit scale must be positive to calibrate")
    return 10.0 ** (target_db / 10.0) / mean_at_unit


def calibrate_es(reference, target_db=TARGET_DB, ctl=None, threads=None):
    """Linear ``Es/sigma^2`` giving a mean per-user SD SNR of ``target_db``.

    The mean is the closed-form SD SNR averaged over the reference drops and
    users. Since it is linear in ``Es/sigma^2`` one division suffices.
    """
    unit = replace(reference, scenario=replace(reference.scenario, es_over_sigma2=1.0))
    terms = analytic_drop_terms(unit, ctl, threads)
    return es_for_target(float(np.mean(snr.totals_from_terms(terms, 1.0))), target_db)


ANCHORS = {
    "general": dict(N=128, M=16, d_r=0.1, d_b=0.5, kappa_d=1.0, kappa_rb=1.0, kappa_ur=1.0),
    "general_dr05": dict(N=128, M=16, d_r=0.5, d_b=0.5, kappa_d=1.0, kappa_rb=1.0, kappa_ur=1.0),
    "los_rb": dict(N=128, M=16, d_r=0.1, d_b=0.5, kappa_d=1.0, kappa_rb=math.inf, kappa_ur=1.0),
}


def anchor_config(name, base, n_drops=None):
    """Reference experiment for calibration anchor ``name``.

    Array shapes, geometry, path-loss settings, layout, seed and ``K`` come
    from ``base``; the anchor fixes ``N, M``, spacings and K-factors.
    """
    if name not in ANCHORS:
        raise DomainError(f"unknown calibration anchor {name!r}; choose from {sorted(ANCHORS)}")
    sc = replace(base.scenario, m_x=None, n_x=None, partition=None, es_over_sigma2=1.0,
                 **ANCHORS[name])
    return replace(base, scenario=sc, method="sd_los",
                   n_drops=n_drops if n_drops is not None else base.n_drops)


@dataclass(frozen=True)
class TermComparison:
    """One analytic-vs-simulated term."""

    user: int
    term: str
    analytic: float
    simulated: float
    stderr: float

    @property
    def z(self):
        return (self.simulated - self.analytic) / self.stderr if self.stderr > 0 else (
            0.0 if self.simulated == self.analytic else math.inf)


def compare_analytic_vs_mc(cfg, ctl=None, threads=None):
    """Per-user, per-term analytic mean versus SD Monte-Carlo estimate.

    The analytic value is exact per drop, so the standard error of the
    drop-averaged difference comes from replicate noise only.

    Returns
    -------
    (list of TermComparison, ExperimentResult)
    """
    if cfg.method != "sd_los":
        raise DomainError("the closed form describes the sd_los design only")
    t0 = time.perf_counter()
    methods = ["sd_los"]
    per_drop = _map_drops(lambda d: _simulate_drop(cfg, methods, d)["sd_los"], cfg.n_drops, threads)
    res = _aggregate(cfg, "sd_los", per_drop, time.perf_counter() - t0)
    A = analytic_drop_terms(cfg, ctl, threads).mean(axis=0)
    D = len(per_drop)
    se = np.sqrt(sum(p.terms_var / p.n_valid for p in per_drop)) / D
    rows = []
    for k in range(A.shape[0]):
        for j, name in enumerate(snr.TERMS):
            rows.append(TermComparison(k, name, float(A[k, j]), float(res.mean_terms[k, j]),
                                       float(se[k, j])))
    return rows, res
