"""Synthetic data generation, Monte Carlo design evaluation, and bootstrap.

Generation pipeline per dataset: draw N specimen values i.i.d. from the
individual biomarker distribution, allocate them disjointly to assays in
design order (pools take the arithmetic mean of their constituents), add
measurement error to every assay and pooling error to pooled assays, then
censor below the detection limit.

Reproducibility: every replication derives its generator from a stateless
mix of the base seed and the replication index (``SeedSequence``), so
results are bit-identical regardless of how work is distributed over
processes.  Bootstrap cells (one per alpha/llod) are seeded the same way at
cell granularity, with all fits inside a cell running in one kernel call.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import active_backend
from .design import DesignSpec, two_assay_design
from .estimate import ReplicatePairSet, fit_mle
from .exceptions import EstimationError, SimulationError
from .fisher import SweepResult, SweepRow
from .likelihood import AssayObservation, Dataset
from .models import NORMAL, ModelSpec

__all__ = [
    "SimConfig",
    "McResult",
    "rng_for",
    "generate_dataset",
    "monte_carlo_variance",
    "generate_replicate_pairs",
    "pool_of_pools",
    "bootstrap_design_eval",
]


def rng_for(base_seed: int, *stream) -> np.random.Generator:
    """Deterministic generator for a (base seed, stream indices) tuple."""
    if base_seed < 0:
        raise SimulationError("seeds must be nonnegative")
    seq = np.random.SeedSequence((int(base_seed),) + tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class SimConfig:
    """One Monte Carlo experiment: model, design, LLOD, replications, seed."""

    model: ModelSpec
    design: DesignSpec
    llod: float
    replications: int
    base_seed: int

    def __post_init__(self):
        if self.replications < 1:
            raise SimulationError("replications must be >= 1")


@dataclass
class McResult:
    """Empirical variance/bias of the MLEs over Monte Carlo replications."""

    param_names: tuple
    variances: dict
    biases: dict
    failure_count: int
    replications: int
    estimates: Optional[np.ndarray] = None  # (replications, n_params), NaN on failure


def _draw_individuals(model: ModelSpec, rng, size):
    if model.family == NORMAL:
        return rng.normal(model.mu_x, model.sigma_x, size)
    return rng.gamma(model.a, model.b, size)


def _draw_measurement(model: ModelSpec, rng, size):
    if model.family == NORMAL:
        return rng.normal(0.0, model.sigma_m, size) if model.sigma_m > 0 else np.zeros(size)
    return rng.laplace(0.0, model.c, size) if model.c > 0 else np.zeros(size)


def _draw_pooling(model: ModelSpec, rng, size):
    if model.family == NORMAL:
        return rng.normal(0.0, model.sigma_p, size) if model.sigma_p > 0 else np.zeros(size)
    return rng.laplace(0.0, model.d, size) if model.d > 0 else np.zeros(size)


def generate_dataset(model: ModelSpec, design: DesignSpec, llod: float, seed,
                     shared_pooling_error: bool = False) -> Dataset:
    """Simulate one dataset: specimens -> pools -> errors -> censoring.

    ``shared_pooling_error`` makes replicate measurements of one pooled
    assay share a single pooling-error draw (default: independent draws per
    replicate).  Deterministic given ``seed``.
    """
    rng = rng_for(seed) if np.isscalar(seed) else np.random.Generator(np.random.PCG64(seed))
    specimens = _draw_individuals(model, rng, design.N)
    observations = []
    cursor = 0
    for gi, grp in enumerate(design.groups):
        need = grp.assay_count * grp.pool_size
        vals = specimens[cursor:cursor + need]
        cursor += need
        if grp.pool_size > 1:
            assay_true = vals.reshape(grp.assay_count, grp.pool_size).mean(axis=1)
        else:
            assay_true = vals
        reps = grp.replicates
        if grp.gamma_flag:
            if shared_pooling_error:
                ep = np.repeat(_draw_pooling(model, rng, grp.assay_count)[:, None],
                               reps, axis=1)
            else:
                ep = _draw_pooling(model, rng, (grp.assay_count, reps))
        else:
            ep = np.zeros((grp.assay_count, reps))
        em = _draw_measurement(model, rng, (grp.assay_count, reps))
        z = assay_true[:, None] + ep + em
        for a in range(grp.assay_count):
            for r in range(reps):
                v = float(z[a, r])
                observations.append(AssayObservation(
                    gi, r + 1, None if v < llod else v))
    return Dataset(llod, design, tuple(observations), family=model.family)


def _mc_worker(args):
    cfg, fixed, fit_options, lo, hi, free = args
    out = []
    for i in range(lo, hi):
        data = generate_dataset(cfg.model, cfg.design, cfg.llod,
                                np.random.SeedSequence((cfg.base_seed, i)))
        try:
            fit = fit_mle(cfg.model.family, data, fixed=fixed,
                          compute_covariance=False, options=fit_options)
        except EstimationError:
            out.append((i, None))
            continue
        if fit.converged and math.isfinite(fit.loglik):
            out.append((i, tuple(fit.estimates[p] for p in free)))
        else:
            out.append((i, None))
    return out


def monte_carlo_variance(cfg: SimConfig, fixed: Optional[dict] = None,
                         threads: int = 1,
                         fit_options: Optional[dict] = None) -> McResult:
    """Empirical variance/bias of the MLEs over independent replications.

    Replication ``i`` is generated from ``SeedSequence((base_seed, i))`` and
    fitted with :func:`pooldesign.estimate.fit_mle`; non-converged fits count
    as failures and are excluded.  Raises when more than 20% of fits fail.
    """
    fixed = dict(fixed or {})
    free = tuple(p for p in cfg.model.param_names if p not in fixed)
    R = cfg.replications
    chunk = max(1, (R + max(threads, 1) * 4 - 1) // (max(threads, 1) * 4))
    jobs = [(cfg, fixed, fit_options, lo, min(lo + chunk, R), free)
            for lo in range(0, R, chunk)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_mc_worker, jobs))
    else:
        parts = [_mc_worker(j) for j in jobs]

    est = np.full((R, len(free)), np.nan)
    for part in parts:
        for i, values in part:
            if values is not None:
                est[i] = values
    ok = ~np.isnan(est[:, 0])
    failures = int(R - ok.sum())
    if failures > 0.2 * R:
        raise SimulationError(
            "%d of %d Monte Carlo fits failed (llod=%g, design alpha=%.3g); "
            "estimates are unreliable" % (failures, R, cfg.llod, cfg.design.alpha))
    good = est[ok]
    truth = cfg.model.params()
    variances = {p: float(np.var(good[:, j], ddof=1)) for j, p in enumerate(free)}
    biases = {p: float(np.mean(good[:, j]) - truth[p]) for j, p in enumerate(free)}
    return McResult(free, variances, biases, failures, R, est)


def generate_replicate_pairs(model: ModelSpec, n_ind: int, n_pool: int, p: int,
                             seed, shared_pooling_error: bool = False) -> ReplicatePairSet:
    """Duplicate-measurement differences for individual and pooled assays.

    Each assay is measured twice with independent measurement errors;
    pooling errors are independent across replicates unless
    ``shared_pooling_error`` (in which case pooled differences carry no
    pooling-error component).
    """
    if n_ind < 0 or n_pool < 0 or p < 1:
        raise SimulationError("need n_ind, n_pool >= 0 and p >= 1")
    rng = rng_for(seed)
    _ = _draw_individuals(model, rng, n_ind)  # shared specimen values cancel
    _ = _draw_individuals(model, rng, n_pool * p)
    em_ind = _draw_measurement(model, rng, (n_ind, 2))
    if shared_pooling_error:
        ep = np.zeros((n_pool, 2))
        _draw_pooling(model, rng, n_pool)
    else:
        ep = _draw_pooling(model, rng, (n_pool, 2))
    em_pool = _draw_measurement(model, rng, (n_pool, 2))
    ind_diffs = em_ind[:, 0] - em_ind[:, 1]
    pool_diffs = (ep[:, 0] + em_pool[:, 0]) - (ep[:, 1] + em_pool[:, 1])
    return ReplicatePairSet(tuple(ind_diffs.tolist()), tuple(pool_diffs.tolist()))


def pool_of_pools(values) -> list:
    """Average consecutive pairs of pooled assay values (doubling pool size).

    Applying this to measured pools of size p yields synthetic pools of size
    2p whose error terms are the half-sums of the constituents'.  An odd
    trailing value is dropped with a warning.
    """
    vals = [float(v) for v in values]
    if len(vals) % 2:
        warnings.warn("odd number of pooled values; dropping the last one")
        vals = vals[:-1]
    return [0.5 * (vals[i] + vals[i + 1]) for i in range(0, len(vals), 2)]


def _bootstrap_cell(args):
    (raw, N, n, alpha, llod, replications, seed, ai) = args
    design = two_assay_design(N, n, alpha)
    rng = rng_for(seed, ai)
    idx = rng.integers(0, len(raw), size=(replications, N))
    vals = raw[idx]
    cols = []
    cursor = 0
    group_start = [0]
    pools = []
    gammas = []
    for grp in design.groups:
        need = grp.assay_count * grp.pool_size
        block = vals[:, cursor:cursor + need]
        cursor += need
        if grp.pool_size > 1:
            block = block.reshape(replications, grp.assay_count, grp.pool_size).mean(axis=2)
        cols.append(block)
        group_start.append(group_start[-1] + grp.assay_count)
        pools.append(grp.pool_size)
        gammas.append(grp.gamma_flag)
    Z = np.ascontiguousarray(np.concatenate(cols, axis=1))
    if math.isfinite(llod):
        Zimp = np.maximum(Z, llod)
    else:
        Zimp = Z
    mu0 = Zimp.mean(axis=1)
    s0 = np.maximum(Zimp.std(axis=1), 1e-3 * (np.abs(mu0) + 1.0))
    kern = active_backend()
    mu, sg, ll, conv = kern.normal_fit2_batch(
        Z, llod, np.asarray(group_start, dtype=np.int64),
        np.asarray(pools, dtype=np.int64), np.asarray(gammas, dtype=np.int64),
        0.0, 0.0, mu0, s0)
    ok = (conv == 1) & np.isfinite(mu) & np.isfinite(sg)
    failures = int(replications - ok.sum())
    if ok.sum() < 2:
        raise SimulationError(
            "bootstrap cell alpha=%g llod=%g: only %d usable fits"
            % (alpha, llod, int(ok.sum())))
    var_mu = float(np.var(mu[ok], ddof=1))
    var_sg = float(np.var(sg[ok], ddof=1))
    return SweepRow(alpha, design,
                    {"mu_x": n * var_mu, "sigma_x": n * var_sg},
                    failures=failures)


def bootstrap_design_eval(raw_values, N: int, n: int, alphas, llod: float,
                          replications: int, seed: int,
                          threads: int = 1) -> SweepResult:
    """Empirical design sweep by resampling raw individual measurements.

    Per alpha and replication: resample ``N`` values with replacement,
    allocate them to the two-assay design, average within pools, censor at
    ``llod``, and fit the no-error Normal model; rows report n*Var over
    converged fits.  Cell ``i`` of the sweep is seeded by ``(seed, i)``, so
    output is independent of ``threads``.
    """
    raw = np.asarray(list(raw_values), dtype=float)
    if raw.size < 2:
        raise SimulationError("need at least 2 raw values to bootstrap")
    if not np.all(np.isfinite(raw)):
        raise SimulationError("raw values must be finite")
    jobs = [(raw, N, n, float(alpha), llod, replications, seed, ai)
            for ai, alpha in enumerate(alphas)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(_bootstrap_cell, jobs))
    else:
        rows = [_bootstrap_cell(j) for j in jobs]
    return SweepResult(rows, llod=llod)
