"""Maximum-likelihood fitting and replicate-based error-variance estimators.

``fit_mle`` maximizes the censored log-likelihood with a Nelder-Mead simplex
on standardized coordinates, run once from the initial point and once from a
perturbed initial point, keeping the better optimum.  The mean is shifted
and scaled; strictly positive scale parameters (sigma_x, a, b) are
log-transformed; the error scales (sigma_m, sigma_p, c, d) use a squared
transform (theta = theta0 * u**2) because their MLEs legitimately land on
the zero boundary in finite samples, where a log transform would never
terminate.  Two-parameter fits with the error scales held fixed dispatch to
the fast kernel backend.

The replicate estimators implement the within-assay difference method: for
duplicate measurements, Var(e_m) = Var(dZ_ind)/2 and
Var(e_p) = (Var(dZ_pool) - Var(dZ_ind))/2, and a Laplace fit to the
differences maps to the component scale via s/sqrt(2) (variance matching:
the difference of two Laplace(s0) variables has variance 4*s0^2).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from ._kernels import active_backend
from .exceptions import EstimationError, LikelihoodError
from .likelihood import Dataset, PackedDataset, numeric_hessian, pack_dataset
from .models import GAMMA, NORMAL, PARAM_NAMES, ModelSpec

__all__ = [
    "FitResult",
    "ReplicatePairSet",
    "fit_mle",
    "replicate_error_variances",
    "error_variances_from_diff_variances",
    "fit_laplace_scale",
    "laplace_component_scales",
]

#: Convergence bound on the scaled gradient max-norm at the estimates.
GRAD_TOL = 1e-4

#: Error-scale parameters whose MLE may legitimately sit on the zero boundary.
_SQUARED_PARAMS = frozenset(("sigma_m", "sigma_p", "c", "d"))


def _make_transform(family, free, theta0, base_values, mu_scale):
    """Map standardized optimizer coordinates to natural parameters."""
    def from_t(t):
        out = dict(base_values)
        for i, p in enumerate(free):
            if p == "mu_x":
                out[p] = theta0[p] + t[i] * mu_scale
            elif p in _SQUARED_PARAMS:
                out[p] = theta0[p] * t[i] * t[i]
            else:
                out[p] = theta0[p] * math.exp(t[i])
        return out
    return from_t


def _scaled_gradient_maxnorm(family, packed, estimates, free, loglik_hat):
    """Max-norm of the log-likelihood gradient in standardized coordinates.

    The same transforms as the optimizer (shift/scale, log, squared), so the
    measure stays finite and meaningful at zero-boundary error scales.
    """
    base = dict(estimates)
    if family == NORMAL:
        scale_hint = max(base["sigma_x"], 1e-8)
    else:
        scale_hint = max(math.sqrt(base["a"]) * base["b"], 1e-8)
    h = 1e-5
    gmax = 0.0
    for p in free:
        th = base[p]

        def theta_at(t):
            if p == "mu_x":
                return th + t * scale_hint
            if p in _SQUARED_PARAMS:
                if th > 0:
                    return th * (1.0 + t) ** 2
                return scale_hint * t * t
            return th * math.exp(t)

        vals_p = dict(base); vals_p[p] = theta_at(h)
        vals_m = dict(base); vals_m[p] = theta_at(-h)
        lp = _packed_loglik(family, packed, vals_p)
        lm = _packed_loglik(family, packed, vals_m)
        if not (math.isfinite(lp) and math.isfinite(lm)):
            return math.inf
        gmax = max(gmax, abs(lp - lm) / (2.0 * h))
    return gmax / max(1.0, abs(loglik_hat))


@dataclass
class FitResult:
    """Outcome of a maximum-likelihood fit."""

    estimates: dict
    loglik: float
    converged: bool
    iterations: int
    family: str
    free_params: tuple
    covariance: Optional[np.ndarray] = None
    grad_maxnorm: Optional[float] = None
    messages: list = field(default_factory=list)

    def model(self) -> ModelSpec:
        return ModelSpec(self.family, **self.estimates)

    def stderr(self) -> dict:
        """Asymptotic standard errors of the free parameters (or empty)."""
        if self.covariance is None:
            return {}
        se = np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))
        return dict(zip(self.free_params, se.tolist()))


@dataclass(frozen=True)
class ReplicatePairSet:
    """Within-assay replicate differences for individual and pooled assays."""

    individual_diffs: tuple = ()
    pooled_diffs: tuple = ()


def _mom_init(family: str, packed: PackedDataset, fixed: dict) -> ModelSpec:
    """Method-of-moments start values; censored values imputed at the LLOD.

    The imputation is used only here, never in the likelihood itself.
    """
    ng = len(packed.pools)
    best_g, best_count = 0, -1
    imputed = []
    for g in range(ng):
        vals = list(packed.z[packed.group_start[g]:packed.group_start[g + 1]])
        if packed.ncens[g] and math.isfinite(packed.llod):
            vals += [packed.llod] * int(packed.ncens[g])
        imputed.append(np.asarray(vals, dtype=float))
        if len(vals) > best_count:
            best_g, best_count = g, len(vals)
    for g in range(ng):  # prefer the individual group when it is not tiny
        if packed.pools[g] == 1 and imputed[g].size >= min(5, best_count):
            best_g = g
            break
    ref = imputed[best_g]
    p = float(packed.pools[best_g])
    mean = float(np.mean(ref)) if ref.size else 1.0
    var = float(np.var(ref, ddof=1)) if ref.size > 1 else 0.0

    if family == NORMAL:
        sm = fixed.get("sigma_m", 0.0)
        sp = fixed.get("sigma_p", 0.0) if packed.gammas[best_g] else 0.0
        vx = max(p * (var - sm * sm - sp * sp), 1e-4 * max(var, 1.0) * p, 1e-12)
        sx = math.sqrt(vx)
        return ModelSpec.normal(mean, sx,
                                fixed.get("sigma_m", 0.5 * sx),
                                fixed.get("sigma_p", 0.5 * sx))
    c = fixed.get("c", 0.0)
    d = fixed.get("d", 0.0) if packed.gammas[best_g] else 0.0
    mean = max(mean, 1e-8)
    vx = max(p * (var - 2 * c * c - 2 * d * d), 1e-3 * mean * mean)
    b0 = min(max(vx / mean, 1e-8), 1e8)
    a0 = min(max(mean / b0, 1e-3), 1e8)
    scale0 = 0.1 * math.sqrt(vx)
    return ModelSpec.gamma(a0, b0, fixed.get("c", scale0), fixed.get("d", scale0))


def _restart_point(x0: np.ndarray, restart_seed) -> np.ndarray:
    if restart_seed is None:
        bump = np.array([0.2 if i % 2 == 0 else -0.2 for i in range(x0.size)])
        return x0 + bump
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((int(restart_seed), 0x7E57A27))))
    return x0 + rng.normal(0.0, 0.2, size=x0.size)


def _packed_loglik(family, packed, values):
    kern = active_backend()
    if family == NORMAL:
        return kern.normal_loglik(values["mu_x"], values["sigma_x"],
                                  values["sigma_m"], values["sigma_p"],
                                  packed.llod, packed.z, packed.group_start,
                                  packed.pools, packed.gammas, packed.mscale,
                                  packed.pscale, packed.ncens)
    return kern.gamma_loglik(values["a"], values["b"], values["c"], values["d"],
                             packed.llod, packed.z, packed.group_start,
                             packed.pools, packed.gammas, packed.ncens)


def fit_mle(family: str, data: Dataset, init: Optional[ModelSpec] = None,
            fixed: Optional[dict] = None, compute_covariance: bool = True,
            restart_seed=None, options: Optional[dict] = None) -> FitResult:
    """Fit a model family to censored assay data by maximum likelihood.

    ``fixed`` pins parameters at known values (e.g. Laplace error scales
    estimated from replicates); the remaining parameters are free.  Returns
    a :class:`FitResult`; ``converged`` requires the scaled gradient
    max-norm at the estimates to be at most ``GRAD_TOL``.
    """
    if family not in PARAM_NAMES:
        raise EstimationError("unknown family %r" % (family,))
    if data.family is not None and data.family != family:
        raise EstimationError("dataset family %r != requested %r"
                              % (data.family, family))
    fixed = dict(fixed or {})
    for name in fixed:
        if name not in PARAM_NAMES[family]:
            raise EstimationError("cannot fix unknown parameter %r" % name)
    packed = pack_dataset(family, data)
    if packed.n_numeric + packed.n_censored == 0:
        raise EstimationError("dataset is empty")
    if packed.n_numeric == 0:
        raise EstimationError("all observations are censored; cannot fit")

    if init is None:
        init = _mom_init(family, packed, fixed)
    elif init.family != family:
        raise EstimationError("init model family %r != requested %r"
                              % (init.family, family))

    names = PARAM_NAMES[family]
    free = tuple(p for p in names if p not in fixed)
    if not free:
        raise EstimationError("no free parameters to fit")
    values = {p: (fixed[p] if p in fixed else getattr(init, p)) for p in names}

    opts = {"xatol": 1e-7, "fatol": 1e-10, "maxiter": 400}
    opts.update(options or {})
    messages = []

    # Positive free parameters are log-transformed; a zero start is nudged
    # off the boundary so the transform is defined.
    scale_hint = values["sigma_x"] if family == NORMAL else math.sqrt(
        max(values["a"], 1e-6) * values["b"] ** 2)
    for p in free:
        if p != "mu_x" and values[p] <= 0.0:
            values[p] = 0.1 * scale_hint
            messages.append("start value for %s nudged off zero" % p)

    kern = active_backend()
    fast = None
    if family == NORMAL and set(free) == {"mu_x", "sigma_x"}:
        fast = "normal"
    elif family == GAMMA and set(free) == {"a", "b"}:
        fast = "gamma"

    if fast == "normal":
        mu0, s0 = values["mu_x"], values["sigma_x"]
        starts = [(mu0, s0)]
        if restart_seed is None:
            starts.append((mu0 + 0.2 * s0, 1.25 * s0))
        else:
            t = _restart_point(np.zeros(2), restart_seed)
            starts.append((mu0 + t[0] * s0, s0 * math.exp(t[1])))
        best = None
        total_iter = 0
        for m0, sg0 in starts:
            m, s, ll, nfev, conv = kern.normal_fit2(
                packed.llod, packed.z, packed.group_start, packed.pools,
                packed.gammas, packed.mscale, packed.pscale, packed.ncens,
                values["sigma_m"], values["sigma_p"], m0, sg0,
                opts["xatol"], opts["fatol"], opts["maxiter"])
            total_iter += nfev
            if best is None or ll > best[2]:
                best = (m, s, ll, conv)
        values["mu_x"], values["sigma_x"] = best[0], best[1]
        loglik, opt_converged, iterations = best[2], bool(best[3]), total_iter
    elif fast == "gamma":
        a0, b0 = values["a"], values["b"]
        starts = [(a0, b0)]
        if restart_seed is None:
            starts.append((a0 * math.exp(0.2), b0 * math.exp(-0.2)))
        else:
            t = _restart_point(np.zeros(2), restart_seed)
            starts.append((a0 * math.exp(t[0]), b0 * math.exp(t[1])))
        best = None
        total_iter = 0
        for aa, bb in starts:
            a, b, ll, nfev, conv = kern.gamma_fit2(
                packed.llod, packed.z, packed.group_start, packed.pools,
                packed.gammas, packed.ncens, values["c"], values["d"], aa, bb,
                opts["xatol"], opts["fatol"], opts["maxiter"])
            total_iter += nfev
            if best is None or ll > best[2]:
                best = (a, b, ll, conv)
        values["a"], values["b"] = best[0], best[1]
        loglik, opt_converged, iterations = best[2], bool(best[3]), total_iter
    else:
        mu_scale = max(values["sigma_x"], 1e-8) if family == NORMAL else 1.0
        theta0 = {p: values[p] for p in free}
        from_t = _make_transform(family, free, theta0, values, mu_scale)
        x0 = np.array([1.0 if p in _SQUARED_PARAMS else 0.0 for p in free])

        def negll(t):
            ll = _packed_loglik(family, packed, from_t(t))
            return -ll if math.isfinite(ll) else np.inf

        nm_opts = {"xatol": opts["xatol"], "fatol": opts["fatol"],
                   "maxiter": opts["maxiter"] * len(free),
                   "maxfev": opts["maxiter"] * len(free)}
        r1 = optimize.minimize(negll, x0, method="Nelder-Mead", options=nm_opts)
        r2 = optimize.minimize(negll, x0 + (_restart_point(np.zeros(len(free)), restart_seed)),
                               method="Nelder-Mead", options=nm_opts)
        best = r1 if r1.fun <= r2.fun else r2
        values = from_t(best.x)
        loglik = -float(best.fun)
        opt_converged = bool(best.success)
        iterations = int(r1.nit + r2.nit)

    result = FitResult(
        estimates={p: float(values[p]) for p in names},
        loglik=float(loglik),
        converged=bool(opt_converged and math.isfinite(loglik)),
        iterations=iterations,
        family=family,
        free_params=free,
        messages=messages,
    )

    gmax = _scaled_gradient_maxnorm(family, packed, result.estimates, free,
                                    result.loglik)
    result.grad_maxnorm = gmax
    if gmax > GRAD_TOL:
        result.converged = False
        result.messages.append(
            "scaled gradient max-norm %.3g exceeds %.1g" % (gmax, GRAD_TOL))

    model_hat = ModelSpec(family, **result.estimates)
    if compute_covariance and result.converged:
        try:
            H = numeric_hessian(model_hat, data, params=free)
            info = -H
            eig = np.linalg.eigvalsh(info)
            if np.all(eig > 0):
                result.covariance = np.linalg.inv(info)
            else:
                result.messages.append(
                    "observed information not positive definite; no covariance")
        except (LikelihoodError, np.linalg.LinAlgError) as exc:
            result.messages.append("covariance unavailable: %s" % exc)
    return result


def error_variances_from_diff_variances(var_ind_diff: float,
                                        var_pool_diff: float):
    """Error variances from the two replicate-difference sample variances.

    Var(e_m) = Var(dZ_ind)/2;  Var(e_p) = (Var(dZ_pool) - Var(dZ_ind))/2,
    floored at zero (with a warning) when the difference is negative.
    """
    var_m = var_ind_diff / 2.0
    var_p = (var_pool_diff - var_ind_diff) / 2.0
    if var_p < 0.0:
        warnings.warn(
            "pooled-difference variance (%g) below individual-difference "
            "variance (%g); pooling-error variance floored at 0"
            % (var_pool_diff, var_ind_diff))
        var_p = 0.0
    return var_m, var_p


def replicate_error_variances(pairs: ReplicatePairSet):
    """Measurement and pooling error variances from replicate differences."""
    ind = np.asarray(pairs.individual_diffs, dtype=float)
    pool = np.asarray(pairs.pooled_diffs, dtype=float)
    if ind.size < 2 or pool.size < 2:
        raise EstimationError(
            "need at least 2 individual and 2 pooled replicate differences")
    return error_variances_from_diff_variances(
        float(np.var(ind, ddof=1)), float(np.var(pool, ddof=1)))


def fit_laplace_scale(diffs):
    """Laplace scale of replicate differences and the per-measurement scale.

    Returns ``(s_diff, component_scale)`` where ``s_diff`` is the ML Laplace
    scale of the differences (mean absolute deviation from the median) and
    ``component_scale = s_diff / sqrt(2)`` matches the variance of a single
    error component.
    """
    diffs = np.asarray(diffs, dtype=float)
    if diffs.size < 2:
        raise EstimationError("need at least 2 differences")
    s = float(np.mean(np.abs(diffs - np.median(diffs))))
    return s, s / math.sqrt(2.0)


def laplace_component_scales(s_ind_diff: float, s_pool_diff: float):
    """Component Laplace scales (c, d) from fitted difference scales.

    The individual-difference fit carries measurement error only; the pooled
    one carries measurement plus pooling error, so the pooling component is
    recovered by variance subtraction.
    """
    c = s_ind_diff / math.sqrt(2.0)
    var_p = (s_pool_diff ** 2 - s_ind_diff ** 2)
    if var_p < 0.0:
        warnings.warn("pooled-difference scale below individual one; d floored at 0")
        var_p = 0.0
    return c, math.sqrt(var_p / 2.0)
