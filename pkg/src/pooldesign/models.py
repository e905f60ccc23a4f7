"""Biomarker model primitives: pooled distributions and observed-assay laws.

Two model families are supported.  In the Normal family the individual
biomarker is N(mu_x, sigma_x^2) with Normal measurement error (sd sigma_m)
and Normal pooling error (sd sigma_p).  In the Gamma family the individual
biomarker is Gamma(shape a, scale b) with Laplace ("double exponential")
measurement error (scale c) and pooling error (scale d).

An assay on a pool of ``p`` specimens measures the arithmetic mean of its
constituents, so the error-free pooled value is N(mu_x, sigma_x^2/p) or
Gamma(a*p, b/p).  The observed value adds measurement error always and
pooling error only on pooled assays (flag ``gamma_flag``):

    Z = X_pool + gamma_flag * e_p + e_m

For the Normal family everything stays Normal and closed-form.  For the
Gamma family the observed density/CDF is the convolution of the pooled Gamma
with the Laplace error sum, evaluated by adaptive quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._kernels import active_backend
from ._kernels.pykernels import QuadratureError, err_cdf, err_pdf, error_terms
from .exceptions import ModelError, NumericsError

NORMAL = "normal"
GAMMA = "gamma"

#: Parameter names per family, in canonical order.
PARAM_NAMES = {
    NORMAL: ("mu_x", "sigma_x", "sigma_m", "sigma_p"),
    GAMMA: ("a", "b", "c", "d"),
}


@dataclass(frozen=True)
class ModelSpec:
    """A biomarker/error model: family tag plus its four parameters.

    Normal family: ``mu_x`` (mean), ``sigma_x > 0``, ``sigma_m >= 0``,
    ``sigma_p >= 0`` (standard deviations).  Gamma family: shape ``a > 0``,
    scale ``b > 0``, Laplace scales ``c >= 0`` (measurement) and ``d >= 0``
    (pooling).
    """

    family: str
    mu_x: float = 0.0
    sigma_x: float = 1.0
    sigma_m: float = 0.0
    sigma_p: float = 0.0
    a: float = 1.0
    b: float = 1.0
    c: float = 0.0
    d: float = 0.0

    def __post_init__(self):
        if self.family not in (NORMAL, GAMMA):
            raise ModelError("unknown model family %r" % (self.family,))
        vals = [getattr(self, name) for name in PARAM_NAMES[self.family]]
        if not all(np.isfinite(v) for v in vals):
            raise ModelError("model parameters must be finite, got %r" % (vals,))
        if self.family == NORMAL:
            if self.sigma_x <= 0:
                raise ModelError("sigma_x must be > 0")
            if self.sigma_m < 0 or self.sigma_p < 0:
                raise ModelError("sigma_m and sigma_p must be >= 0")
        else:
            if self.a <= 0 or self.b <= 0:
                raise ModelError("Gamma shape a and scale b must be > 0")
            if self.c < 0 or self.d < 0:
                raise ModelError("Laplace scales c and d must be >= 0")

    @classmethod
    def normal(cls, mu_x, sigma_x, sigma_m=0.0, sigma_p=0.0) -> "ModelSpec":
        return cls(NORMAL, mu_x=float(mu_x), sigma_x=float(sigma_x),
                   sigma_m=float(sigma_m), sigma_p=float(sigma_p))

    @classmethod
    def gamma(cls, a, b, c=0.0, d=0.0) -> "ModelSpec":
        return cls(GAMMA, a=float(a), b=float(b), c=float(c), d=float(d))

    @property
    def param_names(self) -> tuple:
        return PARAM_NAMES[self.family]

    def params(self) -> dict:
        """Family parameters as an ordered name -> value mapping."""
        return {name: getattr(self, name) for name in self.param_names}

    def replace(self, **updates) -> "ModelSpec":
        vals = {"family": self.family}
        vals.update({n: getattr(self, n) for n in self.param_names})
        vals.update(updates)
        return ModelSpec(**vals)

    def individual_mean(self) -> float:
        return self.mu_x if self.family == NORMAL else self.a * self.b

    def individual_variance(self) -> float:
        if self.family == NORMAL:
            return self.sigma_x ** 2
        return self.a * self.b ** 2

    def measurement_error_variance(self) -> float:
        return self.sigma_m ** 2 if self.family == NORMAL else 2.0 * self.c ** 2

    def pooling_error_variance(self) -> float:
        return self.sigma_p ** 2 if self.family == NORMAL else 2.0 * self.d ** 2


@dataclass(frozen=True)
class ObservedComponentSpec:
    """One assay component: the model, the pool size, and the error flag.

    ``gamma_flag`` marks whether pooling error enters the observation; it is
    0 for individual assays (pool_size 1) and 1 for pooled assays.
    """

    model: ModelSpec
    pool_size: int = 1
    gamma_flag: int = 0

    def __post_init__(self):
        if self.pool_size < 1:
            raise ModelError("pool_size must be >= 1")
        if self.gamma_flag not in (0, 1):
            raise ModelError("gamma_flag must be 0 or 1")
        if self.pool_size == 1 and self.gamma_flag != 0:
            raise ModelError("individual assays (pool_size 1) carry no pooling error")
        if self.pool_size > 1 and self.gamma_flag != 1:
            raise ModelError("pooled assays (pool_size > 1) carry pooling error")

    def observed_mean(self) -> float:
        return self.model.individual_mean()

    def observed_variance(self) -> float:
        m = self.model
        v = m.individual_variance() / self.pool_size
        v += m.measurement_error_variance()
        if self.gamma_flag:
            v += m.pooling_error_variance()
        return v


@dataclass(frozen=True)
class PooledDistribution:
    """Error-free distribution of a pooled assay value."""

    family: str
    mu: float = 0.0       # Normal mean
    sigma: float = 1.0    # Normal standard deviation
    shape: float = 1.0    # Gamma shape
    scale: float = 1.0    # Gamma scale

    def to_scipy(self):
        if self.family == NORMAL:
            return stats.norm(self.mu, self.sigma)
        return stats.gamma(self.shape, scale=self.scale)


def pooled_distribution(model: ModelSpec, p: int) -> PooledDistribution:
    """Distribution of the mean of ``p`` pooled specimens, before errors.

    Normal(mu_x, sigma_x^2/p) or, by Gamma additivity, Gamma(a*p, b/p).
    """
    if p < 1:
        raise ModelError("pool size must be >= 1")
    if model.family == NORMAL:
        return PooledDistribution(NORMAL, mu=model.mu_x,
                                  sigma=model.sigma_x / math.sqrt(p))
    return PooledDistribution(GAMMA, shape=model.a * p, scale=model.b / p)


def laplace_sum_pdf(u, c: float, d: float):
    """Density of the sum of independent Laplace(c) and Laplace(d) variables."""
    terms = error_terms(c, d, 1)
    if terms is None:
        raise ModelError("laplace_sum_pdf requires a nondegenerate scale")
    return err_pdf(u, terms)


def laplace_sum_cdf(u, c: float, d: float):
    """CDF of the sum of independent Laplace(c) and Laplace(d) variables."""
    terms = error_terms(c, d, 1)
    if terms is None:
        raise ModelError("laplace_sum_cdf requires a nondegenerate scale")
    return err_cdf(u, terms)


def _check_z(z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ModelError("evaluation points must be finite")
    return z


def observed_pdf(spec: ObservedComponentSpec, z, rtol: float = 1e-8):
    """Density of the observed assay value Z at ``z`` (scalar or array).

    Normal family is closed form; Gamma family is evaluated by adaptive
    quadrature with relative tolerance ``rtol`` over the truncated Gamma
    support (points outside the effective support return 0).
    """
    scalar = np.isscalar(z)
    z = _check_z(z)
    m = spec.model
    if m.family == NORMAL:
        sd = math.sqrt(spec.observed_variance())
        out = np.exp(-0.5 * ((z - m.mu_x) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    else:
        k = m.a * spec.pool_size
        theta = m.b / spec.pool_size
        kern = active_backend()
        try:
            out = np.exp(kern.gamma_obs_logpdf(np.atleast_1d(z), k, theta,
                                               m.c, m.d, spec.gamma_flag, rtol))
        except QuadratureError as exc:
            raise NumericsError(str(exc)) from exc
        out = out.reshape(np.shape(z))
    return float(out) if scalar else out


def observed_cdf(spec: ObservedComponentSpec, z, rtol: float = 1e-8):
    """P(Z <= z) for the observed assay value (scalar or array)."""
    scalar = np.isscalar(z)
    z = _check_z(z)
    m = spec.model
    if m.family == NORMAL:
        sd = math.sqrt(spec.observed_variance())
        out = stats.norm.cdf(z, loc=m.mu_x, scale=sd)
    else:
        k = m.a * spec.pool_size
        theta = m.b / spec.pool_size
        kern = active_backend()
        try:
            out = kern.gamma_obs_cdf(np.atleast_1d(z), k, theta,
                                     m.c, m.d, spec.gamma_flag, rtol)
        except QuadratureError as exc:
            raise NumericsError(str(exc)) from exc
        out = out.reshape(np.shape(z))
    return float(out) if scalar else out
