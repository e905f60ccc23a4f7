"""Expected Fisher information and asymptotic-variance sweeps (Normal family).

For a censored observation the per-assay log-likelihood term is
``log f(z; theta)`` above the detection limit and ``log F(llod; theta)``
below it.  The expected information of one assay in group ``w`` is

    I_w = -( integral_{llod}^{inf} [d^2 log f / d theta^2] f(z; theta0) dz
             + F(llod; theta0) * [d^2 log F(llod) / d theta^2] )

evaluated here with central finite differences of the log terms on a fixed
Gauss-Legendre grid shared by every stencil point (sharing the grid keeps
quadrature error out of the differences).  Design information adds over
groups: I = sum_w n_w I_w.

Gamma-family design evaluation is Monte Carlo based and lives in
:mod:`pooldesign.simulate`; this module is analytic/numeric Normal only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import log_ndtr

from .design import DesignSpec, three_assay_design, two_assay_design
from .exceptions import DesignError, NumericsError
from .models import NORMAL, ModelSpec

__all__ = [
    "SweepResult",
    "SweepRow",
    "default_information_params",
    "expected_information",
    "asymptotic_variances",
    "sweep_alpha",
]

#: Finite-difference step factor for information Hessians.
_FD_STEP = 1e-4
#: Half-width of the integration window in observation SDs.
_Z_REACH = 12.0
#: Composite quadrature: panels x Gauss-Legendre order.
_N_PANELS = 24
_GL_ORDER = 12

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(_GL_ORDER)


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    design: DesignSpec
    scaled_variances: dict
    failures: int = 0


@dataclass
class SweepResult:
    """Per-alpha scaled variances n*Var(estimator), analytic or empirical."""

    rows: list = field(default_factory=list)
    llod: Optional[float] = None

    def __post_init__(self):
        alphas = [r.alpha for r in self.rows]
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise NumericsError("sweep rows must have strictly ascending alpha")

    def alphas(self):
        return [r.alpha for r in self.rows]

    def column(self, param):
        return [r.scaled_variances[param] for r in self.rows]


def default_information_params(model: ModelSpec, design: DesignSpec) -> tuple:
    """Parameters treated as free: mean and sd always, error sds when present."""
    params = ["mu_x", "sigma_x"]
    if model.sigma_m > 0:
        params.append("sigma_m")
    if model.sigma_p > 0 and any(g.gamma_flag for g in design.groups):
        params.append("sigma_p")
    return tuple(params)


def _group_nodes(mu0, sd0, llod):
    """Fixed quadrature nodes/weights on the uncensored region, or (None, None)."""
    lo = max(llod, mu0 - _Z_REACH * sd0)
    hi = mu0 + _Z_REACH * sd0
    if lo >= hi:
        return None, None
    edges = np.linspace(lo, hi, _N_PANELS + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def _fd_hessian(func, theta):
    """Central-difference Hessian of a scalar function of a parameter vector."""
    k = theta.size
    steps = np.array([_FD_STEP * max(1.0, abs(t)) for t in theta])
    f0 = func(theta)
    H = np.empty((k, k))
    for i in range(k):
        tp = theta.copy(); tp[i] += steps[i]
        tm = theta.copy(); tm[i] -= steps[i]
        H[i, i] = (func(tp) - 2.0 * f0 + func(tm)) / steps[i] ** 2
    for i in range(k):
        for j in range(i + 1, k):
            acc = 0.0
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    t = theta.copy()
                    t[i] += si * steps[i]
                    t[j] += sj * steps[j]
                    acc += si * sj * func(t)
            H[i, j] = H[j, i] = acc / (4.0 * steps[i] * steps[j])
    return 0.5 * (H + H.T)


def expected_information(model: ModelSpec, design: DesignSpec, llod: float,
                         params: Optional[tuple] = None) -> np.ndarray:
    """Expected Fisher information of the design at the model parameters.

    Rows/columns follow ``params`` (default
    :func:`default_information_params`).  Raises if the numerical result is
    indefinite beyond tolerance.
    """
    if model.family != NORMAL:
        raise NumericsError(
            "expected information is implemented for the Normal family; use "
            "Monte Carlo evaluation for the Gamma family")
    names = tuple(params) if params is not None else \
        default_information_params(model, design)
    theta0 = np.array([getattr(model, p) for p in names])
    base = model.params()

    k = len(names)
    info = np.zeros((k, k))
    for grp in design.groups:
        mscale = 0.5 if grp.replicates == 2 else 1.0
        pscale = 0.5 if grp.replicates == 2 else 1.0

        def variance(vals):
            v = vals["sigma_x"] ** 2 / grp.pool_size + mscale * vals["sigma_m"] ** 2
            if grp.gamma_flag:
                v += pscale * vals["sigma_p"] ** 2
            return v

        v0 = variance(base)
        sd0 = math.sqrt(v0)
        mu0 = base["mu_x"]
        nodes, weights = _group_nodes(mu0, sd0, llod)
        if nodes is not None:
            f0 = np.exp(-0.5 * ((nodes - mu0) / sd0) ** 2) / (sd0 * math.sqrt(2 * math.pi))
            wf0 = weights * f0
        cens_mass = 0.5 * math.erfc(-(llod - mu0) / (sd0 * math.sqrt(2.0)))

        def cross_entropy(theta):
            vals = dict(base)
            vals.update(zip(names, theta))
            v = variance(vals)
            if v <= 0:
                raise NumericsError("nonpositive variance inside FD stencil")
            total = 0.0
            if nodes is not None:
                logf = (-0.5 * np.log(2 * math.pi * v)
                        - (nodes - vals["mu_x"]) ** 2 / (2.0 * v))
                total += float(np.dot(wf0, logf))
            if cens_mass > 1e-300:
                total += cens_mass * float(log_ndtr(
                    (llod - vals["mu_x"]) / math.sqrt(v)))
            return total

        info += grp.assay_count * (-_fd_hessian(cross_entropy, theta0.copy()))

    info = 0.5 * (info + info.T)
    eig = np.linalg.eigvalsh(info)
    floor = -1e-8 * max(1.0, float(np.max(np.abs(eig))))
    if eig.min() < floor:
        raise NumericsError(
            "expected information is indefinite (min eigenvalue %.3g)" % eig.min())
    return info


def asymptotic_variances(model: ModelSpec, design: DesignSpec, llod: float,
                         params: Optional[tuple] = None) -> dict:
    """Asymptotic estimator variances: the diagonal of the inverse information."""
    names = tuple(params) if params is not None else \
        default_information_params(model, design)
    info = expected_information(model, design, llod, names)
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericsError(
            "information matrix is numerically singular (condition number "
            "%.3g); the design cannot identify %s" % (cond, ", ".join(names)))
    cov = np.linalg.inv(info)
    return dict(zip(names, np.diag(cov).tolist()))


def sweep_alpha(model: ModelSpec, N: int, n: int, llod: float, alphas,
                extras: Optional[dict] = None,
                params: Optional[tuple] = None) -> SweepResult:
    """Asymptotic-variance sweep over the individual-assay fraction alpha.

    Uses the two-assay design unless ``extras`` supplies ``beta`` and ``p2``
    for the three-assay design.  Reports n*Var per parameter per row.
    """
    rows = []
    for alpha in alphas:
        if extras:
            design = three_assay_design(N, n, alpha, extras["beta"], extras["p2"])
        else:
            design = two_assay_design(N, n, alpha)
        var = asymptotic_variances(model, design, llod, params)
        rows.append(SweepRow(alpha, design, {p: n * v for p, v in var.items()}))
    return SweepResult(rows, llod=llod)
