"""Censored log-likelihood of assay datasets, with numeric derivatives.

Each observation is either a numeric assay value (at or above the lower
limit of detection) or a censored marker.  Numeric observations contribute
``log f_w(z)`` and censored ones ``log F_w(llod)``, where ``f_w``/``F_w``
are the observed-value density/CDF of the observation's group (pool size
and pooling-error flag).

Replicated groups (two measurements per assay) enter the main likelihood in
collapsed form: for the Normal family the two replicates are averaged into
one observation whose measurement-error variance is halved (an assay with a
censored replicate is treated as censored); for the Gamma family only the
first replicate is used.  Replicate pairs are consumed directly by the
error-variance estimators in :mod:`pooldesign.estimate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import active_backend
from .design import DesignSpec
from .exceptions import DataError, LikelihoodError
from .models import GAMMA, NORMAL, ModelSpec

__all__ = [
    "AssayObservation",
    "Dataset",
    "PackedDataset",
    "pack_dataset",
    "log_likelihood",
    "numeric_gradient",
    "numeric_hessian",
]

#: Fraction of pooling-error variance retained when two replicates with
#: independent pooling errors are averaged.
_AVG_POOLING_SCALE = 0.5


@dataclass(frozen=True)
class AssayObservation:
    """One assay measurement: numeric value or censored (``value is None``)."""

    group_index: int
    replicate_index: int = 1
    value: Optional[float] = None

    @property
    def censored(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class Dataset:
    """A limit of detection, a design, and the observed assay values.

    ``family`` optionally records which model family generated the data;
    when set, likelihood evaluation rejects models of the other family.
    """

    llod: float
    design: DesignSpec
    observations: tuple = field(default_factory=tuple)
    family: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        counts = [0] * len(self.design.groups)
        for i, obs in enumerate(self.observations):
            g = obs.group_index
            if not 0 <= g < len(self.design.groups):
                raise DataError("observation %d references unknown group %d" % (i, g))
            reps = self.design.groups[g].replicates
            if not 1 <= obs.replicate_index <= reps:
                raise DataError(
                    "observation %d has replicate %d but group %d has %d "
                    "replicate(s)" % (i, obs.replicate_index, g, reps)
                )
            if obs.value is not None:
                if not math.isfinite(obs.value):
                    raise DataError("observation %d has non-finite value" % i)
                if obs.value < self.llod:
                    raise DataError(
                        "observation %d value %g lies below the LLOD %g"
                        % (i, obs.value, self.llod)
                    )
            counts[g] += 1
        for g, grp in enumerate(self.design.groups):
            want = grp.assay_count * grp.replicates
            if counts[g] != want:
                raise DataError(
                    "group %d has %d observations, expected %d (assays x "
                    "replicates)" % (g, counts[g], want)
                )

    @property
    def n_censored(self) -> int:
        return sum(1 for o in self.observations if o.censored)

    @property
    def n_numeric(self) -> int:
        return len(self.observations) - self.n_censored


@dataclass
class PackedDataset:
    """Flat-array view of a dataset, as consumed by the numeric kernels."""

    llod: float
    z: np.ndarray
    group_start: np.ndarray
    pools: np.ndarray
    gammas: np.ndarray
    mscale: np.ndarray
    pscale: np.ndarray
    ncens: np.ndarray

    @property
    def n_numeric(self) -> int:
        return int(self.z.size)

    @property
    def n_censored(self) -> int:
        return int(self.ncens.sum())


def _collapse_replicates(family: str, data: Dataset, g: int):
    """Per-assay collapsed (values, n_censored) for a replicated group."""
    grp = data.design.groups[g]
    slots = {}
    for obs in data.observations:
        if obs.group_index != g:
            continue
        slots.setdefault(obs.replicate_index, []).append(obs)
    first = slots.get(1, [])
    second = slots.get(2, [])
    if family == GAMMA or grp.replicates == 1:
        vals = [o.value for o in first if not o.censored]
        return vals, sum(1 for o in first if o.censored)
    if len(first) != len(second):
        raise DataError("group %d replicate lists are unpaired" % g)
    vals, ncens = [], 0
    for o1, o2 in zip(first, second):
        if o1.censored or o2.censored:
            ncens += 1
        else:
            vals.append(0.5 * (o1.value + o2.value))
    return vals, ncens


def pack_dataset(family: str, data: Dataset) -> PackedDataset:
    """Pack a dataset into kernel arrays, applying the replicate policy."""
    ng = len(data.design.groups)
    z_parts = []
    group_start = np.zeros(ng + 1, dtype=np.int64)
    pools = np.zeros(ng, dtype=np.int64)
    gammas = np.zeros(ng, dtype=np.int64)
    mscale = np.ones(ng)
    pscale = np.ones(ng)
    ncens = np.zeros(ng, dtype=np.int64)
    for g, grp in enumerate(data.design.groups):
        pools[g] = grp.pool_size
        gammas[g] = grp.gamma_flag
        if grp.replicates == 2 and family == NORMAL:
            mscale[g] = 0.5
            pscale[g] = _AVG_POOLING_SCALE
        vals, nc = _collapse_replicates(family, data, g)
        z_parts.append(np.asarray(vals, dtype=float))
        ncens[g] = nc
        group_start[g + 1] = group_start[g] + len(vals)
    z = np.concatenate(z_parts) if z_parts else np.empty(0)
    return PackedDataset(float(data.llod), z, group_start, pools, gammas,
                         mscale, pscale, ncens)


def _check_family(model: ModelSpec, data: Dataset):
    if not isinstance(model, ModelSpec):
        raise LikelihoodError("model must be a ModelSpec")
    if data.family is not None and data.family != model.family:
        raise LikelihoodError(
            "dataset holds %s-family data but the model is %s"
            % (data.family, model.family)
        )
    if not data.observations:
        raise LikelihoodError("dataset is empty")


def log_likelihood(model: ModelSpec, data: Dataset,
                   packed: Optional[PackedDataset] = None) -> float:
    """Censored log-likelihood of ``data`` under ``model``.

    Returns ``-inf`` (rather than raising) when some observed value has zero
    density under the model.
    """
    _check_family(model, data)
    if packed is None:
        packed = pack_dataset(model.family, data)
    kern = active_backend()
    if model.family == NORMAL:
        return float(kern.normal_loglik(
            model.mu_x, model.sigma_x, model.sigma_m, model.sigma_p,
            packed.llod, packed.z, packed.group_start, packed.pools,
            packed.gammas, packed.mscale, packed.pscale, packed.ncens))
    return float(kern.gamma_loglik(
        model.a, model.b, model.c, model.d, packed.llod, packed.z,
        packed.group_start, packed.pools, packed.gammas, packed.ncens))


def _fd_step(value: float) -> float:
    return max(1e-5, 1e-5 * abs(value))


def _loglik_at(model: ModelSpec, packed: PackedDataset, names, values) -> float:
    try:
        shifted = model.replace(**dict(zip(names, values)))
    except Exception as exc:
        raise LikelihoodError(
            "finite-difference stencil left the parameter space at %s"
            % dict(zip(names, values))
        ) from exc
    kern = active_backend()
    if model.family == NORMAL:
        ll = kern.normal_loglik(shifted.mu_x, shifted.sigma_x, shifted.sigma_m,
                                shifted.sigma_p, packed.llod, packed.z,
                                packed.group_start, packed.pools, packed.gammas,
                                packed.mscale, packed.pscale, packed.ncens)
    else:
        ll = kern.gamma_loglik(shifted.a, shifted.b, shifted.c, shifted.d,
                               packed.llod, packed.z, packed.group_start,
                               packed.pools, packed.gammas, packed.ncens)
    return float(ll)


def numeric_gradient(model: ModelSpec, data: Dataset, params=None) -> np.ndarray:
    """Central-difference gradient of the log-likelihood.

    ``params`` selects which model parameters to differentiate (default:
    all four of the family).  Raises if the likelihood is non-finite at any
    stencil point, naming the offending parameter.
    """
    _check_family(model, data)
    names = tuple(params) if params is not None else model.param_names
    packed = pack_dataset(model.family, data)
    theta = np.array([getattr(model, p) for p in names], dtype=float)
    grad = np.empty(len(names))
    for i, name in enumerate(names):
        h = _fd_step(theta[i])
        vals = []
        for sign in (+1.0, -1.0):
            t = theta.copy()
            t[i] += sign * h
            ll = _loglik_at(model, packed, names, t)
            if not math.isfinite(ll):
                raise LikelihoodError(
                    "log-likelihood is non-finite at the %s stencil point" % name
                )
            vals.append(ll)
        grad[i] = (vals[0] - vals[1]) / (2.0 * h)
    return grad


def numeric_hessian(model: ModelSpec, data: Dataset, params=None) -> np.ndarray:
    """Central-difference Hessian of the log-likelihood (symmetrized)."""
    _check_family(model, data)
    names = tuple(params) if params is not None else model.param_names
    packed = pack_dataset(model.family, data)
    theta = np.array([getattr(model, p) for p in names], dtype=float)
    k = len(names)
    steps = np.array([_fd_step(t) for t in theta])

    def ll_at(t):
        val = _loglik_at(model, packed, names, t)
        if not math.isfinite(val):
            raise LikelihoodError(
                "log-likelihood is non-finite inside the Hessian stencil at %s"
                % dict(zip(names, t))
            )
        return val

    f0 = ll_at(theta)
    H = np.empty((k, k))
    for i in range(k):
        t = theta.copy()
        t[i] += steps[i]
        fp = ll_at(t)
        t[i] -= 2.0 * steps[i]
        fm = ll_at(t)
        H[i, i] = (fp - 2.0 * f0 + fm) / steps[i] ** 2
    for i in range(k):
        for j in range(i + 1, k):
            vals = {}
            for si in (+1, -1):
                for sj in (+1, -1):
                    t = theta.copy()
                    t[i] += si * steps[i]
                    t[j] += sj * steps[j]
                    vals[(si, sj)] = ll_at(t)
            H[i, j] = H[j, i] = (
                vals[(1, 1)] - vals[(1, -1)] - vals[(-1, 1)] + vals[(-1, -1)]
            ) / (4.0 * steps[i] * steps[j])
    return 0.5 * (H + H.T)
