"""Construction and validation of hybrid pooled/unpooled assay designs.

A design allocates ``N`` specimens to ``n`` assays.  A fraction ``alpha`` of
assays measure single specimens; the rest measure pools.  The two-assay
design has one pooled group whose size follows from rounding
``(N - alpha*n) / ((1 - alpha)*n)``; the three-assay design adds a second
pooled group of user-chosen size ``p2`` so measurement and pooling error
variances are separately identifiable; the one-pool design spends all
pooling on a single assay of the ``N - n + 1`` leftover specimens.

Rounding note: group counts and pool sizes are integers, so requested
``alpha``/``beta`` are snapped to the nearest integer assay counts and the
pool size is the nearest integer of the quotient above with exact halves
rounded down (rounding half up can demand more specimens than exist).
Unused specimens are permitted and reported via ``specimens_unused``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DesignError

__all__ = [
    "GroupSpec",
    "DesignSpec",
    "two_assay_design",
    "three_assay_design",
    "one_pool_design",
    "alpha_grid",
    "three_assay_alpha_grid",
    "design_to_dict",
    "design_from_dict",
]


def _iround(x: float) -> int:
    """Nearest integer with exact halves rounded toward zero (x >= 0)."""
    return int(math.ceil(x - 0.5))


def _iround_ratio(num: int, den: int) -> int:
    """_iround(num/den) for nonnegative integers, without float roundoff."""
    return (2 * num + den - 1) // (2 * den)


def _snap_count(x: float, what: str) -> int:
    k = _iround(x)
    if abs(x - k) > 1e-6 * max(1.0, abs(x)) + 1e-9:
        warnings.warn("%s = %g snapped to %d assays" % (what, x, k))
    return max(k, 0)


@dataclass(frozen=True)
class GroupSpec:
    """One assay group: pool size, pooling-error flag, count, replicates."""

    pool_size: int
    gamma_flag: int
    assay_count: int
    replicates: int = 1

    def __post_init__(self):
        if self.pool_size < 1:
            raise DesignError("pool_size must be >= 1")
        if self.assay_count < 0:
            raise DesignError("assay_count must be >= 0")
        if self.replicates not in (1, 2):
            raise DesignError("replicates must be 1 or 2")
        if self.pool_size == 1 and self.gamma_flag != 0:
            raise DesignError("individual assays carry no pooling error")
        if self.pool_size > 1 and self.gamma_flag != 1:
            raise DesignError("pooled assays carry pooling error")

    @property
    def specimens(self) -> int:
        return self.pool_size * self.assay_count


@dataclass(frozen=True)
class DesignSpec:
    """A hybrid assay plan: ``N`` specimens, ``n`` assays, ordered groups."""

    N: int
    n: int
    groups: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if not (1 <= self.n <= self.N):
            raise DesignError("need 1 <= n <= N, got n=%d, N=%d" % (self.n, self.N))
        total_assays = sum(g.assay_count for g in self.groups)
        if total_assays != self.n:
            raise DesignError(
                "group assay counts sum to %d but n=%d" % (total_assays, self.n)
            )
        if self.specimens_used > self.N:
            raise DesignError(
                "design uses %d specimens but only N=%d are available"
                % (self.specimens_used, self.N)
            )

    @property
    def specimens_used(self) -> int:
        return sum(g.specimens for g in self.groups)

    @property
    def specimens_unused(self) -> int:
        return self.N - self.specimens_used

    @property
    def individual_assays(self) -> int:
        return sum(g.assay_count for g in self.groups if g.pool_size == 1)

    @property
    def alpha(self) -> float:
        return self.individual_assays / self.n

    @property
    def pooled_groups(self) -> tuple:
        return tuple(g for g in self.groups if g.pool_size > 1)

    def assay_schedule(self):
        """Yield (group_index, group) once per assay, in group order."""
        for gi, g in enumerate(self.groups):
            for _ in range(g.assay_count):
                yield gi, g


def two_assay_design(N: int, n: int, alpha: float) -> DesignSpec:
    """Hybrid design with one individual group and one pooled group.

    ``alpha`` is the fraction of the ``n`` assays measuring individual
    specimens; the pooled group size follows from integer rounding.
    """
    if n < 1 or N < n:
        raise DesignError("need N >= n >= 1")
    if not 0.0 <= alpha < 1.0:
        raise DesignError("alpha must be in [0, 1)")
    k = _snap_count(alpha * n, "alpha*n")
    m = n - k
    if m < 1:
        raise DesignError("alpha=%g leaves no pooled assays" % alpha)
    p = _iround_ratio(N - k, m)
    if p < 2:
        raise DesignError(
            "infeasible two-assay design (N=%d, n=%d, alpha=%g): pool size "
            "rounds to %d < 2" % (N, n, alpha, p)
        )
    used = k + m * p
    if used > N:
        raise DesignError(
            "infeasible two-assay design (N=%d, n=%d, alpha=%g): needs %d "
            "specimens" % (N, n, alpha, used)
        )
    groups = []
    if k > 0:
        groups.append(GroupSpec(1, 0, k))
    groups.append(GroupSpec(p, 1, m))
    return DesignSpec(N, n, tuple(groups))


def three_assay_design(N: int, n: int, alpha: float, beta: float, p2: int) -> DesignSpec:
    """Hybrid design with an individual group and two pooled groups.

    ``beta`` is the fraction of assays in the second pooled group, whose
    pool size ``p2`` is user-chosen; the first pooled group's size follows
    from rounding.  With ``beta = 0`` this reduces to the two-assay design.
    """
    if n < 1 or N < n:
        raise DesignError("need N >= n >= 1")
    if not 0.0 <= alpha < 1.0 or beta < 0.0 or alpha + beta >= 1.0 + 1e-12:
        raise DesignError("need alpha in [0,1), beta >= 0, alpha + beta < 1")
    k2 = _snap_count(beta * n, "beta*n")
    if k2 == 0:
        return two_assay_design(N, n, alpha)
    if p2 is None or int(p2) < 2:
        raise DesignError("p2 must be an integer >= 2")
    p2 = int(p2)
    k1 = _snap_count(alpha * n, "alpha*n")
    m = n - k1 - k2
    if m < 1:
        raise DesignError("alpha=%g, beta=%g leave no first-pool assays" % (alpha, beta))
    rem = N - k1 - k2 * p2
    if rem < 2 * m:
        raise DesignError(
            "infeasible three-assay design: only %d specimens left for %d "
            "pools" % (rem, m)
        )
    p1 = _iround_ratio(rem, m)
    if p1 < 2:
        raise DesignError("first pool size rounds to %d < 2" % p1)
    if p1 == p2:
        raise DesignError(
            "p1 = p2 = %d: the three-assay design degenerates to two-assay" % p1
        )
    used = k1 + m * p1 + k2 * p2
    if used > N:
        raise DesignError(
            "infeasible three-assay design (alpha=%g, beta=%g, p2=%d): needs "
            "%d specimens but N=%d" % (alpha, beta, p2, used, N)
        )
    groups = []
    if k1 > 0:
        groups.append(GroupSpec(1, 0, k1))
    groups.append(GroupSpec(p1, 1, m))
    groups.append(GroupSpec(p2, 1, k2))
    return DesignSpec(N, n, tuple(groups))


def one_pool_design(N: int, n: int) -> DesignSpec:
    """n-1 individual assays plus one pool of the remaining N-n+1 specimens."""
    if not N > n >= 2:
        raise DesignError("one-pool design needs N > n >= 2")
    return DesignSpec(N, n, (GroupSpec(1, 0, n - 1), GroupSpec(N - n + 1, 1, 1)))


def _exact_partition_counts(N: int, n: int):
    """Individual-assay counts k whose pooled remainder divides evenly, p >= 2."""
    out = []
    for k in range(0, n):
        m = n - k
        if (N - k) % m == 0 and (N - k) // m >= 2:
            out.append(k)
    return out


def alpha_grid(N: int, n: int, count: int):
    """Ascending feasible alpha values for two-assay sweeps.

    Feasible points use every specimen (the pooled remainder divides evenly)
    with pool size >= 2; the endpoints alpha=0 and the one-pool
    alpha=(n-1)/n are always included when feasible.  Returns ``count``
    values (fewer only if fewer exist).
    """
    if count < 2:
        raise DesignError("count must be >= 2")
    ks = _exact_partition_counts(N, n)
    if not ks:
        raise DesignError(
            "no feasible alpha for N=%d, n=%d (no room to pool)" % (N, n)
        )
    if len(ks) > count:
        idx = set(np.round(np.linspace(0, len(ks) - 1, count)).astype(int).tolist())
        i = 0
        while len(idx) < count and i < len(ks):
            idx.add(i)
            i += 1
        ks = [ks[i] for i in sorted(idx)]
    return [k / n for k in ks]


def three_assay_alpha_grid(N: int, n: int, beta: float, p2: int):
    """All alpha values for which a three-assay design can be constructed."""
    out = []
    for k1 in range(0, n):
        alpha = k1 / n
        try:
            three_assay_design(N, n, alpha, beta, p2)
        except DesignError:
            continue
        out.append(alpha)
    return out


def design_to_dict(design: DesignSpec) -> dict:
    return {
        "N": design.N,
        "n": design.n,
        "groups": [
            {
                "pool_size": g.pool_size,
                "gamma": g.gamma_flag,
                "count": g.assay_count,
                "replicates": g.replicates,
            }
            for g in design.groups
        ],
    }


def design_from_dict(doc: dict) -> DesignSpec:
    try:
        groups = tuple(
            GroupSpec(int(g["pool_size"]), int(g["gamma"]), int(g["count"]),
                      int(g.get("replicates", 1)))
            for g in doc["groups"]
        )
        return DesignSpec(int(doc["N"]), int(doc["n"]), groups)
    except (KeyError, TypeError, ValueError) as exc:
        raise DesignError("malformed design document: %s" % exc) from exc


def design_to_json(design: DesignSpec) -> str:
    return json.dumps(design_to_dict(design), indent=2, sort_keys=True)


def design_from_json(text: str) -> DesignSpec:
    return design_from_dict(json.loads(text))
