"""Pure-Python/NumPy reference implementations of the numerical kernels.

Functionally equivalent to the compiled extension ``_core``; used as the
import-time fallback and as the comparison baseline in the kernel benchmark.

Conventions shared by both backends
-----------------------------------
A packed dataset is a set of flat arrays describing observations grouped by
assay group:

``z``            numeric (uncensored) values, contiguous per group
``group_start``  int64, length ``n_groups + 1``, offsets into ``z``
``pools``        int64 pool size per group
``gammas``       int64 pooling-error flag per group
``mscale``       float64 measurement-error variance multiplier per group
``pscale``       float64 pooling-error variance multiplier per group
``ncens``        int64 censored-observation count per group

The Gamma-family observed density is the convolution of the pooled
Gamma(a*p, b/p) density with the additive-error density (Laplace, or the sum
of two Laplaces when the pooling-error flag is set).
"""

import math

import numpy as np
from scipy import integrate
from scipy.special import (
    gammainc,
    gammaincc,
    gammainccinv,
    gammaincinv,
    gammaln,
    log_ndtr,
)

BACKEND_NAME = "python"

# Scale threshold below which the two Laplace scales are treated as equal.
_EQUAL_SCALE_RTOL = 1e-8
# Error-density reach in units of the largest Laplace scale: exp(-38) ~ 3e-17.
_ERR_CLIP = 38.0
_ERR_CLIP_QUAD = 45.0
# Gamma support truncation: upper quantile per the density contract, lower
# quantile far enough out that the excluded mass is irrelevant.
_GAMMA_UPPER_TAIL = 1e-12
_GAMMA_LOWER_TAIL = 1e-15

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


class QuadratureError(RuntimeError):
    """Raised when adaptive quadrature fails to converge; carries diagnostics."""


def error_terms(c, d, gamma_flag):
    """Piecewise-exponential representation of the additive-error density.

    Returns a list of ``(A, B, s)`` triples such that the density of the
    error sum is ``sum_r (A_r + B_r*|u|) * exp(-|u|/s_r)``, or ``None`` when
    the error is degenerate at zero.
    """
    if not gamma_flag:
        if c == 0.0:
            return None
        return [(1.0 / (2.0 * c), 0.0, c)]
    if c == 0.0 and d == 0.0:
        return None
    if c == 0.0:
        return [(1.0 / (2.0 * d), 0.0, d)]
    if d == 0.0:
        return [(1.0 / (2.0 * c), 0.0, c)]
    if abs(c - d) <= _EQUAL_SCALE_RTOL * max(c, d):
        s = 0.5 * (c + d)
        return [(1.0 / (4.0 * s), 1.0 / (4.0 * s * s), s)]
    w = 1.0 / (2.0 * (c * c - d * d))
    return [(c * w, 0.0, c), (-d * w, 0.0, d)]


def err_pdf(u, terms):
    """Density of the additive-error sum at ``u`` (array ok)."""
    u = np.abs(np.asarray(u, dtype=float))
    out = np.zeros_like(u)
    for A, B, s in terms:
        out += (A + B * u) * np.exp(-u / s)
    return out


def err_cdf(u, terms):
    """CDF of the additive-error sum at ``u`` (array ok)."""
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    surv = np.zeros_like(au)
    for A, B, s in terms:
        surv += ((A * s + B * s * s) + B * s * au) * np.exp(-au / s)
    return np.where(u >= 0.0, 1.0 - surv, surv)


def _gamma_support(k, theta):
    lo = 0.0 if k <= 1.0 else theta * gammaincinv(k, _GAMMA_LOWER_TAIL)
    hi = theta * gammainccinv(k, _GAMMA_UPPER_TAIL)
    return lo, hi


def _gamma_logpdf(x, k, theta, logc):
    # logc = gammaln(k) + k*log(theta), precomputed by callers.
    x = np.asarray(x, dtype=float)
    if k == 1.0:
        return -x / theta - logc
    with np.errstate(divide="ignore"):
        return (k - 1.0) * np.log(x) - x / theta - logc


def _max_err_scale(terms):
    return max(s for _, _, s in terms)


# ---------------------------------------------------------------------------
# Public observed density / CDF for the Gamma family (adaptive quadrature).
# ---------------------------------------------------------------------------

def _quad_points(z, k, theta, lo, hi):
    pts = [z]
    for q in (0.01, 0.5, 0.99):
        pts.append(theta * gammaincinv(k, q))
    return [p for p in pts if lo < p < hi]


def _quad_pdf_one(z, k, theta, terms, rtol):
    smax = _max_err_scale(terms)
    glo, ghi = _gamma_support(k, theta)
    lo = max(glo, z - _ERR_CLIP_QUAD * smax)
    hi = min(ghi, z + _ERR_CLIP_QUAD * smax)
    if hi <= lo:
        return 0.0
    logc = gammaln(k) + k * math.log(theta)

    if k >= 1.0:
        def f(x):
            return math.exp(_gamma_logpdf(x, k, theta, logc)) * err_pdf(z - x, terms)

        res = integrate.quad(
            f, lo, hi, points=_quad_points(z, k, theta, lo, hi),
            epsabs=1e-200, epsrel=rtol, limit=400, full_output=1,
        )
    else:
        # Substitute x = t**(1/k) to absorb the x**(k-1) endpoint singularity.
        norm = 1.0 / (k * math.exp(logc))

        def f(t):
            x = t ** (1.0 / k)
            return norm * math.exp(-x / theta) * err_pdf(z - x, terms)

        tpts = [p ** k for p in _quad_points(z, k, theta, lo, hi)]
        res = integrate.quad(
            f, lo ** k, hi ** k, points=tpts,
            epsabs=1e-200, epsrel=rtol, limit=400, full_output=1,
        )
    if len(res) > 3:
        raise QuadratureError(
            "observed-density quadrature did not converge at z=%g "
            "(k=%g, theta=%g): %s" % (z, k, theta, res[3])
        )
    return max(res[0], 0.0)


def _quad_cdf_one(z, k, theta, terms, rtol):
    smax = _max_err_scale(terms)
    glo, ghi = _gamma_support(k, theta)
    x_cut = max(0.0, z - _ERR_CLIP_QUAD * smax)
    x_end = min(ghi, z + _ERR_CLIP_QUAD * smax)
    bulk = gammainc(k, x_cut / theta) if x_cut > 0.0 else 0.0
    if x_end <= max(x_cut, glo if k > 1.0 else 0.0):
        return min(max(bulk, 0.0), 1.0)
    lo = max(x_cut, glo)
    logc = gammaln(k) + k * math.log(theta)

    if k >= 1.0:
        def f(x):
            return math.exp(_gamma_logpdf(x, k, theta, logc)) * err_cdf(z - x, terms)

        res = integrate.quad(
            f, lo, x_end, points=_quad_points(z, k, theta, lo, x_end),
            epsabs=1e-14, epsrel=rtol, limit=400, full_output=1,
        )
    else:
        norm = 1.0 / (k * math.exp(logc))

        def f(t):
            x = t ** (1.0 / k)
            return norm * math.exp(-x / theta) * err_cdf(z - x, terms)

        tpts = [p ** k for p in _quad_points(z, k, theta, lo, x_end)]
        res = integrate.quad(
            f, lo ** k, x_end ** k, points=tpts,
            epsabs=1e-14, epsrel=rtol, limit=400, full_output=1,
        )
    if len(res) > 3:
        raise QuadratureError(
            "observed-CDF quadrature did not converge at z=%g "
            "(k=%g, theta=%g): %s" % (z, k, theta, res[3])
        )
    return min(max(bulk + res[0], 0.0), 1.0)


def gamma_obs_logpdf(z, k, theta, c, d, gamma_flag, rtol=1e-8):
    """Log density of the observed (pooled + error) Gamma-family assay value."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    terms = error_terms(c, d, gamma_flag)
    logc = gammaln(k) + k * math.log(theta)
    if terms is None:
        out = np.where(z > 0.0, _gamma_logpdf(np.maximum(z, 1e-300), k, theta, logc), -np.inf)
        if k == 1.0:
            out = np.where(z >= 0.0, -z / theta - logc, -np.inf)
        return out
    out = np.empty_like(z)
    for i, zi in enumerate(z):
        with np.errstate(divide="ignore"):
            out[i] = np.log(_quad_pdf_one(zi, k, theta, terms, rtol))
    return out


def gamma_obs_cdf(z, k, theta, c, d, gamma_flag, rtol=1e-8):
    """CDF of the observed (pooled + error) Gamma-family assay value."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    terms = error_terms(c, d, gamma_flag)
    if terms is None:
        return gammainc(k, np.maximum(z, 0.0) / theta)
    out = np.empty_like(z)
    for i, zi in enumerate(z):
        out[i] = _quad_cdf_one(zi, k, theta, terms, rtol)
    return out


# ---------------------------------------------------------------------------
# Likelihood kernels.
# ---------------------------------------------------------------------------

def _conv_pdf_gl(z, k, theta, terms):
    """Observed-density values by kink-split Gauss-Legendre (vectorized in z)."""
    z = np.asarray(z, dtype=float)
    smax = _max_err_scale(terms)
    glo, ghi = _gamma_support(k, theta)
    logc = gammaln(k) + k * math.log(theta)
    lo = np.maximum(glo, z - _ERR_CLIP * smax)
    hi = np.minimum(ghi, z + _ERR_CLIP * smax)
    mid = np.clip(z, lo, hi)
    out = np.zeros_like(z)
    for a, b in ((lo, mid), (mid, hi)):
        half = 0.5 * np.maximum(b - a, 0.0)
        center = 0.5 * (a + b)
        x = center[:, None] + half[:, None] * _GL_NODES[None, :]
        w = half[:, None] * _GL_WEIGHTS[None, :]
        vals = np.exp(_gamma_logpdf(np.maximum(x, 1e-300), k, theta, logc))
        vals *= err_pdf(z[:, None] - x, terms)
        out += np.sum(w * vals, axis=1)
    return out


def _conv_cdf_gl(z_scalar, k, theta, terms):
    smax = _max_err_scale(terms)
    glo, ghi = _gamma_support(k, theta)
    x_cut = max(0.0, z_scalar - _ERR_CLIP * smax)
    x_end = min(ghi, z_scalar + _ERR_CLIP * smax)
    bulk = gammainc(k, x_cut / theta) if x_cut > 0.0 else 0.0
    lo = max(x_cut, glo)
    if x_end <= lo:
        return min(max(bulk, 0.0), 1.0)
    logc = gammaln(k) + k * math.log(theta)
    mid = min(max(z_scalar, lo), x_end)
    total = bulk
    for a, b in ((lo, mid), (mid, x_end)):
        if b <= a:
            continue
        half = 0.5 * (b - a)
        x = 0.5 * (a + b) + half * _GL_NODES
        vals = np.exp(_gamma_logpdf(np.maximum(x, 1e-300), k, theta, logc))
        vals *= err_cdf(z_scalar - x, terms)
        total += half * np.sum(_GL_WEIGHTS * vals)
    return min(max(total, 0.0), 1.0)


def gamma_loglik(a, b, c, d, llod, z, group_start, pools, gammas, ncens, rtol=1e-7):
    """Censored log-likelihood for the Gamma family on a packed dataset."""
    if not (np.isfinite(a) and np.isfinite(b)) or a <= 0.0 or b <= 0.0:
        return -np.inf
    total = 0.0
    for g in range(len(pools)):
        p = pools[g]
        k = a * p
        theta = b / p
        terms = error_terms(c, d, gammas[g])
        zg = z[group_start[g]:group_start[g + 1]]
        if zg.size:
            if terms is None:
                logc = gammaln(k) + k * math.log(theta)
                if np.any(zg < 0.0) or (k > 1.0 and np.any(zg == 0.0)):
                    return -np.inf
                vals = _gamma_logpdf(np.maximum(zg, 1e-300), k, theta, logc)
                total += float(np.sum(vals))
            else:
                f = _conv_pdf_gl(zg, k, theta, terms)
                if np.any(f <= 0.0):
                    return -np.inf
                total += float(np.sum(np.log(f)))
        if ncens[g]:
            if terms is None:
                F = float(gammainc(k, max(llod, 0.0) / theta))
            else:
                F = _conv_cdf_gl(llod, k, theta, terms)
            if F <= 0.0:
                return -np.inf
            total += ncens[g] * math.log(F)
    return total


def normal_loglik(mu, sigma_x, sigma_m, sigma_p, llod, z, group_start, pools,
                  gammas, mscale, pscale, ncens):
    """Censored log-likelihood for the Normal family on a packed dataset."""
    if not np.isfinite(mu) or not np.isfinite(sigma_x) or sigma_x <= 0.0:
        return -np.inf
    total = 0.0
    for g in range(len(pools)):
        v = (sigma_x * sigma_x / pools[g]
             + gammas[g] * pscale[g] * sigma_p * sigma_p
             + mscale[g] * sigma_m * sigma_m)
        if v <= 0.0 or not np.isfinite(v):
            return -np.inf
        zg = z[group_start[g]:group_start[g + 1]]
        if zg.size:
            r = zg - mu
            total += -0.5 * zg.size * math.log(2.0 * math.pi * v)
            total += float(np.sum(r * r)) / (-2.0 * v)
        if ncens[g]:
            total += ncens[g] * float(log_ndtr((llod - mu) / math.sqrt(v)))
    return total


# ---------------------------------------------------------------------------
# Two-parameter Nelder-Mead fits (standardized coordinates).
# ---------------------------------------------------------------------------

def _nelder_mead2(fun, x0, step, xatol, fatol, maxiter):
    """Minimize a 2-D function with a fixed-coefficient Nelder-Mead simplex.

    Returns ``(x_best, f_best, n_eval, converged)``.  Mirrors the compiled
    implementation exactly so the two backends agree.
    """
    pts = np.array([x0, [x0[0] + step, x0[1]], [x0[0], x0[1] + step]], dtype=float)
    fv = np.empty(3)
    for i in range(3):
        fi = fun(pts[i])
        fv[i] = fi if np.isfinite(fi) else np.inf
    nfev = 3
    converged = False
    for _ in range(maxiter):
        order = np.argsort(fv, kind="stable")
        pts = pts[order]
        fv = fv[order]
        xspread = max(np.max(np.abs(pts[1] - pts[0])), np.max(np.abs(pts[2] - pts[0])))
        fspread = fv[2] - fv[0]
        if xspread <= xatol and fspread <= fatol + 1e-12 * abs(fv[0]):
            converged = True
            break
        xc = 0.5 * (pts[0] + pts[1])
        xr = xc + (xc - pts[2])
        fr = fun(xr)
        fr = fr if np.isfinite(fr) else np.inf
        nfev += 1
        if fr < fv[0]:
            xe = xc + 2.0 * (xc - pts[2])
            fe = fun(xe)
            fe = fe if np.isfinite(fe) else np.inf
            nfev += 1
            if fe < fr:
                pts[2], fv[2] = xe, fe
            else:
                pts[2], fv[2] = xr, fr
        elif fr < fv[1]:
            pts[2], fv[2] = xr, fr
        else:
            if fr < fv[2]:
                xk = xc + 0.5 * (xc - pts[2])
            else:
                xk = xc - 0.5 * (xc - pts[2])
            fk = fun(xk)
            fk = fk if np.isfinite(fk) else np.inf
            nfev += 1
            if fk < min(fr, fv[2]):
                pts[2], fv[2] = xk, fk
            else:
                for i in (1, 2):
                    pts[i] = pts[0] + 0.5 * (pts[i] - pts[0])
                    fi = fun(pts[i])
                    fv[i] = fi if np.isfinite(fi) else np.inf
                    nfev += 1
    best = int(np.argmin(fv))
    return pts[best].copy(), fv[best], nfev, converged


def normal_fit2(llod, z, group_start, pools, gammas, mscale, pscale, ncens,
                sigma_m, sigma_p, mu0, s0, xatol=1e-7, fatol=1e-10, maxiter=500):
    """Censored-Normal ML fit of (mu, sigma_x) with error scales held fixed.

    Optimizes (mu - mu0)/s0 and log(sigma_x/s0); returns
    ``(mu, sigma_x, loglik, n_eval, converged)``.
    """
    def negll(t):
        return -normal_loglik(mu0 + t[0] * s0, s0 * math.exp(t[1]),
                              sigma_m, sigma_p, llod, z, group_start, pools,
                              gammas, mscale, pscale, ncens)

    x, f, nfev, conv = _nelder_mead2(negll, np.zeros(2), 0.25, xatol, fatol, maxiter)
    return mu0 + x[0] * s0, s0 * math.exp(x[1]), -f, nfev, conv


def gamma_fit2(llod, z, group_start, pools, gammas, ncens, c, d, a0, b0,
               xatol=1e-5, fatol=1e-9, maxiter=400, rtol=1e-7):
    """Censored-Gamma ML fit of (a, b) with Laplace error scales held fixed.

    Optimizes log(a/a0) and log(b/b0); returns
    ``(a, b, loglik, n_eval, converged)``.
    """
    def negll(t):
        return -gamma_loglik(a0 * math.exp(t[0]), b0 * math.exp(t[1]), c, d,
                             llod, z, group_start, pools, gammas, ncens, rtol)

    x, f, nfev, conv = _nelder_mead2(negll, np.zeros(2), 0.25, xatol, fatol, maxiter)
    return a0 * math.exp(x[0]), b0 * math.exp(x[1]), -f, nfev, conv


def normal_fit2_batch(Z, llod, group_start, pools, gammas, sigma_m, sigma_p,
                      mu0, s0, xatol=1e-6, fatol=1e-9, maxiter=400):
    """Row-wise censored-Normal fits for a matrix of bootstrap/MC assay values.

    ``Z`` is (replications x assays) with columns grouped per ``group_start``;
    values below ``llod`` are treated as censored.  Returns arrays
    ``(mu, sigma, loglik, converged)``.
    """
    Z = np.asarray(Z, dtype=float)
    R = Z.shape[0]
    ng = len(pools)
    ones = np.ones(ng)
    mu = np.empty(R)
    sg = np.empty(R)
    ll = np.empty(R)
    conv = np.zeros(R, dtype=np.int64)
    for r in range(R):
        zs = []
        nc = np.zeros(ng, dtype=np.int64)
        gs = np.zeros(ng + 1, dtype=np.int64)
        for g in range(ng):
            vals = Z[r, group_start[g]:group_start[g + 1]]
            keep = vals[vals >= llod]
            nc[g] = vals.size - keep.size
            zs.append(keep)
            gs[g + 1] = gs[g] + keep.size
        zr = np.concatenate(zs) if zs else np.empty(0)
        if zr.size == 0:
            mu[r] = np.nan
            sg[r] = np.nan
            ll[r] = -np.inf
            continue
        m, s, l, _, cv = normal_fit2(llod, zr, gs, pools, gammas, ones, ones,
                                     nc, sigma_m, sigma_p, mu0[r], s0[r],
                                     xatol, fatol, maxiter)
        m2, s2, l2, _, cv2 = normal_fit2(llod, zr, gs, pools, gammas, ones,
                                         ones, nc, sigma_m, sigma_p,
                                         mu0[r] + 0.2 * s0[r], s0[r] * 1.25,
                                         xatol, fatol, maxiter)
        if l2 > l:
            m, s, l, cv = m2, s2, l2, cv2
        mu[r] = m
        sg[r] = s
        ll[r] = l
        conv[r] = 1 if cv and np.isfinite(l) else 0
    return mu, sg, ll, conv
