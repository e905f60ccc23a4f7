# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical kernels (see pykernels.py for the reference versions).

Hot paths: the Gamma-family observed density (pooled Gamma convolved with
Laplace errors), the censored log-likelihoods, and two-parameter
Nelder-Mead fits used by the Monte Carlo and bootstrap drivers.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, M_PI, exp, fabs, isfinite, lgamma, log, log1p, sqrt
from libc.stdlib cimport free, malloc
from scipy.special.cython_special cimport erfc, gammainc, gammainccinv, gammaincinv

from .pykernels import QuadratureError

cnp.import_array()

BACKEND_NAME = "c"

# ---------------------------------------------------------------------------
# Quadrature tables.
# ---------------------------------------------------------------------------

cdef double GL24_X[24]
cdef double GL24_W[24]
_glx, _glw = np.polynomial.legendre.leggauss(24)
for _i in range(24):
    GL24_X[_i] = _glx[_i]
    GL24_W[_i] = _glw[_i]

# Gauss-Kronrod 15(7) on [-1, 1]; positive abscissas, symmetric weights.
cdef double GK_X[8]
cdef double GK_WK[8]
cdef double GK_WG[4]
GK_X[0] = 0.9914553711208126
GK_X[1] = 0.9491079123427585
GK_X[2] = 0.8648644233597691
GK_X[3] = 0.7415311855993944
GK_X[4] = 0.5860872354676911
GK_X[5] = 0.4058451513773972
GK_X[6] = 0.2077849550078985
GK_X[7] = 0.0
GK_WK[0] = 0.0229353220105292
GK_WK[1] = 0.0630920926299786
GK_WK[2] = 0.1047900103222502
GK_WK[3] = 0.1406532597155259
GK_WK[4] = 0.1690047266392679
GK_WK[5] = 0.1903505780647854
GK_WK[6] = 0.2044329400752989
GK_WK[7] = 0.2094821410847278
GK_WG[0] = 0.1294849661688697
GK_WG[1] = 0.2797053914892767
GK_WG[2] = 0.3818300505051189
GK_WG[3] = 0.4179591836734694

cdef double _SQRT2 = sqrt(2.0)
cdef double _LOG_SQRT_2PI = 0.5 * log(2.0 * M_PI)

cdef double _EQUAL_SCALE_RTOL = 1e-8
cdef double _ERR_CLIP = 38.0
cdef double _GAMMA_UPPER_TAIL = 1e-12
cdef double _GAMMA_LOWER_TAIL = 1e-15


# ---------------------------------------------------------------------------
# Additive-error density/CDF: sum_r (A_r + B_r|u|) exp(-|u|/s_r).
# ---------------------------------------------------------------------------

cdef struct ErrTerms:
    int n
    double A[2]
    double B[2]
    double s[2]
    double smax


cdef void make_terms(double c, double d, int gamma_flag, ErrTerms* t) noexcept nogil:
    cdef double s, w
    t.n = 0
    t.smax = 0.0
    if not gamma_flag:
        d = 0.0
    if c == 0.0 and d == 0.0:
        return
    if c == 0.0 or d == 0.0:
        s = c if c > 0.0 else d
        t.n = 1
        t.A[0] = 0.5 / s
        t.B[0] = 0.0
        t.s[0] = s
        t.smax = s
        return
    if fabs(c - d) <= _EQUAL_SCALE_RTOL * (c if c > d else d):
        s = 0.5 * (c + d)
        t.n = 1
        t.A[0] = 0.25 / s
        t.B[0] = 0.25 / (s * s)
        t.s[0] = s
        t.smax = s
        return
    w = 1.0 / (2.0 * (c * c - d * d))
    t.n = 2
    t.A[0] = c * w
    t.B[0] = 0.0
    t.s[0] = c
    t.A[1] = -d * w
    t.B[1] = 0.0
    t.s[1] = d
    t.smax = c if c > d else d


cdef inline double err_pdf_c(double u, ErrTerms* t) noexcept nogil:
    cdef double au = fabs(u)
    cdef double out = 0.0
    cdef int r
    for r in range(t.n):
        out += (t.A[r] + t.B[r] * au) * exp(-au / t.s[r])
    return out


cdef inline double err_cdf_c(double u, ErrTerms* t) noexcept nogil:
    cdef double au = fabs(u)
    cdef double surv = 0.0
    cdef double s
    cdef int r
    for r in range(t.n):
        s = t.s[r]
        surv += ((t.A[r] * s + t.B[r] * s * s) + t.B[r] * s * au) * exp(-au / s)
    if u >= 0.0:
        return 1.0 - surv
    return surv


# ---------------------------------------------------------------------------
# Pooled-Gamma context and convolution integrand.
# ---------------------------------------------------------------------------

cdef struct GammaCtx:
    double k
    double theta
    double logc
    double glo
    double ghi


cdef void make_gamma(double k, double theta, GammaCtx* g) noexcept nogil:
    g.k = k
    g.theta = theta
    g.logc = lgamma(k) + k * log(theta)
    g.glo = 0.0 if k <= 1.0 else theta * gammaincinv(k, _GAMMA_LOWER_TAIL)
    g.ghi = theta * gammainccinv(k, _GAMMA_UPPER_TAIL)


cdef inline double gamma_pdf_c(double x, GammaCtx* g) noexcept nogil:
    if x < 0.0:
        return 0.0
    if g.k == 1.0:
        return exp(-x / g.theta - g.logc)
    if x == 0.0:
        return 0.0
    return exp((g.k - 1.0) * log(x) - x / g.theta - g.logc)


cdef inline double conv_f(double x, double z, GammaCtx* g, ErrTerms* t,
                          int cdf_mode) noexcept nogil:
    if cdf_mode:
        return gamma_pdf_c(x, g) * err_cdf_c(z - x, t)
    return gamma_pdf_c(x, g) * err_pdf_c(z - x, t)


cdef double panel_gl24(double a, double b, double z, GammaCtx* g, ErrTerms* t,
                       int cdf_mode) noexcept nogil:
    cdef double half = 0.5 * (b - a)
    cdef double mid = 0.5 * (a + b)
    cdef double acc = 0.0
    cdef int i
    for i in range(24):
        acc += GL24_W[i] * conv_f(mid + half * GL24_X[i], z, g, t, cdf_mode)
    return half * acc


cdef double panel_gl24_sqrtmap(double a, double b, double z, GammaCtx* g,
                               ErrTerms* t, int cdf_mode) noexcept nogil:
    # x = a + (b-a)*u^2 absorbs the x**(k-1) endpoint behaviour at x ~ a ~ 0.
    cdef double w = b - a
    cdef double acc = 0.0
    cdef double u
    cdef int i
    for i in range(24):
        u = 0.5 * (GL24_X[i] + 1.0)
        acc += 0.5 * GL24_W[i] * 2.0 * w * u * conv_f(a + w * u * u, z, g, t, cdf_mode)
    return acc


cdef double conv_fast_pdf(double z, GammaCtx* g, ErrTerms* t) noexcept nogil:
    """Fixed-panel evaluation of the convolution density (likelihood path)."""
    cdef double lo = g.glo
    cdef double hi = g.ghi
    cdef double reach = _ERR_CLIP * t.smax
    cdef double e0, e1, e2, e3, e4, total
    if z - reach > lo:
        lo = z - reach
    if z + reach < hi:
        hi = z + reach
    if hi <= lo:
        return 0.0
    e0 = lo
    e2 = z
    if e2 < lo:
        e2 = lo
    if e2 > hi:
        e2 = hi
    e1 = z - 6.0 * t.smax
    if e1 < e0:
        e1 = e0
    if e1 > e2:
        e1 = e2
    e3 = z + 6.0 * t.smax
    if e3 < e2:
        e3 = e2
    if e3 > hi:
        e3 = hi
    e4 = hi
    total = 0.0
    if e1 > e0:
        if g.k != 1.0 and g.k < 10.0 and e0 <= g.glo + 1e-300 + 0.01 * g.theta:
            total += panel_gl24_sqrtmap(e0, e1, z, g, t, 0)
        else:
            total += panel_gl24(e0, e1, z, g, t, 0)
    if e2 > e1:
        total += panel_gl24(e1, e2, z, g, t, 0)
    if e3 > e2:
        total += panel_gl24(e2, e3, z, g, t, 0)
    if e4 > e3:
        total += panel_gl24(e3, e4, z, g, t, 0)
    return total


cdef void panel_gk15(double a, double b, double z, GammaCtx* g, ErrTerms* t,
                     int cdf_mode, double* val, double* err) noexcept nogil:
    cdef double half = 0.5 * (b - a)
    cdef double mid = 0.5 * (a + b)
    cdef double acc_k = 0.0
    cdef double acc_g = 0.0
    cdef double fp, fm
    cdef int i
    for i in range(7):
        fp = conv_f(mid + half * GK_X[i], z, g, t, cdf_mode)
        fm = conv_f(mid - half * GK_X[i], z, g, t, cdf_mode)
        acc_k += GK_WK[i] * (fp + fm)
        if i % 2 == 1:
            acc_g += GK_WG[i // 2] * (fp + fm)
    fp = conv_f(mid, z, g, t, cdf_mode)
    acc_k += GK_WK[7] * fp
    acc_g += GK_WG[3] * fp
    val[0] = half * acc_k
    err[0] = fabs(half * (acc_k - acc_g)) * 1.5


DEF MAX_PANELS = 256


cdef double conv_adaptive(double z, GammaCtx* g, ErrTerms* t, double rtol,
                          int cdf_mode, double lo, double hi,
                          int* status) noexcept nogil:
    """GK15 bisection-adaptive convolution over [lo, hi]."""
    cdef double pa[MAX_PANELS]
    cdef double pb[MAX_PANELS]
    cdef double pv[MAX_PANELS]
    cdef double pe[MAX_PANELS]
    cdef int n = 0
    cdef int i, worst
    cdef double e1, e2, e3, emax, total, toterr, m, v, e
    cdef double edges[6]
    cdef int ne = 0
    status[0] = 0
    if hi <= lo:
        return 0.0
    edges[ne] = lo; ne += 1
    e1 = z - 6.0 * t.smax
    e2 = z
    e3 = z + 6.0 * t.smax
    if lo < e1 < hi:
        edges[ne] = e1; ne += 1
    if lo < e2 < hi:
        edges[ne] = e2; ne += 1
    if lo < e3 < hi:
        edges[ne] = e3; ne += 1
    edges[ne] = hi; ne += 1
    for i in range(ne - 1):
        panel_gk15(edges[i], edges[i + 1], z, g, t, cdf_mode, &pv[n], &pe[n])
        pa[n] = edges[i]
        pb[n] = edges[i + 1]
        n += 1
    while True:
        total = 0.0
        toterr = 0.0
        for i in range(n):
            total += pv[i]
            toterr += pe[i]
        if toterr <= rtol * fabs(total) or toterr <= 1e-305:
            return total
        if n >= MAX_PANELS - 1:
            status[0] = 1
            return total
        worst = 0
        emax = pe[0]
        for i in range(1, n):
            if pe[i] > emax:
                emax = pe[i]
                worst = i
        m = 0.5 * (pa[worst] + pb[worst])
        panel_gk15(m, pb[worst], z, g, t, cdf_mode, &pv[n], &pe[n])
        pa[n] = m
        pb[n] = pb[worst]
        n += 1
        panel_gk15(pa[worst], m, z, g, t, cdf_mode, &v, &e)
        pv[worst] = v
        pe[worst] = e
        pb[worst] = m


cdef double conv_pdf_accurate(double z, GammaCtx* g, ErrTerms* t, double rtol,
                              int* status) noexcept nogil:
    cdef double lo = g.glo
    cdef double hi = g.ghi
    cdef double reach = _ERR_CLIP * t.smax
    if z - reach > lo:
        lo = z - reach
    if z + reach < hi:
        hi = z + reach
    status[0] = 0
    if hi <= lo:
        return 0.0
    return conv_adaptive(z, g, t, rtol, 0, lo, hi, status)


cdef double conv_cdf_accurate(double z, GammaCtx* g, ErrTerms* t, double rtol,
                              int* status) noexcept nogil:
    cdef double x_cut = z - _ERR_CLIP * t.smax
    cdef double x_end = g.ghi
    cdef double bulk = 0.0
    cdef double lo, out
    status[0] = 0
    if x_cut < 0.0:
        x_cut = 0.0
    if z + _ERR_CLIP * t.smax < x_end:
        x_end = z + _ERR_CLIP * t.smax
    if x_cut > 0.0:
        bulk = gammainc(g.k, x_cut / g.theta)
    lo = x_cut if x_cut > g.glo else g.glo
    if x_end > lo:
        bulk += conv_adaptive(z, g, t, rtol, 1, lo, x_end, status)
    if bulk < 0.0:
        bulk = 0.0
    if bulk > 1.0:
        bulk = 1.0
    return bulk


# ---------------------------------------------------------------------------
# Public Gamma-family density / CDF (adaptive to rtol).
# ---------------------------------------------------------------------------

def gamma_obs_logpdf(double[::1] z, double k, double theta, double c, double d,
                     int gamma_flag, double rtol=1e-8):
    """Log density of the observed (pooled + error) Gamma-family assay value."""
    cdef Py_ssize_t n = z.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef double[::1] ov = out
    cdef GammaCtx g
    cdef ErrTerms t
    cdef int status = 0
    cdef double f
    cdef Py_ssize_t i
    make_gamma(k, theta, &g)
    make_terms(c, d, gamma_flag, &t)
    if t.n == 0:
        for i in range(n):
            f = gamma_pdf_c(z[i], &g)
            ov[i] = log(f) if f > 0.0 else -INFINITY
        return out
    for i in range(n):
        f = conv_pdf_accurate(z[i], &g, &t, rtol, &status)
        if status:
            raise QuadratureError(
                "observed-density quadrature did not converge at z=%g "
                "(k=%g, theta=%g)" % (z[i], k, theta))
        ov[i] = log(f) if f > 0.0 else -INFINITY
    return out


def gamma_obs_cdf(double[::1] z, double k, double theta, double c, double d,
                  int gamma_flag, double rtol=1e-8):
    """CDF of the observed (pooled + error) Gamma-family assay value."""
    cdef Py_ssize_t n = z.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef double[::1] ov = out
    cdef GammaCtx g
    cdef ErrTerms t
    cdef int status = 0
    cdef Py_ssize_t i
    make_gamma(k, theta, &g)
    make_terms(c, d, gamma_flag, &t)
    if t.n == 0:
        for i in range(n):
            ov[i] = gammainc(k, z[i] / theta) if z[i] > 0.0 else 0.0
        return out
    for i in range(n):
        ov[i] = conv_cdf_accurate(z[i], &g, &t, rtol, &status)
        if status:
            raise QuadratureError(
                "observed-CDF quadrature did not converge at z=%g "
                "(k=%g, theta=%g)" % (z[i], k, theta))
    return out


# ---------------------------------------------------------------------------
# Censored log-likelihoods on packed datasets.
# ---------------------------------------------------------------------------

cdef inline double log_ndtr_c(double x) noexcept nogil:
    cdef double q, x2
    if x > -1.0:
        return log1p(-0.5 * erfc(x / _SQRT2))
    q = 0.5 * erfc(-x / _SQRT2)
    if q > 0.0:
        return log(q)
    x2 = x * x
    return -0.5 * x2 - log(-x) - _LOG_SQRT_2PI + log1p(-1.0 / x2 + 3.0 / (x2 * x2))


cdef double _normal_loglik_c(double mu, double sx, double sm, double sp,
                             double llod, double* z, long* gs, long* pools,
                             long* gammas, double* mscale, double* pscale,
                             long* ncens, int ng) noexcept nogil:
    cdef double total = 0.0
    cdef double v, sd, r
    cdef int g
    cdef long j
    if not isfinite(mu) or not isfinite(sx) or sx <= 0.0:
        return -INFINITY
    for g in range(ng):
        v = sx * sx / pools[g] + gammas[g] * pscale[g] * sp * sp + mscale[g] * sm * sm
        if v <= 0.0 or not isfinite(v):
            return -INFINITY
        sd = sqrt(v)
        for j in range(gs[g], gs[g + 1]):
            r = z[j] - mu
            total += -0.5 * log(2.0 * M_PI * v) - r * r / (2.0 * v)
        if ncens[g] > 0:
            total += ncens[g] * log_ndtr_c((llod - mu) / sd)
    return total


cdef double _gamma_loglik_c(double a, double b, double c, double d,
                            double llod, double* z, long* gs, long* pools,
                            long* gammas, long* ncens, int ng,
                            double cdf_rtol) noexcept nogil:
    cdef double total = 0.0
    cdef double f, F
    cdef GammaCtx gc
    cdef ErrTerms t
    cdef int g, status
    cdef long j
    if not isfinite(a) or not isfinite(b) or a <= 0.0 or b <= 0.0:
        return -INFINITY
    for g in range(ng):
        make_gamma(a * pools[g], b / pools[g], &gc)
        make_terms(c, d, <int>gammas[g], &t)
        if t.n == 0:
            for j in range(gs[g], gs[g + 1]):
                f = gamma_pdf_c(z[j], &gc)
                if f <= 0.0:
                    return -INFINITY
                total += log(f)
            if ncens[g] > 0:
                F = gammainc(gc.k, llod / gc.theta) if llod > 0.0 else 0.0
                if F <= 0.0:
                    return -INFINITY
                total += ncens[g] * log(F)
        else:
            for j in range(gs[g], gs[g + 1]):
                f = conv_fast_pdf(z[j], &gc, &t)
                if f <= 0.0:
                    return -INFINITY
                total += log(f)
            if ncens[g] > 0:
                status = 0
                F = conv_cdf_accurate(llod, &gc, &t, cdf_rtol, &status)
                if status or F <= 0.0:
                    return -INFINITY
                total += ncens[g] * log(F)
    return total


cdef inline long* _lp(long[::1] a) noexcept nogil:
    return &a[0] if a.shape[0] > 0 else NULL


def normal_loglik(double mu, double sigma_x, double sigma_m, double sigma_p,
                  double llod, double[::1] z, long[::1] group_start,
                  long[::1] pools, long[::1] gammas, double[::1] mscale,
                  double[::1] pscale, long[::1] ncens):
    """Censored log-likelihood for the Normal family on a packed dataset."""
    cdef int ng = pools.shape[0]
    cdef double* zp = &z[0] if z.shape[0] > 0 else NULL
    return _normal_loglik_c(mu, sigma_x, sigma_m, sigma_p, llod, zp,
                            &group_start[0], _lp(pools), _lp(gammas),
                            &mscale[0], &pscale[0], _lp(ncens), ng)


def gamma_loglik(double a, double b, double c, double d, double llod,
                 double[::1] z, long[::1] group_start, long[::1] pools,
                 long[::1] gammas, long[::1] ncens, double rtol=1e-7):
    """Censored log-likelihood for the Gamma family on a packed dataset."""
    cdef int ng = pools.shape[0]
    cdef double* zp = &z[0] if z.shape[0] > 0 else NULL
    cdef double out
    with nogil:
        out = _gamma_loglik_c(a, b, c, d, llod, zp, &group_start[0],
                              _lp(pools), _lp(gammas), _lp(ncens), ng, 1e-9)
    return out


# ---------------------------------------------------------------------------
# Two-parameter Nelder-Mead (standardized coordinates).
# ---------------------------------------------------------------------------

ctypedef double (*obj2_t)(double, double, void*) noexcept nogil


cdef struct NMResult:
    double x0
    double x1
    double f
    int nfev
    int converged


cdef inline double _finite_or_inf(double v) noexcept nogil:
    return v if isfinite(v) else INFINITY


cdef void nm2(obj2_t fun, void* ctx, double sx0, double sx1, double step,
              double xatol, double fatol, int maxiter, NMResult* res) noexcept nogil:
    cdef double px[3][2]
    cdef double fv[3]
    cdef int order[3]
    cdef int it, i, j, tmp, best
    cdef double xc0, xc1, xr0, xr1, xe0, xe1, xk0, xk1
    cdef double fr, fe, fk, xspread, fspread, d1, d2
    px[0][0] = sx0; px[0][1] = sx1
    px[1][0] = sx0 + step; px[1][1] = sx1
    px[2][0] = sx0; px[2][1] = sx1 + step
    for i in range(3):
        fv[i] = _finite_or_inf(fun(px[i][0], px[i][1], ctx))
    res.nfev = 3
    res.converged = 0
    for it in range(maxiter):
        # stable 3-element argsort on (fv, index)
        order[0] = 0; order[1] = 1; order[2] = 2
        for i in range(1, 3):
            j = i
            while j > 0 and (fv[order[j]] < fv[order[j - 1]]):
                tmp = order[j]; order[j] = order[j - 1]; order[j - 1] = tmp
                j -= 1
        # reorder in place via temp copies
        xc0 = px[order[0]][0]; xc1 = px[order[0]][1]; fr = fv[order[0]]
        xr0 = px[order[1]][0]; xr1 = px[order[1]][1]; fe = fv[order[1]]
        xe0 = px[order[2]][0]; xe1 = px[order[2]][1]; fk = fv[order[2]]
        px[0][0] = xc0; px[0][1] = xc1; fv[0] = fr
        px[1][0] = xr0; px[1][1] = xr1; fv[1] = fe
        px[2][0] = xe0; px[2][1] = xe1; fv[2] = fk

        d1 = fabs(px[1][0] - px[0][0])
        d2 = fabs(px[1][1] - px[0][1])
        xspread = d1 if d1 > d2 else d2
        d1 = fabs(px[2][0] - px[0][0])
        d2 = fabs(px[2][1] - px[0][1])
        if d1 > xspread:
            xspread = d1
        if d2 > xspread:
            xspread = d2
        fspread = fv[2] - fv[0]
        if xspread <= xatol and fspread <= fatol + 1e-12 * fabs(fv[0]):
            res.converged = 1
            break

        xc0 = 0.5 * (px[0][0] + px[1][0])
        xc1 = 0.5 * (px[0][1] + px[1][1])
        xr0 = xc0 + (xc0 - px[2][0])
        xr1 = xc1 + (xc1 - px[2][1])
        fr = _finite_or_inf(fun(xr0, xr1, ctx))
        res.nfev += 1
        if fr < fv[0]:
            xe0 = xc0 + 2.0 * (xc0 - px[2][0])
            xe1 = xc1 + 2.0 * (xc1 - px[2][1])
            fe = _finite_or_inf(fun(xe0, xe1, ctx))
            res.nfev += 1
            if fe < fr:
                px[2][0] = xe0; px[2][1] = xe1; fv[2] = fe
            else:
                px[2][0] = xr0; px[2][1] = xr1; fv[2] = fr
        elif fr < fv[1]:
            px[2][0] = xr0; px[2][1] = xr1; fv[2] = fr
        else:
            if fr < fv[2]:
                xk0 = xc0 + 0.5 * (xc0 - px[2][0])
                xk1 = xc1 + 0.5 * (xc1 - px[2][1])
            else:
                xk0 = xc0 - 0.5 * (xc0 - px[2][0])
                xk1 = xc1 - 0.5 * (xc1 - px[2][1])
            fk = _finite_or_inf(fun(xk0, xk1, ctx))
            res.nfev += 1
            if fk < (fr if fr < fv[2] else fv[2]):
                px[2][0] = xk0; px[2][1] = xk1; fv[2] = fk
            else:
                for i in range(1, 3):
                    px[i][0] = px[0][0] + 0.5 * (px[i][0] - px[0][0])
                    px[i][1] = px[0][1] + 0.5 * (px[i][1] - px[0][1])
                    fv[i] = _finite_or_inf(fun(px[i][0], px[i][1], ctx))
                    res.nfev += 1
    best = 0
    if fv[1] < fv[best]:
        best = 1
    if fv[2] < fv[best]:
        best = 2
    res.x0 = px[best][0]
    res.x1 = px[best][1]
    res.f = fv[best]


cdef struct FitCtx:
    double* z
    long* gs
    long* pools
    long* gammas
    double* mscale
    double* pscale
    long* ncens
    int ng
    double llod
    # normal: fixed error sds and standardization; gamma: fixed scales + base
    double sm
    double sp
    double mu0
    double s0
    double c
    double d
    double a0
    double b0
    double rtol


cdef double _normal_obj(double t0, double t1, void* vctx) noexcept nogil:
    cdef FitCtx* ctx = <FitCtx*>vctx
    cdef double ll
    if t1 > 500.0 or t1 < -500.0:
        return INFINITY
    ll = _normal_loglik_c(ctx.mu0 + t0 * ctx.s0, ctx.s0 * exp(t1), ctx.sm,
                          ctx.sp, ctx.llod, ctx.z, ctx.gs, ctx.pools,
                          ctx.gammas, ctx.mscale, ctx.pscale, ctx.ncens, ctx.ng)
    return -ll if isfinite(ll) else INFINITY


cdef double _gamma_obj(double t0, double t1, void* vctx) noexcept nogil:
    cdef FitCtx* ctx = <FitCtx*>vctx
    cdef double ll
    if t0 > 500.0 or t0 < -500.0 or t1 > 500.0 or t1 < -500.0:
        return INFINITY
    ll = _gamma_loglik_c(ctx.a0 * exp(t0), ctx.b0 * exp(t1), ctx.c, ctx.d,
                         ctx.llod, ctx.z, ctx.gs, ctx.pools, ctx.gammas,
                         ctx.ncens, ctx.ng, ctx.rtol)
    return -ll if isfinite(ll) else INFINITY


def normal_fit2(double llod, double[::1] z, long[::1] group_start,
                long[::1] pools, long[::1] gammas, double[::1] mscale,
                double[::1] pscale, long[::1] ncens, double sigma_m,
                double sigma_p, double mu0, double s0, double xatol=1e-7,
                double fatol=1e-10, int maxiter=500):
    """Censored-Normal ML fit of (mu, sigma_x) with error scales held fixed."""
    cdef FitCtx ctx
    cdef NMResult res
    ctx.z = &z[0] if z.shape[0] > 0 else NULL
    ctx.gs = &group_start[0]
    ctx.pools = _lp(pools)
    ctx.gammas = _lp(gammas)
    ctx.mscale = &mscale[0]
    ctx.pscale = &pscale[0]
    ctx.ncens = _lp(ncens)
    ctx.ng = pools.shape[0]
    ctx.llod = llod
    ctx.sm = sigma_m
    ctx.sp = sigma_p
    ctx.mu0 = mu0
    ctx.s0 = s0
    with nogil:
        nm2(_normal_obj, &ctx, 0.0, 0.0, 0.25, xatol, fatol, maxiter, &res)
    return (mu0 + res.x0 * s0, s0 * exp(res.x1), -res.f, res.nfev,
            bool(res.converged))


def gamma_fit2(double llod, double[::1] z, long[::1] group_start,
               long[::1] pools, long[::1] gammas, long[::1] ncens, double c,
               double d, double a0, double b0, double xatol=1e-5,
               double fatol=1e-9, int maxiter=400, double rtol=1e-7):
    """Censored-Gamma ML fit of (a, b) with Laplace error scales held fixed."""
    cdef FitCtx ctx
    cdef NMResult res
    ctx.z = &z[0] if z.shape[0] > 0 else NULL
    ctx.gs = &group_start[0]
    ctx.pools = _lp(pools)
    ctx.gammas = _lp(gammas)
    ctx.ncens = _lp(ncens)
    ctx.ng = pools.shape[0]
    ctx.llod = llod
    ctx.c = c
    ctx.d = d
    ctx.a0 = a0
    ctx.b0 = b0
    ctx.rtol = rtol
    with nogil:
        nm2(_gamma_obj, &ctx, 0.0, 0.0, 0.25, xatol, fatol, maxiter, &res)
    return (a0 * exp(res.x0), b0 * exp(res.x1), -res.f, res.nfev,
            bool(res.converged))


def normal_fit2_batch(double[:, ::1] Z, double llod, long[::1] group_start,
                      long[::1] pools, long[::1] gammas, double sigma_m,
                      double sigma_p, double[::1] mu0, double[::1] s0,
                      double xatol=1e-6, double fatol=1e-9, int maxiter=400):
    """Row-wise censored-Normal fits for a matrix of assay values.

    Columns are grouped by ``group_start`` (assay-level offsets); values
    below ``llod`` count as censored.  Runs each fit from the initial point
    and once more from a perturbed start, keeping the better optimum.
    """
    cdef Py_ssize_t R = Z.shape[0]
    cdef int n_assay = <int>Z.shape[1]
    cdef int ng = pools.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mu = np.empty(R)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sg = np.empty(R)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ll = np.empty(R)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] conv = np.zeros(R, dtype=np.int64)
    cdef double[::1] mu_v = mu
    cdef double[::1] sg_v = sg
    cdef double[::1] ll_v = ll
    cdef long[::1] conv_v = conv
    cdef double* zbuf = <double*>malloc(n_assay * sizeof(double))
    cdef long* gsbuf = <long*>malloc((ng + 1) * sizeof(long))
    cdef long* ncbuf = <long*>malloc(ng * sizeof(long))
    cdef double* ones = <double*>malloc(ng * sizeof(double))
    cdef FitCtx ctx
    cdef NMResult r1, r2
    cdef Py_ssize_t r
    cdef int g, m
    cdef long j
    cdef double v
    if zbuf == NULL or gsbuf == NULL or ncbuf == NULL or ones == NULL:
        free(zbuf); free(gsbuf); free(ncbuf); free(ones)
        raise MemoryError()
    for g in range(ng):
        ones[g] = 1.0
    ctx.gs = gsbuf
    ctx.pools = _lp(pools)
    ctx.gammas = _lp(gammas)
    ctx.mscale = ones
    ctx.pscale = ones
    ctx.ncens = ncbuf
    ctx.ng = ng
    ctx.llod = llod
    ctx.sm = sigma_m
    ctx.sp = sigma_p
    ctx.z = zbuf
    with nogil:
        for r in range(R):
            m = 0
            gsbuf[0] = 0
            for g in range(ng):
                ncbuf[g] = 0
                for j in range(group_start[g], group_start[g + 1]):
                    v = Z[r, j]
                    if v >= llod:
                        zbuf[m] = v
                        m += 1
                    else:
                        ncbuf[g] += 1
                gsbuf[g + 1] = m
            if m == 0:
                mu_v[r] = 0.0
                sg_v[r] = 0.0
                ll_v[r] = -INFINITY
                conv_v[r] = 0
                continue
            ctx.mu0 = mu0[r]
            ctx.s0 = s0[r]
            nm2(_normal_obj, &ctx, 0.0, 0.0, 0.25, xatol, fatol, maxiter, &r1)
            ctx.mu0 = mu0[r] + 0.2 * s0[r]
            ctx.s0 = s0[r] * 1.25
            nm2(_normal_obj, &ctx, 0.0, 0.0, 0.25, xatol, fatol, maxiter, &r2)
            if -r2.f > -r1.f:
                mu_v[r] = ctx.mu0 + r2.x0 * ctx.s0
                sg_v[r] = ctx.s0 * exp(r2.x1)
                ll_v[r] = -r2.f
                conv_v[r] = 1 if r2.converged and isfinite(r2.f) else 0
            else:
                mu_v[r] = mu0[r] + r1.x0 * s0[r]
                sg_v[r] = s0[r] * exp(r1.x1)
                ll_v[r] = -r1.f
                conv_v[r] = 1 if r1.converged and isfinite(r1.f) else 0
    free(zbuf)
    free(gsbuf)
    free(ncbuf)
    free(ones)
    return mu, sg, ll, conv
