# cython: language_level=3
"""Compiled profile-likelihood kernels.

Same algorithm and status codes as ``_pykernels``; see there for the
contract.  ``p`` is arbitrary but expected to be small; ``p == 1`` has a
dedicated inner loop.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, sqrt, isfinite, INFINITY
from libc.string cimport memcpy

cnp.import_array()

cdef enum:
    OK = 0
    MAX_ITER = 1
    DIVERGED = 2
    NO_ASCENT = 3


# below this a row's risk-set sum is recomputed with its own shift
cdef double TINY = 1e-250

ctypedef const double[:, ::1] mat
ctypedef const double[::1] vec


cdef double _eval1(mat V, mat R, mat E, vec d, Py_ssize_t lo, Py_ssize_t hi,
                   double* g, double* H, const double* eta, const double* w,
                   double m) noexcept nogil:
    cdef Py_ssize_t L = V.shape[0]
    cdef Py_ssize_t k, l
    cdef double f = 0.0, s0, s1, s2, r, rw, e, v, dk, zb, ls, mk, gg = 0.0, hh = 0.0
    for k in range(lo, hi):
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        for l in range(L):
            v = V[l, 0]
            r = R[k, l]
            if r != 0.0:
                rw = r * w[l]
                s0 += rw
                s1 += rw * v
                s2 += rw * v * v
            e = E[k, l]
            if e != 0.0:
                f += e * eta[l]
                gg += e * v
        dk = d[k]
        ls = log(s0) + m
        if s0 < TINY:
            # terms at risk underflowed under the global shift; redo the row
            mk = -INFINITY
            for l in range(L):
                if R[k, l] != 0.0 and eta[l] > mk:
                    mk = eta[l]
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            for l in range(L):
                r = R[k, l]
                if r != 0.0:
                    v = V[l, 0]
                    rw = r * exp(eta[l] - mk)
                    s0 += rw
                    s1 += rw * v
                    s2 += rw * v * v
            ls = log(s0) + mk
        zb = s1 / s0
        f -= dk * ls
        gg -= dk * zb
        hh -= dk * (s2 / s0 - zb * zb)
    g[0] = gg
    H[0] = hh
    return f


cdef double _eval(mat V, mat R, mat E, vec d, Py_ssize_t lo, Py_ssize_t hi,
                  const double* gamma, double* g, double* H, double* scratch) noexcept nogil:
    """Value, gradient and Hessian of the partial likelihood of rows lo..hi-1.

    ``scratch`` needs ``2 L + p + p*p`` doubles.
    """
    cdef Py_ssize_t L = V.shape[0]
    cdef Py_ssize_t p = V.shape[1]
    cdef Py_ssize_t k, l, i, j
    cdef double m, f = 0.0, s0, r, rw, e, dk, vi, ls, mk
    cdef double* eta = scratch
    cdef double* w = scratch + L
    cdef double* s1 = scratch + 2 * L
    cdef double* s2 = s1 + p
    for i in range(p):
        g[i] = 0.0
    for i in range(p * p):
        H[i] = 0.0
    if hi <= lo:
        return 0.0
    for l in range(L):
        eta[l] = 0.0
        for i in range(p):
            eta[l] += V[l, i] * gamma[i]
    m = eta[0]
    for l in range(1, L):
        if eta[l] > m:
            m = eta[l]
    for l in range(L):
        w[l] = exp(eta[l] - m)
    if p == 1:
        return _eval1(V, R, E, d, lo, hi, g, H, eta, w, m)
    for k in range(lo, hi):
        s0 = 0.0
        for i in range(p):
            s1[i] = 0.0
        for i in range(p * p):
            s2[i] = 0.0
        for l in range(L):
            r = R[k, l]
            if r != 0.0:
                rw = r * w[l]
                s0 += rw
                for i in range(p):
                    vi = rw * V[l, i]
                    s1[i] += vi
                    for j in range(p):
                        s2[i * p + j] += vi * V[l, j]
            e = E[k, l]
            if e != 0.0:
                f += e * eta[l]
                for i in range(p):
                    g[i] += e * V[l, i]
        dk = d[k]
        ls = log(s0) + m
        if s0 < TINY:
            mk = -INFINITY
            for l in range(L):
                if R[k, l] != 0.0 and eta[l] > mk:
                    mk = eta[l]
            s0 = 0.0
            for i in range(p):
                s1[i] = 0.0
            for i in range(p * p):
                s2[i] = 0.0
            for l in range(L):
                r = R[k, l]
                if r != 0.0:
                    rw = r * exp(eta[l] - mk)
                    s0 += rw
                    for i in range(p):
                        vi = rw * V[l, i]
                        s1[i] += vi
                        for j in range(p):
                            s2[i * p + j] += vi * V[l, j]
            ls = log(s0) + mk
        f -= dk * ls
        for i in range(p):
            g[i] -= dk * s1[i] / s0
        for i in range(p):
            for j in range(p):
                H[i * p + j] -= dk * (s2[i * p + j] / s0 - (s1[i] / s0) * (s1[j] / s0))
    return f


cdef int _chol_solve(double* A, double* b, Py_ssize_t p) noexcept nogil:
    """Solve A x = b in place (b <- x) for symmetric positive definite A.

    A is overwritten by its lower Cholesky factor.  Returns 0 on success.
    """
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(p):
        s = A[j * p + j]
        for k in range(j):
            s -= A[j * p + k] * A[j * p + k]
        if not s > 0.0:
            return 1
        A[j * p + j] = sqrt(s)
        for i in range(j + 1, p):
            s = A[i * p + j]
            for k in range(j):
                s -= A[i * p + k] * A[j * p + k]
            A[i * p + j] = s / A[j * p + j]
    for i in range(p):
        s = b[i]
        for k in range(i):
            s -= A[i * p + k] * b[k]
        b[i] = s / A[i * p + i]
    for i in range(p - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, p):
            s -= A[k * p + i] * b[k]
        b[i] = s / A[i * p + i]
    return 0


cdef inline Py_ssize_t _work_size(Py_ssize_t L, Py_ssize_t p) noexcept nogil:
    return 2 * L + 5 * p + 5 * p * p


cdef int _newton(mat V, mat R, mat E, vec d, Py_ssize_t lo, Py_ssize_t hi,
                 double* gamma, double* f_io, double* g_io, double* H_io,
                 bint have_state, double tol, int max_iter, int max_halving,
                 double bound, double* work) noexcept nogil:
    """Step-halving Newton ascent on rows lo..hi-1.

    With ``have_state`` the value, gradient and Hessian at the starting
    ``gamma`` are read from ``f_io``/``g_io``/``H_io``; otherwise they are
    computed.  On return those buffers hold the values at the final
    ``gamma``.
    """
    cdef Py_ssize_t L = V.shape[0]
    cdef Py_ssize_t p = V.shape[1]
    cdef Py_ssize_t i, h
    cdef int it = 0, status
    cdef double f, fc, t, gmax
    cdef bint accepted
    cdef double* scratch = work
    cdef double* gc = work + 2 * L + p + p * p
    cdef double* Hc = gc + p
    cdef double* step = Hc + p * p
    cdef double* cand = step + p
    cdef double* negH = cand + p
    cdef double* g = g_io
    cdef double* H = H_io
    cdef double* tmp

    if have_state:
        f = f_io[0]
    else:
        f = _eval(V, R, E, d, lo, hi, gamma, g, H, scratch)
    while True:
        gmax = 0.0
        for i in range(p):
            if fabs(g[i]) > gmax:
                gmax = fabs(g[i])
        if gmax < tol:
            status = OK
            break
        if it == max_iter:
            status = MAX_ITER
            break
        for i in range(p * p):
            negH[i] = -H[i]
        for i in range(p):
            step[i] = g[i]
        if _chol_solve(negH, step, p) != 0:
            status = NO_ASCENT
            break
        t = 1.0
        accepted = False
        for h in range(max_halving):
            for i in range(p):
                cand[i] = gamma[i] + t * step[i]
            fc = _eval(V, R, E, d, lo, hi, cand, gc, Hc, scratch)
            if isfinite(fc) and fc >= f - 1e-12 * (1.0 + fabs(f)):
                for i in range(p):
                    gamma[i] = cand[i]
                f = fc
                tmp = g; g = gc; gc = tmp
                tmp = H; H = Hc; Hc = tmp
                accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted:
            status = NO_ASCENT
            break
        gmax = 0.0
        for i in range(p):
            if fabs(gamma[i]) > gmax:
                gmax = fabs(gamma[i])
        if gmax > bound:
            status = DIVERGED
            break
    f_io[0] = f
    if g != g_io:
        memcpy(g_io, g, p * sizeof(double))
        memcpy(H_io, H, p * p * sizeof(double))
    return status


cdef void _sweep(mat V, mat R, mat E, vec d, const cnp.intp_t[::1] split, bint upward,
                 const double* init, double[:, ::1] coef, double[::1] loglik,
                 signed char[::1] status, double tol, int max_iter, int max_halving,
                 double bound, double* work) noexcept nogil:
    """Profile one side over all candidates, warm-starting from the neighbour.

    Upward sweeps fit rows ``0..split[c]-1`` for increasing ``c``; downward
    sweeps fit rows ``split[c]..K-1`` for decreasing ``c``.  When the
    previous candidate converged, the starting value/gradient/Hessian are
    obtained by adding only the rows that entered the fit.
    """
    cdef Py_ssize_t K = d.shape[0]
    cdef Py_ssize_t L = V.shape[0]
    cdef Py_ssize_t p = V.shape[1]
    cdef Py_ssize_t C = split.shape[0]
    cdef Py_ssize_t c, ci, i, lo, hi, prev_lo = 0, prev_hi = 0
    cdef bint have = False
    cdef int s
    cdef double sf = 0.0, fa
    cdef double* gam = work + _work_size(L, p)
    cdef double* good = gam + p
    cdef double* sg = good + p
    cdef double* sH = sg + p
    cdef double* ga = sH + p * p
    cdef double* Ha = ga + p
    memcpy(good, init, p * sizeof(double))
    memcpy(gam, init, p * sizeof(double))
    for ci in range(C):
        c = ci if upward else C - 1 - ci
        if upward:
            lo = 0
            hi = split[c]
        else:
            lo = split[c]
            hi = K
        if hi <= lo:
            for i in range(p):
                coef[c, i] = init[i]
            status[c] = OK
            continue
        if have:
            if upward:
                fa = _eval(V, R, E, d, prev_hi, hi, gam, ga, Ha, work)
            else:
                fa = _eval(V, R, E, d, lo, prev_lo, gam, ga, Ha, work)
            sf += fa
            for i in range(p):
                sg[i] += ga[i]
            for i in range(p * p):
                sH[i] += Ha[i]
        s = _newton(V, R, E, d, lo, hi, gam, &sf, sg, sH, have, tol, max_iter,
                    max_halving, bound, work)
        for i in range(p):
            coef[c, i] = gam[i]
        loglik[c] += sf
        status[c] = s
        if s == OK:
            have = True
            prev_lo = lo
            prev_hi = hi
            memcpy(good, gam, p * sizeof(double))
        else:
            have = False
            memcpy(gam, good, p * sizeof(double))


def side_eval(mat V, mat R, mat E, vec d, Py_ssize_t lo, Py_ssize_t hi, gamma):
    cdef Py_ssize_t p = V.shape[1]
    cdef double[::1] wk = np.empty(_work_size(V.shape[0], p))
    cdef double[::1] gam = np.array(gamma, dtype=float)
    g = np.empty(p)
    H = np.empty((p, p))
    cdef double[::1] gv = g
    cdef double[:, ::1] Hv = H
    cdef double f = _eval(V, R, E, d, lo, hi, &gam[0], &gv[0], &Hv[0, 0], &wk[0])
    return f, g, H


def newton(mat V, mat R, mat E, vec d, Py_ssize_t lo, Py_ssize_t hi, gamma0,
           double tol, int max_iter, int max_halving, double bound):
    cdef Py_ssize_t p = V.shape[1]
    cdef double[::1] wk = np.empty(_work_size(V.shape[0], p))
    gamma = np.array(gamma0, dtype=float)
    g = np.empty(p)
    H = np.empty((p, p))
    cdef double[::1] gv = gamma
    cdef double[::1] gg = g
    cdef double[:, ::1] HH = H
    cdef double f = 0.0
    cdef int status
    with nogil:
        status = _newton(V, R, E, d, lo, hi, &gv[0], &f, &gg[0], &HH[0, 0], False,
                         tol, max_iter, max_halving, bound, &wk[0])
    return gamma, f, status


def profile_fit(mat V, mat R, mat E, vec d, const cnp.intp_t[::1] split, double tol,
                int max_iter, int max_halving, double bound):
    cdef Py_ssize_t K = d.shape[0]
    cdef Py_ssize_t L = V.shape[0]
    cdef Py_ssize_t p = V.shape[1]
    cdef Py_ssize_t C = split.shape[0]
    cdef Py_ssize_t i
    cdef double[::1] wk = np.empty(_work_size(L, p) + 4 * p + 2 * p * p)
    cdef int cox_status
    cdef double f = 0.0

    cox_arr = np.zeros(p)
    gtmp = np.empty(p)
    Htmp = np.empty((p, p))
    cdef double[::1] cox = cox_arr
    cdef double[::1] gv = gtmp
    cdef double[:, ::1] Hv = Htmp
    loglik_arr = np.zeros(C)
    alpha_arr = np.empty((C, p))
    beta_arr = np.empty((C, p))
    sa_arr = np.zeros(C, dtype=np.int8)
    sb_arr = np.zeros(C, dtype=np.int8)

    with nogil:
        cox_status = _newton(V, R, E, d, 0, K, &cox[0], &f, &gv[0], &Hv[0, 0], False,
                             tol, max_iter, max_halving, bound, &wk[0])
        if cox_status != OK:
            for i in range(p):
                cox[i] = 0.0
    _sweep(V, R, E, d, split, True, &cox[0], alpha_arr, loglik_arr, sa_arr, tol,
           max_iter, max_halving, bound, &wk[0])
    _sweep(V, R, E, d, split, False, &cox[0], beta_arr, loglik_arr, sb_arr, tol,
           max_iter, max_halving, bound, &wk[0])
    return loglik_arr, alpha_arr, beta_arr, sa_arr, sb_arr, cox_arr, cox_status
