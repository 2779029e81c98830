"""Pure numpy implementation of the profile-likelihood kernels.

This is the fallback used when the compiled ``_ckernels`` extension is not
available, and the reference the compiled version is tested against.  Both
implement the same algorithm step for step.

Status codes returned by :func:`newton`:

0  converged (gradient sup-norm below ``tol``)
1  iteration limit reached
2  coefficients left the ``[-bound, bound]`` box
3  no ascent direction (Hessian not negative definite, or step halving
   exhausted)
"""
import numpy as np

OK, MAX_ITER, DIVERGED, NO_ASCENT = 0, 1, 2, 3
TINY = 1e-250


def side_eval(V, R, E, d, lo, hi, gamma):
    """Log partial likelihood of event times ``lo..hi-1`` with one coefficient.

    Returns the value, gradient and Hessian in ``gamma``.
    """
    p = V.shape[1]
    if hi <= lo:
        return 0.0, np.zeros(p), np.zeros((p, p))
    eta = V @ gamma
    Rk = R[lo:hi]
    m = np.full(hi - lo, eta.max())
    Rw = Rk * np.exp(eta - m[0])
    s0 = Rw.sum(axis=1)
    low = s0 < TINY
    if low.any():
        # risk-set terms underflowed under the global shift; redo those rows
        m[low] = np.where(Rk[low] != 0, eta, -np.inf).max(axis=1)
        Rw[low] = Rk[low] * np.exp(np.where(Rk[low] != 0, eta - m[low, None], -np.inf))
        s0[low] = Rw[low].sum(axis=1)
    Es = E[lo:hi]
    ds = d[lo:hi]
    s1 = Rw @ V
    s2 = np.einsum("kl,lp,lq->kpq", Rw, V, V)
    f = float((Es @ eta).sum() - (ds * (np.log(s0) + m)).sum())
    zbar = s1 / s0[:, None]
    g = Es.sum(axis=0) @ V - ds @ zbar
    H = -(np.einsum("k,kpq->pq", ds, s2 / s0[:, None, None])
          - np.einsum("k,kp,kq->pq", ds, zbar, zbar))
    return f, g, H


def newton(V, R, E, d, lo, hi, gamma0, tol, max_iter, max_halving, bound, state=None):
    """Maximise :func:`side_eval` over ``gamma`` with step-halving Newton.

    ``state`` optionally supplies ``(f, g, H)`` at ``gamma0`` so the first
    evaluation can be skipped.  Returns ``(gamma, f, status)``; use
    :func:`newton_state` to also get the final gradient and Hessian.
    """
    gamma, f, status, _, _ = newton_state(V, R, E, d, lo, hi, gamma0, tol, max_iter,
                                          max_halving, bound, state)
    return gamma, f, status


def newton_state(V, R, E, d, lo, hi, gamma0, tol, max_iter, max_halving, bound, state=None):
    gamma = np.array(gamma0, dtype=float)
    if state is None:
        f, g, H = side_eval(V, R, E, d, lo, hi, gamma)
    else:
        f, g, H = state
    it = 0
    while True:
        if np.max(np.abs(g), initial=0.0) < tol:
            return gamma, f, OK, g, H
        if it == max_iter:
            return gamma, f, MAX_ITER, g, H
        try:
            c = np.linalg.cholesky(-H)
        except np.linalg.LinAlgError:
            return gamma, f, NO_ASCENT, g, H
        step = np.linalg.solve(c.T, np.linalg.solve(c, g))
        t = 1.0
        accepted = False
        for _ in range(max_halving):
            cand = gamma + t * step
            fc, gc, Hc = side_eval(V, R, E, d, lo, hi, cand)
            if np.isfinite(fc) and fc >= f - 1e-12 * (1.0 + abs(f)):
                gamma, f, g, H = cand, fc, gc, Hc
                accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted:
            return gamma, f, NO_ASCENT, g, H
        if np.max(np.abs(gamma)) > bound:
            return gamma, f, DIVERGED, g, H


def _sweep(V, R, E, d, split, upward, init, coef, loglik, status, tol, max_iter,
           max_halving, bound):
    K = d.shape[0]
    C = split.shape[0]
    good = init.copy()
    gam = init.copy()
    state = None
    prev_lo = prev_hi = 0
    order = range(C) if upward else range(C - 1, -1, -1)
    for c in order:
        lo, hi = (0, int(split[c])) if upward else (int(split[c]), K)
        if hi <= lo:
            coef[c] = init
            status[c] = OK
            continue
        if state is not None:
            a, b = (prev_hi, hi) if upward else (lo, prev_lo)
            fa, ga, Ha = side_eval(V, R, E, d, a, b, gam)
            state = (state[0] + fa, state[1] + ga, state[2] + Ha)
        gam, f, s, g, H = newton_state(V, R, E, d, lo, hi, gam, tol, max_iter,
                                       max_halving, bound, state)
        coef[c] = gam
        loglik[c] += f
        status[c] = s
        if s == OK:
            state = (f, g, H)
            prev_lo, prev_hi = lo, hi
            good = gam.copy()
        else:
            state = None
            gam = good.copy()


def profile_fit(V, R, E, d, split, tol, max_iter, max_halving, bound):
    """Profile the change-point partial likelihood over candidate splits.

    ``split[c]`` is the number of event times on the pre-change side for
    candidate ``c`` (nondecreasing in ``c``).  The pre-change side is swept
    upward and the post-change side downward.  Each candidate warm-starts
    from its neighbour's optimum; when that neighbour converged, the value,
    gradient and Hessian at the warm start are obtained by adding only the
    rows that entered the fit.  Both sweeps start from the no-change-point
    Cox fit, which is also the value reported for an empty side.

    Returns ``(loglik, alpha, beta, status_alpha, status_beta, cox, cox_status)``.
    """
    K = d.shape[0]
    p = V.shape[1]
    C = split.shape[0]
    cox, _, cox_status = newton(V, R, E, d, 0, K, np.zeros(p), tol, max_iter,
                                max_halving, bound)
    if cox_status != OK:
        cox = np.zeros(p)
    loglik = np.zeros(C)
    alpha = np.empty((C, p))
    beta = np.empty((C, p))
    st_a = np.zeros(C, dtype=np.int8)
    st_b = np.zeros(C, dtype=np.int8)
    _sweep(V, R, E, d, split, True, cox, alpha, loglik, st_a, tol, max_iter, max_halving, bound)
    _sweep(V, R, E, d, split, False, cox, beta, loglik, st_b, tol, max_iter, max_halving, bound)
    return loglik, alpha, beta, st_a, st_b, cox, cox_status
