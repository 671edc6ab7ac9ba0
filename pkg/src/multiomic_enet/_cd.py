"""Compiled coordinate-descent kernel for penalised weighted least squares."""
import numpy as np
from numba import njit


@njit(cache=True)
def _sweep(X, wt, r, beta, xwx, l1, l2, active, only_active, inv_n):
    n, p = X.shape
    maxd = 0.0
    for j in range(p):
        if only_active and not active[j]:
            continue
        denom = xwx[j] + l2[j]
        if denom <= 0.0:
            continue
        g = 0.0
        for i in range(n):
            g += wt[i] * X[i, j] * r[i]
        u = g * inv_n + xwx[j] * beta[j]
        a = abs(u) - l1[j]
        new = 0.0
        if a > 0.0:
            new = a / denom if u > 0.0 else -a / denom
        d = new - beta[j]
        if d != 0.0:
            for i in range(n):
                r[i] -= d * X[i, j]
            beta[j] = new
            dd = denom * d * d
            if dd > maxd:
                maxd = dd
        if new != 0.0 or l1[j] == 0.0:
            active[j] = True
    return maxd


@njit(cache=True)
def _center(wt, r, sw):
    s = 0.0
    for i in range(r.size):
        s += wt[i] * r[i]
    d = s / sw
    for i in range(r.size):
        r[i] -= d
    return d


@njit(cache=True)
def wls_cd(X, z, wt, b0, beta, l1, l2, thr, max_sweeps):
    """Minimise ``(1/2N) sum wt (z - b0 - X beta)^2 + sum l1|b| + sum l2 b^2 / 2``.

    ``beta`` is updated in place. Returns ``(b0, sweeps, converged)``.
    Full sweeps alternate with sweeps restricted to the active set until a
    full sweep changes nothing above ``thr``.
    """
    n, p = X.shape
    inv_n = 1.0 / n
    sw = 0.0
    for i in range(n):
        sw += wt[i]
    xwx = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += wt[i] * X[i, j] * X[i, j]
        xwx[j] = s * inv_n
    r = z - b0
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= beta[j] * X[i, j]
    active = np.zeros(p, dtype=np.bool_)
    sweeps = 0
    while sweeps < max_sweeps:
        maxd = _sweep(X, wt, r, beta, xwx, l1, l2, active, False, inv_n)
        d0 = _center(wt, r, sw)
        b0 += d0
        maxd = max(maxd, sw * inv_n * d0 * d0)
        sweeps += 1
        if maxd < thr:
            return b0, sweeps, True
        while sweeps < max_sweeps:
            maxd = _sweep(X, wt, r, beta, xwx, l1, l2, active, True, inv_n)
            d0 = _center(wt, r, sw)
            b0 += d0
            maxd = max(maxd, sw * inv_n * d0 * d0)
            sweeps += 1
            if maxd < thr:
                break
    return b0, sweeps, False


@njit(cache=True)
def _log1pexp(t):
    if t > 0.0:
        return t + np.log1p(np.exp(-t))
    return np.log1p(np.exp(t))


@njit(cache=True)
def _sigmoid(t):
    if t >= 0.0:
        return 1.0 / (1.0 + np.exp(-t))
    e = np.exp(t)
    return e / (1.0 + e)


@njit(cache=True)
def _linear(X, b0, beta):
    n, p = X.shape
    eta = np.full(n, b0)
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(n):
                eta[i] += beta[j] * X[i, j]
    return eta


@njit(cache=True)
def objective(X, y, b0, beta, l1, l2):
    eta = _linear(X, b0, beta)
    s = 0.0
    for i in range(eta.size):
        s += _log1pexp(eta[i]) - y[i] * eta[i]
    s /= eta.size
    for j in range(beta.size):
        if beta[j] != 0.0:
            s += l1[j] * abs(beta[j]) + 0.5 * l2[j] * beta[j] * beta[j]
    return s


@njit(cache=True)
def kkt_max(X, y, b0, beta, l1, l2, lam):
    n, p = X.shape
    eta = _linear(X, b0, beta)
    resid = np.empty(n)
    g0 = 0.0
    for i in range(n):
        resid[i] = _sigmoid(eta[i]) - y[i]
        g0 += resid[i]
    worst = abs(g0 / n)
    scale = max(1.0, lam)
    for j in range(p):
        g = 0.0
        for i in range(n):
            g += X[i, j] * resid[i]
        g /= n
        if l1[j] == 0.0 and l2[j] == 0.0:
            v = abs(g)
        elif beta[j] != 0.0:
            sgn = 1.0 if beta[j] > 0.0 else -1.0
            v = abs(g + l2[j] * beta[j] + l1[j] * sgn) / scale
        else:
            v = max(abs(g) - l1[j], 0.0)
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def irls(X, y, b0, beta, l1, l2, lam, tol, max_outer, max_inner, kkt_tol, weight_floor):
    """Penalised logistic fit by IRLS with a backtracking step.

    ``beta`` is updated in place. Returns
    ``(b0, objective, converged, separated, n_iter, trace)``.
    """
    n, p = X.shape
    obj = objective(X, y, b0, beta, l1, l2)
    trace = np.empty(max_outer + 1)
    trace[0] = obj
    thr_final = (0.1 * tol) ** 2
    thr = 1e-8
    converged = False
    separated = False
    it = 0
    wt = np.empty(n)
    z = np.empty(n)
    while it < max_outer:
        it += 1
        eta = _linear(X, b0, beta)
        for i in range(n):
            pr = _sigmoid(eta[i])
            w = max(pr * (1.0 - pr), weight_floor)
            wt[i] = w
            z[i] = eta[i] + (y[i] - pr) / w
        nb = beta.copy()
        nb0, _, _ = wls_cd(X, z, wt, b0, nb, l1, l2, thr, max_inner)
        step = 1.0
        cb = nb.copy()
        cb0 = nb0
        cobj = objective(X, y, cb0, cb, l1, l2)
        while not (cobj <= obj + 1e-12 * max(1.0, abs(obj))) and step > 1e-8:
            step *= 0.5
            cb0 = b0 + step * (nb0 - b0)
            for j in range(p):
                cb[j] = beta[j] + step * (nb[j] - beta[j])
            cobj = objective(X, y, cb0, cb, l1, l2)
        if not np.isfinite(cobj):
            return b0, cobj, False, False, it, trace[:it]
        if cobj > obj:
            cb0 = b0
            cb[:] = beta
            cobj = obj
        change = abs(cb0 - b0)
        scale = max(1.0, abs(cb0))
        for j in range(p):
            change = max(change, abs(cb[j] - beta[j]))
            scale = max(scale, abs(cb[j]))
        b0 = cb0
        beta[:] = cb
        obj = cobj
        trace[it] = obj
        sep = True
        eta = _linear(X, b0, beta)
        for i in range(n):
            if abs(eta[i]) <= 30.0:
                sep = False
                break
        if sep:
            separated = True
            break
        if change <= tol * scale:
            if kkt_max(X, y, b0, beta, l1, l2, lam) <= kkt_tol:
                converged = True
                break
            thr_final *= 1e-4
            thr = thr_final
        else:
            thr = max(thr_final, min(1e-8, (1e-3 * change) ** 2))
    return b0, obj, converged, separated, it, trace[:it + 1]
