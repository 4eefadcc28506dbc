"""Hot numeric loops.

Every kernel exists twice: a numba-compiled loop (``*_nb``) and a vectorized
numpy version (``*_np``). The public aliases at the bottom pick one according
to :data:`ubot._accel.USE_NUMBA`. Both versions share a signature and must
agree to rounding; ``tests/test_kernels.py`` checks that.
"""

import numpy as np
from scipy.special import logsumexp

from ._accel import USE_NUMBA, njit

# --------------------------------------------------------------------------
# squared euclidean cost
# --------------------------------------------------------------------------


@njit
def sqeuclidean_nb(X, Y):
    n, d = X.shape
    p = Y.shape[0]
    out = np.empty((n, p))
    for i in range(n):
        for j in range(p):
            s = 0.0
            for k in range(d):
                t = X[i, k] - Y[j, k]
                s += t * t
            out[i, j] = s
    return out


def sqeuclidean_np(X, Y):
    # explicit differences rather than |x|^2 + |y|^2 - 2xy: exact zeros on
    # coincident points and never negative
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


# --------------------------------------------------------------------------
# log-domain (generalized) Sinkhorn
# --------------------------------------------------------------------------


@njit
def sinkhorn_nb(log_a, log_b, C, eps, rho, max_iter, tol, f0, g0):
    """Alternate softmin updates ``f <- rho * softmin_eps(C - g; b)``.

    ``rho = tau / (tau + eps)`` for KL-penalized marginals, 1 for hard ones.
    Returns ``(f, g, iterations, last_update_supnorm)``.
    """
    n, p = C.shape
    f = f0.copy()
    g = g0.copy()
    row = np.empty(p)
    col = np.empty(n)
    inv_eps = 1.0 / eps
    err = np.inf
    it = 0
    while it < max_iter:
        it += 1
        err = 0.0
        for i in range(n):
            mx = -np.inf
            for j in range(p):
                v = log_b[j] + (g[j] - C[i, j]) * inv_eps
                row[j] = v
                if v > mx:
                    mx = v
            s = 0.0
            for j in range(p):
                s += np.exp(row[j] - mx)
            new = -rho * eps * (mx + np.log(s))
            d = abs(new - f[i])
            if d > err:
                err = d
            f[i] = new
        for j in range(p):
            mx = -np.inf
            for i in range(n):
                v = log_a[i] + (f[i] - C[i, j]) * inv_eps
                col[i] = v
                if v > mx:
                    mx = v
            s = 0.0
            for i in range(n):
                s += np.exp(col[i] - mx)
            new = -rho * eps * (mx + np.log(s))
            d = abs(new - g[j])
            if d > err:
                err = d
            g[j] = new
        if err <= tol:
            break
    return f, g, it, err


def sinkhorn_np(log_a, log_b, C, eps, rho, max_iter, tol, f0, g0):
    f = f0.copy()
    g = g0.copy()
    Ce = C / eps
    err = np.inf
    it = 0
    while it < max_iter:
        it += 1
        f_new = -rho * eps * logsumexp(log_b[None, :] + g[None, :] / eps - Ce, axis=1)
        g_new = -rho * eps * logsumexp(log_a[:, None] + f_new[:, None] / eps - Ce, axis=0)
        err = max(np.max(np.abs(f_new - f)), np.max(np.abs(g_new - g)))
        f, g = f_new, g_new
        if err <= tol:
            break
    return f, g, it, err


# --------------------------------------------------------------------------
# Hungarian algorithm (shortest augmenting path with potentials), O(n^3)
# --------------------------------------------------------------------------


@njit
def hungarian_nb(C):
    n = C.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.zeros(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = C[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign


def hungarian_np(C):
    n = C.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    Cp = np.zeros((n + 1, n + 1))
    Cp[1:, 1:] = C
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = Cp[i0] - u[i0] - v
            upd = free & (cur < minv)
            minv[upd] = cur[upd]
            way[upd] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = np.empty(n, dtype=np.int64)
    assign[p[1:] - 1] = np.arange(n)
    return assign


# --------------------------------------------------------------------------
# primal mirror descent for KL-penalized UOT (eps >= 0)
# --------------------------------------------------------------------------


@njit
def _uot_state_nb(L, a, b, log_a, log_b, C, tau, eps, P, G):
    """Fill ``P = exp(L)`` and the gradient ``G``; return (energy, residual).

    Log-marginals come from log-sum-exp over ``L`` so they stay finite when a
    whole row or column of ``P`` underflows.
    """
    n, p = C.shape
    lr = np.empty(n)
    lc = np.empty(p)
    for i in range(n):
        mx = L[i, 0]
        for j in range(1, p):
            mx = max(mx, L[i, j])
        s = 0.0
        for j in range(p):
            s += np.exp(L[i, j] - mx)
        lr[i] = mx + np.log(s)
    for j in range(p):
        mx = L[0, j]
        for i in range(1, n):
            mx = max(mx, L[i, j])
        s = 0.0
        for i in range(n):
            s += np.exp(L[i, j] - mx)
        lc[j] = mx + np.log(s)
    lin = 0.0
    ent = 0.0
    for i in range(n):
        for j in range(p):
            pij = np.exp(L[i, j])
            P[i, j] = pij
            lin += C[i, j] * pij
            if eps > 0.0:
                ent += pij * (L[i, j] - log_a[i] - log_b[j]) - pij + a[i] * b[j]
    kl_r = 0.0
    for i in range(n):
        r = np.exp(lr[i])
        kl_r += r * (lr[i] - log_a[i]) - r + a[i]
    kl_c = 0.0
    for j in range(p):
        c = np.exp(lc[j])
        kl_c += c * (lc[j] - log_b[j]) - c + b[j]
    res = 0.0
    for i in range(n):
        gr = tau * (lr[i] - log_a[i])
        for j in range(p):
            gij = C[i, j] + gr + tau * (lc[j] - log_b[j])
            if eps > 0.0:
                gij += eps * (L[i, j] - log_a[i] - log_b[j])
            G[i, j] = gij
            w = abs(P[i, j] * gij)
            if w > res:
                res = w
    return lin + eps * ent + tau * (kl_r + kl_c), res


@njit
def uot_mirror_descent_nb(a, b, C, tau, eps, max_iter, tol, L0):
    """Exponentiated-gradient descent on ``F(exp(L))`` with backtracking.

    Returns ``(L, energy, iterations, residual)`` where the residual is the
    sup-norm of the gradient with respect to ``L``.
    """
    n, p = C.shape
    log_a = np.log(a)
    log_b = np.log(b)
    L = L0.copy()
    Lt = np.empty((n, p))
    G = np.empty((n, p))
    Gt = np.empty((n, p))
    P = np.empty((n, p))
    Pt = np.empty((n, p))
    F, res = _uot_state_nb(L, a, b, log_a, log_b, C, tau, eps, P, G)
    step = 1.0 / (2.0 * tau + eps + np.max(C) + 1e-300)
    it = 0
    while it < max_iter and res > tol:
        it += 1
        scale = abs(F)
        for i in range(n):
            for j in range(p):
                scale += abs(C[i, j] * P[i, j])
        first = True
        while True:
            for i in range(n):
                for j in range(p):
                    Lt[i, j] = L[i, j] - step * G[i, j]
            Ft, rest = _uot_state_nb(Lt, a, b, log_a, log_b, C, tau, eps, Pt, Gt)
            dec = 0.0
            for i in range(n):
                for j in range(p):
                    dec += G[i, j] * (P[i, j] - Pt[i, j])
            if Ft <= F - 0.3 * dec:
                break
            # below ulp(F) the energy cannot rank steps; fall back on the residual
            if Ft <= F + 1e-14 * scale and rest < res:
                break
            step *= 0.5
            first = False
            if step < 1e-300:
                return L, F, it, res
        L[:, :] = Lt
        P[:, :] = Pt
        G[:, :] = Gt
        F = Ft
        res = rest
        if first:
            step *= 1.5
    return L, F, it, res


def _uot_state_np(L, a, b, log_a, log_b, C, tau, eps):
    P = np.exp(L)
    lr = logsumexp(L, axis=1)
    lc = logsumexp(L, axis=0)
    r, c = np.exp(lr), np.exp(lc)
    F = np.sum(C * P)
    if eps > 0.0:
        F += eps * np.sum(P * (L - log_a[:, None] - log_b[None, :]) - P + np.outer(a, b))
    F += tau * np.sum(r * (lr - log_a) - r + a)
    F += tau * np.sum(c * (lc - log_b) - c + b)
    G = C + tau * (lr - log_a)[:, None] + tau * (lc - log_b)[None, :]
    if eps > 0.0:
        G = G + eps * (L - log_a[:, None] - log_b[None, :])
    return F, np.max(np.abs(P * G)), P, G


def uot_mirror_descent_np(a, b, C, tau, eps, max_iter, tol, L0):
    log_a = np.log(a)
    log_b = np.log(b)
    L = L0.copy()
    F, res, P, G = _uot_state_np(L, a, b, log_a, log_b, C, tau, eps)
    step = 1.0 / (2.0 * tau + eps + np.max(C) + 1e-300)
    it = 0
    while it < max_iter and res > tol:
        it += 1
        scale = abs(F) + np.sum(np.abs(C * P))
        first = True
        while True:
            Lt = L - step * G
            Ft, rest, Pt, Gt = _uot_state_np(Lt, a, b, log_a, log_b, C, tau, eps)
            if Ft <= F - 0.3 * np.sum(G * (P - Pt)):
                break
            if Ft <= F + 1e-14 * scale and rest < res:
                break
            step *= 0.5
            first = False
            if step < 1e-300:
                return L, F, it, res
        L, F, res, P, G = Lt, Ft, rest, Pt, Gt
        if first:
            step *= 1.5
    return L, F, it, res


if USE_NUMBA:
    sqeuclidean = sqeuclidean_nb
    sinkhorn = sinkhorn_nb
    hungarian = hungarian_nb
    uot_mirror_descent = uot_mirror_descent_nb
else:
    sqeuclidean = sqeuclidean_np
    sinkhorn = sinkhorn_np
    hungarian = hungarian_np
    uot_mirror_descent = uot_mirror_descent_np
