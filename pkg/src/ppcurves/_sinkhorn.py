"""Compiled kernels for the entropic solver.

Stabilized scaling iterations: potentials are absorbed into the Gibbs kernel
at every regularization stage and whenever a scaling vector leaves
[1e-30, 1e30], so no exponent ever under- or overflows.
"""
import math

import numpy as np
from numba import njit

_ABSORB = 1e30


@njit(cache=True)
def _build_kernel(f, g, C, eps, K):
    n, m = C.shape
    for i in range(n):
        for j in range(m):
            K[i, j] = math.exp((f[i] + g[j] - C[i, j]) / eps)


@njit(cache=True)
def sinkhorn_potentials(a, b, C, reg, max_iter, tol, scaling):
    n, m = C.shape
    f = np.zeros(n)
    g = np.zeros(m)
    u = np.ones(n)
    v = np.ones(m)
    K = np.empty((n, m))
    eps = max(C.max(), reg)
    it = 0
    converged = False
    while True:
        last = eps <= reg * scaling
        if last:
            eps = reg
        stage_tol = tol if last else max(tol, 1e-3)
        _build_kernel(f, g, C, eps, K)
        u[:] = 1.0
        v[:] = 1.0
        while it < max_iter:
            it += 1
            # row sums of the current plan give both the stopping error and the u update
            err = 0.0
            for i in range(n):
                s = 0.0
                for j in range(m):
                    s += K[i, j] * b[j] * v[j]
                err += a[i] * abs(u[i] * s - 1.0)
                u[i] = 1.0 / s if s > 0.0 else _ABSORB
            if err < stage_tol:
                if last:
                    converged = True
                break
            for j in range(m):
                s = 0.0
                for i in range(n):
                    s += K[i, j] * a[i] * u[i]
                v[j] = 1.0 / s if s > 0.0 else _ABSORB
            big = False
            for i in range(n):
                if u[i] > _ABSORB or u[i] < 1.0 / _ABSORB:
                    big = True
            for j in range(m):
                if v[j] > _ABSORB or v[j] < 1.0 / _ABSORB:
                    big = True
            if big:
                for i in range(n):
                    f[i] += eps * math.log(u[i])
                    u[i] = 1.0
                for j in range(m):
                    g[j] += eps * math.log(v[j])
                    v[j] = 1.0
                _build_kernel(f, g, C, eps, K)
        for i in range(n):
            f[i] += eps * math.log(u[i])
        for j in range(m):
            g[j] += eps * math.log(v[j])
        if last or it >= max_iter:
            break
        eps /= scaling
    return f, g, converged, it, eps


@njit(cache=True)
def plan_from_potentials(a, b, C, f, g, reg):
    n, m = C.shape
    P = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            P[i, j] = a[i] * b[j] * math.exp((f[i] + g[j] - C[i, j]) / reg)
    return P


@njit(cache=True)
def round_plan(P, a, b):
    n, m = P.shape
    Q = P.copy()
    for i in range(n):
        r = 0.0
        for j in range(m):
            r += Q[i, j]
        x = min(a[i] / r, 1.0) if r > 0.0 else 1.0
        for j in range(m):
            Q[i, j] *= x
    for j in range(m):
        c = 0.0
        for i in range(n):
            c += Q[i, j]
        y = min(b[j] / c, 1.0) if c > 0.0 else 1.0
        for i in range(n):
            Q[i, j] *= y
    er = a - Q.sum(axis=1)
    ec = b - Q.sum(axis=0)
    s = er.sum()
    if s > 0.0:
        for i in range(n):
            for j in range(m):
                Q[i, j] += er[i] * ec[j] / s
    return Q


@njit(cache=True)
def sinkhorn_cost(a, b, C, reg, max_iter, tol, scaling):
    f, g, conv, it, eps = sinkhorn_potentials(a, b, C, reg, max_iter, tol, scaling)
    P = round_plan(plan_from_potentials(a, b, C, f, g, eps), a, b)
    cost = 0.0
    n, m = C.shape
    for i in range(n):
        for j in range(m):
            cost += P[i, j] * C[i, j]
    return max(cost, 0.0), conv


@njit(cache=True)
def sinkhorn_cost_many(X, Y, A, B, reg, max_iter, tol, scaling):
    """Costs for stacked problems X[p] (n, d) vs Y[p] (m, d)."""
    npairs = X.shape[0]
    out = np.empty(npairs)
    ok = np.empty(npairs, dtype=np.bool_)
    n, m, d = X.shape[1], Y.shape[1], X.shape[2]
    C = np.empty((n, m))
    for p in range(npairs):
        for i in range(n):
            for j in range(m):
                s = 0.0
                for k in range(d):
                    t = X[p, i, k] - Y[p, j, k]
                    s += t * t
                C[i, j] = s
        out[p], ok[p] = sinkhorn_cost(A[p], B[p], C, reg, max_iter, tol, scaling)
    return out, ok
