"""Slow, independent reference implementations used as test oracles.

None of these share code with the package: they are written from the
defining formulas with plain loops.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog


def conv_direct(x, w, b, stride=1, pad=0):
    """Six nested loops over (n, o, i, j, c, di/dj)."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for s in range(n):
        for f in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = b[f]
                    for ch in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += w[f, ch, di, dj] * xp[s, ch, i * stride + di, j * stride + dj]
                    out[s, f, i, j] = acc
    return out


def pool_scan(m, k=2, stride=2, same_pad=False):
    """Window scan on a 2-D map; with same_pad windows are clamped at the bottom/right edge."""
    h, w = m.shape
    if same_pad:
        rows = range(0, h, stride)
        cols = range(0, w, stride)
    else:
        rows = range(0, h - k + 1, stride)
        cols = range(0, w - k + 1, stride)
    out = np.empty((len(rows), len(cols)))
    for a, i in enumerate(rows):
        for bcol, j in enumerate(cols):
            out[a, bcol] = max(m[r, c] for r in range(i, min(i + k, h)) for c in range(j, min(j + k, w)))
    return out


def central_difference(f, x, eps=1e-6):
    """Numerical gradient of scalar f at array x, entry by entry."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        fp = f(x)
        x[idx] = old - eps
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def prior_direct(U, w, h, normalized=True):
    """Direct double sum V[y, x] = sum_ij U[j, i] k_x(x - x_i) k_y(y - y_j).

    Grid points sit at (i + 0.5) * s - 0.5 and pixel positions are clamped to
    [first grid point, last grid point] on each axis.
    """
    hc, wc = U.shape
    sx, sy = w / wc, h / hc
    gx = [(i + 0.5) * sx - 0.5 for i in range(wc)]
    gy = [(j + 0.5) * sy - 0.5 for j in range(hc)]
    V = np.zeros((h, w))
    for y in range(h):
        py = min(max(y, gy[0]), gy[-1])
        for x in range(w):
            px = min(max(x, gx[0]), gx[-1])
            acc = 0.0
            for j in range(hc):
                ky = max(0.0, sy - abs(py - gy[j]))
                for i in range(wc):
                    kx = max(0.0, sx - abs(px - gx[i]))
                    acc += U[j, i] * kx * ky
            V[y, x] = acc / (sx * sy) if normalized else acc
    return V


def loss_direct(phi, y, U, alpha, lam):
    """Max-normalized weighted loss written as explicit sums."""
    total = 0.0
    for p, t in zip(phi, y):
        p = np.asarray(p, dtype=float).ravel()
        t = np.asarray(t, dtype=float).ravel()
        peak = max(p)
        total += sum(((pi / peak - ti) / (alpha - ti)) ** 2 for pi, ti in zip(p, t))
    return total / len(phi) + lam * sum((1.0 - u) ** 2 for u in np.ravel(U))


def pair_count_auc(pos, neg):
    """Fraction of (positive, negative) pairs ranked correctly, ties worth 1/2."""
    score = 0.0
    for p in pos:
        for q in neg:
            score += 1.0 if p > q else 0.5 if p == q else 0.0
    return score / (len(pos) * len(neg))


def _support_and_cost(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    a, b = a / a.sum(), b / b.sum()
    pa = [(r, c) for r in range(a.shape[0]) for c in range(a.shape[1]) if a[r, c] > 0]
    pb = [(r, c) for r in range(b.shape[0]) for c in range(b.shape[1]) if b[r, c] > 0]
    cost = np.array([[math.hypot(p[0] - q[0], p[1] - q[1]) for q in pb] for p in pa])
    return np.array([a[p] for p in pa]), np.array([b[q] for q in pb]), cost


def emd_vertex_enumeration(a, b):
    """Minimum cost over every basic feasible solution of the transport polytope.

    Feasible only for tiny supports (m*n choose m+n-1 bases).
    """
    sa, sb, cost = _support_and_cost(a, b)
    m, n = cost.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        for j in range(n):
            A[i, i * n + j] = 1.0
            A[m + j, i * n + j] = 1.0
    A, rhs = A[:-1], np.concatenate([sa, sb])[:-1]  # one constraint is redundant
    best = math.inf
    for cols in itertools.combinations(range(m * n), m + n - 1):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-9:
            continue
        xb = np.linalg.solve(B, rhs)
        if np.all(xb >= -1e-13):
            best = min(best, float(cost.ravel()[list(cols)] @ xb))
    return best


def emd_dual(a, b):
    """max sum a_i u_i + sum b_j v_j  s.t. u_i + v_j <= c_ij (strong duality)."""
    sa, sb, cost = _support_and_cost(a, b)
    m, n = cost.shape
    A = np.zeros((m * n, m + n))
    for i in range(m):
        for j in range(n):
            A[i * n + j, i] = 1.0
            A[i * n + j, m + j] = 1.0
    res = linprog(-np.concatenate([sa, sb]), A_ub=A, b_ub=cost.ravel(),
                  bounds=(None, None), method="highs-ipm")
    assert res.status == 0, res.message
    return -res.fun
