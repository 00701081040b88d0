"""Independent reference implementations used as test oracles.

None of these call into the package's array kernels: iterated integrals are
computed by dense midpoint quadrature of the polygon, variations by
exhaustive partition enumeration, and transport costs by enumerating the
vertices of the transportation polytope.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np


def iterated_integral(points, a: int, b: int, sub: int = 64):
    """(X_{a,b}, XX_{a,b}) of the polygon through ``points`` by midpoint quadrature.

    On each linear piece the midpoint rule is exact for int (X_u - X_s) dX_u,
    so the result only carries rounding error; ``sub`` sub-pieces per segment
    make the computation independent of the one-segment closed form.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    e = pts.shape[1]
    x0 = pts[a]
    area = np.zeros((e, e))
    for j in range(a, b):
        left, right = pts[j], pts[j + 1]
        for q in range(sub):
            u0 = left + (right - left) * q / sub
            u1 = left + (right - left) * (q + 1) / sub
            mid = 0.5 * (u0 + u1)
            area += np.outer(mid - x0, u1 - u0)
    return pts[b] - x0, area


def omega(points, a: int, b: int) -> float:
    x, xx = iterated_integral(points, a, b, sub=4)
    return float(np.linalg.norm(x) + np.sqrt(np.linalg.norm(xx)))


def p_variation_bruteforce(points, a: int, b: int, alpha: float) -> float:
    """max over every partition of [a, b] of sum omega^(1/alpha), to the power alpha."""
    p = 1.0 / alpha
    inner = list(range(a + 1, b))
    cache = {}

    def om(s, t):
        if (s, t) not in cache:
            cache[(s, t)] = omega(points, s, t) ** p
        return cache[(s, t)]

    best = 0.0
    for r in range(len(inner) + 1):
        for cut in itertools.combinations(inner, r):
            nodes = (a, *cut, b)
            best = max(best, sum(om(s, t) for s, t in zip(nodes, nodes[1:])))
    return best ** alpha


def hoelder_bruteforce(points, times, alpha: float) -> float:
    times = np.asarray(times, dtype=float)
    s1 = s2 = 0.0
    m = len(times) - 1
    for a in range(m):
        for b in range(a + 1, m + 1):
            x, xx = iterated_integral(points, a, b, sub=2)
            dt = (times[b] - times[a]) ** alpha
            s1 = max(s1, np.linalg.norm(x) / dt)
            s2 = max(s2, np.sqrt(np.linalg.norm(xx)) / dt)
    return s1 + s2


@lru_cache(maxsize=None)
def _spanning_tree_bases(r: int, c: int):
    """Edge sets and basis inverses of every spanning tree of K_{r,c}."""
    edges = [(i, j) for i in range(r) for j in range(c)]
    A = np.zeros((r + c, r * c))
    for k, (i, j) in enumerate(edges):
        A[i, k] = 1.0
        A[r + j, k] = 1.0
    A = A[:-1]  # one constraint is redundant
    size = r + c - 1
    sets, invs = [], []
    for sub in itertools.combinations(range(r * c), size):
        B = A[:, sub]
        if abs(np.linalg.det(B)) > 0.5:  # totally unimodular: det is +-1 or 0
            sets.append(sub)
            invs.append(np.linalg.inv(B))
    return np.array(sets), np.array(invs)


def transport_bruteforce(cost, a, b) -> float:
    """Exact optimal transport cost by exhaustive vertex enumeration (r, c <= 4)."""
    cost = np.asarray(cost, dtype=float)
    r, c = cost.shape
    sets, invs = _spanning_tree_bases(r, c)
    rhs = np.concatenate([a, b])[:-1]
    x = invs @ rhs
    feasible = np.all(x >= -1e-12, axis=1)
    values = np.sum(cost.ravel()[sets] * x, axis=1)
    return float(np.min(values[feasible]))


def euler_single(b, x0, dB, h):
    """Scalar Euler-Maruyama for dX = b(X, X) dt + dB, written out longhand."""
    out = [np.array(x0, dtype=float)]
    x = out[0]
    for inc in dB:
        x = x + b(x, x) * h + inc
        out.append(x)
    return np.array(out)


def ou_moments(m0: float, v0: float, rate: float, t):
    """Mean and variance of dX = -rate X dt + dB from (m0, v0)."""
    t = np.asarray(t, dtype=float)
    e = np.exp(-rate * t)
    return m0 * e, v0 * e ** 2 + (1 - e ** 2) / (2 * rate)


def rk4(fun, y0, t0: float, t1: float, steps: int):
    y = np.asarray(y0, dtype=float)
    h = (t1 - t0) / steps
    t = t0
    for _ in range(steps):
        k1 = fun(t, y)
        k2 = fun(t + h / 2, y + h / 2 * k1)
        k3 = fun(t + h / 2, y + h / 2 * k2)
        k4 = fun(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y
