"""Brute-force reference implementations, written independently of the package.

Plain Python loops over outcomes; no numpy vectorisation and no calls into
anonrisk beyond reading ``.probs``/``.values``.
"""

import itertools
import math


def blocks_of(columns, m, rtol=1e-9):
    """Level sets of the joint tuple, by pairwise comparison."""
    blocks = []
    for w in range(m):
        for b in blocks:
            v = b[0]
            if all(abs(c[w] - c[v]) <= rtol * max(1.0, abs(c[w]), abs(c[v])) for c in columns):
                b.append(w)
                break
        else:
            blocks.append([w])
    return blocks


def cond_exp(probs, x, blocks):
    out = [0.0] * len(x)
    for b in blocks:
        mass = sum(probs[w] for w in b)
        avg = sum(probs[w] * x[w] for w in b) / mass
        for w in b:
            out[w] = avg
    return out


def mean(probs, x):
    return sum(p * v for p, v in zip(probs, x))


def stop_loss(probs, x, d):
    return sum(p * max(v - d, 0.0) for p, v in zip(probs, x))


def convex_leq(px, x, py, y, tol=1e-9):
    if abs(mean(px, x) - mean(py, y)) > tol:
        return False
    return all(stop_loss(px, x, d) <= stop_loss(py, y, d) + tol for d in list(x) + list(y))


def comonotonic_sorted(columns):
    """Sort outcomes by the first column; every column must then be sorted too.

    Valid when the first column has distinct values.
    """
    order = sorted(range(len(columns[0])), key=lambda w: columns[0][w])
    return all(
        all(c[order[k]] <= c[order[k + 1]] for k in range(len(order) - 1)) for c in columns
    )


def comonotonic_pairs(columns, tol=1e-9):
    m = len(columns[0])
    for w, v in itertools.combinations(range(m), 2):
        for a, b in itertools.combinations(columns, 2):
            if (a[w] - a[v]) * (b[w] - b[v]) < -tol:
                return False
    return True


def normal_quantile(p, mean=0.0, sd=1.0):
    """Inverse normal CDF by bisection on erf."""
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1 + math.erf(mid / math.sqrt(2))) < p:
            lo = mid
        else:
            hi = mid
    return mean + sd * 0.5 * (lo + hi)
