"""Independent brute-force reference implementations used only by tests.

Everything here is written the slow, obvious way and never calls the
library's own fast paths, so agreement is evidence rather than tautology.
"""

import itertools

import numpy as np


def brute_permutation_law(entries):
    """All permutations with their normalized product weights."""
    n = entries.shape[0]
    perms = []
    weights = []
    for p in itertools.permutations(range(n)):
        w = 1.0
        for i, j in enumerate(p):
            w *= entries[i, j]
        perms.append(p)
        weights.append(w)
    weights = np.asarray(weights)
    return perms, weights / weights.sum()


def brute_expected_quadrants(entries, x, y, center):
    """E over the permutation law of the four observed quadrant counts."""
    perms, probs = brute_permutation_law(entries)
    cx, cy = center
    e = np.zeros(4)
    for p, pr in zip(perms, probs):
        yy = y[list(p)]
        below_x = x <= cx
        below_y = yy <= cy
        o00 = np.sum(below_x & below_y)
        o01 = np.sum(below_x & ~below_y)
        o10 = np.sum(~below_x & below_y)
        o11 = np.sum(~below_x & ~below_y)
        e += pr * np.array([o00, o01, o10, o11])
    return e


def brute_quadrant_statistic(x, y, centers, expected_fn):
    """Direct per-center evaluation of the quadrant chi-square."""
    total = 0.0
    used = 0
    for cx, cy in centers:
        o00 = o01 = o10 = o11 = 0
        for xi, yi in zip(x, y):
            if xi <= cx and yi <= cy:
                o00 += 1
            elif xi <= cx:
                o01 += 1
            elif yi <= cy:
                o10 += 1
            else:
                o11 += 1
        e00, e01, e10, e11 = expected_fn(cx, cy)
        if min(e00, e01, e10, e11) <= 1.0:
            continue
        used += 1
        total += (o00 - e00) ** 2 / e00
        total += (o01 - e01) ** 2 / e01
        total += (o10 - e10) ** 2 / e10
        total += (o11 - e11) ** 2 / e11
    return total, used


def product_limit_truncation(x, y):
    """Classical product-limit marginal estimates for x < y truncated pairs.

    The y-marginal is the forward product over event times with risk sets
    {i : x_i < t <= y_i}; the x-marginal is the time-reversed analogue
    with risk sets {i : x_i <= t < y_i}.  Returns (support, mass) pairs.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    ty = np.unique(y)
    surv = 1.0
    y_cdf = []
    for t in ty:
        risk = np.sum((x < t) & (y >= t))
        d = np.sum(y == t)
        y_cdf.append(1.0 - surv * (1.0 - d / risk))
        surv *= 1.0 - d / risk
    y_cdf = np.asarray(y_cdf)
    y_mass = np.diff(np.concatenate(([0.0], y_cdf)))

    tx = np.unique(x)[::-1]  # reversed time for the x side
    surv = 1.0
    x_cdf_rev = []
    for t in tx:
        risk = np.sum((x <= t) & (y > t))
        d = np.sum(x == t)
        x_cdf_rev.append(1.0 - surv * (1.0 - d / risk))
        surv *= 1.0 - d / risk
    # x_cdf_rev[k] = P(X >= tx[k]); convert to CDF mass on ascending support
    x_tail = np.asarray(x_cdf_rev)
    x_mass_desc = np.diff(np.concatenate(([0.0], x_tail)))
    return (tx[::-1], x_mass_desc[::-1]), (ty, y_mass)
