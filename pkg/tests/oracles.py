"""Closed-form references for one-dimensional problems.

In 1-D every ellipsoid is an interval and every operation of the kernel
recursion (backward reach, intersection) is exact interval arithmetic, so the
numerical pipeline can be compared against these formulas directly.
"""
import math

import numpy as np

from safereach import (DirectionSet, Ellipsoid, InputBounds, LtiSystem,
                       discriminating_kernel_ia, make_uniform_partition, reach_tube_segment)

ONE = DirectionSet([[1.0]])


def interval(c, r):
    return Ellipsoid([c], [[r * r]])


def reach_1d(a, b, g, mu, ru, nu, rv, cT, rT, delta):
    """Closed-form start interval (center, radius) of the robust backward reach set."""
    e = math.exp(-a * delta)
    integral = delta if a == 0 else (1.0 - e) / a
    radius = e * rT + (abs(b) * ru - abs(g) * rv) * integral
    center = e * cT - (b * mu + g * nu) * integral
    return center, radius


def interval_recursion(a, b, g, mu, ru, nu, rv, cK, rK, tau, n):
    """Reference kernel chain in 1-D by exact interval arithmetic.

    Returns a list indexed by k of (center, radius) or None after the chain dies.
    """
    M = abs(a * cK + b * mu + g * nu) + abs(a) * rK + abs(b) * ru + abs(g) * rv
    delta = tau / n
    rD = rK - M * delta
    chain = [None] * (n + 1)
    chain[n] = (cK, rD)
    e = math.exp(-a * delta)
    integral = delta if a == 0 else (1 - e) / a
    for k in range(n, 0, -1):
        c, r = chain[k]
        r0 = e * r + (abs(b) * ru - abs(g) * rv) * integral
        c0 = e * c - (b * mu + g * nu) * integral
        if r0 <= 0:
            break
        lo, hi = max(c0 - r0, cK - rD), min(c0 + r0, cK + rD)
        if hi <= lo:
            break
        chain[k - 1] = (0.5 * (lo + hi), 0.5 * (hi - lo))
    return chain


def segment_case(seed):
    """Random 1-D reach segment and its closed-form start interval.

    Returns ``(center, radius, reference_center, reference_radius)``.  The RK4
    step is at most 1e-3, the production step of a 0.01 sub-interval.
    """
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1), rng.choice([-1, 1]) * rng.uniform(0.5, 2)
    g = rng.uniform(-1, 1)
    mu, ru = rng.uniform(-0.5, 0.5), rng.uniform(0.5, 1.5)
    nu, rv = rng.uniform(-0.1, 0.1), rng.uniform(0.0, 0.1)
    cT, rT = rng.uniform(-1, 1), rng.uniform(0.5, 2)
    delta = rng.uniform(0.05, 1.0)
    sys = LtiSystem([[a]], [[b]], [[g]])
    V = interval(nu, rv) if rv > 0 else Ellipsoid.point([nu])
    N = max(10, math.ceil(delta / 1e-3))
    seg = reach_tube_segment(sys, interval(cT, rT), InputBounds(interval(mu, ru), V),
                             (0.0, delta), step=delta / N)
    c, r = reach_1d(a, b, g, mu, ru, nu, rv, cT, rT, delta)
    return seg.start().center[0], math.sqrt(seg.start().shape[0, 0]), c, r


def chain_case(seed):
    """Random 1-D kernel chain and its interval-arithmetic reference.

    Returns ``(approx, reference_chain, reference_M)``.
    """
    rng = np.random.default_rng(seed)
    a, b, g = rng.uniform(-1, 1), rng.choice([-1, 1]) * rng.uniform(0.5, 2), rng.uniform(-1, 1)
    mu, ru = rng.uniform(-0.3, 0.3), rng.uniform(0.3, 1.5)
    nu, rv = rng.uniform(-0.1, 0.1), rng.uniform(0.01, 0.2)
    cK, rK = rng.uniform(-1, 1), rng.uniform(1.0, 3.0)
    tau, n = rng.uniform(0.2, 1.0), 10
    sys = LtiSystem([[a]], [[b]], [[g]])
    ap = discriminating_kernel_ia(sys, interval(cK, rK),
                                  InputBounds(interval(mu, ru), interval(nu, rv)),
                                  make_uniform_partition(tau, n), ONE)
    M = abs(a * cK + b * mu + g * nu) + abs(a) * rK + abs(b) * ru + abs(g) * rv
    return ap, interval_recursion(a, b, g, mu, ru, nu, rv, cK, rK, tau, n), M


def chain_error(ap, ref) -> float:
    """Largest center/radius deviation; ``inf`` if the chains die at different k."""
    worst = 0.0
    for k, E in enumerate(ap.chains[0]):
        if (E is None) != (ref[k] is None):
            return math.inf
        if E is not None:
            worst = max(worst, abs(E.center[0] - ref[k][0]),
                        abs(math.sqrt(E.shape[0, 0]) - ref[k][1]))
    return worst
