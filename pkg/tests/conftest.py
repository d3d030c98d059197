import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from safereach import (DirectionSet, Ellipsoid, KernelOptions, discriminating_kernel_ia,
                       make_uniform_partition, planar_example)

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(rng, n, lo=0.2, hi=3.0):
    """Random SPD matrix with eigenvalues in ``[lo, hi]``."""
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = rng.uniform(lo, hi, n)
    M = (Qm * w) @ Qm.T
    return 0.5 * (M + M.T)


def random_ellipsoid(rng, n, spread=1.0, lo=0.2, hi=3.0):
    return Ellipsoid(spread * rng.standard_normal(n), random_spd(rng, n, lo, hi))


@pytest.fixture(scope="session")
def planar():
    return planar_example()


@pytest.fixture(scope="session")
def planar_invariant(planar):
    """Planar recursion stopped at the first invariance certificate."""
    p = planar
    return discriminating_kernel_ia(p.system, p.K, p.bounds, make_uniform_partition(1.0, 100),
                                    DirectionSet([[1.0, 1.0]]),
                                    KernelOptions(stop_on_invariance=True))


@pytest.fixture(scope="session")
def planar_full(planar):
    """Planar recursion over the whole horizon with a few directions."""
    p = planar
    dirs = DirectionSet(np.vstack([[1.0, 1.0], DirectionSet.random(2, 3, seed=1).directions]))
    return discriminating_kernel_ia(p.system, p.K, p.bounds, make_uniform_partition(1.0, 100),
                                    dirs, KernelOptions())
