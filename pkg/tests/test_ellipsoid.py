import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from safereach import (DegenerateDirectionError, Ellipsoid, HyperRectangle,
                       InvalidEllipsoidError, contains, contains_ellipsoid, erode_by_ball,
                       error_gap_estimate, fusion_intersect_ia, mvie_box,
                       point_ellipsoid_distance, support_function, support_vector, volume)
from safereach.ellipsoid import (concentric_intersect_ia, max_quadratic_over, sample_boundary,
                                 sample_uniform)

from conftest import random_ellipsoid, random_spd

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 5)
UNIT2 = Ellipsoid.ball(np.zeros(2))
PLANAR_K = Ellipsoid(np.zeros(2), np.diag([0.25, 4.0]))


# construction -------------------------------------------------------------------

def test_rejects_asymmetric_shape():
    with pytest.raises(InvalidEllipsoidError):
        Ellipsoid([0, 0], [[1, 0.1], [0, 1]])


def test_rejects_indefinite_shape():
    with pytest.raises(InvalidEllipsoidError):
        Ellipsoid([0, 0], [[1, 0], [0, -1]])


def test_singular_shape_needs_flag():
    with pytest.raises(InvalidEllipsoidError):
        Ellipsoid([0, 0], np.zeros((2, 2)))
    assert Ellipsoid.point([1.0, 2.0]).is_point


def test_dimension_mismatch():
    with pytest.raises(InvalidEllipsoidError):
        Ellipsoid([0, 0, 0], np.eye(2))


def test_dict_round_trip_is_bit_exact():
    rng = np.random.default_rng(3)
    E = random_ellipsoid(rng, 4)
    F = Ellipsoid.from_dict(E.to_dict())
    assert np.array_equal(E.center, F.center) and np.array_equal(E.shape, F.shape)


# contains -----------------------------------------------------------------------

def test_contains_examples():
    assert contains(UNIT2, [0, 0])
    assert contains(UNIT2, [1, 0])
    assert contains(PLANAR_K, [0.3, -0.7])
    assert PLANAR_K.quadratic([0.3, -0.7]) == pytest.approx(0.4825, abs=1e-12)
    assert not contains(UNIT2, [1.01, 0])


def test_contains_point_ellipsoid():
    P = Ellipsoid.point([1.0, 2.0])
    assert contains(P, [1.0, 2.0]) and not contains(P, [1.0, 2.1])


# support function / vector ------------------------------------------------------

def test_support_examples():
    assert support_function(UNIT2, [1, 0]) == 1.0
    assert support_function(PLANAR_K, [0, 1]) == 2.0
    assert support_function(PLANAR_K, [0, 0]) == 0.0
    np.testing.assert_allclose(support_vector(UNIT2, [1, 0]), [1, 0])
    np.testing.assert_allclose(support_vector(UNIT2, [2, 0]), [1, 0])
    np.testing.assert_allclose(support_vector(PLANAR_K, [1, 0]), [0.5, 0])


def test_support_vector_null_direction():
    seg = Ellipsoid([0, 0], np.diag([1.0, 0.0]), degenerate=True)
    with pytest.raises(DegenerateDirectionError):
        support_vector(seg, [0, 1])


@given(seeds, dims, st.floats(1e-3, 1e3))
def test_support_function_positively_homogeneous(seed, n, c):
    rng = np.random.default_rng(seed)
    E = random_ellipsoid(rng, n)
    l = rng.standard_normal(n)
    assert support_function(E, c * l) == pytest.approx(c * support_function(E, l), rel=1e-10,
                                                       abs=1e-10)


@given(seeds, dims)
def test_support_vector_on_boundary(seed, n):
    rng = np.random.default_rng(seed)
    E = random_ellipsoid(rng, n)
    l = rng.standard_normal(n)
    s = support_vector(E, l)
    assert contains(E, s)
    assert E.quadratic(s) == pytest.approx(1.0, abs=1e-8)
    assert l @ s == pytest.approx(support_function(E, l), rel=1e-10, abs=1e-10)


# distance -----------------------------------------------------------------------

def test_distance_examples():
    assert point_ellipsoid_distance([2, 0], UNIT2) == pytest.approx(1.0)
    assert point_ellipsoid_distance([0, 0], UNIT2) == pytest.approx(-1.0)
    assert point_ellipsoid_distance([3, 0], Ellipsoid([0, 0], np.diag([4.0, 1.0]))) == \
        pytest.approx(1.0)


def _brute_distance(x, E, rng, count=100_000):
    l = rng.standard_normal((count, E.dim))
    l /= np.linalg.norm(l, axis=1, keepdims=True)
    rho = l @ E.center + np.sqrt(np.einsum("ij,jk,ik->i", l, E.shape, l))
    return float(np.max(l @ x - rho))


@pytest.mark.parametrize("seed", range(8))
def test_distance_matches_direction_sampling(seed):
    rng = np.random.default_rng(seed)
    E = random_ellipsoid(rng, 2)
    x = E.center + 2.0 * rng.standard_normal(2)
    assert point_ellipsoid_distance(x, E) == pytest.approx(_brute_distance(x, E, rng), abs=1e-3)


@given(seeds, st.integers(2, 4))
def test_distance_matches_numerical_projection(seed, n):
    from scipy.optimize import minimize

    rng = np.random.default_rng(seed)
    E = random_ellipsoid(rng, n)
    x = E.center + 3.0 * rng.standard_normal(n)
    if E.quadratic(x) <= 1.0:
        return
    # nested projection: minimize |x - (q + L u/|u|)| over u
    L = E.sqrt_shape()

    def obj(u):
        u = u / np.linalg.norm(u)
        return float(np.sum((x - E.center - L @ u) ** 2))

    best = min((minimize(obj, rng.standard_normal(n), method="BFGS", options={"gtol": 1e-12})
                for _ in range(6)), key=lambda r: r.fun)
    assert point_ellipsoid_distance(x, E) == pytest.approx(math.sqrt(best.fun), abs=1e-6)


@given(seeds, dims)
def test_distance_sign_matches_membership(seed, n):
    rng = np.random.default_rng(seed)
    E = random_ellipsoid(rng, n)
    x = E.center + rng.standard_normal(n)
    d = point_ellipsoid_distance(x, E)
    assert (d <= 1e-12) == (E.quadratic(x) <= 1.0 + 1e-12) or abs(d) < 1e-9


# containment --------------------------------------------------------------------

def test_contains_ellipsoid_examples():
    half = Ellipsoid.ball([0, 0], 0.5)
    assert contains_ellipsoid(half, UNIT2)
    assert not contains_ellipsoid(UNIT2, half)
    touching = Ellipsoid([0.5, 0], np.diag([0.25, 0.25]))
    assert contains_ellipsoid(touching, UNIT2)
    assert max_quadratic_over(touching, UNIT2) == pytest.approx(1.0, abs=1e-12)


@given(seeds, st.integers(1, 4))
def test_containment_agrees_with_boundary_sampling(seed, n):
    rng = np.random.default_rng(seed)
    outer = random_ellipsoid(rng, n)
    inner = Ellipsoid(outer.center + 0.3 * rng.standard_normal(n),
                      rng.uniform(0.1, 0.9) * random_spd(rng, n, 0.2, 1.0))
    pts = sample_boundary(inner, 10_000, rng)
    d = pts - outer.center
    sampled = float(np.max(np.einsum("ij,jk,ik->i", d, outer.inv_shape(), d)))
    exact = max_quadratic_over(inner, outer)
    # sampling can only under-estimate the true maximum
    assert sampled <= exact + 1e-9
    if contains_ellipsoid(inner, outer):
        assert sampled <= 1.0 + 1e-8
    elif exact > 1.0 + 1e-3:
        assert sampled > 1.0 or exact - sampled < 5e-2 * exact


# fusion -------------------------------------------------------------------------

def test_fusion_identical_and_nested():
    F = fusion_intersect_ia(UNIT2, UNIT2)
    assert F == UNIT2
    big = Ellipsoid.ball([0, 0], 2.0)
    assert fusion_intersect_ia(UNIT2, big) == UNIT2
    assert fusion_intersect_ia(big, UNIT2) == UNIT2


def test_fusion_offset_balls_inside_lens():
    E1 = Ellipsoid([-0.5, 0], np.eye(2))
    E2 = Ellipsoid([0.5, 0], np.eye(2))
    F = fusion_intersect_ia(E1, E2)
    rng = np.random.default_rng(0)
    pts = sample_boundary(F, 10_000, rng)
    assert all(E1.quadratic(p) <= 1 + 1e-9 and E2.quadratic(p) <= 1 + 1e-9 for p in pts)
    lens = 2 * math.acos(0.5) - 0.5 * math.sqrt(3)  # two circular segments, unit radius
    assert volume(F) <= lens


def test_fusion_disjoint_is_empty():
    E1 = Ellipsoid([-2, 0], np.eye(2))
    E2 = Ellipsoid([2, 0], np.eye(2))
    assert fusion_intersect_ia(E1, E2) is None


@given(seeds, st.integers(1, 5), st.booleans())
def test_fusion_result_inside_both(seed, n, concentric):
    rng = np.random.default_rng(seed)
    E1 = random_ellipsoid(rng, n, spread=0.5)
    E2 = random_ellipsoid(rng, n, spread=0.5)
    F = fusion_intersect_ia(E1, E2, concentric=concentric)
    if F is None:
        return
    assert contains_ellipsoid(F, E1) and contains_ellipsoid(F, E2)


@given(seeds, st.integers(2, 4))
def test_concentric_candidate_is_exact_for_concentric_operands(seed, n):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(n)
    E1 = Ellipsoid(c, random_spd(rng, n))
    E2 = Ellipsoid(c, random_spd(rng, n))
    F = concentric_intersect_ia(E1, E2, c)
    assert contains_ellipsoid(F, E1) and contains_ellipsoid(F, E2)
    # touches both boundaries: no uniform enlargement fits
    grow = Ellipsoid(c, 1.01 * F.shape)
    assert not (contains_ellipsoid(grow, E1) and contains_ellipsoid(grow, E2))


# erosion ------------------------------------------------------------------------

def test_erosion_examples():
    np.testing.assert_allclose(erode_by_ball(UNIT2, 0.5).shape, 0.25 * np.eye(2))
    assert erode_by_ball(PLANAR_K, 0.0) is PLANAR_K
    np.testing.assert_allclose(erode_by_ball(PLANAR_K, 0.1).shape, np.diag([0.16, 2.56]))
    assert erode_by_ball(UNIT2, 1.0) is None
    with pytest.raises(ValueError):
        erode_by_ball(UNIT2, -0.1)


@given(seeds, dims, st.floats(0.0, 0.99))
def test_erosion_guarantee(seed, n, frac):
    rng = np.random.default_rng(seed)
    E = random_ellipsoid(rng, n)
    r = frac * math.sqrt(np.linalg.eigvalsh(E.shape)[0])
    D = erode_by_ball(E, r)
    for _ in range(20):
        l = rng.standard_normal(n)
        l /= np.linalg.norm(l)
        assert math.sqrt(l @ D.shape @ l) + r <= math.sqrt(l @ E.shape @ l) + 1e-10


# volume, boxes, gap -------------------------------------------------------------

def test_volume_examples():
    assert volume(UNIT2) == pytest.approx(math.pi)
    assert volume(PLANAR_K) == pytest.approx(math.pi)
    assert volume(Ellipsoid.point([0.0, 0.0])) == 0.0
    assert volume(Ellipsoid.ball(np.zeros(3))) == pytest.approx(4 / 3 * math.pi)


def test_mvie_box_examples():
    E = mvie_box(HyperRectangle([-1, -1], [1, 1]))
    np.testing.assert_allclose(E.shape, np.eye(2))
    Q = mvie_box(HyperRectangle([0.5, -0.5, -0.5, -0.5], [5.4, 0.5, 0.5, 0.5]))
    np.testing.assert_allclose(Q.center, [2.95, 0, 0, 0])
    np.testing.assert_allclose(Q.shape, np.diag([2.45**2, 0.25, 0.25, 0.25]))
    R = mvie_box(HyperRectangle([0, 0], [2, 4]))
    np.testing.assert_allclose(R.center, [1, 2])
    np.testing.assert_allclose(R.shape, np.diag([1, 4]))
    assert mvie_box(HyperRectangle([0, 0], [0, 1])).degenerate


def test_box_must_be_ordered():
    with pytest.raises(ValueError):
        HyperRectangle([1.0], [0.0])


def test_gap_examples():
    assert error_gap_estimate(UNIT2, UNIT2, UNIT2) == 0.0
    inner = Ellipsoid.ball([0, 0], 0.5)
    assert error_gap_estimate(inner, UNIT2, inner) == 0.0


def test_gap_bounds_true_loss():
    E1 = Ellipsoid([-0.5, 0], np.eye(2))
    E2 = Ellipsoid([0.5, 0], np.eye(2))
    F = fusion_intersect_ia(E1, E2)
    rng = np.random.default_rng(1)
    pts = sample_uniform(E1, 200_000, rng)
    d = pts - E2.center
    frac = np.mean(np.einsum("ij,ij->i", d, d) <= 1.0)
    lens = frac * volume(E1)
    gap = error_gap_estimate(E1, E2, F)
    assert gap >= 0.0
    assert gap >= lens - volume(F) - 0.01
