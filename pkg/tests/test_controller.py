import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from safereach import (AdversarialSwitching, ConstantInput, ControllerConfig, ControllerState,
                       DegenerateDirectionError, Ellipsoid, Mode, SafetyController,
                       SafetyViolationImminent, UniformRandom, Variant, automaton_step,
                       beta_weight, contains, direction_vector, phi_depth, safe_law,
                       simulate_closed_loop, support_function)

from conftest import random_spd


# pure laws ----------------------------------------------------------------------

def test_safe_law_examples():
    U = Ellipsoid.ball(np.zeros(2))
    np.testing.assert_allclose(safe_law([1, 0], np.eye(2), U), [-1, 0])
    scalar = Ellipsoid([0.0], [[1.0]])
    np.testing.assert_allclose(safe_law([1, 0], [[1.0], [0.5]], scalar), [-1.0])


def test_safe_law_degenerate_direction():
    with pytest.raises(DegenerateDirectionError):
        safe_law([0, 1], [[1.0], [0.0]], Ellipsoid([0.0], [[1.0]]))


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3), st.floats(0.01, 100))
def test_safe_law_scale_invariant_and_on_boundary(seed, n, m, scale):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, m))
    U = Ellipsoid(rng.standard_normal(m), random_spd(rng, m))
    l = rng.standard_normal(n)
    u = safe_law(l, B, U)
    np.testing.assert_allclose(safe_law(scale * l, B, U), u, rtol=1e-9, atol=1e-12)
    assert U.quadratic(u) == pytest.approx(1.0, abs=1e-9)
    # B u minimizes <l, B u> over U
    assert l @ B @ u == pytest.approx(-support_function(U, -(B.T @ l)), abs=1e-9)


def test_direction_vector_examples():
    np.testing.assert_array_equal(direction_vector([1, 2], np.array([1, 2]), np.eye(2)), [0, 0])
    np.testing.assert_allclose(direction_vector([2, 0], np.zeros(2), np.eye(2)), [2, 0])
    np.testing.assert_allclose(direction_vector([2, 0], np.zeros(2), np.diag([0.25, 1.0])),
                               [0.5, 0])


def test_phi_depth_examples():
    Kinv = np.diag([4.0, 0.25])
    assert phi_depth([0, 0], np.zeros(2), Kinv) == 0.0
    assert phi_depth([0.5, 0], np.zeros(2), Kinv) == pytest.approx(1.0)
    assert phi_depth([0.3, -0.7], np.zeros(2), Kinv) == pytest.approx(0.4825)


def test_beta_weight_examples():
    assert beta_weight(1.0, 0.3) == 1.0
    assert beta_weight(0.0, 0.9) == 0.0
    assert beta_weight(0.95, 0.9) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        beta_weight(0.5, 1.0)


@given(st.floats(0, 0.99), st.floats(0, 2))
def test_beta_weight_continuous_and_bounded(alpha, xi):
    b = beta_weight(xi, alpha)
    assert 0.0 <= b <= 1.0
    eps = 1e-9
    assert abs(beta_weight(xi + eps, alpha) - b) <= eps / (1 - alpha) + 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(alpha=1.0)
    with pytest.raises(ValueError):
        ControllerConfig(sigma_rate_perf=1.5)
    assert ControllerConfig(variant="infinite").variant is Variant.INFINITE


# automaton ----------------------------------------------------------------------

def _first_tube(ap, i=0):
    return ap.segment(i, 1).at(0.0)


def test_deep_inside_uses_performance_input(planar_full):
    ap = planar_full
    c, _, _ = _first_tube(ap)
    st0 = ControllerState(Mode.PERF, 0, 0.0, 1)
    nxt, dec = automaton_step(st0, c, 1e-3, ap, np.array([0.37]), ControllerConfig())
    assert dec.mode is Mode.PERF and dec.beta == 0.0
    np.testing.assert_array_equal(dec.u, [0.37])
    assert nxt.sigma == pytest.approx(1e-3) and nxt.t == pytest.approx(1e-3)


def _only(ap, i):
    return replace(ap, segments={i: ap.segments[i]})


def test_boundary_uses_safety_law(planar_full):
    # a single tube, so no other tube can claim the point as interior
    ap = _only(planar_full, 0)
    c, X, Xi = _first_tube(ap)
    w, V = np.linalg.eigh(X)
    x = c + math.sqrt(w[0]) * V[:, 0]  # on the boundary
    cfg = ControllerConfig(sigma_rate_perf=0.0)
    nxt, dec = automaton_step(ControllerState(Mode.PERF, 0, 0.0, 1), x, 1e-3, ap,
                              np.array([0.9]), cfg)
    assert dec.mode is Mode.SAFE and dec.beta == 1.0
    np.testing.assert_allclose(dec.u, safe_law(Xi @ (x - c), ap.system.B, ap.bounds.U))
    # Safe mode advances pseudo-time at rate one whatever the Perf rate
    assert nxt.sigma == pytest.approx(1e-3)


def test_frozen_pseudo_time_in_perf(planar_full):
    ap = planar_full
    c, _, _ = _first_tube(ap)
    nxt, dec = automaton_step(ControllerState(Mode.PERF, 0, 0.0, 1), c, 1e-3, ap,
                              np.array([0.0]), ControllerConfig(sigma_rate_perf=0.0))
    assert dec.sigma_rate == 0.0 and nxt.sigma == 0.0


def test_initial_state_picks_deepest_tube(planar_full):
    ap = planar_full
    ctl = SafetyController(ap, ControllerConfig())
    x0 = np.array([0.0, 0.0])
    st0 = ctl.initial_state(x0)
    depths = {i: phi_depth(x0, *ap.segment(i, 1).at(0.0)[::2]) for i in ap.segments if 1 in ap.segments[i]}
    assert st0.gamma == min(depths, key=lambda i: (depths[i], i))
    assert st0.k == 1 and st0.sigma == 0.0 and st0.mode is Mode.PERF


def test_outside_every_tube(planar_full):
    ap = planar_full
    ctl = SafetyController(ap, ControllerConfig(fallback=False))
    with pytest.raises(SafetyViolationImminent):
        ctl.initial_state([5.0, 5.0])
    fb = SafetyController(ap, ControllerConfig(fallback=True))
    st0 = fb.initial_state([5.0, 5.0])
    _, dec = fb.step(st0, np.array([5.0, 5.0]), 1e-3, np.array([0.0]))
    assert "best_effort" in dec.flags and dec.mode is Mode.SAFE


def test_fallback_simulation_returns_flagged_trajectory(planar_full):
    ap = planar_full
    tr = simulate_closed_loop(ap.system, ap, ControllerConfig(fallback=True),
                              ConstantInput([0.0]), UniformRandom(0), [3.0, 3.0], 0.2)
    assert tr.has_flag("best_effort") and not tr.safety_ok[0]


def test_violation_carries_partial_trajectory(planar_full):
    ap = planar_full
    with pytest.raises(SafetyViolationImminent) as err:
        simulate_closed_loop(ap.system, ap, ControllerConfig(), ConstantInput([0.0]),
                             UniformRandom(0), [3.0, 3.0], 0.2)
    assert err.value.trajectory is not None and len(err.value.trajectory) == 0


def test_finite_horizon_exhaustion(planar_full):
    ap = planar_full
    tr = simulate_closed_loop(ap.system, ap, ControllerConfig(), ConstantInput([-1.0]),
                              UniformRandom(1), [0.0, 0.0], 1.3)
    assert tr.has_flag("horizon_exhausted")
    j = next(i for i, f in enumerate(tr.flags) if "horizon_exhausted" in f)
    assert tr.times[j] >= ap.partition.horizon - 1e-9
    np.testing.assert_array_equal(tr.controls[j:-1], -1.0)
    assert np.all(tr.sigmas <= ap.partition.horizon)


def test_infinite_needs_certificate(planar_full):

    bare = replace(planar_full, invariance=[])
    with pytest.raises(ValueError):
        SafetyController(bare, ControllerConfig(variant="infinite"))


# trajectory-level properties ----------------------------------------------------

@pytest.fixture(scope="module")
def planar_runs(planar_invariant):
    ap = planar_invariant
    runs = {}
    for name, dist in (("uniform", UniformRandom(3)), ("adversarial", AdversarialSwitching(5, 3))):
        for blend in (True, False):
            cfg = ControllerConfig(variant="infinite", blending=blend)
            runs[name, blend] = simulate_closed_loop(ap.system, ap, cfg, ConstantInput([-1.0]),
                                                     dist, [0.3, -0.7], 8.0)
    return runs


def test_inputs_and_disturbances_admissible(planar_runs, planar_invariant):
    ap = planar_invariant
    for tr in planar_runs.values():
        assert tr.all_safe
        assert all(contains(ap.bounds.U, u) for u in tr.controls)
        assert all(contains(ap.bounds.V, v) for v in tr.disturbances)


def test_pseudo_time_contract(planar_runs, planar_invariant):
    ap = planar_invariant
    times = ap.partition.times
    lows = {float(times[k - 1]) for _, k in ap.invariance}
    for tr in planar_runs.values():
        s = tr.sigmas
        for j in np.flatnonzero(np.diff(s) < 0):
            # downward jumps only to the start of a certified segment
            assert any(abs(s[j + 1] - lo) < 1e-12 for lo in lows)


def test_finite_pseudo_time_monotone(planar_full):
    ap = planar_full
    for rate in (0.0, 0.5, 1.0):
        tr = simulate_closed_loop(ap.system, ap, ControllerConfig(sigma_rate_perf=rate),
                                  ConstantInput([-1.0]), UniformRandom(2), [0.0, 0.0], 0.6)
        assert np.all(np.diff(tr.sigmas) >= 0)
        assert np.all(tr.sigmas <= tr.times + 1e-12)


def test_blending_reduces_chattering(planar_invariant):
    ap = planar_invariant
    counts = {}
    for blend in (True, False):
        cfg = ControllerConfig(alpha=0.9, variant="infinite", blending=blend)
        tr = simulate_closed_loop(ap.system, ap, cfg, ConstantInput([-1.0]),
                                  AdversarialSwitching(5, 0), [0.3, -0.7], 25.0)
        counts[blend] = tr.mode_switches()
    assert counts[True] < counts[False]


def test_safe_mode_distance_non_increasing(planar_runs, planar_invariant):
    from safereach import point_ellipsoid_distance

    ap = planar_invariant
    for tr in planar_runs.values():
        for j in range(len(tr) - 2):
            if not (tr.modes[j] == tr.modes[j + 1] == "safe"
                    and tr.gammas[j] == tr.gammas[j + 1] and tr.ks[j] == tr.ks[j + 1]
                    and tr.sigmas[j + 1] > tr.sigmas[j]):
                continue
            seg = ap.segment(int(tr.gammas[j]), int(tr.ks[j]))
            d0 = point_ellipsoid_distance(tr.states[j], seg.ellipsoid_at(tr.sigmas[j]))
            d1 = point_ellipsoid_distance(tr.states[j + 1], seg.ellipsoid_at(tr.sigmas[j + 1]))
            assert d1 - d0 <= 1e-4


def test_branch_inputs_agree_with_step(planar_full):
    ap = _only(planar_full, 0)
    ctl = SafetyController(ap, ControllerConfig(sigma_rate_perf=0.0, lookahead=False))
    c, X, _ = _first_tube(ap)
    w, V = np.linalg.eigh(X)
    u_perf = np.array([0.8])
    for depth in (0.2, 0.95, 0.99):
        x = c + depth * math.sqrt(w[0]) * V[:, 0]
        _, dec = ctl.step(ControllerState(Mode.PERF, 0, 0.0, 1), x, 1e-3, u_perf)
        u, beta, u_safe, F, _ = ctl.branch_inputs(x, 0, 1, 0.0, u_perf)
        assert dec.mode is Mode.PERF
        np.testing.assert_array_equal(dec.u, u)
        assert dec.beta == beta and F == pytest.approx(depth ** 2)
    # on the boundary the Perf branch already equals the safety law
    x = c + math.sqrt(w[0]) * V[:, 0]
    u, beta, u_safe, _, _ = ctl.branch_inputs(x, 0, 1, 0.0, u_perf)
    assert beta == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(u, u_safe, atol=1e-9)
