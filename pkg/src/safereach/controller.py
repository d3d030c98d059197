"""Hybrid safety-preserving controller.

Two modes: ``Perf`` lets an arbitrary performance input through (optionally
blended with the safety law near the tube boundary) and ``Safe`` applies the
optimal safety law of the active tube.  A pseudo-time ``sigma`` indexes the
precomputed tubes; it advances at a configurable rate in ``Perf`` and at
unit rate in ``Safe``.

The finite-horizon variant walks the tube segments ``k = 1 .. |P|`` and hands
control back to the performance input when ``sigma`` reaches the horizon.
The infinite-horizon variant only keeps, for every direction with an
invariance certificate, the tube over its certified sub-interval and resets
``sigma`` to the start of that sub-interval whenever it reaches the end.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional

import numpy as np

from .ellipsoid import TOL, Ellipsoid, point_ellipsoid_distance, support_vector
from .errors import DegenerateDirectionError, SafetyViolationImminent
from .kernel import KernelApprox
from .reach import rk4_affine_step


class Mode(enum.Enum):
    PERF = "perf"
    SAFE = "safe"


class Variant(enum.Enum):
    FINITE = "finite"
    INFINITE = "infinite"


@dataclass(frozen=True)
class ControllerState:
    mode: Mode
    gamma: int
    sigma: float
    k: int
    t: float = 0.0
    variant: Variant = Variant.FINITE
    exhausted: bool = False


@dataclass(frozen=True)
class ControllerConfig:
    """
    Parameters
    ----------
    alpha : float
        Depth at which the safety law starts to be blended in.
    sigma_rate_perf : float
        Pseudo-time rate in ``Perf``; 0 freezes it, 1 tracks real time.
    blending, fallback : bool
        Enable the blended law and the nearest-tube fallback outside every tube.
    boundary_band : float
        Slack on the tube quadratic form within which a state counts as on the
        boundary.  Absorbs the drift of discrete-time supervision.
    lookahead : bool
        Leave ``Perf`` one step early when the state predicted under the
        candidate input and the worst-case disturbance would leave the tube
        interior.  Without it a sampled guard can jump past the boundary
        band in a single step on fast systems.
    """

    alpha: float = 0.9
    sigma_rate_perf: float = 1.0
    blending: bool = True
    fallback: bool = False
    variant: Variant = Variant.FINITE
    interior_tol: float = TOL.interior
    boundary_band: float = 1e-3
    lookahead: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not 0.0 <= self.sigma_rate_perf <= 1.0:
            raise ValueError("sigma_rate_perf must lie in [0, 1]")
        object.__setattr__(self, "variant", Variant(self.variant))


@dataclass(frozen=True)
class ControlDecision:
    u: np.ndarray
    mode: Mode
    gamma: int
    beta: float
    sigma_rate: float
    phi: float = float("nan")
    flags: FrozenSet[str] = field(default_factory=frozenset)
    k: int = 0
    sigma: float = float("nan")
    l: Optional[np.ndarray] = None


def safe_law(l, B, U: Ellipsoid) -> np.ndarray:
    """Input whose image under ``B`` is the support vector of ``B U`` along ``-l``."""
    l = np.asarray(l, dtype=float)
    B = np.asarray(B, dtype=float).reshape(l.size, -1)
    g = U.shape @ (B.T @ l)
    den = float((B.T @ l) @ g)
    if not den > 0.0:
        raise DegenerateDirectionError("direction is orthogonal to the control range")
    return U.center - g / np.sqrt(den)


def direction_vector(x, center, inv_shape) -> np.ndarray:
    return np.asarray(inv_shape) @ (np.asarray(x, dtype=float) - center)


def phi_depth(x, center, inv_shape) -> float:
    d = np.asarray(x, dtype=float) - center
    return float(d @ np.asarray(inv_shape) @ d)


def beta_weight(xi: float, alpha: float) -> float:
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if xi >= 1.0:
        return 1.0
    if xi < alpha:
        return 0.0
    return (xi - alpha) / (1.0 - alpha)


def _pick(depths: Dict[int, float], allowed) -> Optional[int]:
    """Deepest id among ``allowed``, smallest id on ties."""
    best = None
    for i in sorted(allowed):
        if best is None or depths[i] < depths[best]:
            best = i
    return best


class SafetyController:
    """Stateless evaluator of the automaton for a fixed kernel approximation."""

    def __init__(self, approx: KernelApprox, config: ControllerConfig):
        self.approx = approx
        self.config = config
        self.times = approx.partition.times
        self.n_seg = approx.size
        if config.variant is Variant.INFINITE:
            self.k_star = {i: approx.invariant_index(i) for i in sorted(approx.segments)}
            self.k_star = {i: k for i, k in self.k_star.items() if k is not None}
            if not self.k_star:
                raise ValueError("infinite-horizon control needs at least one invariance record")

    # tube bookkeeping -------------------------------------------------------

    def _slot(self, i: int, state_k: int, state_sigma: float, gamma: int):
        """(k, sigma) at which direction ``i`` is evaluated."""
        if self.config.variant is Variant.FINITE:
            return state_k, state_sigma
        k = self.k_star[i]
        offset = state_sigma - self.times[self.k_star[gamma] - 1]
        lo, hi = self.times[k - 1], self.times[k]
        return k, min(max(lo + offset, lo), hi)

    def _candidates(self, k: int) -> List[int]:
        if self.config.variant is Variant.INFINITE:
            return sorted(self.k_star)
        return [i for i in sorted(self.approx.segments) if k in self.approx.segments[i]]

    def _tube(self, i, k, sigma):
        return self.approx.segments[i][k].at(sigma)

    def _depths(self, x, state_k, state_sigma, gamma):
        out = {}
        for i in self._candidates(state_k):
            k, s = self._slot(i, state_k, state_sigma, gamma)
            c, _, Xi = self._tube(i, k, s)
            out[i] = phi_depth(x, c, Xi)
        return out

    def _switch(self, state: ControllerState, i: int) -> ControllerState:
        if i == state.gamma or self.config.variant is Variant.FINITE:
            return replace(state, gamma=i)
        k, s = self._slot(i, state.k, state.sigma, state.gamma)
        return replace(state, gamma=i, k=k, sigma=s)

    # automaton --------------------------------------------------------------

    def initial_state(self, x0, t0: float = 0.0) -> ControllerState:
        """Pick the deepest tube whose start ellipsoid contains ``x0``."""
        cfg = self.config
        x0 = np.asarray(x0, dtype=float)
        if cfg.variant is Variant.FINITE:
            ids = self._candidates(1)
            depths = {i: phi_depth(x0, *self._tube(i, 1, 0.0)[::2]) for i in ids}
            slot = {i: (1, 0.0) for i in ids}
        else:
            slot = {i: (k, float(self.times[k - 1])) for i, k in self.k_star.items()}
            depths = {i: phi_depth(x0, *self._tube(i, *slot[i])[::2]) for i in slot}
        inside = [i for i, F in depths.items() if F <= 1.0 + cfg.boundary_band]
        gamma = _pick(depths, inside)
        if gamma is None:
            if not cfg.fallback:
                raise SafetyViolationImminent("initial state lies outside every tube")
            gamma = self._nearest(x0, slot)
        k, s = slot[gamma]
        return ControllerState(Mode.PERF, gamma, s, k, t0, cfg.variant)

    def _nearest(self, x, slot) -> int:
        dist = {}
        for i, (k, s) in slot.items():
            c, X, _ = self._tube(i, k, s)
            dist[i] = point_ellipsoid_distance(x, Ellipsoid(c, 0.5 * (X + X.T)))
        return _pick(dist, dist)

    def step(self, state: ControllerState, x, dt: float, u_perf):
        """One supervision step: decide the input and advance the automaton.

        Returns the state for the next step and the decision to hold over
        ``[t, t + dt]``.
        """
        cfg = self.config
        x = np.asarray(x, dtype=float)
        u_perf = np.asarray(u_perf, dtype=float)
        flags = set()

        if state.exhausted:
            return (replace(state, t=state.t + dt, mode=Mode.PERF),
                    ControlDecision(u_perf, Mode.PERF, state.gamma, 0.0, 0.0,
                                    flags=frozenset({"horizon_exhausted"}),
                                    k=state.k, sigma=state.sigma))

        if cfg.variant is Variant.INFINITE:
            state = self._maybe_reset(state, x, flags)

        depths = self._depths(x, state.k, state.sigma, state.gamma)
        interior = [i for i, F in depths.items() if F < 1.0 - cfg.interior_tol]
        at_end = (cfg.variant is Variant.INFINITE
                  and state.sigma >= self.times[state.k] - 1e-12)
        if state.gamma in interior and not at_end:
            mode = Mode.PERF
        elif interior and not at_end:
            mode = Mode.PERF
            state = self._switch(state, _pick(depths, interior))
        else:
            mode = Mode.SAFE
            if depths.get(state.gamma, np.inf) > 1.0 + cfg.boundary_band:
                near = [i for i, F in depths.items() if F <= 1.0 + cfg.boundary_band]
                if near:
                    state = self._switch(state, _pick(depths, near))
                elif cfg.fallback:
                    slots = {i: self._slot(i, state.k, state.sigma, state.gamma)
                             for i in depths}
                    state = self._switch(state, self._nearest(x, slots))
                    flags.add("best_effort")
                else:
                    raise SafetyViolationImminent(
                        f"state left every tube at t = {state.t:.6g}")

        u, beta, u_safe, F, l = self.branch_inputs(x, state.gamma, state.k, state.sigma, u_perf)
        if mode is Mode.PERF:
            rate = cfg.sigma_rate_perf
            if cfg.lookahead and self._exits(state, x, u, l, rate, dt):
                mode = Mode.SAFE
        if mode is Mode.SAFE:
            u, beta, rate = u_safe, 1.0, 1.0
        decision = ControlDecision(u, mode, state.gamma, beta, rate, F, frozenset(flags),
                                   state.k, state.sigma, l)
        return self._advance(state, mode, rate, dt), decision

    def branch_inputs(self, x, gamma: int, k: int, sigma: float, u_perf):
        """Inputs both modes would apply at ``x`` on tube ``gamma`` at ``(k, sigma)``.

        Returns ``(u_perf_branch, beta, u_safe, phi, l)``; the first entry is
        the (possibly blended) ``Perf`` input, the third the ``Safe`` input.
        """
        cfg = self.config
        x = np.asarray(x, dtype=float)
        u_perf = np.asarray(u_perf, dtype=float)
        c, _, Xi = self._tube(gamma, k, sigma)
        F = phi_depth(x, c, Xi)
        l = direction_vector(x, c, Xi)
        B, U = self.approx.system.B, self.approx.bounds.U
        try:
            u_safe = safe_law(l, B, U)
        except DegenerateDirectionError:
            u_safe = U.center.copy()
        if cfg.blending:
            beta = beta_weight(F, cfg.alpha)
            u = (1.0 - beta) * u_perf + beta * u_safe
        else:
            beta, u = 0.0, u_perf
        return u, beta, u_safe, F, l

    def _exits(self, state, x, u, l, rate, dt) -> bool:
        """Whether one held step leaves the active tube interior."""
        sys, V = self.approx.system, self.approx.bounds.V
        try:
            v = support_vector(V, sys.G.T @ l)
        except DegenerateDirectionError:
            v = V.center
        x1 = rk4_affine_step(sys.A, x, sys.B @ u + sys.G @ v + sys.w, dt)
        k = state.k
        s1 = min(state.sigma + rate * dt, float(self.times[k]))
        c, _, Xi = self._tube(state.gamma, k, s1)
        return phi_depth(x1, c, Xi) >= 1.0 - self.config.interior_tol

    def _maybe_reset(self, state, x, flags):
        """Downward pseudo-time reset once the end of the certified segment is reached."""
        if state.sigma < self.times[state.k] - 1e-12:
            return state
        band = 1.0 + self.config.boundary_band
        order = [state.gamma] + [i for i in sorted(self.k_star) if i != state.gamma]
        for i in order:
            k = self.k_star[i]
            lo = float(self.times[k - 1])
            c, _, Xi = self._tube(i, k, lo)
            if phi_depth(x, c, Xi) <= band:
                flags.add("sigma_reset")
                return replace(state, gamma=i, k=k, sigma=lo)
        return state

    def _advance(self, state, mode, rate, dt):
        sigma = state.sigma + rate * dt
        k = state.k
        exhausted = False
        if self.config.variant is Variant.FINITE:
            while k < self.n_seg and sigma >= self.times[k] - 1e-12:
                k += 1
            if sigma >= self.times[-1] - 1e-12:
                sigma = float(self.times[-1])
                exhausted = True
        else:
            sigma = min(sigma, float(self.times[k]))
        return ControllerState(mode, state.gamma, sigma, k, state.t + dt,
                               state.variant, exhausted)


def automaton_step(state: ControllerState, x, dt: float, approx: KernelApprox,
                   u_perf, config: ControllerConfig):
    """Functional form of :meth:`SafetyController.step`."""
    return SafetyController(approx, config).step(state, x, dt, u_perf)
