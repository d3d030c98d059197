"""Closed-loop simulation, input/disturbance policies, LQR and oracles."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from .controller import (ControllerConfig, ControllerState, Mode,
                         SafetyController)
from .ellipsoid import (TOL, Ellipsoid, contains, point_ellipsoid_distance,
                        sample_uniform)
from .errors import SafetyViolationImminent, StabilizabilityError
from .kernel import KernelApprox
from .reach import LtiSystem, rk4_affine_step


def saturate(u_raw, U: Ellipsoid) -> np.ndarray:
    """Keep ``u_raw`` if admissible, else the boundary point of ``U`` along ``u_raw`` from the center.

    A zero ``u_raw`` outside ``U`` has no direction; it is mapped to the
    boundary point along ``-mu``, the point nearest to the requested zero
    input along the center ray.
    """
    u_raw = np.asarray(u_raw, dtype=float)
    if contains(U, u_raw):
        return u_raw
    d = u_raw if np.any(u_raw) else -U.center
    Ud = U.shape @ d
    return U.center + Ud / math.sqrt(float(d @ Ud))


def worst_case_disturbance(l, G, V: Ellipsoid) -> np.ndarray:
    """Disturbance attaining the support of ``G V`` along ``l`` (pushes outward)."""
    l = np.asarray(l, dtype=float)
    G = np.asarray(G, dtype=float).reshape(l.size, -1)
    g = V.shape @ (G.T @ l)
    den = float((G.T @ l) @ g)
    if not den > 0.0:
        return V.center.copy()
    return V.center + g / math.sqrt(den)


# disturbance policies ---------------------------------------------------------

class DisturbancePolicy:
    name = "base"

    def reset(self):
        pass

    def __call__(self, j: int, t: float, x, l, G, V: Ellipsoid) -> np.ndarray:
        raise NotImplementedError


class NoDisturbance(DisturbancePolicy):
    """Nominal disturbance: the center of ``V``."""

    name = "none"

    def __call__(self, j, t, x, l, G, V):
        return V.center.copy()


class UniformRandom(DisturbancePolicy):
    name = "uniform"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.reset()

    def reset(self):
        self.rng = np.random.default_rng(self.seed)

    def __call__(self, j, t, x, l, G, V):
        if V.is_point:
            return V.center.copy()
        return sample_uniform(V, 1, self.rng)[0]


class WorstCase(DisturbancePolicy):
    name = "worst"

    def __call__(self, j, t, x, l, G, V):
        return worst_case_disturbance(l, G, V)


class AdversarialSwitching(DisturbancePolicy):
    """Alternate worst-case and anti-worst-case every ``period`` steps.

    ``seed`` draws a random phase so that repeated trials differ.
    """

    name = "adversarial"

    def __init__(self, period: int = 5, seed: int = 0):
        if period < 1:
            raise ValueError("period must be positive")
        self.period = period
        self.seed = seed
        self.phase = int(np.random.default_rng(seed).integers(0, 2 * period))

    def __call__(self, j, t, x, l, G, V):
        sign = 1.0 if ((j + self.phase) // self.period) % 2 == 0 else -1.0
        return worst_case_disturbance(sign * np.asarray(l, dtype=float), G, V)


class FixedDisturbance(DisturbancePolicy):
    name = "fixed"

    def __init__(self, samples):
        self.samples = np.atleast_2d(np.asarray(samples, dtype=float))

    def __call__(self, j, t, x, l, G, V):
        return self.samples[min(j, len(self.samples) - 1)].copy()


# performance policies ---------------------------------------------------------

class PerfPolicy:
    def __call__(self, j: int, t: float, x) -> np.ndarray:
        raise NotImplementedError


class ConstantInput(PerfPolicy):
    def __init__(self, u0):
        self.u0 = np.atleast_1d(np.asarray(u0, dtype=float))

    def __call__(self, j, t, x):
        return self.u0.copy()


class SaturatedLqr(PerfPolicy):
    """``sat(u_ss - gain (x - x_ss))`` into ``U``."""

    def __init__(self, gain, x_ss, U: Ellipsoid, u_ss=None):
        self.gain = np.atleast_2d(np.asarray(gain, dtype=float))
        self.x_ss = np.asarray(x_ss, dtype=float)
        self.U = U
        self.u_ss = np.zeros(self.gain.shape[0]) if u_ss is None else np.asarray(u_ss, dtype=float)

    def raw(self, x):
        return self.u_ss - self.gain @ (np.asarray(x, dtype=float) - self.x_ss)

    def __call__(self, j, t, x):
        return saturate(self.raw(x), self.U)


class FixedInput(PerfPolicy):
    def __init__(self, samples):
        self.samples = np.atleast_2d(np.asarray(samples, dtype=float))

    def __call__(self, j, t, x):
        return self.samples[min(j, len(self.samples) - 1)].copy()


# trajectory -------------------------------------------------------------------

@dataclass(eq=False)
class Trajectory:
    """Per-step record.  Row ``j`` holds the state at ``times[j]`` and the
    input/disturbance held over ``[times[j], times[j+1]]``; the final row
    repeats the last held values.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    disturbances: np.ndarray
    modes: List[str]
    sigmas: np.ndarray
    ks: np.ndarray
    gammas: np.ndarray
    betas: np.ndarray
    phis: np.ndarray
    safety_ok: np.ndarray
    flags: List[frozenset] = field(default_factory=list)

    def __len__(self):
        return self.times.size

    @property
    def all_safe(self) -> bool:
        return bool(np.all(self.safety_ok))

    def first_violation_time(self) -> Optional[float]:
        bad = np.flatnonzero(~self.safety_ok)
        return float(self.times[bad[0]]) if bad.size else None

    def mode_switches(self) -> int:
        return sum(a != b for a, b in zip(self.modes, self.modes[1:]))

    def has_flag(self, flag: str) -> bool:
        return any(flag in f for f in self.flags)

    def header(self) -> List[str]:
        n, m, p = self.states.shape[1], self.controls.shape[1], self.disturbances.shape[1]
        return (["t", "sigma", "k", "mode", "gamma", "beta"]
                + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                + [f"v{i + 1}" for i in range(p)] + ["safety_ok"])

    def rows(self):
        for j in range(len(self)):
            yield ([repr(float(self.times[j])), repr(float(self.sigmas[j])), str(int(self.ks[j])),
                    self.modes[j], str(int(self.gammas[j])), repr(float(self.betas[j]))]
                   + [repr(float(v)) for v in self.states[j]]
                   + [repr(float(v)) for v in self.controls[j]]
                   + [repr(float(v)) for v in self.disturbances[j]]
                   + [str(bool(self.safety_ok[j])).lower()])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            w.writerows(self.rows())

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            head = next(r)
            rows = list(r)
        n = sum(h.startswith("x") for h in head)
        m = sum(h.startswith("u") for h in head)
        p = sum(h.startswith("v") for h in head)
        col = {h: i for i, h in enumerate(head)}

        def num(name, conv=float):
            return np.array([conv(row[col[name]]) for row in rows])

        def block(prefix, cnt):
            return np.array([[float(row[col[f"{prefix}{i + 1}"]]) for i in range(cnt)]
                             for row in rows]).reshape(len(rows), cnt)

        return cls(num("t"), block("x", n), block("u", m), block("v", p),
                   [row[col["mode"]] for row in rows], num("sigma"), num("k", int),
                   num("gamma", int), num("beta"), np.full(len(rows), np.nan),
                   np.array([row[col["safety_ok"]] == "true" for row in rows]))


def simulate_closed_loop(sys: LtiSystem, approx: Optional[KernelApprox],
                         config: Optional[ControllerConfig], perf: PerfPolicy,
                         dist: DisturbancePolicy, x0, duration: float,
                         dt: float = 1e-3, K: Optional[Ellipsoid] = None,
                         V: Optional[Ellipsoid] = None,
                         membership_tol: float = TOL.membership) -> Trajectory:
    """RK4 simulation of ``x' = A x + B u + G v`` with inputs held over each step.

    With ``approx`` and ``config`` the hybrid controller supervises the
    performance input; with ``approx=None`` the performance input is applied
    directly.  ``K`` (default ``approx.K``) defines ``safety_ok`` and ``V``
    (default ``approx.bounds.V``) the disturbance set.

    Raises
    ------
    SafetyViolationImminent
        Propagated from the controller, with the partial trajectory attached.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")
    K = K if K is not None else approx.K
    V = V if V is not None else approx.bounds.V
    steps = int(round(duration / dt))
    A, B, G = sys.A, sys.B, sys.G
    Kinv = K.inv_shape()
    ctrl = SafetyController(approx, config) if approx is not None and config is not None else None
    dist.reset()

    n, m, p = sys.n, B.shape[1], G.shape[1]
    times = np.empty(steps + 1)
    states = np.empty((steps + 1, n))
    controls = np.empty((steps + 1, m))
    dists = np.empty((steps + 1, p))
    sigmas = np.zeros(steps + 1)
    ks = np.zeros(steps + 1, dtype=int)
    gammas = np.full(steps + 1, -1, dtype=int)
    betas = np.zeros(steps + 1)
    phis = np.full(steps + 1, np.nan)
    safe = np.zeros(steps + 1, dtype=bool)
    modes: List[str] = []
    flags: List[frozenset] = []

    def record(j, t, dec, u, v):
        times[j] = t
        states[j] = x
        controls[j] = u
        dists[j] = v
        d = x - K.center
        safe[j] = float(d @ Kinv @ d) <= 1.0 + membership_tol
        if dec is not None:
            sigmas[j], ks[j], gammas[j] = dec.sigma, dec.k, dec.gamma
            betas[j], phis[j] = dec.beta, dec.phi
            modes.append(dec.mode.value)
            flags.append(dec.flags)
        else:
            modes.append(Mode.PERF.value)
            flags.append(frozenset())

    def partial(j):
        return Trajectory(times[:j], states[:j], controls[:j], dists[:j], modes[:j],
                          sigmas[:j], ks[:j], gammas[:j], betas[:j], phis[:j], safe[:j],
                          flags[:j])

    state: Optional[ControllerState] = None
    if ctrl is not None:
        try:
            state = ctrl.initial_state(x)
        except SafetyViolationImminent as exc:
            exc.trajectory = partial(0)
            raise
    u = v = dec = None
    for j in range(steps):
        t = j * dt
        up = perf(j, t, x)
        l = None
        if ctrl is not None:
            try:
                state, dec = ctrl.step(state, x, dt, up)
            except SafetyViolationImminent as exc:
                exc.trajectory = partial(j)
                raise
            u, l = dec.u, dec.l
        else:
            u = up
        if l is None:
            l = Kinv @ (x - K.center)
        v = dist(j, t, x, l, G, V)
        record(j, t, dec, u, v)
        x = rk4_affine_step(A, x, B @ u + G @ v + sys.w, dt)
    record(steps, steps * dt, dec, u if u is not None else np.zeros(m),
           v if v is not None else V.center)
    if dec is not None:
        sigmas[steps], ks[steps] = state.sigma, state.k
    return Trajectory(times, states, controls, dists, modes, sigmas, ks, gammas, betas,
                      phis, safe, flags)


# LQR --------------------------------------------------------------------------

def lqr_gain(A, B, Q, R, tol: float = 1e-9, max_steps: int = 1_000_000,
             rtol: float = 1e-7, polish: int = 20) -> np.ndarray:
    """Infinite-horizon LQR gain from the stationary solution of the Riccati ODE.

    ``P' = A^T P + P A - P B R^{-1} B^T P + Q`` is integrated from ``P = 0``
    with RK4 until ``|P'|_inf <= tol * max(1, |P|_inf)``.  Step doubling with
    an entrywise error test keeps weightings that span many orders of
    magnitude stable.  The resulting (stabilizing) gain is then refined by
    Newton-Kleinman iterations, which stop once the Riccati residual no
    longer decreases.

    Raises
    ------
    StabilizabilityError
        If the integration does not become stationary within ``max_steps``
        steps or the iterate blows up.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Rinv = np.linalg.inv(R)
    S = B @ Rinv @ B.T

    def f(P):
        AP = A.T @ P
        D = AP + AP.T - P @ S @ P + Q
        return 0.5 * (D + D.T)

    def rk4(P, k1, h):
        k2 = f(P + 0.5 * h * k1)
        k3 = f(P + 0.5 * h * k2)
        k4 = f(P + h * k3)
        return P + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    P = np.zeros((n, n))
    h = 1e-3 / max(float(np.linalg.norm(A, 2)), 1e-6)
    stationary = False
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_steps):
            k1 = f(P)
            size = max(1.0, float(np.max(np.abs(P))))
            if np.max(np.abs(k1)) <= tol * size:
                stationary = True
                break
            full = rk4(P, k1, h)
            mid = rk4(P, k1, 0.5 * h)
            half = rk4(mid, f(mid), 0.5 * h)
            err = float(np.max(np.abs(half - full) / (1e-14 * size + rtol * np.abs(half))))
            if not np.isfinite(err):
                h *= 0.2
                continue
            if err <= 1.0:
                P = half + (half - full) / 15.0
                P = 0.5 * (P + P.T)
                h *= min(2.0, 0.9 * max(err, 1e-10) ** -0.2)
            else:
                h *= max(0.2, 0.9 * err ** -0.2)
    if not stationary or not np.all(np.isfinite(P)):
        raise StabilizabilityError("Riccati integration did not reach a stationary point")
    return Rinv @ B.T @ _kleinman(A, B, Q, R, P, polish)


def _kleinman(A, B, Q, R, P, iters: int) -> np.ndarray:
    """Newton-Kleinman refinement of a stabilizing Riccati iterate."""
    Rinv = np.linalg.inv(R)

    def residual(P):
        return float(np.max(np.abs(A.T @ P + P @ A - P @ B @ Rinv @ B.T @ P + Q)))

    best = residual(P)
    for _ in range(iters):
        K = Rinv @ B.T @ P
        Acl = A - B @ K
        if np.max(np.linalg.eigvals(Acl).real) >= 0:
            break
        Pn = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        Pn = 0.5 * (Pn + Pn.T)
        r = residual(Pn)
        if not r < best:
            break
        P, best = Pn, r
    return P


# oracle -----------------------------------------------------------------------

def monte_carlo_safety_oracle(sys: LtiSystem, K: Ellipsoid, bounds, x0s, horizon: float,
                              trials: int = 1, approx: Optional[KernelApprox] = None,
                              config: Optional[ControllerConfig] = None,
                              perf: Optional[PerfPolicy] = None, dt: float = 1e-3,
                              policies: Optional[Sequence[str]] = None,
                              seed: int = 0, period: int = 5) -> dict:
    """Simulate every initial state under each disturbance policy.

    Returns a report with, per initial state, the fraction of runs staying in
    ``K`` at every step, the smallest margin ``-dist(x, boundary)`` seen, and
    the mode-switch counts.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    policies = list(policies or ("worst", "uniform", "adversarial"))
    perf = perf or ConstantInput(bounds.U.center)
    report = {"horizon": horizon, "trials": trials, "policies": policies, "runs": []}
    for a, x0 in enumerate(np.atleast_2d(np.asarray(x0s, dtype=float)) if len(x0s) else []):
        ok = total = 0
        margin = np.inf
        switches = []
        for trial in range(trials):
            for name in policies:
                s = seed + 1000 * a + trial
                dist = {"worst": WorstCase(), "uniform": UniformRandom(s),
                        "adversarial": AdversarialSwitching(period, s),
                        "none": NoDisturbance()}[name]
                total += 1
                try:
                    tr = simulate_closed_loop(sys, approx, config, perf, dist, x0, horizon,
                                              dt, K=K, V=bounds.V)
                except SafetyViolationImminent as exc:
                    tr = exc.trajectory
                    switches.append(tr.mode_switches() if tr is not None else 0)
                    margin = min(margin, -np.inf)
                    continue
                ok += tr.all_safe
                switches.append(tr.mode_switches())
                margin = min(margin, min(-point_ellipsoid_distance(x, K)
                                         for x in tr.states[:: max(1, len(tr) // 200)]))
        report["runs"].append({"x0": x0.tolist(), "containment_rate": ok / total,
                               "min_margin": float(margin), "mode_switches": switches})
    return report
