"""Internal ellipsoidal approximation of robust backward reach tubes.

For ``x' = A x + B u + G v`` with ``u in E(mu, U)`` and ``v in E(nu, V)``, the
set of states that can be steered into a target ellipsoid at the end of an
interval despite the disturbance is approximated from inside by a single
ellipsoid per terminal direction.  In backward time ``s`` the center and
shape obey

    c'  = -A c - B mu - G nu
    X'  = -A X - X A^T + X^{1/2} S R^{1/2} + R^{1/2} S^T X^{1/2}
          - pi X - D / pi

with ``R = B U B^T``, ``D = G V G^T``, ``S`` the rotation aligning
``R^{1/2} l`` with ``X^{1/2} l`` and ``pi = sqrt(<l, D l> / <l, X l>)``.  The
direction ``l(s) = exp(A^T s) l_T`` follows the adjoint equation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .ellipsoid import Ellipsoid
from .errors import SegmentDegenerateError


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """``x' = A x + B u + G v + w`` with a constant drift ``w`` (zero by default)."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    w: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        G = np.asarray(self.G, dtype=float).reshape(n, -1)
        w = np.zeros(n) if self.w is None else np.asarray(self.w, dtype=float).reshape(n)
        for M in (A, B, G, w):
            if not np.all(np.isfinite(M)):
                raise ValueError("system matrices must be finite")
            M.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def rhs(self, x, u, v):
        return self.A @ x + self.B @ u + self.G @ v + self.w

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "G": self.G.tolist(),
                "w": self.w.tolist()}

    @classmethod
    def from_dict(cls, d) -> "LtiSystem":
        return cls(np.array(d["A"], float), np.array(d["B"], float), np.array(d["G"], float),
                   None if d.get("w") is None else np.array(d["w"], float))


@dataclass(frozen=True)
class InputBounds:
    """Control set ``U`` (positive definite) and disturbance set ``V`` (may be a point)."""

    U: Ellipsoid
    V: Ellipsoid

    def __post_init__(self):
        if self.U.degenerate:
            raise ValueError("control set must be positive definite")

    def check(self, sys: LtiSystem):
        if sys.B.shape[1] != self.U.dim:
            raise ValueError(f"B has {sys.B.shape[1]} columns but U has dimension {self.U.dim}")
        if sys.G.shape[1] != self.V.dim:
            raise ValueError(f"G has {sys.G.shape[1]} columns but V has dimension {self.V.dim}")


@dataclass(frozen=True)
class DirectionSet:
    directions: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.directions, dtype=float))
        if d.shape[0] == 0:
            raise ValueError("direction set must be nonempty")
        norms = np.linalg.norm(d, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero direction")
        d = d / norms[:, None]
        d.setflags(write=False)
        object.__setattr__(self, "directions", d)

    def __len__(self):
        return self.directions.shape[0]

    def __getitem__(self, i):
        return self.directions[i]

    def to_dict(self) -> dict:
        return {"directions": self.directions.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d) -> "DirectionSet":
        # stored rows are already unit; skip renormalization to stay bit-exact
        out = cls.__new__(cls)
        arr = np.array(d["directions"], dtype=float)
        arr.setflags(write=False)
        object.__setattr__(out, "directions", arr)
        object.__setattr__(out, "seed", d.get("seed"))
        return out

    @classmethod
    def random(cls, n: int, count: int, seed: int = 0, include_axes: bool = False) -> "DirectionSet":
        rng = np.random.default_rng(seed)
        d = rng.standard_normal((count, n))
        if include_axes:
            d = np.vstack([d, np.eye(n), -np.eye(n)])
        return cls(d, seed)


def rk4_affine_step(A, x, w, h: float) -> np.ndarray:
    """One RK4 step of ``x' = A x + w`` with ``w`` held constant."""
    k1 = A @ x + w
    k2 = A @ (x + 0.5 * h * k1) + w
    k3 = A @ (x + 0.5 * h * k2) + w
    k4 = A @ (x + h * k3) + w
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def matrix_exponential(A, t: float = 1.0) -> np.ndarray:
    """``exp(A t)`` by scaling and squaring with a degree-13 Pade approximant."""
    At = np.asarray(A, dtype=float) * t
    if not np.all(np.isfinite(At)):
        raise FloatingPointError("non-finite matrix")
    E = scipy.linalg.expm(At)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError("matrix exponential overflowed")
    return E


def adjoint_directions(A, ell_T, grid, t_end: Optional[float] = None) -> np.ndarray:
    """``l(t) = exp(A^T (t_end - t)) l_T`` sampled on ``grid`` (``t_end`` defaults to ``grid[-1]``)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    ell_T = np.atleast_1d(np.asarray(ell_T, dtype=float))
    grid = np.asarray(grid, dtype=float)
    t_end = grid[-1] if t_end is None else t_end
    out = np.empty((grid.size, ell_T.size))
    for i, t in enumerate(grid):
        out[i] = ell_T if t == t_end else matrix_exponential(A.T, t_end - t) @ ell_T
    return out


def _sqrtm_psd(X):
    w, V = np.linalg.eigh(X)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _rotation(a, b):
    """Orthogonal matrix mapping unit vector ``a`` to unit vector ``b`` within their plane."""
    n = a.size
    c = float(a @ b)
    if c > -1.0 + 1e-12:
        K = np.outer(b, a) - np.outer(a, b)
        return np.eye(n) + K + (K @ K) / (1.0 + c)
    # antiparallel: half-turn in a plane containing a
    u = np.zeros(n)
    u[int(np.argmin(np.abs(a)))] = 1.0
    u -= (u @ a) * a
    u /= np.linalg.norm(u)
    return np.eye(n) - 2.0 * np.outer(a, a) - 2.0 * np.outer(u, u)


class _StageDegenerate(Exception):
    pass


class _TubeRhs:
    """Right-hand side of the backward center/shape equations."""

    def __init__(self, sys: LtiSystem, U: Ellipsoid, V: Ellipsoid, disturbance_floor: float,
                 weight: str = "tangent", alignment: str = "tangent"):
        for name, val in (("disturbance weight", weight), ("control alignment", alignment)):
            if val not in ("tangent", "volume"):
                raise ValueError(f"{name} must be 'tangent' or 'volume'")
        self.weight = weight
        self.alignment = alignment
        self.A = sys.A
        self.R = sys.B @ U.shape @ sys.B.T
        self.R = 0.5 * (self.R + self.R.T)
        self.Rh = _sqrtm_psd(self.R)
        self.has_control = bool(np.any(self.R))
        self.drift = -(sys.B @ U.center) - (sys.G @ V.center) - sys.w
        self.D = sys.G @ V.shape @ sys.G.T
        self.D = 0.5 * (self.D + self.D.T)
        self.has_dist = bool(np.any(self.D))
        self.trD = float(np.trace(self.D))
        self.floor = disturbance_floor

    def __call__(self, c, X, ell):
        A = self.A
        w, Vx = np.linalg.eigh(X)
        if not w[0] > 0.0:
            # an RK4 stage left the cone; the weights below would blow up
            raise _StageDegenerate
        dc = -A @ c + self.drift
        AX = A @ X
        dX = -AX - AX.T
        ln = ell / np.linalg.norm(ell)
        lXl = float(ln @ X @ ln)
        if self.has_control:
            Xh = (Vx * np.sqrt(w)) @ Vx.T
            if self.alignment == "volume":
                # orthogonal S maximizing tr(X^{-1/2} S R^{1/2}), the growth of log det X
                Uo, _, Vt = np.linalg.svd(self.Rh @ np.linalg.inv(Xh))
                S = Vt.T @ Uo.T
            else:
                a = self.Rh @ ln
                b = Xh @ ln
                na, nb = np.linalg.norm(a), np.linalg.norm(b)
                S = np.eye(c.size) if na == 0 or nb == 0 else _rotation(a / na, b / nb)
            T = Xh @ S @ self.Rh
            dX += T + T.T
        if self.has_dist:
            if self.weight == "volume":
                pi = math.sqrt(max(float(np.trace(np.linalg.solve(X, self.D))), 1e-300) / c.size)
            else:
                lDl = max(float(ln @ self.D @ ln), self.floor * self.trD)
                pi = math.sqrt(lDl / lXl)
            dX -= pi * X + self.D / pi
        return dc, dX


@dataclass(eq=False)
class ReachSegment:
    """One direction's reach tube over one partition sub-interval.

    Arrays are stored in forward time: ``grid[0]`` is the interval start
    (the segment-start ellipsoid) and ``grid[-1]`` its end (the target).
    """

    direction_id: int
    terminal_direction: np.ndarray
    interval: tuple
    grid: np.ndarray
    ell: np.ndarray
    centers: np.ndarray
    shapes: np.ndarray
    k: Optional[int] = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def step(self) -> float:
        return (self.interval[1] - self.interval[0]) / (self.grid.size - 1)

    def ellipsoid(self, i: int) -> Ellipsoid:
        return Ellipsoid(self.centers[i], self.shapes[i])

    def start(self) -> Ellipsoid:
        if "start" not in self._cache:
            self._cache["start"] = self.ellipsoid(0)
        return self._cache["start"]

    def end(self) -> Ellipsoid:
        return self.ellipsoid(-1)

    @property
    def inv_shapes(self) -> np.ndarray:
        if "inv" not in self._cache:
            self._cache["inv"] = np.linalg.inv(self.shapes)
        return self._cache["inv"]

    @property
    def log_shapes(self) -> np.ndarray:
        if "log" not in self._cache:
            w, V = np.linalg.eigh(self.shapes)
            self._cache["log"] = np.einsum("kij,kj,klj->kil", V, np.log(w), V)
        return self._cache["log"]

    def locate(self, sigma: float):
        """Grid index ``i`` and weight ``w`` with ``sigma = (1-w) grid[i] + w grid[i+1]``."""
        t0, t1 = self.interval
        N = self.grid.size - 1
        pos = (sigma - t0) / (t1 - t0) * N
        i = int(round(pos))
        if abs(pos - i) <= 1e-7:
            return min(max(i, 0), N), 0.0
        i = min(max(int(math.floor(pos)), 0), N - 1)
        return i, min(max(pos - i, 0.0), 1.0)

    def at(self, sigma: float):
        """Center, shape and inverse shape at pseudo-time ``sigma``.

        Between samples centers are interpolated linearly and shapes
        log-Euclidean.
        """
        i, w = self.locate(sigma)
        if w == 0.0:
            return self.centers[i], self.shapes[i], self.inv_shapes[i]
        c = (1 - w) * self.centers[i] + w * self.centers[i + 1]
        L = (1 - w) * self.log_shapes[i] + w * self.log_shapes[i + 1]
        lw, V = np.linalg.eigh(L)
        X = (V * np.exp(lw)) @ V.T
        Xi = (V * np.exp(-lw)) @ V.T
        return c, X, Xi

    def ellipsoid_at(self, sigma: float) -> Ellipsoid:
        c, X, _ = self.at(sigma)
        return Ellipsoid(c, 0.5 * (X + X.T))

    def to_dict(self) -> dict:
        n = self.centers.shape[1]
        return {
            "direction_id": int(self.direction_id),
            "k": None if self.k is None else int(self.k),
            "terminal_direction": self.terminal_direction.tolist(),
            "interval": [float(self.interval[0]), float(self.interval[1])],
            "grid": self.grid.tolist(),
            "ell": self.ell.tolist(),
            "centers": self.centers.tolist(),
            "shapes": self.shapes.reshape(-1, n * n).tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "ReachSegment":
        centers = np.array(d["centers"], dtype=float)
        n = centers.shape[1]
        return cls(
            direction_id=int(d["direction_id"]),
            terminal_direction=np.array(d["terminal_direction"], dtype=float),
            interval=tuple(d["interval"]),
            grid=np.array(d["grid"], dtype=float),
            ell=np.array(d["ell"], dtype=float),
            centers=centers,
            shapes=np.array(d["shapes"], dtype=float).reshape(-1, n, n),
            k=d.get("k"),
        )


def reach_tube_segment(sys: LtiSystem, target: Ellipsoid, bounds: InputBounds,
                       interval: Sequence[float], step: Optional[float] = None,
                       ell_T=None, direction_id: int = 0, k: Optional[int] = None,
                       disturbance_floor: float = 1e-6,
                       disturbance_weight: str = "tangent",
                       control_alignment: str = "tangent") -> ReachSegment:
    """Integrate the internal approximation backward over ``interval``.

    ``step`` defaults to a tenth of the interval length and must divide it.
    Classical RK4 is used on the coupled center/shape system; shapes are
    re-symmetrized and Cholesky-checked after every step.

    The disturbance enters through a weight ``pi > 0``; every positive value
    yields an inner approximation.  ``"tangent"`` uses
    ``sqrt(<l, D l> / <l, X l>)``, which keeps the ellipsoid tangent to the
    true tube along ``l``; ``"volume"`` uses ``sqrt(tr(X^{-1} D) / n)``, which
    minimizes the instantaneous loss of ``log det X`` and avoids collapse
    when ``l`` is nearly orthogonal to the disturbance range.  Likewise the
    control term uses a rotation ``S``: ``"tangent"`` aligns ``R^{1/2} l``
    with ``X^{1/2} l``; ``"volume"`` takes the polar factor maximizing the
    growth of ``log det X`` (independent of ``l``).

    Raises
    ------
    SegmentDegenerateError
        When the shape matrix stops being positive definite (the disturbance
        outweighs the control along some direction).
    """
    bounds.check(sys)
    if target.dim != sys.n:
        raise ValueError("target dimension does not match the system")
    t0, t1 = float(interval[0]), float(interval[1])
    length = t1 - t0
    if not length > 0:
        raise ValueError("empty interval")
    if step is None:
        N = 10
    else:
        N = int(round(length / step))
        if N < 1 or abs(N * step - length) > 1e-9 * max(length, 1.0):
            raise ValueError("step must divide the interval length")
    h = length / N
    ell_T = np.ones(sys.n) if ell_T is None else np.asarray(ell_T, dtype=float)
    ell_T = ell_T / np.linalg.norm(ell_T)

    rhs = _TubeRhs(sys, bounds.U, bounds.V, disturbance_floor, disturbance_weight,
                   control_alignment)
    half = matrix_exponential(sys.A.T, 0.5 * h)

    grid = t0 + h * np.arange(N + 1)
    grid[-1] = t1
    n = sys.n
    centers = np.empty((N + 1, n))
    shapes = np.empty((N + 1, n, n))
    ells = np.empty((N + 1, n))
    c = target.center.copy()
    X = target.shape.copy()
    ell = ell_T.copy()
    centers[N], shapes[N], ells[N] = c, X, ell
    for j in range(N, 0, -1):
        ell_mid = half @ ell
        ell_end = half @ ell_mid
        try:
            k1c, k1X = rhs(c, X, ell)
            k2c, k2X = rhs(c + 0.5 * h * k1c, X + 0.5 * h * k1X, ell_mid)
            k3c, k3X = rhs(c + 0.5 * h * k2c, X + 0.5 * h * k2X, ell_mid)
            k4c, k4X = rhs(c + h * k3c, X + h * k3X, ell_end)
            c = c + (h / 6.0) * (k1c + 2 * k2c + 2 * k3c + k4c)
            X = X + (h / 6.0) * (k1X + 2 * k2X + 2 * k3X + k4X)
            X = 0.5 * (X + X.T)
            ell = ell_end / np.linalg.norm(ell_end)
            np.linalg.cholesky(X)
        except (np.linalg.LinAlgError, _StageDegenerate):
            raise SegmentDegenerateError(
                f"shape lost positive definiteness at t = {grid[j - 1]:.6g}",
                time=float(grid[j - 1])) from None
        centers[j - 1], shapes[j - 1], ells[j - 1] = c, X, ell
    return ReachSegment(direction_id, ell_T, (t0, t1), grid, ells, centers, shapes, k=k)


def dynamics_bound(sys: LtiSystem, K: Ellipsoid, bounds: InputBounds) -> float:
    """Upper bound on ``|A x + B u + G v + w|_2`` over ``K x U x V``.

    The constant part (image of the three centers plus the drift) is bounded
    as one vector; each centered set adds the spectral norm of its image.
    """
    def smax(M):
        return float(np.linalg.norm(M, 2)) if M.size else 0.0
    U, V = bounds.U, bounds.V
    offset = sys.A @ K.center + sys.B @ U.center + sys.G @ V.center + sys.w
    return (float(np.linalg.norm(offset)) + smax(sys.A @ K.sqrt_shape())
            + smax(sys.B @ U.sqrt_shape()) + smax(sys.G @ V.sqrt_shape()))
