"""Ellipsoid geometry.

An ellipsoid ``E(q, Q)`` is the set ``{x : (x - q)^T Q^{-1} (x - q) <= 1}``.
Every set in the package (state constraints, input and disturbance bounds,
reach tubes, kernel pieces) is stored this way.  All functions are pure and
operate on immutable :class:`Ellipsoid` values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.special import gammaln

from .errors import DegenerateDirectionError, InvalidEllipsoidError


@dataclass(frozen=True)
class NumericPolicy:
    """Tolerances shared by the geometry routines, the solver and the tests."""

    membership: float = 1e-9
    symmetry: float = 1e-10
    containment: float = 1e-8
    interior: float = 1e-9
    psd: float = 1e-12


TOL = NumericPolicy()


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Center + symmetric positive (semi)definite shape matrix.

    Parameters
    ----------
    center : array_like, shape (n,)
    shape : array_like, shape (n, n)
    degenerate : bool
        Allow a singular shape (points, segments).  Without it a singular
        shape raises :class:`InvalidEllipsoidError`.
    """

    center: np.ndarray
    shape: np.ndarray
    degenerate: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.center, dtype=float))
        Q = np.atleast_2d(np.asarray(self.shape, dtype=float))
        if q.ndim != 1 or Q.shape != (q.size, q.size):
            raise InvalidEllipsoidError(
                f"center of length {q.size} incompatible with shape {Q.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(Q))):
            raise InvalidEllipsoidError("non-finite entries")
        scale = max(np.max(np.abs(Q)), 1e-300)
        if np.max(np.abs(Q - Q.T)) > TOL.symmetry * scale:
            raise InvalidEllipsoidError("shape matrix is not symmetric")
        Q = 0.5 * (Q + Q.T)
        w = np.linalg.eigvalsh(Q) if Q.size else np.zeros(0)
        if w.size and w[0] < -TOL.psd * max(scale, 1.0):
            raise InvalidEllipsoidError("shape matrix is not positive semidefinite")
        if not self.degenerate and (w.size == 0 or w[0] <= TOL.psd * scale):
            raise InvalidEllipsoidError(
                "singular shape matrix; pass degenerate=True for point/segment sets")
        object.__setattr__(self, "center", _frozen(q))
        object.__setattr__(self, "shape", _frozen(Q))

    @property
    def dim(self) -> int:
        return self.center.size

    @classmethod
    def ball(cls, center, radius: float = 1.0) -> "Ellipsoid":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(center, radius ** 2 * np.eye(center.size))

    @classmethod
    def point(cls, center) -> "Ellipsoid":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(center, np.zeros((center.size, center.size)), degenerate=True)

    @property
    def is_point(self) -> bool:
        return not np.any(self.shape)

    def inv_shape(self) -> np.ndarray:
        if "inv" not in self._cache:
            if self.degenerate:
                raise InvalidEllipsoidError("degenerate ellipsoid has no inverse shape")
            self._cache["inv"] = np.linalg.inv(self.shape)
        return self._cache["inv"]

    def eig(self):
        """Eigen-decomposition of the shape matrix (ascending eigenvalues)."""
        if "eig" not in self._cache:
            w, V = np.linalg.eigh(self.shape)
            self._cache["eig"] = (np.clip(w, 0.0, None), V)
        return self._cache["eig"]

    def sqrt_shape(self) -> np.ndarray:
        if "sqrt" not in self._cache:
            w, V = self.eig()
            self._cache["sqrt"] = (V * np.sqrt(w)) @ V.T
        return self._cache["sqrt"]

    def quadratic(self, x) -> float:
        """``(x - q)^T Q^{-1} (x - q)``."""
        d = np.asarray(x, dtype=float) - self.center
        return float(d @ self.inv_shape() @ d)

    def to_dict(self) -> dict:
        out = {"center": self.center.tolist(), "shape": self.shape.tolist()}
        if self.degenerate:
            out["degenerate"] = True
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Ellipsoid":
        return cls(np.array(data["center"], dtype=float),
                   np.array(data["shape"], dtype=float),
                   degenerate=bool(data.get("degenerate", False)))

    def __eq__(self, other):
        if not isinstance(other, Ellipsoid):
            return NotImplemented
        return (np.array_equal(self.center, other.center)
                and np.array_equal(self.shape, other.shape)
                and self.degenerate == other.degenerate)

    __hash__ = None


@dataclass(frozen=True)
class HyperRectangle:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if np.any(lo > hi):
            raise ValueError("empty box: lower > upper in some coordinate")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))


def _check_dim(E: Ellipsoid, v):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (E.dim,):
        raise ValueError(f"vector of shape {v.shape} does not match dimension {E.dim}")
    return v


def contains(E: Ellipsoid, x, tol: float = TOL.membership) -> bool:
    """Point membership with relative tolerance on the quadratic form."""
    x = _check_dim(E, x)
    if E.degenerate:
        d = x - E.center
        if E.is_point:
            return bool(np.linalg.norm(d) <= tol * max(1.0, np.linalg.norm(E.center)))
        w, V = E.eig()
        keep = w > TOL.psd * max(w[-1], 1e-300)
        c = V.T @ d
        if np.linalg.norm(c[~keep]) > tol * max(1.0, np.linalg.norm(d)):
            return False
        return bool(np.sum(c[keep] ** 2 / w[keep]) <= 1.0 + tol)
    return E.quadratic(x) <= 1.0 + tol


def support_function(E: Ellipsoid, l) -> float:
    """``rho_E(l) = <l, q> + sqrt(<l, Q l>)``."""
    l = _check_dim(E, l)
    return float(l @ E.center + math.sqrt(max(float(l @ E.shape @ l), 0.0)))


def support_vector(E: Ellipsoid, l) -> np.ndarray:
    """Boundary point of ``E`` attaining the support function along ``l``."""
    l = _check_dim(E, l)
    Ql = E.shape @ l
    s = float(l @ Ql)
    if s <= 0.0:
        raise DegenerateDirectionError("direction lies in the null space of the shape matrix")
    return E.center + Ql / math.sqrt(s)


def _secular_root(w, d, tol=1e-15, maxiter=200):
    """Largest root of ``sum_i w_i^2 / (d_i + t)^2 = 1`` with ``t > -min(d)``.

    Returns ``(t, hard)``.  ``hard`` is True when the weights vanish on the
    smallest-``d`` block and the secular function never reaches 1 on the open
    interval; then ``t = -min(d)`` and the caller completes the solution
    along that block.
    """
    w = np.asarray(w, dtype=float)
    d = np.asarray(d, dtype=float)
    dmin = d.min()
    scale = max(np.max(np.abs(d)), 1e-300)
    block = d - dmin <= 1e-12 * scale
    w2 = w * w
    wnorm = math.sqrt(float(w2.sum()))
    if np.all(w2[block] <= (1e-30 * max(wnorm, 1.0)) ** 2):
        rest = ~block
        phi_at_min = float(np.sum(w2[rest] / (d[rest] - dmin) ** 2)) if rest.any() else 0.0
        if phi_at_min <= 1.0:
            return -dmin, True
    lo = -dmin
    hi = max(wnorm - dmin, lo + 1e-300)
    # psi(t) = phi(t)^{-1/2} - 1 is increasing on (lo, inf); negative near lo.
    t = hi
    live = w2 > 0
    w2, d = w2[live], d[live]
    for _ in range(maxiter):
        den = d + t
        with np.errstate(divide="ignore"):
            phi = float(np.sum(w2 / den ** 2))
        if phi == 0.0:
            hi = t
            t = 0.5 * (lo + hi)
            continue
        psi = 1.0 / math.sqrt(phi) - 1.0
        if psi > 0:
            hi = t
        else:
            lo = t
        if psi == 0.0 or hi - lo <= tol * max(1.0, abs(t), scale):
            break
        if not math.isfinite(phi):
            lo = t
            t = 0.5 * (lo + hi)
            continue
        dphi = -2.0 * float(np.sum(w2 / den ** 3))
        dpsi = -0.5 * phi ** -1.5 * dphi
        t_new = t - psi / dpsi if dpsi > 0 else 0.5 * (lo + hi)
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= tol * max(1.0, abs(t), scale):
            t = t_new
            break
        t = t_new
    return t, False


def _closest_boundary(a2, p):
    """Closest point to ``p`` on ``{y : sum y_i^2 / a2_i = 1}`` (axis-aligned)."""
    t, hard = _secular_root(np.sqrt(a2) * p, a2)
    if not hard:
        den = a2 + t
        return np.divide(a2 * p, den, out=np.zeros_like(p), where=den != 0)
    y = np.zeros_like(p)
    rest = a2 > a2.min() * (1 + 1e-12)
    y[rest] = a2[rest] * p[rest] / (a2[rest] + t)
    resid = max(1.0 - float(np.sum(y[rest] ** 2 / a2[rest])), 0.0)
    i = int(np.argmin(a2))
    y[i] = math.sqrt(a2[i] * resid)
    return y


def point_ellipsoid_distance(x, E: Ellipsoid) -> float:
    """Signed distance ``max_{|l|=1} <l, x> - rho_E(l)``.

    Positive outside ``E`` (Euclidean distance), negative inside (minus the
    distance to the boundary).  Solved through the secular equation of the
    projection onto the ellipsoid surface.
    """
    x = _check_dim(E, x)
    w, V = E.eig()
    p = V.T @ (x - E.center)
    y = _closest_boundary(w, p)
    dist = float(np.linalg.norm(y - p))
    inside = float(np.sum(p * p / w)) <= 1.0
    return -dist if inside else dist


def _max_quadratic_on_ball(H, g):
    """``max_{|y| <= 1} y^T H y + 2 g^T y`` for symmetric PSD ``H``."""
    h, V = np.linalg.eigh(0.5 * (H + H.T))
    gv = V.T @ g
    t, hard = _secular_root(gv, -h)
    lam = t
    if not hard:
        den = lam - h
        y = np.divide(gv, den, out=np.zeros_like(gv), where=den != 0)
    else:
        y = np.zeros_like(gv)
        rest = h < h.max() - 1e-12 * max(abs(h).max(), 1e-300)
        y[rest] = gv[rest] / (lam - h[rest])
        i = int(np.argmax(h))
        y[i] = math.sqrt(max(1.0 - float(np.sum(y ** 2)), 0.0))
    return float(np.sum(h * y * y) + 2.0 * gv @ y)


def max_quadratic_over(inner: Ellipsoid, outer: Ellipsoid) -> float:
    """``max_{x in inner} (x - q2)^T Q2^{-1} (x - q2)`` solved exactly."""
    L = inner.sqrt_shape()
    W = outer.inv_shape()
    d = inner.center - outer.center
    H = L @ W @ L
    g = L @ W @ d
    return _max_quadratic_on_ball(H, g) + float(d @ W @ d)


def contains_ellipsoid(inner: Ellipsoid, outer: Ellipsoid, tol: float = TOL.containment) -> bool:
    """True iff ``inner`` is a subset of ``outer`` (up to ``tol`` on the quadratic form)."""
    if inner.dim != outer.dim:
        raise ValueError("dimension mismatch")
    return max_quadratic_over(inner, outer) <= 1.0 + tol


def _depth(c, L, E: Ellipsoid):
    """Radius of the largest ``E(c, r^2 L L^T)`` inside ``E`` (negative if ``c`` is outside)."""
    Linv = np.linalg.inv(L)
    q = Linv @ (E.center - c)
    S = Linv @ E.shape @ Linv.T
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    w = np.clip(w, 1e-300, None)
    p = V.T @ (-q)
    y = _closest_boundary(w, p)
    dist = float(np.linalg.norm(y - p))
    return dist if float(np.sum(p * p / w)) <= 1.0 else -dist


_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def concentric_intersect_ia(E1: Ellipsoid, E2: Ellipsoid, c) -> Optional[Ellipsoid]:
    """Inscribed ellipsoid of ``E1 ∩ E2`` centered at ``c``.

    Each operand is first shrunk to the largest scaled copy of itself
    centered at ``c``.  Two concentric ellipsoids are diagonalized jointly,
    and in that basis the largest inscribed ellipsoid of their intersection
    takes the larger of the two quadratic forms axis by axis (exact for
    concentric operands).  Returns ``None`` when ``c`` is not interior to both.
    """
    c = np.asarray(c, dtype=float)
    Ws = []
    for E in (E1, E2):
        W = E.inv_shape()
        d = c - E.center
        rho = 1.0 - math.sqrt(max(float(d @ W @ d), 0.0))
        if not rho > 0.0:
            return None
        Ws.append(W / rho ** 2)
    lam, T = scipy.linalg.eigh(Ws[1], Ws[0])
    Ti = np.linalg.inv(T)
    W = Ti.T @ (np.maximum(lam, 1.0)[:, None] * Ti)
    P = np.linalg.inv(0.5 * (W + W.T))
    try:
        return Ellipsoid(c, 0.5 * (P + P.T))
    except InvalidEllipsoidError:
        return None


def fusion_intersect_ia(E1: Ellipsoid, E2: Ellipsoid, alpha_tol: float = 1e-6,
                        grid: int = 8, concentric: bool = False) -> Optional[Ellipsoid]:
    """Large ellipsoid inside ``E1 ∩ E2`` from the convex-combination fusion family.

    For ``a`` in [0, 1] the candidate has inverse shape proportional to
    ``a W1 + (1 - a) W2`` and the fused center; it is then scaled by the
    exact depth of that center in each operand, so every candidate lies in
    the intersection.  Log-volume is maximized over ``a`` by a coarse scan
    followed by golden-section refinement.  Returns ``None`` when no
    candidate has positive volume.

    With ``concentric`` the jointly-diagonalized candidate of
    :func:`concentric_intersect_ia` at the best fused center also competes;
    it is far less conservative when the operands are nearly concentric.
    """
    if E1.dim != E2.dim:
        raise ValueError("dimension mismatch")
    if contains_ellipsoid(E1, E2, tol=0.0):
        return E1
    if contains_ellipsoid(E2, E1, tol=0.0):
        return E2
    n = E1.dim
    W1, W2 = E1.inv_shape(), E2.inv_shape()
    b1, b2 = W1 @ E1.center, W2 @ E2.center

    def candidate(a):
        W = a * W1 + (1.0 - a) * W2
        W = 0.5 * (W + W.T)
        try:
            Cw = np.linalg.cholesky(W)
        except np.linalg.LinAlgError:
            return -np.inf, None
        c = np.linalg.solve(W, a * b1 + (1.0 - a) * b2)
        # P = W^{-1} = L L^T with L = Cw^{-T}
        L = np.linalg.inv(Cw).T
        r = min(_depth(c, L, E1), _depth(c, L, E2))
        if not r > 0.0:
            return -np.inf, None
        logvol = n * math.log(r) - float(np.sum(np.log(np.diag(Cw))))
        return logvol, (c, r, L)

    cache = {}

    def f(a):
        if a not in cache:
            cache[a] = candidate(a)
        return cache[a][0]

    pts = np.linspace(0.0, 1.0, grid + 1)
    vals = [f(a) for a in pts]
    i = int(np.argmax(vals))
    if np.isfinite(vals[i]):
        lo = pts[max(i - 1, 0)]
        hi = pts[min(i + 1, grid)]
        x1 = hi - _GOLD * (hi - lo)
        x2 = lo + _GOLD * (hi - lo)
        f1, f2 = f(x1), f(x2)
        while hi - lo > alpha_tol:
            if f1 >= f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - _GOLD * (hi - lo)
                f1 = f(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + _GOLD * (hi - lo)
                f2 = f(x2)
    best = max(cache, key=lambda a: cache[a][0])
    val, data = cache[best]
    if data is None:
        return None
    c, r, L = data
    P = r * r * (L @ L.T)
    P = 0.5 * (P + P.T)
    try:
        out = Ellipsoid(c, P)
    except InvalidEllipsoidError:
        out = None
    if concentric:
        alt = concentric_intersect_ia(E1, E2, c)
        if alt is not None and (out is None or _logdet(alt) > _logdet(out)):
            out = alt
    return out


def _logdet(E: Ellipsoid) -> float:
    return float(np.linalg.slogdet(E.shape)[1])


def erode_by_ball(E: Ellipsoid, r: float) -> Optional[Ellipsoid]:
    """Uniformly scaled inner approximation of ``E ⊖ B(r)``.

    Returns ``E(q, c^2 Q)`` with ``c = 1 - r / sqrt(lambda_min(Q))``; for every
    unit ``l``: ``c sqrt(l'Ql) + r <= sqrt(l'Ql)``, so the result plus the
    ball stays inside ``E``.  ``None`` when ``c <= 0``.
    """
    if r < 0:
        raise ValueError("erosion radius must be nonnegative")
    if r == 0:
        return E
    w, _ = E.eig()
    c = 1.0 - r / math.sqrt(w[0])
    if c <= 0.0:
        return None
    return Ellipsoid(E.center, c * c * E.shape)


def _log_unit_ball_volume(n: int) -> float:
    return 0.5 * n * math.log(math.pi) - float(gammaln(0.5 * n + 1.0))


def volume(E: Ellipsoid) -> float:
    w, _ = E.eig()
    if np.any(w <= 0.0):
        return 0.0
    return math.exp(_log_unit_ball_volume(E.dim) + 0.5 * float(np.sum(np.log(w))))


def mvie_box(rect: HyperRectangle) -> Ellipsoid:
    """Maximum-volume inscribed ellipsoid of an axis-aligned box."""
    half = 0.5 * (rect.upper - rect.lower)
    center = 0.5 * (rect.upper + rect.lower)
    return Ellipsoid(center, np.diag(half ** 2), degenerate=bool(np.any(half == 0.0)))


def error_gap_estimate(E1: Ellipsoid, E2: Ellipsoid, fused: Ellipsoid) -> float:
    """Upper bound on the volume lost by replacing ``E1 ∩ E2`` with ``fused``."""
    return min(volume(E1), volume(E2)) - volume(fused)


def sample_boundary(E: Ellipsoid, count: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((count, E.dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return E.center + z @ E.sqrt_shape()


def sample_uniform(E: Ellipsoid, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from the solid ellipsoid."""
    n = E.dim
    z = rng.standard_normal((count, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = rng.random(count) ** (1.0 / n)
    return E.center + (z * r[:, None]) @ E.sqrt_shape()


def ellipsoid_from_box(lower: Sequence[float], upper: Sequence[float]) -> Ellipsoid:
    return mvie_box(HyperRectangle(lower, upper))
