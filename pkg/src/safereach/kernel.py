"""Piecewise-ellipsoidal under-approximation of the discriminating kernel.

Each terminal direction yields a chain ``K_|P| = K_down, K_{|P|-1}, ..., K_0``
where ``K_{k-1}`` is an inscribed ellipsoid of ``K_down`` intersected with the
start of the reach tube that steers into ``K_k`` over the k-th sub-interval.
The union of the surviving ``K_0`` pieces is inside the kernel.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .ellipsoid import (TOL, Ellipsoid, contains_ellipsoid, erode_by_ball,
                        error_gap_estimate, fusion_intersect_ia)
from .errors import InfeasiblePartitionError, SegmentDegenerateError
from .reach import (DirectionSet, InputBounds, LtiSystem, ReachSegment,
                    dynamics_bound, reach_tube_segment)


@dataclass(frozen=True, eq=False)
class Partition:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a partition needs at least two times")
        if t[0] != 0.0:
            raise ValueError("a partition must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("partition times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def norm(self) -> float:
        return float(np.max(np.diff(self.times)))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        """Number of sub-intervals ``|P|``."""
        return self.times.size - 1

    def interval(self, k: int):
        """The k-th sub-interval ``[t_{k-1}, t_k]`` (1-based)."""
        return float(self.times[k - 1]), float(self.times[k])


def make_uniform_partition(tau: float, n: int) -> Partition:
    if not tau > 0 or n < 1:
        raise ValueError("need tau > 0 and n >= 1")
    t = np.linspace(0.0, tau, n + 1)
    t[-1] = tau
    return Partition(t)


def shrink_constraint(K: Ellipsoid, M: float, P: Partition) -> Ellipsoid:
    """Erode ``K`` by ``M * |P|`` so inter-sample excursions stay in ``K``."""
    if M < 0:
        raise ValueError("M must be nonnegative")
    out = erode_by_ball(K, M * P.norm)
    if out is None:
        raise InfeasiblePartitionError(
            f"eroding by M*|P| = {M * P.norm:.4g} empties the constraint set; "
            "refine the partition")
    return out


def check_invariance(segment: ReachSegment, K_k: Ellipsoid) -> bool:
    """Whether the target ``K_k`` lies inside the start of its own reach tube."""
    return contains_ellipsoid(K_k, segment.start())


@dataclass
class KernelOptions:
    stop_on_invariance: bool = False
    propagate_direction: bool = False
    substeps: int = 10
    disturbance_floor: float = 1e-6
    disturbance_weight: str = "tangent"
    control_alignment: str = "tangent"
    concentric_fusion: bool = False
    jobs: int = 1


@dataclass(eq=False)
class KernelApprox:
    """Everything produced by the offline phase.

    ``chains[i][k]`` is ``K_k`` for direction ``i`` (``None`` after the chain
    dropped out); ``segments[i][k]`` is the tube over ``[t_{k-1}, t_k]``
    targeting ``chains[i][k]``.
    """

    system: LtiSystem
    bounds: InputBounds
    K: Ellipsoid
    K_down: Ellipsoid
    partition: Partition
    directions: DirectionSet
    M: float
    chains: Dict[int, List[Optional[Ellipsoid]]]
    segments: Dict[int, Dict[int, ReachSegment]]
    gaps: Dict[int, List[float]]
    dropouts: Dict[int, Optional[int]]
    invariance: List[tuple]
    timings: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.partition)

    def surviving(self, k: int) -> List[int]:
        return [i for i in sorted(self.chains) if self.chains[i][k] is not None]

    def segment(self, i: int, k: int) -> Optional[ReachSegment]:
        return self.segments.get(i, {}).get(k)

    def invariant_index(self, i: int) -> Optional[int]:
        """First (largest) chain index at which direction ``i`` was certified invariant."""
        ks = [k for (j, k) in self.invariance if j == i]
        return max(ks) if ks else None

    @property
    def total_gap(self) -> float:
        return float(sum(sum(g) for g in self.gaps.values()))

    def is_empty(self) -> bool:
        return not self.surviving(0) and not self.invariance


def _direction_chain(sys, K_down, bounds, P, ell, idx, opts):
    n = len(P)
    chain: List[Optional[Ellipsoid]] = [None] * (n + 1)
    chain[n] = K_down
    segs: Dict[int, ReachSegment] = {}
    gaps: List[float] = []
    inv: List[int] = []
    dropout = None
    ell_k = np.asarray(ell, dtype=float)
    for k in range(n, 0, -1):
        t0, t1 = P.interval(k)
        try:
            seg = reach_tube_segment(sys, chain[k], bounds, (t0, t1),
                                     step=(t1 - t0) / opts.substeps, ell_T=ell_k,
                                     direction_id=idx, k=k,
                                     disturbance_floor=opts.disturbance_floor,
                                     disturbance_weight=opts.disturbance_weight,
                                     control_alignment=opts.control_alignment)
        except SegmentDegenerateError:
            dropout = k
            break
        segs[k] = seg
        if opts.propagate_direction:
            ell_k = seg.ell[0]
        if check_invariance(seg, chain[k]):
            inv.append(k)
            if opts.stop_on_invariance:
                break
        start = seg.start()
        fused = fusion_intersect_ia(K_down, start, concentric=opts.concentric_fusion)
        if fused is None:
            dropout = k
            break
        gaps.append(max(error_gap_estimate(K_down, start, fused), 0.0))
        chain[k - 1] = fused
    return idx, chain, segs, gaps, inv, dropout


def discriminating_kernel_ia(sys: LtiSystem, K: Ellipsoid, bounds: InputBounds,
                             P: Partition, dirs: DirectionSet,
                             options: Optional[KernelOptions] = None) -> KernelApprox:
    """Run the recursion for every terminal direction.

    Directions whose chain degenerates (empty fusion or a collapsing tube)
    are dropped from the union and their last index is recorded in
    ``dropouts``.  With ``stop_on_invariance`` a direction stops at the first
    sub-interval whose tube start contains its target.
    """
    opts = options or KernelOptions()
    bounds.check(sys)
    if K.dim != sys.n or dirs.directions.shape[1] != sys.n:
        raise ValueError("constraint set or directions do not match the system dimension")
    timings = {}
    t = time.perf_counter()
    M = dynamics_bound(sys, K, bounds)
    K_down = shrink_constraint(K, M, P)
    timings["erosion"] = time.perf_counter() - t

    t = time.perf_counter()
    args = [(sys, K_down, bounds, P, dirs[i], i, opts) for i in range(len(dirs))]
    if opts.jobs > 1 and len(dirs) > 1:
        with ProcessPoolExecutor(max_workers=opts.jobs) as pool:
            results = list(pool.map(_direction_chain_star, args))
    else:
        results = [_direction_chain(*a) for a in args]
    timings["chains"] = time.perf_counter() - t

    chains, segments, gaps, dropouts, invariance = {}, {}, {}, {}, []
    for idx, chain, segs, g, inv, drop in sorted(results, key=lambda r: r[0]):
        chains[idx] = chain
        segments[idx] = segs
        gaps[idx] = g
        dropouts[idx] = drop
        invariance.extend((idx, k) for k in inv)
    return KernelApprox(sys, bounds, K, K_down, P, dirs, M, chains, segments,
                        gaps, dropouts, invariance, timings)


def _direction_chain_star(a):
    return _direction_chain(*a)


def intermediate_kernel(approx: KernelApprox, k: int) -> List[Ellipsoid]:
    """Surviving pieces ``K_k`` (inside the kernel over ``[0, tau - t_k]``)."""
    if not 0 <= k <= approx.size:
        raise IndexError(f"chain index {k} outside [0, {approx.size}]")
    return [approx.chains[i][k] for i in approx.surviving(k)]


def tube_depths(approx: KernelApprox, k: int, sigma: float, x,
                ids=None) -> Dict[int, float]:
    """Quadratic form of ``x`` in each available tube ellipsoid at ``(k, sigma)``."""
    x = np.asarray(x, dtype=float)
    out = {}
    for i in (sorted(approx.segments) if ids is None else ids):
        seg = approx.segment(i, k)
        if seg is None:
            continue
        c, _, Xi = seg.at(sigma)
        d = x - c
        out[i] = float(d @ Xi @ d)
    return out


def membership_in_union(approx: KernelApprox, k: int, sigma: float, x,
                        tol: float = TOL.interior) -> List[int]:
    """Ids of the directions whose tube at ``sigma`` holds ``x`` in its interior, ascending."""
    depths = tube_depths(approx, k, sigma, x)
    return sorted(i for i, F in depths.items() if F < 1.0 - tol)
