"""Ready-made problem instances: a planar oscillator and a hovering quadrotor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ellipsoid import Ellipsoid, HyperRectangle, mvie_box
from .kernel import KernelOptions
from .reach import InputBounds, LtiSystem

GRAVITY = 9.81


@dataclass(frozen=True, eq=False)
class Problem:
    """A system with its safe set, input/disturbance sets and study defaults.

    ``x_ss``, ``u_ss``, ``Q`` and ``R`` describe the performance LQR (``None``
    when the instance uses a constant performance input instead).
    """

    name: str
    system: LtiSystem
    K: Ellipsoid
    bounds: InputBounds
    x0: np.ndarray
    tau: float
    partitions: int
    options: KernelOptions
    x_ss: np.ndarray = None
    u_ss: np.ndarray = None
    Q: np.ndarray = None
    R: np.ndarray = None


def planar_example() -> Problem:
    """Rotating 2-D system with a scalar input and a matched scalar disturbance."""
    sys = LtiSystem(np.array([[0.0, 2.0], [-2.0, 0.0]]),
                    np.array([[1.0], [0.5]]), np.array([[1.0], [1.0]]))
    K = Ellipsoid(np.zeros(2), np.diag([0.25, 4.0]))
    U = Ellipsoid([0.0], [[1.0]])
    V = Ellipsoid([0.0], [[0.01]])
    return Problem("planar", sys, K, InputBounds(U, V), np.array([0.3, -0.7]),
                   tau=1.0, partitions=100, options=KernelOptions())


def quadrotor_system(g: float = GRAVITY, hover_thrust: float = 2.95) -> LtiSystem:
    """Hover linearization of a quadrotor.

    State ``(x, y, z, x', y', z', phi, theta, psi, p, q, r)``, input
    ``(thrust, three body torques)``, scalar wind acting on the three
    translational velocities.  Pitch accelerates along ``-x`` and roll along
    ``+y`` (right-handed body frame, z up).  The thrust enters the vertical
    acceleration as ``u1 - hover_thrust``, so the input that holds altitude
    is ``hover_thrust``.
    """
    A = np.zeros((12, 12))
    B = np.zeros((12, 4))
    G = np.zeros((12, 1))
    for i in range(3):
        A[i, 3 + i] = 1.0          # position <- velocity
        A[6 + i, 9 + i] = 1.0      # angle <- body rate
    A[3, 7] = -g
    A[4, 6] = g
    B[5, 0] = 1.0
    B[9, 1] = B[10, 2] = B[11, 3] = 1.0
    G[3:6, 0] = 1.0
    w = np.zeros(12)
    w[5] = -hover_thrust
    return LtiSystem(A, B, G, w)


def quadrotor_model() -> Problem:
    """Quadrotor hover study: safe flight envelope, actuator box and wind bound.

    The envelope is the axis-aligned ellipsoid with semi-axes 3 (position,
    around ``(0, 0, 4)``), 5 (speed), ``pi/2`` (roll, pitch), ``pi`` (yaw) and
    3 (body rates); the inputs live in the largest ellipsoid inside
    ``[0.5, 5.4] x [-0.5, 0.5]^3``; the wind lies in ``[0, 0.1]``.
    """
    U = mvie_box(HyperRectangle(np.array([0.5, -0.5, -0.5, -0.5]),
                                np.array([5.4, 0.5, 0.5, 0.5])))
    sys = quadrotor_system(hover_thrust=float(U.center[0]))
    semi = np.array([3, 3, 3, 5, 5, 5, np.pi / 2, np.pi / 2, np.pi, 3, 3, 3], dtype=float)
    center = np.zeros(12)
    center[2] = 4.0
    K = Ellipsoid(center, np.diag(semi ** 2))
    V = Ellipsoid([0.05], [[0.05 ** 2]])
    x0 = np.array([-0.4032, 0.7641, 3.6437, -1.2406, 0.0165, 3.0335,
                   -0.0789, -0.4835, -0.3841, 0.0375, 0.6806, 0.5509])
    x_ss = np.zeros(12)
    x_ss[2] = 5.0
    opts = KernelOptions(propagate_direction=True, disturbance_weight="volume",
                         concentric_fusion=True)
    return Problem("quadrotor", sys, K, InputBounds(U, V), x0, tau=2.0, partitions=200,
                   options=opts, x_ss=x_ss, u_ss=U.center.copy(),
                   Q=1e-5 * np.eye(12), R=np.diag([1e-6, 1e8, 1e8, 1e8]))
