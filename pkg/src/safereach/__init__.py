"""Ellipsoidal discriminating-kernel approximation and hybrid safety control for LTI systems."""
from .controller import (ControlDecision, ControllerConfig, ControllerState, Mode,
                         SafetyController, Variant, automaton_step, beta_weight,
                         direction_vector, phi_depth, safe_law)
from .ellipsoid import (TOL, Ellipsoid, HyperRectangle, NumericPolicy, concentric_intersect_ia,
                        contains, contains_ellipsoid, erode_by_ball, error_gap_estimate,
                        fusion_intersect_ia, mvie_box, point_ellipsoid_distance,
                        support_function, support_vector, volume)
from .errors import (ConfigError, DegenerateDirectionError, InfeasiblePartitionError,
                     InvalidEllipsoidError, SafeReachError, SafetyViolationImminent,
                     SegmentDegenerateError, StabilizabilityError, StaleArtifactError)
from .kernel import (KernelApprox, KernelOptions, Partition, check_invariance,
                     discriminating_kernel_ia, intermediate_kernel, make_uniform_partition,
                     membership_in_union, shrink_constraint)
from .models import Problem, planar_example, quadrotor_model
from .reach import (DirectionSet, InputBounds, LtiSystem, ReachSegment, adjoint_directions,
                    dynamics_bound, matrix_exponential, reach_tube_segment)
from .sim import (AdversarialSwitching, ConstantInput, FixedDisturbance, FixedInput,
                  NoDisturbance, SaturatedLqr, Trajectory, UniformRandom, WorstCase, lqr_gain,
                  monte_carlo_safety_oracle, saturate, simulate_closed_loop,
                  worst_case_disturbance)

__version__ = "0.1.0"
