"""Quadrotor walkthrough: a saturated LQR with and without the safety supervisor.

The 12-state hover linearization flies from a tilted, moving initial state
toward a hover point.  The LQR gains assume unlimited thrust and torque; once
the inputs are clipped to the actuator ellipsoid the closed loop leaves the
flight envelope.  The supervisor keeps it inside.

The offline phase (15 directions, 200 pieces over 2 s) takes a few minutes on
one core.

    python3 demos/quadrotor_study.py [output_dir]
"""
import sys
import time
from pathlib import Path

from safereach import (ControllerConfig, SaturatedLqr, UniformRandom, lqr_gain,
                       quadrotor_model, simulate_closed_loop)
from safereach import config as cfgmod
from safereach.cli import cmd_analyze

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-quadrotor")
run = cfgmod.build(cfgmod.preset("quadrotor"))
prob = quadrotor_model()

gain = lqr_gain(prob.system.A, prob.system.B, prob.Q, prob.R)
lqr = SaturatedLqr(gain, prob.x_ss, prob.bounds.U, prob.u_ss)

bare = simulate_closed_loop(run.system, None, None, lqr, UniformRandom(0), prob.x0, 4.0, 1e-3,
                            K=run.K, V=run.bounds.V)
print(f"saturated LQR alone leaves the envelope at t = {bare.first_violation_time()} s")

t0 = time.perf_counter()
approx, code = cmd_analyze(run, out)
print(f"offline phase: {time.perf_counter() - t0:.0f} s, exit code {code}, "
      f"{len(approx.surviving(0))} of {len(approx.directions)} directions reach t = 0")

# Is the initial state certified?  If not, the controller still runs but
# flags its decisions as best effort.
depth = min(approx.chains[i][0].quadratic(prob.x0) for i in approx.surviving(0))
print(f"initial state quadratic form in the deepest start piece: {depth:.2f} "
      f"({'inside' if depth <= 1 else 'outside'} the certified kernel)")

hybrid = simulate_closed_loop(run.system, approx, run.controller, lqr, UniformRandom(0),
                              prob.x0, 2.0, 1e-3)
print(f"supervised over the 2 s horizon: all inside = {hybrid.all_safe}, "
      f"best effort = {hybrid.has_flag('best_effort')}")

# Freezing the pseudo-time in Perf stretches the 2 s tubes over a longer run.
frozen = ControllerConfig(alpha=0.9, sigma_rate_perf=0.0, fallback=True)
long_run = simulate_closed_loop(run.system, approx, frozen, lqr, UniformRandom(0), prob.x0,
                                6.0, 1e-3)
print(f"frozen pseudo-time: first violation at t = {long_run.first_violation_time()}")

bare.to_csv(out / "trajectory_lqr_only.csv")
hybrid.to_csv(out / "trajectory_supervised.csv")
long_run.to_csv(out / "trajectory_frozen.csv")
