"""Command-line front end: ``safereach analyze | simulate | bench-scaling | show-config``.

Exit codes: 0 ok, 1 configuration (or stale artifact) error, 2 infeasible
partition, 3 empty kernel, 4 safety violation where the guarantee applies.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import config as cfgmod
from . import io
from .controller import Mode
from .ellipsoid import Ellipsoid
from .errors import (ConfigError, InfeasiblePartitionError, SafetyViolationImminent,
                     StaleArtifactError)
from .kernel import (KernelApprox, KernelOptions, discriminating_kernel_ia,
                     make_uniform_partition)
from .reach import DirectionSet, InputBounds, LtiSystem
from .sim import (AdversarialSwitching, ConstantInput, FixedDisturbance, FixedInput,
                  NoDisturbance, SaturatedLqr, Trajectory, UniformRandom, WorstCase, lqr_gain,
                  simulate_closed_loop)

log = logging.getLogger("safereach")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_EMPTY, EXIT_UNSAFE = 0, 1, 2, 3, 4

# flags after which the controller no longer guarantees safety
UNGUARANTEED = frozenset({"best_effort", "horizon_exhausted"})


# analyze ------------------------------------------------------------------------

def cmd_analyze(run: cfgmod.RunConfig, out_dir) -> tuple:
    """Offline phase; returns ``(approx or None, exit code)`` and writes artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        approx = discriminating_kernel_ia(run.system, run.K, run.bounds, run.partition,
                                          run.directions, run.options)
    except InfeasiblePartitionError as exc:
        io.write_json(out / io.SUMMARY_FILE, {"error": "infeasible_partition",
                                              "message": str(exc)}, run.hash)
        log.error("%s", exc)
        return None, EXIT_INFEASIBLE
    io.save_kernel(approx, out, run.hash, run.options)
    if approx.is_empty():
        log.error("kernel approximation is empty: every direction dropped out")
        return approx, EXIT_EMPTY
    return approx, EXIT_OK


# simulate -----------------------------------------------------------------------

def _perf_policy(spec: dict, sys: LtiSystem, U: Ellipsoid, n: int):
    kind = spec.get("type", "constant")
    if kind == "constant":
        return ConstantInput(np.array(spec.get("u", U.center), float))
    if kind == "fixed":
        return FixedInput(np.array(spec["samples"], float))
    gain = lqr_gain(sys.A, sys.B, np.array(spec["Q"], float), np.array(spec["R"], float))
    x_ss = np.array(spec.get("x_ss", np.zeros(n)), float)
    u_ss = np.array(spec.get("u_ss", U.center), float)
    return SaturatedLqr(gain, x_ss, U, u_ss)


def _disturbance_policy(spec: dict):
    kind = spec["type"]
    if kind == "none":
        return NoDisturbance()
    if kind == "uniform":
        return UniformRandom(spec.get("seed", 0))
    if kind == "worst":
        return WorstCase()
    if kind == "adversarial":
        return AdversarialSwitching(spec.get("period", 5), spec.get("seed", 0))
    return FixedDisturbance(np.array(spec["samples"], float))


def guaranteed_rows(tr: Trajectory) -> int:
    """Number of leading rows covered by the safety guarantee."""
    for j, f in enumerate(tr.flags):
        if f & UNGUARANTEED:
            return j
    return len(tr)


def run_report(tr: Trajectory, refused: Optional[str] = None) -> dict:
    g = guaranteed_rows(tr)
    modes = np.array(tr.modes)
    return {
        "steps": len(tr),
        "all_safe": bool(tr.all_safe),
        "first_violation_time": tr.first_violation_time(),
        "guaranteed_until": float(tr.times[g - 1]) if g else None,
        "violation_in_guaranteed_regime": bool(refused) or not bool(np.all(tr.safety_ok[:g])),
        "safe_mode_fraction": float(np.mean(modes == Mode.SAFE.value)) if len(tr) else 0.0,
        "mode_switches": tr.mode_switches(),
        "flags": sorted({f for fs in tr.flags for f in fs}),
        "controller_refused": refused,
    }


def cmd_simulate(run: cfgmod.RunConfig, out_dir, approx: Optional[KernelApprox] = None) -> tuple:
    """Online phase for every ``(x0, disturbance policy)`` pair; returns ``(report, code)``."""
    out = Path(out_dir)
    sim = run.simulation
    if sim is None:
        raise ConfigError("configuration has no 'simulation' section")
    if approx is None:
        approx = io.load_kernel(out, expected_hash=run.hash)
    n = run.system.n
    perf = _perf_policy(sim.get("perf", {"type": "constant"}), run.system, run.bounds.U, n)
    pols = sim.get("disturbance_policies", [{"type": "uniform", "seed": 0}])
    dt = float(sim.get("dt", 1e-3))
    runs = []
    unsafe = False
    for a, x0 in enumerate(sim["x0"]):
        for b, spec in enumerate(pols):
            name = f"trajectory_x{a}_{spec['type']}{b}.csv"
            refused = None
            try:
                tr = simulate_closed_loop(run.system, approx, run.controller, perf,
                                          _disturbance_policy(spec), np.array(x0, float),
                                          float(sim["duration"]), dt, K=run.K, V=run.bounds.V)
            except SafetyViolationImminent as exc:
                tr, refused = exc.trajectory, str(exc)
            tr.to_csv(out / name)
            rep = {"x0": list(x0), "policy": spec, "file": name, **run_report(tr, refused)}
            unsafe |= rep["violation_in_guaranteed_regime"]
            runs.append(rep)
    report = {"runs": runs, "controller": {
        "alpha": run.controller.alpha, "sigma_rate_perf": run.controller.sigma_rate_perf,
        "variant": run.controller.variant.value, "blending": run.controller.blending,
        "fallback": run.controller.fallback}}
    io.write_json(out / "report.json", report, run.hash)
    return report, EXIT_UNSAFE if unsafe else EXIT_OK


# bench-scaling ------------------------------------------------------------------

def random_stable_system(n: int, rng: np.random.Generator) -> LtiSystem:
    """Random ``(A, B, G)`` with ``A`` shifted so its spectral abscissa is ``-0.5``."""
    A = rng.standard_normal((n, n)) / np.sqrt(n)
    A -= (np.max(np.linalg.eigvals(A).real) + 0.5) * np.eye(n)
    B = rng.standard_normal((n, 1))
    G = 0.1 * rng.standard_normal((n, 1))
    return LtiSystem(A, B, G)


def cmd_bench_scaling(dims: Sequence[int], repetitions: int, seed: int = 0,
                      partition: int = 20, horizon: float = 1.0, out_dir=None) -> dict:
    """Time the offline phase on random stable systems and fit ``time ~ n^p``."""
    dims = [int(d) for d in dims]
    if repetitions < 1:
        raise ConfigError("repetitions must be at least 1")
    if not dims or min(dims) < 2:
        raise ConfigError("dimensions must be at least 2")
    P = make_uniform_partition(horizon, partition)
    bounds = InputBounds(Ellipsoid([0.0], [[1.0]]), Ellipsoid([0.0], [[0.05 ** 2]]))
    rows = []
    for n in dims:
        times = []
        for r in range(repetitions):
            rng = np.random.default_rng([seed, n, r])
            sys_ = random_stable_system(n, rng)
            K = Ellipsoid(np.zeros(n), 4.0 * np.eye(n))
            dirs = DirectionSet(rng.standard_normal((1, n)))
            t0 = time.perf_counter()
            try:
                discriminating_kernel_ia(sys_, K, bounds, P, dirs, KernelOptions())
            except InfeasiblePartitionError:
                pass
            times.append(time.perf_counter() - t0)
        rows.append({"n": n, "seconds": times, "median": float(np.median(times))})
    if len(dims) >= 2:
        slope = float(np.polyfit(np.log(dims), np.log([r["median"] for r in rows]), 1)[0])
    else:
        slope = None
    result = {"dims": dims, "repetitions": repetitions, "seed": seed, "partition": partition,
              "results": rows, "exponent": slope}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        h = cfgmod.canonical_json({"dims": dims, "repetitions": repetitions, "seed": seed,
                                   "partition": partition})
        io.write_json(out / "bench.json", result, hashlib.sha256(h.encode()).hexdigest())
    return result


# argument handling --------------------------------------------------------------

def _load_config(args) -> dict:
    if args.preset:
        cfg = cfgmod.preset(args.preset)
    elif args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from exc
    else:
        raise ConfigError("pass --config PATH or --preset NAME")
    return cfgmod.apply_overrides(cfg, seed=args.seed, directions=args.directions,
                                  partition=args.partition, alpha=args.alpha,
                                  sigma_policy=args.sigma_policy, variant=args.variant)


def _out_dir(args, cfg) -> Path:
    return Path(args.output_dir or cfg.get("output_dir") or "safereach-out")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safereach", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--config", metavar="PATH")
        src.add_argument("--preset", choices=cfgmod.PRESETS)
        sp.add_argument("--output-dir", metavar="PATH")
        sp.add_argument("--jobs", type=int, default=1, metavar="N")
        sp.add_argument("--seed", type=int, metavar="N")
        sp.add_argument("--directions", type=int, metavar="N")
        sp.add_argument("--partition", type=int, metavar="N")
        sp.add_argument("--alpha", type=float, metavar="F")
        sp.add_argument("--sigma-policy", choices=["freeze", "track"])
        sp.add_argument("--variant", choices=["finite", "infinite"])

    common(sub.add_parser("analyze", help="compute the kernel approximation and tubes"))
    sim = sub.add_parser("simulate", help="run the hybrid controller on stored artifacts")
    common(sim)
    sim.add_argument("--analyze", action="store_true",
                     help="run the offline phase first instead of loading artifacts")
    show = sub.add_parser("show-config", help="print a preset configuration as JSON")
    show.add_argument("preset", choices=cfgmod.PRESETS)
    b = sub.add_parser("bench-scaling", help="fit offline time against state dimension")
    b.add_argument("--dims", type=int, nargs="+", default=[2, 4, 6, 8, 12])
    b.add_argument("--repetitions", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--partition", type=int, default=20)
    b.add_argument("--output-dir", metavar="PATH", default="safereach-out")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "show-config":
            print(json.dumps(cfgmod.preset(args.preset), indent=1))
            return EXIT_OK
        if args.command == "bench-scaling":
            res = cmd_bench_scaling(args.dims, args.repetitions, args.seed, args.partition,
                                    out_dir=args.output_dir)
            print(f"fitted exponent: {res['exponent']:.3f}" if res["exponent"] is not None
                  else "fitted exponent: n/a")
            return EXIT_OK
        if args.jobs < 1:
            raise ConfigError("--jobs must be positive")
        cfg = _load_config(args)
        run = cfgmod.build(cfg, jobs=args.jobs)
        out = _out_dir(args, cfg)
        if args.command == "analyze":
            approx, code = cmd_analyze(run, out)
            if approx is not None:
                print(f"M = {approx.M:.6g}, partition norm = {approx.partition.norm:.6g}, "
                      f"surviving = {approx.surviving(0)}, invariance = {approx.invariance}")
            return code
        approx = None
        if args.analyze:
            approx, code = cmd_analyze(run, out)
            if code != EXIT_OK:
                return code
        report, code = cmd_simulate(run, out, approx)
        for r in report["runs"]:
            print(f"{r['file']}: all_safe={r['all_safe']} "
                  f"first_violation={r['first_violation_time']} flags={r['flags']}")
        return code
    except (ConfigError, StaleArtifactError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
