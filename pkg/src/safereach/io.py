"""JSON persistence of offline artifacts and run reports.

Every file carries ``config_hash`` and ``version`` so that a simulation can
refuse artifacts computed from a different configuration.  Floats are written
with ``repr`` precision, so reloading reproduces every array bit for bit.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .ellipsoid import Ellipsoid
from .errors import StaleArtifactError
from .kernel import KernelApprox, KernelOptions, Partition
from .reach import DirectionSet, InputBounds, LtiSystem, ReachSegment

try:
    from importlib.metadata import PackageNotFoundError, version as _pkg_version
    try:
        VERSION = _pkg_version("artifact")
    except PackageNotFoundError:
        VERSION = "0.0.0"
except ImportError:  # pragma: no cover
    VERSION = "0.0.0"

KERNEL_FILE = "kernel.json"
SUMMARY_FILE = "summary.json"


def tube_file(i: int, k: int) -> str:
    return f"tube_dir{i}_k{k}.json"


def _stamp(payload: dict, cfg_hash: str) -> dict:
    return {"config_hash": cfg_hash, "version": VERSION, **payload}


def write_json(path, payload: dict, cfg_hash: str) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(_stamp(payload, cfg_hash), fh, indent=1)
    os.replace(tmp, path)


def read_json(path, expected_hash: Optional[str] = None) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if expected_hash is not None and data.get("config_hash") != expected_hash:
        raise StaleArtifactError(
            f"{path} was produced from configuration {data.get('config_hash', '?')[:12]}, "
            f"current configuration is {expected_hash[:12]}; rerun analyze")
    return data


def _ell(E: Optional[Ellipsoid]):
    return None if E is None else E.to_dict()


def _unell(d) -> Optional[Ellipsoid]:
    return None if d is None else Ellipsoid.from_dict(d)


def kernel_to_dict(approx: KernelApprox, options: Optional[KernelOptions] = None) -> dict:
    """Everything in ``approx`` except the tube samples."""
    return {
        "system": approx.system.to_dict(),
        "U": _ell(approx.bounds.U),
        "V": _ell(approx.bounds.V),
        "K": _ell(approx.K),
        "K_down": _ell(approx.K_down),
        "partition": approx.partition.times.tolist(),
        "directions": approx.directions.to_dict(),
        "M": approx.M,
        "chains": {str(i): [_ell(E) for E in c] for i, c in approx.chains.items()},
        "segments": {str(i): sorted(s) for i, s in approx.segments.items()},
        "gaps": {str(i): g for i, g in approx.gaps.items()},
        "dropouts": {str(i): d for i, d in approx.dropouts.items()},
        "invariance": [list(r) for r in approx.invariance],
        "timings": approx.timings,
        "options": None if options is None else asdict(options),
    }


def summary_of(approx: KernelApprox) -> dict:
    return {
        "M": approx.M,
        "partition_norm": approx.partition.norm,
        "partition_size": approx.size,
        "directions": len(approx.directions),
        "surviving_directions": approx.surviving(0),
        "dropouts": {str(i): d for i, d in approx.dropouts.items() if d is not None},
        "invariance": [{"direction": i, "k": k} for i, k in approx.invariance],
        "kernel_empty": approx.is_empty(),
        "total_gap": approx.total_gap,
        "timings": approx.timings,
    }


def save_kernel(approx: KernelApprox, out_dir, cfg_hash: str,
                options: Optional[KernelOptions] = None) -> Path:
    """Write ``kernel.json``, one ``tube_dir<i>_k<k>.json`` per segment and ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, segs in approx.segments.items():
        for k, seg in segs.items():
            write_json(out / tube_file(i, k), seg.to_dict(), cfg_hash)
    write_json(out / KERNEL_FILE, kernel_to_dict(approx, options), cfg_hash)
    write_json(out / SUMMARY_FILE, summary_of(approx), cfg_hash)
    return out


def load_kernel(out_dir, expected_hash: Optional[str] = None) -> KernelApprox:
    """Rebuild a :class:`KernelApprox` from disk, checking every file's hash."""
    out = Path(out_dir)
    d = read_json(out / KERNEL_FILE, expected_hash)
    h = d["config_hash"]
    segments = {}
    for i, ks in d["segments"].items():
        segments[int(i)] = {int(k): ReachSegment.from_dict(read_json(out / tube_file(int(i), k), h))
                            for k in ks}
    return KernelApprox(
        system=LtiSystem.from_dict(d["system"]),
        bounds=InputBounds(_unell(d["U"]), _unell(d["V"])),
        K=_unell(d["K"]),
        K_down=_unell(d["K_down"]),
        partition=Partition(np.array(d["partition"], dtype=float)),
        directions=DirectionSet.from_dict(d["directions"]),
        M=float(d["M"]),
        chains={int(i): [_unell(E) for E in c] for i, c in d["chains"].items()},
        segments=segments,
        gaps={int(i): list(g) for i, g in d["gaps"].items()},
        dropouts={int(i): v for i, v in d["dropouts"].items()},
        invariance=[tuple(r) for r in d["invariance"]],
        timings=dict(d["timings"]),
    )
