"""Command-line front end.

Usage: eqbundle <command> --config <path> [--output <path>] [--seed <int>]
[--tol-<name> <value>]

The config file is a JSON object holding the system, the command, and its
inputs; flags override the matching config scalars (flag > config >
default).  The report envelope goes to the output path when one is set,
otherwise to stdout.  Exit codes: 0 success, 1 invalid input, 2 a
degeneracy or numerical failure detected by the computation.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Optional

import numpy as np

from .audit import audit_point
from .config import COMMANDS, RunConfig, config_from_dict, load_config_dict
from .errors import EqBundleError, InputError
from .finder import enumerate_level_points, trace_fiber
from .monodromy import eigen_along_fiber_loop, track_matrix_loop
from .reports import (
    build_envelope,
    canonical_json,
    fiber_trace_csv,
    transport_csv,
    write_text_atomic,
)
from .systems import PointState
from .tolerances import Tolerances
from .transport import check_cocycle, holonomy_loop, lift_curve

__all__ = ["main", "run_config"]


def _tolerance_flags() -> list[str]:
    return [field.name for field in dataclasses.fields(Tolerances)]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqbundle",
        description="equilibrium bundles: audits, fibers, transport, monodromy",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command)
        sub.add_argument("--config", required=True, help="path to a JSON run config")
        sub.add_argument("--output", default=None, help="override the output path")
        sub.add_argument("--seed", type=int, default=None, help="override the seed")
        for name in _tolerance_flags():
            sub.add_argument(
                f"--tol-{name.replace('_', '-')}",
                dest=f"tol_{name}",
                type=float,
                default=None,
                help=f"override tolerance {name!r}",
            )
    return parser


def _apply_flag_overrides(raw: dict, args: argparse.Namespace) -> None:
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.output is not None:
        output = raw.get("output")
        if not isinstance(output, dict):
            output = {}
        output["path"] = args.output
        raw["output"] = output
    overrides = {}
    for name in _tolerance_flags():
        value = getattr(args, f"tol_{name}")
        if value is not None:
            overrides[name] = value
    if overrides:
        tolerances = raw.get("tolerances")
        if not isinstance(tolerances, dict):
            tolerances = {}
        tolerances.update(overrides)
        raw["tolerances"] = tolerances


def run_config(config: RunConfig):
    """Execute a validated run.  Returns (result payload, raw artifact);
    the artifact backs CSV rendering for trace-fiber and transport."""
    fields = config.settings
    sys_spec = config.system
    tols = config.tolerances
    command = config.command
    if command == "audit":
        report = audit_point(
            sys_spec, PointState(fields["lambda"], fields["x"]), tols=tols
        )
        return report.as_dict(), None
    if command == "find":
        points = enumerate_level_points(
            sys_spec,
            fields["lambda"],
            fields["level"],
            budget=fields["budget"],
            seed=fields["seed"],
            tols=tols,
        )
        return {"count": len(points), "points": [p.as_dict() for p in points]}, None
    if command == "trace-fiber":
        trace = trace_fiber(
            sys_spec,
            fields["lambda"],
            fields["x0"],
            tols=tols,
            initial_step=fields["initial_step"],
            max_step=fields["max_step"],
            min_step=fields["min_step"],
            max_points=fields["max_points"],
            initial_direction=fields["direction"],
        )
        return trace.as_dict(), trace
    if command == "transport":
        result = lift_curve(
            sys_spec,
            fields["path"],
            fields["x0"],
            tols=tols,
            initial_fraction=fields["initial_fraction"],
            max_fraction=fields["max_fraction"],
            min_fraction=fields["min_fraction"],
        )
        return result.as_dict(), result
    if command == "holonomy":
        report = holonomy_loop(
            sys_spec,
            fields["loop"],
            fields["level"],
            budget=fields["budget"],
            seed=fields["seed"],
            tols=tols,
        )
        return report.as_dict(), None
    if command == "cocycle":
        paths = fields["paths"]
        deviation = check_cocycle(
            sys_spec,
            fields["lambda1"],
            fields["lambda2"],
            fields["lambda3"],
            fields["x0"],
            paths=None if paths is None else [np.asarray(p) for p in paths],
            tols=tols,
        )
        return {"deviation": deviation}, None
    if command == "eigen-loop":
        report = eigen_along_fiber_loop(
            sys_spec,
            fields["lambda"],
            fields["loop_points"],
            tols=tols,
            max_refine=fields["max_refine"],
        )
        return report.as_dict(), None
    if command == "track-matrix-loop":
        report = track_matrix_loop(
            [np.asarray(m) for m in fields["matrices"]],
            k=fields["k"],
            tol_zero=fields["tol_zero"],
            tols=tols,
            max_refine=fields["max_refine"],
        )
        return report.as_dict(), None
    raise InputError(f"unknown command {command!r}")


def _emit(config: RunConfig, result: dict, artifact) -> None:
    output = config.settings["output"]
    path, fmt = output["path"], output["format"]
    envelope = build_envelope(
        config.command, config.settings, config.tolerances, result=result
    )
    if fmt in ("json", "both"):
        text = canonical_json(envelope)
        if path is None:
            sys.stdout.write(text)
        else:
            write_text_atomic(path + ".json" if fmt == "both" else path, text)
    if fmt in ("csv", "both"):
        csv_text = (
            fiber_trace_csv(artifact)
            if config.command == "trace-fiber"
            else transport_csv(artifact)
        )
        if path is None:
            sys.stdout.write(csv_text)
        else:
            write_text_atomic(path + ".csv" if fmt == "both" else path, csv_text)


def _error_payload(exc: EqBundleError) -> dict:
    payload = {"type": type(exc).__name__, "message": str(exc)}
    report = getattr(exc, "report", None)
    if report is not None:
        payload["report"] = report.as_dict()
    location = getattr(exc, "location", None)
    if location is not None:
        payload["location"] = {
            "lambda": np.asarray(location.lam).tolist(),
            "x": np.asarray(location.x).tolist(),
        }
    segment = getattr(exc, "segment", None)
    if segment is not None:
        payload["segment"] = list(segment)
    t = getattr(exc, "t", None)
    if t is not None:
        payload["t"] = float(t)
    return payload


def _emit_error(config: Optional[RunConfig], command: str, exc: EqBundleError) -> None:
    sys.stderr.write(f"error: {exc}\n")
    if config is None:
        return
    envelope = build_envelope(
        command, config.settings, config.tolerances, error=_error_payload(exc)
    )
    text = canonical_json(envelope)
    output = config.settings["output"]
    if output["path"] is not None and output["format"] == "json":
        write_text_atomic(output["path"], text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    config: Optional[RunConfig] = None
    try:
        raw = load_config_dict(args.config)
        _apply_flag_overrides(raw, args)
        config = config_from_dict(raw)
        if config.command != args.command:
            config = None
            raise InputError(
                f"config command {raw.get('command')!r} does not match "
                f"the invoked subcommand {args.command!r}"
            )
        result, artifact = run_config(config)
        _emit(config, result, artifact)
        return 0
    except InputError as exc:
        _emit_error(config, args.command, exc)
        return 1
    except EqBundleError as exc:
        _emit_error(config, args.command, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
