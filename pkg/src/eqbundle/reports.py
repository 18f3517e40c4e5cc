"""Report envelopes, canonical JSON, CSV rendering, and atomic file output.

Every run writes one envelope: schema version, the fully materialized
configuration that produced the result, the tolerances in effect, and either
the result payload or a structured error.  JSON is canonical (sorted keys,
fixed indentation, no NaN/Inf) so identical runs are byte-identical.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Optional

import numpy as np

from .finder import FiberTrace
from .tolerances import Tolerances
from .transport import TransportResult

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "build_envelope",
    "canonical_json",
    "fiber_trace_csv",
    "transport_csv",
    "write_text_atomic",
]


def canonical_json(payload: dict) -> str:
    """Serialize to deterministic JSON: sorted keys, 2-space indent,
    trailing newline, non-finite numbers rejected."""
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def build_envelope(
    command: str,
    config: dict,
    tolerances: Tolerances,
    result: Optional[dict] = None,
    error: Optional[dict] = None,
) -> dict:
    envelope = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "tolerances_used": tolerances.as_dict(),
    }
    if error is not None:
        envelope["error"] = error
    else:
        envelope["result"] = result
    return envelope


def write_text_atomic(path: str, text: str) -> None:
    """Write via a temp file in the destination directory plus rename, so a
    crash never leaves a half-written report."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".eqbundle-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _g17(value: float) -> str:
    return format(float(value), ".17g")


def fiber_trace_csv(trace: FiberTrace) -> str:
    """One row per traced point, columns x1..xn; metadata as '#' comments."""
    n = trace.points.shape[1]
    lines = [
        f"# fiber trace at lambda = [{', '.join(_g17(v) for v in trace.lam)}]",
        f"# topology = {trace.topology}",
        f"# arclength = {_g17(trace.arclength)}",
        f"# max_f_residual = {_g17(trace.max_f_residual)}",
    ]
    if trace.endpoint_boundary_distances is not None:
        joined = ", ".join(_g17(v) for v in trace.endpoint_boundary_distances)
        lines.append(f"# endpoint_boundary_distances = [{joined}]")
    lines.append(",".join(f"x{i + 1}" for i in range(n)))
    for row in trace.points:
        lines.append(",".join(_g17(v) for v in row))
    return "\n".join(lines) + "\n"


def transport_csv(result: TransportResult) -> str:
    """One row per accepted step: t, the parameter values, then the lifted
    point; metadata as '#' comments."""
    m = result.lambda_path.shape[1]
    n = result.gamma.shape[1]
    lines = [
        f"# parameter path lift, {result.steps_taken} steps",
        f"# max_f_residual = {_g17(result.max_f_residual)}",
        f"# max_h_drift = {_g17(result.max_h_drift)}",
        ",".join(
            ["t"]
            + [f"l{j + 1}" for j in range(m)]
            + [f"x{i + 1}" for i in range(n)]
        ),
    ]
    for t, lam, x in zip(result.t, result.lambda_path, result.gamma):
        values = np.concatenate([[t], lam, x])
        lines.append(",".join(_g17(v) for v in values))
    return "\n".join(lines) + "\n"
