"""Equilibrium location, level-set enumeration, and fiber tracing.

The square solve targets F(x) = [f(lambda, x); h(x) - a] = 0 whose
stacked Jacobian [df/dx; dh/dx] has full column rank n at transversal
points, so a least-squares Newton step is the exact Newton step there.
Enumeration multistarts that solve from a low-discrepancy sequence and
deduplicates by clustering.  Fibers (k = 1 only) are traced by
predictor-corrector continuation along the kernel of df/dx.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .audit import AuditReport, audit_point
from .errors import (
    BranchPointError,
    ConvergenceError,
    DegeneracyError,
    EqBundleError,
    InputError,
    UnsupportedDimensionError,
)
from .linalg import kernel_basis, numeric_rank, solve_least_squares
from .systems import PointState, SystemSpec, _fd_jacobian
from .tolerances import DEFAULT_TOLERANCES, Tolerances


@dataclass(frozen=True)
class EquilibriumPoint:
    """A solved point of {f = 0} on the level set {h = a}."""

    state: PointState
    residual_f: float
    level: np.ndarray
    audit: AuditReport
    stacked_rank: int
    transversal: bool

    def as_dict(self) -> dict:
        return {
            "lambda": self.state.lam.tolist(),
            "x": self.state.x.tolist(),
            "residual_f": self.residual_f,
            "level": self.level.tolist(),
            "stacked_rank": self.stacked_rank,
            "transversal": self.transversal,
            "audit": self.audit.as_dict(),
        }


@dataclass(frozen=True)
class FiberTrace:
    """An ordered polyline sample of one connected fiber of E_lambda (k = 1).

    For circles the first point is repeated as the last.  For segments
    endpoint_boundary_distances estimates the distance from each endpoint
    to the domain boundary.
    """

    lam: np.ndarray
    points: np.ndarray          # (N, n)
    topology: str               # "circle" | "segment"
    arclength: float
    endpoint_boundary_distances: Optional[tuple]
    max_f_residual: float

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam.tolist(),
            "points": [row.tolist() for row in self.points],
            "topology": self.topology,
            "arclength": self.arclength,
            "endpoint_boundary_distances": (
                None
                if self.endpoint_boundary_distances is None
                else list(self.endpoint_boundary_distances)
            ),
            "max_f_residual": self.max_f_residual,
        }


def _jac_x(sys: SystemSpec, lam: np.ndarray, x: np.ndarray) -> np.ndarray:
    if sys.jac_x_fn is not None:
        return np.asarray(sys.jac_x_fn(lam, x), dtype=float).reshape(sys.n, sys.n)
    return _fd_jacobian(lambda xx: sys.f(lam, xx), x, sys.n)


def _jac_h(sys: SystemSpec, x: np.ndarray) -> np.ndarray:
    if sys.jac_h_fn is not None:
        return np.asarray(sys.jac_h_fn(x), dtype=float).reshape(sys.k, sys.n)
    return _fd_jacobian(sys.h, x, sys.k)


def newton_on_level_set(
    sys: SystemSpec,
    lam,
    a,
    x0,
    tols: Tolerances = DEFAULT_TOLERANCES,
    max_iter: int = 50,
) -> EquilibriumPoint:
    """Damped Newton for [f(lam, x); h(x) - a] = 0 from x0.

    Converged when ||F|| <= newton_tol * (1 + ||x0||).  Iterates may roam
    a slightly inflated bounding box but the solution itself must lie in
    the domain.  A stacked Jacobian losing column rank along the way is a
    singular Newton system; at the solution the rank is recorded as a
    transversality certificate instead of raised.
    """
    lam = np.asarray(lam, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float).reshape(-1)
    x = np.asarray(x0, dtype=float).reshape(-1)
    if lam.size != sys.m:
        raise InputError(f"lambda has length {lam.size}, expected m = {sys.m}")
    if a.size != sys.k:
        raise InputError(f"level a has length {a.size}, expected k = {sys.k}")
    if x.size != sys.n:
        raise InputError(f"x0 has length {x.size}, expected n = {sys.n}")
    if not sys.domain.contains(x, slack=1e-9 * sys.domain.diameter()):
        raise InputError(f"x0 {x.tolist()} is not in the domain")

    box = sys.domain.box
    margin = 0.05 * sys.domain.diameter()
    lo, hi = box[:, 0] - margin, box[:, 1] + margin

    def residual(y: np.ndarray) -> np.ndarray:
        return np.concatenate([
            np.asarray(sys.f(lam, y), dtype=float).reshape(-1),
            np.asarray(sys.h(y), dtype=float).reshape(-1) - a,
        ])

    scale = 1.0 + float(np.linalg.norm(x))
    target = tols.newton * scale
    current = residual(x)
    if not np.all(np.isfinite(current)):
        raise InputError(f"F(x0) is not finite at x0 = {x.tolist()}")

    for iteration in range(max_iter):
        if np.linalg.norm(current) <= target:
            break
        stacked = np.vstack([_jac_x(sys, lam, x), _jac_h(sys, x)])
        try:
            step = solve_least_squares(stacked, -current, rank_tol=tols.rank)
        except DegeneracyError as err:
            raise DegeneracyError(
                f"singular Newton system at iteration {iteration}: {err}",
                report=err.report,
            ) from err
        alpha = 1.0
        for _ in range(25):
            candidate = x + alpha * step
            if np.all(candidate >= lo) and np.all(candidate <= hi):
                trial = residual(candidate)
                if np.all(np.isfinite(trial)) and (
                    np.linalg.norm(trial) < np.linalg.norm(current)
                    or np.linalg.norm(trial) <= target
                ):
                    x, current = candidate, trial
                    break
            alpha *= 0.5
        else:
            raise ConvergenceError(
                f"Newton line search stalled at iteration {iteration}, "
                f"||F|| = {np.linalg.norm(current):.3e}"
            )
    else:
        raise ConvergenceError(
            f"Newton did not converge in {max_iter} iterations, "
            f"||F|| = {np.linalg.norm(current):.3e}"
        )

    if not sys.domain.contains(x, slack=tols.domain_slack * (1.0 + sys.domain.diameter())):
        raise ConvergenceError(
            f"Newton converged to {x.tolist()} outside the domain"
        )

    stacked = np.vstack([_jac_x(sys, lam, x), _jac_h(sys, x)])
    fd = sys.jac_x_fn is None or sys.jac_h_fn is None
    rank = numeric_rank(stacked, tols.rank, fd=fd)
    state = PointState(lam, x)
    return EquilibriumPoint(
        state=state,
        residual_f=float(np.linalg.norm(np.asarray(sys.f(lam, x), dtype=float))),
        level=np.asarray(sys.h(x), dtype=float).reshape(-1),
        audit=audit_point(sys, state, tols),
        stacked_rank=rank.rank,
        transversal=rank.rank == sys.n,
    )


def enumerate_level_points(
    sys: SystemSpec,
    lam,
    a,
    budget: int = 200,
    seed: int = 0,
    tols: Tolerances = DEFAULT_TOLERANCES,
) -> list:
    """Multistart newton_on_level_set from a scrambled Halton sequence.

    Deduplicates converged points by clustering with radius
    cluster_tol * domain diameter and returns them sorted
    lexicographically by coordinates.  An empty result is a valid
    answer: either the level set carries no equilibria for this lambda
    or the budget missed every basin.
    """
    if budget <= 0:
        raise InputError(f"budget must be positive, got {budget}")
    lam = np.asarray(lam, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float).reshape(-1)

    sampler = qmc.Halton(d=sys.n, scramble=True, seed=seed)
    box = sys.domain.box
    starts = qmc.scale(sampler.random(budget), box[:, 0], box[:, 1])

    found = []
    for x0 in starts:
        try:
            found.append(newton_on_level_set(sys, lam, a, x0, tols))
        except EqBundleError:
            continue

    radius = tols.cluster * sys.domain.diameter()
    # keep the best-converged representative of each cluster
    by_quality = sorted(
        range(len(found)),
        key=lambda i: (found[i].residual_f, tuple(found[i].state.x)),
    )
    kept: list = []
    for i in by_quality:
        x = found[i].state.x
        if all(np.linalg.norm(x - other.state.x) > radius for other in kept):
            kept.append(found[i])
    # lexicographic output order; rounding first makes the order stable
    # when distinct solutions share coordinates up to solver noise
    kept.sort(key=lambda e: (tuple(np.round(e.state.x, 9)), tuple(e.state.x)))
    return kept


def _corrector(sys, lam, x_pred, tangent, tols, max_iter=8):
    """Newton for [f; tangent . (y - x_pred)] = 0.  Returns (y, iterations)."""
    y = x_pred.copy()
    scale = 1.0 + float(np.linalg.norm(x_pred))
    target = tols.newton * scale
    for iteration in range(max_iter):
        fv = np.asarray(sys.f(lam, y), dtype=float).reshape(-1)
        resid = np.concatenate([fv, [float(tangent @ (y - x_pred))]])
        if not np.all(np.isfinite(resid)):
            raise ConvergenceError("corrector residual is not finite")
        if np.linalg.norm(resid) <= target:
            return y, iteration
        jac = np.vstack([_jac_x(sys, lam, y), tangent[None, :]])
        step = solve_least_squares(jac, -resid, rank_tol=tols.rank)
        y = y + step
    fv = np.asarray(sys.f(lam, y), dtype=float).reshape(-1)
    resid = np.concatenate([fv, [float(tangent @ (y - x_pred))]])
    if np.linalg.norm(resid) <= target:
        return y, max_iter
    raise ConvergenceError(
        f"fiber corrector did not converge, ||G|| = {np.linalg.norm(resid):.3e}"
    )


def _fiber_tangent(sys, lam, x, tols, location_note: str):
    kernel = kernel_basis(_jac_x(sys, lam, x), tols.rank, fd=sys.jac_x_fn is None)
    if kernel.shape[1] != 1:
        raise BranchPointError(
            f"kernel of df/dx has dimension {kernel.shape[1]}, expected 1 "
            f"{location_note}",
            location=PointState(lam, x.copy()),
        )
    tangent = kernel[:, 0]
    return tangent / np.linalg.norm(tangent)


def _march(sys, lam, x_start, t_start, tols, step0, min_step, max_step, max_points):
    """March one direction.  Returns (points, closed) where closed means
    the walk returned to x_start (circle)."""
    contains = sys.domain.contains
    points = [x_start.copy()]
    tangent = t_start
    first_tangent = t_start
    step = step0
    while len(points) < max_points:
        x = points[-1]
        advanced = None
        while step >= min_step:
            x_pred = x + step * tangent
            try:
                y, iterations = _corrector(sys, lam, x_pred, tangent, tols)
            except (ConvergenceError, DegeneracyError):
                step *= 0.5
                continue
            if np.linalg.norm(y - x) > 2.0 * step:
                # corrector wandered to a different sheet; resolve finer
                step *= 0.5
                continue
            advanced = (y, iterations)
            break
        if advanced is None:
            raise ConvergenceError(
                f"fiber step collapsed below {min_step:.1e} near x = {x.tolist()}"
            )
        y, iterations = advanced

        if not contains(y, slack=0.0):
            boundary = _refine_boundary(sys, lam, x, tangent, step, tols)
            if boundary is not None:
                points.append(boundary)
            return points, False

        new_tangent = _fiber_tangent(
            sys, lam, y, tols, f"while tracing at x = {np.round(y, 6).tolist()}"
        )
        if float(new_tangent @ tangent) < 0.0:
            new_tangent = -new_tangent

        if (
            len(points) >= 5
            and np.linalg.norm(y - x_start) < 0.5 * step
            and float(new_tangent @ first_tangent) > 0.9
        ):
            points.append(x_start.copy())
            return points, True

        points.append(y)
        tangent = new_tangent
        if iterations > 3:
            step = max(step * 0.5, min_step)
        elif iterations <= 1:
            step = min(step * 2.0, max_step)
    raise ConvergenceError(
        f"fiber trace exceeded {max_points} points without closing or "
        "reaching the boundary"
    )


def _refine_boundary(sys, lam, x_inside, tangent, step, tols):
    """Bisect the step fraction between the last interior corrected point
    and the first exterior one; returns the last interior point found."""
    contains = sys.domain.contains
    lo, hi = 0.0, step
    best = None
    # parameter resolution relative to the step that crossed the boundary
    resolution = max(tols.boundary_refine, 1e-15) * max(1.0, step)
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        try:
            y, _ = _corrector(sys, lam, x_inside + mid * tangent, tangent, tols)
        except (ConvergenceError, DegeneracyError):
            hi = mid
            continue
        if contains(y, slack=0.0):
            lo = mid
            best = y
        else:
            hi = mid
    return best


def trace_fiber(
    sys: SystemSpec,
    lam,
    x0,
    tols: Tolerances = DEFAULT_TOLERANCES,
    initial_step: Optional[float] = None,
    max_step: Optional[float] = None,
    min_step: Optional[float] = None,
    max_points: int = 20000,
    initial_direction: int = 1,
) -> FiberTrace:
    """Trace the connected fiber of {f(lam, .) = 0} through x0 (k = 1 only).

    Predictor along the unit kernel vector of df/dx, corrector = Newton
    constrained orthogonal to the tangent, step doubling/halving on
    corrector iteration count.  Ends either by closing into a circle or
    by hitting the domain boundary in both directions (segment).
    """
    if sys.k != 1:
        raise UnsupportedDimensionError(
            f"fiber tracing needs k = 1, system has k = {sys.k}"
        )
    lam = np.asarray(lam, dtype=float).reshape(-1)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if lam.size != sys.m or x0.size != sys.n:
        raise InputError("lambda or x0 has the wrong length")
    f0 = np.asarray(sys.f(lam, x0), dtype=float).reshape(-1)
    if np.linalg.norm(f0) > tols.equilibrium * (1.0 + np.linalg.norm(x0)) * 10.0:
        raise InputError(
            f"x0 is not an equilibrium: ||f|| = {np.linalg.norm(f0):.3e}"
        )
    if not sys.domain.contains(x0, slack=tols.domain_slack):
        raise InputError(f"x0 {x0.tolist()} is not in the domain")

    diameter = sys.domain.diameter()
    step0 = initial_step if initial_step is not None else 0.01 * diameter
    cap = max_step if max_step is not None else 0.05 * diameter
    floor = min_step if min_step is not None else 1e-12 * diameter

    tangent = _fiber_tangent(sys, lam, x0, tols, "at the starting point")
    if initial_direction < 0:
        tangent = -tangent

    forward, closed = _march(
        sys, lam, x0, tangent, tols, step0, floor, cap, max_points
    )
    if closed:
        points = np.asarray(forward)
        topology = "circle"
        boundary_distances = None
    else:
        backward, closed_back = _march(
            sys, lam, x0, -tangent, tols, step0, floor, cap, max_points
        )
        if closed_back:
            # hit the boundary one way but closed the other: inconsistent
            raise ConvergenceError(
                "fiber closed in one direction but met the boundary in the other"
            )
        points = np.asarray(backward[::-1] + forward[1:])
        topology = "segment"
        boundary_distances = (
            float(sys.domain.boundary_distance(points[0])),
            float(sys.domain.boundary_distance(points[-1])),
        )

    residual = 0.0
    for row in points:
        value = np.asarray(sys.f(lam, row), dtype=float)
        residual = max(residual, float(np.linalg.norm(value)))
    arclength = float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))
    return FiberTrace(
        lam=lam,
        points=points,
        topology=topology,
        arclength=arclength,
        endpoint_boundary_distances=boundary_distances,
        max_f_residual=residual,
    )
