"""Eigenvalue monodromy along loops of matrices and fiber loops.

At a non-degenerate equilibrium the Jacobian df/dx carries exactly k zero
eigenvalues (one per first integral); the remaining p = n - k eigenvalues are
bounded away from zero.  Following those p eigenvalues continuously around a
closed loop yields a permutation (which eigenvalue returns to which) and an
integer winding number per track (net turns around 0 in the complex plane).
This module splits spectra, tracks them along matrix loops with adaptive
refinement, and reports the (permutation, windings) datum together with
imaginary-axis crossing counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EqBundleError, InputError, ResolutionError, TrackingError
from .finder import newton_on_level_set
from .linalg import eigen_dense
from .systems import PointState, SystemSpec, evaluate
from .tolerances import DEFAULT_TOLERANCES, Tolerances

__all__ = [
    "SpectrumSplit",
    "EigenLoopReport",
    "StabilitySignature",
    "split_spectrum",
    "track_matrix_loop",
    "eigen_along_fiber_loop",
    "stability_signature",
]

_LEAVES_CSTAR = "winding undefined, path leaves C*"


def _sorted_complex(values: np.ndarray) -> tuple[complex, ...]:
    order = np.lexsort((values.imag, values.real))
    return tuple(complex(v) for v in values[order])


@dataclass(frozen=True)
class SpectrumSplit:
    """Spectrum of a Jacobian partitioned into structural zeros and the rest.

    gap_ratio is (smallest nonzero modulus) / (largest zero modulus), with
    the denominator floored to avoid division by zero; it is 0.0 when there
    are no nonzero eigenvalues to separate.
    """

    zeros: tuple[complex, ...]
    nonzeros: tuple[complex, ...]
    gap_ratio: float
    tol_zero_used: float
    unreliable: bool

    def as_dict(self) -> dict:
        return {
            "zeros": [[z.real, z.imag] for z in self.zeros],
            "nonzeros": [[z.real, z.imag] for z in self.nonzeros],
            "gap_ratio": self.gap_ratio,
            "tol_zero_used": self.tol_zero_used,
            "unreliable": self.unreliable,
        }


def split_spectrum(
    J: np.ndarray,
    k: int,
    tol_zero: Optional[float] = None,
    tols: Tolerances = DEFAULT_TOLERANCES,
) -> SpectrumSplit:
    """Classify the k smallest-modulus eigenvalues of J as structural zeros.

    tol_zero defaults to tols.zero_factor times the spectral radius.  The
    split never fails; instead it is flagged unreliable when a classified
    zero exceeds tol_zero or the zero/nonzero modulus gap is narrower than
    tols.gap_min.
    """
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise InputError(f"expected a square matrix, got shape {J.shape}")
    if not np.all(np.isfinite(J)):
        raise InputError("matrix entries must be finite")
    n = J.shape[0]
    if not 0 <= k <= n:
        raise InputError(f"k = {k} is out of range for an {n} x {n} matrix")
    eigs = eigen_dense(J)
    moduli = np.abs(eigs)
    rho = float(np.max(moduli)) if n else 0.0
    if tol_zero is None:
        tol_zero = tols.zero_factor * max(rho, np.finfo(float).tiny)
    order = np.argsort(moduli, kind="stable")
    zeros = eigs[order[:k]]
    nonzeros = eigs[order[k:]]
    if nonzeros.size:
        largest_zero = float(np.max(np.abs(zeros))) if zeros.size else 0.0
        denom = max(largest_zero, float(np.finfo(float).tiny))
        gap_ratio = float(np.min(np.abs(nonzeros))) / denom
        unreliable = bool(gap_ratio < tols.gap_min)
    else:
        gap_ratio = 0.0
        unreliable = False
    if zeros.size and float(np.max(np.abs(zeros))) > tol_zero:
        unreliable = True
    return SpectrumSplit(
        zeros=_sorted_complex(zeros),
        nonzeros=_sorted_complex(nonzeros),
        gap_ratio=gap_ratio,
        tol_zero_used=float(tol_zero),
        unreliable=unreliable,
    )


@dataclass(frozen=True)
class EigenLoopReport:
    """Monodromy datum of the nonzero spectrum along a closed loop.

    permutation[i] = j means the track that started at nonzero eigenvalue i
    (base spectrum sorted by real part, then imaginary part) ends at
    eigenvalue j of that same base spectrum.  windings[i] is the net number
    of counterclockwise turns of track i around the origin.
    re_axis_crossings[i] counts sign changes of Re along track i.
    """

    permutation: tuple[int, ...]
    windings: tuple[int, ...]
    re_axis_crossings: tuple[int, ...]
    min_distance_to_zero: float
    samples_used: int
    flags: tuple[str, ...]
    tol_zero_used: float

    def as_dict(self) -> dict:
        return {
            "permutation": list(self.permutation),
            "windings": list(self.windings),
            "crossings": list(self.re_axis_crossings),
            "min_distance_to_zero": self.min_distance_to_zero,
            "samples_used": self.samples_used,
            "flags": list(self.flags),
            "tol_zero_used": self.tol_zero_used,
        }


def _chord_distance_to_origin(a: complex, b: complex) -> float:
    """Distance from 0 to the segment [a, b] in the complex plane."""
    d = b - a
    denom = abs(d) ** 2
    if denom == 0.0:
        return abs(a)
    t = -(a.real * d.real + a.imag * d.imag) / denom
    t = min(1.0, max(0.0, t))
    return abs(a + t * d)


class _LoopTracker:
    """Sequential fold that carries p eigenvalue tracks along the loop."""

    def __init__(self, base: np.ndarray, k: int, tol_zero: float, tols: Tolerances):
        self.k = k
        self.tol_zero = tol_zero
        self.tols = tols
        self.values = base.copy()
        self.previous = base.copy()  # two-point history for extrapolation
        self.accumulated = np.zeros(base.size)
        self.crossings = np.zeros(base.size, dtype=int)
        self.last_sign = np.sign(base.real).astype(int)
        self.min_distance = float(np.min(np.abs(base)))
        self.samples_used = 1
        self.flags: list[str] = []

    def flag_once(self, message: str) -> None:
        if message not in self.flags:
            self.flags.append(message)

    def match(self, candidates: np.ndarray) -> np.ndarray:
        predicted = 2.0 * self.values - self.previous
        cost = np.abs(predicted[:, None] - candidates[None, :])
        _, cols = linear_sum_assignment(cost)
        return candidates[cols]

    def accept(self, matched: np.ndarray, dargs: np.ndarray) -> None:
        self.accumulated += dargs
        self.previous = self.values
        self.values = matched
        self.min_distance = min(self.min_distance, float(np.min(np.abs(matched))))
        signs = np.sign(matched.real).astype(int)
        for i, s in enumerate(signs):
            if s != 0:
                if self.last_sign[i] != 0 and s != self.last_sign[i]:
                    self.crossings[i] += 1
                self.last_sign[i] = s
        self.samples_used += 1


def _advance(
    tracker: _LoopTracker,
    left_payload,
    right_payload,
    right_matrix: np.ndarray,
    refine: Callable,
    depth: int,
    max_refine: int,
    segment: tuple[int, int],
) -> None:
    split = split_spectrum(
        right_matrix, tracker.k, tol_zero=tracker.tol_zero, tols=tracker.tols
    )
    if split.unreliable:
        tracker.flag_once("unreliable zero/nonzero split encountered along the loop")
    candidates = np.array(split.nonzeros, dtype=complex)
    matched = tracker.match(candidates)
    small = np.abs(matched) <= tracker.tol_zero
    if np.any(small):
        idx = int(np.argmax(small))
        raise TrackingError(
            f"{_LEAVES_CSTAR}: tracked eigenvalue {idx} has modulus "
            f"{abs(matched[idx]):.3e} <= tol_zero = {tracker.tol_zero:.3e}",
            segment=segment,
        )
    dargs = np.angle(matched * np.conj(tracker.values))
    movement = float(np.max(np.abs(matched - tracker.values)))
    if candidates.size > 1:
        pair_gaps = np.abs(candidates[:, None] - candidates[None, :])
        min_gap = float(np.min(pair_gaps[~np.eye(candidates.size, dtype=bool)]))
    else:
        min_gap = np.inf
    needs_refine = np.any(np.abs(dargs) >= 0.5 * np.pi) or movement > 0.5 * min_gap
    if needs_refine and depth < max_refine:
        # a refiner that cannot produce a midpoint (e.g. Newton hits a
        # singular point between the samples) degrades to the coarse step,
        # whose certification below reports what actually went wrong
        try:
            mid_payload, mid_matrix = refine(left_payload, right_payload)
        except EqBundleError:
            mid_payload = mid_matrix = None
        if mid_payload is not None:
            _advance(tracker, left_payload, mid_payload, mid_matrix,
                     refine, depth + 1, max_refine, segment)
            _advance(tracker, mid_payload, right_payload, right_matrix,
                     refine, depth + 1, max_refine, segment)
            return
    # accepting this increment as-is: certify it first
    for i in range(matched.size):
        if _chord_distance_to_origin(complex(tracker.values[i]),
                                     complex(matched[i])) <= tracker.tol_zero:
            raise TrackingError(
                f"{_LEAVES_CSTAR}: the step of tracked eigenvalue {i} passes "
                f"within tol_zero = {tracker.tol_zero:.3e} of the origin",
                segment=segment,
            )
    if np.any(np.abs(dargs) >= 0.5 * np.pi):
        raise ResolutionError(
            "eigenvalue tracking could not certify an argument increment "
            f"below pi/2 after {max_refine} refinement levels",
            segment=segment,
        )
    tracker.accept(matched, dargs)


def _blend_matrices(a: np.ndarray, b: np.ndarray):
    mid = 0.5 * (a + b)
    return mid, mid


def track_matrix_loop(
    matrices: Sequence[np.ndarray],
    k: int = 0,
    tol_zero: Optional[float] = None,
    tols: Tolerances = DEFAULT_TOLERANCES,
    max_refine: int = 8,
    _refine: Optional[Callable] = None,
    _payloads: Optional[Sequence] = None,
) -> EigenLoopReport:
    """Track the nonzero eigenvalues along a closed loop of square matrices.

    The first and last matrices must coincide.  Per step, the new nonzero
    spectrum is matched to the existing tracks by optimal assignment against
    a linear extrapolation of each track; intervals are refined (by linear
    matrix blend, or the supplied refiner) whenever an argument increment
    reaches pi/2 or the largest movement exceeds half the smallest gap
    between new eigenvalues.  tol_zero is fixed once from the base matrix
    (tols.zero_factor times its spectral radius); any tracked eigenvalue
    whose modulus, or whose step chord, comes within tol_zero of the origin
    aborts the loop, since its winding number is then undefined.
    """
    mats = [np.asarray(J, dtype=float) for J in matrices]
    if len(mats) < 2:
        raise InputError("a matrix loop needs at least two samples")
    n = mats[0].shape[0] if mats[0].ndim == 2 else -1
    for J in mats:
        if J.ndim != 2 or J.shape != (n, n):
            raise InputError("all loop matrices must be square with equal shape")
        if not np.all(np.isfinite(J)):
            raise InputError("matrix entries must be finite")
    closure = np.linalg.norm(mats[0] - mats[-1])
    if closure > 1e-12 * (1.0 + np.linalg.norm(mats[0])):
        raise InputError(
            f"matrix loop must close: first and last matrices differ by {closure:.3e}"
        )
    if not 0 <= k <= n:
        raise InputError(f"k = {k} is out of range for {n} x {n} matrices")
    if max_refine < 0:
        raise InputError("max_refine must be non-negative")

    base_split = split_spectrum(mats[0], k, tol_zero=tol_zero, tols=tols)
    tol_fixed = base_split.tol_zero_used
    base = np.array(base_split.nonzeros, dtype=complex)
    if base.size == 0:
        raise InputError("no nonzero eigenvalues to track (k equals the dimension)")
    if np.min(np.abs(base)) <= tol_fixed:
        raise TrackingError(
            f"{_LEAVES_CSTAR}: a base nonzero eigenvalue already has modulus "
            f"<= tol_zero = {tol_fixed:.3e}",
            segment=(0, 0),
        )
    tracker = _LoopTracker(base, k, tol_fixed, tols)
    if base_split.unreliable:
        tracker.flag_once("unreliable zero/nonzero split encountered along the loop")

    refine = _refine if _refine is not None else _blend_matrices
    payloads = list(_payloads) if _payloads is not None else mats
    for i in range(len(mats) - 1):
        _advance(tracker, payloads[i], payloads[i + 1], mats[i + 1],
                 refine, 0, max_refine, (i, i + 1))

    # closure: map each track back to the base spectrum it started from
    cost = np.abs(tracker.values[:, None] - base[None, :])
    _, cols = linear_sum_assignment(cost)
    permutation = tuple(int(c) for c in cols)
    mismatch = float(np.max(np.abs(tracker.values - base[cols])))
    scale = float(np.max(np.abs(base)))
    if mismatch > 1e-6 * (1.0 + scale):
        tracker.flag_once(
            f"final spectrum differs from the base spectrum by {mismatch:.3e}"
        )
    end_args = np.angle(base[cols])
    start_args = np.angle(base)
    principal = np.angle(np.exp(1j * (end_args - start_args)))
    windings = np.rint((tracker.accumulated - principal) / (2.0 * np.pi)).astype(int)
    return EigenLoopReport(
        permutation=permutation,
        windings=tuple(int(w) for w in windings),
        re_axis_crossings=tuple(int(c) for c in tracker.crossings),
        min_distance_to_zero=tracker.min_distance,
        samples_used=tracker.samples_used,
        flags=tuple(tracker.flags),
        tol_zero_used=tol_fixed,
    )


def eigen_along_fiber_loop(
    sys: SystemSpec,
    lam,
    loop_points: Sequence,
    tols: Tolerances = DEFAULT_TOLERANCES,
    max_refine: int = 8,
) -> EigenLoopReport:
    """Track the nonzero Jacobian eigenvalues along a closed loop of
    equilibria on one fiber.

    Every loop point must be an equilibrium of f(lam, .) within tolerance
    and the first and last points must coincide.  When the tracker needs
    intermediate samples, linear blends of neighboring loop points are
    projected back onto the equilibrium set at the interpolated first
    integral level by Newton at fixed lam.
    """
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.size != sys.m:
        raise InputError(f"lambda has length {lam.size}, expected m = {sys.m}")
    points = [np.asarray(x, dtype=float).reshape(-1) for x in loop_points]
    if len(points) < 2:
        raise InputError("a fiber loop needs at least two points")
    for x in points:
        if x.size != sys.n:
            raise InputError(f"loop point has length {x.size}, expected n = {sys.n}")
    closure = np.linalg.norm(points[0] - points[-1])
    if closure > 1e-9 * (1.0 + np.linalg.norm(points[0])):
        raise InputError(
            f"loop must close: first and last points differ by {closure:.3e}"
        )

    matrices = []
    levels = []
    for i, x in enumerate(points):
        ev = evaluate(sys, PointState(lam, x), check_domain=False)
        residual = float(np.linalg.norm(ev.f_value))
        scale = 1.0 + float(np.linalg.norm(x))
        if residual > 10.0 * tols.equilibrium * scale:
            raise InputError(
                f"loop point {i} is not an equilibrium: ||f|| = {residual:.3e}"
            )
        matrices.append(ev.jac_x)
        levels.append(ev.h_value)

    payloads = list(zip(points, levels))

    def refine(left, right):
        x_guess = 0.5 * (left[0] + right[0])
        a_mid = 0.5 * (left[1] + right[1])
        eq = newton_on_level_set(sys, lam, a_mid, x_guess, tols=tols)
        ev = evaluate(sys, eq.state, check_domain=False)
        return (ev.point.x, ev.h_value), ev.jac_x

    return track_matrix_loop(
        matrices,
        k=sys.k,
        tols=tols,
        max_refine=max_refine,
        _refine=refine,
        _payloads=payloads,
    )


@dataclass(frozen=True)
class StabilitySignature:
    """Per-track lower bounds on imaginary-axis crossings.

    A track with winding number m must cross Re = 0 at least 2|m| times, so
    the bound is max(2|m|, observed crossings); exceeds_winding_bound marks
    tracks whose observed count is strictly above 2|m|.
    """

    bounds: tuple[int, ...]
    exceeds_winding_bound: tuple[bool, ...]

    def as_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "exceeds_winding_bound": list(self.exceeds_winding_bound),
        }


def stability_signature(report: EigenLoopReport) -> StabilitySignature:
    bounds = []
    exceeds = []
    for m, observed in zip(report.windings, report.re_axis_crossings):
        floor = 2 * abs(m)
        bounds.append(max(floor, observed))
        exceeds.append(observed > floor)
    return StabilitySignature(bounds=tuple(bounds), exceeds_winding_bound=tuple(exceeds))
