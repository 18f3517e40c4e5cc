import json

import numpy as np
import pytest

from conftest import rfmr_circulant_eigenvalues
from eqbundle.audit import audit_point
from eqbundle.errors import InputError, ResolutionError, TrackingError
from eqbundle.monodromy import (
    eigen_along_fiber_loop,
    split_spectrum,
    stability_signature,
    track_matrix_loop,
)
from eqbundle.systems import PointState


def rotation_family(samples=256):
    # eigenvalues are exactly e^{+is} and e^{-is}; they collide at s = 0
    # and s = pi, which stresses the extrapolation matcher
    s = np.linspace(0.0, 2.0 * np.pi, samples + 1)
    return [np.array([[0.0, 1.0], [-1.0, 2.0 * np.cos(si)]]) for si in s]


def test_split_example2(example2):
    J = example2.jac_x_fn(np.array([1.0]), np.array([1.0, 1.0, 1.0]))
    sp = split_spectrum(J, 2)
    assert len(sp.zeros) == 2 and len(sp.nonzeros) == 1
    assert max(abs(z) for z in sp.zeros) < 1e-12
    assert sp.nonzeros[0] == pytest.approx(1.0, abs=1e-12)
    assert not sp.unreliable


def test_split_planar():
    sp = split_spectrum(np.array([[-1.0, 0.0], [0.0, 0.0]]), 1)
    assert sp.zeros == (0.0 + 0.0j,)
    assert sp.nonzeros == (-1.0 + 0.0j,)
    assert sp.gap_ratio > 1e6
    assert not sp.unreliable


def test_split_rfmr_circulant_oracle(rfmr3):
    J = rfmr3.jac_x_fn(np.ones(3), np.full(3, 0.5))
    sp = split_spectrum(J, 1)
    oracle = rfmr_circulant_eigenvalues(1.0, 0.5, 3)
    assert np.allclose(sorted(np.abs(oracle))[:1], [0.0], atol=1e-12)
    # the two nonzero circulant eigenvalues coincide: a real double -1.5
    expected = sorted(oracle, key=lambda z: abs(z))[1:]
    assert np.allclose([abs(z) for z in expected], 1.5, atol=1e-12)
    assert abs(sp.zeros[0]) < 1e-12
    for mu in sp.nonzeros:
        assert mu == pytest.approx(-1.5, abs=1e-9)
    assert sum(sp.zeros) + sum(sp.nonzeros) == pytest.approx(np.trace(J), abs=1e-9)


def test_split_unreliable_flag():
    sp = split_spectrum(np.diag([1e-3, 1.0]), 1)
    assert sp.unreliable  # the "zero" 1e-3 exceeds 1e-7 * spectral radius
    ok = split_spectrum(np.diag([0.0, 1.0]), 1)
    assert not ok.unreliable


def test_split_validation():
    with pytest.raises(InputError, match="square"):
        split_spectrum(np.ones((2, 3)), 0)
    with pytest.raises(InputError, match="out of range"):
        split_spectrum(np.eye(2), 3)
    with pytest.raises(InputError, match="finite"):
        split_spectrum(np.array([[np.nan, 0.0], [0.0, 1.0]]), 0)


def test_split_stability_under_noise(planar, example2, rfmr3):
    # perturbing by 1e-12 times the scale must not change the partition
    rng = np.random.default_rng(7)
    points = [
        (planar, PointState([0.5], [-0.5, 0.0])),
        (example2, PointState([1.0], [1.0, 1.0, 1.0])),
        (rfmr3, PointState([1.0, 1.0, 1.0], [0.5, 0.5, 0.5])),
    ]
    for sys, u in points:
        report = audit_point(sys, u)
        assert report.cond_iii.passed
        J = sys.jac_x_fn(u.lam, u.x)
        base = split_spectrum(J, sys.k)
        scale = max(1.0, float(np.max(np.abs(J))))
        noisy = J + 1e-12 * scale * rng.uniform(-1.0, 1.0, J.shape)
        perturbed = split_spectrum(noisy, sys.k)
        assert len(perturbed.zeros) == len(base.zeros)
        assert np.allclose(
            sorted(abs(z) for z in perturbed.zeros),
            sorted(abs(z) for z in base.zeros),
            atol=1e-9,
        )
        assert np.allclose(
            sorted(abs(z) for z in perturbed.nonzeros),
            sorted(abs(z) for z in base.nonzeros),
            atol=1e-9,
        )


def test_rotation_family_loop():
    report = track_matrix_loop(rotation_family(256), k=0)
    assert report.permutation == (0, 1)
    assert sorted(report.windings) == [-1, 1]
    assert sum(report.windings) == 0  # det J(s) = 1, so the product never winds
    assert report.re_axis_crossings == (2, 2)
    assert report.min_distance_to_zero == pytest.approx(1.0, abs=1e-9)
    assert report.samples_used >= 257
    assert report.flags == ()
    sig = stability_signature(report)
    assert sig.bounds == (2, 2)
    assert sig.exceeds_winding_bound == (False, False)


def test_constant_loop():
    J0 = np.diag([-1.0, 2.0, 0.0])
    report = track_matrix_loop([J0, J0, J0], k=1)
    assert report.permutation == (0, 1)
    assert report.windings == (0, 0)
    assert report.re_axis_crossings == (0, 0)
    assert report.min_distance_to_zero == pytest.approx(1.0)


def test_real_diag_loop():
    s = np.linspace(0.0, 2.0 * np.pi, 65)
    mats = [np.diag([2.0 + np.cos(si), -1.0]) for si in s]
    report = track_matrix_loop(mats, k=0)
    assert report.permutation == (0, 1)
    assert report.windings == (0, 0)
    assert report.re_axis_crossings == (0, 0)
    assert report.min_distance_to_zero == pytest.approx(1.0, abs=1e-12)


def test_doubled_loop_squares():
    mats = rotation_family(256)
    single = track_matrix_loop(mats, k=0)
    doubled = track_matrix_loop(mats + mats[1:], k=0)
    # identity permutation composed with itself stays the identity and
    # every winding doubles
    assert doubled.permutation == single.permutation
    assert sorted(doubled.windings) == sorted(2 * w for w in single.windings)
    assert doubled.re_axis_crossings == tuple(2 * c for c in single.re_axis_crossings)


def test_conjugation_symmetry():
    # real matrix loop: the winding multiset equals its own negation
    report = track_matrix_loop(rotation_family(128), k=0)
    windings = sorted(report.windings)
    assert windings == sorted(-w for w in windings)


def test_flag_family_crossings_without_winding():
    # eigenvalues 0.5 cos(s) +- i sweep left and right without circling 0
    s = np.linspace(0.0, 2.0 * np.pi, 257)
    mats = [np.array([[0.5 * np.cos(si), 1.0], [-1.0, 0.5 * np.cos(si)]]) for si in s]
    report = track_matrix_loop(mats, k=0)
    assert report.windings == (0, 0)
    assert report.re_axis_crossings == (2, 2)
    sig = stability_signature(report)
    assert sig.bounds == (2, 2)
    assert sig.exceeds_winding_bound == (True, True)


def test_matrix_loop_validation():
    with pytest.raises(InputError, match="at least two"):
        track_matrix_loop([np.eye(2)], k=0)
    with pytest.raises(InputError, match="must close"):
        track_matrix_loop([np.eye(2), 2.0 * np.eye(2)], k=0)
    with pytest.raises(InputError, match="equal shape"):
        track_matrix_loop([np.eye(2), np.eye(3), np.eye(2)], k=0)
    with pytest.raises(InputError, match="no nonzero eigenvalues"):
        track_matrix_loop([np.eye(2), np.eye(2)], k=2)


def test_loop_through_zero_rejected():
    # a real eigenvalue crossing 0 has no winding number
    s = np.linspace(0.0, 2.0 * np.pi, 65)
    mats = [np.diag([np.cos(si), 5.0]) for si in s]
    with pytest.raises(TrackingError, match=r"path leaves C\*") as err:
        track_matrix_loop(mats, k=0)
    assert err.value.segment is not None


def test_refinement_certifies_coarse_loops():
    # 8 samples of the rotation family leave ~pi/4 argument steps; blending
    # matrices stays inside the family, so refinement succeeds
    report = track_matrix_loop(rotation_family(8), k=0)
    assert sorted(report.windings) == [-1, 1]
    assert report.samples_used > 9


def test_resolution_budget_exhaustion():
    # with refinement disabled, a quarter-turn-per-step loop cannot certify
    # its argument increments
    with pytest.raises(ResolutionError, match="refinement"):
        track_matrix_loop(rotation_family(4), k=0, max_refine=0)


def test_fiber_loop_benign(example2):
    # closed loop inside the equilibrium plane {x = z}; the single nonzero
    # eigenvalue stays real positive, so nothing winds or crosses
    theta = np.linspace(0.0, 2.0 * np.pi, 33)
    pts = [
        np.array([0.7 + 0.05 * np.cos(t), 0.95 + 0.05 * np.sin(t), 0.7 + 0.05 * np.cos(t)])
        for t in theta
    ]
    pts[-1] = pts[0].copy()
    report = eigen_along_fiber_loop(example2, [1.0], pts)
    assert report.permutation == (0,)
    assert report.windings == (0,)
    assert report.re_axis_crossings == (0,)
    assert report.min_distance_to_zero == pytest.approx(0.9, abs=1e-9)
    assert report.flags == ()


def test_fiber_loop_crossing_zero(example2):
    # the nonzero eigenvalue equals lambda * y on the equilibrium plane, so
    # a loop crossing y = 0 loses it into the structural zeros
    ys = np.concatenate([np.linspace(0.5, -0.5, 11), np.linspace(-0.5, 0.5, 11)[1:]])
    pts = [np.array([1.15, y, 1.15]) for y in ys]
    pts[-1] = pts[0].copy()
    with pytest.raises(TrackingError, match=r"path leaves C\*"):
        eigen_along_fiber_loop(example2, [1.0], pts)

    # same loop sampled so that no point lands exactly on y = 0: the step
    # straddling it is caught by the chord test instead
    ys2 = np.concatenate([np.linspace(0.5, -0.5, 10), np.linspace(-0.5, 0.5, 10)[1:]])
    pts2 = [np.array([1.15, y, 1.15]) for y in ys2]
    pts2[-1] = pts2[0].copy()
    with pytest.raises(TrackingError, match=r"path leaves C\*"):
        eigen_along_fiber_loop(example2, [1.0], pts2)


def test_fiber_loop_constant(example2):
    x_star, y_star = np.sqrt(8.0 / 15.0), np.sqrt(14.0 / 15.0)
    xeq = np.array([x_star, y_star, x_star])
    report = eigen_along_fiber_loop(example2, [1.0], [xeq, xeq, xeq])
    assert report.permutation == (0,)
    assert report.windings == (0,)
    assert report.min_distance_to_zero == pytest.approx(float(y_star), abs=1e-9)


def test_fiber_loop_validation(example2):
    x_star, y_star = np.sqrt(8.0 / 15.0), np.sqrt(14.0 / 15.0)
    xeq = np.array([x_star, y_star, x_star])
    with pytest.raises(InputError, match="loop must close"):
        eigen_along_fiber_loop(example2, [1.0], [xeq, xeq + 0.2])
    with pytest.raises(InputError, match="not an equilibrium"):
        eigen_along_fiber_loop(
            example2, [1.0], [[0.7, 0.95, 0.8], xeq.tolist(), [0.7, 0.95, 0.8]]
        )
    with pytest.raises(InputError, match="at least two"):
        eigen_along_fiber_loop(example2, [1.0], [xeq])
    with pytest.raises(InputError, match="length"):
        eigen_along_fiber_loop(example2, [1.0], [[0.7, 0.95], [0.7, 0.95]])


def test_report_serialization():
    report = track_matrix_loop(rotation_family(64), k=0)
    data = json.loads(json.dumps(report.as_dict(), sort_keys=True))
    assert sorted(data.keys()) == [
        "crossings",
        "flags",
        "min_distance_to_zero",
        "permutation",
        "samples_used",
        "tol_zero_used",
        "windings",
    ]
    assert data["permutation"] == [0, 1]
    sp = split_spectrum(np.diag([0.0, -1.5, 2.0]), 1)
    blob = json.loads(json.dumps(sp.as_dict(), sort_keys=True))
    assert blob["zeros"] == [[0.0, 0.0]]
    assert blob["nonzeros"] == [[-1.5, 0.0], [2.0, 0.0]]
