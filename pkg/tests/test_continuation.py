"""Branch continuation, event location, local invariance, and normal forms.

Two frozen one-parameter families anchor these tests: a cubic-profile band
whose pair of geodesic parallels collides in a fold as the tilt coefficient
crosses zero, and a conformally deformed sphere whose equator-like orbit
crosses an antiperiodic degeneracy (trace -2) where a doubled orbit branches
off.
"""

import numpy as np
import pytest

from geocount import continuation, geometry, jacobi, loops, solver
from geocount.continuation import MetricPath
from geocount.geometry import GeometryError, MetricSpec

FOLD_START = ("poly", (1.0, -0.02, 0.0, 0.1 / 3.0), (-1.0, 1.0))
FOLD_END = ("poly", (1.0, 0.02, 0.0, 0.1 / 3.0), (-1.0, 1.0))
PD_TERMS_START = ((1, 1, 0.05), (2, 0, 0.16), (2, 2, 0.08), (3, 3, 0.03))
PD_TERMS_END = ((1, 1, 0.05), (2, 0, 0.26), (2, 2, 0.08), (3, 3, 0.03))


@pytest.fixture(scope="module")
def fold_path():
    return MetricPath(MetricSpec.revolution(*FOLD_START), MetricSpec.revolution(*FOLD_END))


@pytest.fixture(scope="module")
def fold_branch(fold_path):
    start = solver.refine_to_geodesic(
        loops.parallel_circle(fold_path.start, 0.55, 128))
    return continuation.continue_branch(fold_path, start)


@pytest.fixture(scope="module")
def pd_path():
    return MetricPath(
        MetricSpec.conformal_sphere(PD_TERMS_START),
        MetricSpec.conformal_sphere(PD_TERMS_END))


@pytest.fixture(scope="module")
def pd_branch(pd_path):
    start = solver.refine_to_geodesic(
        loops.great_circle_seed(pd_path.start, np.eye(3)[0], np.eye(3)[1], 128))
    return continuation.continue_branch(pd_path, start)


def test_metric_path_interpolates_endpoints():
    path = MetricPath(
        MetricSpec.ellipsoid((1.0, 1.0, 1.2)), MetricSpec.ellipsoid((1.1, 1.0, 1.3)))
    assert path.at(0.0).data == (1.0, 1.0, 1.2)
    assert path.at(1.0).data == (1.1, 1.0, 1.3)
    assert path.at(0.5).data == (1.05, 1.0, 1.25)
    with pytest.raises(GeometryError):
        MetricPath(
            MetricSpec.ellipsoid((1.0, 1.0, 1.2)),
            MetricSpec.revolution("poly", (0.8, 0.0, -0.4), (-0.6, 0.6)))


def test_fold_event_is_located(fold_branch):
    assert len(fold_branch.events) == 1
    event = fold_branch.events[0]
    assert event.kind == "fold"
    assert abs(event.t - 0.5) < 1e-6
    assert event.t_accuracy < 1e-8
    assert event.nu_signature == (1, 1)
    assert event.signature_ok
    assert abs(event.trace - 2.0) < 1e-3


def test_fold_branch_turns_back(fold_branch):
    assert not fold_branch.reached_end
    assert fold_branch.stop_reason == "returned_to_start"
    # arclength keeps increasing while t folds back below the event value
    ts = [p.t for p in fold_branch.points]
    assert max(ts) < 0.5 + 1e-6
    assert ts[-1] < max(ts) - 0.1


def test_fold_invariance_and_branch_pairing(fold_path, fold_branch):
    event = fold_branch.events[0]
    report = continuation.verify_invariance(fold_path, event)
    assert report.event_kind == "fold"
    assert report.invariant
    assert report.total_before == 0
    assert report.total_after == 0
    before = report.records_before
    assert set(before) == {"branch0", "branch1"}
    eps = {before["branch0"].eps, before["branch1"].eps}
    assert eps == {(1, 1), (-1, -1)}  # colliding branches carry opposite signs
    assert report.records_after == {}
    assert report.detail_after == {"no_branches": 0}


def test_period_doubling_event_is_located(pd_branch):
    assert pd_branch.reached_end
    assert pd_branch.stop_reason == "reached_end"
    assert len(pd_branch.events) == 1
    event = pd_branch.events[0]
    assert event.kind == "period_doubling"
    assert abs(event.t - 0.798186551) < 1e-6
    assert event.t_accuracy < 1e-6
    assert event.nu_signature == (0, 1)
    assert event.signature_ok
    assert abs(event.trace + 2.0) < 1e-6


def test_period_doubling_invariance_pattern(pd_path, pd_branch):
    event = pd_branch.events[0]
    report = continuation.verify_invariance(pd_path, event)
    assert report.invariant
    assert report.total_before == report.total_after == 0

    prim_b = report.records_before["primitive_double_cover"]
    prim_a = report.records_after["primitive_double_cover"]
    emergent = report.records_after["emergent_doubled"]
    # the first sign survives the crossing, the second one flips
    assert prim_a.eps[0] == prim_b.eps[0]
    assert prim_a.eps[1] == -prim_b.eps[1]
    # the doubled orbit inherits the opposite of the flipped sign
    assert emergent.eps[0] == -prim_a.eps[1]
    assert "emergent_doubled" not in report.records_before


def test_doubled_branch_amplitude_follows_square_root_law(pd_path, pd_branch):
    event = pd_branch.events[0]
    offsets = (0.005, 0.01, 0.015, 0.02)
    samples = continuation.spawn_doubled_branch(pd_path, event, offsets)
    assert len(samples) == len(offsets)
    amps = [s.amplitude for s in samples]
    assert all(a > 0 for a in amps)
    assert amps == sorted(amps)

    fit = continuation.fit_normal_form(pd_path, event, samples)
    assert fit.side == 1
    assert fit.sign_f == -1
    assert fit.sign_g == 1
    assert not fit.low_confidence
    assert fit.relative_residual < 0.05
    assert abs(fit.t_intercept - event.t) < 0.01


def test_fit_r2_recovers_synthetic_slopes():
    class _S:
        def __init__(self, t, amplitude):
            self.t = t
            self.amplitude = amplitude

    t0 = 0.4
    ts = np.array([0.41, 0.42, 0.43, 0.44])
    right = [_S(t, np.sqrt(3.0 * (t - t0))) for t in ts]
    side, slope, t_int, resid = continuation._fit_r2(right, t0)
    assert side == 1
    assert abs(slope - 3.0) < 1e-12
    assert abs(t_int - t0) < 1e-12
    assert resid < 1e-12

    left = [_S(2 * t0 - t, np.sqrt(3.0 * (t - t0))) for t in ts]
    side, slope, t_int, resid = continuation._fit_r2(left, t0)
    assert side == -1
    assert abs(slope + 3.0) < 1e-12
    assert abs(t_int - t0) < 1e-12


def test_fold_pairing_is_transversal(fold_path, fold_branch):
    event = fold_branch.events[0]
    out = continuation.metric_deformation_pairing(fold_path, event)
    assert out["sign_stable"]
    assert out["derivative_scale"] > 0.1
    # the deformation is fully aligned with the kernel field at a fold
    assert abs(out["value"]) > 0.5 * out["derivative_scale"]
    assert abs(out["value"]) <= out["derivative_scale"] * (1 + 1e-6)
    assert np.sign(out["value"]) == np.sign(out["value_doubled_mesh"])


def test_period_doubling_pairing_vanishes(pd_path, pd_branch):
    # every term of this path is even in z, so the equator is a geodesic for
    # all t and the first-order deformation of its residual vanishes
    # identically; transversality lives in the trace slope instead
    event = pd_branch.events[0]
    out = continuation.metric_deformation_pairing(
        pd_path, event, mesh_doubling_check=False)
    assert abs(out["value"]) < 1e-8
    assert out["derivative_scale"] < 1e-6

    traces = [(p.t, p.trace) for p in pd_branch.points]
    below = [tr for t, tr in traces if t < event.t - 1e-3]
    above = [tr for t, tr in traces if t > event.t + 1e-3]
    assert below and above
    assert min(below) > -2.0 > max(above)


def test_stall_reports_partial_branch():
    # the tracked parallel migrates to the band edge, the corrector starts
    # failing on band exits, and the step collapses
    path = MetricPath(
        MetricSpec.revolution("poly", (0.8, 0.0, -0.4), (-0.6, 0.6)),
        MetricSpec.revolution("poly", (0.8, 0.56, -0.4), (-0.6, 0.6)))
    start = solver.refine_to_geodesic(loops.parallel_circle(path.start, 0.0, 128))
    with pytest.raises(solver.StallError) as excinfo:
        continuation.continue_branch(path, start, max_steps=300)
    partial = excinfo.value.partial
    assert partial.stop_reason == "stall"
    assert not partial.reached_end
    assert len(partial.points) > 5
    # the parallel leaves the band where 0.7 t = 0.6
    assert abs(partial.points[-1].t - 6.0 / 7.0) < 0.02
