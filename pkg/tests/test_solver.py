"""Census, Newton refinement, and the quadrature cross-check of closed orbits.

The ellipsoid perimeters are checked against the complete elliptic integral,
and the oscillating orbit on a barrel profile is computed twice: once by the
Clairaut quadrature (which never touches the discrete solver) and once by
Newton refinement of a synthetic seed.
"""

import numpy as np
import pytest
import scipy.special

from geocount import geometry, loops, solver
from geocount.geometry import MetricSpec

# barrel with a (p, q) = (1, 1) oscillating geodesic; bracket established by
# scanning delta_phi(c) across the admissible Clairaut constants
BARREL = ("poly", (0.8, 0.0, -0.8), (-0.6, 0.6))
BARREL_BRACKET = (0.52, 0.62)


def _ellipse_perimeter(a, b):
    big, small = max(a, b), min(a, b)
    return 4.0 * big * scipy.special.ellipe(1.0 - (small / big) ** 2)


def test_census_finds_the_three_principal_ellipses(ellipsoid_census):
    census = ellipsoid_census
    assert len(census.entries) == 3
    assert [e.ident for e in census.entries] == ["g000", "g001", "g002"]
    assert not census.degenerate_family
    assert all(not e.self_reverse for e in census.entries)
    cert = census.certificate
    assert cert["complete"]
    assert cert["max_residual"] < 1e-10
    assert cert["min_hits"] >= 1
    assert sum(e.hits for e in census.entries) == cert["converged"]


def test_census_lengths_match_elliptic_integrals(ellipsoid_census):
    axes = ellipsoid_census.metric.data
    semi = [1.0 / a for a in axes]
    expected = sorted(
        _ellipse_perimeter(semi[j], semi[k])
        for j, k in ((0, 1), (0, 2), (1, 2)))
    got = sorted(e.result.length for e in ellipsoid_census.entries)
    assert np.allclose(got, expected, rtol=1e-10)


def test_newton_refinement_is_quadratic(ellipsoid_spec):
    seed = loops.principal_ellipse(ellipsoid_spec, 0, 1, 128)
    rng = np.random.default_rng(3)
    nodes = np.asarray(seed.nodes) + 0.02 * rng.normal(size=(128, 3))
    nodes = geometry.surface_project(ellipsoid_spec, nodes)
    res = solver.refine_to_geodesic(loops.DiscreteLoop(ellipsoid_spec, nodes))
    assert res.residual < 1e-10
    assert res.convergence_order is not None and res.convergence_order > 1.7
    hist = np.asarray(res.history)
    assert np.all(hist[1:] < hist[:-1])
    assert abs(res.length - 6.1344978839181) < 1e-9


def test_refined_geodesic_stays_on_surface(ellipsoid_census):
    for entry in ellipsoid_census.entries:
        nodes = np.asarray(entry.result.loop.nodes)
        assert np.max(np.abs(geometry.constraint(entry.result.loop.metric, nodes))) < 1e-9
        assert entry.result.constraint_defect < 1e-9


def test_census_below_shortest_length_is_empty(ellipsoid_spec):
    census = solver.find_all(ellipsoid_spec, 0.5, mesh=128, planes=8, seed=7)
    assert census.entries == ()
    assert census.certificate["classes"] == 0


def test_clairaut_quadrature_closes_the_unit_resonance():
    spec = MetricSpec.revolution(*BARREL)
    res = solver.clairaut_find_closed(spec, 1, 1, BARREL_BRACKET)
    assert res.closes
    assert (res.p, res.q) == (1, 1)
    assert res.defect < 1e-10
    assert abs(res.delta_phi - 2 * np.pi) < 1e-10
    assert abs(res.turning[0] + res.turning[1]) < 1e-10  # symmetric profile
    assert not res.leaves_band


def test_clairaut_and_discrete_routes_agree():
    spec = MetricSpec.revolution(*BARREL)
    shot = solver.clairaut_find_closed(spec, 1, 1, BARREL_BRACKET)
    n = 256
    ts = np.arange(n) / n
    mid = 0.5 * (shot.turning[0] + shot.turning[1])
    half = 0.5 * (shot.turning[1] - shot.turning[0])
    zs = mid + half * np.sin(2 * np.pi * ts)
    phis = 2 * np.pi * ts
    rr = 0.8 - 0.8 * zs * zs
    nodes = np.stack([rr * np.cos(phis), rr * np.sin(phis), zs], axis=1)
    refined = solver.refine_to_geodesic(loops.DiscreteLoop(spec, nodes))
    assert refined.residual < 1e-10
    assert abs(refined.length - shot.length) < 1e-8

    # the refined orbit conserves r^2 phi' at the quadrature's Clairaut value
    from geocount import _spectral
    vel = _spectral.derivative(np.asarray(refined.loop.nodes))
    speeds = np.linalg.norm(vel, axis=1)
    x, y = refined.loop.nodes[:, 0], refined.loop.nodes[:, 1]
    c_vals = (x * vel[:, 1] - y * vel[:, 0]) / speeds
    assert np.max(np.abs(c_vals - shot.clairaut)) < 1e-4


def test_clairaut_shoot_leaves_band_flag():
    spec = MetricSpec.revolution(*BARREL)
    res = solver.clairaut_shoot(spec, 0.30)
    assert res.leaves_band


def test_parallel_heights():
    barrel = MetricSpec.revolution(*BARREL)
    hs = solver.parallel_heights(barrel)
    assert len(hs) == 1 and abs(hs[0]) < 1e-12
    cubic = MetricSpec.revolution("poly", (1.0, -0.02, 0.0, 0.1 / 3.0), (-1.0, 1.0))
    hs = sorted(solver.parallel_heights(cubic))
    assert len(hs) == 2
    assert np.allclose(hs, [-np.sqrt(0.2), np.sqrt(0.2)], atol=1e-10)


def test_synthesize_cover_doubles_the_orbit(ellipsoid_census):
    entry = ellipsoid_census.entries[0]
    cover = solver.synthesize_cover(entry.result, 2)
    assert abs(cover.length - 2 * entry.result.length) < 1e-8
    assert cover.residual < 1e-10
    dec = loops.primitive_decompose(cover.loop)
    assert dec.degree == 2


def test_iterate_table_lists_degrees_up_to_the_bound(ellipsoid_census):
    rows = list(solver.iterate_table(ellipsoid_census))
    assert all(d * entry.result.length <= 7.0 + 1e-9 for entry, d, _ in rows)
    assert {d for _, d, _ in rows} == {1}
    longer = solver.find_all(
        ellipsoid_census.metric, 13.0, mesh=128, planes=24, seed=7)
    degrees = {d for _, d, _ in solver.iterate_table(longer)}
    assert degrees == {1, 2}
