"""Discrete loop container: sampling, rotation alignment, covers, reversal."""

import numpy as np
import pytest

from geocount import geometry, loops
from geocount.loops import DiscreteLoop, LoopError


@pytest.fixture(scope="module")
def sphere():
    return geometry.MetricSpec.ellipsoid((1.0, 1.0, 1.0))


def _equator(spec, n=64, radius=1.0, phase=0.0):
    ts = np.arange(n) / n + phase
    nodes = np.stack(
        [radius * np.cos(2 * np.pi * ts), radius * np.sin(2 * np.pi * ts),
         np.zeros(n)], axis=1)
    return DiscreteLoop(spec, nodes)


def test_circle_length_matches_circumference(sphere):
    loop = _equator(sphere)
    assert abs(loops.length(loop) - 2 * np.pi) < 1e-12


def test_resample_is_exact_for_bandlimited_loops(sphere):
    coarse = _equator(sphere, n=64)
    fine = loops.resample(coarse, 128)
    exact = _equator(sphere, n=128)
    assert np.max(np.abs(np.asarray(fine.nodes) - np.asarray(exact.nodes))) < 1e-12


def test_rotate_shifts_base_point(sphere):
    loop = _equator(sphere)
    rot = loops.rotate(loop, 5)
    assert np.allclose(np.asarray(rot.nodes)[0], np.asarray(loop.nodes)[5])
    assert abs(loops.length(rot) - loops.length(loop)) < 1e-12


def test_fractional_rotate_matches_exact_phase(sphere):
    loop = _equator(sphere, n=64)
    shifted = loops.fractional_rotate(loop, 0.5 / 64)
    exact = _equator(sphere, n=64, phase=0.5 / 64)
    assert np.max(np.abs(np.asarray(shifted.nodes) - np.asarray(exact.nodes))) < 1e-10


def test_reverse_is_an_involution_fixing_the_base_point(sphere):
    loop = _equator(sphere)
    rev = loops.reverse(loop)
    assert np.allclose(np.asarray(rev.nodes)[0], np.asarray(loop.nodes)[0])
    assert abs(loops.length(rev) - loops.length(loop)) < 1e-12
    back = loops.reverse(rev)
    assert np.max(np.abs(np.asarray(back.nodes) - np.asarray(loop.nodes))) < 1e-12


def test_reversal_is_not_a_rotation_of_the_original(sphere):
    # traversal direction is part of the parametrized class; no rotation of
    # the loop reproduces its reversal
    loop = _equator(sphere)
    rev = loops.reverse(loop)
    assert loops.loop_distance(loop, rev) > 0.1


def test_cover_and_primitive_decompose(sphere):
    loop = _equator(sphere, n=64)
    double = loops.cover(loop, 2)
    assert double.n == 128
    assert abs(loops.length(double) - 2 * loops.length(loop)) < 1e-10
    dec = loops.primitive_decompose(double)
    assert dec.degree == 2
    assert dec.mismatch < 1e-10
    assert loops.loop_distance(dec.base, loop) < 1e-8


def test_primitive_loop_decomposes_trivially(sphere):
    dec = loops.primitive_decompose(_equator(sphere, n=64))
    assert dec.degree == 1


def test_align_rotation_recovers_shift(sphere):
    loop = _equator(sphere, n=64)
    other = loops.fractional_rotate(loop, 0.3)
    shift, distance = loops.align_rotation(loop, other)
    assert distance < 1e-8
    recovered = loops.fractional_rotate(other, shift)
    assert np.max(np.abs(np.asarray(recovered.nodes) - np.asarray(loop.nodes))) < 1e-8


def test_loop_distance_quotients_rotation(sphere):
    loop = _equator(sphere, n=64)
    assert loops.loop_distance(loop, loops.rotate(loop, 17)) < 1e-10
    assert loops.loop_distance(loop, loops.fractional_rotate(loop, 0.21)) < 1e-6
    tilted = DiscreteLoop(sphere, np.asarray(_equator(sphere, n=64).nodes)[:, [0, 2, 1]])
    assert loops.loop_distance(loop, tilted) > 0.1


def test_canonicalize_is_idempotent(sphere):
    loop = loops.rotate(_equator(sphere, n=64), 9)
    canon = loops.canonicalize(loop)
    again = loops.canonicalize(canon)
    assert np.max(np.abs(np.asarray(again.nodes) - np.asarray(canon.nodes))) < 1e-12


def test_reparametrize_constant_speed(sphere):
    # stretch the parametrization, then ask for it back
    n = 64
    warped = np.arange(n) / n + 0.08 * np.sin(2 * np.pi * np.arange(n) / n)
    nodes = np.stack(
        [np.cos(2 * np.pi * warped), np.sin(2 * np.pi * warped), np.zeros(n)], axis=1)
    loop = DiscreteLoop(sphere, nodes)
    even, defect = loops.reparametrize_constant_speed(loop)
    assert defect < 1e-10
    spd = loops.speeds(even)
    assert (spd.max() - spd.min()) / spd.mean() < 1e-6


def test_seed_constructors_land_on_surface():
    ell = geometry.MetricSpec.ellipsoid((1.05, 1.0, 0.95))
    pe = loops.principal_ellipse(ell, 0, 2, 64)
    assert np.max(np.abs(geometry.constraint(ell, np.asarray(pe.nodes)))) < 1e-12
    rev = geometry.MetricSpec.revolution("poly", (0.8, 0.0, -0.4), (-0.6, 0.6))
    pc = loops.parallel_circle(rev, 0.25, 64)
    assert np.max(np.abs(geometry.constraint(rev, np.asarray(pc.nodes)))) < 1e-12
    assert np.allclose(np.asarray(pc.nodes)[:, 2], 0.25)


def test_loop_validation_errors(sphere):
    with pytest.raises(LoopError):
        DiscreteLoop(sphere, np.zeros((10, 3)))  # too few nodes
    with pytest.raises(LoopError):
        DiscreteLoop(sphere, np.zeros((66, 3)))  # not divisible by 4
    with pytest.raises(LoopError):
        DiscreteLoop(sphere, np.zeros((64, 2)))  # wrong ambient dimension
    bad = np.zeros((64, 3))
    bad[3, 1] = np.nan
    with pytest.raises(LoopError):
        DiscreteLoop(sphere, bad)
