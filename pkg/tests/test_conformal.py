from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slelab.conformal import (
    DISK,
    HALF_PLANE,
    O_QUAD,
    Arc,
    BoundaryQuad,
    DomainHandle,
    configuration_cross_ratio,
    cross_ratio,
    cross_ratio_of_points,
    disk_automorphism,
    harmonic_measure_mc,
    mobius_invariance_check,
    quad_with_cross_ratio,
    radial_slits,
    random_disk_automorphism,
    slit_disk_harmonic_exact,
)
from slelab.errors import DegenerateQuad


def within(est, label, value, k=3.0):
    i = est.labels.index(label)
    return abs(est.probabilities[i] - value) <= k * est.standard_errors[i]


def test_square_quad_has_unit_cross_ratio():
    assert cross_ratio(BoundaryQuad(O_QUAD)).c == 1.0


def test_half_plane_quad_with_point_at_infinity():
    assert cross_ratio(BoundaryQuad((-1, 0, 1, np.inf), HALF_PLANE)).c == pytest.approx(1.0, abs=1e-15)


def test_degenerations():
    near = cross_ratio_of_points((-1j, np.exp(-1j * (np.pi / 2 - 1e-6)), 1j, -1))
    far = cross_ratio_of_points((-1j, np.exp(1j * (np.pi / 2 - 1e-6)), 1j, -1))
    assert near < 1e-5
    assert far > 1e5
    with pytest.raises(DegenerateQuad):
        BoundaryQuad((1, 1, 1j, -1))


def test_identity_and_rotation_preserve_cross_ratio():
    q = BoundaryQuad(quad_with_cross_ratio(2.5))
    before, after = mobius_invariance_check(q, (1, 0, 0, 1))
    assert before == after
    before, after = mobius_invariance_check(q, disk_automorphism(0j, np.pi / 7))
    assert abs(before - after) < 1e-10


def test_random_mobius_maps_keep_cross_ratio():
    rng = np.random.default_rng(1)
    q = BoundaryQuad(O_QUAD)
    dev = max(abs(np.subtract(*mobius_invariance_check(q, random_disk_automorphism(rng)))) for _ in range(1000))
    assert dev < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(0.02, 50.0))
def test_quad_construction_inverts_cross_ratio(c):
    assert cross_ratio_of_points(quad_with_cross_ratio(c)) == pytest.approx(c, rel=1e-9)


def test_quarter_arc_from_centre():
    dom = DomainHandle(DISK, [], [Arc("quarter", "circle", 0.0, np.pi / 2)])
    est = harmonic_measure_mc(dom, 0j, 20_000, seed=2)
    assert within(est, "quarter", 0.25)


def test_half_plane_interval_from_i():
    dom = DomainHandle(HALF_PLANE, [], [Arc("unit", "line", -1.0, 1.0)])
    est = harmonic_measure_mc(dom, 1j, 20_000, seed=3)
    assert within(est, "unit", 0.5)


def test_radial_slit_against_closed_form():
    slit = radial_slits([0.5], [0.0])[0]
    dom = DomainHandle(DISK, [slit], [Arc("slit", "polyline", 0.0, 1.0, index=0, side="both")])
    est = harmonic_measure_mc(dom, 0j, 20_000, seed=4)
    assert within(est, "slit", slit_disk_harmonic_exact(0.5))


def test_symmetric_slits_give_unit_cross_ratio():
    angles = [-np.pi / 2, 0.0, np.pi / 2, np.pi]
    strands = radial_slits([0.4] * 4, angles)
    assert abs(configuration_cross_ratio(strands).c - 1) < 0.02


def test_zero_length_strands_reduce_to_starting_quad():
    angles = np.array([-1.4, 0.3, 1.7, 3.0])
    strands = [np.array([np.exp(1j * a)]) for a in angles]
    assert configuration_cross_ratio(strands).c == pytest.approx(cross_ratio_of_points(np.exp(1j * angles)),
                                                                  rel=1e-12)


def test_longer_adjacent_slits_move_cross_ratio_consistently():
    # one long slit alone keeps c = 1 by reflection through it, so two adjacent ones are stretched
    angles = [-np.pi / 2, 0.0, np.pi / 2, np.pi]
    strands = radial_slits([0.8, 0.8, 0.4, 0.4], angles)
    c_map = configuration_cross_ratio(strands, refine=4).c
    c_mc = configuration_cross_ratio(strands, method="harmonic", n_walks=20_000, seed=5)
    assert c_map != pytest.approx(1.0, abs=0.02)
    assert abs(c_map - c_mc.c) <= c_mc.ci_halfwidth + 0.02
    assert np.sign(c_map - 1) == np.sign(c_mc.c - 1)


def test_domain_handle_json_round_trip():
    dom = DomainHandle(DISK, radial_slits([0.3], [1.0], 5), [Arc("a", "circle", 0.0, 1.0)])
    back = DomainHandle.from_json(dom.to_json())
    assert back.to_json() == dom.to_json()
