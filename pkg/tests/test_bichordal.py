from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slelab.bichordal import (
    LEFT_SIDE,
    RIGHT_SIDE,
    CompactSet,
    boundary_set,
    coupling_trial,
    dump_set,
    dyadic_thicken,
    goodness_check,
    kernel_phi,
    kernel_psi,
    load_set,
    path_observables,
    reflect,
    right_components,
    sample_initial_path,
    validate_rho_pair,
    variant_kernels_psi12,
)
from slelab.errors import InputError, ParameterError

L_ONLY = boundary_set(LEFT_SIDE)


def bar(x_end: float, height: float = 0.5) -> CompactSet:
    return CompactSet(LEFT_SIDE, (np.array([complex(0, height), complex(x_end, height)]),))


def comb() -> CompactSet:
    teeth = [np.array([1j * (1 - 2.0 ** -m), 1 + 1j * (1 - 2.0 ** -m)]) for m in range(1, 9)]
    return CompactSet(LEFT_SIDE, tuple(teeth))


def simple_curve() -> CompactSet:
    return CompactSet(LEFT_SIDE, (np.array([0j, 0.3 + 0.2j, 0.25 + 0.6j, 0.4 + 0.8j, 1j]),))


@pytest.mark.parametrize("n", [2, 3, 5])
def test_boundary_segment_thickens_to_one_column(n):
    K = dyadic_thicken(L_ONLY, n)
    assert K.sorted_squares() == [(0, j) for j in range(2 ** n)]


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_half_bar_adds_expected_squares(n):
    K = dyadic_thicken(bar(0.5), n)
    extra = {sq for sq in K.squares if sq[0] > 0}
    assert len(extra) == math.ceil(2 ** (n - 1))
    assert {j for _, j in extra} == {2 ** (n - 1)}


@settings(max_examples=25, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=1.0).filter(lambda z: 0 <= z.real <= 1 and 0 <= z.imag <= 1),
                min_size=2, max_size=6), st.integers(2, 5))
def test_refinement_shrinks_thickening(pts, n):
    curve = np.concatenate([[complex(0, pts[0].imag)], np.asarray(pts)])
    K = CompactSet(LEFT_SIDE, (curve,))
    coarse = dyadic_thicken(K, n)
    fine = dyadic_thicken(K, n + 1)
    assert all((i >> 1, j >> 1) in coarse.squares for i, j in fine.squares)
    assert dyadic_thicken(fine, n).squares <= coarse.squares


def test_disconnected_input_rejected():
    floating = CompactSet(LEFT_SIDE, (np.array([0.6 + 0.5j, 0.8 + 0.5j]),))
    with pytest.raises(InputError):
        dyadic_thicken(floating, 4)


def test_boundary_only_has_single_full_component():
    dec = right_components(dyadic_thicken(L_ONLY, 4))
    assert len(dec.components) == 1
    c = dec.components[0]
    assert c.a == 1 + 0j and c.b == 1 + 1j


def test_full_bar_splits_at_mid_height():
    dec = right_components(dyadic_thicken(bar(1.0), 4))
    assert len(dec.components) == 2
    low, high = dec.components
    assert low.a.imag == 0.0 and low.b.imag == pytest.approx(0.5)
    assert high.a.imag == pytest.approx(0.5 + 2 ** -4) and high.b.imag == 1.0


def test_component_count_stable_under_refinement():
    K = CompactSet(LEFT_SIDE, (np.array([0.3j, 1 + 0.3j]), np.array([0.7j, 0.5 + 0.7j])))
    counts = [len(right_components(dyadic_thicken(K, n)).components) for n in (3, 4, 5)]
    assert counts[0] == counts[1] == counts[2] == 2


def test_simple_curve_is_good():
    rep = goodness_check(simple_curve(), n_max=6)
    assert rep.verdict == "good"
    assert rep.stabilized_level is not None


def test_comb_is_not_certified_good():
    rep = goodness_check(comb(), n_max=7)
    assert rep.verdict in ("not_good", "inconclusive")
    assert len(rep.levels) == len(rep.counts[2])


def test_rho_window():
    validate_rho_pair(3.0, (0.0, 0.0))
    with pytest.raises(ParameterError):
        validate_rho_pair(3.0, (-2.5, 0.0))


def test_not_good_maps_to_bare_right_side():
    out = kernel_phi(comb(), 3.0, (0.0, 0.0), seed=1)
    assert out.equals(boundary_set(RIGHT_SIDE))


def test_single_component_gives_one_chord_near_right_corners():
    K2 = kernel_phi(L_ONLY, 3.0, (0.0, 0.0), seed=2)
    assert K2.side == RIGHT_SIDE and len(K2.curves) == 1
    c = K2.curves[0]
    assert np.all((c.real >= -1e-9) & (c.real <= 1 + 1e-9) & (c.imag >= -1e-9) & (c.imag <= 1 + 1e-9))
    assert abs(c[0] - 1) < 0.15 and abs(c[-1] - (1 + 1j)) < 0.15


@pytest.mark.parametrize("seed", range(3))
def test_kernel_output_contains_side_and_is_connected(seed):
    K2 = kernel_phi(simple_curve(), 3.0, (0.0, 0.0), seed=seed)
    assert K2.side == RIGHT_SIDE
    dyadic_thicken(K2, 4)  # raises when disconnected


def test_psi_reproducible_and_degenerate_composition():
    a = kernel_psi(simple_curve(), 3.0, (0.0, 0.0), (0.0, 0.0), seed=5)
    b = kernel_psi(simple_curve(), 3.0, (0.0, 0.0), (0.0, 0.0), seed=5)
    assert a.equals(b) and a.side == LEFT_SIDE
    from slelab.seeding import derive_seed

    degenerate = kernel_psi(comb(), 3.0, (0.0, 0.0), (0.0, 0.0), seed=6)
    direct = kernel_phi(boundary_set(RIGHT_SIDE), 3.0, (0.0, 0.0), seed=derive_seed(6, 2))
    assert degenerate.equals(direct)


def test_reflection_is_an_involution():
    K = simple_curve()
    back = reflect(reflect(K))
    assert back.side == K.side
    assert np.allclose(back.curves[0], K.curves[0], atol=1e-15)
    assert reflect(K).side == RIGHT_SIDE


def test_identical_starts_coalesce_at_step_zero():
    res = coupling_trial(simple_curve(), simple_curve(), 3.0, ((0.0, 0.0), (0.0, 0.0)), 2, seed=0)
    assert res.coalesced and res.step == 0 and res.absorbing_ok


def test_set_dump_round_trip(tmp_path):
    K = dyadic_thicken(simple_curve(), 4)
    dump_set(K, tmp_path / "k.txt")
    assert load_set(tmp_path / "k.txt") == K


def test_variant_without_loops_resamples_in_full_rectangle():
    eta = sample_initial_path(3.0, seed=1)
    out = variant_kernels_psi12(eta, [], 3.0, seed=2)
    assert out.kept_loops == () and out.separated
    p = out.path
    assert p[0] == 0.5j and p[-1] == 1 + 0.5j
    assert np.all((p.real >= -1e-9) & (p.real <= 1 + 1e-9) & (p.imag >= -1e-9) & (p.imag <= 1 + 1e-9))
    diam, contacts = path_observables(p)
    assert diam >= 1.0 and contacts >= 1


def test_variant_kappa_range():
    with pytest.raises(ParameterError):
        variant_kernels_psi12(sample_initial_path(3.0), [], 4.5)
