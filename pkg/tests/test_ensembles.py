from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slelab.conformal import O_QUAD, cross_ratio_of_points
from slelab.ensembles import (
    E1,
    E2,
    UNRESOLVED,
    branch_boundary_loops,
    cardy_crossing,
    continue_from_tips,
    detect_hookup,
    estimate_fkappa,
    loop_in_component,
    orientation_matches,
    sample_bcle,
    sample_cle_branch,
    sample_four_strands,
    sample_trunk_decomposition,
    validate_bcle,
)
from slelab.errors import ParameterError


def test_cardy_formula_anchor_values():
    assert cardy_crossing(0.5) == pytest.approx(0.5, abs=1e-12)
    assert cardy_crossing(0.0) == 0.0
    assert cardy_crossing(1.0) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99))
def test_cardy_formula_symmetry(x):
    assert cardy_crossing(x) + cardy_crossing(1 - x) == pytest.approx(1.0, abs=1e-10)


def test_branch_is_reproducible_and_touches_the_circle():
    a = sample_cle_branch(5.5, seed=3)
    b = sample_cle_branch(5.5, seed=3)
    assert a.points.tobytes() == b.points.tobytes()
    touched = [np.any(np.abs(sample_cle_branch(6.0, seed=s).points[1:]) > 1 - 1e-2) for s in range(100)]
    assert np.mean(touched) > 0.9


def test_immediate_stop_keeps_the_starting_cross_ratio():
    cfg = sample_four_strands(6.0, O_QUAD, 1 - 1e-9, dt=1e-6, seed=0)
    assert cfg.reached_U
    assert cfg.hit_steps == (1, 2, 3, 4)
    assert cfg.c.c == pytest.approx(cross_ratio_of_points(O_QUAD), abs=0.01)


def test_stop_event_is_positive_and_nested():
    reached = {r: [sample_four_strands(6.0, O_QUAD, r, dt=1e-2, seed=s).reached_U for s in range(30)]
               for r in (0.5, 0.25)}
    assert any(reached[0.5])
    assert sum(reached[0.25]) <= sum(reached[0.5])


def test_tips_on_stop_circle():
    for s in range(10):
        cfg = sample_four_strands(6.0, O_QUAD, 0.5, dt=1e-2, seed=s)
        if cfg.reached_U:
            assert np.all(np.abs(np.abs(cfg.tips) - 0.5) < 0.2)
            return
    pytest.fail("no configuration reached radius 1/2 in 10 seeds")


def test_hookup_never_pairs_opposite_strands():
    seen = 0
    for s in range(20):
        cfg = sample_four_strands(6.0, O_QUAD, 0.5, dt=1e-2, seed=s)
        if cfg.reached_U:
            h = detect_hookup(cfg, seed=s)
            assert h.event in (E1, E2)
            assert (1, 3) not in h.pairing and (2, 4) not in h.pairing
            seen += 1
    assert seen > 0


def test_adjacent_tips_classified_without_growth():
    # tips 1 and 2 almost together: the one-step continuation must close gamma_1 with gamma_2
    ev, _ = continue_from_tips(6.0, [0.0, 1e-12, 1.0, 2.0], -1.0, seed=0)
    assert ev == E2


def test_unreached_configuration_rejected():
    cfg = sample_four_strands(6.0, O_QUAD, 0.5, dt=1e-2, seed=0)
    cfg.reached_U = False
    with pytest.raises(ParameterError):
        detect_hookup(cfg)


def test_fkappa_bounded_away_at_unit_cross_ratio():
    est = estimate_fkappa(6.0, 1.0, 300, seed=1)
    assert 0.1 < est.p_hat < 0.9
    assert est.n_unresolved == 0


def test_fkappa_follows_cardy_at_moderate_cross_ratios():
    for c in (0.3, 3.0):
        est = estimate_fkappa(6.0, c, 400, seed=2)
        lo, hi = est.ci
        target = cardy_crossing(c / (1 + c))
        assert lo - 0.03 < target < hi + 0.03


def test_bcle_window():
    validate_bcle(5.0, 0.0)
    with pytest.raises(ParameterError):
        validate_bcle(5.0, 1.0)


def test_bcle_zero_matches_branch_loops():
    sample = sample_bcle(5.0, 0.0, seed=3, epsilon_truncation=0.05)
    loops = branch_boundary_loops(5.0, 0.05, 1e-3, 3)
    assert len(sample.loops) == len(loops)
    for a, b in zip(sample.loops, loops):
        assert np.array_equal(a.points, b.points)


@pytest.mark.parametrize("seed", range(4))
def test_loop_orientation_flags(seed):
    sample = sample_bcle(3.0, -1.5, seed=seed, epsilon_truncation=0.02)
    for lp in sample.loops + sample.false_loops:
        assert orientation_matches(lp)


def test_truncation_above_diameter_leaves_trunk_only():
    td = sample_trunk_decomposition(3.0, epsilon_truncation=2.5, seed=1)
    assert td.loops == [] and td.eta_order == [] and td.eta_tilde_order == []


def test_trunk_loops_sit_in_their_components():
    total = 0
    for s in range(8):
        td = sample_trunk_decomposition(3.0, epsilon_truncation=0.1, seed=s)
        assert td.loop_sets_match()
        for lp, owner in zip(td.loops, td.loop_component):
            assert loop_in_component(lp, td.components[owner], 0.02)
            total += 1
    assert total > 0


def test_kappa_prime_range_enforced():
    with pytest.raises(ParameterError):
        sample_cle_branch(8.5)
    assert UNRESOLVED not in (E1, E2)
