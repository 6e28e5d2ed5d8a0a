from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slelab.errors import ParameterError
from slelab.percolation import (
    PercolationConfiguration,
    Region,
    classify_hookup,
    classify_hookup_by_exploration,
    compare_switch,
    crossing_probability,
    double_points_bruteforce,
    dump_config_rle,
    find_double_points,
    find_intertwined_pairs,
    flip_colours,
    hookup_disk,
    load_config_rle,
    percolation_hookup_backend,
    sample_config,
    sample_on,
    strip_domain,
    switch_pair,
    trace_interface,
    trace_loops,
    wilson_interval,
)
from slelab.pivotal import LatticeState
from slelab.seeding import rng_for

# 7 x 7 Dobrushin strip whose interface pinches at a single hexagon, axial (0, 5)
PINCH_ROWS = ["00000000000", "00000000000", "00000000100", "00000000100", "00000111000", "00111100100",
              "00101010000", "00011011100", "00110011100", "00100100000", "00001100000", "00010000000",
              "00000000000", "00000000000"]


def pinch_config() -> PercolationConfiguration:
    dom = strip_domain(7, 7)
    sites = np.array([[ch == "1" for ch in row] for row in PINCH_ROWS])
    return PercolationConfiguration(dom, sites & dom.inside, 0.5)


def test_extreme_densities_and_open_fraction():
    assert sample_config(10, 10, 1.0).open_fraction() == 1.0
    sd = np.sqrt(0.25 / 4096)
    fracs = np.array([sample_config(64, 64, 0.5, seed=s).open_fraction() for s in range(200)])
    # single draws leave the 3-sigma band about 0.3% of the time, so look at the whole batch
    assert np.mean(np.abs(fracs - 0.5) <= 3 * sd) >= 0.98
    assert abs(fracs.mean() - 0.5) <= 3 * sd / np.sqrt(len(fracs))


def test_sampling_is_reproducible():
    a, b = sample_config(30, 30, 0.5, seed=8), sample_config(30, 30, 0.5, seed=8)
    assert a.same_as(b)


def test_all_open_small_strip_hugs_closed_side():
    path = trace_interface(sample_config(2, 3, 1.0))
    expected = [((1, -1), (2, -1)), ((1, 0), (2, -1)), ((1, 0), (2, 0)), ((1, 1), (2, 0)), ((1, 1), (2, 1)),
                ((1, 1), (1, 2)), ((0, 2), (1, 2)), ((0, 2), (0, 3)), ((-1, 3), (0, 3))]
    assert path.directed_edges() == expected
    assert find_double_points(path) == []


@pytest.mark.parametrize("seed", range(5))
def test_colour_flip_reverses_the_path(seed):
    cfg = sample_config(20, 20, 0.5, seed=seed)
    p, q = trace_interface(cfg), trace_interface(flip_colours(cfg))
    assert np.array_equal(q.left, p.right[::-1])
    assert np.array_equal(q.right, p.left[::-1])
    assert len(p) >= 20


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 24))
def test_interface_separates_colours_and_double_points_agree(seed, n):
    cfg = sample_config(n, n, 0.5, seed=seed)
    path = trace_interface(cfg)
    col = cfg.colours().ravel()
    assert np.all(col[path.left] == 1) and np.all(col[path.right] == 0)
    directed = list(zip(path.left.tolist(), path.right.tolist()))
    assert len(directed) == len(set(directed))
    assert find_double_points(path) == double_points_bruteforce(path)


def test_constructed_pinch_has_one_double_point():
    cfg = pinch_config()
    path = trace_interface(cfg)
    d = find_double_points(path)
    assert d == double_points_bruteforce(path)
    assert len(d) == 1
    q, r = cfg.domain.axial(d[0])
    assert (int(q), int(r)) == (0, 5)


def test_double_point_count_grows_with_size():
    medians = []
    for n in (32, 64, 128):
        counts = [len(find_double_points(trace_interface(sample_config(n, n, 0.5, seed=s)))) for s in range(200)]
        medians.append(np.median(counts))
    assert medians[0] < medians[1] < medians[2]


def test_no_double_points_means_no_pairs():
    path = trace_interface(sample_config(8, 8, 1.0))
    assert find_intertwined_pairs(path, Region(-2, 1), Region(2, 1)) == []


def test_overlapping_regions_rejected():
    path = trace_interface(sample_config(8, 8, 0.5))
    with pytest.raises(ParameterError):
        find_intertwined_pairs(path, Region(0, 2), Region(1, 2))


def _first_intertwined_state():
    from slelab.pivotal import default_two_regions

    for s in range(100):
        state = LatticeState.sample(64, s)
        pairs = find_intertwined_pairs(state.path, *default_two_regions(state), state.config.colours())
        if pairs:
            return state, pairs[0]
    raise AssertionError("no intertwined pair in 100 samples")


def test_pair_switch_is_an_involution_and_keeps_range_outside():
    state, pair = _first_intertwined_state()
    dom = state.domain
    za, zb = (complex(dom.positions(f)) * dom.scale for f in pair.sites)
    tight = find_intertwined_pairs(state.path, Region(za, 0.5), Region(zb, 0.5), state.config.colours())
    assert len(tight) == 1 and tight[0].intertwined
    new_cfg, new_path = switch_pair(state.config, tight[0])
    rep = compare_switch(state.path, new_path, tight[0].sites)
    assert rep.outside_perimeters_equal and rep.perimeters_complemented and rep.order_changed
    back_cfg, back_path = switch_pair(new_cfg, tight[0])
    assert back_cfg.same_as(state.config)
    assert np.array_equal(back_path.left, state.path.left) and np.array_equal(back_path.right, state.path.right)


def test_loops_cover_every_interface_edge_once():
    cfg = sample_config(24, 24, 0.5, seed=2)
    path = trace_interface(cfg)
    loops = trace_loops(cfg, path)
    keys = set(zip(loops.left.tolist(), loops.right.tolist()))
    assert not keys & set(zip(path.left.tolist(), path.right.tolist()))
    assert len(keys) == len(loops.left)


def test_crossing_degenerate_densities():
    assert crossing_probability(16, p=1.0, n_samples=50).p_hat == 1.0
    assert crossing_probability(16, p=0.0, n_samples=50).p_hat == 0.0


def test_crossing_events_partition_samples():
    est = crossing_probability(32, p=0.5, n_samples=2000, seed=4)
    assert est.open_lr + est.closed_tb == est.n_samples
    assert abs(est.p_hat - 0.5) <= 3 * est.se


def test_hookup_classifiers_agree_on_small_disks():
    disk = hookup_disk(1.0, 10)
    rng = rng_for(5, 1)
    agree = 0
    for _ in range(300):
        cfg = sample_on(disk.domain, 0.5, rng)
        by_walk = classify_hookup_by_exploration(cfg, disk)
        assert by_walk is not None
        agree += by_walk == classify_hookup(cfg, disk)
    assert agree == 300


def test_hookup_backend_is_nondegenerate_at_unit_cross_ratio():
    est = percolation_hookup_backend(1.0, 32, 400, seed=1)
    assert 0.1 < est.p_hat < 0.9
    assert est.disagreements == 0


def test_degenerate_arcs_push_hookup_to_an_extreme():
    est = percolation_hookup_backend(0.02, 32, 300, seed=2)
    assert min(est.p_hat, 1 - est.p_hat) < 0.15


def test_wilson_interval_contains_point_estimate():
    lo, hi = wilson_interval(30, 100)
    assert lo < 0.3 < hi


def test_rle_round_trip(tmp_path):
    cfg = sample_config(12, 9, 0.5, seed=6)
    dump_config_rle(cfg, tmp_path / "c.rle")
    assert load_config_rle(tmp_path / "c.rle", cfg.domain).same_as(cfg)
