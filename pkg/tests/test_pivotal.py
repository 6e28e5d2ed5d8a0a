from __future__ import annotations

import json

import numpy as np
import pytest

from slelab.conformal import O_QUAD
from slelab.ensembles import sample_four_strands
from slelab.errors import InputError, ParameterError
from slelab.percolation import Region, find_intertwined_pairs
from slelab.pivotal import (
    LatticeState,
    ScaleParameters,
    calibrate,
    check_composite_Ek,
    check_event_U,
    check_separation_F,
    count_pivotals_Nk,
    default_two_regions,
    forced_pivotal_flip,
    gasket_extract,
    hausdorff_distance,
    lattice_event,
    pivot_candidates,
    resample_step,
    run_chain,
    two_region_step,
)

PARAMS = ScaleParameters(N=10, delta0=0.75, beta0=0.63)


@pytest.fixture(scope="module")
def state():
    return LatticeState.sample(64, 3)


def test_scale_parameter_bounds():
    with pytest.raises(ParameterError):
        ScaleParameters(N=9)
    with pytest.raises(ParameterError):
        ScaleParameters(beta0=2.0)


def test_unit_radius_event_returns_the_quad():
    cfg = sample_four_strands(6.0, O_QUAD, 0.5, dt=1e-2, seed=0)
    ok, tips = check_event_U(cfg, 1.0)
    assert ok and tips == tuple(complex(z) for z in O_QUAD)


def test_unreached_configuration_fails_event_and_counts_zero():
    for s in range(20):
        cfg = sample_four_strands(6.0, O_QUAD, 0.5, dt=1e-2, seed=s)
        if not cfg.reached_U:
            assert not check_event_U(cfg, 0.5)[0]
            assert count_pivotals_Nk(cfg, 1, PARAMS) == 0
            assert not check_separation_F(cfg, 0.1)
            return
    pytest.fail("every seed reached radius 1/2")


def test_square_start_is_well_separated():
    cfg = sample_four_strands(6.0, O_QUAD, 1 - 1e-9, dt=1e-6, seed=0)
    assert check_separation_F(cfg, 1.3)
    assert not check_separation_F(cfg, 1.5)
    rec = check_composite_Ek(cfg, 0j, 1, ScaleParameters(delta0=0.5))
    assert rec.passed and rec.tips_at_scale is not None


def test_lattice_event_nesting(state):
    cand = pivot_candidates(state, PARAMS)[::7]
    for u in cand.tolist():
        # lattice arms grow outward from the centre, so the larger radius is the harder event
        far, _ = check_event_U(state, 0.25, u)
        near, _ = check_event_U(state, 0.125, u)
        assert near or not far
        passed = [lattice_event(state, u, k, PARAMS).passed for k in (0, 1, 2, 3)]
        assert passed[0]
        for a, b in zip(passed, passed[1:]):
            assert a or not b


def test_pivotal_count_ignores_enumeration_order(state):
    n = pivot_candidates(state, PARAMS).size
    order = np.random.default_rng(0).permutation(n)
    assert count_pivotals_Nk(state, 1, PARAMS) == count_pivotals_Nk(state, 1, PARAMS, order=order)


def test_failed_event_leaves_state_untouched(state):
    strict = ScaleParameters(N=10, delta0=0.999, beta0=0.63)
    nxt, rec = resample_step(state, 1, strict, seed=1)
    assert nxt is state and not rec.passed


def test_forced_flip_changes_loop_count_by_one():
    changes = []
    for s in range(6):
        out = forced_pivotal_flip(LatticeState.sample(64, s), 1, PARAMS, s)
        if out is not None:
            changes.append(out[1].loop_count_change)
    assert changes and all(abs(c) == 1 for c in changes)


def test_chain_log_lines(tmp_path, state):
    _, recs = run_chain(state, 5, 1, PARAMS, seed=2, log_path=tmp_path / "chain.jsonl")
    lines = (tmp_path / "chain.jsonl").read_text().splitlines()
    assert len(lines) == len(recs) == 5
    keys = set(json.loads(lines[0]))
    assert {"step", "u", "passed", "flipped", "gasket_hausdorff", "loop_count"} <= keys


def test_empty_gasket_is_the_disk():
    g = gasket_extract([], 0.05)
    assert np.array_equal(g.cells, g.domain)
    assert hausdorff_distance(g, g) == 0.0


def test_circle_gasket_matches_analytic_membership():
    theta = np.linspace(0, 2 * np.pi, 4001)
    circle = 0.5 * np.exp(1j * theta)
    circle[-1] = circle[0]
    g = gasket_extract([circle], 0.01)
    m = g.cells.shape[0]
    c = -1 + (np.arange(m) + 0.5) * 0.01
    X, Y = np.meshgrid(c, c, indexing="ij")
    r2 = X * X + Y * Y
    assert np.array_equal(g.cells, (r2 < 1) & (r2 >= 0.25))


def test_open_polyline_rejected():
    with pytest.raises(InputError):
        gasket_extract([np.array([0, 0.5, 0.5j, 0.1 + 0.1j])], 0.1)


def test_hausdorff_metric_axioms():
    rng = np.random.default_rng(4)
    rasters = []
    for _ in range(3):
        centre = complex(*rng.uniform(-0.4, 0.4, 2))
        loop = centre + rng.uniform(0.1, 0.4) * np.exp(1j * np.linspace(0, 2 * np.pi, 200))
        loop[-1] = loop[0]
        rasters.append(gasket_extract([loop], 0.05))
    a, b, c = rasters
    assert hausdorff_distance(a, b) == hausdorff_distance(b, a)
    assert hausdorff_distance(a, c) <= hausdorff_distance(a, b) + hausdorff_distance(b, c) + 1e-12


def _event_a_state():
    for s in range(100):
        st = LatticeState.sample(64, s)
        pairs = find_intertwined_pairs(st.path, *default_two_regions(st), st.config.colours())
        if pairs:
            return st, pairs[0]
    raise AssertionError("no event-A sample in 100 seeds")


def test_two_region_step_without_pivotal_keeps_state():
    st, _ = _event_a_state()
    strict = ScaleParameters(N=10, delta0=0.999, beta0=0.63)
    nxt, rep = two_region_step(st, *default_two_regions(st), 1, strict, seed=0, samples=50)
    assert rep.status == "no_pivotal" and nxt is st


def test_two_region_switch_on_located_instance():
    st, pair = _event_a_state()
    dom = st.domain
    za, zb = (complex(dom.positions(f)) * dom.scale for f in pair.sites)
    nxt, rep = two_region_step(st, Region(za, 0.5), Region(zb, 0.5), 0, PARAMS, seed=0)
    assert rep.status == "switched"
    assert rep.outside_perimeters_equal and rep.order_changed
    back, rep2 = two_region_step(nxt, Region(za, 0.5), Region(zb, 0.5), 0, PARAMS, seed=0)
    assert rep2.status == "switched" and back.same_as(st)


def test_calibration_constants_are_in_range():
    cal = calibrate(n=64, n_pilot=400, seed=0)
    assert 0 < cal.params.delta0 < 1
    assert 0 < cal.params.beta0 < 2
    assert cal.f_frequency >= cal.e_frequency / 8
