"""End-to-end acceptance checks, one test per numbered criterion.

Every test prints a single ``criterion N: PASS|FAIL ...`` line to the terminal
with output capture suspended before asserting, so ``pytest -v`` and
``python tests/test_acceptance.py`` both show the verdicts.  The whole file takes
roughly a quarter of an hour on one core.
"""

from __future__ import annotations

import sys
import time
from functools import lru_cache

import numpy as np
import pytest
from scipy.stats import ks_2samp

from slelab.bichordal import CompactSet, coupling_experiment, coupling_trial
from slelab.cli import main as cli_main
from slelab.conformal import (
    DISK,
    Arc,
    BoundaryQuad,
    DomainHandle,
    cross_ratio,
    harmonic_measure_mc,
    mobius_invariance_check,
    random_disk_automorphism,
    slit_disk_harmonic_exact,
)
from slelab.ensembles import estimate_fkappa
from slelab.loewner import LoewnerChain, concatenate, forward_map, trace_tip
from slelab.percolation import (
    compare_switch,
    crossing_probability,
    find_intertwined_pairs,
    percolation_hookup_backend,
    switch_pair,
)
from slelab.pivotal import (
    LatticeState,
    calibrate,
    count_pivotals_Nk,
    default_two_regions,
    forced_pivotal_flip,
    run_chain,
)
from slelab.seeding import derive_seed

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)

    return emit


@lru_cache(maxsize=1)
def calibrated():
    return calibrate(n=64, n_pilot=400, seed=0)


def test_criterion_01_loewner_closed_form(report):
    t0 = time.perf_counter()
    n = 10_000
    chain = LoewnerChain.from_arrays(np.full(n, 1e-4), np.zeros(n))
    tip_err = abs(trace_tip(chain) - 2j)
    rng = np.random.default_rng(11)
    first = LoewnerChain.from_arrays(rng.uniform(1e-4, 1e-2, 300), rng.normal(0, 0.1, 300))
    second = LoewnerChain.from_arrays(rng.uniform(1e-4, 1e-2, 200), rng.normal(0, 0.1, 200))
    joined = concatenate(first, second)
    exact_sum = joined.capacity_exact == first.capacity_exact + second.capacity_exact
    z = 0.3 + 1.7j
    comp_err = abs(forward_map(joined, z) - forward_map(second, forward_map(first, z)))
    elapsed = time.perf_counter() - t0
    ok = tip_err < 1e-3 and exact_sum and comp_err < 1e-12 and elapsed < 1.0
    report(1, ok, f"|tip-2i|={tip_err:.2e} additivity_exact={exact_sum} composition_err={comp_err:.1e} "
                  f"time={elapsed:.2f}s")
    assert ok


def test_criterion_02_cross_ratio_anchor(report):
    t0 = time.perf_counter()
    quad = BoundaryQuad((-1j, 1, 1j, -1))
    c = cross_ratio(quad).c
    rng = np.random.default_rng(2)
    dev = max(abs(np.subtract(*mobius_invariance_check(quad, random_disk_automorphism(rng)))) for _ in range(1000))
    elapsed = time.perf_counter() - t0
    ok = c == 1.0 and dev < 1e-9 and elapsed < 10
    report(2, ok, f"c={c!r} max_mobius_dev={dev:.1e} over 1000 maps time={elapsed:.2f}s")
    assert ok


def test_criterion_03_harmonic_measure_oracle(report):
    t0 = time.perf_counter()
    quarter = harmonic_measure_mc(DomainHandle(DISK, [], [Arc("q", "circle", 0.0, np.pi / 2)]), 0j, 100_000,
                                  seed=31)
    slit = np.array([1.0, 0.5]) + 0j
    slit_est = harmonic_measure_mc(
        DomainHandle(DISK, [slit], [Arc("s", "polyline", 0.0, 1.0, index=0, side="both")]), 0j, 100_000, seed=32)
    exact = slit_disk_harmonic_exact(0.5)
    pq, sq = quarter.probabilities[0], quarter.standard_errors[0]
    ps, ss = slit_est.probabilities[0], slit_est.standard_errors[0]
    elapsed = time.perf_counter() - t0
    ok = abs(pq - 0.25) <= 3 * sq and abs(ps - exact) <= 3 * ss and elapsed < 60
    report(3, ok, f"quarter={pq:.4f}±{sq:.4f} (0.25) slit={ps:.4f}±{ss:.4f} ({exact:.4f}) time={elapsed:.1f}s")
    assert ok


def test_criterion_04_rhombus_crossing(report):
    t0 = time.perf_counter()
    est = crossing_probability(64, p=0.5, n_samples=100_000, seed=41)
    elapsed = time.perf_counter() - t0
    ok = abs(est.p_hat - 0.5) <= 3 * est.se and elapsed < 120
    report(4, ok, f"p_hat={est.p_hat:.4f} se={est.se:.4f} n=100000 time={elapsed:.1f}s")
    assert ok


def test_criterion_05_pair_switch_exactness(report):
    t0 = time.perf_counter()
    configs = literal = outside = complemented = reordered = involution = 0
    seed = 0
    while configs < 1000 and seed < 20_000:
        st = LatticeState.sample(64, derive_seed(5, seed))
        seed += 1
        A, B = default_two_regions(st)
        pairs = find_intertwined_pairs(st.path, A, B, st.config.colours())
        if not pairs:
            continue
        configs += 1
        new, path = switch_pair(st.config, pairs[0])
        rep = compare_switch(st.path, path, pairs[0].sites)
        back, _ = switch_pair(new, pairs[0])
        literal += rep.multiset_equal
        outside += rep.outside_perimeters_equal
        complemented += rep.perimeters_complemented
        reordered += rep.order_changed
        involution += back.same_as(st.config)
    elapsed = time.perf_counter() - t0
    ok = configs >= 1000 and literal == outside == reordered == involution == configs and elapsed < 300
    report(5, ok, f"configs_with_pairs={configs} (of {seed} sampled) full_multiset_equal={literal} "
                  f"off_perimeter_equal={outside} perimeters_complemented={complemented} "
                  f"order_changed={reordered} involution={involution} time={elapsed:.0f}s")
    assert ok


def test_criterion_06_gasket_preservation(report):
    t0 = time.perf_counter()
    params = calibrated().params
    flips = []
    for k, n_states in ((1, 20), (2, 10)):
        for s in range(n_states):
            out = forced_pivotal_flip(LatticeState.sample(64, derive_seed(6, k, s)), k, params, s)
            if out is not None:
                flips.append((k, out[1]))
    unit_change = sum(abs(r.loop_count_change) == 1 for _, r in flips)
    unchanged = sum(bool(r.gasket_unchanged) for _, r in flips)
    hd = max((r.gasket_hausdorff for _, r in flips), default=float("nan"))
    elapsed = time.perf_counter() - t0
    ok = bool(flips) and unit_change == unchanged == len(flips) and elapsed < 600
    report(6, ok, f"accepted_flips={len(flips)} loop_change_pm1={unit_change} raster_unchanged={unchanged} "
                  f"max_hausdorff={hd:.4f} time={elapsed:.0f}s")
    assert ok


def test_criterion_07_hookup_function_shape(report):
    t0 = time.perf_counter()
    grid = (0.1, 0.3, 1.0, 3.0, 10.0)
    est = {c: estimate_fkappa(6.0, c, 1000, seed=70) for c in grid + (0.05, 20.0)}
    mid = est[1.0]
    monotone = all(est[b].p_hat >= est[a].p_hat or est[b].ci[1] >= est[a].ci[0] for a, b in zip(grid, grid[1:]))
    extremes = {c: min(est[c].p_hat, 1 - est[c].p_hat) for c in (0.05, 20.0)}
    elapsed = time.perf_counter() - t0
    ok = (mid.n_resolved >= 1000 and 0.1 < mid.p_hat < 0.9 and monotone
          and all(v < 0.15 for v in extremes.values()))
    curve = " ".join(f"{c:g}:{est[c].p_hat:.3f}" for c in (0.05,) + grid + (20.0,))
    report(7, ok, f"p_hat(1)={mid.p_hat:.3f} resolved={mid.n_resolved} monotone={monotone} "
                  f"extremes_min(p,1-p)={extremes[0.05]:.3f},{extremes[20.0]:.3f} (<0.15 required) "
                  f"curve=[{curve}] time={elapsed:.0f}s")
    assert ok


def test_criterion_08_backend_cross_validation(report):
    t0 = time.perf_counter()
    sle = estimate_fkappa(6.0, 1.0, 1000, seed=80)
    perc = percolation_hookup_backend(1.0, 64, 1000, seed=81)
    gap = abs(sle.p_hat - perc.p_hat)
    n_total = sle.n_resolved + perc.n_samples
    elapsed = time.perf_counter() - t0
    ok = gap < 0.05 and n_total >= 2000 and perc.disagreements == 0
    report(8, ok, f"sle={sle.p_hat:.3f} perc={perc.p_hat:.3f} gap={gap:.3f} n={n_total} "
                  f"classifier_disagreements={perc.disagreements} time={elapsed:.0f}s")
    assert ok


def test_criterion_09_chain_invariance(report):
    t0 = time.perf_counter()
    params = calibrated().params
    start_loops, start_len, end_loops, end_len = [], [], [], []
    passed = flipped = 0
    for i in range(1000):
        st = LatticeState.sample(64, derive_seed(9, 0, i))
        start_loops.append(st.loop_count())
        start_len.append(st.interface_length())
        chain_start = LatticeState.sample(64, derive_seed(9, 1, i))
        end, recs = run_chain(chain_start, 10, 1, params, derive_seed(9, 2, i))
        end_loops.append(end.loop_count())
        end_len.append(end.interface_length())
        passed += sum(r.passed for r in recs)
        flipped += sum(r.flipped for r in recs)
    p_loops = ks_2samp(start_loops, end_loops).pvalue
    p_len = ks_2samp(start_len, end_len).pvalue
    elapsed = time.perf_counter() - t0
    ok = p_loops > 0.01 and p_len > 0.01 and elapsed < 1800
    report(9, ok, f"ks_p(loop_count)={p_loops:.3f} ks_p(interface_length)={p_len:.3f} "
                  f"event_passes={passed} flips={flipped} over 1000x10 steps time={elapsed:.0f}s")
    assert ok


def test_criterion_10_pivotal_count_scaling(report):
    t0 = time.perf_counter()
    cal = calibrated()
    params = cal.params
    target = 2 - params.beta0
    medians = {}
    for k in (1, 2):
        vals = []
        for s in range(200):
            nk = count_pivotals_Nk(LatticeState.sample(64, derive_seed(10, s)), k, params)
            vals.append(np.log2(nk) / (k * params.N) if nk > 0 else -np.inf)
        medians[k] = float(np.median(vals))
    elapsed = time.perf_counter() - t0
    ok = cal.holdout_ok and all(abs(m - target) <= 0.5 for m in medians.values()) and elapsed < 1800
    report(10, ok, f"2-beta0={target:.3f} (delta0={params.delta0}, beta0={params.beta0:.3f}) "
                   f"median k=1: {medians[1]:.3f} k=2: {medians[2]:.3f} time={elapsed:.0f}s")
    assert ok


def test_criterion_11_bichordal_coupling(report):
    t0 = time.perf_counter()
    K1 = CompactSet("left", (np.array([0.2j, 0.3 + 0.5j, 0.8j]),), 1.0)
    K1_tilde = CompactSet("left", (np.array([0.1j, 0.15 + 0.3j, 0.1 + 0.9j, 0.95j]),), 1.0)
    rho = ((0.0, 0.0), (0.0, 0.0))
    stats = coupling_experiment(K1, K1_tilde, 3.0, rho, 20, 200, seed=110, level=2, stop_at_coalescence=True)
    followed = [coupling_trial(K1, K1_tilde, 3.0, rho, 10, 111, t, level=2) for t in range(4)]
    absorbing = all(t.absorbing_ok for t in followed)
    followed_coalesced = sum(t.coalesced for t in followed)
    elapsed = time.perf_counter() - t0
    ok = stats.coalescence_frequency > 0 and absorbing and followed_coalesced > 0
    report(11, ok, f"coalescence={stats.coalescence_frequency:.3f} over 200 trials "
                   f"both_in_right_half={stats.both_in_Dplus_frequency:.3f} steps={stats.step_histogram()} "
                   f"absorbing={absorbing} ({followed_coalesced}/4 followed trials coalesced) time={elapsed:.0f}s")
    assert ok


SMALL_RUNS = {
    "trace": ["--n", "4", "--T", "0.2", "--dt", "0.01"],
    "hookup": ["--n", "6"],
    "perc": ["crossing", "--n", "16", "--samples", "400", "--block", "100"],
    "pivotal": ["--n", "32", "--chains", "4", "--steps", "3"],
    "tworegion": ["--n", "32", "--samples", "4"],
    "bichordal": ["--trials", "2", "--max-steps", "2", "--level", "2"],
    "calibrate": ["--n", "32", "--n-pilot", "120"],
}


def test_criterion_12_rerun_determinism(tmp_path, report):
    t0 = time.perf_counter()
    mismatched = []
    codes = {}
    for name, args in SMALL_RUNS.items():
        first = tmp_path / f"{name}-1"
        codes[name] = cli_main([name, *args, "--seed", "12", "--workers", "1", "--out", str(first)])
        if codes[name] != 0:
            continue
        second = tmp_path / f"{name}-2"
        rerun = cli_main([name, "--config", str(first / "manifest.json"), "--workers", "2", "--out", str(second)])
        same = rerun == 0 and all((first / f).read_bytes() == (second / f).read_bytes()
                                  for f in ("samples.jsonl", "summary.csv"))
        if not same:
            mismatched.append(name)
    failed = [n for n, c in codes.items() if c != 0]
    elapsed = time.perf_counter() - t0
    ok = not failed and not mismatched
    report(12, ok, f"subcommands={len(SMALL_RUNS)} exit_failures={failed} byte_mismatches={mismatched} "
                   f"time={elapsed:.0f}s")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
