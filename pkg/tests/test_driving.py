from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import ks_2samp

from slelab.driving import hitting_time_radius, sample_brownian_driving, sample_sle_kappa_rho
from slelab.errors import ParameterError
from slelab.loewner import DiskEmbedding, LoewnerChain, extract_trace


def test_zero_kappa_is_deterministic_slit():
    assert np.all(sample_brownian_driving(0.0, 1.0, 1e-2, seed=3).w == 0)


def test_variance_matches_kappa():
    finals = np.array([sample_brownian_driving(6.0, 1.0, 0.05, seed=s).w[-1] for s in range(10_000)])
    var = finals.var(ddof=1)
    se = 6.0 * np.sqrt(2 / (len(finals) - 1))
    assert abs(var - 6.0) < 3 * se


def test_same_seed_same_bytes():
    a = sample_sle_kappa_rho(5.0, [(-1.0, 0.0, "right")], 0.5, 1e-3, seed=11)
    b = sample_sle_kappa_rho(5.0, [(-1.0, 0.0, "right")], 0.5, 1e-3, seed=11)
    assert a.w.tobytes() == b.w.tobytes()
    assert a.force_points.tobytes() == b.force_points.tobytes()


def test_empty_force_list_reduces_to_brownian():
    n = 10_000
    plain = [sample_brownian_driving(3.0, 1.0, 0.05, seed=s).w[-1] for s in range(n)]
    reduced = [sample_sle_kappa_rho(3.0, [], 1.0, 0.05, seed=n + s).w[-1] for s in range(n)]
    assert ks_2samp(plain, reduced).pvalue > 0.01


def test_kappa_six_with_zero_weight_is_plain_driving():
    drv = sample_sle_kappa_rho(6.0, [(0.0, 0.0, "right")], 1.0, 1e-3, seed=5)
    inc = np.diff(drv.w)
    assert abs(inc.var() / 1e-3 - 6.0) < 0.5
    assert drv.sides_preserved()


def test_force_point_stays_on_its_side():
    ok = sum(sample_sle_kappa_rho(5.0, [(-1.0, 0.0, "right")], 0.2, 1e-3, seed=s).sides_preserved()
             for s in range(1000))
    assert ok == 1000


def test_force_point_weight_floor():
    with pytest.raises(ParameterError):
        sample_sle_kappa_rho(4.0, [(-2.0, 0.0, "left")], 1.0, 1e-3, seed=0)


def test_hitting_time_radius_vertical_slit():
    dt = 1e-5
    n = 5000
    tr = extract_trace(LoewnerChain.from_arrays(np.full(n, dt), np.zeros(n)))
    emb = DiskEmbedding.cayley()
    assert hitting_time_radius(tr, emb, 1.0) == 0.0
    # the slit 0 -> 2i sqrt(t) is the radius [0, 1] of the disk; radius r sits at height (1-r)/(1+r)
    h = (1 - 0.5) / (1 + 0.5)
    exact = h * h / 4
    assert abs(hitting_time_radius(tr, emb, 0.5) - exact) <= 2 * dt
