"""Exploration branches, the four-strand configuration, hookup detection and loop ensembles."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.special import gamma as gamma_fn
from scipy.special import hyp2f1

from .conformal import (HALF_PLANE, BoundaryQuad, CrossRatio, cross_ratio, in_T, quad_with_cross_ratio)
from .driving import LEFT, RIGHT, _bessel_update, sample_sle_kappa_rho
from .errors import ParameterError, TopologyError
from .loewner import DiskEmbedding, Trace, _upper_sqrt, extract_trace
from .percolation import wilson_interval
from .seeding import derive_seed
from .uniformize import PolygonUniformizer, points_in_polygon, signed_area

E1 = "E1"
E2 = "E2"
UNRESOLVED = "unresolved"
PAIRINGS = {E1: ((1, 4), (2, 3)), E2: ((1, 2), (3, 4))}

# strands are grown in this order (0-based indices of gamma_1..gamma_4)
GROWTH_ORDER = (0, 3, 1, 2)
# force point side of each strand's SLE_k'(k'-6) law
STRAND_SIDES = (LEFT, RIGHT, LEFT, RIGHT)
# gamma_1 and gamma_4 head for each other's tips; gamma_2 closes onto gamma_1 and gamma_3 onto gamma_4
STRAND_TARGETS = (3, 0, 3, 0)
# strands carrying the kappa' - 6 force point; gamma_2 and gamma_3 are plain SLE_kappa'
BRANCH_STRANDS = (0, 3)
FOUR_STRAND_POLE = 5 * np.pi / 4


def _check_kappa_prime(kappa_prime: float) -> None:
    if not 4 < kappa_prime < 8:
        raise ParameterError(f"kappa' must lie in (4, 8), got {kappa_prime}")


def chordal_embedding(root: complex, target: complex) -> DiskEmbedding:
    """Disk to half-plane map with ``root -> 0`` and ``target -> inf``."""
    base = DiskEmbedding.cayley(pole_angle=float(np.angle(target)), marked_root=root)
    shift = complex(base.to_half_plane(root)).real
    a, b, c, d = base.mobius
    return DiskEmbedding((a - shift * c, b - shift * d, c, d), root)


def cardy_crossing(x: float) -> float:
    """Crossing probability of a conformal quad whose normalised boundary point sits at ``x``."""
    x = float(x)
    return float(3 * gamma_fn(2 / 3) / gamma_fn(1 / 3) ** 2 * x ** (1 / 3) * hyp2f1(1 / 3, 2 / 3, 4 / 3, x))


def sample_cle_branch(kappa_prime: float, embedding: DiskEmbedding | None = None, root: complex = -1j,
                      target: complex = 1j, dt: float = 1e-3, horizon: float = 1.0, seed: int = 0,
                      stride: int = 1) -> Trace:
    """SLE_k'(k'-6) branch from ``root`` toward ``target`` in the unit disk."""
    _check_kappa_prime(kappa_prime)
    emb = embedding or chordal_embedding(root, target)
    path = sample_sle_kappa_rho(kappa_prime, [(kappa_prime - 6.0, 0.0, "left")], horizon, dt, seed)
    tr = extract_trace(path.to_chain(), stride)
    return Trace(emb.to_disk(tr.points), tr.times)


# ---------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True)
def _flow_real(x, w, dt):
    d = x - w
    s = np.sqrt(d * d + 4.0 * dt)
    return w + s if d >= 0 else w - s


@nb.njit(cache=True)
def _flow_complex(z, w, dt):
    d = z - w
    return w + _upper_sqrt(d * d + 4.0 * dt, d)


@nb.njit(cache=True)
def _driving_step(kappa, rho, side, w, v, dt):
    """One step of W and its force point V after a slit at ``w``; returns (W, V)."""
    sk = np.sqrt(kappa)
    y = side * (v - w)
    eps_col = 10.0 * np.sqrt(kappa * dt)
    db = np.random.normal() * np.sqrt(dt)
    if rho == 0.0:
        return w + sk * db, _flow_real(v, w, dt) if y > 0 else w + side * 2.0 * np.sqrt(dt)
    if y >= eps_col:
        wn = w + sk * db - side * rho * dt / y
        vn = _flow_real(v, w, dt)
        if side * (vn - wn) >= 0.0:
            return wn, vn
    yn = _bessel_update(y, kappa, dt, rho)
    integral = min(2.0 * dt / (y + yn) if y + yn > 0 else dt / eps_col, dt / eps_col)
    wn = w + sk * db - side * rho * integral
    return wn, wn + side * yn


@nb.njit(cache=True)
def _grow_kernel(kappa, rho, side, w, v, dt, nsteps, seed, reals, skip_a, skip_b, tips_mask, origin,
                 ws_out, dts_out, offset, merge_tol):
    """Grow one strand for ``nsteps`` slit steps in the current uniformised domain.

    ``reals`` holds every tracked real point (tips and force points); the growing
    strand's own entries ``skip_a``/``skip_b`` are handled through ``w``/``v``.
    Returns (steps done, status, w, v): status 0 ok, 1 another tip merged, 2 origin cut off.
    """
    np.random.seed(seed)
    for k in range(nsteps):
        ws_out[offset + k] = w
        dts_out[offset + k] = dt
        for i in range(reals.shape[0]):
            if i != skip_a and i != skip_b:
                reals[i] = _flow_real(reals[i], w, dt)
        origin[0] = _flow_complex(origin[0], w, dt)
        w, v = _driving_step(kappa, rho, side, w, v, dt)
        if origin[0].imag < 0.05 * np.sqrt(dt):
            return k + 1, 2, w, v
        for i in range(reals.shape[0]):
            if tips_mask[i] and i != skip_a and abs(reals[i] - w) < merge_tol:
                return k + 1, 1, w, v
    return nsteps, 0, w, v


@nb.njit(cache=True)
def _strand_points(dts, ws, idx, seg_starts, mobius, out):
    """Frame-0 half-plane curve points after ``idx[p]`` slit steps (each >= 1).

    Steps from ``seg_starts[m]`` on are driven in frame ``m``, reached from frame
    ``m - 1`` by the real Möbius map with coefficients ``mobius[m]``.
    """
    for p in range(idx.shape[0]):
        s = idx[p] - 1
        z = complex(ws[s], 0.0)
        m = seg_starts.shape[0] - 1
        while seg_starts[m] > s:
            m -= 1
        for k in range(s, -1, -1):
            d = z - ws[k]
            z = ws[k] + _upper_sqrt(d * d - 4.0 * dts[k], d)
            while m > 0 and k == seg_starts[m]:
                a, b, c, e = mobius[m, 0], mobius[m, 1], mobius[m, 2], mobius[m, 3]
                z = (e * z - b) / (-c * z + a)
                m -= 1
        out[p] = z


@nb.njit(cache=True)
def _continue_kernel(kappa, rho, side, w, v, p2, p3, frac, max_steps, seed, tol):
    """Grow the first strand until the pairing is decided.

    Tracks ``Z = (p2 - W) / (p3 - W)``: ``Z -> 0`` means only ``p2`` is cut off
    (pairing with the second strand), ``Z -> 1`` means ``p2`` and ``p3`` go together.
    Positions are kept relative to ``W`` and rescaled so that ``p2 - W = 1`` before
    every step (absolute coordinates lose all precision once ``p2 - W`` is tiny).
    The gaps to ``p2`` and ``p3`` are advanced in log coordinates so that a single
    large increment cannot jump across a marked point; a linear step at step size
    ``frac`` noticeably biases the outcome towards ``p2`` being swallowed first.
    Returns (event code 1/2 or 0 if unresolved, steps, final Z).
    """
    np.random.seed(seed)
    sk = np.sqrt(kappa)
    h = frac
    eps_col = 10.0 * np.sqrt(kappa * h)
    a0 = p2 - w
    b = (p3 - w) / a0
    y = side * (v - w) / a0  # distance to the force point, >= 0
    z = 1.0 / b
    for k in range(max_steps):
        db = np.random.normal() * np.sqrt(h)
        push = 0.0  # integral of 1 / y over the step
        if rho != 0.0:
            if y >= eps_col:
                yn = y + (rho + 2.0) * h / y - side * sk * db
                push = h / y
                if yn <= 0.0:
                    yn = _bessel_update(y, kappa, h, rho)
                    push = min(2.0 * h / (y + yn) if y + yn > 0 else h / eps_col, h / eps_col)
            else:
                yn = _bessel_update(y, kappa, h, rho)
                push = min(2.0 * h / (y + yn) if y + yn > 0 else h / eps_col, h / eps_col)
        else:
            yn = np.sqrt(y * y + 4.0 * h)
        # W gains -side * rho * push; the gaps p - W gain the opposite
        drift = side * rho * push
        log_a = (2.0 - 0.5 * kappa) * h + drift - sk * db
        log_b = np.log(b) + ((2.0 / b) / b - 0.5 * kappa / (b * b)) * h + drift / b - sk * db / b
        z = np.exp(log_a - log_b)
        if z < tol:
            return 2, k + 1, z
        if z > 1.0 - tol:
            return 1, k + 1, z
        a = np.exp(log_a)
        b = 1.0 / z
        y = yn / a
    return 0, max_steps, z


# ---------------------------------------------------------------------------
# four strands


@dataclass
class _StrandState:
    """Half-plane bookkeeping for the sequential growth of four strands.

    Each strand is driven in its own frame, in which its target point sits at
    infinity.  Frame changes are real Möbius maps recorded with the step index at
    which they take effect.
    """

    kappa: float
    embedding: DiskEmbedding
    reals: np.ndarray  # tips 0..3 then force points 4..7, in the current frame
    origin: np.ndarray
    ws: np.ndarray
    dts: np.ndarray
    owner: np.ndarray
    n: int = 0
    seg_starts: list = field(default_factory=lambda: [0])
    mobius: list = field(default_factory=lambda: [(1.0, 0.0, 0.0, 1.0)])
    target: int = -1

    def rho_for(self, j: int) -> float:
        return self.kappa - 6.0 if j in BRANCH_STRANDS else 0.0

    def tips(self) -> np.ndarray:
        return self.reals[:4].copy()

    def ensure(self, extra: int) -> None:
        need = self.n + extra
        if need > self.ws.shape[0]:
            size = max(need, 2 * self.ws.shape[0])
            for name in ("ws", "dts", "owner"):
                arr = getattr(self, name)
                new = np.zeros(size, dtype=arr.dtype)
                new[:self.n] = arr[:self.n]
                setattr(self, name, new)

    def retarget(self, i: int) -> None:
        """Change frame so that tracked point ``i`` sits at infinity."""
        if self.target == i and np.isinf(self.reals[i]):
            return
        t = float(self.reals[i])
        if np.isinf(t):
            self.target = i
            return
        # x -> -1 / (x - t) sends the target to infinity; the affine rescaling after it
        # puts the origin at i so that step sizes mean the same in every frame
        o = -1.0 / (self.origin[0] - t)
        alpha, beta = o.real, o.imag
        coeffs = (-alpha, alpha * t - 1.0, beta, -beta * t)
        with np.errstate(divide="ignore"):
            self.reals[:] = np.where(self.reals == t, np.inf, (-1.0 / (self.reals - t) - alpha) / beta)
        self.reals[i] = np.inf
        self.origin[0] = 1j
        if self.seg_starts[-1] == self.n and len(self.seg_starts) > 1:
            a, b, c, d = self.mobius[-1]
            p, q, r, u = coeffs
            self.mobius[-1] = (p * a + q * c, p * b + q * d, r * a + u * c, r * b + u * d)
        else:
            self.seg_starts.append(self.n)
            self.mobius.append(coeffs)
        self.target = i

    def snapshot(self):
        return self.reals.copy(), self.origin.copy(), self.n

    def restore(self, snap) -> None:
        self.reals[:], self.origin[:], self.n = snap[0], snap[1], snap[2]

    def grow(self, j: int, nsteps: int, dt: float, seed: int, merge_tol: float) -> tuple[int, int]:
        self.retarget(STRAND_TARGETS[j])
        self.ensure(nsteps)
        mask = np.zeros(8, dtype=np.bool_)
        mask[:4] = True
        done, status, w, v = _grow_kernel(self.kappa, self.rho_for(j), STRAND_SIDES[j], self.reals[j],
                                          self.reals[4 + j], dt, nsteps, seed, self.reals, j, 4 + j, mask,
                                          self.origin, self.ws, self.dts, self.n, merge_tol)
        self.owner[self.n:self.n + done] = j
        self.n += done
        self.reals[j] = w
        self.reals[4 + j] = v
        return done, status

    def points_after(self, steps: np.ndarray) -> np.ndarray:
        out = np.empty(steps.shape[0], dtype=complex)
        if steps.size:
            _strand_points(self.dts[:self.n], self.ws[:self.n], np.ascontiguousarray(steps + 1, dtype=np.int64),
                           np.asarray(self.seg_starts, dtype=np.int64), np.asarray(self.mobius, dtype=float), out)
        return out

    def tip_point(self, j: int, base: complex) -> complex:
        """Frame-0 position of the tip of strand ``j`` (``base`` if it never grew)."""
        steps = np.flatnonzero(self.owner[:self.n] == j)
        if steps.size == 0:
            return base
        return complex(self.points_after(steps[-1:])[0])

    def strand_trace(self, j: int, base: complex, stride: int = 1) -> Trace:
        steps = np.flatnonzero(self.owner[:self.n] == j)
        if stride > 1 and steps.size:
            steps = np.unique(np.append(steps[::stride], steps[-1]))
        pts = self.points_after(steps)
        cum = np.concatenate([[0.0], np.cumsum(self.dts[:self.n])])
        times = np.concatenate([[0.0], cum[steps + 1]])
        return Trace(self.embedding.to_disk(np.concatenate([[base], pts])), times)

    def cross_ratio(self) -> float:
        return cross_ratio(BoundaryQuad(tuple(self.reals[:4]), HALF_PLANE)).c


def _initial_state(kappa: float, quad: Sequence[complex], capacity: int = 4096) -> tuple[_StrandState, np.ndarray]:
    emb = DiskEmbedding.cayley(pole_angle=FOUR_STRAND_POLE)
    xs = np.asarray(emb.to_half_plane(np.asarray(quad, dtype=complex))).real.astype(float)
    if not np.all(np.diff(xs) > 0):
        raise ParameterError("quad points must be in counterclockwise order starting near -i")
    reals = np.concatenate([xs, xs])
    origin = np.array([complex(emb.to_half_plane(0j))])
    st = _StrandState(kappa, emb, reals, origin, np.zeros(capacity), np.zeros(capacity),
                      np.zeros(capacity, dtype=np.int64))
    return st, xs


@dataclass
class FourStrandConfiguration:
    quad: tuple
    strands: list
    stop_radius: float
    tips: tuple
    c: CrossRatio | None
    reached_U: bool
    kappa_prime: float
    state: _StrandState = field(repr=False, default=None)
    merge_tolerance: float = 0.0
    hit_steps: tuple = ()


def sample_four_strands(kappa_prime: float, quad: Sequence[complex], r: float, dt: float = 1e-3, seed: int = 0,
                        max_steps: int = 20_000, check_every: int = 10, stride: int = 1,
                        require_T: bool = True) -> FourStrandConfiguration:
    """Grow gamma_1, gamma_4, gamma_2, gamma_3 in turn until each tip reaches the circle of radius ``r``.

    Each strand is grown in the uniformised image of what the previous strands left.
    A strand that cuts off another tip or the origin before reaching radius ``r``
    leaves ``reached_U`` false.
    """
    _check_kappa_prime(kappa_prime)
    quad = tuple(complex(z) for z in quad)
    if require_T and not in_T(quad):
        raise ParameterError("quad must lie within 1/100 of (-i, 1, i, -1)")
    if not 0 < r <= 1:
        raise ParameterError("stop radius must lie in (0, 1]")
    st, xs = _initial_state(kappa_prime, quad)
    merge_tol = 0.5 * np.sqrt(kappa_prime * dt)
    reached = True
    hits = []
    if r < 1:
        for j in GROWTH_ORDER:
            chunk_idx = 0
            hit = False
            used = 0
            tgt = STRAND_TARGETS[j]
            target_tip = complex(st.embedding.to_disk(st.tip_point(tgt, complex(xs[tgt], 0.0))))
            while used < max_steps and not hit:
                snap = st.snapshot()
                sd = derive_seed(seed, 31, j, chunk_idx) % (2**32)
                done, status = st.grow(j, check_every, dt, sd, merge_tol)
                used += done
                steps = np.arange(st.n - done, st.n)
                pts = st.points_after(steps)
                disk_pts = st.embedding.to_disk(pts)
                rad = np.abs(disk_pts)
                inside = np.flatnonzero(rad <= r)
                if inside.size and (status == 0 or inside[0] < done - 1):
                    m = int(inside[0]) + 1
                    st.restore(snap)
                    st.grow(j, m, dt, sd, merge_tol)
                    hit = True
                    hits.append(st.n)
                    break
                if status != 0 or np.min(np.abs(disk_pts - target_tip)) < merge_tol:
                    # cut off the origin, or closed up with a tip before reaching radius r
                    break
                chunk_idx += 1
            if not hit:
                reached = False
                break
    tips_h = [st.tip_point(j, complex(xs[j], 0.0)) for j in range(4)]
    tips = tuple(complex(z) for z in st.embedding.to_disk(np.array(tips_h)))
    strands = [st.strand_trace(j, complex(xs[j], 0.0), stride) for j in range(4)]
    c = None
    if reached:
        try:
            c = CrossRatio(st.cross_ratio())
        except (ParameterError, TopologyError):
            reached = False
    steps_len = [np.mean(np.abs(np.diff(s.points))) for s in strands if len(s.points) > 1]
    tol = 5.0 * float(np.mean(steps_len)) if steps_len else 5.0 * 2.0 * np.sqrt(dt)
    return FourStrandConfiguration(quad, strands, float(r), tips, c, reached, float(kappa_prime), st, tol,
                                   tuple(hits))


@dataclass(frozen=True)
class HookupSample:
    event: str
    c_at_stop: float | None
    kappa_prime: float
    backend: str = "sle_numeric"
    seed: int | None = None
    pairing: tuple | None = None
    steps: int = 0

    def to_json(self) -> str:
        return json.dumps({"kappa_prime": self.kappa_prime, "c": self.c_at_stop, "event": self.event,
                           "backend": self.backend, "seed": self.seed}, sort_keys=True)


def _classify_code(code: int) -> str:
    return {1: E1, 2: E2}.get(code, UNRESOLVED)


def continue_from_tips(kappa_prime: float, tips: Sequence[float], force_point: float, seed: int,
                       step_fraction: float = 2e-3, max_steps: int = 10_000_000,
                       tol: float = 1e-9) -> tuple[str, int]:
    """Resolve the pairing by growing gamma_1 from half-plane tip positions ``tips``.

    The branch law is target invariant, so the fourth tip is first moved to infinity
    by the real Möbius map ``x -> 1 / (p4 - x)``; the tips may be given in any
    frame where they are in counterclockwise cyclic order.  Then gamma_1 closes up with
    gamma_2 exactly when it hits ``(p2, p3)`` before ``(p3, inf)``.  Each step has
    capacity ``step_fraction * (p2 - W)^2``; at ``2e-3`` the discretisation bias of
    the pairing frequency is below 0.005 for kappa' = 6.
    """
    p = np.asarray(tips, dtype=float)
    if not 0 < step_fraction < 0.1:
        raise ParameterError("step_fraction must lie in (0, 0.1)")
    if np.isinf(p[3]):
        to_inf = lambda x: x  # noqa: E731
    else:
        to_inf = lambda x: 1.0 / (p[3] - x)  # noqa: E731
    with np.errstate(divide="ignore"):
        p1, p2, p3 = to_inf(p[0]), to_inf(p[1]), to_inf(p[2])
        # points on the arc from p4 to p1 land on the negative side of p1
        v = min(to_inf(force_point), p1) if force_point != p[3] else p1
    if not (np.isfinite([p1, p2, p3]).all() and p1 < p2 < p3):
        raise TopologyError("tips are not in counterclockwise order")
    code, steps, _ = _continue_kernel(float(kappa_prime), float(kappa_prime - 6.0), STRAND_SIDES[0], p1,
                                      float(v), p2, p3, float(step_fraction), int(max_steps),
                                      derive_seed(seed, 41) % (2**32), tol)
    return _classify_code(int(code)), int(steps)


def detect_hookup(config: FourStrandConfiguration, seed: int = 0, step_fraction: float = 2e-3,
                  max_steps: int = 10_000_000) -> HookupSample:
    """Continue gamma_1 until it closes up with gamma_2 or gamma_4 and report the pairing."""
    if not config.reached_U:
        raise ParameterError("hookup is defined only when all four strands reached the stop radius")
    z = config.tips
    c = config.c.c if config.c is not None else None
    d12, d14 = abs(z[0] - z[1]), abs(z[0] - z[3])
    if min(d12, d14) < config.merge_tolerance:
        ev = E2 if d12 <= d14 else E1
        return HookupSample(ev, c, config.kappa_prime, seed=seed, pairing=PAIRINGS[ev])
    st = config.state
    ev, steps = continue_from_tips(config.kappa_prime, st.reals[:4], st.reals[4], seed, step_fraction, max_steps)
    pairing = PAIRINGS.get(ev)
    if pairing is not None and ((1, 3) in pairing or (2, 4) in pairing):
        raise AssertionError("opposite strands can never be paired")
    return HookupSample(ev, c, config.kappa_prime, seed=seed, pairing=pairing, steps=steps)


@dataclass(frozen=True)
class FKappaEstimate:
    p_hat: float
    ci: tuple[float, float]
    n_resolved: int
    n_unresolved: int
    n_not_reached: int
    low_confidence: bool
    c_target: float
    kappa_prime: float
    samples: tuple = ()


def _grow_until_cross(kappa_prime, quad, c_target, dt, seed, chunk=5, max_rounds=4000):
    st, _ = _initial_state(kappa_prime, quad)
    c0 = st.cross_ratio()
    if c0 == c_target:
        return st, c0
    sign = np.sign(c0 - c_target)
    merge_tol = 0.5 * np.sqrt(kappa_prime * dt)
    for rnd in range(max_rounds):
        for j in GROWTH_ORDER:
            _, status = st.grow(j, chunk, dt, derive_seed(seed, 33, rnd, j) % (2**32), merge_tol)
            if status != 0:
                return None, None
            try:
                c = st.cross_ratio()
            except (ParameterError, TopologyError):
                return None, None
            if np.sign(c - c_target) != sign:
                return st, c
    return None, None


def estimate_fkappa(kappa_prime: float, c_target: float, n_samples: int, dt: float = 1e-3, seed: int = 0,
                    start: str = "target", quad: Sequence[complex] | None = None,
                    step_fraction: float = 2e-3, max_steps: int = 10_000_000) -> FKappaEstimate:
    """Frequency of the one-loop pairing once the configuration cross-ratio equals ``c_target``.

    ``start="target"`` begins from a boundary quad whose cross-ratio already equals
    the target (so the stop happens at time zero); ``start="grow"`` begins from
    ``quad`` (default ``(-i, 1, i, -1)``) and grows the strands round-robin until
    the running cross-ratio crosses the target.  Samples that hook up before the
    crossing count as not reached; samples undecided at the step limit count as
    unresolved.  Both are excluded from the estimate.
    """
    _check_kappa_prime(kappa_prime)
    if not c_target > 0:
        raise ParameterError("target cross-ratio must be positive")
    ones = resolved = unresolved = not_reached = 0
    samples = []
    for s in range(n_samples):
        sample_seed = derive_seed(seed, 50, s)
        if start == "target":
            q = quad if quad is not None else quad_with_cross_ratio(c_target)
            st, _ = _initial_state(kappa_prime, q)
            c_stop = st.cross_ratio()
        elif start == "grow":
            st, c_stop = _grow_until_cross(kappa_prime, quad or quad_with_cross_ratio(1.0), c_target, dt,
                                           sample_seed)
            if st is None:
                not_reached += 1
                samples.append(HookupSample(UNRESOLVED, None, kappa_prime, seed=sample_seed))
                continue
        else:
            raise ParameterError(f"unknown start mode {start!r}")
        ev, steps = continue_from_tips(kappa_prime, st.reals[:4], st.reals[4], sample_seed, step_fraction, max_steps)
        samples.append(HookupSample(ev, float(c_stop), kappa_prime, seed=sample_seed, pairing=PAIRINGS.get(ev),
                                    steps=steps))
        if ev == UNRESOLVED:
            unresolved += 1
        else:
            resolved += 1
            ones += ev == E1
    p_hat = ones / resolved if resolved else float("nan")
    return FKappaEstimate(p_hat, wilson_interval(ones, resolved), resolved, unresolved, not_reached,
                          resolved < 100, float(c_target), float(kappa_prime), tuple(samples))


def write_hookup_jsonl(samples: Sequence[HookupSample], path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(s.to_json() + "\n")


# ---------------------------------------------------------------------------
# boundary-touching loops of a single branch


BCLE_SIMPLE = (2.0, 4.0)
BCLE_NONSIMPLE = (4.0, 8.0)


def bcle_window(kappa: float) -> tuple[float, float]:
    """Admissible force-point weights for BCLE with this kappa."""
    if BCLE_SIMPLE[0] < kappa < BCLE_SIMPLE[1]:
        return -2.0, kappa - 4.0
    if BCLE_NONSIMPLE[0] < kappa < BCLE_NONSIMPLE[1]:
        return kappa / 2 - 4.0, kappa / 2 - 2.0
    raise ParameterError(f"kappa={kappa} is outside (2, 4) and (4, 8)")


def validate_bcle(kappa: float, rho: float) -> None:
    lo, hi = bcle_window(kappa)
    if not lo < rho < hi:
        raise ParameterError(f"rho={rho} outside the admissible window ({lo:g}, {hi:g}) for kappa={kappa}")


@dataclass(frozen=True)
class LoopRecord:
    points: np.ndarray  # closed polyline
    clockwise: bool
    start_step: int
    end_step: int

    @property
    def diameter(self) -> float:
        return polyline_diameter(self.points)


def polyline_diameter(pts: np.ndarray) -> float:
    pts = np.asarray(pts, dtype=complex)
    if pts.size < 2:
        return 0.0
    xy = np.column_stack([pts.real, pts.imag])
    try:
        hull = xy[ConvexHull(xy).vertices]
    except (QhullError, ValueError):
        hull = xy
    d = hull[:, None, :] - hull[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


def _contact_runs(gap: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    touch = gap <= threshold
    runs = []
    k = 0
    n = touch.shape[0]
    while k < n:
        if touch[k]:
            s = k
            while k < n and touch[k]:
                k += 1
            runs.append((s, k - 1))
        else:
            k += 1
    return runs


def _passive_force_point(ws: np.ndarray, dt: float, side: int) -> np.ndarray:
    """Real point started at the driving value and carried by the flow, kept on ``side``."""
    v = np.empty_like(ws)
    v[0] = ws[0]
    for k in range(ws.shape[0] - 1):
        x = _flow_real(v[k], ws[k], dt) if side * (v[k] - ws[k]) > 0 else ws[k] + side * 2.0 * np.sqrt(dt)
        if side * (x - ws[k + 1]) < 0:
            x = ws[k + 1]
        v[k + 1] = x
    return v


def excursion_loops(points: np.ndarray, gap: np.ndarray, threshold: float, clockwise: bool,
                    to_disk=None) -> list[LoopRecord]:
    """Closed polylines of the half-plane trace between consecutive contacts with one side.

    Each excursion is closed through the real segment between its contact points,
    projected vertically, and then carried to the disk by ``to_disk`` if given.  A
    clockwise (right-side) excursion must land to the right of where it left and a
    counterclockwise one to the left; excursions violating this are discretisation
    artefacts and are dropped.
    """
    runs = _contact_runs(gap, threshold)
    out = []
    for (s0, e0), (s1, _) in zip(runs, runs[1:]):
        if s1 - e0 < 3:
            continue
        seg = np.asarray(points[e0:s1 + 1], dtype=complex)
        a, b = float(seg[0].real), float(seg[-1].real)
        if (b > a) != clockwise or a == b:
            continue
        base = np.linspace(b, a, 16)[1:-1] + 0j
        poly = np.concatenate([[complex(a, 0.0)], seg, [complex(b, 0.0)], base, [complex(a, 0.0)]])
        if to_disk is not None:
            poly = np.asarray(to_disk(poly), dtype=complex)
        out.append(LoopRecord(poly, clockwise, e0, s1))
    return out


@dataclass(frozen=True)
class BCLESample:
    loops: list
    false_loops: list
    trace: Trace
    kappa: float
    rho: float


def sample_bcle(kappa: float, rho: float, embedding: DiskEmbedding | None = None, root: complex = -1j,
                epsilon_truncation: float = 0.05, dt: float = 1e-3, seed: int = 0, horizon: float = 2.0,
                target: complex = 1j, in_half_plane: bool = False) -> BCLESample:
    """Boundary-touching loops traced by one SLE_k(rho; k - 6 - rho) branch.

    Excursions between successive contacts with the right force point close
    clockwise loops; those between contacts with the left one are the false loops.
    Only loops of diameter at least ``epsilon_truncation`` are kept.
    """
    validate_bcle(kappa, rho)
    if not epsilon_truncation > 0:
        raise ParameterError("truncation scale must be positive")
    right_w, left_w = float(rho), float(kappa - 6.0 - rho)
    weights = [(w, 0.0, s) for w, s in ((right_w, "right"), (left_w, "left")) if w != 0.0]
    if not weights:
        weights = [(0.0, 0.0, "left")]
    path = sample_sle_kappa_rho(kappa, weights, horizon, dt, seed)
    ws = path.w
    chain = path.to_chain()
    tr = extract_trace(chain, 1)
    pts_h = tr.points
    vr = _passive_force_point(ws, dt, RIGHT)
    vl = _passive_force_point(ws, dt, LEFT)
    for row, side in zip(path.force_points, path.sides):
        if side == RIGHT:
            vr = row
        else:
            vl = row
    thr = np.sqrt(kappa * dt)
    emb = None if in_half_plane else (embedding or chordal_embedding(root, target))
    pts = pts_h if emb is None else emb.to_disk(pts_h)
    carry = None if emb is None else emb.to_disk
    loops = [lp for lp in excursion_loops(pts_h, vr - ws, thr, True, carry) if lp.diameter >= epsilon_truncation]
    false_loops = [lp for lp in excursion_loops(pts_h, ws - vl, thr, False, carry)
                   if lp.diameter >= epsilon_truncation]
    return BCLESample(loops, false_loops, Trace(pts, tr.times), float(kappa), float(rho))


def branch_boundary_loops(kappa_prime: float, epsilon_truncation: float, dt: float, seed: int,
                          horizon: float = 2.0, root: complex = -1j, target: complex = 1j) -> list[LoopRecord]:
    """Clockwise boundary-touching loops of the SLE_k'(k'-6) exploration branch."""
    _check_kappa_prime(kappa_prime)
    path = sample_sle_kappa_rho(kappa_prime, [(kappa_prime - 6.0, 0.0, "left")], horizon, dt, seed)
    tr = extract_trace(path.to_chain(), 1)
    emb = chordal_embedding(root, target)
    vr = _passive_force_point(path.w, dt, RIGHT)
    return [lp for lp in excursion_loops(tr.points, vr - path.w, np.sqrt(kappa_prime * dt), True, emb.to_disk)
            if lp.diameter >= epsilon_truncation]


# ---------------------------------------------------------------------------
# trunk decomposition


@dataclass
class TrunkDecomposition:
    trunk: Trace
    loops: list
    loop_component: list
    components: list
    first_touch: list
    last_touch: list
    eta_order: list
    eta_tilde_order: list
    kappa: float
    skipped_components: int = 0

    def loop_sets_match(self) -> bool:
        return sorted(self.eta_order) == sorted(self.eta_tilde_order) == list(range(len(self.loops)))


def sample_trunk_decomposition(kappa: float, embedding: DiskEmbedding | None = None, x: complex = -1j,
                               y: complex = 1j, epsilon_truncation: float = 0.1, dt: float = 1e-3,
                               seed: int = 0, horizon: float = 2.0, grid: int = 60,
                               loop_horizon: float = 4.0) -> TrunkDecomposition:
    """Trunk SLE_k'(k'-6) with k' = 16/k, plus BCLE_k(-k/2) loops in its right-side components.

    Components of diameter below ``epsilon_truncation`` receive no loops, and components
    whose polygon cannot be uniformized are counted in ``skipped_components``.  The
    order in which the trunk (from x) first meets each loop gives eta; walking
    back from y and sorting by last contact gives eta-tilde.
    """
    if not 8 / 3 < kappa < 4:
        raise ParameterError(f"kappa must lie in (8/3, 4), got {kappa}")
    if not epsilon_truncation > 0:
        raise ParameterError("truncation scale must be positive")
    kp = 16.0 / kappa
    emb = embedding or chordal_embedding(x, y)
    path = sample_sle_kappa_rho(kp, [(kp - 6.0, 0.0, "left")], horizon, dt, derive_seed(seed, 61))
    tr = extract_trace(path.to_chain(), 1)
    pts_h = tr.points
    vr = _passive_force_point(path.w, dt, RIGHT)
    runs = _contact_runs(vr - path.w, np.sqrt(kp * dt))
    trunk_disk = emb.to_disk(pts_h)
    step_len = float(np.mean(np.abs(np.diff(trunk_disk)))) if len(trunk_disk) > 1 else 0.0
    loops, owners, comps = [], [], []
    skipped = 0
    for ci, ((s0, e0), (s1, _)) in enumerate(zip(runs, runs[1:])):
        if s1 - e0 < 3:
            continue
        exc = pts_h[e0:s1 + 1]
        a, b = float(exc[0].real), float(exc[-1].real)
        if not b > a:
            continue
        base = np.linspace(a, b, 64) + 0j
        rest = np.concatenate([[complex(b, 0.0)], exc[::-1][1:-1], [complex(a, 0.0)]])
        # the real segment [a, b] closes the component; its disk image is a boundary arc
        comp_disk = emb.to_disk(np.concatenate([base, rest[1:]]))
        if polyline_diameter(comp_disk) < epsilon_truncation:
            continue
        try:
            uni = PolygonUniformizer(base, rest, grid, keep_largest=True)
        except TopologyError:
            skipped += 1
            continue
        comps.append(comp_disk)
        sub = sample_bcle(kappa, -kappa / 2, epsilon_truncation=1e-12, dt=dt, seed=derive_seed(seed, 62, ci),
                          horizon=loop_horizon, in_half_plane=True)
        for lp in sub.loops:
            img = emb.to_disk(uni.from_half_plane(lp.points))
            if polyline_diameter(img) >= epsilon_truncation:
                loops.append(img)
                owners.append(len(comps) - 1)
    tol = max(5.0 * step_len, 1e-9)
    first, last = [], []
    for img in loops:
        d = np.min(np.abs(trunk_disk[:, None] - img[None, :]), axis=1)
        near = np.flatnonzero(d <= tol)
        if near.size:
            first.append(int(near[0]))
            last.append(int(near[-1]))
        else:
            k = int(np.argmin(d))
            first.append(k)
            last.append(k)
    eta = sorted(range(len(loops)), key=lambda i: (first[i], i))
    eta_t = sorted(range(len(loops)), key=lambda i: (-last[i], i))
    trunk = Trace(trunk_disk, tr.times)
    return TrunkDecomposition(trunk, loops, owners, comps, first, last, eta, eta_t, float(kappa), skipped)


def loop_in_component(loop: np.ndarray, component: np.ndarray, tolerance: float) -> bool:
    """Every loop vertex lies inside the component polygon or within ``tolerance`` of its boundary."""
    inside = points_in_polygon(loop, component)
    if inside.all():
        return True
    out = loop[~inside]
    seg_a = component[:-1][None, :]
    seg_b = component[1:][None, :]
    ab = seg_b - seg_a
    denom = np.where(np.abs(ab) > 0, np.abs(ab) ** 2, 1.0)
    t = np.clip(((out[:, None] - seg_a) * np.conj(ab)).real / denom, 0, 1)
    dist = np.min(np.abs(out[:, None] - (seg_a + t * ab)), axis=1)
    return bool(np.all(dist <= tolerance))


def orientation_matches(loop: LoopRecord) -> bool:
    return (signed_area(loop.points) < 0) == loop.clockwise
