"""Bi-chordal resampling on the rectangle ``D = (0, 1) x (0, ell)``.

A left set contains the left side ``L`` (``x = 0``), a right set contains the
right side ``R`` (``x = 1``).  Sets are kept as a side plus a tuple of polylines
(complex arrays); their dyadic thickenings are sets of half-open grid cells
``[i h, (i+1) h) x [j h, (j+1) h)`` with ``h = 2^-n``, the last row and column
closed.  The kernel ``kernel_phi`` draws, in every complementary component that
meets the opposite side along an interval, one SLE_kappa(rho1; rho2) chord
between the extremities of that interval.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numba as nb
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .ensembles import polyline_diameter, sample_bcle
from .errors import InputError, NumericError, ParameterError, TopologyError
from .loewner import LoewnerChain, extract_trace
from .seeding import derive_seed, rng_for
from .uniformize import PolygonUniformizer

LEFT_SIDE = "left"
RIGHT_SIDE = "right"
_SIDES = (LEFT_SIDE, RIGHT_SIDE)


# ---------------------------------------------------------------------------
# sets


@dataclass(frozen=True)
class CompactSet:
    """Boundary side plus polylines; the set is that side together with the polylines."""

    side: str
    curves: tuple = ()
    ell: float = 1.0
    skipped: tuple = ()

    def __post_init__(self):
        if self.side not in _SIDES:
            raise ParameterError(f"side must be 'left' or 'right', got {self.side!r}")
        if not self.ell > 0:
            raise ParameterError("rectangle height must be positive")
        curves = tuple(np.asarray(c, dtype=complex).ravel() for c in self.curves)
        for c in curves:
            c.setflags(write=False)
        object.__setattr__(self, "curves", curves)

    def equals(self, other: "CompactSet") -> bool:
        return (self.side == other.side and self.ell == other.ell and len(self.curves) == len(other.curves)
                and all(np.array_equal(a, b) for a, b in zip(self.curves, other.curves)))

    def points(self) -> np.ndarray:
        return np.concatenate(self.curves) if self.curves else np.zeros(0, dtype=complex)

    def in_right_half(self) -> bool:
        """Whether the set lies in ``[1/2, 1] x [0, ell]`` (only meaningful for right sets)."""
        pts = self.points()
        return self.side == RIGHT_SIDE and bool(np.all(pts.real >= 0.5))

    def diameter(self) -> float:
        side_x = 0.0 if self.side == LEFT_SIDE else 1.0
        pts = np.concatenate([self.points(), [complex(side_x, 0.0), complex(side_x, self.ell)]])
        return polyline_diameter(pts)


def boundary_set(side: str, ell: float = 1.0) -> CompactSet:
    return CompactSet(side, (), ell)


def reflect(K: CompactSet) -> CompactSet:
    """Mirror image under ``x -> 1 - x``; left and right swap."""
    side = RIGHT_SIDE if K.side == LEFT_SIDE else LEFT_SIDE
    return CompactSet(side, tuple(1.0 - np.conj(c) for c in K.curves), K.ell, K.skipped)


@dataclass(frozen=True)
class CompactSetApprox:
    """Union of level-``n`` grid cells, stored as sorted ``(i, j)`` index pairs."""

    ell: float
    n: int
    squares: frozenset
    side: str

    @property
    def h(self) -> float:
        return 2.0 ** -self.n

    @property
    def shape(self) -> tuple[int, int]:
        return grid_shape(self.n, self.ell)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        if self.squares:
            idx = np.array(sorted(self.squares), dtype=np.int64)
            m[idx[:, 0], idx[:, 1]] = True
        return m

    def sorted_squares(self) -> list[tuple[int, int]]:
        return sorted(self.squares)


def grid_shape(n: int, ell: float) -> tuple[int, int]:
    nx = 2 ** n
    ny = max(1, int(np.ceil(ell * nx - 1e-9)))
    return nx, ny


def _cells_of_points(pts: np.ndarray, h: float, nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    i = np.clip(np.floor(pts.real / h).astype(np.int64), 0, nx - 1)
    j = np.clip(np.floor(pts.imag / h).astype(np.int64), 0, ny - 1)
    return i, j


@nb.njit(cache=True)
def _mark_cell(x, y, h, mask):
    nx, ny = mask.shape
    i = min(max(int(np.floor(x / h)), 0), nx - 1)
    j = min(max(int(np.floor(y / h)), 0), ny - 1)
    mask[i, j] = True


@nb.njit(cache=True)
def _mark_polyline(xs, ys, h, mask):
    """Mark cells met by a polyline by splitting every segment at its grid-line crossings."""
    ts = np.empty(64)
    for k in range(xs.shape[0]):
        _mark_cell(xs[k], ys[k], h, mask)
    for k in range(xs.shape[0] - 1):
        x0, y0, x1, y1 = xs[k], ys[k], xs[k + 1], ys[k + 1]
        n = 0
        ts[n] = 0.0
        n += 1
        for axis in range(2):
            a = x0 if axis == 0 else y0
            b = x1 if axis == 0 else y1
            if b != a:
                lo = min(a, b) / h
                hi = max(a, b) / h
                m = np.ceil(lo)
                while m <= hi:
                    if n == ts.shape[0]:
                        grown = np.empty(2 * n)
                        grown[:n] = ts
                        ts = grown
                    ts[n] = min(max((m * h - a) / (b - a), 0.0), 1.0)
                    n += 1
                    m += 1.0
        if n == ts.shape[0]:
            grown = np.empty(2 * n)
            grown[:n] = ts
            ts = grown
        ts[n] = 1.0
        n += 1
        t = np.sort(ts[:n])
        for q in range(n - 1):
            mid = 0.5 * (t[q] + t[q + 1])
            _mark_cell(x0 + mid * (x1 - x0), y0 + mid * (y1 - y0), h, mask)


def _polyline_cells(line: np.ndarray, h: float, nx: int, ny: int) -> np.ndarray:
    """Cells met by a polyline, as an array of ``(i, j)`` rows."""
    line = np.asarray(line, dtype=complex)
    mask = np.zeros((nx, ny), dtype=np.bool_)
    _mark_polyline(np.ascontiguousarray(line.real), np.ascontiguousarray(line.imag), float(h), mask)
    return np.argwhere(mask)


_EIGHT = np.ones((3, 3), dtype=bool)


def dyadic_thicken(K, n: int) -> CompactSetApprox:
    """Level-``n`` cells meeting ``K`` (a :class:`CompactSet` or a finer :class:`CompactSetApprox`).

    Raises :class:`InputError` when the cells are not connected (corner contact counts).
    """
    if n < 1:
        raise ParameterError("dyadic level must be >= 1")
    nx, ny = grid_shape(n, K.ell)
    h = 2.0 ** -n
    m = np.zeros((nx, ny), dtype=bool)
    m[0 if K.side == LEFT_SIDE else nx - 1, :] = True
    if isinstance(K, CompactSetApprox):
        if K.n < n:
            raise ParameterError("can only coarsen an approximation")
        d = K.n - n
        for i, j in K.squares:
            m[min(i >> d, nx - 1), min(j >> d, ny - 1)] = True
    else:
        for c in K.curves:
            if c.size:
                cells = _polyline_cells(c, h, nx, ny)
                m[cells[:, 0], cells[:, 1]] = True
    _, count = ndimage.label(m, structure=_EIGHT)
    if count != 1:
        raise InputError(f"set is not connected at level {n} ({count} pieces)")
    ii, jj = np.nonzero(m)
    return CompactSetApprox(float(K.ell), int(n), frozenset(zip(ii.tolist(), jj.tolist())), K.side)


def dump_set(approx: CompactSetApprox, path) -> None:
    """Header line with ``n``, ``ell`` and ``side`` followed by one ``i j`` line per cell."""
    with open(Path(path), "w") as fh:
        fh.write(json.dumps({"n": approx.n, "ell": approx.ell, "side": approx.side}) + "\n")
        for i, j in approx.sorted_squares():
            fh.write(f"{i} {j}\n")


def load_set(path) -> CompactSetApprox:
    with open(Path(path)) as fh:
        head = json.loads(fh.readline())
        cells = [tuple(int(v) for v in line.split()) for line in fh if line.strip()]
    return CompactSetApprox(float(head["ell"]), int(head["n"]), frozenset(cells), head["side"])


# ---------------------------------------------------------------------------
# complementary components


def cell_boundary_cycle(mask: np.ndarray) -> np.ndarray:
    """Counter-clockwise outer boundary of a 4-connected cell set, in grid units.

    At a vertex shared diagonally by two cells the walk turns left, so cells
    touching only at a corner are kept apart.
    """
    nx, ny = mask.shape
    pad = np.zeros((nx + 2, ny + 2), dtype=bool)
    pad[1:-1, 1:-1] = mask
    out: dict[tuple[int, int], list[tuple[int, int]]] = {}
    ii, jj = np.nonzero(mask)
    for i, j in zip(ii.tolist(), jj.tolist()):
        pi, pj = i + 1, j + 1
        if not pad[pi, pj - 1]:
            out.setdefault((i, j), []).append((i + 1, j))
        if not pad[pi + 1, pj]:
            out.setdefault((i + 1, j), []).append((i + 1, j + 1))
        if not pad[pi, pj + 1]:
            out.setdefault((i + 1, j + 1), []).append((i, j + 1))
        if not pad[pi - 1, pj]:
            out.setdefault((i, j + 1), []).append((i, j))
    used: set = set()
    best, best_area = None, -np.inf
    for start, targets in out.items():
        for first in targets:
            if (start, first) in used:
                continue
            cyc = [start]
            prev, cur = start, first
            used.add((start, first))
            while cur != start or len(cyc) == 1:
                cyc.append(cur)
                din = (cur[0] - prev[0], cur[1] - prev[1])
                options = [t for t in out[cur] if (cur, t) not in used]
                if not options:
                    break
                # left turn first, then straight, then right
                rank = {(-din[1], din[0]): 0, din: 1, (din[1], -din[0]): 2}
                nxt = min(options, key=lambda t: rank.get((t[0] - cur[0], t[1] - cur[1]), 3))
                used.add((cur, nxt))
                prev, cur = cur, nxt
                if cur == start:
                    break
            poly = np.array([complex(a, b) for a, b in cyc])
            area = 0.5 * float(np.sum(poly.real * np.roll(poly.imag, -1) - np.roll(poly.real, -1) * poly.imag))
            if area > best_area:
                best, best_area = poly, area
    if best is None:
        raise TopologyError("empty cell set has no boundary")
    return best


def _longest_run(flags: np.ndarray) -> tuple[int, int] | None:
    """Start index and length of the longest cyclic run of True values."""
    n = flags.shape[0]
    if flags.all():
        return 0, n
    if not flags.any():
        return None
    shift = int(np.flatnonzero(~flags)[0])
    rolled = np.roll(flags, -shift)
    best = (0, 0)
    k = 0
    while k < n:
        if rolled[k]:
            s = k
            while k < n and rolled[k]:
                k += 1
            if k - s > best[1]:
                best = (s, k - s)
        else:
            k += 1
    return (best[0] + shift) % n, best[1]


@dataclass(frozen=True)
class RightComponent:
    cells: np.ndarray  # boolean mask on the level-n grid
    a: complex  # lower extremity on the far side
    b: complex  # upper extremity on the far side
    boundary: np.ndarray  # counter-clockwise cycle in rectangle coordinates
    run: tuple[int, int]  # start index and vertex count of the far-side run in ``boundary``

    @property
    def diameter(self) -> float:
        return polyline_diameter(self.boundary)

    def base_and_rest(self) -> tuple[np.ndarray, np.ndarray]:
        start, length = self.run
        cyc = np.roll(self.boundary, -start)
        return cyc[:length], np.append(cyc[length - 1:], cyc[0])


@dataclass(frozen=True)
class RightComponentDecomposition:
    components: list
    level: int
    ell: float


def right_components(K: CompactSetApprox) -> RightComponentDecomposition:
    """Components of the complement meeting ``R`` along a nontrivial interval, bottom to top."""
    if K.side != LEFT_SIDE:
        raise ParameterError("right components are defined for left sets; reflect first")
    m = K.mask()
    nx, ny = m.shape
    h = K.h
    labels, count = ndimage.label(~m)
    comps = []
    for lab in sorted(set(labels[nx - 1, :].tolist()) - {0}):
        cells = labels == lab
        cyc = cell_boundary_cycle(cells)
        on_r = np.isclose(cyc.real, nx)
        run = _longest_run(on_r)
        if run is None or run[1] < 2:
            continue
        start, length = run
        a_g = cyc[start]
        b_g = cyc[(start + length - 1) % cyc.shape[0]]
        ys = np.clip(np.array([a_g.imag, b_g.imag]) * h, 0.0, K.ell)
        boundary = cyc.real * h + 1j * np.clip(cyc.imag * h, 0.0, K.ell)
        comps.append(RightComponent(cells, complex(1.0, ys[0]), complex(1.0, ys[1]), boundary, (start, length)))
    comps.sort(key=lambda c: c.a.imag)
    return RightComponentDecomposition(comps, K.n, K.ell)


# ---------------------------------------------------------------------------
# goodness


@dataclass(frozen=True)
class GoodnessReport:
    verdict: str  # "good", "not_good" or "inconclusive"
    stabilized_level: int | None
    levels: tuple
    counts: dict  # N -> per-level counts of components with diameter > 1/N
    extremity_shift: tuple  # per consecutive level pair, largest move of a large component's extremities

    def __bool__(self) -> bool:
        return self.verdict != "not_good"


def goodness_check(K, n_max: int = 6, n_min: int = 2, scales: Sequence[int] = (2, 4, 8)) -> GoodnessReport:
    """Finite-range check of the two goodness conditions for a left set.

    Condition (i) is probed by the number of right components of diameter above
    ``1/N``: a count that grows strictly over the last three levels marks the set
    not good, counts equal on the last two levels mark it stable.  Condition
    (ii) is probed through the extremities of the large components, which must
    move by at most four cells between the last two levels.
    """
    if K.side != LEFT_SIDE:
        K = reflect(K) if isinstance(K, CompactSet) else _reflect_approx(K)
    if n_max < n_min + 1:
        raise ParameterError("need at least two levels")
    levels = list(range(n_min, n_max + 1))
    counts = {N: [] for N in scales}
    extremities = []
    for n in levels:
        dec = right_components(dyadic_thicken(K, n))
        diams = [c.diameter for c in dec.components]
        for N in scales:
            counts[N].append(sum(d > 1.0 / N for d in diams))
        big = [(c.a, c.b) for c, d in zip(dec.components, diams) if d > 1.0 / max(scales)]
        extremities.append(big)
    shifts = []
    for prev, cur in zip(extremities[:-1], extremities[1:]):
        if len(prev) != len(cur):
            shifts.append(np.inf)
            continue
        shifts.append(max((max(abs(p[0] - c[0]), abs(p[1] - c[1])) for p, c in zip(prev, cur)), default=0.0))
    grows = any(len(v) >= 3 and v[-3] < v[-2] < v[-1] for v in counts.values())
    stable = all(v[-1] == v[-2] for v in counts.values())
    cauchy = shifts[-1] <= 4.0 * 2.0 ** -levels[-2]
    stab = None
    for idx in range(len(levels) - 1):
        if all(len(set(v[idx:])) == 1 for v in counts.values()):
            stab = levels[idx]
            break
    if grows:
        verdict = "not_good"
    elif stable and cauchy:
        verdict = "good"
    else:
        verdict = "inconclusive"
    return GoodnessReport(verdict, stab, tuple(levels), {N: tuple(v) for N, v in counts.items()}, tuple(shifts))


# ---------------------------------------------------------------------------
# chords inside a component


@nb.njit(cache=True)
def _two_force_kernel(kappa, rho_l, rho_r, dts, normals, w, vl, vr):
    """Euler steps for SLE_kappa(rho_l; rho_r) with both force points started at 0.

    Gaps below ``sqrt(kappa dt)`` are floored in the drift, and the ordering
    ``vl <= w <= vr`` is restored after every step.
    """
    sk = np.sqrt(kappa)
    w[0] = 0.0
    vl[0] = 0.0
    vr[0] = 0.0
    floored = 0
    for k in range(dts.shape[0]):
        dt = dts[k]
        floor = np.sqrt(kappa * dt)
        gl = w[k] - vl[k]
        gr = vr[k] - w[k]
        if gl < floor:
            gl = floor
            floored += 1
        if gr < floor:
            gr = floor
            floored += 1
        wn = w[k] + sk * np.sqrt(dt) * normals[k] + (rho_l / gl - rho_r / gr) * dt
        ln = vl[k] - 2.0 * dt / gl
        rn = vr[k] + 2.0 * dt / gr
        w[k + 1] = wn
        vl[k + 1] = min(ln, wn)
        vr[k + 1] = max(rn, wn)
    return floored


def geometric_time_grid(dt: float, horizon: float, head_steps: int = 200, growth: float = 0.01) -> np.ndarray:
    """``head_steps`` steps of size ``dt``, then steps growing by the factor ``1 + growth`` up to ``horizon``."""
    head = np.full(head_steps, dt)
    t0 = head_steps * dt
    if horizon <= t0:
        return np.full(max(1, int(np.ceil(horizon / dt))), dt)
    m = int(np.ceil(np.log(horizon / t0) / np.log1p(growth)))
    tail = t0 * growth * (1.0 + growth) ** np.arange(m)
    return np.concatenate([head, tail])


def sample_half_plane_chord(kappa: float, rho_pair: tuple[float, float], horizon: float, dt: float,
                            seed: int, stride: int = 2) -> np.ndarray:
    """Trace in the upper half-plane of SLE_kappa(rho_left; rho_right) from 0, force points at 0-/0+."""
    dts = geometric_time_grid(dt, horizon)
    normals = rng_for(seed, 0).standard_normal(dts.shape[0])
    w = np.empty(dts.shape[0] + 1)
    vl = np.empty_like(w)
    vr = np.empty_like(w)
    _two_force_kernel(float(kappa), float(rho_pair[0]), float(rho_pair[1]), dts, normals, w, vl, vr)
    chain = LoewnerChain.from_arrays(dts, w[:-1], w_final=float(w[-1]))
    return extract_trace(chain, stride).points


def validate_rho_pair(kappa: float, rho_pair: Sequence[float]) -> tuple[float, float]:
    if not 0 < kappa <= 4:
        raise ParameterError(f"kappa must lie in (0, 4], got {kappa}")
    lo = max(-2.0, kappa / 2.0 - 4.0)
    pair = tuple(float(r) for r in rho_pair)
    if len(pair) != 2 or not all(r > lo for r in pair):
        raise ParameterError(f"force point weights must both exceed {lo:g}, got {pair}")
    return pair


def _clip_to_cells(pts: np.ndarray, cells: np.ndarray, h: float, ell: float, tol: float) -> np.ndarray:
    """Move points lying farther than ``tol`` from the closed cell union to its nearest cell."""
    nx, ny = cells.shape
    ci, cj = np.nonzero(cells)
    i, j = _cells_of_points(pts, h, nx, ny)
    inside = cells[i, j]
    if inside.all():
        return pts
    tree = cKDTree(np.column_stack([(ci + 0.5) * h, (cj + 0.5) * h]))
    _, near = tree.query(np.column_stack([pts.real, pts.imag]))
    x0, y0 = ci[near] * h, cj[near] * h
    proj = np.clip(pts.real, x0, x0 + h) + 1j * np.clip(pts.imag, y0, np.minimum(y0 + h, ell))
    keep = inside | (np.abs(pts - proj) <= tol)
    return np.where(keep, pts, proj)


_UNIFORMIZERS: OrderedDict = OrderedDict()
_UNIFORMIZER_CACHE_SIZE = 256


def _component_uniformizer(comp: RightComponent, resolution: int) -> PolygonUniformizer:
    """Uniformizer of a component, cached on its cell mask since coarse levels repeat shapes."""
    key = (comp.cells.shape, comp.cells.tobytes(), comp.run, resolution, comp.boundary.tobytes())
    uni = _UNIFORMIZERS.get(key)
    if uni is None:
        base, rest = comp.base_and_rest()
        uni = PolygonUniformizer(base, rest, resolution)
        _UNIFORMIZERS[key] = uni
        if len(_UNIFORMIZERS) > _UNIFORMIZER_CACHE_SIZE:
            _UNIFORMIZERS.popitem(last=False)
    else:
        _UNIFORMIZERS.move_to_end(key)
    return uni


def chord_in_component(comp: RightComponent, kappa: float, rho_pair: tuple[float, float], dt: float, seed: int,
                       level: int, ell: float, resolution: int | None = None) -> np.ndarray:
    """SLE chord from ``comp.a`` to ``comp.b`` drawn in the half-plane and carried into the component."""
    uni = _component_uniformizer(comp, resolution or max(40, 6 * 2 ** level))
    umin, umax = uni.u_range
    half = 0.5 * (umax - umin)
    horizon = float(np.exp(min(2.0 * half + 2.0, 16.0)))
    pts_h = sample_half_plane_chord(kappa, rho_pair, horizon, dt, seed)
    img = uni.from_half_plane(pts_h)
    h = 2.0 ** -level
    img = _clip_to_cells(img, comp.cells, h, ell, 2.0 ** (-level - 2))
    return np.concatenate([[comp.a], img, [comp.b]])


# ---------------------------------------------------------------------------
# kernels


def _approx(K, level: int) -> CompactSetApprox:
    return dyadic_thicken(K, level)


def kernel_phi(K1, kappa: float, rho_pair: Sequence[float], dt: float = 1e-3, seed: int = 0, level: int = 3,
               n_max: int | None = None, resolution: int | None = None) -> CompactSet:
    """One chord per right component of the level-``level`` thickening of ``K1``.

    A right input set is handled by reflection, so the result always lies on the
    opposite side of the input.  A set flagged not good maps to the bare
    opposite side.  Components whose uniformization fails are skipped and listed
    in ``skipped``.
    """
    pair = validate_rho_pair(kappa, rho_pair)
    if K1.side == RIGHT_SIDE:
        src = reflect(K1) if isinstance(K1, CompactSet) else _reflect_approx(K1)
        return reflect(kernel_phi(src, kappa, pair[::-1], dt, seed, level, n_max, resolution))
    ell = K1.ell
    verdict = goodness_check(K1, n_max or level + 2, n_min=max(1, level - 1))
    if not verdict:
        return boundary_set(RIGHT_SIDE, ell)
    dec = right_components(_approx(K1, level))
    curves, skipped = [], []
    for idx, comp in enumerate(dec.components):
        try:
            curves.append(chord_in_component(comp, kappa, pair, dt, derive_seed(seed, 71, idx), level, ell,
                                             resolution))
        except (TopologyError, NumericError):
            skipped.append(idx)
    return CompactSet(RIGHT_SIDE, tuple(curves), ell, tuple(skipped))


def _reflect_approx(K: CompactSetApprox) -> CompactSetApprox:
    nx, _ = K.shape
    side = RIGHT_SIDE if K.side == LEFT_SIDE else LEFT_SIDE
    return CompactSetApprox(K.ell, K.n, frozenset((nx - 1 - i, j) for i, j in K.squares), side)


def kernel_psi(K1, kappa: float, rho_left_pair: Sequence[float], rho_right_pair: Sequence[float],
               dt: float = 1e-3, seed: int = 0, level: int = 3) -> CompactSet:
    """Right set from ``K1`` with the first pair, then a new left set from it with the second pair."""
    K2 = kernel_phi(K1, kappa, rho_left_pair, dt, derive_seed(seed, 1), level)
    return kernel_phi(K2, kappa, rho_right_pair, dt, derive_seed(seed, 2), level)


# ---------------------------------------------------------------------------
# coupling


@dataclass(frozen=True)
class CouplingTrial:
    trial: int
    coalesced: bool
    step: int | None
    both_in_Dplus_first: int | None
    both_in_Dplus_count: int
    absorbing_ok: bool

    def to_json(self) -> str:
        return json.dumps({"trial": self.trial, "coalesced": self.coalesced, "step": self.step,
                           "both_in_Dplus_first": self.both_in_Dplus_first})


@dataclass(frozen=True)
class CouplingStatistics:
    trials: list
    max_steps: int

    @property
    def coalescence_frequency(self) -> float:
        return float(np.mean([t.coalesced for t in self.trials])) if self.trials else 0.0

    @property
    def both_in_Dplus_frequency(self) -> float:
        return float(np.mean([t.both_in_Dplus_first is not None for t in self.trials])) if self.trials else 0.0

    def step_histogram(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for t in self.trials:
            if t.coalesced:
                out[t.step] = out.get(t.step, 0) + 1
        return dict(sorted(out.items()))

    def write_jsonl(self, path) -> None:
        with open(Path(path), "w") as fh:
            for t in self.trials:
                fh.write(t.to_json() + "\n")


def coupling_trial(K1: CompactSet, K1_tilde: CompactSet, kappa: float, rho_pairs, max_steps: int, seed: int,
                   trial: int = 0, dt: float = 1e-3, level: int = 2,
                   stop_at_coalescence: bool = False) -> CouplingTrial:
    """Two chains of ``kernel_psi`` driven by independent noise until both right sets lie in the
    right half, whereupon the second half-step uses shared noise.

    Once the two left sets coincide they are advanced with the same noise, so they
    stay equal; ``absorbing_ok`` records that this held at every later step.
    """
    left_pair, right_pair = rho_pairs
    X, Y = K1, K1_tilde
    first = None
    hits = 0
    step = 0 if X.equals(Y) else None
    absorbing = True
    for s in range(max_steps):
        if step is not None and stop_at_coalescence:
            break
        if step is not None:
            sx = derive_seed(seed, trial, s, 0)
            X = kernel_psi(X, kappa, left_pair, right_pair, dt, sx, level)
            Y = kernel_psi(Y, kappa, left_pair, right_pair, dt, sx, level)
            absorbing &= X.equals(Y)
            continue
        K2 = kernel_phi(X, kappa, left_pair, dt, derive_seed(seed, trial, s, 1), level)
        K2t = kernel_phi(Y, kappa, left_pair, dt, derive_seed(seed, trial, s, 2), level)
        both = K2.in_right_half() and K2t.in_right_half()
        if both:
            hits += 1
            if first is None:
                first = s
            shared = derive_seed(seed, trial, s, 3)
            X = kernel_phi(K2, kappa, right_pair, dt, shared, level)
            Y = kernel_phi(K2t, kappa, right_pair, dt, shared, level)
        else:
            X = kernel_phi(K2, kappa, right_pair, dt, derive_seed(seed, trial, s, 4), level)
            Y = kernel_phi(K2t, kappa, right_pair, dt, derive_seed(seed, trial, s, 5), level)
        if X.equals(Y):
            step = s + 1
    return CouplingTrial(trial, step is not None, step, first, hits, absorbing)


def coupling_experiment(K1: CompactSet, K1_tilde: CompactSet, kappa: float, rho_pairs, max_steps: int,
                        n_trials: int, seed: int, dt: float = 1e-3, level: int = 2,
                        stop_at_coalescence: bool = False) -> CouplingStatistics:
    """Independent coupling trials; ``stop_at_coalescence`` skips the steps after coalescence."""
    trials = [coupling_trial(K1, K1_tilde, kappa, rho_pairs, max_steps, seed, t, dt, level, stop_at_coalescence)
              for t in range(n_trials)]
    return CouplingStatistics(trials, max_steps)


# ---------------------------------------------------------------------------
# the path/loop variant


@dataclass(frozen=True)
class VariantStep:
    """One loop-then-path resampling step.

    ``kept_loops`` are the loops touching the active side (top for the first
    kernel, bottom for the second), ``separated`` says whether none of them
    reaches the horizontal segment at height ``3 ell/4`` (``ell/4`` for the
    second kernel), and ``truncation_flag`` marks loop truncation below the
    raster cell size.
    """

    path: np.ndarray
    kept_loops: tuple
    segments: dict
    separated: bool
    truncation_flag: bool
    kernel: int


def horizontal_segment(height: float, n_points: int = 2) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_points) + 1j * height


def _flip_vertical(pts: np.ndarray, ell: float) -> np.ndarray:
    return np.conj(pts) + 1j * ell


def _component_with_run(blocked: np.ndarray, seed_cell: tuple[int, int], on_run) -> RightComponent:
    """Component of the unblocked cells containing ``seed_cell``, with its longest boundary run
    satisfying ``on_run`` (a predicate on grid-unit vertices)."""
    labels, _ = ndimage.label(~blocked)
    lab = labels[seed_cell]
    if lab == 0:
        raise TopologyError("anchor cell is blocked")
    cells = labels == lab
    cyc = cell_boundary_cycle(cells)
    run = _longest_run(on_run(cyc))
    if run is None or run[1] < 2:
        raise TopologyError("component does not meet the required boundary arc")
    start, length = run
    return RightComponent(cells, cyc[start], cyc[(start + length - 1) % cyc.shape[0]], cyc, (start, length))


def _scaled(comp: RightComponent, h: float, ell: float) -> RightComponent:
    def sc(z):
        return np.real(z) * h + 1j * np.clip(np.imag(z) * h, 0.0, ell)
    return RightComponent(comp.cells, complex(sc(comp.a)), complex(sc(comp.b)), sc(comp.boundary), comp.run)


def _bottom_arc_component(blocked: np.ndarray, ell: float, level: int) -> RightComponent:
    """Component touching the bottom side, uniformized along the boundary below height ``ell/2``."""
    nx, ny = blocked.shape
    h = 2.0 ** -level
    half = 0.5 * ell / h
    free_bottom = np.flatnonzero(~blocked[:, 0])
    if free_bottom.size == 0:
        raise TopologyError("bottom side is covered")
    anchor = (int(free_bottom[free_bottom.size // 2]), 0)

    def on_arc(cyc):
        x, y = cyc.real, cyc.imag
        return (np.isclose(y, 0) | ((np.isclose(x, 0) | np.isclose(x, nx)) & (y <= half + 1e-9)))
    return _scaled(_component_with_run(blocked, anchor, on_arc), h, ell)


def sample_path_stage(kappa: float, blocked: np.ndarray, ell: float, dt: float, seed: int, level: int) -> np.ndarray:
    """SLE_k'(k'-6) with k' = 16/k from ``(0, ell/2)`` to ``(1, ell/2)`` in the free component touching the
    bottom side, force point on the bottom side."""
    kp = 16.0 / kappa
    comp = _bottom_arc_component(blocked, ell, level)
    uni = _component_uniformizer(comp, max(40, 6 * 2 ** level))
    umin, umax = uni.u_range
    horizon = float(np.exp(min((umax - umin) + 2.0, 16.0)))
    pts_h = sample_half_plane_chord(kp, (0.0, kp - 6.0), horizon, dt, seed)
    img = _clip_to_cells(uni.from_half_plane(pts_h), comp.cells, 2.0 ** -level, ell, 2.0 ** (-level - 2))
    return np.concatenate([[complex(0.0, ell / 2)], img, [complex(1.0, ell / 2)]])


def sample_initial_path(kappa: float, ell: float = 1.0, dt: float = 1e-3, seed: int = 0, level: int = 4) -> np.ndarray:
    """Path stage with no loops: the chord in the full rectangle."""
    nx, ny = grid_shape(level, ell)
    return sample_path_stage(kappa, np.zeros((nx, ny), dtype=bool), ell, dt, seed, level)


def _top_loops(kappa: float, eta_prime: np.ndarray, ell: float, dt: float, seed: int, level: int,
               epsilon_truncation: float, loop_horizon: float) -> list[np.ndarray]:
    """BCLE_k(-k/2) loops in the region above the path, attached along the top side."""
    nx, ny = grid_shape(level, ell)
    h = 2.0 ** -level
    blocked = np.zeros((nx, ny), dtype=bool)
    cells = _polyline_cells(eta_prime, h, nx, ny)
    blocked[cells[:, 0], cells[:, 1]] = True
    free_top = np.flatnonzero(~blocked[:, ny - 1])
    if free_top.size == 0:
        return []

    def on_top(cyc):
        return np.isclose(cyc.imag, ny)
    comp = _scaled(_component_with_run(blocked, (int(free_top[free_top.size // 2]), ny - 1), on_top), h, ell)
    uni = _component_uniformizer(comp, max(40, 6 * 2 ** level))
    sub = sample_bcle(kappa, -kappa / 2, epsilon_truncation=1e-12, dt=dt, seed=seed, horizon=loop_horizon,
                      in_half_plane=True)
    out = []
    for lp in sub.loops:
        img = _clip_to_cells(uni.from_half_plane(lp.points), comp.cells, h, ell, 2.0 ** (-level - 2))
        if polyline_diameter(img) >= epsilon_truncation:
            out.append(img)
    return out


def variant_kernels_psi12(eta_prime: np.ndarray, gamma_loops, kappa: float, dt: float = 1e-3, seed: int = 0,
                          kernel: int = 1, ell: float = 1.0, level: int = 4, epsilon_truncation: float = 0.1,
                          loop_horizon: float = 4.0) -> VariantStep:
    """One step of the first (``kernel=1``) or second (``kernel=2``) loop/path kernel.

    The first kernel samples loops in the part of the rectangle above
    ``eta_prime`` (or uses ``gamma_loops`` when given), keeps those touching the
    top side, and redraws the path below them.  The second kernel is the first
    one conjugated by the reflection ``y -> ell - y``.
    """
    if not 8 / 3 < kappa < 4:
        raise ParameterError(f"kappa must lie in (8/3, 4), got {kappa}")
    if kernel not in (1, 2):
        raise ParameterError("kernel must be 1 or 2")
    eta = np.asarray(eta_prime, dtype=complex)
    given = None if gamma_loops is None else [np.asarray(lp, dtype=complex) for lp in gamma_loops]
    if kernel == 2:
        eta = _flip_vertical(eta, ell)
        given = None if given is None else [_flip_vertical(lp, ell) for lp in given]
    h = 2.0 ** -level
    loops = given if given is not None else _top_loops(kappa, eta, ell, dt, derive_seed(seed, 81), level,
                                                       epsilon_truncation, loop_horizon)
    kept = [lp for lp in loops if lp.size and lp.imag.max() >= ell - h]
    nx, ny = grid_shape(level, ell)
    blocked = np.zeros((nx, ny), dtype=bool)
    for lp in kept:
        c = _polyline_cells(lp, h, nx, ny)
        blocked[c[:, 0], c[:, 1]] = True
    path = sample_path_stage(kappa, blocked, ell, dt, derive_seed(seed, 82), level)
    separated = all(lp.imag.min() > 0.75 * ell for lp in kept)
    segs = {0.25 * ell: horizontal_segment(0.25 * ell), 0.75 * ell: horizontal_segment(0.75 * ell)}
    if kernel == 2:
        path = _flip_vertical(path, ell)
        kept = [_flip_vertical(lp, ell) for lp in kept]
    return VariantStep(path, tuple(kept), segs, separated, epsilon_truncation < h, kernel)


def path_observables(path: np.ndarray, tolerance: float = 0.02) -> tuple[float, int]:
    """Diameter and the number of separate contacts with the right side ``x = 1``."""
    touch = path.real >= 1.0 - tolerance
    contacts = int(np.count_nonzero(touch[1:] & ~touch[:-1]) + (1 if touch[0] else 0))
    return polyline_diameter(path), contacts
