"""Critical site percolation on the triangular lattice.

Sites are hexagons addressed by axial coordinates ``(q, r)`` with Euclidean position
``q + r/2 + i r sqrt(3)/2``.  Interfaces run along hexagon edges; an oriented edge is
stored as the pair (open hexagon on the left, closed hexagon on the right).
"""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numba as nb
import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, ParameterError
from .seeding import rng_for

DIRS = np.array([(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)], dtype=np.int64)
HEX_STRUCTURE = np.array([[0, 1, 1], [1, 1, 1], [1, 1, 0]], dtype=bool)
SQRT3_2 = np.sqrt(3.0) / 2.0

OUTSIDE = -1
CLOSED = 0
OPEN = 1


def axial_position(q, r):
    return np.asarray(q) + np.asarray(r) / 2.0 + 1j * SQRT3_2 * np.asarray(r)


@dataclass(frozen=True, eq=False)
class LatticeDomain:
    """Sites of a bounded domain plus the ring of exterior boundary sites.

    ``inside`` and ``exterior`` are boolean grids indexed ``[q - qmin, r - rmin]``;
    ``boundary_open`` colours the exterior ring.  ``entries`` lists the oriented
    start edges ``(flat index of left site, direction)`` where an open arc meets a
    closed arc counterclockwise, i.e. where an open-left exploration enters.
    """

    name: str
    qmin: int
    rmin: int
    inside: np.ndarray
    exterior: np.ndarray
    boundary_open: np.ndarray
    center: complex
    scale: float
    entries: tuple = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.inside.shape

    @property
    def offsets(self) -> np.ndarray:
        return DIRS[:, 0] * self.inside.shape[1] + DIRS[:, 1]

    def axial(self, flat):
        a, b = np.divmod(np.asarray(flat), self.inside.shape[1])
        return a + self.qmin, b + self.rmin

    def flat(self, q, r):
        return (np.asarray(q) - self.qmin) * self.inside.shape[1] + (np.asarray(r) - self.rmin)

    def positions(self, flat=None) -> np.ndarray:
        """Normalised Euclidean positions ``(z - center) / scale``."""
        if flat is None:
            a, b = np.indices(self.inside.shape)
            q, r = a + self.qmin, b + self.rmin
        else:
            q, r = self.axial(flat)
        return (axial_position(q, r) - self.center) / self.scale

    def boundary_colours(self) -> np.ndarray:
        out = np.full(self.inside.shape, OUTSIDE, dtype=np.int8)
        out[self.exterior] = np.where(self.boundary_open[self.exterior], OPEN, CLOSED)
        return out

    def with_boundary(self, boundary_open: np.ndarray) -> "LatticeDomain":
        return _finish(self.name, self.qmin, self.rmin, self.inside, boundary_open, self.center, self.scale)

    def entry_angle(self, entry) -> float:
        flat, d = entry
        right = flat + self.offsets[d]
        mid = (self.positions(flat) + self.positions(right)) / 2
        return float(np.angle(mid))


def _finish(name, qmin, rmin, inside, boundary_open, center, scale) -> LatticeDomain:
    inside = np.asarray(inside, dtype=bool)
    exterior = ndimage.binary_dilation(inside, structure=HEX_STRUCTURE) & ~inside
    if exterior[0, :].any() or exterior[-1, :].any() or exterior[:, 0].any() or exterior[:, -1].any():
        raise ConfigurationError("domain grid needs a margin of two sites")
    bopen = np.asarray(boundary_open, dtype=bool) & exterior
    dom = LatticeDomain(name, qmin, rmin, inside, exterior, bopen, complex(center), float(scale))
    colours = dom.boundary_colours()
    offs = dom.offsets
    flat_col = colours.ravel()
    flat_in = inside.ravel()
    entries = []
    for L in np.flatnonzero(flat_col == OPEN):
        for d in range(6):
            R = L + offs[d]
            T = L + offs[(d + 1) % 6]
            if flat_col[R] == CLOSED and not flat_in[R] and flat_in[T]:
                entries.append((int(L), int(d)))
    dom = replace(dom, entries=tuple(entries))
    return dom


def _grid_for(qs: np.ndarray, rs: np.ndarray):
    qmin, rmin = int(qs.min()) - 2, int(rs.min()) - 2
    shape = (int(qs.max()) - qmin + 3, int(rs.max()) - rmin + 3)
    return qmin, rmin, shape


def strip_domain(width: int, height: int) -> LatticeDomain:
    """Brick-shaped rectangle; left half of the boundary open, right half closed.

    The exploration enters at the middle of the bottom side and leaves at the top.
    """
    if width < 1 or height < 1:
        raise ParameterError("strip needs positive width and height")
    rows = [(q, r) for r in range(height) for q in range(-(r // 2), -(r // 2) + width)]
    qs, rs = np.array(rows).T
    qmin, rmin, shape = _grid_for(qs, rs)
    inside = np.zeros(shape, dtype=bool)
    inside[qs - qmin, rs - rmin] = True
    pos = axial_position(qs, rs)
    cx = float(pos.real.mean())
    a, b = np.indices(shape)
    allpos = axial_position(a + qmin, b + rmin)
    bopen = allpos.real < cx - 1e-9
    center = complex(cx, float(pos.imag.mean()))
    dom = _finish(f"strip{width}x{height}", qmin, rmin, inside, bopen, center, max(width, height) / 2)
    if len(dom.entries) != 1:
        raise ConfigurationError(f"strip boundary has {len(dom.entries)} entry edges, expected 1")
    return dom


def rhombus_domain(n: int) -> LatticeDomain:
    """The 60-degree rhombus ``0 <= q, r < n`` (no boundary colours)."""
    if n < 1:
        raise ParameterError("rhombus side must be positive")
    qmin, rmin = -2, -2
    inside = np.zeros((n + 4, n + 4), dtype=bool)
    inside[2:n + 2, 2:n + 2] = True
    center = axial_position((n - 1) / 2, (n - 1) / 2)
    return _finish(f"rhombus{n}", qmin, rmin, inside, np.zeros_like(inside), center, n / 2)


def disk_domain(radius: int, open_arcs: Sequence[tuple[float, float]] = ()) -> LatticeDomain:
    """Sites within Euclidean distance ``radius`` of the origin.

    ``open_arcs`` lists counterclockwise angle intervals of open boundary; the rest is closed.
    """
    if radius < 1:
        raise ParameterError("disk radius must be positive")
    m = radius + 2 * radius // 1 + 4
    a, b = np.indices((2 * m + 1, 2 * m + 1))
    q, r = a - m, b - m
    inside = np.abs(axial_position(q, r)) <= radius
    ang = np.angle(axial_position(q, r))
    bopen = np.zeros_like(inside)
    for lo, hi in open_arcs:
        span = (hi - lo) % (2 * np.pi)
        bopen |= ((ang - lo) % (2 * np.pi)) < span
    return _finish(f"disk{radius}", -m, -m, inside, bopen, 0j, float(radius))


# ---------------------------------------------------------------------------
# configurations


@dataclass(frozen=True, eq=False)
class PercolationConfiguration:
    domain: LatticeDomain
    sites: np.ndarray  # bool grid, True = open, only meaningful inside
    p: float
    seed: int | None = None

    @property
    def width(self) -> int:
        return int(self.domain.inside.any(axis=1).sum())

    @property
    def height(self) -> int:
        return int(self.domain.inside.any(axis=0).sum())

    def colours(self) -> np.ndarray:
        out = self.domain.boundary_colours()
        ins = self.domain.inside
        out[ins] = self.sites[ins].astype(np.int8)
        return out

    def flipped(self, flats: Sequence[int]) -> "PercolationConfiguration":
        s = self.sites.copy().ravel()
        for f in flats:
            if not self.domain.inside.ravel()[f]:
                raise ParameterError("only interior sites can be flipped")
            s[f] = not s[f]
        return replace(self, sites=s.reshape(self.sites.shape))

    def open_fraction(self) -> float:
        return float(self.sites[self.domain.inside].mean())

    def same_as(self, other: "PercolationConfiguration") -> bool:
        ins = self.domain.inside
        return bool(np.array_equal(self.sites[ins], other.sites[ins]))


def sample_config(width: int, height: int, p: float, boundary: LatticeDomain | None = None,
                  seed: int = 0) -> PercolationConfiguration:
    """I.i.d. site colours; ``boundary`` defaults to the Dobrushin strip."""
    if not 0 <= p <= 1:
        raise ParameterError("p must lie in [0, 1]")
    dom = boundary if boundary is not None else strip_domain(width, height)
    return sample_on(dom, p, rng_for(seed, 11), seed)


def sample_on(domain: LatticeDomain, p: float, rng: np.random.Generator, seed=None) -> PercolationConfiguration:
    sites = np.zeros(domain.inside.shape, dtype=bool)
    sites[domain.inside] = rng.random(int(domain.inside.sum())) < p
    return PercolationConfiguration(domain, sites, float(p), seed)


def flip_colours(config: PercolationConfiguration) -> PercolationConfiguration:
    """Swap open and closed everywhere, boundary arcs included."""
    dom = config.domain.with_boundary(~config.domain.boundary_open)
    return PercolationConfiguration(dom, ~config.sites & dom.inside, 1 - config.p, config.seed)


# ---------------------------------------------------------------------------
# exploration


@nb.njit(cache=True)
def _explore(colours, exterior, offs, L0, d0, max_steps, Ls, Rs):
    L = L0
    d = d0
    R = L + offs[d]
    m = 0
    while m < max_steps:
        Ls[m] = L
        Rs[m] = R
        m += 1
        if m > 1 and exterior[L] and exterior[R]:
            break
        T = L + offs[(d + 1) % 6]
        c = colours[T]
        if c < 0:
            break
        if c == 1:
            L = T
            d = (d + 5) % 6
        else:
            R = T
            d = (d + 1) % 6
    return m


@dataclass(frozen=True, eq=False)
class InterfacePath:
    """Oriented interface: step ``t`` runs between ``left[t]`` (open) and ``right[t]`` (closed)."""

    domain: LatticeDomain
    left: np.ndarray
    right: np.ndarray

    def __len__(self) -> int:
        return int(self.left.shape[0])

    def edge_keys(self) -> np.ndarray:
        """Undirected edge identifiers."""
        lo = np.minimum(self.left, self.right)
        hi = np.maximum(self.left, self.right)
        return lo * self.domain.inside.size + hi

    def edge_multiset(self) -> Counter:
        return Counter(self.edge_keys().tolist())

    def directed_edges(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        lq, lr = self.domain.axial(self.left)
        rq, rr = self.domain.axial(self.right)
        return [((int(a), int(b)), (int(c), int(d))) for a, b, c, d in zip(lq, lr, rq, rr)]

    def vertices(self) -> np.ndarray:
        """Normalised positions of the hexagon-lattice vertices along the path."""
        offs = self.domain.offsets
        pos_l = self.domain.positions(self.left)
        pos_r = self.domain.positions(self.right)
        # the vertex behind each edge is shared with the previous step; use the ahead vertex
        d = _direction_index(self.domain, self.left, self.right)
        ahead = self.domain.positions(self.left + offs[(d + 1) % 6])
        behind = self.domain.positions(self.left + offs[(d + 5) % 6])
        start = (pos_l[0] + pos_r[0] + behind[0]) / 3
        return np.concatenate([[start], (pos_l + pos_r + ahead) / 3])

    def run_starts(self) -> tuple[np.ndarray, np.ndarray]:
        """Hexagons and step indices where runs along the path begin, sorted by (hexagon, step)."""
        hexes, times = [], []
        for seq in (self.left, self.right):
            new = np.ones(len(seq), dtype=bool)
            new[1:] = seq[1:] != seq[:-1]
            t = np.flatnonzero(new)
            hexes.append(seq[t])
            times.append(t)
        h = np.concatenate(hexes)
        t = np.concatenate(times)
        order = np.lexsort((t, h))
        return h[order], t[order]

    def visit_starts(self) -> dict[int, list[int]]:
        """Step indices at which each hexagon's runs along the path begin."""
        h, t = self.run_starts()
        out: dict[int, list[int]] = {}
        for a, b in zip(h.tolist(), t.tolist()):
            out.setdefault(a, []).append(b)
        return out


def _direction_index(domain: LatticeDomain, left, right) -> np.ndarray:
    diff = np.asarray(right) - np.asarray(left)
    offs = domain.offsets
    d = np.full(diff.shape, -1, dtype=np.int64)
    for i, o in enumerate(offs):
        d[diff == o] = i
    return d


def trace_interface(config: PercolationConfiguration, entry: int | tuple | None = None,
                    max_steps: int | None = None) -> InterfacePath:
    """Open-left exploration from an entry edge until it leaves through another marked edge."""
    dom = config.domain
    if not dom.entries:
        raise ConfigurationError("boundary has no open/closed marked edge")
    if entry is None:
        if len(dom.entries) != 1:
            raise ConfigurationError("several entry edges; pass one explicitly")
        entry = dom.entries[0]
    elif isinstance(entry, (int, np.integer)):
        entry = dom.entries[int(entry)]
    colours = config.colours().ravel()
    ext = dom.exterior.ravel()
    cap = max_steps or 6 * int(dom.inside.sum() + dom.exterior.sum()) + 10
    Ls = np.empty(cap, dtype=np.int64)
    Rs = np.empty(cap, dtype=np.int64)
    m = _explore(colours, ext, dom.offsets, int(entry[0]), int(entry[1]), cap, Ls, Rs)
    if not (ext[Ls[m - 1]] and ext[Rs[m - 1]]):
        raise ConfigurationError("exploration did not reach a marked boundary edge")
    return InterfacePath(dom, Ls[:m].copy(), Rs[:m].copy())


def find_double_points(path: InterfacePath) -> list[int]:
    """Interior sites whose hexagon the path runs along exactly twice (flat indices, sorted)."""
    h, _ = path.run_starts()
    uniq, counts = np.unique(h, return_counts=True)
    keep = uniq[(counts == 2) & path.domain.inside.ravel()[uniq]]
    return keep.tolist()


def double_points_bruteforce(path: InterfacePath) -> list[int]:
    """Independent visit count: walk the steps and count fresh arrivals per hexagon."""
    last: dict[int, int] = {}
    count: Counter = Counter()
    for t, (a, b) in enumerate(zip(path.left.tolist(), path.right.tolist())):
        for h in (a, b):
            if last.get(h, -2) != t - 1:
                count[h] += 1
            last[h] = t
    inside = path.domain.inside.ravel()
    return sorted(h for h, c in count.items() if c == 2 and inside[h])


# ---------------------------------------------------------------------------
# intertwined pairs and the two-point switch


@dataclass(frozen=True)
class Region:
    """Disk in lattice units, centre relative to the domain centre."""

    center: complex
    radius: float

    def contains(self, domain: LatticeDomain, flat) -> np.ndarray:
        z = domain.positions(flat) * domain.scale
        return np.abs(z - self.center) < self.radius

    def disjoint_from(self, other: "Region") -> bool:
        return abs(self.center - other.center) > self.radius + other.radius


def default_regions(n: int) -> tuple[Region, Region]:
    return Region(-n / 4, n / 8), Region(n / 4, n / 8)


@dataclass(frozen=True)
class PivotalPair:
    sites: tuple[int, int]
    regions: tuple[Region, Region]
    intertwined: bool
    times: tuple[tuple[int, int], tuple[int, int]] = ((0, 0), (0, 0))


def interleaved(ta: Sequence[int], tb: Sequence[int]) -> bool:
    a1, a2 = ta
    b1, b2 = tb
    return (a1 < b1 < a2 < b2) or (b1 < a1 < b2 < a2)


def colour_changes(colours_flat: np.ndarray, offsets: np.ndarray, flat) -> np.ndarray:
    """Number of colour changes around the ring of six neighbours."""
    ring = colours_flat[np.asarray(flat)[..., None] + offsets]
    return np.sum(ring != np.roll(ring, 1, axis=-1), axis=-1)


def find_intertwined_pairs(path: InterfacePath, region_a: Region, region_b: Region,
                           colours: np.ndarray | None = None) -> list[PivotalPair]:
    """Double-point pairs (a in A, b in B) whose four visit times interleave.

    With ``colours`` given, only sites whose neighbour ring alternates exactly
    four times are kept, so that no third interface touches the hexagon.
    """
    if not region_a.disjoint_from(region_b):
        raise ParameterError("regions must be disjoint")
    h, t = path.run_starts()
    uniq, first, counts = np.unique(h, return_index=True, return_counts=True)
    dom = path.domain
    keep = (counts == 2) & dom.inside.ravel()[uniq]
    dps, first = uniq[keep], first[keep]
    if dps.size == 0:
        return []
    in_a = region_a.contains(dom, dps)
    in_b = region_b.contains(dom, dps)
    sel = in_a | in_b
    dps, first, in_a, in_b = dps[sel], first[sel], in_a[sel], in_b[sel]
    if colours is not None and dps.size:
        ok = colour_changes(np.asarray(colours).ravel(), dom.offsets, dps) == 4
        dps, first, in_a, in_b = dps[ok], first[ok], in_a[ok], in_b[ok]
    t1, t2 = t[first], t[first + 1]
    out = []
    for i in np.flatnonzero(in_a):
        for j in np.flatnonzero(in_b):
            ta, tb = (int(t1[i]), int(t2[i])), (int(t1[j]), int(t2[j]))
            if interleaved(ta, tb):
                out.append(PivotalPair((int(dps[i]), int(dps[j])), (region_a, region_b), True, (ta, tb)))
    return out


def switch_pair(config: PercolationConfiguration, pair: PivotalPair) -> tuple[PercolationConfiguration, InterfacePath]:
    """Flip both sites of an intertwined pair and re-trace the interface."""
    if not pair.intertwined:
        raise ParameterError("pair is not intertwined; a single flip would change the range")
    new = config.flipped(pair.sites)
    return new, trace_interface(new)


def perimeter_keys(domain: LatticeDomain, flat: int) -> set[int]:
    size = domain.inside.size
    return {min(flat, flat + o) * size + max(flat, flat + o) for o in domain.offsets.tolist()}


@dataclass(frozen=True)
class SwitchReport:
    multiset_equal: bool
    outside_perimeters_equal: bool
    perimeters_complemented: bool
    order_changed: bool
    edges_before: int
    edges_after: int


def compare_switch(before: InterfacePath, after: InterfacePath, sites: Sequence[int]) -> SwitchReport:
    """Compare edge multisets and traversal order before and after a switch."""
    dom = before.domain
    m0 = before.edge_multiset()
    m1 = after.edge_multiset()
    perim = set().union(*(perimeter_keys(dom, s) for s in sites))
    out0 = Counter({k: v for k, v in m0.items() if k not in perim})
    out1 = Counter({k: v for k, v in m1.items() if k not in perim})
    p0 = {k for k in m0 if k in perim}
    p1 = {k for k in m1 if k in perim}
    # an interface edge on a flipped hexagon's perimeter toggles; edges shared by both perimeters toggle twice
    toggles = Counter()
    for s in sites:
        for k in perimeter_keys(dom, s):
            toggles[k] += 1
    interface_before = p0
    expected = {k for k in perim if (k in interface_before) != (toggles[k] % 2 == 1)}
    complemented = p1 == expected
    keys0 = before.edge_keys()
    keys1 = after.edge_keys()
    common = [k for k in keys0.tolist() if k not in perim and k in out1]
    pos1 = {k: i for i, k in enumerate(keys1.tolist())}
    order_after = [pos1[k] for k in common if k in pos1]
    monotone = all(x < y for x, y in zip(order_after, order_after[1:]))
    return SwitchReport(m0 == m1, out0 == out1, complemented, not monotone, len(before), len(after))


# ---------------------------------------------------------------------------
# loops


@nb.njit(cache=True)
def _trace_all(colours, inside, exterior, offs, used, loop_id, Ls, Rs):
    """Trace every interface edge (open left of closed, at least one side interior).

    ``used`` must mark edges already claimed (the chordal path).  Returns the
    number of loops; ``Ls``/``Rs`` receive the loops' edges back to back and
    ``loop_id`` their loop index.
    """
    n = colours.shape[0]
    pos = 0
    nloops = 0
    for L0 in range(n):
        if colours[L0] != 1:
            continue
        for d0 in range(6):
            R0 = L0 + offs[d0]
            if R0 < 0 or R0 >= n or colours[R0] != 0:
                continue
            if not (inside[L0] or inside[R0]):
                continue
            if used[L0 * 6 + d0]:
                continue
            L = L0
            d = d0
            while True:
                R = L + offs[d]
                used[L * 6 + d] = True
                Ls[pos] = L
                Rs[pos] = R
                loop_id[pos] = nloops
                pos += 1
                T = L + offs[(d + 1) % 6]
                if colours[T] == 1:
                    L = T
                    d = (d + 5) % 6
                else:
                    d = (d + 1) % 6
                if L == L0 and d == d0:
                    break
            nloops += 1
    return nloops, pos


@dataclass(frozen=True, eq=False)
class LoopSet:
    domain: LatticeDomain
    left: np.ndarray
    right: np.ndarray
    loop_id: np.ndarray
    count: int

    def polylines(self) -> list[np.ndarray]:
        """Closed polylines (first vertex repeated) through hexagon-lattice vertices."""
        if self.count == 0:
            return []
        dom = self.domain
        offs = dom.offsets
        d = _direction_index(dom, self.left, self.right)
        ahead = dom.positions(self.left + offs[(d + 1) % 6])
        verts = (dom.positions(self.left) + dom.positions(self.right) + ahead) / 3
        cuts = np.flatnonzero(np.diff(self.loop_id)) + 1
        out = []
        for seg in np.split(verts, cuts):
            out.append(np.concatenate([seg, seg[:1]]))
        return out

    def lengths(self) -> np.ndarray:
        return np.bincount(self.loop_id, minlength=self.count)


def trace_loops(config: PercolationConfiguration, path: InterfacePath | None = None) -> LoopSet:
    """All closed interfaces of the configuration, excluding the chordal one."""
    dom = config.domain
    colours = config.colours().ravel()
    used = np.zeros(colours.size * 6, dtype=bool)
    if path is not None:
        d = _direction_index(dom, path.left, path.right)
        used[path.left * 6 + d] = True
    cap = 6 * colours.size
    Ls = np.empty(cap, dtype=np.int64)
    Rs = np.empty(cap, dtype=np.int64)
    ids = np.empty(cap, dtype=np.int64)
    count, m = _trace_all(colours, dom.inside.ravel(), dom.exterior.ravel(), dom.offsets, used, ids, Ls, Rs)
    return LoopSet(dom, Ls[:m].copy(), Rs[:m].copy(), ids[:m].copy(), int(count))


# ---------------------------------------------------------------------------
# crossing and hookup


@dataclass(frozen=True)
class CrossingEstimate:
    p_hat: float
    se: float
    n_samples: int
    open_lr: int
    closed_tb: int

    @property
    def ci(self) -> tuple[float, float]:
        return self.p_hat - 1.96 * self.se, self.p_hat + 1.96 * self.se


def crossing_probability(n: int, shape: str = "rhombus", p: float = 0.5, n_samples: int = 1000, seed: int = 0,
                         chunk: int = 500) -> CrossingEstimate:
    """Fraction of samples with an open left-right crossing of the 60-degree rhombus.

    The closed top-bottom crossing is evaluated too; exactly one of the two occurs.
    """
    if shape != "rhombus":
        raise ParameterError("only the rhombus shape is supported")
    if not 0 <= p <= 1:
        raise ParameterError("p must lie in [0, 1]")
    struct3 = np.zeros((3, 3, 3), dtype=bool)
    struct3[1] = HEX_STRUCTURE
    open_lr = 0
    closed_tb = 0
    done = 0
    ci = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        rng = rng_for(seed, 13, ci)
        grid = rng.random((m, n, n)) < p
        lab_o, _ = ndimage.label(grid, structure=struct3)
        lab_c, _ = ndimage.label(~grid, structure=struct3)
        for s in range(m):
            o = _spans_axis(lab_o[s], 0)
            c = _spans_axis(lab_c[s], 1)
            if o == c:
                raise AssertionError("open and closed crossings must partition the samples")
            open_lr += o
            closed_tb += c
        done += m
        ci += 1
    ph = open_lr / n_samples
    return CrossingEstimate(ph, float(np.sqrt(max(ph * (1 - ph), 0.0) / n_samples)), n_samples, open_lr, closed_tb)


def _spans_axis(labels: np.ndarray, axis: int) -> bool:
    if axis == 0:
        a, b = labels[0, :], labels[-1, :]
    else:
        a, b = labels[:, 0], labels[:, -1]
    a = np.unique(a[a > 0])
    b = np.unique(b[b > 0])
    return bool(np.intersect1d(a, b, assume_unique=True).size)


@dataclass(frozen=True)
class HookupDisk:
    """Lattice disk with four alternating boundary arcs for the four-strand event."""

    domain: LatticeDomain
    angles: tuple[float, float, float, float]
    arc_masks: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    c_continuum: float
    c_lattice: float


def hookup_disk(c_target: float, n: int) -> HookupDisk:
    """Arcs (z1,z2) and (z3,z4) open, the others closed, with quad cross-ratio ``c_target``."""
    from .conformal import cross_ratio_of_points, quad_with_cross_ratio

    pts = quad_with_cross_ratio(c_target)
    ang = tuple(float(np.angle(z)) for z in pts)
    dom = disk_domain(n, [(ang[0], ang[1]), (ang[2], ang[3])])
    pos_ang = np.angle(dom.positions())
    masks = []
    for j in range(4):
        lo, hi = ang[j], ang[(j + 1) % 4]
        span = (hi - lo) % (2 * np.pi)
        masks.append(dom.exterior & (((pos_ang - lo) % (2 * np.pi)) < span))
    # cross-ratio of the actual lattice transition points
    lat = []
    for j in range(4):
        prev = masks[(j - 1) % 4]
        cur = masks[j]
        if not prev.any() or not cur.any():
            lat = None
            break
        a_prev = pos_ang[prev]
        a_cur = pos_ang[cur]
        # last site of the previous arc and first site of the current one, counterclockwise
        lp = a_prev[np.argmin(((ang[j] - a_prev) % (2 * np.pi)))]
        fc = a_cur[np.argmin(((a_cur - ang[j]) % (2 * np.pi)))]
        gap = (fc - lp) % (2 * np.pi)
        lat.append(np.exp(1j * (lp + gap / 2)))
    c_lat = cross_ratio_of_points(lat) if lat is not None else float("nan")
    return HookupDisk(dom, ang, tuple(masks), float(c_target), float(c_lat))


def classify_hookup(config: PercolationConfiguration, disk: HookupDisk) -> int:
    """1 for the one-loop pairing (open crossing between the open arcs), 2 otherwise."""
    colours = config.colours()
    lab, _ = ndimage.label(colours == OPEN, structure=HEX_STRUCTURE)
    a = np.unique(lab[disk.arc_masks[0]])
    b = np.unique(lab[disk.arc_masks[2]])
    a, b = a[a > 0], b[b > 0]
    return 1 if np.intersect1d(a, b).size else 2


def classify_hookup_by_exploration(config: PercolationConfiguration, disk: HookupDisk) -> int | None:
    """Trace from the marked edge at z2; ending near z3 means the one-loop pairing."""
    dom = disk.domain
    if len(dom.entries) < 2:
        return None
    ang = disk.angles
    entry = min(dom.entries, key=lambda e: _angdist(dom.entry_angle(e), ang[1]))
    path = trace_interface(config, entry)
    end = np.angle((dom.positions(path.left[-1]) + dom.positions(path.right[-1])) / 2)
    return 1 if _angdist(end, ang[2]) < _angdist(end, ang[0]) else 2


def _angdist(a: float, b: float) -> float:
    d = (a - b) % (2 * np.pi)
    return min(d, 2 * np.pi - d)


@dataclass(frozen=True)
class HookupEstimate:
    p_hat: float
    ci: tuple[float, float]
    n_samples: int
    c_target: float
    c_lattice: float
    disagreements: int


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ph = k / n
    den = 1 + z * z / n
    mid = (ph + z * z / (2 * n)) / den
    half = z * np.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


def percolation_hookup_backend(c_target: float, n: int, n_samples: int, seed: int,
                               cross_check_every: int = 10) -> HookupEstimate:
    """One-loop frequency for critical percolation in a lattice disk of radius ``n``.

    Every ``cross_check_every``-th sample is also classified by an exploration path
    and any disagreement with the connectivity answer is counted.
    """
    disk = hookup_disk(c_target, n)
    ones = 0
    bad = 0
    for s in range(n_samples):
        cfg = sample_on(disk.domain, 0.5, rng_for(seed, 17, s), seed)
        e = classify_hookup(cfg, disk)
        ones += e == 1
        if cross_check_every and s % cross_check_every == 0:
            other = classify_hookup_by_exploration(cfg, disk)
            if other is not None and other != e:
                bad += 1
    return HookupEstimate(ones / n_samples, wilson_interval(ones, n_samples), n_samples, float(c_target),
                          disk.c_lattice, bad)


# ---------------------------------------------------------------------------
# dumps


def dump_config_rle(config: PercolationConfiguration, path: str | Path) -> None:
    """Header line in JSON, then one run-length-encoded grid row per line (o=open, c=closed, x=absent)."""
    dom = config.domain
    with open(path, "w") as fh:
        fh.write(json.dumps({"width": config.width, "height": config.height, "p": config.p, "seed": config.seed,
                             "qmin": dom.qmin, "rmin": dom.rmin, "shape": list(dom.shape), "domain": dom.name}) + "\n")
        for a in range(dom.shape[0]):
            row = np.where(dom.inside[a], np.where(config.sites[a], "o", "c"), "x")
            runs = []
            start = 0
            for j in range(1, len(row) + 1):
                if j == len(row) or row[j] != row[start]:
                    runs.append(f"{row[start]}{j - start}")
                    start = j
            fh.write(" ".join(runs) + "\n")


def load_config_rle(path: str | Path, domain: LatticeDomain) -> PercolationConfiguration:
    with open(path) as fh:
        header = json.loads(fh.readline())
        sites = np.zeros(domain.shape, dtype=bool)
        for a, line in enumerate(fh):
            j = 0
            for tok in line.split():
                k = int(tok[1:])
                if tok[0] == "o":
                    sites[a, j:j + k] = True
                j += k
    return PercolationConfiguration(domain, sites, header["p"], header["seed"])


def dump_interface_csv(path_obj: InterfacePath, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "left_q", "left_r", "right_q", "right_r"])
        for t, ((lq, lr), (rq, rr)) in enumerate(path_obj.directed_edges()):
            wr.writerow([t, lq, lr, rq, rr])
