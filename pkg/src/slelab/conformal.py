"""Cross-ratios, Möbius maps and a walk-on-spheres harmonic-measure estimator."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

from .errors import DegenerateQuad, ParameterError, TopologyError
from .seeding import derive_seed

O_QUAD = (-1j, 1 + 0j, 1j, -1 + 0j)
T_RADIUS = 1 / 100
T_PRIME_RADIUS = 1 / 200

DISK = "disk"
HALF_PLANE = "halfplane"


@dataclass(frozen=True)
class BoundaryQuad:
    """Four boundary points in counterclockwise order; ``None`` or ``inf`` marks the point at infinity."""

    z: tuple
    domain: str = DISK

    def __post_init__(self):
        if len(self.z) != 4:
            raise ParameterError("a quad has four points")
        pts = tuple(None if (p is None or (np.isscalar(p) and np.isinf(abs(p)))) else complex(p) for p in self.z)
        object.__setattr__(self, "z", pts)
        finite = [p for p in pts if p is not None]
        if len(finite) < len(pts) - 1:
            raise DegenerateQuad("at most one point may sit at infinity")
        for i in range(len(finite)):
            for j in range(i + 1, len(finite)):
                if abs(finite[i] - finite[j]) < 1e-300:
                    raise DegenerateQuad("quad points must be pairwise distinct")


@dataclass(frozen=True)
class CrossRatio:
    c: float
    ci_halfwidth: float = 0.0

    def __post_init__(self):
        if not self.c > 0:
            raise ParameterError(f"cross-ratio must be positive, got {self.c}")


def _normalised_x(z1, z2, z3, z4) -> complex:
    """Image of ``z2`` under the Möbius map sending ``z1, z3, z4`` to ``0, 1, inf``."""
    if z4 is None:
        return (z2 - z1) / (z3 - z1)
    if z1 is None:
        return (z3 - z4) / (z2 - z4)
    if z2 is None:
        return (z3 - z4) / (z3 - z1)
    if z3 is None:
        return (z2 - z1) / (z2 - z4)
    return (z2 - z1) * (z3 - z4) / ((z2 - z4) * (z3 - z1))


def cross_ratio_x(quad: BoundaryQuad) -> float:
    x = _normalised_x(*quad.z)
    if abs(x.imag) > 1e-8 * max(1.0, abs(x)):
        raise TopologyError("quad points are not on a common circle or line")
    x = x.real
    if not 0 < x < 1:
        raise ParameterError("quad points are not in counterclockwise order")
    return x


def cross_ratio(quad: BoundaryQuad) -> CrossRatio:
    """Cross-ratio ``x / (1 - x)``, equal to 1 for a conformal square."""
    x = cross_ratio_x(quad)
    return CrossRatio(x / (1.0 - x))


def cross_ratio_of_points(points: Sequence[complex], domain: str = DISK) -> float:
    return cross_ratio(BoundaryQuad(tuple(points), domain)).c


def x_from_c(c: float) -> float:
    return c / (1.0 + c)


def quad_with_cross_ratio(c: float) -> tuple[complex, complex, complex, complex]:
    """Disk quad near ``(-i, 1, i, -1)`` whose cross-ratio is ``c``.

    Three points are kept at ``-i, i, -1`` and the second one slides on the right half circle.
    """
    if not c > 0:
        raise ParameterError("cross-ratio must be positive")
    # half-plane position between -1 and 1, pulled back by z -> i(1 - z)/(1 + z)
    w = complex(2 * x_from_c(c) - 1, 0)
    z2 = (1j - w) / (1j + w)
    return (-1j, z2, 1j, -1 + 0j)


# ---------------------------------------------------------------------------
# Möbius algebra


def mobius_apply(coef, z):
    a, b, c, d = coef
    z = np.asarray(z, dtype=complex)
    return (a * z + b) / (c * z + d)


def mobius_compose(m1, m2):
    """Coefficients of ``m1 o m2``."""
    a1, b1, c1, d1 = m1
    a2, b2, c2, d2 = m2
    return (a1 * a2 + b1 * c2, a1 * b2 + b1 * d2, c1 * a2 + d1 * c2, c1 * b2 + d1 * d2)


def disk_automorphism(a: complex, theta: float):
    """``z -> e^{i theta} (z - a) / (1 - conj(a) z)`` as coefficients."""
    rot = np.exp(1j * theta)
    return (rot, -rot * a, -np.conj(a), 1.0 + 0j)


def random_disk_automorphism(rng: np.random.Generator, max_radius: float = 0.9):
    r = max_radius * np.sqrt(rng.random())
    a = r * np.exp(2j * np.pi * rng.random())
    return disk_automorphism(a, 2 * np.pi * rng.random())


def mobius_invariance_check(quad: BoundaryQuad, mobius) -> tuple[float, float]:
    """Cross-ratio before and after moving the quad by ``mobius``."""
    before = cross_ratio(quad).c
    moved = []
    a, b, c, d = mobius
    for z in quad.z:
        if z is None:
            moved.append(a / c if c != 0 else None)
        else:
            den = c * z + d
            moved.append(None if abs(den) < 1e-300 else (a * z + b) / den)
    after = cross_ratio(BoundaryQuad(tuple(moved), quad.domain)).c
    return before, after


def in_T(points: Sequence[complex], radius: float = T_RADIUS) -> bool:
    """Each point lies within ``radius`` of the matching point of ``(-i, 1, i, -1)``."""
    return all(abs(complex(z) - o) < radius for z, o in zip(points, O_QUAD))


def in_T_prime(points: Sequence[complex]) -> bool:
    return in_T(points, T_PRIME_RADIUS)


# ---------------------------------------------------------------------------
# domain handles for the random-walk estimator

OUTER_NONE, OUTER_DISK, OUTER_HALF_PLANE = 0, 1, 2


@dataclass
class Arc:
    """A labelled piece of boundary.

    ``kind`` is ``"circle"`` (angle interval ``[lo, hi)`` taken counterclockwise),
    ``"line"`` (real interval ``[lo, hi)``) or ``"polyline"`` (polyline ``index`` on
    ``side`` in {"left", "right", "both"}; ``lo``/``hi`` are arclength fractions).
    """

    label: str
    kind: str
    lo: float = 0.0
    hi: float = 1.0
    index: int = 0
    side: str = "both"


@dataclass
class DomainHandle:
    """Unit disk or upper half-plane minus polylines, with a labelled boundary partition."""

    outer: str = DISK
    polylines: list = field(default_factory=list)
    arcs: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "outer": self.outer,
            "polylines": [[[float(p.real), float(p.imag)] for p in np.asarray(pl, dtype=complex)]
                          for pl in self.polylines],
            "arcs": [a.__dict__ for a in self.arcs],
        })

    @classmethod
    def from_json(cls, text: str) -> "DomainHandle":
        d = json.loads(text)
        return cls(d["outer"], [np.array([complex(x, y) for x, y in pl]) for pl in d["polylines"]],
                   [Arc(**a) for a in d["arcs"]])

    def diameter(self) -> float:
        if self.outer == DISK:
            return 2.0
        pts = np.concatenate([np.asarray(p, dtype=complex) for p in self.polylines]) if self.polylines else np.zeros(1)
        return max(2.0, float(np.ptp(pts.real) + np.ptp(pts.imag)))


@nb.njit(cache=True)
def _seg_nearest(px, py, x0, y0, x1, y1):
    dx = x1 - x0
    dy = y1 - y0
    ll = dx * dx + dy * dy
    t = 0.0
    if ll > 0:
        t = ((px - x0) * dx + (py - y0) * dy) / ll
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    qx = x0 + t * dx
    qy = y0 + t * dy
    return np.hypot(px - qx, py - qy), t


@nb.njit(cache=True)
def _boundary_distance(px, py, outer, segs):
    best = np.inf
    kind = -1
    which = -1
    param = 0.0
    if outer == 1:
        d = 1.0 - np.hypot(px, py)
        best = d
        kind = 0
        param = np.arctan2(py, px)
    elif outer == 2:
        best = py
        kind = 0
        param = px
    for s in range(segs.shape[0]):
        d, t = _seg_nearest(px, py, segs[s, 0], segs[s, 1], segs[s, 2], segs[s, 3])
        if d < best:
            best = d
            kind = 1
            which = s
            param = t
    return best, kind, which, param


@nb.njit(cache=True)
def _wos_kernel(sx, sy, outer, segs, eps, n_walks, seed, max_steps, kinds, whichs, params, sides):
    np.random.seed(seed)
    for k in range(n_walks):
        px = sx
        py = sy
        for _ in range(max_steps):
            d, kind, which, param = _boundary_distance(px, py, outer, segs)
            if d < eps:
                break
            th = 2.0 * np.pi * np.random.random()
            px += d * np.cos(th)
            py += d * np.sin(th)
        d, kind, which, param = _boundary_distance(px, py, outer, segs)
        kinds[k] = kind
        whichs[k] = which
        params[k] = param
        side = 0
        if kind == 1:
            dx = segs[which, 2] - segs[which, 0]
            dy = segs[which, 3] - segs[which, 1]
            cr = dx * (py - segs[which, 1]) - dy * (px - segs[which, 0])
            side = 1 if cr > 0 else -1
        sides[k] = side


def _segments(domain: DomainHandle):
    rows, owner, cum_lo, cum_hi = [], [], [], []
    for idx, pl in enumerate(domain.polylines):
        pl = np.asarray(pl, dtype=complex)
        lens = np.abs(np.diff(pl))
        total = lens.sum() if lens.sum() > 0 else 1.0
        acc = np.concatenate([[0.0], np.cumsum(lens)]) / total
        for s in range(len(pl) - 1):
            rows.append([pl[s].real, pl[s].imag, pl[s + 1].real, pl[s + 1].imag])
            owner.append(idx)
            cum_lo.append(acc[s])
            cum_hi.append(acc[s + 1])
    segs = np.array(rows, dtype=float).reshape(-1, 4)
    return segs, np.array(owner, dtype=np.int64), np.array(cum_lo), np.array(cum_hi)


def _angle_in(theta, lo, hi):
    two_pi = 2 * np.pi
    span = (hi - lo) % two_pi
    if span == 0 and hi != lo:
        span = two_pi
    return ((theta - lo) % two_pi) < span


@dataclass(frozen=True)
class HarmonicEstimate:
    labels: tuple[str, ...]
    probabilities: np.ndarray
    standard_errors: np.ndarray
    n_walks: int


def harmonic_measure_mc(domain: DomainHandle, start: complex, n_walks: int, step_size: float | None = None,
                        seed: int = 0, max_steps: int = 100_000) -> HarmonicEstimate:
    """Exit distribution of Brownian motion from ``start`` over the labelled arcs.

    Walk on spheres: each move jumps to a uniform point on the largest circle inside
    the domain; a walk stops once within ``step_size`` of the boundary and is
    assigned to the nearest boundary point (slit sides resolved by orientation).
    Boundary pieces not covered by any arc are reported under the label ``"rest"``.
    """
    if step_size is None:
        step_size = 1e-3 * domain.diameter()
    start = complex(start)
    segs, owner, cum_lo, cum_hi = _segments(domain)
    outer = {DISK: OUTER_DISK, HALF_PLANE: OUTER_HALF_PLANE}.get(domain.outer, OUTER_NONE)
    if outer == OUTER_DISK and abs(start) >= 1:
        raise ParameterError("start point lies outside the disk")
    if outer == OUTER_HALF_PLANE and start.imag <= 0:
        raise ParameterError("start point lies outside the half-plane")
    d0, *_ = _boundary_distance(start.real, start.imag, outer, segs)
    if d0 <= step_size:
        raise ParameterError("start point lies within step_size of the boundary")
    kinds = np.empty(n_walks, dtype=np.int64)
    whichs = np.empty(n_walks, dtype=np.int64)
    params = np.empty(n_walks)
    sides = np.empty(n_walks, dtype=np.int64)
    _wos_kernel(start.real, start.imag, outer, segs, float(step_size), int(n_walks),
                derive_seed(seed, 7) % (2**32), int(max_steps), kinds, whichs, params, sides)
    labels = [a.label for a in domain.arcs]
    uniq = list(dict.fromkeys(labels))
    assign = np.full(n_walks, -1, dtype=np.int64)
    for arc in domain.arcs:
        li = uniq.index(arc.label)
        if arc.kind == "circle":
            m = (kinds == 0) & _angle_in(params, arc.lo, arc.hi)
        elif arc.kind == "line":
            m = (kinds == 0) & (params >= arc.lo) & (params < arc.hi)
        elif arc.kind == "polyline":
            seg_ok = kinds == 1
            w = np.where(seg_ok, whichs, 0)
            frac = cum_lo[w] + params * (cum_hi[w] - cum_lo[w]) if len(cum_lo) else params
            m = seg_ok & (owner[w] == arc.index) & (frac >= arc.lo) & (frac <= arc.hi)
            if arc.side == "left":
                m &= sides > 0
            elif arc.side == "right":
                m &= sides < 0
        else:
            raise ParameterError(f"unknown arc kind {arc.kind!r}")
        assign[m & (assign < 0)] = li
    if np.any(assign < 0):
        uniq.append("rest")
        assign[assign < 0] = len(uniq) - 1
    counts = np.bincount(assign, minlength=len(uniq)).astype(float)
    p = counts / n_walks
    se = np.sqrt(p * (1 - p) / n_walks)
    return HarmonicEstimate(tuple(uniq), p, se, n_walks)


def slit_disk_harmonic_exact(slit_length: float) -> float:
    """Harmonic measure from 0 of both sides of the radial slit ``[1 - L, 1]`` in the unit disk.

    The Koebe-type map ``z / (1 + z)^2`` opens the slit domain onto the plane minus
    ``[a, inf)`` with ``a = r / (1 + r)^2``; a square root then gives the upper
    half-plane, where the slit becomes a symmetric interval.
    """
    r = 1.0 - slit_length
    a = r / (1 + r) ** 2
    half = np.sqrt(0.25 - a)
    return float(2 / np.pi * np.arctan(half / np.sqrt(a)))


# ---------------------------------------------------------------------------
# configuration cross-ratio


@nb.njit(cache=True)
def _slit_update(pts, w, dt):
    for j in range(pts.shape[0]):
        d = pts[j] - w
        r = d * d + 4.0 * dt
        s = np.sqrt(r)
        if s.imag < 0.0:
            s = -s
        elif s.imag == 0.0:
            if (s.real > 0.0 and d.real < 0.0) or (s.real < 0.0 and d.real > 0.0):
                s = -s
        pts[j] = w + s


@nb.njit(cache=True)
def _unzip_kernel(pts, strand_start, strand_stop, order, tracked):
    """Sequentially map out strands given as point ranges of ``pts``.

    ``tracked`` holds extra points (tips, origin image); it is updated in place.
    Returns the real image of each strand tip.
    """
    tips = np.empty(order.shape[0])
    for oi in range(order.shape[0]):
        s = order[oi]
        a = strand_start[s]
        b = strand_stop[s]
        for k in range(a + 1, b):
            z = pts[k]
            w = z.real
            dt = z.imag * z.imag / 4.0
            if dt > 0:
                _slit_update(pts, w, dt)
                _slit_update(tracked, w, dt)
            pts[k] = complex(w, 0.0)
        tips[s] = pts[b - 1].real
        # record the tip so later strands move it
        tracked[s] = complex(tips[s], 0.0)
    return tips


def unzip_strands(strands_h: Sequence[np.ndarray], order: Sequence[int] = (0, 3, 1, 2),
                  extra: Sequence[complex] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Map out half-plane polylines one after the other with vertical-slit steps.

    Each strand starts on the real line.  Returns the final real images of the four
    tips and of the ``extra`` points.
    """
    lens = [len(s) for s in strands_h]
    starts = np.concatenate([[0], np.cumsum(lens)[:-1]]).astype(np.int64)
    stops = (starts + np.array(lens)).astype(np.int64)
    pts = np.concatenate([np.asarray(s, dtype=complex) for s in strands_h]).astype(complex)
    tracked = np.zeros(len(strands_h) + len(extra), dtype=complex)
    for i, s in enumerate(strands_h):
        tracked[i] = complex(np.asarray(s)[0].real, 0.0)
    tracked[len(strands_h):] = np.asarray(extra, dtype=complex)
    _unzip_kernel(pts, starts, stops, np.asarray(order, dtype=np.int64), tracked)
    return tracked[:len(strands_h)].real.copy(), tracked[len(strands_h):].copy()


def _pole_between(bases: Sequence[complex]) -> float:
    """Boundary angle in the middle of the arc from the last base to the first."""
    a4 = np.angle(bases[3])
    a1 = np.angle(bases[0])
    gap = (a1 - a4) % (2 * np.pi)
    return a4 + gap / 2


def configuration_cross_ratio(strands: Sequence[np.ndarray], method: str = "loewner", n_walks: int = 20_000,
                              seed: int = 0, step_size: float = 1e-4, refine: int = 0) -> CrossRatio:
    """Cross-ratio of the strand tips in the component of the disk minus the strands containing 0.

    ``strands`` are four disk polylines, each starting on the unit circle, listed
    counterclockwise by base point.  ``method="loewner"`` maps the strands out
    sequentially; ``method="harmonic"`` estimates the arcs' harmonic measure from 0.
    """
    from .loewner import DiskEmbedding

    strands = [np.asarray(s, dtype=complex) for s in strands]
    if len(strands) != 4:
        raise ParameterError("need four strands")
    bases = [s[0] for s in strands]
    if method == "loewner":
        emb = DiskEmbedding.cayley(pole_angle=_pole_between(bases))
        hs = []
        for s in strands:
            if refine > 1 and len(s) > 1:
                t = np.linspace(0, len(s) - 1, (len(s) - 1) * refine + 1)
                s = np.interp(t, np.arange(len(s)), s.real) + 1j * np.interp(t, np.arange(len(s)), s.imag)
            h = np.asarray(emb.to_half_plane(s), dtype=complex)
            h[0] = complex(h[0].real, 0.0)
            hs.append(h)
        tips, extra = unzip_strands(hs, extra=[1j])
        if extra[0].imag <= 1e-12:
            raise TopologyError("origin is not in a component bounded by all four tips")
        c = cross_ratio(BoundaryQuad(tuple(tips), HALF_PLANE)).c
        return CrossRatio(c, 0.0)
    if method == "harmonic":
        arcs = []
        angles = [float(np.angle(b)) for b in bases]
        for j in range(4):
            nxt = (j + 1) % 4
            lab = f"arc{j + 1}"
            arcs.append(Arc(lab, "circle", angles[j], angles[nxt]))
            arcs.append(Arc(lab, "polyline", 0.0, 1.0, index=j, side="right"))
            arcs.append(Arc(lab, "polyline", 0.0, 1.0, index=nxt, side="left"))
        dom = DomainHandle(DISK, [s for s in strands], arcs)
        est = harmonic_measure_mc(dom, 0j, n_walks, step_size, seed)
        om = np.array([est.probabilities[est.labels.index(f"arc{j + 1}")] if f"arc{j + 1}" in est.labels else 0.0
                       for j in range(4)])
        if np.any(om == 0):
            raise TopologyError("an arc between consecutive tips has zero harmonic measure")
        c = _c_from_omegas(om)
        # delta method with the multinomial covariance
        cov = (np.diag(om) - np.outer(om, om)) / n_walks
        grad = np.zeros(4)
        for i in range(4):
            h = 1e-6
            e = np.zeros(4)
            e[i] = h
            grad[i] = (_c_from_omegas(om + e) - _c_from_omegas(om - e)) / (2 * h)
        se = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
        return CrossRatio(c, 1.96 * se)
    raise ParameterError(f"unknown method {method!r}")


def _c_from_omegas(om: np.ndarray) -> float:
    om = np.asarray(om, dtype=float) / np.sum(om)
    th = 2 * np.pi * np.concatenate([[0.0], np.cumsum(om[:3])])
    return cross_ratio(BoundaryQuad(tuple(np.exp(1j * th)), DISK)).c


def radial_slits(lengths: Sequence[float], angles: Sequence[float], n_points: int = 200) -> list[np.ndarray]:
    """Straight radial slits from the unit circle inward."""
    out = []
    for L, a in zip(lengths, angles):
        r = np.linspace(1.0, 1.0 - L, max(2, n_points))
        out.append(r * np.exp(1j * a))
    return out
