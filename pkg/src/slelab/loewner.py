"""Discrete Loewner chains in the upper half-plane.

A chain is a sequence of elementary slit maps.  Step ``k`` carries a capacity
increment ``dt_k`` and the driving value ``w_k`` in force during that step.  The
forward map composes the slit maps in order; the curve tip is recovered by the
zipper, i.e. by pulling the current driving value back through the inverse maps.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numba as nb
import numpy as np

from .errors import NumericError, ParameterError, PointAtInfinity, SwallowedPoint

VERTICAL = "vertical"
TILTED = "tilted"
SLIT_VARIANTS = (VERTICAL, TILTED)

SWALLOW_TOL = 1e-12

TRACE_MAGIC = b"SLTR"
TRACE_VERSION = 1


# ---------------------------------------------------------------------------
# elementary maps (numba kernels; also used by the driving and ensemble code)


@nb.njit(cache=True, inline="always")
def _upper_sqrt(r, ref):
    """Square root with nonnegative imaginary part.

    When the root is real the sign follows ``ref.real`` so that real points keep
    their side of the driving value.
    """
    s = np.sqrt(r)
    if s.imag < 0.0:
        s = -s
    elif s.imag == 0.0:
        if (s.real > 0.0 and ref.real < 0.0) or (s.real < 0.0 and ref.real > 0.0):
            s = -s
    return s


@nb.njit(cache=True)
def _tilt_alpha(dt, dw):
    u = dw / (2.0 * np.sqrt(dt))
    return 0.5 + u / (2.0 * np.sqrt(4.0 + u * u))


@nb.njit(cache=True)
def _tilt_roots(dt, alpha):
    span = 2.0 * np.sqrt(dt / (alpha * (1.0 - alpha)))
    return alpha * span, -(1.0 - alpha) * span


@nb.njit(cache=True)
def _tilted_inverse(z, dt, w_start, alpha):
    """Preimage under a straight slit of capacity ``dt`` leaving ``w_start`` at angle (1-alpha)*pi."""
    a, b = _tilt_roots(dt, alpha)
    zeta = z - w_start
    p1 = (zeta - a) ** (1.0 - alpha)
    p2 = (zeta - b) ** alpha
    out = w_start + p1 * p2
    if out.imag < 0.0:
        out = complex(out.real, 0.0)
    return out


@nb.njit(cache=True)
def _tilted_forward(z, dt, w_start, alpha):
    """Forward tilted slit map by Newton iteration on the explicit inverse."""
    a, b = _tilt_roots(dt, alpha)
    target = z - w_start
    # vertical map as starting guess
    zeta = _upper_sqrt(target * target + 4.0 * dt, target)
    if zeta.imag < 1e-300:
        zeta = complex(zeta.real, 1e-14)
    for _ in range(60):
        fa = (zeta - a) ** (1.0 - alpha)
        fb = (zeta - b) ** alpha
        f = fa * fb - target
        dfz = fa * fb * ((1.0 - alpha) / (zeta - a) + alpha / (zeta - b))
        if dfz == 0:
            break
        step = f / dfz
        nxt = zeta - step
        if nxt.imag < 0.0:
            nxt = complex(nxt.real, 0.5 * zeta.imag)
        zeta = nxt
        if abs(step) < 1e-15 * (1.0 + abs(zeta)):
            break
    return w_start + zeta


@nb.njit(cache=True)
def _forward_kernel(dts, ws, wend, tilted, zs, out, swallowed):
    n = dts.shape[0]
    for p in range(zs.shape[0]):
        z = zs[p]
        swallowed[p] = -1
        was_interior = z.imag > SWALLOW_TOL
        for k in range(n):
            if tilted:
                z = _tilted_forward(z, dts[k], ws[k], _tilt_alpha(dts[k], wend[k] - ws[k]))
                if was_interior and abs(z - wend[k]) <= 1e-6 * np.sqrt(dts[k]):
                    swallowed[p] = k + 1
                    break
                was_interior = z.imag > SWALLOW_TOL
            else:
                d = z - ws[k]
                r = d * d + 4.0 * dts[k]
                if was_interior and abs(r) <= SWALLOW_TOL * (abs(d * d) + 4.0 * dts[k]):
                    swallowed[p] = k + 1
                    z = complex(ws[k], 0.0)
                    break
                z = ws[k] + _upper_sqrt(r, d)
                was_interior = z.imag > SWALLOW_TOL
        out[p] = z


@nb.njit(cache=True)
def _zipper_kernel(dts, ws, wend, tilted, record_after, out):
    """Curve points after ``record_after[p]`` steps (sorted ascending)."""
    m = record_after.shape[0]
    for p in range(m):
        j = record_after[p]
        out[p] = complex(wend[j - 1], 0.0) if j > 0 else complex(ws[0] if ws.shape[0] else 0.0, 0.0)
    # points recorded after j steps need the inverse maps of steps j-1, ..., 0
    first = m
    for k in range(dts.shape[0] - 1, -1, -1):
        while first > 0 and record_after[first - 1] > k:
            first -= 1
        for p in range(first, m):
            z = out[p]
            if tilted:
                z = _tilted_inverse(z, dts[k], ws[k], _tilt_alpha(dts[k], wend[k] - ws[k]))
            else:
                d = z - ws[k]
                z = ws[k] + _upper_sqrt(d * d - 4.0 * dts[k], d)
            if not (z.imag >= -SWALLOW_TOL) or z.real != z.real:
                out[p] = complex(np.nan, np.nan)
                return k + 1
            out[p] = z
    return 0


# ---------------------------------------------------------------------------
# public API


def slit_advance(z: complex, dt: float, w: float) -> complex:
    """Vertical slit map ``w + sqrt((z - w)^2 + 4 dt)`` on the upper branch.

    Points on the slit land on the real line.  An interior point at the slit tip
    (vanishing radicand) is absorbed and raises :class:`SwallowedPoint`.
    """
    if dt < 0:
        raise ParameterError("capacity increment must be nonnegative")
    z = complex(z)
    if dt == 0:
        return z
    d = z - w
    r = d * d + 4.0 * dt
    if z.imag > SWALLOW_TOL and abs(r) <= SWALLOW_TOL * (abs(d * d) + 4.0 * dt):
        raise SwallowedPoint(1)
    return w + complex(_upper_sqrt(r, d))


@dataclass(frozen=True)
class LoewnerChain:
    """Immutable sequence of slit steps.

    ``ws[k]`` is the driving value at the start of step ``k``.  For the tilted
    variant the step also needs the value at its end, taken from ``ws[k+1]`` or
    ``w_final`` for the last step.
    """

    dts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ws: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slit_variant: str = VERTICAL
    w_final: float | None = None
    capacity_exact: Fraction = Fraction(0)

    def __post_init__(self):
        if self.slit_variant not in SLIT_VARIANTS:
            raise ParameterError(f"unknown slit variant {self.slit_variant!r}")
        for name in ("dts", "ws"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.dts.shape != self.ws.shape:
            raise ParameterError("dts and ws must have equal length")

    @classmethod
    def from_arrays(cls, dts: Sequence[float], ws: Sequence[float], slit_variant: str = VERTICAL,
                    w_final: float | None = None) -> "LoewnerChain":
        dts = np.asarray(dts, dtype=float)
        if dts.size and not np.all(dts > 0):
            raise ParameterError("every capacity increment must be positive")
        if dts.size and np.all(dts == dts[0]):
            cap = Fraction(float(dts[0])) * dts.size
        else:
            cap = exact_float_sum(dts)
        return cls(dts, np.asarray(ws, dtype=float), slit_variant, w_final, cap)

    def __len__(self) -> int:
        return int(self.dts.shape[0])

    @property
    def total_capacity(self) -> float:
        return float(self.capacity_exact)

    @property
    def current_driving(self) -> float:
        if self.w_final is not None:
            return float(self.w_final)
        return float(self.ws[-1]) if len(self) else 0.0

    def end_values(self) -> np.ndarray:
        """Driving value at the end of each step."""
        if not len(self):
            return np.zeros(0)
        tail = self.current_driving
        return np.append(self.ws[1:], tail)

    def steps(self) -> list[tuple[float, float]]:
        return list(zip(self.dts.tolist(), self.ws.tolist()))


def exact_float_sum(values) -> Fraction:
    """Exact rational sum of binary floats (all denominators are powers of two)."""
    ratios = [float(x).as_integer_ratio() for x in np.asarray(values, dtype=float).ravel()]
    if not ratios:
        return Fraction(0)
    den = max(d for _, d in ratios)
    return Fraction(sum(n * (den // d) for n, d in ratios), den)


def chain_push(chain: LoewnerChain, dt: float, w: float) -> LoewnerChain:
    """Return a new chain with one more step; the input chain is untouched."""
    if not dt > 0:
        raise ParameterError(f"capacity increment must be positive, got {dt}")
    return LoewnerChain(np.append(chain.dts, dt), np.append(chain.ws, w), chain.slit_variant,
                        None, chain.capacity_exact + Fraction(float(dt)))


def concatenate(first: LoewnerChain, second: LoewnerChain) -> LoewnerChain:
    if first.slit_variant != second.slit_variant:
        raise ParameterError("cannot concatenate chains with different slit variants")
    return LoewnerChain(np.concatenate([first.dts, second.dts]), np.concatenate([first.ws, second.ws]),
                        first.slit_variant, second.w_final, first.capacity_exact + second.capacity_exact)


@dataclass(frozen=True)
class Swallowed:
    """Result of :func:`forward_map` for a point absorbed by the hull."""

    step: int


def forward_map_many(chain: LoewnerChain, zs: Iterable[complex]) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised forward map; second array holds the swallow step (-1 if none)."""
    zs = np.ascontiguousarray(np.asarray(list(zs) if not isinstance(zs, np.ndarray) else zs, dtype=complex))
    out = np.empty_like(zs)
    sw = np.empty(zs.shape[0], dtype=np.int64)
    _forward_kernel(chain.dts, chain.ws, chain.end_values() if chain.slit_variant == TILTED else chain.ws,
                    chain.slit_variant == TILTED, zs, out, sw)
    return out, sw


def forward_map(chain: LoewnerChain, z: complex) -> complex | Swallowed:
    out, sw = forward_map_many(chain, [z])
    if sw[0] >= 0:
        return Swallowed(int(sw[0]))
    return complex(out[0])


@dataclass(frozen=True)
class Trace:
    points: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=complex))
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))

    def __len__(self) -> int:
        return int(self.points.shape[0])


def trace_points(chain: LoewnerChain, record_after: Sequence[int]) -> np.ndarray:
    """Curve points after the given numbers of steps (each in ``0..len(chain)``)."""
    idx = np.asarray(record_after, dtype=np.int64)
    order = np.argsort(idx, kind="stable")
    sorted_idx = np.ascontiguousarray(idx[order])
    if sorted_idx.size and (sorted_idx[0] < 0 or sorted_idx[-1] > len(chain)):
        raise ParameterError("record index outside the chain")
    out = np.empty(sorted_idx.shape[0], dtype=complex)
    if len(chain) == 0:
        out[:] = 0.0
    else:
        bad = _zipper_kernel(chain.dts, chain.ws, chain.end_values(), chain.slit_variant == TILTED,
                             sorted_idx, out)
        if bad:
            raise NumericError("inverse slit map left the closed half-plane", step=int(bad))
    res = np.empty_like(out)
    res[order] = out
    return res


def trace_tip(chain: LoewnerChain) -> complex:
    """Tip of the curve generated by the whole chain."""
    if len(chain) == 0:
        raise ParameterError("trace_tip needs a nonempty chain")
    return complex(trace_points(chain, [len(chain)])[0])


def extract_trace(chain: LoewnerChain, stride: int = 1) -> Trace:
    """Curve sampled every ``stride`` steps, starting with the base point."""
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    n = len(chain)
    idx = list(range(stride, n + 1, stride))
    if not idx or idx[-1] != n:
        idx.append(n)
    idx = [0] + idx if n else [0]
    pts = trace_points(chain, idx)
    pts[0] = complex(chain.ws[0] if n else 0.0, 0.0)
    cum = np.concatenate([[0.0], np.cumsum(chain.dts)])
    return Trace(pts, cum[np.asarray(idx)])


# ---------------------------------------------------------------------------
# disk <-> half-plane transport


@dataclass(frozen=True)
class DiskEmbedding:
    """Möbius map ``(a z + b) / (c z + d)`` from the unit disk onto the upper half-plane."""

    mobius: tuple[complex, complex, complex, complex] = (1, 0, 0, 1)
    marked_root: complex = -1j

    def __post_init__(self):
        a, b, c, d = (complex(x) for x in self.mobius)
        if abs(a * d - b * c) < 1e-300:
            raise ParameterError("Möbius coefficient matrix is singular")
        object.__setattr__(self, "mobius", (a, b, c, d))

    @classmethod
    def cayley(cls, pole_angle: float = np.pi, marked_root: complex = -1j) -> "DiskEmbedding":
        """Disk to half-plane with ``0 -> i`` and the boundary point at ``pole_angle`` sent to infinity.

        The default pole at -1 sends (-i, 1, i, -1) to (-1, 0, 1, inf).
        """
        rot = np.exp(-1j * (pole_angle - np.pi))
        # z -> i (1 - rot z) / (1 + rot z)
        return cls((-1j * rot, 1j, rot, 1.0), marked_root)

    @property
    def inverse(self) -> tuple[complex, complex, complex, complex]:
        a, b, c, d = self.mobius
        return (d, -b, -c, a)

    @staticmethod
    def _apply(coef, z):
        a, b, c, d = coef
        z = np.asarray(z, dtype=complex)
        den = c * z + d
        if np.any(np.abs(den) < 1e-300):
            raise PointAtInfinity("point sits at the pole of the Möbius map")
        return (a * z + b) / den

    def to_half_plane(self, z):
        return self._apply(self.mobius, z)

    def to_disk(self, w):
        w = np.asarray(w, dtype=complex)
        if np.any(np.isinf(w)):
            a, b, c, d = self.inverse
            res = np.where(np.isinf(w), -d / c if c != 0 else np.inf, 0)
            finite = ~np.isinf(w)
            res = res.astype(complex)
            res[finite] = self._apply(self.inverse, w[finite])
            return res
        return self._apply(self.inverse, w)


def disk_transport(embedding: DiskEmbedding, obj, direction: str = "to_disk"):
    """Move a point, array of points or :class:`Trace` between half-plane and disk."""
    fn = embedding.to_disk if direction == "to_disk" else embedding.to_half_plane
    if direction not in ("to_disk", "to_half_plane"):
        raise ParameterError(f"unknown direction {direction!r}")
    if isinstance(obj, Trace):
        return Trace(fn(obj.points), obj.times.copy())
    out = fn(obj)
    return complex(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# trace dumps


def dump_trace_binary(trace: Trace, path: str | Path) -> None:
    pts = np.asarray(trace.points, dtype=complex)
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC)
        fh.write(struct.pack("<IQ", TRACE_VERSION, pts.shape[0]))
        fh.write(np.column_stack([pts.real, pts.imag]).astype("<f8").tobytes())


def load_trace_binary(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != TRACE_MAGIC:
        raise ValueError("not a trace dump (bad magic)")
    version, count = struct.unpack("<IQ", data[4:16])
    if version != TRACE_VERSION:
        raise ValueError(f"unsupported trace dump version {version}")
    vals = np.frombuffer(data[16:16 + 16 * count], dtype="<f8").reshape(count, 2)
    return vals[:, 0] + 1j * vals[:, 1]


def trace_to_json(trace: Trace) -> str:
    return json.dumps([[float(p.real), float(p.imag)] for p in trace.points])


def trace_from_json(text: str) -> np.ndarray:
    pairs = json.loads(text)
    return np.array([complex(x, y) for x, y in pairs], dtype=complex)
