"""Grid-based conformal map from the upper half-plane onto a polygon.

The polygon boundary is split into a "base" arc (from ``a`` to ``b``) and the rest.
We solve for the harmonic function ``v`` equal to 0 on the base arc and ``pi`` on the
rest, integrate its conjugate ``u`` across the grid, and read ``u + i v`` as strip
coordinates of ``log`` of a half-plane point.  Half-plane points are then placed by
interpolating grid positions in strip coordinates.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.sparse.linalg import spsolve

from .errors import NumericError, TopologyError


def points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd test for complex ``pts`` against a closed or open complex polygon."""
    pts = np.asarray(pts, dtype=complex).ravel()
    poly = np.asarray(poly, dtype=complex)
    if poly[0] != poly[-1]:
        poly = np.append(poly, poly[0])
    x, y = pts.real[:, None], pts.imag[:, None]
    x0, y0 = poly.real[:-1][None, :], poly.imag[:-1][None, :]
    x1, y1 = poly.real[1:][None, :], poly.imag[1:][None, :]
    cond = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    hits = cond & (x < xc)
    return (hits.sum(axis=1) % 2) == 1


def signed_area(poly: np.ndarray) -> float:
    """Shoelace area; positive for counterclockwise polygons."""
    p = np.asarray(poly, dtype=complex)
    return 0.5 * float(np.sum(p.real * np.roll(p.imag, -1) - np.roll(p.real, -1) * p.imag))


def _distance_to_polyline(pts: np.ndarray, line: np.ndarray) -> np.ndarray:
    a = line[:-1][None, :]
    b = line[1:][None, :]
    p = pts[:, None]
    ab = b - a
    denom = np.where(np.abs(ab) > 0, np.abs(ab) ** 2, 1.0)
    t = np.clip(((p - a) * np.conj(ab)).real / denom, 0.0, 1.0)
    return np.min(np.abs(p - (a + t * ab)), axis=1) if line.shape[0] > 1 else np.abs(pts - line[0])


@dataclass
class PolygonUniformizer:
    """Map from the upper half-plane onto a polygon with ``0 -> a`` and ``inf -> b``.

    ``base`` is the boundary polyline from ``a`` to ``b`` (traversed with the
    polygon on its left) and ``rest`` the polyline from ``b`` back to ``a``.
    """

    base: np.ndarray
    rest: np.ndarray
    resolution: int = 80
    keep_largest: bool = False

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=complex)
        self.rest = np.asarray(self.rest, dtype=complex)
        poly = np.concatenate([self.base, self.rest[1:]])
        self.polygon = poly
        if abs(signed_area(poly)) < 1e-14:
            raise TopologyError("polygon has zero area")
        lo = complex(poly.real.min(), poly.imag.min())
        hi = complex(poly.real.max(), poly.imag.max())
        h = max(hi.real - lo.real, hi.imag - lo.imag) / self.resolution
        nx = int(np.ceil((hi.real - lo.real) / h)) + 3
        ny = int(np.ceil((hi.imag - lo.imag) / h)) + 3
        xs = lo.real - h + h * np.arange(nx)
        ys = lo.imag - h + h * np.arange(ny)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        Z = X + 1j * Y
        inside = points_in_polygon(Z.ravel(), poly).reshape(Z.shape)
        if self.keep_largest and inside.any():
            # self-touching boundaries pinch the interior; work in the biggest piece
            lab, count = ndimage.label(inside)
            if count > 1:
                sizes = np.bincount(lab.ravel())[1:]
                inside = lab == 1 + int(np.argmax(sizes))
        if inside.sum() < 4:
            raise TopologyError("polygon too thin for the grid")
        self.h = h
        self.grid = Z
        self.inside = inside
        self._solve()

    def _solve(self):
        inside = self.inside
        Z = self.grid
        idx = -np.ones(inside.shape, dtype=np.int64)
        idx[inside] = np.arange(inside.sum())
        n = int(inside.sum())
        rows, cols, vals = [], [], []
        rhs = np.zeros(n)
        dist_base_cache = {}
        nbrs = ((1, 0), (-1, 0), (0, 1), (0, -1))
        ii, jj = np.nonzero(inside)
        for k, (i, j) in enumerate(zip(ii.tolist(), jj.tolist())):
            rows.append(k)
            cols.append(k)
            vals.append(4.0)
            for di, dj in nbrs:
                a, b = i + di, j + dj
                if inside[a, b]:
                    rows.append(k)
                    cols.append(idx[a, b])
                    vals.append(-1.0)
                else:
                    key = (a, b)
                    if key not in dist_base_cache:
                        mid = (Z[i, j] + Z[a, b]) / 2
                        db = _distance_to_polyline(np.array([mid]), self.base)[0]
                        dr = _distance_to_polyline(np.array([mid]), self.rest)[0]
                        dist_base_cache[key] = 0.0 if db <= dr else np.pi
                    rhs[k] += dist_base_cache[key]
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        v = spsolve(A, rhs)
        V = np.full(inside.shape, np.nan)
        V[inside] = v
        # conjugate by integrating u_x = v_y, u_y = -v_x along a breadth-first tree
        gx = np.full(inside.shape, np.nan)
        gy = np.full(inside.shape, np.nan)
        Vp = np.where(inside, V, np.nan)
        for i, j in zip(ii.tolist(), jj.tolist()):
            gx[i, j] = _central(Vp, i, j, 1, 0) / self.h
            gy[i, j] = _central(Vp, i, j, 0, 1) / self.h
        U = np.full(inside.shape, np.nan)
        start = (ii[0], jj[0])
        U[start] = 0.0
        q = deque([start])
        while q:
            i, j = q.popleft()
            for di, dj in nbrs:
                a, b = i + di, j + dj
                if inside[a, b] and np.isnan(U[a, b]):
                    if di:
                        du = 0.5 * (gy[i, j] + gy[a, b]) * self.h * di
                    else:
                        du = -0.5 * (gx[i, j] + gx[a, b]) * self.h * dj
                    U[a, b] = U[i, j] + du
                    q.append((a, b))
        if np.isnan(U[inside]).any():
            raise TopologyError("polygon interior is not connected on the grid")
        if np.ptp(U[inside]) < 1e-9 or np.ptp(V[inside]) < 1e-9:
            raise TopologyError("polygon interior does not see both boundary arcs")
        self.U = U
        self.V = V
        pts = np.column_stack([U[inside], V[inside]])
        self._uv = pts
        self._xy = Z[inside]
        self._linear = None
        self._nearest = None

    @property
    def u_range(self) -> tuple[float, float]:
        return float(self._uv[:, 0].min()), float(self._uv[:, 0].max())

    def from_half_plane(self, zeta) -> np.ndarray:
        """Images of half-plane points (``0`` goes to ``a``, ``inf`` to ``b``)."""
        zeta = np.asarray(zeta, dtype=complex)
        flat = zeta.ravel()
        with np.errstate(divide="ignore"):
            su = np.log(np.abs(flat))
        sv = np.angle(flat)
        sv = np.clip(sv, 0.0, np.pi)
        umin, umax = self.u_range
        # centre the conjugate so that |zeta| = 1 sits mid-range
        shift = 0.5 * (umin + umax)
        su = np.clip(su + shift, umin, umax)
        q = np.column_stack([su, sv])
        if self._linear is None:
            self._linear = LinearNDInterpolator(self._uv, self._xy)
            self._nearest = NearestNDInterpolator(self._uv, self._xy)
        out = np.asarray(self._linear(q), dtype=complex)
        bad = np.isnan(out)
        if bad.any():
            out[bad] = self._nearest(q[bad])
        if not np.all(np.isfinite(out)):
            raise NumericError("uniformizer interpolation failed")
        return out.reshape(zeta.shape)

    def to_strip(self, z) -> np.ndarray:
        """Strip coordinates ``u + i v`` of polygon points (nearest grid node)."""
        z = np.asarray(z, dtype=complex).ravel()
        i = np.clip(np.rint((z.real - self.grid[0, 0].real) / self.h).astype(int), 0, self.inside.shape[0] - 1)
        j = np.clip(np.rint((z.imag - self.grid[0, 0].imag) / self.h).astype(int), 0, self.inside.shape[1] - 1)
        return self.U[i, j] + 1j * self.V[i, j]


def _central(V, i, j, di, dj):
    f = V[i + di, j + dj]
    b = V[i - di, j - dj]
    c = V[i, j]
    if not np.isnan(f) and not np.isnan(b):
        return 0.5 * (f - b)
    if not np.isnan(f):
        return f - c
    if not np.isnan(b):
        return c - b
    return 0.0
