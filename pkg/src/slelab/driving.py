"""Driving processes for SLE_kappa and SLE_kappa(rho) with force points."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba as nb
import numpy as np

from .errors import ParameterError
from .loewner import VERTICAL, DiskEmbedding, LoewnerChain, Trace
from .seeding import derive_seed, rng_for

RIGHT = 1
LEFT = -1


def _side_code(side) -> int:
    if side in (RIGHT, "right", "R", "+"):
        return RIGHT
    if side in (LEFT, "left", "L", "-"):
        return LEFT
    raise ParameterError(f"force point side must be 'left' or 'right', got {side!r}")


@dataclass(frozen=True)
class DrivingPath:
    """Driving values on a uniform time grid ``0, dt, ..., n dt``.

    ``force_points`` has one row per force point; ``sides`` holds +1 (right) or -1 (left).
    """

    kappa: float
    dt: float
    w: np.ndarray
    force_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    rhos: tuple[float, ...] = ()
    sides: tuple[int, ...] = ()
    collisions: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        w = np.asarray(self.w, dtype=float)
        fp = np.asarray(self.force_points, dtype=float)
        if fp.size == 0:
            fp = np.zeros((0, w.shape[0]))
        if fp.shape[1] != w.shape[0]:
            raise ParameterError("force point sequences must match the driving length")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "force_points", fp)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.w.shape[0]) * self.dt

    @property
    def n_steps(self) -> int:
        return self.w.shape[0] - 1

    def to_chain(self, slit_variant: str = VERTICAL) -> LoewnerChain:
        n = self.n_steps
        return LoewnerChain.from_arrays(np.full(n, self.dt), self.w[:-1], slit_variant, float(self.w[-1]))

    def sides_preserved(self) -> bool:
        for row, side in zip(self.force_points, self.sides):
            if side == RIGHT and np.any(row < self.w):
                return False
            if side == LEFT and np.any(row > self.w):
                return False
        return True


def sample_brownian_driving(kappa: float, T: float, dt: float, seed: int) -> DrivingPath:
    """``W = sqrt(kappa) B`` on ``[0, T]``; increments are N(0, kappa dt)."""
    if kappa < 0 or not T > 0 or not dt > 0:
        raise ParameterError("need kappa >= 0, T > 0, dt > 0")
    n = int(round(T / dt))
    rng = rng_for(seed, 0)
    inc = rng.standard_normal(n) * np.sqrt(kappa * dt)
    w = np.concatenate([[0.0], np.cumsum(inc)])
    return DrivingPath(kappa, dt, w)


@nb.njit(cache=True)
def _bessel_update(y, kappa, dt, rho):
    """Exact transition of ``Y`` with ``dY = sqrt(kappa) dB + (rho + 2) dt / Y`` over ``dt``.

    ``(Y / sqrt(kappa))`` is a Bessel process of dimension ``1 + 2 (rho + 2) / kappa``;
    its square over ``dt`` is a scaled noncentral chi-square (Poisson mixture of gammas).
    """
    dim = 1.0 + 2.0 * (rho + 2.0) / kappa
    lam = y * y / (kappa * dt)
    k = np.random.poisson(lam / 2.0) if lam > 0 else 0
    chi2 = 2.0 * np.random.gamma(dim / 2.0 + k, 1.0)
    return np.sqrt(kappa * dt * chi2)


@nb.njit(cache=True)
def _single_force_kernel(kappa, rho, side, v0, n, dt, seed, w, v):
    np.random.seed(seed)
    sk = np.sqrt(kappa)
    eps_col = 10.0 * np.sqrt(kappa * dt)
    w[0] = 0.0
    v[0] = v0
    collisions = 0
    for k in range(n):
        y = side * (v[k] - w[k])  # distance to the force point, >= 0
        use_exact = y < eps_col
        if not use_exact:
            db = np.random.normal() * np.sqrt(dt)
            wn = w[k] + sk * db - side * rho * dt / y
            vn = v[k] + side * 2.0 * dt / y
            if side * (vn - wn) < 0.0:
                use_exact = True
            else:
                w[k + 1] = wn
                v[k + 1] = vn
        if use_exact:
            # exact law for the gap, Brownian part of W kept as is
            collisions += 1
            db = np.random.normal() * np.sqrt(dt)
            yn = _bessel_update(y, kappa if kappa > 0 else 1e-300, dt, rho)
            integral = min(2.0 * dt / (y + yn) if y + yn > 0 else dt / eps_col, dt / eps_col)
            wn = w[k] + sk * db - side * rho * integral
            w[k + 1] = wn
            v[k + 1] = wn + side * yn
    return collisions


@nb.njit(cache=True)
def _multi_force_kernel(kappa, rhos, sides, v0, n, dt, normals, w, v):
    sk = np.sqrt(kappa)
    eps_col = 10.0 * np.sqrt(kappa * dt)
    cap = 1.0 / eps_col if eps_col > 0 else np.inf
    m = rhos.shape[0]
    w[0] = 0.0
    for i in range(m):
        v[i, 0] = v0[i]
    clamped = 0
    for k in range(n):
        drift = 0.0
        for i in range(m):
            d = w[k] - v[i, k]
            inv = 1.0 / d if d != 0.0 else -sides[i] * cap
            if abs(inv) > cap:
                inv = cap if inv > 0 else -cap
                clamped += 1
            drift += rhos[i] * inv
        wn = w[k] + sk * normals[k] * np.sqrt(dt) + drift * dt
        w[k + 1] = wn
        for i in range(m):
            d = v[i, k] - w[k]
            inv = 1.0 / d if d != 0.0 else sides[i] * cap
            if abs(inv) > cap:
                inv = cap if inv > 0 else -cap
            vn = v[i, k] + 2.0 * dt * inv
            if sides[i] * (vn - wn) < 0.0:
                vn = wn
            v[i, k + 1] = vn
    return clamped


def sample_sle_kappa_rho(kappa: float, rhos: Sequence[tuple[float, float, object]], T: float, dt: float,
                         seed: int) -> DrivingPath:
    """Euler scheme for SLE_kappa(rho_1, ..., rho_m).

    ``rhos`` lists ``(weight, initial position, side)``.  Near a collision with a
    single force point the step is replaced by the exact Bessel transition; with
    several force points the drift is clamped instead.
    """
    if not kappa > 0 or not T > 0 or not dt > 0:
        raise ParameterError("need kappa > 0, T > 0, dt > 0")
    weights = np.array([float(r[0]) for r in rhos], dtype=float)
    if np.any(weights <= -2):
        raise ParameterError("force point weights must exceed -2; rho <= -2 is handled by the trunk construction")
    starts = np.array([float(r[1]) for r in rhos], dtype=float)
    sides = np.array([_side_code(r[2]) for r in rhos], dtype=np.int64)
    for x, s in zip(starts, sides):
        if s * x < 0:
            raise ParameterError("force point starts on the wrong side of the driving value")
    n = int(round(T / dt))
    if len(rhos) == 0:
        path = sample_brownian_driving(kappa, T, dt, seed)
        return path
    w = np.empty(n + 1)
    if len(rhos) == 1:
        v = np.empty(n + 1)
        col = _single_force_kernel(float(kappa), float(weights[0]), int(sides[0]), float(starts[0]), n, float(dt),
                                   derive_seed(seed, 1) % (2**32), w, v)
        fp = v[None, :]
    else:
        normals = rng_for(seed, 0).standard_normal(n)
        fp = np.empty((len(rhos), n + 1))
        col = _multi_force_kernel(float(kappa), weights, sides, starts, n, float(dt), normals, w, fp)
    return DrivingPath(float(kappa), float(dt), w, fp, tuple(weights.tolist()), tuple(int(s) for s in sides), int(col))


def hitting_time_radius(trace: Trace, embedding: DiskEmbedding, r: float) -> float | None:
    """First recorded time whose disk image lies within radius ``r`` of the origin."""
    if not 0 < r <= 1:
        raise ParameterError("radius must lie in (0, 1]")
    if r >= 1:
        return float(trace.times[0])
    pts = embedding.to_disk(trace.points)
    hit = np.nonzero(np.abs(pts) <= r)[0]
    return float(trace.times[hit[0]]) if hit.size else None


def dump_driving_csv(path_obj: DrivingPath, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "w"] + [f"v_{i + 1}" for i in range(path_obj.force_points.shape[0])])
        for k, t in enumerate(path_obj.times):
            wr.writerow([repr(float(t)), repr(float(path_obj.w[k]))]
                        + [repr(float(x)) for x in path_obj.force_points[:, k]])
