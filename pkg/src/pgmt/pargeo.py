"""Space-time geometry: parabolic metric, cubes, planes, projections and cones.

Points of R^{n+1} are stored as arrays whose last entry is time and whose
first ``n`` entries are spatial.  Batches of points are ``(N, n+1)`` arrays.
The distinguished spatial coordinate (the graph direction) is the last
spatial coordinate unless stated otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PointST:
    """A point (X, t) of space-time."""

    spatial: tuple
    time: float

    def __post_init__(self):
        sp = tuple(float(v) for v in np.atleast_1d(self.spatial))
        object.__setattr__(self, "spatial", sp)
        object.__setattr__(self, "time", float(self.time))
        if not all(np.isfinite(sp)) or not np.isfinite(self.time):
            raise ValueError("PointST coordinates must be finite")

    @property
    def n(self) -> int:
        return len(self.spatial)

    def as_array(self) -> np.ndarray:
        return np.array(self.spatial + (self.time,), dtype=float)

    @classmethod
    def from_array(cls, a) -> "PointST":
        a = np.asarray(a, dtype=float)
        return cls(tuple(a[:-1]), a[-1])


def as_points(p) -> np.ndarray:
    """Coerce a PointST, a point array or a batch into an ``(N, n+1)`` array."""
    if isinstance(p, PointST):
        return p.as_array()[None, :]
    a = np.asarray(p, dtype=float)
    if a.ndim == 1:
        return a[None, :]
    return a


def par_dist(a, b) -> np.ndarray | float:
    """Parabolic distance ``|X - Y| + |t - s|^{1/2}``.

    Accepts PointST values or arrays; broadcasting follows numpy rules on the
    leading axes.  Returns a float when both arguments are single points.
    """
    scalar = (isinstance(a, PointST) or np.ndim(a) == 1) and (
        isinstance(b, PointST) or np.ndim(b) == 1)
    A = a.as_array() if isinstance(a, PointST) else np.asarray(a, dtype=float)
    B = b.as_array() if isinstance(b, PointST) else np.asarray(b, dtype=float)
    diff = A - B
    d = np.sqrt(np.sum(diff[..., :-1] ** 2, axis=-1)) + np.sqrt(np.abs(diff[..., -1]))
    return float(d) if scalar else d


def dilate(p, lam: float):
    """Parabolic dilation (X, t) -> (lam X, lam^2 t)."""
    if isinstance(p, PointST):
        return PointST(tuple(lam * v for v in p.spatial), lam * lam * p.time)
    a = np.array(p, dtype=float, copy=True)
    a[..., :-1] *= lam
    a[..., -1] *= lam * lam
    return a


def project_pi(p, axis: int = -1):
    """Drop the distinguished spatial coordinate, keeping time.

    ``axis`` indexes the spatial coordinates (default: the last one).
    """
    single = isinstance(p, PointST)
    a = p.as_array() if single else np.asarray(p, dtype=float)
    n = a.shape[-1] - 1
    ax = axis % n
    keep = [i for i in range(n + 1) if i != ax]
    out = a[..., keep]
    return out


@dataclass(frozen=True)
class ParCube:
    """Open parabolic cube ``Q_r(X,t) = {|y_i - x_i| < r, |s - t| < r^2}``."""

    center: PointST
    half_length: float

    def __post_init__(self):
        if not self.half_length > 0:
            raise ValueError("half_length must be positive")

    @property
    def n(self) -> int:
        return self.center.n

    def contains(self, pts, closed: bool = False, half: int = 0) -> np.ndarray:
        """Membership mask.  ``half=+1`` keeps s >= t, ``half=-1`` keeps s <= t."""
        P = as_points(pts)
        c = self.center.as_array()
        r = self.half_length
        d = P - c
        if closed:
            ok = np.all(np.abs(d[:, :-1]) <= r, axis=1) & (np.abs(d[:, -1]) <= r * r)
        else:
            ok = np.all(np.abs(d[:, :-1]) < r, axis=1) & (np.abs(d[:, -1]) < r * r)
        if half > 0:
            ok &= d[:, -1] >= 0
        elif half < 0:
            ok &= d[:, -1] <= 0
        return ok

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.center.as_array()
        r = self.half_length
        ext = np.full(c.shape, r)
        ext[-1] = r * r
        return c - ext, c + ext

    def scaled(self, k: float) -> "ParCube":
        return ParCube(self.center, k * self.half_length)

    def diameter(self) -> float:
        """Parabolic diameter of the closed cube."""
        r = self.half_length
        return 2.0 * r * np.sqrt(self.n) + np.sqrt(2.0) * r


@dataclass(frozen=True)
class PlanarCube:
    """Cube ``I_r(z, tau)`` in R^n = R^{n-1} x R_t (graph parameter space)."""

    center: tuple
    half_length: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if not self.half_length > 0:
            raise ValueError("half_length must be positive")

    def contains(self, pts, closed: bool = False) -> np.ndarray:
        P = np.atleast_2d(np.asarray(pts, dtype=float))
        d = P - np.asarray(self.center)
        r = self.half_length
        if closed:
            return np.all(np.abs(d[:, :-1]) <= r, axis=1) & (np.abs(d[:, -1]) <= r * r)
        return np.all(np.abs(d[:, :-1]) < r, axis=1) & (np.abs(d[:, -1]) < r * r)

    def measure(self) -> float:
        """Lebesgue measure ``(2r)^{n-1} 2r^2``."""
        m = len(self.center) - 1
        r = self.half_length
        return (2 * r) ** m * 2 * r * r

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        r = self.half_length
        ext = np.full(c.shape, r)
        ext[-1] = r * r
        return c - ext, c + ext


@dataclass(frozen=True)
class TimeIndepPlane:
    """The plane ``{<normal, Y> = offset} x R_t``."""

    normal: tuple
    offset: float

    def __post_init__(self):
        nv = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(nv)
        if not abs(norm - 1.0) <= 1e-12:
            if norm == 0:
                raise ValueError("plane normal must be nonzero")
            raise ValueError("plane normal must be a unit vector")
        object.__setattr__(self, "normal", tuple(nv))
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_normal(cls, normal, offset: float) -> "TimeIndepPlane":
        nv = np.asarray(normal, dtype=float)
        norm = np.linalg.norm(nv)
        return cls(tuple(nv / norm), offset / norm)

    def distance(self, pts) -> np.ndarray:
        return plane_distance(pts, self)


def plane_distance(p, plane: TimeIndepPlane):
    """Parabolic distance to a time-independent plane, ``|<n, Y> - c|``."""
    single = isinstance(p, PointST) or np.ndim(p) == 1
    P = as_points(p)
    d = np.abs(P[:, :-1] @ np.asarray(plane.normal) - plane.offset)
    return float(d[0]) if single else d


@dataclass(frozen=True)
class ConeParams:
    """Parabolic cone ``Gamma_h = {x_n >= h ||(x, t)||}`` about one spatial axis."""

    aperture: float
    apex_direction: int = -1

    def __post_init__(self):
        if not self.aperture > 0:
            raise ValueError("aperture must be positive")


def cone_contains(apex, q, cone: ConeParams) -> np.ndarray | bool:
    """True where ``q - apex`` lies in the closed cone."""
    single = (isinstance(q, PointST) or np.ndim(q) == 1) and (
        isinstance(apex, PointST) or np.ndim(apex) == 1)
    A = apex.as_array() if isinstance(apex, PointST) else np.asarray(apex, dtype=float)
    Q = q.as_array() if isinstance(q, PointST) else np.asarray(q, dtype=float)
    d = Q - A
    up = d[..., cone.apex_direction % (d.shape[-1] - 1)]
    rest = project_pi(d, cone.apex_direction)
    lateral = np.sqrt(np.sum(rest[..., :-1] ** 2, axis=-1)) + np.sqrt(np.abs(rest[..., -1]))
    out = up >= cone.aperture * lateral
    return bool(out) if single else out


def rotate_spatial(pts, rot: np.ndarray) -> np.ndarray:
    """Apply an orthogonal matrix to the spatial coordinates only."""
    P = np.array(as_points(pts), dtype=float, copy=True)
    P[:, :-1] = P[:, :-1] @ np.asarray(rot).T
    return P


def rotation_to_axis(v, axis: int = -1) -> np.ndarray:
    """Orthogonal matrix mapping the unit vector ``v`` onto ``e_axis``.

    Built from a Householder reflection composed with a sign flip so the
    result has determinant +1 whenever n >= 2.
    """
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    n = v.size
    e = np.zeros(n)
    e[axis % n] = 1.0
    if np.allclose(v, e):
        return np.eye(n)
    if n == 1:
        return np.array([[np.sign(v[0])]])
    # reflect along the better conditioned of v - e and v + e
    if v[axis % n] > 0:
        w = v + e
        H = 2.0 * np.outer(w, w) / (w @ w) - np.eye(n)
    else:
        w = v - e
        H = np.eye(n) - 2.0 * np.outer(w, w) / (w @ w)
    if np.linalg.det(H) < 0:
        # flip a coordinate orthogonal to the target axis
        j = (axis % n + 1) % n
        F = np.eye(n)
        F[j, j] = -1.0
        H = F @ H
    return H


def fibonacci_directions(n: int, count: int) -> np.ndarray:
    """Quasi-uniform unit vectors of R^n covering a half-sphere (n <= 3)."""
    if n == 1:
        return np.array([[1.0]])
    if n == 2:
        ang = np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if n == 3:
        i = np.arange(count) + 0.5
        z = i / count
        phi = np.pi * (1.0 + 5 ** 0.5) * i
        rad = np.sqrt(1.0 - z * z)
        return np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=1)
    raise ValueError("direction grids are provided for n <= 3 only")


@dataclass(frozen=True)
class Window:
    """Axis-aligned space-time box used as a validity window."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))

    def contains_cube(self, cube: ParCube, margin: float = 0.0) -> bool:
        """Whether ``cube`` dilated by ``1 + margin`` fits in the window."""
        lo, hi = cube.scaled(1.0 + margin).bounds()
        return bool(np.all(lo >= np.asarray(self.lower)) and np.all(hi <= np.asarray(self.upper)))

    def contains(self, pts) -> np.ndarray:
        P = as_points(pts)
        return np.all((P >= np.asarray(self.lower)) & (P <= np.asarray(self.upper)), axis=1)
