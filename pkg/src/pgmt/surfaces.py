"""Concrete closed sets in space-time as weighted sample clouds.

Every generator returns a :class:`SampledSurface`: sample points with weights
approximating surface measure, plus exact membership and distance oracles
when the geometry is known in closed form.  Curves in R^2 (n = 1) are stored
as lists of straight space-time segments; parabolic distance to a segment is
concave between its breakpoints, so the distance oracle is exact.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from .pargeo import ParCube, PlanarCube, PointST, Window, as_points


class InvariantError(ValueError):
    """Raised when an input violates a documented invariant."""


# ---------------------------------------------------------------------------
# spatial queries

class TimeIndex:
    """Samples sorted by time for fast parabolic box queries."""

    def __init__(self, points: np.ndarray):
        self.order = np.argsort(points[:, -1], kind="stable")
        self.sorted_pts = points[self.order]
        self.times = self.sorted_pts[:, -1]

    def box(self, lo, hi, closed: bool = False, time_sorted: bool = False) -> np.ndarray:
        """Indices (into the original array) of samples in the box, in
        index order or, with ``time_sorted``, in time order."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if closed:
            a = np.searchsorted(self.times, lo[-1], side="left")
            b = np.searchsorted(self.times, hi[-1], side="right")
        else:
            a = np.searchsorted(self.times, lo[-1], side="right")
            b = np.searchsorted(self.times, hi[-1], side="left")
        if b <= a:
            return np.empty(0, dtype=np.intp)
        sp = self.sorted_pts[a:b, :-1]
        if closed:
            ok = np.all((sp >= lo[:-1]) & (sp <= hi[:-1]), axis=1)
        else:
            ok = np.all((sp > lo[:-1]) & (sp < hi[:-1]), axis=1)
        sel = self.order[a:b][ok]
        return sel if time_sorted else np.sort(sel)

    def cube(self, center, r: float, closed: bool = False, time_sorted: bool = False) -> np.ndarray:
        c = np.asarray(center, dtype=float)
        ext = np.full(c.shape, float(r))
        ext[-1] = r * r
        return self.box(c - ext, c + ext, closed, time_sorted)


@numba.njit(cache=True)
def _box_moments(sorted_pts, sorted_w, times, centers, s, half):
    """Weighted moments of samples in open cubes Q_s(c), relative to c.

    Returns (S0, S1, S2): total weight, first moments (Q, n) and second
    moments (Q, n, n) of the spatial offsets y - c.  ``half`` = +1 / -1
    restricts to the upper / lower half cube (time face included).
    """
    Q = centers.shape[0]
    n = centers.shape[1] - 1
    S0 = np.zeros(Q)
    S1 = np.zeros((Q, n))
    S2 = np.zeros((Q, n, n))
    y = np.empty(n)
    for q in range(Q):
        tc = centers[q, n]
        lo = tc - s * s
        hi = tc + s * s
        if half > 0:
            a = np.searchsorted(times, tc, side="left")
        else:
            a = np.searchsorted(times, lo, side="right")
        if half < 0:
            b = np.searchsorted(times, tc, side="right")
        else:
            b = np.searchsorted(times, hi, side="left")
        for i in range(a, b):
            w = sorted_w[i]
            if w == 0.0:
                continue
            inside = True
            for k in range(n):
                y[k] = sorted_pts[i, k] - centers[q, k]
                if not (-s < y[k] < s):
                    inside = False
                    break
            if not inside:
                continue
            S0[q] += w
            for k in range(n):
                S1[q, k] += w * y[k]
                for l in range(n):
                    S2[q, k, l] += w * y[k] * y[l]
    return S0, S1, S2


def cell_labels(keys: np.ndarray) -> np.ndarray:
    """Dense labels 0..K-1 of the distinct integer rows of ``keys``, in
    lexicographic order of the rows."""
    lo = keys.min(axis=0)
    ext = keys.max(axis=0) - lo + 1
    if float(np.prod(ext.astype(float))) < 2.0 ** 62:
        lin = np.ravel_multi_index(tuple((keys - lo).T), tuple(int(e) for e in ext))
        _, inv = np.unique(lin, return_inverse=True)
    else:
        _, inv = np.unique(keys, axis=0, return_inverse=True)
    return inv.ravel()


@numba.njit(cache=True)
def _box_moments_agg(sorted_pts, sorted_w, sorted_cov, times, centers, s):
    """As :func:`_box_moments` for aggregated cells: each entry carries its
    centroid, total weight and internal spatial covariance."""
    Q = centers.shape[0]
    n = centers.shape[1] - 1
    S0 = np.zeros(Q)
    S1 = np.zeros((Q, n))
    S2 = np.zeros((Q, n, n))
    y = np.empty(n)
    for q in range(Q):
        tc = centers[q, n]
        a = np.searchsorted(times, tc - s * s, side="right")
        b = np.searchsorted(times, tc + s * s, side="left")
        for i in range(a, b):
            w = sorted_w[i]
            inside = True
            for k in range(n):
                y[k] = sorted_pts[i, k] - centers[q, k]
                if not (-s < y[k] < s):
                    inside = False
                    break
            if not inside:
                continue
            S0[q] += w
            for k in range(n):
                S1[q, k] += w * y[k]
                for l in range(n):
                    S2[q, k, l] += w * y[k] * y[l] + sorted_cov[i, k, l]
    return S0, S1, S2


# ---------------------------------------------------------------------------
# segment geometry (n = 1)

def segment_distance(q: np.ndarray, seg: np.ndarray) -> np.ndarray:
    """Parabolic distance from query points to space-time segments in R^2.

    ``q`` is ``(Q, 2)`` with rows (X, t); ``seg`` is ``(S, 4)`` with rows
    (x0, t0, x1, t1).  Returns the ``(Q,)`` minimum over all segments.

    Along a segment u -> (x(u), t(u)) both |X - x(u)| and |t - t(u)|^{1/2}
    are concave between their zeros, so the minimum is attained at u = 0,
    u = 1 or a zero of one of the two terms.
    """
    q = np.atleast_2d(q)
    out = np.full(q.shape[0], np.inf)
    if seg.size == 0:
        return out
    x0, t0, x1, t1 = (seg[:, i][None, :] for i in range(4))
    dx, dt = x1 - x0, t1 - t0
    step = max(1, int(2_000_000 // max(1, seg.shape[0])))
    for a in range(0, q.shape[0], step):
        X = q[a:a + step, 0][:, None]
        T = q[a:a + step, 1][:, None]
        best = np.full(X.shape[0], np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            ux = np.where(dx != 0, (X - x0) / dx, 0.0)
            ut = np.where(dt != 0, (T - t0) / dt, 0.0)
        for k, u in enumerate((0.0, 1.0, ux, ut)):
            uu = np.clip(u, 0.0, 1.0)
            ex = np.abs(X - (x0 + uu * dx))
            et = np.abs(T - (t0 + uu * dt))
            # at an interior zero the residual is pure rounding; sqrt would amplify it
            if k == 2:
                ex = np.where((uu == u) & (dx != 0), 0.0, ex)
            elif k == 3:
                et = np.where((uu == u) & (dt != 0), 0.0, et)
            d = ex + np.sqrt(et)
            best = np.minimum(best, d.min(axis=1))
        out[a:a + step] = best
    return out


def segment_on(q: np.ndarray, seg: np.ndarray, tol: float) -> np.ndarray:
    """Whether each query lies on the union of segments within ``tol``."""
    return segment_distance(q, seg) <= tol


def clip_segments(seg: np.ndarray, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Clip (x0, t0, x1, t1) segments to the box [lo, hi]; returns the
    clipped rows and a mask of rows that meet the box."""
    seg = np.atleast_2d(np.asarray(seg, dtype=float))
    ua = np.zeros(seg.shape[0])
    ub = np.ones(seg.shape[0])
    for a, (l, h) in enumerate(zip(lo, hi)):
        a0, a1 = seg[:, a], seg[:, a + 2]
        d = a1 - a0
        with np.errstate(divide="ignore", invalid="ignore"):
            u1 = np.where(d != 0, (l - a0) / d, -np.inf)
            u2 = np.where(d != 0, (h - a0) / d, np.inf)
        inside = (a0 >= l) & (a0 <= h)
        u_lo = np.where(d != 0, np.minimum(u1, u2), np.where(inside, -np.inf, np.inf))
        u_hi = np.where(d != 0, np.maximum(u1, u2), np.where(inside, np.inf, -np.inf))
        ua = np.maximum(ua, u_lo)
        ub = np.minimum(ub, u_hi)
    live = ub >= ua
    out = seg.copy()
    for a in range(2):
        d = seg[:, a + 2] - seg[:, a]
        out[:, a] = seg[:, a] + ua * d
        out[:, a + 2] = seg[:, a] + ub * d
    return out, live


def sample_segments(seg: np.ndarray, dt: float, weighted: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint samples of segments, ``dt`` apart in time, weighted by t-extent.

    Segments with zero time extent (fixed-time pieces) are sampled along
    space at step ``sqrt(dt)`` and carry zero weight.
    """
    pts, wts = [], []
    for (x0, t0, x1, t1), wflag in zip(seg, weighted):
        T = abs(t1 - t0)
        if T > 0:
            m = max(1, int(np.ceil(T / dt - 1e-9)))
        else:
            m = max(1, int(np.ceil(abs(x1 - x0) / np.sqrt(dt) - 1e-9)))
        u = (np.arange(m) + 0.5) / m
        pts.append(np.stack([x0 + u * (x1 - x0), t0 + u * (t1 - t0)], axis=1))
        wts.append(np.full(m, T / m if wflag else 0.0))
    if not pts:
        return np.empty((0, 2)), np.empty(0)
    return np.concatenate(pts), np.concatenate(wts)


def rasterize_segments(seg: np.ndarray, lower, pitch: float, shape) -> np.ndarray:
    """Mark voxels of a (pitch, pitch^2) grid in R^2 met by any segment.

    Each segment is walked at a quarter-voxel step; whenever two
    consecutive marks are diagonal neighbours, the side voxel the segment
    actually crosses is marked too, so every voxel whose interior meets a
    segment is marked.
    """
    lower = np.asarray(lower, dtype=float)
    mask = np.zeros(shape, dtype=bool)
    hx, ht = pitch, pitch * pitch
    upper = lower + np.array([shape[0] * hx, shape[1] * ht])
    for x0, t0, x1, t1 in seg:
        # skip segments whose bounding box misses the grid
        if max(x0, x1) < lower[0] or min(x0, x1) > upper[0]:
            continue
        if max(t0, t1) < lower[1] or min(t0, t1) > upper[1]:
            continue
        # clip the parameter range to the grid box
        ua, ub = 0.0, 1.0
        for a0, a1, lo, hi in ((x0, x1, lower[0], upper[0]), (t0, t1, lower[1], upper[1])):
            d = a1 - a0
            if d == 0:
                continue
            u_lo, u_hi = sorted(((lo - a0) / d, (hi - a0) / d))
            ua, ub = max(ua, u_lo), min(ub, u_hi)
        if ub < ua:
            continue
        nx = abs(x1 - x0) * (ub - ua) / hx
        nt = abs(t1 - t0) * (ub - ua) / ht
        m = int(np.ceil(4 * max(nx, nt))) + 2
        u = np.linspace(ua, ub, m)
        ix = np.floor((x0 + u * (x1 - x0) - lower[0]) / hx).astype(np.int64)
        it = np.floor((t0 + u * (t1 - t0) - lower[1]) / ht).astype(np.int64)
        # a diagonal step crosses the side voxel whose boundary comes first
        diag = np.flatnonzero((ix[1:] != ix[:-1]) & (it[1:] != it[:-1]))
        if diag.size:
            bx = lower[0] + np.maximum(ix[diag], ix[diag + 1]) * hx
            bt = lower[1] + np.maximum(it[diag], it[diag + 1]) * ht
            ux = (bx - x0) / (x1 - x0)
            ut = (bt - t0) / (t1 - t0)
            ex = np.where(ux < ut, ix[diag + 1], ix[diag])
            et = np.where(ux < ut, it[diag], it[diag + 1])
            side = ux != ut
            ix = np.concatenate([ix, ex[side]])
            it = np.concatenate([it, et[side]])
        ok = (ix >= 0) & (ix < shape[0]) & (it >= 0) & (it < shape[1])
        mask[ix[ok], it[ok]] = True
    return mask


# ---------------------------------------------------------------------------
# graph functions

@dataclass
class GraphFunction:
    """A function psi on a planar box, sampled at cell centres.

    The planar box has ``n - 1`` spatial axes (pitch ``pitch``) and one time
    axis (pitch ``pitch**2``).  ``values`` has one axis per planar coordinate.
    """

    lower: tuple
    pitch: float
    values: np.ndarray
    lip_constant: float
    regular_constants: Optional[tuple] = None
    func: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        self.lower = tuple(float(v) for v in self.lower)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != len(self.lower):
            raise ValueError("values must have one axis per planar coordinate")

    @property
    def planar_dim(self) -> int:
        return len(self.lower)

    @property
    def steps(self) -> np.ndarray:
        s = np.full(self.planar_dim, self.pitch)
        s[-1] = self.pitch ** 2
        return s

    @property
    def upper(self) -> tuple:
        return tuple(np.asarray(self.lower) + self.steps * np.array(self.values.shape))

    def axes(self) -> list:
        return [lo + (np.arange(m) + 0.5) * h
                for lo, m, h in zip(self.lower, self.values.shape, self.steps)]

    def nodes(self) -> np.ndarray:
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def cell_measure(self) -> float:
        return float(np.prod(self.steps))

    def evaluate(self, pts) -> np.ndarray:
        """Values at planar points: exact when a formula is attached, else
        multilinear interpolation with constant extension at the edges."""
        P = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.func is not None:
            return np.asarray(self.func(P), dtype=float)
        from scipy.interpolate import RegularGridInterpolator

        axes = self.axes()
        Pc = np.stack([np.clip(P[:, i], axes[i][0], axes[i][-1]) for i in range(P.shape[1])], axis=1)
        if any(len(a) == 1 for a in axes):
            idx = tuple(np.clip(np.round((Pc[:, i] - axes[i][0]) / self.steps[i]).astype(int), 0,
                                len(axes[i]) - 1) for i in range(P.shape[1]))
            return self.values[idx]
        interp = RegularGridInterpolator(axes, self.values, method="linear")
        return interp(Pc)

    @classmethod
    def from_function(cls, func: Callable, lower, upper, pitch: float,
                      lip_constant: Optional[float] = None, keep_func: bool = True) -> "GraphFunction":
        """Sample ``func`` (mapping (M, n) planar points to values) on a grid."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        steps = np.full(lower.size, pitch)
        steps[-1] = pitch ** 2
        shape = tuple(int(v) for v in np.maximum(1, np.round((upper - lower) / steps)))
        axes = [lo + (np.arange(m) + 0.5) * h for lo, m, h in zip(lower, shape, steps)]
        grids = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        vals = np.asarray(func(nodes), dtype=float).reshape(shape)
        g = cls(tuple(lower), pitch, vals, 0.0, func=func if keep_func else None)
        g.lip_constant = grid_lip_constant(vals, pitch) if lip_constant is None else float(lip_constant)
        return g

    @classmethod
    def on_cube(cls, func: Callable, cube: PlanarCube, pitch: float, **kw) -> "GraphFunction":
        lo, hi = cube.bounds()
        return cls.from_function(func, lo, hi, pitch, **kw)


def _offsets(ndim: int, horizon: int) -> list:
    """Index offsets of the local pair horizon (half-space, nonzero).

    Spatial offsets range over ``|k| <= horizon`` cells; time offsets over
    ``|k| <= horizon**2`` cells, the parabolic equivalent.
    """
    ranges = [range(-horizon, horizon + 1)] * (ndim - 1) + [range(-horizon ** 2, horizon ** 2 + 1)]
    offs = []
    for off in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(ndim, -1).T:
        nz = np.nonzero(off)[0]
        if nz.size and off[nz[0]] > 0:
            offs.append(tuple(int(v) for v in off))
    # dyadic long-range offsets along each axis catch large-scale growth
    for ax in range(ndim):
        k = 2 * (horizon ** 2 if ax == ndim - 1 else horizon)
        while True:
            o = [0] * ndim
            o[ax] = k
            offs.append(tuple(o))
            k *= 2
            if k > 1 << 24:
                break
    return offs


def _shift_pair(values: np.ndarray, off):
    a_sl, b_sl = [], []
    for o, m in zip(off, values.shape):
        if abs(o) >= m:
            return None, None
        if o >= 0:
            a_sl.append(slice(0, m - o))
            b_sl.append(slice(o, m))
        else:
            a_sl.append(slice(-o, m))
            b_sl.append(slice(0, m + o))
    return values[tuple(a_sl)], values[tuple(b_sl)]


def grid_lip_constant(values: np.ndarray, pitch: float, horizon: int = 3,
                      return_pair: bool = False):
    """Largest |psi(p) - psi(q)| / d_p(p, q) over grid pairs.

    Pairs are all offsets inside the local horizon plus dyadic offsets along
    every axis.
    """
    values = np.asarray(values, dtype=float)
    ndim = values.ndim
    best, arg = 0.0, None
    for off in _offsets(ndim, horizon):
        a, b = _shift_pair(values, off)
        if a is None:
            continue
        sp = pitch * np.sqrt(sum(o * o for o in off[:-1]))
        d = sp + pitch * np.sqrt(abs(off[-1]))
        diff = np.abs(b - a)
        if diff.size == 0:
            continue
        i = int(np.argmax(diff))
        ratio = float(diff.flat[i]) / d
        if ratio > best:
            best = ratio
            arg = (np.unravel_index(i, diff.shape), off)
    if return_pair:
        return best, arg
    return best


# ---------------------------------------------------------------------------
# sampled surfaces

@dataclass
class SampledSurface:
    """A closed set Sigma as weighted space-time samples plus oracles.

    ``segments`` (n = 1 only) and ``graph`` record exact geometry when known.
    ``sheets`` (n = 1 only) lists functions t -> X whose graphs make up
    Sigma, each Hoelder-1/2 in time with constant ``sheet_holder``.
    ``component_fn`` maps points off Sigma to a global component id (-1 on
    Sigma).
    ``valid_window`` is the box inside which every query cube, dilated by a
    factor 3, must fit.
    """

    n: int
    points: np.ndarray
    weights: np.ndarray
    resolution: float
    time_extent: tuple = (-np.inf, np.inf)
    window: Optional[Window] = None
    name: str = "sampled"
    segments: Optional[np.ndarray] = None
    graph: Optional[GraphFunction] = None
    graph_axis: int = -1
    membership_fn: Optional[Callable] = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)
    sheets: Optional[list] = field(default=None, repr=False)
    sheet_holder: float = 0.0
    component_fn: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=float)
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != self.n + 1:
            raise ValueError("points must be (N, n+1)")
        if self.weights.shape != (self.points.shape[0],):
            raise ValueError("one weight per sample")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.points)):
            raise InvariantError("weights must be nonnegative and samples finite")
        self._index = None

    # -- queries --------------------------------------------------------
    @property
    def index(self) -> TimeIndex:
        if self._index is None:
            self._index = TimeIndex(self.points)
        return self._index

    def __len__(self):
        return self.points.shape[0]

    def in_cube(self, center, r: float, closed: bool = False, half: int = 0) -> np.ndarray:
        c = center.as_array() if isinstance(center, PointST) else np.asarray(center, dtype=float)
        if half == 0:
            return self.index.cube(c, r, closed)
        idx = self.index.cube(c, r, closed)
        dt = self.points[idx, -1] - c[-1]
        return idx[dt >= 0] if half > 0 else idx[dt <= 0]

    def box_moments(self, centers, s: float, half: int = 0):
        """Weighted spatial moments of the samples in Q_s(c) for each centre.

        See :func:`_box_moments`; moments are taken about each centre.
        """
        C = np.ascontiguousarray(as_points(centers), dtype=float)
        ix = self.index
        if not hasattr(ix, "sorted_w"):
            ix.sorted_w = np.ascontiguousarray(self.weights[ix.order])
        return _box_moments(ix.sorted_pts, ix.sorted_w, ix.times, C, float(s), int(half))

    def aggregated(self, cell: float):
        """Weighted samples merged on the grid (cell, ..., cell^2).

        Returns time-sorted (centroids, weights, covariances, times); the
        covariance is the weighted spatial scatter inside each cell, so
        moments about any centre are preserved exactly.
        """
        cache = self.__dict__.setdefault("_agg", {})
        if cell in cache:
            return cache[cell]
        sel = self.weights > 0
        P, w = self.points[sel], self.weights[sel]
        steps = np.full(self.n + 1, cell)
        steps[-1] = cell * cell
        keys = np.floor(P / steps).astype(np.int64)
        inv = cell_labels(keys)
        W = np.bincount(inv, weights=w)
        base = keys * steps
        Z = P - base
        cen = np.stack([np.bincount(inv, weights=w * Z[:, a]) for a in range(self.n + 1)], axis=1) / W[:, None]
        D = Z[:, :-1] - cen[inv, :-1]
        cov = np.empty((W.size, self.n, self.n))
        for a in range(self.n):
            for b in range(a, self.n):
                cov[:, a, b] = cov[:, b, a] = np.bincount(inv, weights=w * D[:, a] * D[:, b])
        first = np.zeros(W.size, dtype=np.int64)
        first[inv[::-1]] = np.arange(inv.size)[::-1]
        cen = cen + base[first]
        order = np.argsort(cen[:, -1], kind="stable")
        out = (np.ascontiguousarray(cen[order]), np.ascontiguousarray(W[order]),
               np.ascontiguousarray(cov[order]), np.ascontiguousarray(cen[order, -1]))
        cache[cell] = out
        return out

    def box_moments_coarse(self, centers, s: float, cell: float):
        """Box moments from samples aggregated at ``cell``; membership is
        decided by cell centroids, so cube faces blur by one cell."""
        C = np.ascontiguousarray(as_points(centers), dtype=float)
        cen, W, cov, times = self.aggregated(cell)
        return _box_moments_agg(cen, W, cov, times, C, float(s))

    def has_exact_oracle(self) -> bool:
        return (self.segments is not None or self.graph is not None or self.membership_fn is not None
                or self.sheets is not None)

    def contains(self, pts, tol: float = 1e-9) -> np.ndarray:
        """Membership oracle; falls back to nearest-sample distance."""
        P = as_points(pts)
        if self.membership_fn is not None:
            return np.asarray(self.membership_fn(P, tol))
        return self.distance(P) <= tol + (0.0 if self.has_exact_oracle() else self.resolution)

    def distance(self, pts) -> np.ndarray:
        """Parabolic distance to Sigma (exact for segments; graphs via a
        local search; otherwise the nearest-sample upper bound)."""
        P = as_points(pts)
        if self.segments is not None:
            return segment_distance(P, self.segments)
        if self.graph is not None:
            return _graph_distance(self, P)
        return self.nearest_sample_distance(P)

    def distance_near(self, pts, center, R: float) -> np.ndarray:
        """Distance to Sigma for points within parabolic distance R of a
        centre on Sigma.  Such distances are at most R, so only geometry in
        Q_{2R}(center) can matter; segment sets are filtered accordingly."""
        P = as_points(pts)
        if self.segments is None:
            return self.distance(P)
        c = np.asarray(center, dtype=float)
        seg = self.segments
        lo = np.minimum(seg[:, :2], seg[:, 2:])
        hi = np.maximum(seg[:, :2], seg[:, 2:])
        ext = np.full(c.shape, 2.0 * R)
        ext[-1] = 4.0 * R * R
        ok = np.all((hi >= c - ext) & (lo <= c + ext), axis=1)
        if not ok.any():
            return self.distance(P)
        return segment_distance(P, seg[ok])

    def distance_bounds(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Certified (lower, upper) bounds on the distance to Sigma."""
        P = as_points(pts)
        if self.segments is not None:
            d = segment_distance(P, self.segments)
            return d, d
        up = self.distance(P)
        return np.maximum(0.0, up - self.resolution), up

    def nearest_sample_distance(self, P: np.ndarray) -> np.ndarray:
        out = np.empty(P.shape[0])
        for i, p in enumerate(P):
            r = max(self.resolution, 1e-12)
            while True:
                idx = self.index.cube(p, r, closed=True)
                if idx.size:
                    d = float(np.min(np.sqrt(np.sum((self.points[idx, :-1] - p[:-1]) ** 2, axis=1))
                                     + np.sqrt(np.abs(self.points[idx, -1] - p[-1]))))
                    # the parabolic ball of radius d sits in Q_d
                    if d <= r:
                        out[i] = d
                        break
                    r = d
                    continue
                r *= 2.0
                if r > 1e12:
                    out[i] = np.inf
                    break
        return out

    def rasterize(self, lower, pitch: float, shape) -> np.ndarray:
        """Boolean mask of voxels (pitch, ..., pitch^2) that meet Sigma."""
        lower = np.asarray(lower, dtype=float)
        shape = tuple(int(s) for s in shape)
        if self.sheets is not None:
            return _rasterize_sheets(self, lower, pitch, shape)
        if self.segments is not None:
            return rasterize_segments(self.segments, lower, pitch, shape)
        if self.graph is not None:
            return _rasterize_graph(self, lower, pitch, shape)
        steps = np.full(self.n + 1, pitch)
        steps[-1] = pitch ** 2
        mask = np.zeros(shape, dtype=bool)
        ij = np.floor((self.points - lower) / steps).astype(np.int64)
        ok = np.all((ij >= 0) & (ij < np.array(shape)), axis=1)
        mask[tuple(ij[ok].T)] = True
        return mask

    def check_window(self, cube: ParCube, margin: float = 2.0) -> None:
        if self.window is not None and not self.window.contains_cube(cube, margin):
            raise InvariantError(
                f"query cube of half-length {cube.half_length} at {cube.center} leaves the valid window")

    def total_weight(self) -> float:
        return float(self.weights.sum())

    def transformed(self, func: Callable, name: Optional[str] = None, scale: float = 1.0,
                    seg_func: Optional[Callable] = None) -> "SampledSurface":
        """Apply a point map (space-time isometry or dilation) to the samples.

        ``scale`` is the parabolic dilation factor (weights scale by
        ``scale**(n+1)``).  Exact geometry is carried for segment surfaces
        when ``seg_func`` maps endpoint arrays; otherwise the result is a
        sample-only surface.
        """
        pts = func(self.points)
        segs = None
        if self.segments is not None and seg_func is not None:
            segs = seg_func(self.segments)
        return SampledSurface(self.n, pts, self.weights * scale ** (self.n + 1),
                              self.resolution * scale, name=name or self.name + "*",
                              segments=segs, meta=dict(self.meta))


def _rasterize_sheets(surface: SampledSurface, lower, pitch: float, shape) -> np.ndarray:
    """Voxels whose spatial interval meets the range of a sheet over the
    voxel's time interval (bracketed by the Hoelder bound about the midpoint)."""
    ht = pitch * pitch
    tc = lower[1] + (np.arange(shape[1]) + 0.5) * ht
    slack = surface.sheet_holder * np.sqrt(ht / 2) + 1e-12
    col = lower[0] + np.arange(shape[0]) * pitch
    mask = np.zeros(shape, dtype=bool)
    for f in surface.sheets:
        x = np.asarray(f(tc), dtype=float)
        mask |= (col[:, None] <= x[None, :] + slack) & (col[:, None] + pitch >= x[None, :] - slack)
    return mask


def sheet_components(sheets, P: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Number of sheets strictly below each point (-1 within tol of a sheet)."""
    P = as_points(P)
    out = np.zeros(P.shape[0], dtype=np.int64)
    on = np.zeros(P.shape[0], dtype=bool)
    for f in sheets:
        x = np.asarray(f(P[:, 1]), dtype=float)
        out += P[:, 0] > x + tol
        on |= np.abs(P[:, 0] - x) <= tol
    out[on] = -1
    return out


def local_resample(surface: SampledSurface, center, R: float, pitch: float,
                   name: Optional[str] = None, time_half: Optional[float] = None) -> SampledSurface:
    """A surface with samples of pitch ``pitch`` inside the closed Q_R(center).

    Exact geometry (sheets, graph function or segments) is resampled; a
    sample-only surface keeps its own samples.  Oracles carry over.
    ``time_half`` replaces the time half-extent R^2 of the box.
    """
    c = np.asarray(center, dtype=float)
    dt = pitch * pitch
    n = surface.n
    th = R * R if time_half is None else float(time_half)
    lo = c - np.r_[np.full(n, R), th]
    hi = c + np.r_[np.full(n, R), th]
    if surface.sheets is not None:
        m = max(1, int(np.ceil(2 * th / dt)))
        t = lo[-1] + (np.arange(m) + 0.5) * (hi[-1] - lo[-1]) / m
        pts = np.concatenate([np.stack([np.asarray(f(t), dtype=float), t], axis=1)
                              for f in surface.sheets])
        w = np.full(pts.shape[0], (hi[-1] - lo[-1]) / m)
    elif surface.graph is not None and surface.graph.func is not None:
        g = surface.graph
        ax = surface.graph_axis % n
        keep = [i for i in range(n + 1) if i != ax]
        sub = GraphFunction.from_function(g.func, lo[keep], hi[keep], pitch, g.lip_constant)
        nodes = sub.nodes()
        pts = np.empty((nodes.shape[0], n + 1))
        pts[:, keep] = nodes
        pts[:, ax] = sub.values.ravel()
        w = np.full(nodes.shape[0], sub.cell_measure())
    elif surface.segments is not None:
        seg = surface.segments
        a = np.minimum(seg[:, :2], seg[:, 2:])
        b = np.maximum(seg[:, :2], seg[:, 2:])
        ok = np.all((b >= lo) & (a <= hi), axis=1)
        kinds = surface.meta.get("kinds")
        wf = np.array([k != "face" for k in kinds])[ok] if kinds is not None else np.ones(ok.sum(), bool)
        clipped, live = clip_segments(seg[ok], lo, hi)
        pts, w = sample_segments(clipped[live], dt, wf[live])
    else:
        idx = surface.index.box(lo, hi, closed=True)
        pts, w = surface.points[idx], surface.weights[idx]
        pitch = surface.resolution
    keep_pts = np.all((pts >= lo) & (pts <= hi), axis=1)
    return SampledSurface(n, pts[keep_pts], w[keep_pts], pitch, surface.time_extent, surface.window,
                          name or surface.name, segments=surface.segments, graph=surface.graph,
                          graph_axis=surface.graph_axis, membership_fn=surface.membership_fn,
                          meta=dict(surface.meta), sheets=surface.sheets,
                          sheet_holder=surface.sheet_holder, component_fn=surface.component_fn)


def surface_measure(surface: SampledSurface, region: ParCube, half: int = 0) -> float:
    """Sum of sample weights inside an open parabolic cube (or one of its halves)."""
    S0, _, _ = surface.box_moments(region.center.as_array(), region.half_length, half)
    return float(S0[0])


# ---------------------------------------------------------------------------
# graphs

def _graph_heights(surface: SampledSurface, planar: np.ndarray) -> np.ndarray:
    return surface.graph.evaluate(planar)


def _graph_distance(surface: SampledSurface, P: np.ndarray) -> np.ndarray:
    """Distance to a graph: exhaustive over grid nodes in a shrinking box,
    refined with the exact formula when one is attached."""
    g = surface.graph
    n = surface.n
    ax = surface.graph_axis % n
    keep = [i for i in range(n + 1) if i != ax]
    cached = surface.__dict__.get("_graph_nodes")
    if cached is None:
        nodes = g.nodes()
        heights = g.values.ravel() if g.func is None else g.evaluate(nodes)
        gpts = np.empty((nodes.shape[0], n + 1))
        gpts[:, keep] = nodes
        gpts[:, ax] = heights
        cached = (gpts, TimeIndex(gpts))
        surface.__dict__["_graph_nodes"] = cached
    gpts, idx = cached
    verts = np.abs(P[:, ax] - _graph_heights(surface, P[:, keep]))
    out = verts.copy()
    # points on the graph are at distance 0; the rest need a local search
    for i in np.flatnonzero(verts > 0):
        p, vert = P[i], verts[i]
        r = max(vert, g.pitch)
        sel = idx.cube(p, r, closed=True)
        if sel.size == 0:
            out[i] = vert
            continue
        Q = gpts[sel]
        d = np.sqrt(np.sum((Q[:, :-1] - p[:-1]) ** 2, axis=1)) + np.sqrt(np.abs(Q[:, -1] - p[-1]))
        out[i] = min(vert, float(d.min()))
    return out


def _rasterize_graph(surface: SampledSurface, lower, pitch, shape) -> np.ndarray:
    """Voxels whose graph-direction interval meets the range of psi over the
    voxel's planar cell (range bracketed by corner values and the Lip bound)."""
    g = surface.graph
    n = surface.n
    ax = surface.graph_axis % n
    keep = [i for i in range(n + 1) if i != ax]
    steps = np.full(n + 1, pitch)
    steps[-1] = pitch ** 2
    pl_shape = [shape[i] for i in keep]
    axes = [lower[i] + (np.arange(shape[i]) + 0.5) * steps[i] for i in keep]
    grids = np.meshgrid(*axes, indexing="ij")
    cen = np.stack([gg.ravel() for gg in grids], axis=1)
    psi = g.evaluate(cen).reshape(pl_shape)
    slack = g.lip_constant * (pitch / 2 * np.sqrt(n - 1) + np.sqrt(pitch ** 2 / 2)) + 1e-12
    lo = psi - slack
    hi = psi + slack
    col = lower[ax] + np.arange(shape[ax]) * steps[ax]
    col_hi = col + steps[ax]
    lo_e = np.expand_dims(lo, ax)
    hi_e = np.expand_dims(hi, ax)
    shp = [1] * (n + 1)
    shp[ax] = shape[ax]
    mask = (col.reshape(shp) <= hi_e) & (col_hi.reshape(shp) >= lo_e)
    return mask


def build_graph_surface(psi: GraphFunction, n: int, name: str = "graph",
                        lip_tol: float = 1e-9, axis: int = -1) -> SampledSurface:
    """Samples (x, psi(x, t), t) over the grid with the planar cell measure as weight."""
    if psi.planar_dim != n:
        raise ValueError("graph function must have n planar coordinates")
    measured = grid_lip_constant(psi.values, psi.pitch)
    if measured > psi.lip_constant * (1 + lip_tol) + lip_tol:
        raise InvariantError(
            f"graph function violates its Lip(1,1/2) constant: {measured} > {psi.lip_constant}")
    nodes = psi.nodes()
    ax = axis % n
    keep = [i for i in range(n + 1) if i != ax]
    pts = np.empty((nodes.shape[0], n + 1))
    pts[:, keep] = nodes
    pts[:, ax] = psi.values.ravel()
    w = np.full(nodes.shape[0], psi.cell_measure())
    lo, hi = np.asarray(psi.lower), np.asarray(psi.upper)
    wlo = np.empty(n + 1)
    whi = np.empty(n + 1)
    wlo[keep], whi[keep] = lo, hi
    span = max(np.abs(psi.values).max(), 1.0) * 4 + (hi[0] - lo[0] if n > 1 else np.sqrt(hi[-1] - lo[-1]))
    wlo[ax], whi[ax] = -span, span

    def member(P, tol):
        return np.abs(P[:, ax] - psi.evaluate(P[:, keep])) <= tol

    def component(P):
        P = as_points(P)
        h = P[:, ax] - psi.evaluate(P[:, keep])
        return np.where(h == 0, -1, (h > 0).astype(np.int64))

    return SampledSurface(n, pts, w, psi.pitch, (lo[-1], hi[-1]), Window(wlo, whi), name,
                          graph=psi, graph_axis=axis, membership_fn=member,
                          meta={"lip_constant": psi.lip_constant}, component_fn=component)


def curve_surface(segments: np.ndarray, pitch: float, window: Window, name: str,
                  weighted: Optional[np.ndarray] = None, extra_points=None,
                  dt_fn: Optional[Callable] = None, meta: Optional[dict] = None) -> SampledSurface:
    """Sampled surface in R^2 from a list of space-time segments."""
    segments = np.asarray(segments, dtype=float)
    if weighted is None:
        weighted = np.ones(segments.shape[0], dtype=bool)
    dt = pitch ** 2
    pts, wts = [], []
    for s, wf in zip(segments, weighted):
        step = dt if dt_fn is None else dt_fn(s)
        p, w = sample_segments(s[None, :], step, np.array([wf]))
        pts.append(p)
        wts.append(w)
    P = np.concatenate(pts)
    W = np.concatenate(wts)
    t_lo = float(segments[:, [1, 3]].min())
    t_hi = float(segments[:, [1, 3]].max())
    return SampledSurface(1, P, W, pitch, (t_lo, t_hi), window, name, segments=segments,
                          meta=meta or {})


# ---------------------------------------------------------------------------
# generators

def build_hyperplane(n: int, half_width: float = 2.0, half_time: float = 4.0,
                     pitch: float = 2 ** -5, name: str = "hyperplane") -> SampledSurface:
    """The plane {x_n = 0} sampled at cell centres of a (pitch, pitch^2) grid.

    Grid vertices sit at integer multiples of the pitch, so cubes centred at
    vertices with dyadic half-length capture whole cells.
    """
    lower = [-half_width] * (n - 1) + [-half_time]
    upper = [half_width] * (n - 1) + [half_time]
    psi = GraphFunction.from_function(lambda P: np.zeros(P.shape[0]), lower, upper, pitch,
                                      lip_constant=0.0)
    s = build_graph_surface(psi, n, name=name)
    lo = np.array(list(lower[:-1]) + [-half_width] + [lower[-1]])
    hi = np.array(list(upper[:-1]) + [half_width] + [upper[-1]])
    s.window = Window(lo, hi)
    s.meta.update({"generator": "hyperplane", "pitch": pitch})
    return s


def two_graph_psi(t, sign: int):
    """psi_plus(t) = |t|^{1/2} + 1 and psi_minus(t) = -|t|^{1/2} - 1."""
    return sign * (np.sqrt(np.abs(np.asarray(t, dtype=float))) + 1.0)


def _sqrt_polyline(T: float, pitch: float) -> np.ndarray:
    """Breakpoints on [0, T] for a piecewise linear sqrt with error < pitch/8."""
    # geometric refinement near 0: on [a, 2a] the chord error of sqrt is ~ sqrt(a)/50
    knots = [0.0]
    a = min(T, (pitch / 8) ** 2)
    knots.append(a)
    while a < T:
        # chord error on [a, a + h] is about h^2 / (32 a^{3/2})
        h = min(a, np.sqrt(32 * a ** 1.5 * pitch / 8), T - a)
        a = a + h
        knots.append(a)
    return np.array(knots)


def build_two_graph_example(half_time: float = 8.0, pitch: float = 2 ** -6,
                            half_width: Optional[float] = None) -> SampledSurface:
    """Sigma = graph(psi_plus) U graph(psi_minus) in R^2 over |t| <= half_time.

    The open region between the graphs is the distinguished component.
    Geometry is a fine polyline (error below pitch / 8); membership uses the
    closed-form functions.
    """
    k = _sqrt_polyline(half_time, pitch)
    tt = np.concatenate([-k[::-1], k[1:]])
    segs = []
    for sign in (1, -1):
        x = two_graph_psi(tt, sign)
        segs.append(np.stack([x[:-1], tt[:-1], x[1:], tt[1:]], axis=1))
    segs = np.concatenate(segs)
    if half_width is None:
        half_width = np.sqrt(half_time) + 2.0
    window = Window([-half_width, -half_time], [half_width, half_time])
    dt = pitch ** 2
    t = -half_time + (np.arange(int(round(2 * half_time / dt))) + 0.5) * dt
    pts = np.concatenate([np.stack([two_graph_psi(t, s), t], axis=1) for s in (1, -1)])
    w = np.full(pts.shape[0], dt)

    def member(P, tol):
        return (np.abs(P[:, 0] - two_graph_psi(P[:, 1], 1)) <= tol) | (
            np.abs(P[:, 0] - two_graph_psi(P[:, 1], -1)) <= tol)

    sheets = [lambda t: two_graph_psi(t, -1), lambda t: two_graph_psi(t, 1)]
    # components: 0 below the lower graph, 1 the region between, 2 above
    return SampledSurface(1, pts, w, pitch, (-half_time, half_time), window, "two_graph",
                          segments=segs, membership_fn=member,
                          meta={"generator": "two_graph", "pitch": pitch, "half_time": half_time,
                                "between_component": 1},
                          sheets=sheets, sheet_holder=1.0,
                          component_fn=lambda P: sheet_components(sheets, P))


def tree_branch_times(K: int) -> np.ndarray:
    """t_0 = 0 and t_k = sum_{m=1}^{k} 4^{-m}."""
    return np.concatenate([[0.0], np.cumsum(4.0 ** -np.arange(1, K + 1))])


def tree_branch_points(k: int) -> np.ndarray:
    """S_k = {(+-(2j+1)/2^k, t_k)} as an array of (X, t) rows, sorted by X."""
    t = tree_branch_times(k)[k]
    x = np.array([(2 * j + 1) / 2 ** k for j in range(2 ** (k - 1))])
    x = np.sort(np.concatenate([-x, x]))
    return np.stack([x, np.full(x.size, t)], axis=1)


@dataclass(frozen=True)
class TreeSegment:
    """One generation-k segment, travelling t-length 4^{-k} at slope +-2^k."""

    generation: int
    start: tuple
    slope: float

    @property
    def t_length(self) -> float:
        return 4.0 ** -self.generation

    @property
    def end(self) -> tuple:
        x, t = self.start
        return (x + self.slope * self.t_length, t + self.t_length)


def tree_segments(K: int) -> list:
    """Generations 1..K of the forward tree rooted at (0, 0)."""
    out = []
    starts = [(0.0, 0.0)]
    for k in range(1, K + 1):
        nxt = []
        for s in starts:
            for sign in (-1.0, 1.0):
                seg = TreeSegment(k, s, sign * 2.0 ** k)
                out.append(seg)
                nxt.append(seg.end)
        starts = nxt
    return out


def build_parabolic_tree(max_generation: int, pitch: float = 2 ** -10,
                         half_width: float = 4.0, time_margin: float = 16.0) -> SampledSurface:
    """The parabolic tree fractal and its reflection about t = 1/3.

    Pieces: generations 1..K forward from (0, 0), the fixed-time face
    [-1, 1] x {1/3} (zero weight), the ray {X = 0, t < 0}, and the mirror
    image t -> 2/3 - t of the generations and the ray.  Rays are truncated
    to the time window [-time_margin, 2/3 + time_margin] and sampled with a
    time step growing away from the junction.  Generations finer than the
    time pitch are lumped: each root at the last resolved generation gets
    one sample carrying the weight of its whole subtree.
    """
    K = int(max_generation)
    if K < 1:
        raise ValueError("max_generation must be >= 1")
    # generations whose segments are shorter than one time cell are lumped
    # into one sample per subtree root carrying the subtree's weight
    K_res = min(K, max(1, int(np.floor(np.log2(1.0 / pitch) + 1e-9))))
    fwd = tree_segments(K_res)
    rows = [(s.start[0], s.start[1], s.end[0], s.end[1]) for s in fwd]
    gens = [s.generation for s in fwd]
    mirror = [(x0, 2 / 3 - t0, x1, 2 / 3 - t1) for x0, t0, x1, t1 in rows]
    t_lo, t_hi = -time_margin, 2 / 3 + time_margin
    face = [(-1.0, 1 / 3, 1.0, 1 / 3)]
    rays = [(0.0, t_lo, 0.0, 0.0), (0.0, 2 / 3, 0.0, t_hi)]
    segs = np.array(rows + mirror + face + rays, dtype=float)
    kinds = (["tree"] * len(rows) * 2) + ["face"] + ["ray"] * 2
    weighted = np.array([k != "face" for k in kinds])
    window = Window([-half_width, t_lo], [half_width, t_hi])

    dt = pitch ** 2
    pts, wts = [], []
    for s, kind, wf in zip(segs, kinds, weighted):
        if kind != "ray":
            p, w = sample_segments(s[None, :], dt, np.array([wf]))
        else:
            p, w = _sample_ray(s, dt)
        pts.append(p)
        wts.append(w)
    n_fwd = sum(p.shape[0] for p in pts[:len(rows)])
    tree_weight = float(np.concatenate(wts[:len(rows)]).sum())
    if K > K_res:
        k = np.arange(K_res + 1, K + 1, dtype=float)
        lump = float(np.sum(2.0 ** (k - K_res) * 4.0 ** -k))
        roots = np.array([s.end for s in fwd if s.generation == K_res])
        mirror_roots = np.stack([roots[:, 0], 2 / 3 - roots[:, 1]], axis=1)
        pts += [roots, mirror_roots]
        wts += [np.full(len(roots), lump)] * 2
        tree_weight += lump * len(roots)
    P = np.concatenate(pts)
    W = np.concatenate(wts)
    return SampledSurface(1, P, W, pitch, (t_lo, t_hi), window, "tree", segments=segs,
                          meta={"generator": "tree", "K": K, "resolved_generations": K_res,
                                "pitch": pitch, "kinds": kinds, "generations": gens + gens,
                                "tree_weight": tree_weight, "forward_samples": n_fwd})


def _sample_ray(seg, dt: float, growth: float = 1 / 64):
    """Samples of a vertical ray with step max(dt, growth * distance to junction)."""
    x0, t0, x1, t1 = seg
    # the junction is the endpoint nearer to the core (t in [0, 2/3])
    junction, far = (t1, t0) if t0 < 0 else (t0, t1)
    direction = np.sign(far - junction)
    length = abs(far - junction)
    edges = [0.0]
    while edges[-1] < length:
        edges.append(min(length, edges[-1] + max(dt, growth * edges[-1])))
    e = np.array(edges)
    mid = 0.5 * (e[:-1] + e[1:])
    t = junction + direction * mid
    return np.stack([np.full(t.size, x0), t], axis=1), np.diff(e)


def weierstrass_holder_bound(amps, scale: float = 1.0) -> float:
    """Upper bound for the Hoelder-1/2 constant of
    scale * sum_j amps_j 2^{-j} sin(4^j t + phase_j), from
    |sin a - sin b| <= min(2, |a - b|) termwise, maximised over a dense
    log grid of increments (the bound is monotone between grid points up to
    a factor 2^{1/16}, which is included)."""
    amps = np.asarray(amps, dtype=float)
    j = np.arange(amps.size)
    d = 2.0 ** np.linspace(-2 * amps.size - 8, 4, 400)
    terms = amps[None, :] * 2.0 ** -j[None, :] * np.minimum(2.0, 4.0 ** j[None, :] * d[:, None])
    return float(scale * (terms.sum(axis=1) / np.sqrt(d)).max() * 2 ** (1 / 16))


def random_lip_graph(seed: int, half_time: float = 4.0, pitch: float = 2 ** -6,
                     b: float = 0.5, terms: int = 8) -> SampledSurface:
    """Graph X = psi(t) of a random Weierstrass-type Lip(1,1/2) function.

    psi(t) = c * sum_j a_j 2^{-j} sin(4^j t + phi_j), rescaled so its
    measured Lip(1,1/2) constant on the sample grid is at most ``b``.
    """
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0, 2 * np.pi, terms)
    amps = rng.uniform(0.5, 1.0, terms)

    def raw(t):
        t = np.asarray(t, dtype=float)
        return sum(a * 2.0 ** -j * np.sin(4.0 ** j * t + p)
                   for j, (a, p) in enumerate(zip(amps, phases)))

    dt = pitch ** 2
    t = -half_time + (np.arange(int(round(2 * half_time / dt))) + 0.5) * dt
    lip = grid_lip_constant(raw(t), pitch)
    # allow for oscillation between grid nodes
    c = b / (lip * 1.05)

    def psi(t):
        return c * raw(t)

    g = GraphFunction.from_function(lambda P: psi(P[:, -1]), [-half_time], [half_time], pitch,
                                    lip_constant=b)
    surf = build_graph_surface(g, 1, name="random_lip")
    hw = 2.0 + np.sqrt(half_time)
    surf.window = Window([-hw, -half_time], [hw, half_time])
    surf.sheets = [psi]
    surf.sheet_holder = weierstrass_holder_bound(amps, c)
    surf.meta.update({"generator": "random_lip", "seed": seed, "b": b, "pitch": pitch, "psi": psi})
    return surf


# ---------------------------------------------------------------------------
# file formats

def save_point_cloud(surface: SampledSurface, path) -> None:
    """CSV ``x1,...,xn,t,weight`` with 17 significant digits."""
    n = surface.n
    header = [f"x{i + 1}" for i in range(n)] + ["t", "weight"]
    data = np.column_stack([surface.points, surface.weights])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def load_point_cloud(path, resolution: Optional[float] = None, name: str = "cloud") -> SampledSurface:
    """Read a point cloud written by :func:`save_point_cloud`.

    The result carries no exact oracle; ``resolution`` defaults to the median
    nearest-neighbour parabolic gap along time order.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if len(header) < 3 or header[-2:] != ["t", "weight"]:
        raise ValueError("point cloud header must end with t,weight")
    n = len(header) - 2
    arr = np.array(rows, dtype=float).reshape(-1, n + 2)
    pts, w = arr[:, :-1], arr[:, -1]
    if resolution is None:
        if pts.shape[0] > 1:
            s = pts[np.argsort(pts[:, -1], kind="stable")]
            gaps = np.sqrt(np.sum(np.diff(s[:, :-1], axis=0) ** 2, axis=1)) + np.sqrt(np.abs(np.diff(s[:, -1])))
            resolution = float(np.median(gaps)) or 1.0
        else:
            resolution = 1.0
    return SampledSurface(n, pts, w, resolution, name=name)


def save_graph_function(psi: GraphFunction, path, contact: Optional[np.ndarray] = None) -> None:
    """CSV ``y1..y{n-1},s,psi[,contact]`` over the grid nodes."""
    nodes = psi.nodes()
    m = nodes.shape[1]
    header = [f"y{i + 1}" for i in range(m - 1)] + ["s", "psi"]
    cols = [nodes, psi.values.reshape(-1, 1)]
    if contact is not None:
        header.append("contact")
        cols.append(np.asarray(contact, dtype=float).reshape(-1, 1))
    data = np.hstack(cols)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            vals = [format(v, ".17g") for v in row[:m + 1]]
            if contact is not None:
                vals.append(str(int(row[-1])))
            fh.write(",".join(vals) + "\n")
