"""Flatness coefficients (beta numbers), Carleson sums and packing norms.

All planes are time-independent: ``{<nu, Y> = c} x R_t``.  The L^2 fit is a
weighted total-least-squares fit of the spatial coordinates (the smallest
eigenvector of the weighted spatial covariance); the sup fit minimises the
width of the spatial point set over directions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .dyadic import DyadicTree, dilate_cube
from .pargeo import PointST, TimeIndepPlane, as_points, fibonacci_directions
from .measure import MIN_SCALE_FACTOR
from .surfaces import SampledSurface, cell_labels

VARIANTS = ("beta2", "beta_inf", "dyadic_beta2", "dyadic_beta_inf", "bilateral")
LOG2 = float(np.log(2.0))


@dataclass
class BetaResult:
    """A flatness coefficient at one centre and scale with its fitted plane."""

    center: PointST
    scale: float
    variant: str
    value: float
    plane: Optional[TimeIndepPlane]
    empty: bool = False
    extra: dict = field(default_factory=dict)


@dataclass
class CarlesonReport:
    """Normalised Carleson sums per base and their supremum."""

    values: np.ndarray
    norm_estimate: float
    grid: list
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"values": [float(v) for v in self.values], "norm_estimate": float(self.norm_estimate),
                "grid": self.grid, **{k: v for k, v in self.extra.items() if np.isscalar(v)}}


# ---------------------------------------------------------------------------
# plane fits

def _tls_from_moments(S0, S1, S2):
    """Weighted TLS residual and unit normals from moments about a centre.

    Returns (residual, normal, mean) with residual = sum w <nu, y - mean>^2
    minimised over unit nu.
    """
    S0 = np.asarray(S0, dtype=float)
    Q, n = S1.shape
    safe = np.where(S0 > 0, S0, 1.0)
    mean = S1 / safe[:, None]
    cov = S2 - S0[:, None, None] * mean[:, :, None] * mean[:, None, :]
    if n == 1:
        normal = np.ones((Q, 1))
        res = np.maximum(cov[:, 0, 0], 0.0)
    else:
        _, vec = np.linalg.eigh(cov)
        normal = vec[:, :, 0]
        res = np.maximum(np.einsum("qi,qij,qj->q", normal, cov, normal), 0.0)
    res = np.where(S0 > 0, res, 0.0)
    return res, normal, mean


def tls_plane(Y: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray, float]:
    """Weighted TLS fit of spatial points ``Y``: (residual, normal, offset)."""
    c = Y[0] if Y.shape[0] else np.zeros(Y.shape[1])
    Z = Y - c
    S0 = np.array([w.sum()])
    S1 = (w[:, None] * Z).sum(axis=0)[None, :]
    S2 = np.einsum("i,ij,ik->jk", w, Z, Z)[None, :, :]
    res, nrm, mean = _tls_from_moments(S0, S1, S2)
    nu = nrm[0]
    return float(res[0]), nu, float(nu @ (mean[0] + c))


def _candidate_directions(Y: np.ndarray, extra=(), grid: int = 180) -> np.ndarray:
    n = Y.shape[1]
    cands = [np.eye(n)]
    for v in extra:
        v = np.asarray(v, dtype=float)
        if np.linalg.norm(v) > 0:
            cands.append((v / np.linalg.norm(v))[None, :])
    if n >= 2:
        cands.append(fibonacci_directions(n, grid if n == 2 else 4 * grid))
        U = np.unique(Y, axis=0)
        if U.shape[0] > n:
            try:
                from scipy.spatial import ConvexHull

                hull = ConvexHull(U)
                # facet normals: the minimal width is attained at one of them
                # in the plane, and they seed the refinement in space
                cands.append(hull.equations[:, :-1])
            except Exception:  # degenerate (flat) sets: covered by the TLS normal
                pass
    D = np.vstack(cands)
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def minimax_plane(Y: np.ndarray, extra_dirs=(), tol: float = 0.0) -> tuple[float, np.ndarray, float]:
    """Smallest half-width of the spatial set ``Y`` over directions.

    Returns (half_width, normal, offset); the plane {<nu, y> = offset} has
    every point within half_width.  Exact in n <= 2; in n = 3 the direction
    grid plus hull facet normals is refined by a local search to ``tol``.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[1]
    if Y.shape[0] == 0:
        return 0.0, np.eye(n)[-1], 0.0
    if n == 1:
        lo, hi = float(Y[:, 0].min()), float(Y[:, 0].max())
        return 0.5 * (hi - lo), np.ones(1), 0.5 * (hi + lo)
    U = np.unique(Y, axis=0)
    D = _candidate_directions(U, extra_dirs)
    proj = U @ D.T
    width = proj.max(axis=0) - proj.min(axis=0)
    i = int(np.argmin(width))
    best_w, best_d = float(width[i]), D[i]
    if n >= 3 and best_w > 0:
        from scipy.optimize import minimize

        def f(ang):
            v = np.array([np.sin(ang[0]) * np.cos(ang[1]), np.sin(ang[0]) * np.sin(ang[1]), np.cos(ang[0])])
            p = U @ v
            return p.max() - p.min()

        a0 = np.array([np.arccos(np.clip(best_d[2], -1, 1)), np.arctan2(best_d[1], best_d[0])])
        opt = minimize(f, a0, method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": max(tol, 1e-15), "maxiter": 2000})
        if opt.fun < best_w:
            a = opt.x
            best_d = np.array([np.sin(a[0]) * np.cos(a[1]), np.sin(a[0]) * np.sin(a[1]), np.cos(a[0])])
            best_w = float(opt.fun)
    p = U @ best_d
    return 0.5 * best_w, best_d, 0.5 * float(p.max() + p.min())


# ---------------------------------------------------------------------------
# continuous beta numbers

def beta2_squared_many(surface: SampledSurface, centers, s: float,
                       cell: Optional[float] = None) -> np.ndarray:
    """beta_2(c, s)^2 for many centres at one scale (vectorised).

    With ``cell`` the samples are first merged on that grid (see
    :meth:`SampledSurface.aggregated`).
    """
    C = as_points(centers)
    if cell is None:
        S0, S1, S2 = surface.box_moments(C, s)
    else:
        S0, S1, S2 = surface.box_moments_coarse(C, s, cell)
    res, _, _ = _tls_from_moments(S0, S1, S2)
    return res / s ** (surface.n + 3)


def beta2(surface: SampledSurface, center, r: float) -> BetaResult:
    """L^2 flatness: value^2 = min_P r^{-n-1} sum_{Delta} (dist(Y, P) / r)^2 w."""
    c = center.as_array() if isinstance(center, PointST) else np.asarray(center, dtype=float)
    S0, S1, S2 = surface.box_moments(c, r)
    res, nrm, mean = _tls_from_moments(S0, S1, S2)
    pc = PointST.from_array(c)
    if S0[0] <= 0:
        return BetaResult(pc, r, "beta2", 0.0, None, empty=True)
    nu = nrm[0]
    plane = TimeIndepPlane.from_normal(nu, float(nu @ (mean[0] + c[:-1])))
    val = float(np.sqrt(res[0] / r ** (surface.n + 3)))
    return BetaResult(pc, r, "beta2", val, plane, extra={"mass": float(S0[0])})


def beta_inf(surface: SampledSurface, center, r: float) -> BetaResult:
    """Sup flatness: min over planes of max dist / r over samples of Delta."""
    c = center.as_array() if isinstance(center, PointST) else np.asarray(center, dtype=float)
    idx = surface.in_cube(c, r)
    pc = PointST.from_array(c)
    if idx.size == 0:
        return BetaResult(pc, r, "beta_inf", 0.0, None, empty=True)
    Y = surface.points[idx, :-1]
    w = surface.weights[idx]
    extra = []
    if w.sum() > 0 and surface.n > 1:
        extra.append(tls_plane(Y, w)[1])
    hw, nu, off = minimax_plane(Y, extra, tol=1e-4 * r)
    return BetaResult(pc, r, "beta_inf", hw / r, TimeIndepPlane.from_normal(nu, off),
                      extra={"count": int(idx.size)})


def comparison_sides(surface: SampledSurface, center, r: float) -> tuple[float, float]:
    """(beta_inf(r)^{n+3}, 16^{n+3} beta_2(2r)^2) at one centre."""
    n = surface.n
    bi = beta_inf(surface, center, r).value
    b2 = beta2(surface, center, 2 * r).value
    return bi ** (n + 3), 16.0 ** (n + 3) * b2 ** 2


# ---------------------------------------------------------------------------
# dyadic beta numbers

def _dilate_cached(tree: DyadicTree, k: int, j: int, factor: float) -> np.ndarray:
    cache = tree.__dict__.setdefault("_dilate_cache", {})
    key = (k, j, float(factor))
    if key not in cache:
        cache[key] = dilate_cube(tree, k, j, factor)
    return cache[key]


def beta_dyadic(tree: DyadicTree, k: int, j: int, variant: str = "dyadic_beta_inf",
                k_dilate: float = 8.0) -> BetaResult:
    """Dyadic flatness of cube (k, j).

    ``dyadic_beta_inf``: min_P sup_{kQ} dist / diam(Q).
    ``dyadic_beta2``: (min_P diam(Q)^{-n-3} sum_{2kQ} dist^2 w)^{1/2}.
    """
    if k_dilate < 2:
        raise ValueError("k_dilate must be >= 2")
    surf = tree.surface
    diam = float(tree.diameters(k)[j])
    cpt = PointST.from_array(tree.center_point(k, j))
    if diam <= 0:
        return BetaResult(cpt, 0.0, variant, 0.0, None, empty=True)
    if variant == "dyadic_beta_inf":
        idx = _dilate_cached(tree, k, j, k_dilate)
        Y = surf.points[idx, :-1]
        extra = []
        if surf.n > 1 and surf.weights[idx].sum() > 0:
            extra.append(tls_plane(Y, surf.weights[idx])[1])
        hw, nu, off = minimax_plane(Y, extra, tol=1e-4 * diam)
        return BetaResult(cpt, diam, variant, hw / diam, TimeIndepPlane.from_normal(nu, off),
                          extra={"count": int(idx.size), "k_dilate": k_dilate})
    if variant == "dyadic_beta2":
        idx = _dilate_cached(tree, k, j, 2 * k_dilate)
        Y = surf.points[idx, :-1]
        w = surf.weights[idx]
        if w.sum() <= 0:
            return BetaResult(cpt, diam, variant, 0.0, None, empty=True)
        res, nu, off = tls_plane(Y, w)
        val = float(np.sqrt(res / diam ** (surf.n + 3)))
        return BetaResult(cpt, diam, variant, val, TimeIndepPlane.from_normal(nu, off),
                          extra={"count": int(idx.size), "k_dilate": k_dilate})
    raise ValueError(f"unknown dyadic variant {variant!r}")


def _plane_ball_points(nu: np.ndarray, c: float, X: np.ndarray, R: float, pitch: float) -> np.ndarray:
    """Grid points of P = {<nu, Y> = c} x R_t inside the parabolic ball B(X, R)."""
    n = nu.size
    sp, tau = X[:-1], X[-1]
    foot = sp + (c - nu @ sp) * nu
    normal_gap = abs(c - nu @ sp)
    if normal_gap > R:
        return np.empty((0, n + 1))
    # orthonormal basis of the plane's spatial directions
    if n > 1:
        Qm, _ = np.linalg.qr(np.column_stack([nu, np.eye(n)]))
        basis = Qm[:, 1:n]
    else:
        basis = np.zeros((1, 0))
    m = int(np.ceil(R / pitch))
    ax = np.arange(-m, m + 1) * pitch
    tt = np.arange(-m * m, m * m + 1) * pitch * pitch
    grids = np.meshgrid(*([ax] * (n - 1) + [tt]), indexing="ij")
    G = np.stack([g.ravel() for g in grids], axis=1)
    lat = G[:, :-1]
    d = np.sqrt(normal_gap ** 2 + np.sum(lat ** 2, axis=1)) + np.sqrt(np.abs(G[:, -1]))
    keep = d <= R
    G = G[keep]
    Z = np.empty((G.shape[0], n + 1))
    Z[:, :-1] = foot + G[:, :-1] @ basis.T
    Z[:, -1] = tau + G[:, -1]
    return Z


def bilateral_beta(tree: DyadicTree, k: int, j: int, k_dilate: float = 8.0,
                   plane_pitch: Optional[float] = None, offsets: int = 17,
                   grid_dirs: int = 32) -> BetaResult:
    """Bilateral flatness of cube (k, j).

    min over planes of [sup_{kQ} dist(., P) + sup_{Z in P cap B(X_Q, k diam)} dist(Z, Sigma)]
    divided by diam(Q).  Planes range over candidate directions (sup fit,
    TLS fit, axes, a direction grid) and a grid of offsets; the second
    supremum is evaluated on a grid of pitch ``plane_pitch`` on the plane.
    Candidates are scanned in increasing order of the first term and the
    scan stops once that term alone exceeds the best total.
    """
    surf = tree.surface
    n = surf.n
    diam = float(tree.diameters(k)[j])
    X = tree.center_point(k, j)
    cpt = PointST.from_array(X)
    if diam <= 0:
        return BetaResult(cpt, 0.0, "bilateral", 0.0, None, empty=True)
    R = k_dilate * diam
    if plane_pitch is None:
        plane_pitch = max(surf.resolution, R / (16 if n > 1 else 64))
    idx = _dilate_cached(tree, k, j, k_dilate)
    Y = surf.points[idx, :-1]
    dirs = [minimax_plane(Y)[1]]
    if surf.weights[idx].sum() > 0:
        dirs.append(tls_plane(Y, surf.weights[idx])[1])
    D = np.vstack(dirs + [np.eye(n)] + ([fibonacci_directions(n, grid_dirs)] if n > 1 else []))
    D = D / np.linalg.norm(D, axis=1, keepdims=True)
    # a direction and its negative give the same planes
    lead = np.argmax(np.abs(D) > 1e-12, axis=1)
    D = D * np.sign(D[np.arange(D.shape[0]), lead])[:, None]
    _, first = np.unique(np.round(D, 12), axis=0, return_index=True)
    D = D[np.sort(first)]
    cands = []
    for nu in D:
        p = Y @ nu
        lo, hi = float(p.min()), float(p.max())
        offs = np.unique(np.concatenate([np.linspace(lo, hi, offsets), [0.5 * (lo + hi), nu @ X[:-1]]]))
        for c in offs:
            cands.append((max(hi - c, c - lo), tuple(nu), float(c)))
    cands.sort(key=lambda z: (z[0], z[1], z[2]))
    best = (np.inf, None, None, None)
    for first, nu, c in cands:
        if first >= best[0]:
            break
        Z = _plane_ball_points(np.array(nu), c, X, R, plane_pitch)
        if Z.shape[0] == 0:
            second = 0.0
        else:
            # a coarse subset bounds the supremum from below
            lb = float(surf.distance_near(Z[::16], X, R).max())
            if first + lb >= best[0]:
                continue
            second = max(lb, float(surf.distance_near(Z, X, R).max()))
        tot = first + second
        if tot < best[0]:
            best = (tot, nu, c, (first, second))
    tot, nu, c, parts = best
    return BetaResult(cpt, diam, "bilateral", tot / diam, TimeIndepPlane.from_normal(nu, c),
                      extra={"k_dilate": k_dilate, "plane_pitch": plane_pitch,
                             "sup_sigma_to_plane": parts[0] / diam,
                             "sup_plane_to_sigma": parts[1] / diam})


# ---------------------------------------------------------------------------
# Carleson sums

@numba.njit(cache=True)
def _outer_cells(P, w, c, h):
    """Cells of size (h, ..., h^2) about ``c`` for time-sorted samples.

    Returns, per occupied cell, the first sample nearest the weighted cell
    centroid (in cell units) and the total cell weight.
    """
    N, d = P.shape
    n = d - 1
    reps = np.empty(N, dtype=np.int64)
    Ws = np.empty(N)
    nr = 0
    i = 0
    cen = np.empty(d)
    while i < N:
        tc = np.floor((P[i, n] - c[n]) / (h * h))
        j = i + 1
        while j < N and np.floor((P[j, n] - c[n]) / (h * h)) == tc:
            j += 1
        keys = np.zeros(j - i, dtype=np.int64)
        for q in range(i, j):
            key = 0
            for a in range(n):
                key = key * (1 << 20) + (np.int64(np.floor((P[q, a] - c[a]) / h)) + (1 << 19))
            keys[q - i] = key
        order = np.argsort(keys, kind="mergesort")
        g = 0
        while g < j - i:
            e = g + 1
            while e < j - i and keys[order[e]] == keys[order[g]]:
                e += 1
            W = 0.0
            cen[:] = 0.0
            for u in range(g, e):
                q = i + order[u]
                W += w[q]
                for a in range(d):
                    cen[a] += w[q] * P[q, a]
            if W > 0:
                for a in range(d):
                    cen[a] /= W
            best = np.inf
            bi = -1
            for u in range(g, e):
                q = i + order[u]
                dist = 0.0
                for a in range(n):
                    dist += ((P[q, a] - cen[a]) / h) ** 2
                dist += ((P[q, n] - cen[n]) / (h * h)) ** 2
                if dist < best:
                    best = dist
                    bi = q
            reps[nr] = bi
            Ws[nr] = W
            nr += 1
            g = e
        i = j
    return reps[:nr], Ws[:nr]


def _outer_quadrature(P: np.ndarray, w: np.ndarray, c: np.ndarray, h: float):
    """Group time-sorted samples in cells of size (h, ..., h^2); one
    representative per cell (the member nearest the weighted cell centroid)
    carries the cell's total weight."""
    if P.shape[0] and np.max(np.abs(P[:, :-1] - c[:-1])) / h >= 2 ** 19:
        raise ValueError("cell grid too fine for the sample extent")
    return _outer_cells(np.ascontiguousarray(P), np.ascontiguousarray(w), np.asarray(c, dtype=float), float(h))


def scale_floor(surface: SampledSurface) -> float:
    """Smallest scale at which a sampled cube resolves the surface."""
    return MIN_SCALE_FACTOR * surface.resolution


def _merge_cell(surface: SampledSurface, s: float, coarse: int) -> Optional[float]:
    """Dyadic merge cell of about s/coarse, or None if it would not beat
    the raw resolution."""
    if coarse <= 0:
        return None
    cell = 2.0 ** np.floor(np.log2(s / coarse))
    return cell if cell > 2 * surface.resolution else None


def carleson_value(surface: SampledSurface, center, r: float, m: int = 12,
                   outer_cells: int = 16, floor: Optional[float] = None,
                   coarse: int = 16) -> float:
    """Normalised Carleson sum over Delta(center, r) x (0, r).

    r^{-n-1} sum_{j=1}^{m} sum_{samples in Delta} beta_2^2(sample, r 2^{-j}) w log 2,
    with the outer sum over samples grouped in cells of size
    max(s/2, r/outer_cells) at shell scale s.  Shells below ``floor``
    (default :func:`scale_floor`) are dropped: there a cube holds too few
    samples for its normalised mass to mean anything.  At shells much
    coarser than the resolution, samples are merged in cells of about
    s/coarse (``coarse=0`` disables this).
    """
    floor = scale_floor(surface) if floor is None else floor
    c = center.as_array() if isinstance(center, PointST) else np.asarray(center, dtype=float)
    idx = surface.index.cube(c, r, time_sorted=True)
    idx = idx[surface.weights[idx] > 0]
    if idx.size == 0:
        return 0.0
    P = surface.points[idx]
    w = surface.weights[idx]
    total = 0.0
    quad = {}
    for j in range(1, m + 1):
        s = r * 2.0 ** -j
        if s < floor:
            break
        h = max(s / 2, r / outer_cells)
        if h not in quad:
            quad[h] = _outer_quadrature(P, w, c, h)
        reps, W = quad[h]
        b2 = beta2_squared_many(surface, P[reps], s, _merge_cell(surface, s, coarse))
        total += float(np.sum(W * b2)) * LOG2
    return total / r ** (surface.n + 1)


def carleson_norm(surface: SampledSurface, bases, scale_subdivisions: int = 12,
                  outer_cells: int = 16, floor: Optional[float] = None,
                  coarse: int = 16) -> CarlesonReport:
    """Carleson sums for each base (center, r); the norm estimate is their max."""
    if scale_subdivisions < 8:
        raise ValueError("at least 8 dyadic subdivisions are required")
    vals = []
    grid = []
    for center, r in bases:
        c = center.as_array() if isinstance(center, PointST) else np.asarray(center, dtype=float)
        vals.append(carleson_value(surface, c, float(r), scale_subdivisions, outer_cells, floor, coarse))
        grid.append([[float(v) for v in c], float(r)])
    vals = np.array(vals)
    return CarlesonReport(vals, float(vals.max()) if vals.size else 0.0, grid,
                          extra={"m": scale_subdivisions, "outer_cells": outer_cells,
                                 "floor": scale_floor(surface) if floor is None else floor})


def truncated_carleson_integral(surface: SampledSurface, points, upper: float, m: int = 12,
                                floor: Optional[float] = None) -> np.ndarray:
    """f(Z) = int_0^{upper} beta_2^2(Z, r) dr / r by the dyadic-shell rule.

    Shells r = upper 2^{-j}, j = 1..m, each weighted by log 2; shells below
    ``floor`` are dropped.
    """
    P = as_points(points)
    out = np.zeros(P.shape[0])
    for j in range(1, m + 1):
        s = upper * 2.0 ** -j
        if floor is not None and s < floor:
            break
        out += beta2_squared_many(surface, P, s) * LOG2
    return out


# ---------------------------------------------------------------------------
# dyadic packing

def dyadic_beta_values(tree: DyadicTree, variant: str, k_dilate: float = 8.0,
                       levels=None) -> dict:
    """Beta values for every cube of the chosen levels: {k: array}."""
    levels = range(tree.k_min, tree.k_max + 1) if levels is None else levels
    return {k: np.array([beta_dyadic(tree, k, j, variant, k_dilate).value
                         for j in range(tree.n_cubes(k))]) for k in levels}


def dyadic_packing(tree: DyadicTree, beta_values: dict, eps: float,
                   beta_inf_values: Optional[dict] = None) -> CarlesonReport:
    """Packing sums (1/sigma(Q)) sum_{Q' in Q} beta^2(Q') sigma(Q') and the
    eps-bad mass (1/sigma(Q)) sum_{beta_inf(Q') >= eps} sigma(Q').

    ``beta_values`` holds beta_2 per level; ``beta_inf_values`` (default:
    the same dict) decides badness.  Sums are truncated at the finest level
    present.  ``norm_estimate`` is the packing sup; ``extra['C_eps']`` the
    bad-mass sup.
    """
    bi = beta_values if beta_inf_values is None else beta_inf_values
    levels = sorted(beta_values)
    sig = {k: tree.masses(k) for k in levels}
    acc = {k: beta_values[k] ** 2 * sig[k] for k in levels}
    bad = {k: np.where(bi[k] >= eps, sig[k], 0.0) for k in levels}
    for k in reversed(levels[1:]):
        if k - 1 not in acc:
            continue
        np.add.at(acc[k - 1], tree.parents[k], acc[k])
        np.add.at(bad[k - 1], tree.parents[k], bad[k])
    ratios, bads = [], []
    for k in levels:
        ok = sig[k] > 0
        ratios.append(acc[k][ok] / sig[k][ok])
        bads.append(bad[k][ok] / sig[k][ok])
    R = np.concatenate(ratios)
    B = np.concatenate(bads)
    return CarlesonReport(R, float(R.max()) if R.size else 0.0, [[int(k), tree.n_cubes(k)] for k in levels],
                          extra={"C_eps": float(B.max()) if B.size else 0.0, "eps": eps,
                                 "bad_ratios": B})


# ---------------------------------------------------------------------------
# export

def export_beta_field(results, path) -> None:
    """CSV ``cx1..cxn,ct,r,variant,value`` with 17 significant digits."""
    results = list(results)
    if not results:
        raise ValueError("no results to export")
    n = results[0].center.n
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join([f"cx{i + 1}" for i in range(n)] + ["ct", "r", "variant", "value"]) + "\n")
        for b in results:
            vals = [format(v, ".17g") for v in b.center.as_array()]
            vals += [format(b.scale, ".17g"), b.variant, format(b.value, ".17g")]
            fh.write(",".join(vals) + "\n")
