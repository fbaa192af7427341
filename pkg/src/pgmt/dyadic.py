"""Christ-type dyadic cubes on sampled surfaces.

Level k centres form a greedy maximal 2^{-k}-separated net (parabolic
metric) containing the level k-1 centres.  Each centre's parent is the
nearest coarser centre, each sample hangs off its nearest finest-level
centre, and a cube is the set of samples descending from its centre.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .pargeo import PointST
from .surfaces import InvariantError, SampledSurface


@numba.njit(cache=True)
def _pdist(P, i, Q, j):
    s = 0.0
    d = P.shape[1] - 1
    for a in range(d):
        v = P[i, a] - Q[j, a]
        s += v * v
    return np.sqrt(s) + np.sqrt(abs(P[i, d] - Q[j, d]))


@numba.njit(cache=True)
def _cell_keys(P, s, lo):
    d = P.shape[1]
    C = np.empty((P.shape[0], d), dtype=np.int64)
    for i in range(P.shape[0]):
        for a in range(d):
            h = s if a < d - 1 else s * s
            C[i, a] = np.int64(np.floor((P[i, a] - lo[a]) / h))
    return C


@numba.njit(cache=True)
def _linear(C, dims):
    key = np.zeros(C.shape[0], dtype=np.int64)
    for i in range(C.shape[0]):
        k = 0
        for a in range(C.shape[1]):
            k = k * dims[a] + C[i, a]
        key[i] = k
    return key


def _grid(P: np.ndarray, s: float):
    lo = P.min(axis=0) - np.r_[np.full(P.shape[1] - 1, s), s * s]
    C = _cell_keys(P, s, lo)
    dims = C.max(axis=0) + 3
    return lo, C, dims


@numba.njit(cache=True)
def _greedy_net(P, order, s, C, dims, ukeys, cap):
    """Scan points in ``order``; accept a point when no accepted point lies
    within parabolic distance < s.  Accepted points are bucketed by cell."""
    ncell = ukeys.shape[0]
    bucket = -np.ones((ncell, cap), dtype=np.int64)
    count = np.zeros(ncell, dtype=np.int64)
    accepted = np.zeros(P.shape[0], dtype=np.bool_)
    d = C.shape[1]
    nb = 3 ** d
    off = np.empty(d, dtype=np.int64)
    cc = np.empty(d, dtype=np.int64)
    overflow = False
    for ii in range(order.shape[0]):
        i = order[ii]
        ok = True
        for m in range(nb):
            q = m
            for a in range(d):
                off[a] = q % 3 - 1
                q //= 3
            key = 0
            for a in range(d):
                cc[a] = C[i, a] + off[a]
                key = key * dims[a] + cc[a]
            pos = np.searchsorted(ukeys, key)
            if pos < ncell and ukeys[pos] == key:
                for b in range(count[pos]):
                    j = bucket[pos, b]
                    if _pdist(P, i, P, j) < s:
                        ok = False
                        break
            if not ok:
                break
        if ok:
            key = 0
            for a in range(d):
                key = key * dims[a] + C[i, a]
            pos = np.searchsorted(ukeys, key)
            if count[pos] < cap:
                bucket[pos, count[pos]] = i
                count[pos] += 1
            else:
                overflow = True
            accepted[i] = True
    return accepted, overflow


@numba.njit(cache=True)
def _nearest(Pq, Cq, P, centers, Cc_keys_sorted, sorted_centers, starts, dims, reach):
    """Nearest centre (parabolic distance, ties to the smallest index) for
    every query, searching cells within ``reach`` of the query cell."""
    d = Cq.shape[1]
    out = -np.ones(Pq.shape[0], dtype=np.int64)
    dist = np.full(Pq.shape[0], np.inf)
    w = 2 * reach + 1
    nb = w ** d
    cc = np.empty(d, dtype=np.int64)
    for i in range(Pq.shape[0]):
        best = np.inf
        arg = -1
        for m in range(nb):
            q = m
            key = 0
            for a in range(d):
                cc[a] = Cq[i, a] + q % w - reach
                q //= w
                key = key * dims[a] + cc[a]
            pos = np.searchsorted(Cc_keys_sorted, key)
            while pos < Cc_keys_sorted.shape[0] and Cc_keys_sorted[pos] == key:
                c = sorted_centers[pos]
                dd = _pdist(Pq, i, P, centers[c])
                if dd < best or (dd == best and c < arg):
                    best = dd
                    arg = c
                pos += 1
        out[i] = arg
        dist[i] = best
    return out, dist


def _nearest_centers(Pq: np.ndarray, P: np.ndarray, centers: np.ndarray, s: float, reach: int = 1):
    allp = np.vstack([Pq, P[centers]])
    lo = allp.min(axis=0) - np.r_[np.full(P.shape[1] - 1, s), s * s] * (reach + 1)
    Cq = _cell_keys(Pq, s, lo)
    Cc = _cell_keys(P[centers], s, lo)
    dims = np.maximum(Cq.max(axis=0), Cc.max(axis=0)) + reach + 2
    keys = _linear(Cc, dims)
    order = np.argsort(keys, kind="stable")
    return _nearest(Pq, Cq, P, centers, keys[order], order, order, dims, reach)


@dataclass
class DyadicCube:
    level: int
    center: PointST
    members: np.ndarray
    parent: Optional[int]
    children: list = field(default_factory=list)
    index: int = 0


@dataclass
class DyadicTree:
    """Levels ``k_min..k_max``; ``labels[k][i]`` is the level-k cube of sample i."""

    surface: SampledSurface
    k_min: int
    k_max: int
    centers: dict
    parents: dict
    labels: dict
    alpha: float = 0.0
    _csr: dict = field(default_factory=dict, repr=False)

    @property
    def levels(self) -> dict:
        return {k: self.cubes(k) for k in range(self.k_min, self.k_max + 1)}

    def n_cubes(self, k: int) -> int:
        return int(self.centers[k].size)

    def _members_csr(self, k: int):
        if k not in self._csr:
            lab = self.labels[k]
            order = np.argsort(lab, kind="stable")
            starts = np.searchsorted(lab[order], np.arange(self.n_cubes(k) + 1))
            self._csr[k] = (order, starts)
        return self._csr[k]

    def members(self, k: int, j: int) -> np.ndarray:
        order, starts = self._members_csr(k)
        return order[starts[j]:starts[j + 1]]

    def center_point(self, k: int, j: int) -> np.ndarray:
        return self.surface.points[self.centers[k][j]]

    def children(self, k: int, j: int) -> np.ndarray:
        if k >= self.k_max:
            return np.empty(0, dtype=np.int64)
        return np.nonzero(self.parents[k + 1] == j)[0]

    def cube(self, k: int, j: int) -> DyadicCube:
        par = None if k == self.k_min else int(self.parents[k][j])
        return DyadicCube(k, PointST.from_array(self.center_point(k, j)), self.members(k, j), par,
                          list(self.children(k, j)), j)

    def cubes(self, k: int) -> list:
        return [self.cube(k, j) for j in range(self.n_cubes(k))]

    def masses(self, k: int) -> np.ndarray:
        return np.bincount(self.labels[k], weights=self.surface.weights, minlength=self.n_cubes(k))

    def radii(self, k: int) -> np.ndarray:
        """Largest parabolic distance from each centre to its members."""
        P = self.surface.points
        c = P[self.centers[k]][self.labels[k]]
        d = np.sqrt(np.sum((P[:, :-1] - c[:, :-1]) ** 2, axis=1)) + np.sqrt(np.abs(P[:, -1] - c[:, -1]))
        out = np.zeros(self.n_cubes(k))
        np.maximum.at(out, self.labels[k], d)
        return out

    def diameters(self, k: int) -> np.ndarray:
        """Upper bound 2 * radius on each cube's parabolic diameter."""
        return 2.0 * self.radii(k)

    def to_json(self, path=None) -> str:
        rows = []
        offset = {}
        base = 0
        for k in range(self.k_min, self.k_max + 1):
            offset[k] = base
            base += self.n_cubes(k)
        for k in range(self.k_min, self.k_max + 1):
            counts = np.bincount(self.labels[k], minlength=self.n_cubes(k))
            for j in range(self.n_cubes(k)):
                pid = None if k == self.k_min else int(offset[k - 1] + self.parents[k][j])
                rows.append({"id": offset[k] + j, "level": k,
                             "center": [float(v) for v in self.center_point(k, j)],
                             "member_count": int(counts[j]), "parent_id": pid})
        text = json.dumps({"cubes": rows}, indent=1)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def build_dyadic(surface: SampledSurface, k_min: int, k_max: int,
                 check_mass: bool = True) -> DyadicTree:
    """Build nested nets and the induced cube partition at levels k_min..k_max.

    Raises InvariantError naming the scale if some cube carries no surface
    mass (the sampled surface is not ADR at that scale).
    """
    if k_max < k_min:
        raise ValueError("k_max must be >= k_min")
    P = surface.points
    N = P.shape[0]
    centers, parents = {}, {}
    prev = np.empty(0, dtype=np.int64)
    for k in range(k_min, k_max + 1):
        s = 2.0 ** -k
        lo, C, dims = _grid(P, s)
        keys = _linear(C, dims)
        ukeys = np.unique(keys)
        # zero-weight samples never become centres
        rest = np.setdiff1d(np.nonzero(surface.weights > 0)[0], prev, assume_unique=True)
        order = np.concatenate([prev, rest])
        cap = 64
        while True:
            acc, overflow = _greedy_net(P, order, s, C, dims, ukeys, cap)
            if not overflow:
                break
            cap *= 2
        # keep previous centres first so indices of the coarser net are stable
        new = rest[acc[rest]]
        cur = np.concatenate([prev, new])
        centers[k] = cur
        if k > k_min:
            par, _ = _nearest_centers(P[cur], P, centers[k - 1], 2.0 ** -(k - 1))
            # coarser centres are their own parents
            par[: prev.size] = np.arange(prev.size)
            if np.any(par < 0):
                raise InvariantError(f"parent search failed at scale 2^-{k}")
            parents[k] = par
        prev = cur
    # finest assignment, then propagate up
    lab, dist = _nearest_centers(P, P, centers[k_max], 2.0 ** -k_max)
    reach = 2
    while np.any(lab < 0):
        miss = np.nonzero(lab < 0)[0]
        l2, _ = _nearest_centers(P[miss], P, centers[k_max], 2.0 ** -k_max, reach=reach)
        lab[miss] = l2
        reach *= 2
        if reach > 64:
            raise InvariantError("sample assignment failed")
    labels = {k_max: lab}
    for k in range(k_max, k_min, -1):
        labels[k - 1] = parents[k][labels[k]]
    tree = DyadicTree(surface, k_min, k_max, centers, parents, labels)
    if check_mass:
        for k in range(k_min, k_max + 1):
            m = tree.masses(k)
            if np.any(m <= 0):
                j = int(np.argmin(m))
                raise InvariantError(
                    f"ADR failure at scale 2^-{k}: cube around {tuple(tree.center_point(k, j))} has no mass")
    tree.alpha = containment_alpha(tree)
    return tree


def containment_alpha(tree: DyadicTree) -> float:
    """Largest alpha with Sigma cap Q_{alpha 2^-k}(centre) inside every cube.

    For each sample the competing centres are its non-owning cubes' centres;
    the bound is the smallest cube-norm distance max(|dx|_inf, |dt|^{1/2})
    from a centre to a sample outside its cube, in units of 2^-k.
    """
    P = tree.surface.points
    alpha = np.inf
    for k in range(tree.k_min, tree.k_max + 1):
        s = 2.0 ** -k
        cen = tree.centers[k]
        # a sample outside cube j within cube-norm alpha*s of centre j must
        # lie in a neighbouring cell; check centres against nearby samples
        lo = P.min(axis=0) - np.r_[np.full(P.shape[1] - 1, s), s * s]
        a = _alpha_level(P, tree.labels[k], cen, s, lo)
        alpha = min(alpha, a)
    return float(alpha)


@numba.njit(cache=True)
def _alpha_level(P, labels, centers, s, lo):
    d = P.shape[1]
    # bucket samples in cells of size s
    C = np.empty((P.shape[0], d), dtype=np.int64)
    for i in range(P.shape[0]):
        for a in range(d):
            h = s if a < d - 1 else s * s
            C[i, a] = np.int64(np.floor((P[i, a] - lo[a]) / h))
    dims = np.empty(d, dtype=np.int64)
    for a in range(d):
        dims[a] = C[:, a].max() + 3
    keys = np.zeros(P.shape[0], dtype=np.int64)
    for i in range(P.shape[0]):
        k = 0
        for a in range(d):
            k = k * dims[a] + C[i, a]
        keys[i] = k
    order = np.argsort(keys)
    sk = keys[order]
    best = 1.0
    cc = np.empty(d, dtype=np.int64)
    nb = 3 ** d
    for j in range(centers.shape[0]):
        c = centers[j]
        for m in range(nb):
            q = m
            key = 0
            for a in range(d):
                cc[a] = C[c, a] + q % 3 - 1
                q //= 3
                key = key * dims[a] + cc[a]
            pos = np.searchsorted(sk, key)
            while pos < sk.shape[0] and sk[pos] == key:
                i = order[pos]
                pos += 1
                if labels[i] == j:
                    continue
                rho = np.sqrt(abs(P[i, d - 1] - P[c, d - 1]))
                for a in range(d - 1):
                    v = abs(P[i, a] - P[c, a])
                    if v > rho:
                        rho = v
                if rho / s < best:
                    best = rho / s
    return best


def dilate_cube(tree: DyadicTree, k: int, j: int, k_factor: float) -> np.ndarray:
    """Samples within ``k_factor * diam`` (parabolic distance) of the cube."""
    if k_factor < 1:
        raise ValueError("k_factor must be >= 1")
    P = tree.surface.points
    mem = tree.members(k, j)
    diam = float(tree.diameters(k)[j]) if mem.size > 1 else 0.0
    rad = k_factor * diam
    c = tree.center_point(k, j)
    crad = float(tree.radii(k)[j])
    # candidates: parabolic ball of radius crad + rad around the centre
    R = crad + rad
    cand = tree.surface.in_cube(c, R, closed=True) if R > 0 else mem
    cand = np.union1d(cand, mem)
    if rad == 0:
        return mem
    X = P[cand]
    dc = np.sqrt(np.sum((X[:, :-1] - c[:-1]) ** 2, axis=1)) + np.sqrt(np.abs(X[:, -1] - c[-1]))
    sure = dc <= rad
    maybe = ~sure & (dc <= R)
    Q = P[mem]
    Q = np.ascontiguousarray(Q[np.argsort(Q[:, -1], kind="stable")])
    hit = _within(np.ascontiguousarray(X[maybe]), Q, Q[:, -1].copy(), rad)
    keep = sure.copy()
    keep[np.flatnonzero(maybe)[hit]] = True
    return cand[keep]


@numba.njit(cache=True)
def _within(X, Q, qt, rad):
    """Whether each row of X is within parabolic distance rad of some row
    of the time-sorted Q."""
    out = np.zeros(X.shape[0], dtype=np.bool_)
    n = X.shape[1] - 1
    for i in range(X.shape[0]):
        a = np.searchsorted(qt, X[i, n] - rad * rad, side="left")
        b = np.searchsorted(qt, X[i, n] + rad * rad, side="right")
        for j in range(a, b):
            d = 0.0
            for k in range(n):
                d += (X[i, k] - Q[j, k]) ** 2
            if np.sqrt(d) + np.sqrt(abs(X[i, n] - Q[j, n])) <= rad:
                out[i] = True
                break
    return out


def check_dyadic_properties(tree: DyadicTree, diam_constant: float = 4.0,
                            alpha_min: float = 1 / 8) -> dict:
    """Exhaustive check of properties (i)-(v); returns per-property results."""
    N = len(tree.surface)
    res = {}
    # (i) covering: every sample has a cube at every level
    res["covering"] = all(np.all((tree.labels[k] >= 0) & (tree.labels[k] < tree.n_cubes(k)))
                          and tree.labels[k].shape == (N,) for k in tree.labels)
    # (ii) nesting: a finer cube lies inside exactly one coarser cube
    ok = True
    for k in range(tree.k_min + 1, tree.k_max + 1):
        pairs = np.unique(np.stack([tree.labels[k], tree.labels[k - 1]], axis=1), axis=0)
        if pairs.shape[0] != np.unique(tree.labels[k]).size:
            ok = False
    res["nesting"] = ok
    # (iii) unique parent
    res["unique_parent"] = all(
        tree.parents[k].shape == (tree.n_cubes(k),) and np.all(tree.parents[k] >= 0)
        for k in range(tree.k_min + 1, tree.k_max + 1))
    # (iv) diameter bound
    worst = 0.0
    for k in range(tree.k_min, tree.k_max + 1):
        worst = max(worst, float(tree.diameters(k).max()) / 2.0 ** -k)
    res["diameter_ratio"] = worst
    res["diameter"] = worst <= diam_constant
    # (v) containment
    res["alpha"] = tree.alpha
    res["containment"] = tree.alpha >= alpha_min
    res["all"] = all(res[key] for key in ("covering", "nesting", "unique_parent", "diameter", "containment"))
    return res
