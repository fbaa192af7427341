"""Complementary components on voxel grids, corkscrew cubes and the two
time-synchronisation constructions.

Voxels have side ``pitch`` in space and ``pitch**2`` in time.  Label 0
marks voxels that meet Sigma; free voxels carry flood-fill labels 1..K
(face adjacency).  When the surface provides a global component oracle,
each local label also records its global component id.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .measure import GHFailure, gh_time_advance
from .pargeo import ParCube, PointST, as_points, par_dist
from .surfaces import InvariantError, SampledSurface, local_resample

MODES = ("unsynced", "weak", "strong")


@dataclass
class ComponentLabeling:
    """Flood-fill labels of the free voxels of a window."""

    lower: np.ndarray
    pitch: float
    labels: np.ndarray
    n_components: int
    window: ParCube
    boundary_mask: np.ndarray = field(repr=False, default=None)
    global_ids: Optional[np.ndarray] = None

    @property
    def steps(self) -> np.ndarray:
        st = np.full(self.labels.ndim, self.pitch)
        st[-1] = self.pitch ** 2
        return st

    @property
    def shape(self) -> tuple:
        return self.labels.shape

    def voxel_index(self, pts) -> np.ndarray:
        return np.floor((as_points(pts) - self.lower) / self.steps).astype(np.int64)

    def label_at(self, pts) -> np.ndarray:
        """Labels of the voxels holding ``pts`` (0 outside the grid)."""
        ij = self.voxel_index(pts)
        ok = np.all((ij >= 0) & (ij < np.array(self.shape)), axis=1)
        out = np.zeros(ij.shape[0], dtype=np.int64)
        out[ok] = self.labels[tuple(ij[ok].T)]
        return out

    def global_id(self, label: int) -> int:
        """Global component id of a local label (-1 if unknown)."""
        if self.global_ids is None or label <= 0:
            return -1
        return int(self.global_ids[label])

    def cube_label(self, cube: ParCube) -> int:
        """Label of a cube that lies in one component, else 0.

        All voxels meeting the open cube must carry the same label.
        """
        lo, hi = cube.bounds()
        a = np.floor((lo - self.lower) / self.steps + 1e-9).astype(np.int64)
        b = np.ceil((hi - self.lower) / self.steps - 1e-9).astype(np.int64)
        if np.any(a < 0) or np.any(b > np.array(self.shape)):
            return 0
        block = self.labels[tuple(slice(i, j) for i, j in zip(a, b))]
        first = int(block.flat[0])
        return first if first > 0 and np.all(block == first) else 0

    def to_rle(self, path) -> None:
        """Run-length encoded labels (int32 pairs value, run) plus a JSON sidecar."""
        flat = self.labels.ravel()
        edges = np.flatnonzero(np.diff(flat)) + 1
        starts = np.r_[0, edges]
        runs = np.diff(np.r_[starts, flat.size])
        np.stack([flat[starts], runs], axis=1).astype(np.int32).tofile(str(path))
        side = {"dims": list(self.shape), "pitch": self.pitch, "lower": [float(v) for v in self.lower],
                "window": {"center": list(self.window.center.as_array()),
                           "half_length": self.window.half_length},
                "label_count": int(self.n_components), "dtype": "int32", "order": "C",
                "global_ids": None if self.global_ids is None else [int(v) for v in self.global_ids]}
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(side, fh, indent=2, sort_keys=True)

    @classmethod
    def from_rle(cls, path) -> "ComponentLabeling":
        with open(str(path) + ".json", encoding="utf-8") as fh:
            side = json.load(fh)
        pairs = np.fromfile(str(path), dtype=np.int32).reshape(-1, 2)
        labels = np.repeat(pairs[:, 0], pairs[:, 1]).reshape(side["dims"])
        w = side["window"]
        gid = None if side["global_ids"] is None else np.array(side["global_ids"])
        return cls(np.array(side["lower"]), side["pitch"], labels, side["label_count"],
                   ParCube(PointST.from_array(w["center"]), w["half_length"]),
                   _boundary(labels == 0), gid)


def _boundary(sigma: np.ndarray) -> np.ndarray:
    return ndimage.binary_dilation(sigma, structure=ndimage.generate_binary_structure(sigma.ndim, 1))


def label_components(surface: SampledSurface, window: ParCube, pitch: float,
                     check_window: bool = True) -> ComponentLabeling:
    """Label the connected components of the window minus Sigma.

    The grid is aligned so the window centre sits on voxel corners.  Labels
    are numbered by their first voxel in lexicographic order.
    """
    if not pitch > 0:
        raise ValueError("pitch must be positive")
    if check_window and surface.window is not None and not surface.window.contains_cube(window, 0.0):
        raise InvariantError("label_components: window leaves the surface's valid window")
    if not surface.has_exact_oracle() and pitch < surface.resolution:
        raise InvariantError("label_components: pitch finer than the sample resolution would leak "
                             "between components")
    R = window.half_length
    c = window.center.as_array()
    ms = int(np.ceil(R / pitch - 1e-9))
    mt = int(np.ceil(R * R / pitch ** 2 - 1e-9))
    n = surface.n
    lower = c - np.r_[np.full(n, ms * pitch), mt * pitch ** 2]
    shape = tuple([2 * ms] * n + [2 * mt])
    sigma = surface.rasterize(lower, pitch, shape)
    raw, K = ndimage.label(~sigma, structure=ndimage.generate_binary_structure(n + 1, 1))
    # renumber by first voxel in C order (scipy already scans in this order)
    flat = raw.ravel()
    ids, first = np.unique(flat, return_index=True)
    order = np.argsort(first[ids > 0], kind="stable")
    remap = np.zeros(K + 1, dtype=np.int64)
    remap[ids[ids > 0][order]] = np.arange(1, order.size + 1)
    labels = remap[raw].astype(np.int32)
    gid = None
    if surface.component_fn is not None:
        gid = np.full(K + 1, -1, dtype=np.int64)
        firsts = np.sort(first[ids > 0])
        idx = np.array(np.unravel_index(firsts, shape)).T
        steps = np.r_[np.full(n, pitch), pitch ** 2]
        cen = lower + (idx + 0.5) * steps
        gid[1:] = surface.component_fn(cen)
    return ComponentLabeling(lower, pitch, labels, int(K), window, _boundary(sigma), gid)


# ---------------------------------------------------------------------------
# corkscrews

@dataclass
class CorkscrewPair:
    """Two cubes of half-length rho in distinct components inside Q_r(p)."""

    cube1: ParCube
    cube2: ParCube
    rho: float
    labels: tuple
    synchronized: bool
    gamma_achieved: float
    mode: str = "unsynced"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"cube1": {"center": [float(v) for v in self.cube1.center.as_array()], "half_length": float(self.cube1.half_length)},
                "cube2": {"center": [float(v) for v in self.cube2.center.as_array()], "half_length": float(self.cube2.half_length)},
                "rho": float(self.rho), "labels": [int(v) for v in self.labels],
                "synchronized": self.synchronized, "gamma_achieved": float(self.gamma_achieved),
                "mode": self.mode}


def _window_sums(a: np.ndarray, sizes) -> np.ndarray:
    """Sums of ``a`` over all blocks of the given size (valid positions only)."""
    out = a.astype(np.int64)
    for ax, s in enumerate(sizes):
        c = np.cumsum(out, axis=ax)
        pad = [(0, 0)] * out.ndim
        pad[ax] = (1, 0)
        c = np.pad(c, pad)
        hi = [slice(None)] * out.ndim
        lo = [slice(None)] * out.ndim
        hi[ax] = slice(s, None)
        lo[ax] = slice(0, -s if s > 0 else None)
        out = c[tuple(hi)] - c[tuple(lo)]
    return out


def _same_component(lab: ComponentLabeling, l1: int, l2: int) -> bool:
    g1, g2 = lab.global_id(l1), lab.global_id(l2)
    if g1 >= 0 and g2 >= 0:
        return g1 == g2
    return l1 == l2


def _candidates(lab: ComponentLabeling, sub: np.ndarray, off: np.ndarray, m: int, mode: str,
                t_index, region, center_idx):
    """Best pair of fitting blocks of spatial half-size m (voxels) or None."""
    n1 = sub.ndim
    sizes = [2 * m] * (n1 - 1) + [2 * m * m]
    if any(s > d for s, d in zip(sizes, sub.shape)):
        return None
    present = [int(v) for v in np.unique(sub) if v > 0]
    fits = {}
    vol = int(np.prod(sizes))
    for L in present:
        F = _window_sums(sub == L, sizes) == vol
        if mode == "strong":
            k = t_index - off[-1] - m * m
            if not 0 <= k < F.shape[-1]:
                return None
            G = np.zeros_like(F)
            G[..., k] = F[..., k]
            F = G
        if F.any():
            fits[L] = F
    labs = sorted(fits)
    best = None
    for i, L1 in enumerate(labs):
        for L2 in labs[i + 1:]:
            if _same_component(lab, L1, L2):
                continue
            if region is not None and region not in (lab.global_id(L1), lab.global_id(L2), L1, L2):
                continue
            A, B = fits[L1], fits[L2]
            if mode in ("weak", "strong"):
                ta = A.reshape(-1, A.shape[-1]).any(axis=0)
                tb = B.reshape(-1, B.shape[-1]).any(axis=0)
                common = np.flatnonzero(ta & tb)
                if common.size == 0:
                    continue
                # time slot nearest the centre time, then nearest blocks in it
                k = common[np.argmin(np.abs(common + m * m - (center_idx[-1] - off[-1])))]
                pa = _nearest_block(A[..., k], m, center_idx[:-1] - off[:-1])
                pb = _nearest_block(B[..., k], m, center_idx[:-1] - off[:-1])
                ia, ib = np.r_[pa[0], k], np.r_[pb[0], k]
                score = pa[1] + pb[1]
            else:
                ia, da = _nearest_block_full(A, m, center_idx - off)
                ib, db = _nearest_block_full(B, m, center_idx - off)
                score = da + db
            cand = (score, L1, L2, tuple(ia), tuple(ib))
            if best is None or cand < best:
                best = cand
    return best


def _nearest_block(F: np.ndarray, m: int, target) -> tuple:
    """Spatial block position (in F) whose centre is nearest ``target``."""
    pos = np.argwhere(F)
    d = np.sum((pos + m - target) ** 2, axis=1)
    i = int(np.argmin(d))
    return pos[i], float(np.sqrt(d[i]))


def _nearest_block_full(F: np.ndarray, m: int, target) -> tuple:
    pos = np.argwhere(F)
    half = np.r_[np.full(F.ndim - 1, m), m * m]
    d = np.sqrt(np.sum((pos[:, :-1] + half[:-1] - target[:-1]) ** 2, axis=1)) + \
        np.sqrt(np.abs(pos[:, -1] + half[-1] - target[-1]))
    i = int(np.argmin(d))
    return pos[i], float(d[i])


def find_corkscrews(surface: SampledSurface, labeling: ComponentLabeling, p, r: float,
                    want_synchronized: bool = False, mode: Optional[str] = None,
                    region: Optional[int] = None) -> Optional[CorkscrewPair]:
    """Largest voxel-aligned pair of cubes inside Q_r(p) in distinct components.

    ``mode``: ``unsynced`` (any times), ``weak`` (equal time centres) or
    ``strong`` (both time centres equal to p's time).  ``want_synchronized``
    selects ``weak`` when no mode is given.  ``region`` requires one cube
    in that component (global id, else local label).  Returns None when no
    pair exists down to one voxel; gamma_achieved is a lower bound for the
    true gamma because cubes snap to the grid.
    """
    mode = mode or ("weak" if want_synchronized else "unsynced")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    c = p.as_array() if isinstance(p, PointST) else np.asarray(p, dtype=float)
    lab = labeling
    st = lab.steps
    lo = (c - np.r_[np.full(c.size - 1, r), r * r] - lab.lower) / st
    hi = (c + np.r_[np.full(c.size - 1, r), r * r] - lab.lower) / st
    a = np.ceil(lo - 1e-9).astype(np.int64)
    b = np.floor(hi + 1e-9).astype(np.int64)
    if np.any(a < 0) or np.any(b > np.array(lab.shape)):
        raise InvariantError("find_corkscrews: Q_r(p) leaves the labeled window")
    sub = lab.labels[tuple(slice(i, j) for i, j in zip(a, b))]
    center_idx = (c - lab.lower) / st
    t_index = None
    if mode == "strong":
        t_index = int(round(center_idx[-1]))
        if abs(center_idx[-1] - t_index) > 1e-6:
            raise InvariantError("find_corkscrews: strong mode needs p's time on a voxel face")
    # existence is monotone in the block size, so bisect on m
    lo_m, hi_m = 0, int(min(min(sub.shape[:-1]) // 2, np.floor(np.sqrt(sub.shape[-1] / 2))))
    best = None
    while lo_m < hi_m:
        mid = (lo_m + hi_m + 1) // 2
        got = _candidates(lab, sub, a, mid, mode, t_index, region, center_idx)
        if got is None:
            hi_m = mid - 1
        else:
            lo_m, best = mid, (mid, got)
    if best is None:
        return None
    m, (_, L1, L2, ia, ib) = best
    rho = m * lab.pitch
    half = np.r_[np.full(c.size - 1, m), m * m]
    cubes = []
    for idx in (ia, ib):
        corner = lab.lower + (np.array(idx) + a) * st
        cubes.append(ParCube(PointST.from_array(corner + half * st), rho))
    t1, t2 = cubes[0].center.time, cubes[1].center.time
    return CorkscrewPair(cubes[0], cubes[1], rho, (L1, L2), abs(t1 - t2) <= lab.pitch ** 2,
                         rho / r, mode,
                         extra={"global_ids": (lab.global_id(L1), lab.global_id(L2)),
                                "finest_rho": lab.pitch})


def verify_pair(surface: SampledSurface, labeling: Optional[ComponentLabeling], pair: CorkscrewPair,
                p=None, r: Optional[float] = None) -> dict:
    """Independent re-check of a corkscrew pair.

    No Sigma sample inside either cube; with a labeling, the corner voxels
    of each cube carry its claimed label; with a component oracle, each
    cube centre and corner is off Sigma and the two components differ;
    with (p, r), both cubes lie in the closed Q_r(p).
    """
    out = {}
    out["no_samples"] = all(surface.in_cube(cb.center.as_array(), cb.half_length).size == 0
                            for cb in (pair.cube1, pair.cube2))
    if labeling is not None:
        ok = True
        for cb, L in zip((pair.cube1, pair.cube2), pair.labels):
            lo, hi = cb.bounds()
            eps = labeling.steps * 1e-6
            corners = np.array(np.meshgrid(*[(l + e, h - e) for l, h, e in zip(lo, hi, eps)],
                                           indexing="ij")).reshape(lo.size, -1).T
            ok &= bool(np.all(labeling.label_at(corners) == L))
        out["corner_labels"] = ok
    if surface.component_fn is not None:
        ids = []
        for cb in (pair.cube1, pair.cube2):
            lo, hi = cb.bounds()
            g = np.array(np.meshgrid(*[np.linspace(l, h, 5)[1:-1] for l, h in zip(lo, hi)],
                                     indexing="ij")).reshape(lo.size, -1).T
            comp = surface.component_fn(g)
            ids.append(int(comp[0]) if np.all(comp == comp[0]) else -1)
        out["distinct_components"] = ids[0] >= 0 and ids[1] >= 0 and ids[0] != ids[1]
    if p is not None and r is not None:
        Q = ParCube(p if isinstance(p, PointST) else PointST.from_array(p), r)
        qlo, qhi = Q.bounds()
        tol = 1e-9 * (1 + r * r)
        out["inside"] = all(bool(np.all(cb.bounds()[0] >= qlo - tol) and np.all(cb.bounds()[1] <= qhi + tol))
                            for cb in (pair.cube1, pair.cube2))
    out["all"] = all(out.values())
    return out


# ---------------------------------------------------------------------------
# synchronisation via a time chain

class SyncFailure(RuntimeError):
    """A synchronisation construction could not be completed."""

    def __init__(self, step: str, message: str):
        super().__init__(f"{step}: {message}")
        self.step = step


@dataclass
class ChainResult:
    pair: CorkscrewPair
    steps: int
    step_bound: float
    C1: float
    C2: float
    chain: list
    branch: str


def chain_constants(gamma0: float, a1: float, C1: float = 128.0) -> tuple[float, float]:
    """C2 = max(C1 + 1, C1^2 a^2 / (40 gamma0)) and the step bound
    4 C2^2 / (C1^2 gamma0^2 a^2)."""
    C2 = max(C1 + 1.0, C1 * C1 * a1 * a1 / (40.0 * gamma0))
    return C2, 4.0 * C2 * C2 / (C1 * C1 * gamma0 * gamma0 * a1 * a1)


def _local_labeling(surface: SampledSurface, center, R: float, voxels: int) -> ComponentLabeling:
    return label_components(surface, ParCube(PointST.from_array(center), R), R / voxels,
                            check_window=False)


def sync_via_time_chain(surface: SampledSurface, p, r: float, gamma0: float, a1: float = 0.25,
                        C1: float = 128.0, voxels: int = 32, labeling=None) -> ChainResult:
    """Weakly synchronised corkscrews at (p, r) from unsynchronised ones.

    Corkscrews at scale r/C1 give cubes Q1 (earlier), Q2.  If their times
    are within (gamma0 r / 2C1)^2, equal-time subcubes are returned.
    Otherwise a boundary point on the segment between their centres starts
    a chain of past-directed steps of radius gamma0 r / C2 (each from
    gh_time_advance) until the time is within (gamma0 r / C2)^2 of Q1's;
    a corkscrew there in a component different from Q1's yields the pair.
    Components are compared through the surface's global component oracle,
    which is required.  Local geometry is resampled at each scale.
    ``labeling`` is accepted for interface symmetry; each step builds its
    own local labeling.
    """
    if surface.component_fn is None:
        raise InvariantError("sync_via_time_chain needs a global component oracle")
    c = p.as_array() if isinstance(p, PointST) else np.asarray(p, dtype=float)
    C2, bound = chain_constants(gamma0, a1, C1)
    r1 = r / C1
    lab1 = _local_labeling(surface, c, r1, voxels)
    start = find_corkscrews(surface, lab1, c, r1, mode="unsynced")
    if start is None or start.rho < gamma0 * r1 * (1 - 1e-9):
        got = 0.0 if start is None else start.gamma_achieved
        raise SyncFailure("initial corkscrews", f"gamma {got} < gamma0 {gamma0} at scale r/C1")
    rho1 = gamma0 * r1
    A, B = start.cube1.center.as_array(), start.cube2.center.as_array()
    gA, gB = start.extra["global_ids"]
    if A[-1] > B[-1]:
        A, B, gA, gB = B, A, gB, gA
    s1, s2 = A[-1], B[-1]
    delta = s2 - s1
    if delta <= (rho1 / 2) ** 2:
        ts = 0.5 * (s1 + s2)
        q1 = ParCube(PointST(tuple(A[:-1]), ts), rho1 / 2)
        q2 = ParCube(PointST(tuple(B[:-1]), ts), rho1 / 2)
        pair = CorkscrewPair(q1, q2, rho1 / 2, (gA, gB), True, rho1 / 2 / r, "weak")
        return ChainResult(pair, 0, bound, C1, C2, [], "direct")
    # boundary crossing on the segment between the two centres
    u = np.linspace(0.0, 1.0, 4097)
    line = A[None, :] + u[:, None] * (B - A)[None, :]
    comp = surface.component_fn(line)
    k = int(np.argmax(comp != gA))
    lo_u, hi_u = u[max(k - 1, 0)], u[k]
    for _ in range(60):
        mid = 0.5 * (lo_u + hi_u)
        if surface.component_fn((A + mid * (B - A))[None, :])[0] == gA:
            lo_u = mid
        else:
            hi_u = mid
    X = A + hi_u * (B - A)
    rho_c = gamma0 * r / C2
    loc = local_resample(surface, X, 2 * rho_c, rho_c / 64)
    # nearest point of Sigma (a sample of the resampled geometry)
    d = par_dist(loc.points, X[None, :])
    Z = loc.points[int(np.argmin(d))]
    chain = [Z.copy()]
    N = 0
    while abs(Z[-1] - s1) >= rho_c ** 2:
        if N >= bound:
            raise SyncFailure("chain", f"step bound {bound:.1f} exceeded")
        loc = local_resample(surface, Z, rho_c, rho_c / 64)
        try:
            nxt, _ = gh_time_advance(loc, Z, rho_c, a1, check_scale=False, earliest=True)
        except GHFailure as exc:
            raise SyncFailure("gh_time_advance", str(exc)) from exc
        Z = nxt.as_array()
        chain.append(Z.copy())
        N += 1
        if not ParCube(PointST.from_array(c), r).contains(Z[None, :], closed=True)[0]:
            raise SyncFailure("chain", "chain left Q_r(p)")
    # final corkscrew at (Z_N, tau_N), time centre compatible with Q1
    rho_f = gamma0 * r / (2 * C2)
    labf = _local_labeling(surface, Z, rho_f, voxels)
    best = _single_cube(labf, Z, rho_f, exclude=gA, s_ref=s1, rho_ref=rho1)
    if best is None:
        raise SyncFailure("final corkscrew", "no cube in another component with a compatible time")
    cube0, g0 = best
    s0 = cube0.center.time
    q1 = ParCube(PointST(tuple(A[:-1]), s0), cube0.half_length)
    pair = CorkscrewPair(q1, cube0, cube0.half_length, (gA, g0), True, cube0.half_length / r, "weak",
                         extra={"global_ids": (gA, g0)})
    return ChainResult(pair, N, bound, C1, C2, chain, "chain")


def _single_cube(lab: ComponentLabeling, Z, R: float, exclude: int, s_ref: float, rho_ref: float):
    """Largest voxel-aligned cube in Q_R(Z) outside component ``exclude``
    whose time centre s satisfies |s - s_ref| <= rho_ref^2 - rho^2."""
    st = lab.steps
    c = np.asarray(Z, dtype=float)
    lo = np.ceil((c - np.r_[np.full(c.size - 1, R), R * R] - lab.lower) / st - 1e-9).astype(np.int64)
    hi = np.floor((c + np.r_[np.full(c.size - 1, R), R * R] - lab.lower) / st + 1e-9).astype(np.int64)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.array(lab.shape))
    sub = lab.labels[tuple(slice(i, j) for i, j in zip(lo, hi))]
    mmax = int(min(min(sub.shape[:-1]) // 2, np.floor(np.sqrt(sub.shape[-1] / 2))))
    for m in range(mmax, 0, -1):
        rho = m * lab.pitch
        room = rho_ref ** 2 - rho ** 2
        if room < 0:
            continue
        sizes = [2 * m] * (c.size - 1) + [2 * m * m]
        vol = int(np.prod(sizes))
        for L in [int(v) for v in np.unique(sub) if v > 0]:
            g = lab.global_id(L)
            if g < 0 or g == exclude:
                continue
            F = _window_sums(sub == L, sizes) == vol
            pos = np.argwhere(F)
            if pos.size == 0:
                continue
            half = np.r_[np.full(c.size - 1, m), m * m]
            cen = lab.lower + (pos + lo + half) * st
            ok = np.abs(cen[:, -1] - s_ref) <= room + 1e-15
            if not ok.any():
                continue
            cen = cen[ok]
            d = par_dist(cen, c[None, :])
            j = int(np.argmin(d))
            return ParCube(PointST.from_array(cen[j]), rho), g
    return None


# ---------------------------------------------------------------------------
# synchronisation via flatness

@dataclass
class FlatnessSyncResult:
    pair: CorkscrewPair
    depth: int
    top: int
    flat: tuple
    r1: float
    plane: object
    sandwich_max: float


def sync_via_flatness(surface: SampledSurface, tree, beta_inf_values, p, r: float,
                      eps: float, depth_budget: int, k_dilate: float = 10.0,
                      voxels: int = 8, local_pitch_ratio: float = 2.0 ** -10) -> FlatnessSyncResult:
    """Synchronised cubes from a flat dyadic cube.

    Starts from the coarsest dyadic cubes inside Delta(p, r/10), descends
    level by level to the first cube Q1 (nearest p at that level) with
    beta_inf < eps, checks the slab condition dist(Y, P1) < eps r1 on Q_{10 r1}(X1), and
    returns Q_{r1}(X1 +- 3 r1 nu) (same time) after checking they lie in
    distinct components of a labeling of Q_{10 r1}(X1).

    With ``tree=None`` a dyadic system is built on a local resample of
    Q_{r/5}(p) at pitch ``local_pitch_ratio * r``.  ``beta_inf_values`` maps
    level -> array of dyadic beta_inf values; missing entries (or None) are
    computed on demand.  The default dilation 10 makes the beta_inf window
    contain Q_{10 r1}(X1), so a flat cube also passes the slab check.
    """
    from .dyadic import build_dyadic
    from .flatness import beta_dyadic

    c = p.as_array() if isinstance(p, PointST) else np.asarray(p, dtype=float)
    if tree is None:
        pitch = local_pitch_ratio * r
        loc = local_resample(surface, c, r / 5, pitch)
        if len(loc) == 0:
            raise SyncFailure("top cube", "no surface samples in Delta(p, r/5)")
        k0 = int(np.floor(np.log2(10.0 / r)))
        k1 = min(k0 + int(depth_budget), int(np.floor(-np.log2(4 * pitch))))
        tree = build_dyadic(loc, k0, k1, check_mass=False)
        beta_inf_values = None
    surf = tree.surface
    cache = {} if beta_inf_values is None else beta_inf_values

    def beta_of(k, j):
        vals = cache.get(k)
        if vals is not None and not isinstance(vals, dict):
            return float(vals[j]), None
        vals = cache.setdefault(k, {})
        if j not in vals:
            vals[j] = beta_dyadic(tree, k, j, "dyadic_beta_inf", k_dilate)
        return vals[j].value, vals[j]

    P = surf.points
    Qc = ParCube(PointST.from_array(c), r / 10)
    inside = Qc.contains(P)
    top, frontier = None, []
    for k in range(tree.k_min, tree.k_max + 1):
        # cubes all of whose samples lie in Delta(p, r/10)
        bad = np.zeros(tree.n_cubes(k), dtype=bool)
        bad[tree.labels[k][~inside]] = True
        cand = np.flatnonzero(~bad & (tree.masses(k) > 0))
        if cand.size:
            top, frontier = k, [int(j) for j in cand]
            break
    if top is None:
        raise SyncFailure("top cube", "no dyadic cube inside Delta(p, r/10)")
    found = None
    for k in range(top, tree.k_max + 1):
        if k - top > depth_budget:
            break
        diams = tree.diameters(k)
        small = [j for j in frontier if diams[j] > 0]
        small.sort(key=lambda j: (par_dist(tree.center_point(k, j), c), j))
        for j in small:
            if beta_of(k, j)[0] < eps:
                found = (k, j)
                break
        if found is not None:
            break
        if k < tree.k_max:
            frontier = [int(j) for j in np.flatnonzero(np.isin(tree.parents[k + 1], frontier))]
    if found is None:
        raise SyncFailure("packing budget", f"no cube with beta_inf < {eps} within depth {depth_budget}")
    k1, j1 = found
    res = beta_of(k1, j1)[1] or beta_dyadic(tree, k1, j1, "dyadic_beta_inf", k_dilate)
    r1 = float(tree.diameters(k1)[j1])
    X1 = tree.center_point(k1, j1)
    nu = np.asarray(res.plane.normal)
    near = surf.in_cube(X1, 10 * r1, closed=True)
    dist = np.abs(P[near, :-1] @ nu - res.plane.offset)
    smax = float(dist.max()) if dist.size else 0.0
    if smax >= eps * r1:
        raise SyncFailure("sandwich", f"max slab distance {smax / r1:.4g} r1 >= eps r1")
    base = X1.copy()
    base[:-1] -= (X1[:-1] @ nu - res.plane.offset) * nu
    cubes = []
    for sgn in (1.0, -1.0):
        q = base.copy()
        q[:-1] += sgn * 3 * r1 * nu
        cubes.append(ParCube(PointST.from_array(q), r1))
    lab = label_components(surf, ParCube(PointST.from_array(X1), 10 * r1), r1 / voxels,
                           check_window=False)
    Q = ParCube(PointST.from_array(c), r)
    qlo, qhi = Q.bounds()
    if not all(np.all(cb.bounds()[0] >= qlo) and np.all(cb.bounds()[1] <= qhi) for cb in cubes):
        raise SyncFailure("containment", "offset cubes leave Q_r(p)")
    L = [lab.cube_label(cb) for cb in cubes]
    if L[0] == 0 or L[1] == 0 or _same_component(lab, L[0], L[1]):
        raise SyncFailure("components", f"offset cubes not in distinct components (labels {L})")
    pair = CorkscrewPair(cubes[0], cubes[1], r1, tuple(L), True, r1 / r, "weak",
                         extra={"global_ids": (lab.global_id(L[0]), lab.global_id(L[1]))})
    return FlatnessSyncResult(pair, k1 - top, top, found, r1, res.plane, smax)
