"""Big pieces of Lip(1,1/2) graphs: normalised frame, cone envelope and
contact set, maximal-function bad set, good-set extraction, Whitney
extension and the Carleson transfer check.

Planar sets live in R^n = R^{n-1} x R_t.  Planar measures are normalised
so that a planar cube I_r has measure r^{n+1} (Lebesgue measure / 2^n); the
same normalisation is applied to surface measure inside this module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .flatness import CarlesonReport, carleson_norm, truncated_carleson_integral
from .measure import valid_scale_range
from .pargeo import ParCube, PointST, as_points, rotation_to_axis
from .surfaces import (GraphFunction, InvariantError, SampledSurface, build_graph_surface,
                       grid_lip_constant, local_resample)
from .topology import CorkscrewPair, find_corkscrews, label_components


def planar_normaliser(n: int) -> float:
    """Factor turning Lebesgue measure on R^n into the I_r -> r^{n+1} convention."""
    return 2.0 ** -n


# ---------------------------------------------------------------------------
# normalised frame

@dataclass
class BigPieceSetup:
    """The normalised frame: crossing point at the origin, Y1 on the +x_n axis."""

    n: int
    origin: np.ndarray
    rotation: np.ndarray
    scale: float
    M: float
    M_bar1: float
    M_bar2: float
    gamma: float
    h: float
    R: float
    R_eff: float
    rho: float
    original: Optional[SampledSurface] = field(default=None, repr=False)

    @property
    def M_bar(self) -> float:
        return self.M_bar1

    @property
    def Y1(self) -> np.ndarray:
        y = np.zeros(self.n + 1)
        y[self.n - 1] = self.M_bar1
        return y

    @property
    def Y2(self) -> np.ndarray:
        y = np.zeros(self.n + 1)
        y[self.n - 1] = -self.M_bar2
        return y

    def shadow_target_measure(self) -> float:
        """Normalised measure of D = (1/2) I^0, i.e. 2^{-n-1}."""
        return 0.5 ** (self.n + 1)

    def forward(self, pts) -> np.ndarray:
        """Original coordinates -> normalised frame."""
        P = as_points(pts) - self.origin
        out = np.empty_like(P)
        out[:, :-1] = self.scale * (P[:, :-1] @ self.rotation.T)
        out[:, -1] = self.scale ** 2 * P[:, -1]
        return out

    def inverse(self, pts) -> np.ndarray:
        P = as_points(pts)
        out = np.empty_like(P)
        out[:, :-1] = (P[:, :-1] / self.scale) @ self.rotation
        out[:, -1] = P[:, -1] / self.scale ** 2
        return out + self.origin

    def to_dict(self) -> dict:
        return {"n": self.n, "origin": [float(v) for v in self.origin],
                "rotation": self.rotation.tolist(), "scale": self.scale, "M": self.M,
                "M_bar1": self.M_bar1, "M_bar2": self.M_bar2, "gamma": self.gamma, "h": self.h,
                "R": self.R, "R_eff": self.R_eff, "rho": self.rho}


def _crossing(surface: SampledSurface, A: np.ndarray, B: np.ndarray, tol: float) -> np.ndarray:
    """First point of Sigma on the fixed-time segment from A to B."""
    if surface.component_fn is not None:
        g0 = surface.component_fn(A[None, :])[0]
        u = np.linspace(0.0, 1.0, 4097)
        comp = surface.component_fn(A[None, :] + u[:, None] * (B - A)[None, :])
        hit = np.flatnonzero(comp != g0)
        if hit.size == 0:
            raise InvariantError("normalize_setup: segment between the cubes misses Sigma")
        lo, hi = u[max(hit[0] - 1, 0)], u[hit[0]]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if surface.component_fn((A + mid * (B - A))[None, :])[0] == g0:
                lo = mid
            else:
                hi = mid
        return A + hi * (B - A)
    # distance route: the first point of the segment within tol of Sigma
    u = np.linspace(0.0, 1.0, 4097)
    line = A[None, :] + u[:, None] * (B - A)[None, :]
    d = surface.distance(line) if surface.has_exact_oracle() else surface.nearest_sample_distance(line)
    k = np.flatnonzero(d <= tol)
    if k.size == 0:
        raise InvariantError("normalize_setup: segment between the cubes misses Sigma at resolution")
    # closest point within the first run of near points
    run = k[: int(np.argmax(np.diff(np.r_[k, k[-1] + 2]) > 1)) + 1]
    return line[run[int(np.argmin(d[run]))]]


def normalize_setup(surface: SampledSurface, p, R: float, pair: CorkscrewPair,
                    M_adr: float = 2.0, h: Optional[float] = None,
                    pitch: float = 2.0 ** -6) -> tuple[BigPieceSetup, SampledSurface]:
    """Translate the Sigma crossing of the segment joining the cube centres to
    the origin, rotate Y1 onto +x_n and dilate so that R_eff = 2M.

    M = max(M_adr, sqrt(n) R_eff / rho, 4n) where rho is the pair's
    half-length and R_eff = max(R, |X1 - X'|, |X2 - X'|), which keeps
    2 <= M_bar_i <= 2M.  The returned surface is a resample of the original
    geometry at normalised pitch ``pitch`` over the box of the construction
    (|x| <= 2M, |t| <= 1).
    """
    n = surface.n
    c1 = pair.cube1.center.as_array()
    c2 = pair.cube2.center.as_array()
    if abs(c1[-1] - c2[-1]) > 1e-12 * (1 + abs(c1[-1])):
        raise InvariantError("normalize_setup: pair is not time-synchronised")
    X = _crossing(surface, c1, c2, 2 * surface.resolution)
    d1 = float(np.linalg.norm(c1[:-1] - X[:-1]))
    d2 = float(np.linalg.norm(c2[:-1] - X[:-1]))
    rho = pair.rho
    R_eff = max(R, d1, d2)
    M = max(M_adr, np.sqrt(n) * R_eff / rho, 4.0 * n)
    lam = 2 * M / R_eff
    v = c1[:-1] - X[:-1]
    rot = rotation_to_axis(v, n - 1)
    hh = 6 * M if h is None else float(h)
    if hh < 6 * M:
        raise InvariantError(f"normalize_setup: aperture h={hh} below 6M={6 * M}")
    setup = BigPieceSetup(n, X.copy(), rot, lam, float(M), lam * d1, lam * d2, 2.0 ** (-n - 2), hh,
                          float(R), float(R_eff), float(rho), original=surface)
    if not (2 - 1e-9 <= setup.M_bar1 <= 2 * M + 1e-9 and 2 - 1e-9 <= setup.M_bar2 <= 2 * M + 1e-9):
        raise InvariantError(f"normalize_setup: M_bar out of range ({setup.M_bar1}, {setup.M_bar2}, M={M})")
    # resample the box |x| <= 2M, |t| <= 1 of the normalised frame
    loc = local_resample(surface, X, R_eff * np.sqrt(n), pitch / lam, time_half=1.0 / lam ** 2)
    pts = setup.forward(loc.points)
    w = loc.weights * lam ** (n + 1)
    keep = np.all(np.abs(pts[:, :-1]) <= 2 * M, axis=1) & (np.abs(pts[:, -1]) <= 1.0)
    out = SampledSurface(n, pts[keep], w[keep], pitch, (-1.0, 1.0), None, surface.name + "_normalised",
                         meta={"setup": setup.to_dict()})
    return setup, out


# ---------------------------------------------------------------------------
# cone envelope

@numba.njit(cache=True)
def _envelope_sup(Q, SP, SH, h, init):
    """max(init, max_j SH[j] - h d(Q, SP[j])) with SH sorted decreasing."""
    out = init.copy()
    m = Q.shape[1]
    for i in range(Q.shape[0]):
        best = out[i]
        for j in range(SP.shape[0]):
            if SH[j] <= best:
                break
            sp = 0.0
            for a in range(m - 1):
                dd = Q[i, a] - SP[j, a]
                sp += dd * dd
            d = np.sqrt(sp) + np.sqrt(abs(Q[i, m - 1] - SP[j, m - 1]))
            v = SH[j] - h * d
            if v > best:
                best = v
        out[i] = best
    return out


@numba.njit(cache=True)
def _envelope_inf(Q, SP, SH, h):
    """min_j SH[j] + h d(Q, SP[j]) with SH sorted increasing."""
    out = np.empty(Q.shape[0])
    m = Q.shape[1]
    for i in range(Q.shape[0]):
        best = np.inf
        for j in range(SP.shape[0]):
            if SH[j] >= best:
                break
            sp = 0.0
            for a in range(m - 1):
                dd = Q[i, a] - SP[j, a]
                sp += dd * dd
            d = np.sqrt(sp) + np.sqrt(abs(Q[i, m - 1] - SP[j, m - 1]))
            v = SH[j] + h * d
            if v < best:
                best = v
        out[i] = best
    return out


def _planar(P: np.ndarray, n: int) -> np.ndarray:
    """Planar coordinates (x_1..x_{n-1}, t) of points (x_1..x_n, t)."""
    keep = [i for i in range(n + 1) if i != n - 1]
    return np.ascontiguousarray(P[:, keep])


def _unit_grid(n: int, pitch: float) -> GraphFunction:
    lower = np.full(n, -1.0)
    shape = tuple([int(round(2 / pitch))] * (n - 1) + [int(round(2 / pitch ** 2))])
    return GraphFunction(tuple(lower), pitch, np.zeros(shape), 0.0)


@dataclass
class ConeEnvelope:
    psi: GraphFunction
    contact_mask: np.ndarray
    S: np.ndarray
    witnesses: np.ndarray
    contact_tol: float
    h: float
    shadow_measure: float
    S_shadow_measure: float
    lip_measured: float
    agreement: float
    maximality_violation: float

    def to_dict(self) -> dict:
        return {"contact_tol": self.contact_tol, "h": self.h, "shadow_measure": self.shadow_measure,
                "S_shadow_measure": self.S_shadow_measure, "lip_measured": float(self.lip_measured),
                "contacts": int(self.witnesses.size), "S_size": int(self.S.shape[0]),
                "agreement": float(self.agreement),
                "maximality_violation": float(self.maximality_violation)}


def cone_set(setup: BigPieceSetup, surf: SampledSurface, h: float) -> np.ndarray:
    """Indices of the samples forming S: -M <= x_n <= M_bar and every point of
    X + Gamma_h at height M_bar projects into I^0."""
    n = setup.n
    P = surf.points
    xn = P[:, n - 1]
    ok = (xn >= -setup.M) & (xn <= setup.M_bar) & (surf.weights > 0)
    rho = (setup.M_bar - xn) / h
    pl = _planar(P, n)
    ok &= np.abs(pl[:, -1]) + rho ** 2 <= 1.0
    if n > 1:
        ok &= np.all(np.abs(pl[:, :-1]) + rho[:, None] <= 1.0, axis=1)
    return np.flatnonzero(ok)


def cone_envelope(setup: BigPieceSetup, surf: SampledSurface, h: Optional[float] = None,
                  pitch: float = 2.0 ** -6, contact_tol: Optional[float] = None) -> ConeEnvelope:
    """Upper envelope psi(z) = max_{X in S} [x_n - h d(z, pi X)] on a grid
    over I^0 and its contact set.

    A sample X of S is a contact when psi(pi X) (exact, at pi X) is within
    contact_tol (default 2 pitch (1 + h)) of x_n; contact cells are the grid cells
    holding the projections of contacts.  The infimum form
    min_{contacts} [x_n + h d] is computed as a cross-check on contact cells.
    """
    n = setup.n
    h = setup.h if h is None else float(h)
    if h < 6 * setup.M:
        raise InvariantError(f"cone_envelope: h={h} below 6M={6 * setup.M}")
    S = cone_set(setup, surf, h)
    if S.size == 0:
        raise InvariantError("cone_envelope: S is empty; the normalised setup is inconsistent")
    P = surf.points[S]
    SP = _planar(P, n)
    SH = P[:, n - 1]
    order = np.argsort(-SH, kind="stable")
    SPd, SHd = np.ascontiguousarray(SP[order]), np.ascontiguousarray(SH[order])
    grid = _unit_grid(n, pitch)
    nodes = grid.nodes()
    vals = _envelope_sup(nodes, SPd, SHd, h, np.full(nodes.shape[0], -np.inf))
    psi = GraphFunction(grid.lower, pitch, vals.reshape(grid.values.shape), h)
    tol = 2 * pitch * (1 + h) if contact_tol is None else float(contact_tol)
    at_samples = _envelope_sup(np.ascontiguousarray(SP), SPd, SHd, h, SH.copy())
    gap = at_samples - SH
    contact = gap <= tol
    wit = S[contact]
    # contact cells
    idx = np.floor((SP[contact] - np.asarray(grid.lower)) / grid.steps).astype(np.int64)
    idx = np.clip(idx, 0, np.array(grid.values.shape) - 1)
    mask = np.zeros(grid.values.shape, dtype=bool)
    mask[tuple(idx.T)] = True
    norm = planar_normaliser(n)
    cell = grid.cell_measure() * norm
    shadow = float(mask.sum() * cell)
    sidx = np.clip(np.floor((SP - np.asarray(grid.lower)) / grid.steps).astype(np.int64), 0,
                   np.array(grid.values.shape) - 1)
    smask = np.zeros(grid.values.shape, dtype=bool)
    smask[tuple(sidx.T)] = True
    # infimum form over contact witnesses, compared on contact cells
    wo = np.argsort(SH[contact], kind="stable")
    inf_vals = _envelope_inf(np.ascontiguousarray(nodes[mask.ravel()]),
                             np.ascontiguousarray(SP[contact][wo]), np.ascontiguousarray(SH[contact][wo]), h)
    agreement = float(np.max(np.abs(inf_vals - vals[mask.ravel()]))) if inf_vals.size else 0.0
    lip = grid_lip_constant(psi.values, pitch)
    return ConeEnvelope(psi, mask, S, wit, tol, h, shadow, float(smask.sum() * cell), lip, agreement,
                        float(gap[contact].max()) if contact.any() else 0.0)


def check_envelope_domination(env: ConeEnvelope, surf: SampledSurface, n: int,
                              max_pairs: int = 5_000_000) -> float:
    """Largest violation of psi(z) >= x_n - h d(z, pi X) over grid nodes and S
    samples (exhaustive up to ``max_pairs``, else on a strided subset)."""
    nodes = env.psi.nodes()
    P = surf.points[env.S]
    SP, SH = _planar(P, n), P[:, n - 1]
    step = max(1, int(np.ceil(nodes.shape[0] * SP.shape[0] / max_pairs)))
    worst = 0.0
    vals = env.psi.values.ravel()
    for i in range(0, nodes.shape[0], step):
        d = np.sqrt(np.sum((SP[:, :-1] - nodes[i, :-1]) ** 2, axis=1)) + np.sqrt(np.abs(SP[:, -1] - nodes[i, -1]))
        worst = max(worst, float(np.max(SH - env.h * d) - vals[i]))
    return worst


# ---------------------------------------------------------------------------
# maximal function bad set

@dataclass
class BadSet:
    mask: np.ndarray
    measure: float
    markov_bound: float
    N_star: float
    maximal: np.ndarray = field(repr=False, default=None)


def _block_sums(a: np.ndarray, sizes) -> np.ndarray:
    """Sums over consecutive disjoint blocks of the given sizes."""
    shape = []
    for m, s in zip(a.shape, sizes):
        shape += [m // s, s]
    b = a.reshape(shape)
    return b.sum(axis=tuple(range(1, 2 * a.ndim, 2)))


def maximal_bad_set(setup: BigPieceSetup, surf: SampledSurface, N_star: float,
                    pitch: float = 2.0 ** -5) -> BadSet:
    """Cells of I^0 where the dyadic maximal function of nu exceeds N_star.

    nu(A) = sigma(pi^{-1}(A) cap Q_{2M}(0,0)).  For each dyadic planar cube I
    of I^0 (levels down to one cell), the average nu(3I) / |I| is compared
    with N_star; the bad mask is the union of the cubes where it is reached.
    ``markov_bound`` is sum nu(3I) / N_star over the maximal bad cubes, an
    upper bound for the bad measure.
    """
    n = setup.n
    norm = planar_normaliser(n)
    P = surf.points
    inQ = np.all(np.abs(P[:, :-1]) < 2 * setup.M, axis=1) & (np.abs(P[:, -1]) < 4 * setup.M ** 2)
    pl = _planar(P[inQ], n)
    w = surf.weights[inQ] * norm
    # mass grid over I_3 (three times I^0, parabolically) in cells of I^0's grid
    m_s, m_t = int(round(2 / pitch)), int(round(2 / pitch ** 2))
    lower = np.r_[np.full(n - 1, -3.0), -9.0]
    shape = tuple([3 * m_s] * (n - 1) + [9 * m_t])
    steps = np.r_[np.full(n - 1, pitch), pitch ** 2]
    idx = np.floor((pl - lower) / steps).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < np.array(shape)), axis=1)
    mass = np.zeros(shape)
    np.add.at(mass, tuple(idx[ok].T), w[ok])
    # offset of I^0 inside the mass grid
    off = np.r_[np.full(n - 1, m_s), 4 * m_t]
    levels = 0
    while (m_s >> (levels + 1)) >= 1 and (m_t >> (2 * levels + 2)) >= 1 and \
            m_s % (2 ** (levels + 1)) == 0 and m_t % (4 ** (levels + 1)) == 0:
        levels += 1
    cell_shape = tuple([m_s] * (n - 1) + [m_t])
    best = np.zeros(cell_shape)
    level_of_max = np.full(cell_shape, -1)
    records = []
    for j in range(levels, -1, -1):
        bs = [2 ** j] * (n - 1) + [4 ** j]
        # all blocks of the 3x grid at this level, then 3^n neighbourhood sums
        B = _block_sums(mass, bs)
        for ax in range(B.ndim):
            pad = [(1, 1) if a == ax else (0, 0) for a in range(B.ndim)]
            Bp = np.pad(B, pad)
            sl = lambda k: tuple(slice(k, k + B.shape[a]) if a == ax else slice(None) for a in range(B.ndim))
            B = Bp[sl(0)] + Bp[sl(1)] + Bp[sl(2)]
        # neighbourhoods along time span 3 blocks; cubes of I^0 sit at offset off / bs
        o = [off[a] // bs[a] for a in range(len(bs))]
        cnt = [cell_shape[a] // bs[a] for a in range(len(bs))]
        N3 = B[tuple(slice(o[a], o[a] + cnt[a]) for a in range(len(bs)))]
        side = 2 ** j * pitch
        meas = side ** (n + 1) * norm
        avg = N3 / meas
        up = avg
        for a in range(len(bs)):
            up = np.repeat(up, bs[a], axis=a)
        newly = (up >= N_star) & (best < N_star)
        level_of_max[newly] = j
        best = np.maximum(best, up)
        records.append((j, N3, avg))
    mask = best >= N_star
    cell = float(np.prod(steps)) * norm
    # maximal cubes: blocks at the level where the cell first became bad
    bound = 0.0
    for j, N3, avg in records:
        bs = [2 ** j] * (n - 1) + [4 ** j]
        lvl = level_of_max[tuple(slice(None, None, s) for s in bs)]
        sel = (avg >= N_star) & (lvl == j)
        bound += float(N3[sel].sum())
    return BadSet(mask, float(mask.sum() * cell), bound / N_star, float(N_star), level_of_max)


# ---------------------------------------------------------------------------
# good set

@dataclass
class GoodSetResult:
    F: np.ndarray
    f_values: np.ndarray
    threshold: float
    F1: np.ndarray
    shadow_measure: float
    F_shadow_measure: float
    removed_measure: float
    removed_sigma: float
    chebyshev_bound: float
    nu_observed: float
    nu_used: float
    A: float
    eps: float
    R: float
    upper: float

    def certificate(self) -> dict:
        n1 = self._n1
        target = (self.eps * self.R / 10) ** n1
        return {"removed_projection": self.removed_measure, "removed_sigma": self.removed_sigma,
                "chebyshev_bound": self.chebyshev_bound, "target": target,
                "projection_le_sigma": self.removed_measure <= self.removed_sigma * (1 + 1e-9) + 1e-15,
                "sigma_le_bound": self.removed_sigma <= self.chebyshev_bound * (1 + 1e-9) + 1e-15,
                "bound_le_target": self.chebyshev_bound <= target * (1 + 1e-9) + 1e-15,
                "half_eps": self.shadow_measure >= 0.5 * self.eps * self.R ** n1}


def projected_measure(P: np.ndarray, w: np.ndarray, n: int, pitch: float) -> float:
    """Normalised H^n of the projection of weighted samples.

    For n = 1 each sample covers a time interval of length equal to its
    weight; otherwise each covers the planar cell of side ``pitch``.  Never
    exceeds the normalised total weight for graph-type sampling.
    """
    if P.shape[0] == 0:
        return 0.0
    norm = planar_normaliser(n)
    if n == 1:
        t = P[:, -1]
        lo, hi = t - w / 2, t + w / 2
        order = np.argsort(lo, kind="stable")
        lo, hi = lo[order], hi[order]
        run_hi = np.maximum.accumulate(hi)
        starts = np.r_[True, lo[1:] > run_hi[:-1]]
        gid = np.cumsum(starts) - 1
        seg_lo = lo[starts]
        seg_hi = np.full(seg_lo.size, -np.inf)
        np.maximum.at(seg_hi, gid, hi)
        return float(np.sum(seg_hi - seg_lo) * norm)
    pl = _planar(P, n)
    steps = np.r_[np.full(n - 1, pitch), pitch ** 2]
    cells = np.unique(np.floor(pl / steps).astype(np.int64), axis=0)
    return float(cells.shape[0] * np.prod(steps) * norm)


def extract_good_set(surface: SampledSurface, psi_star: GraphFunction, p, R: float, eps: float,
                     carleson: CarlesonReport, setup: Optional[BigPieceSetup] = None,
                     contact_tol: Optional[float] = None, m: int = 12) -> GoodSetResult:
    """F1 = samples of Sigma on the graph of psi_star inside Delta(p, R) with
    f <= A^{n+1} ||nu||, A = 1000 / eps.

    f(Z) = int_0^{100R} beta_2^2(Z, r) dr / r, evaluated on ``setup.original``
    (through the inverse map) when the data is in a normalised frame, with
    shells above the original surface's valid scale range dropped.
    """
    n = surface.n
    norm = planar_normaliser(n)
    c = p.as_array() if isinstance(p, PointST) else np.asarray(p, dtype=float)
    P = surface.points
    inD = np.all(np.abs(P[:, :-1] - c[:-1]) < R, axis=1) & (np.abs(P[:, -1] - c[-1]) < R * R)
    tol = 2 * psi_star.pitch * (1 + psi_star.lip_constant) if contact_tol is None else contact_tol
    pl = _planar(P, n)
    lo, hi = np.asarray(psi_star.lower), np.asarray(psi_star.upper)
    inside = np.all((pl >= lo) & (pl <= hi), axis=1)
    cand = np.flatnonzero(inD & inside & (surface.weights > 0))
    on = np.abs(P[cand, n - 1] - psi_star.evaluate(pl[cand])) <= tol
    F = cand[on]
    nu = float(carleson.norm_estimate)
    A = 1000.0 / eps
    upper = 100.0 * R
    if setup is not None:
        base = setup.original
        Z = setup.inverse(P[F])
        up = upper / setup.scale
    else:
        base, Z, up = surface, P[F], upper
    hi_scale = valid_scale_range(base)[1]
    # drop shells above the valid range by shifting the top of the dyadic rule
    top = up
    skipped = 0
    while top / 2 > hi_scale and skipped < m:
        top /= 2
        skipped += 1
    from .flatness import scale_floor
    fvals = truncated_carleson_integral(base, Z, top * 2, m=m - skipped, floor=scale_floor(base)) \
        if F.size else np.zeros(0)
    threshold = A ** (n + 1) * nu
    keep = fvals <= threshold
    F1, Fout = F[keep], F[~keep]
    wF = surface.weights * norm
    nu_obs = float(np.sum(fvals * wF[F]) / upper ** (n + 1))
    sig_removed = float(wF[Fout].sum())
    cheb = (upper / A) ** (n + 1) * (nu_obs / nu) if nu > 0 else (0.0 if nu_obs == 0 else np.inf)
    res = GoodSetResult(F, fvals, threshold, F1,
                        projected_measure(P[F1], surface.weights[F1], n, surface.resolution),
                        projected_measure(P[F], surface.weights[F], n, surface.resolution),
                        projected_measure(P[Fout], surface.weights[Fout], n, surface.resolution),
                        sig_removed, cheb, nu_obs, nu, A, eps, R, upper)
    res._n1 = n + 1
    return res


# ---------------------------------------------------------------------------
# Whitney extension

@numba.njit(cache=True)
def _nearest_set(Q, E):
    """Planar parabolic distance from each Q row to the set E and the argmin."""
    m = Q.shape[1]
    d = np.empty(Q.shape[0])
    arg = np.empty(Q.shape[0], dtype=np.int64)
    for i in range(Q.shape[0]):
        best = np.inf
        bj = -1
        for j in range(E.shape[0]):
            dt = np.sqrt(abs(Q[i, m - 1] - E[j, m - 1]))
            if dt >= best:
                continue
            sp = 0.0
            for a in range(m - 1):
                dd = Q[i, a] - E[j, a]
                sp += dd * dd
            v = np.sqrt(sp) + dt
            if v < best:
                best = v
                bj = j
        d[i] = best
        arg[i] = bj
    return d, arg


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


@dataclass
class WhitneyExtension:
    E: np.ndarray
    cubes: list
    anchors: np.ndarray
    rho: np.ndarray
    radii: np.ndarray
    mu: float
    b_star: float
    psi_ext: GraphFunction
    psi_star: GraphFunction
    bump_sum: np.ndarray = field(repr=False, default=None)
    certificates: dict = field(default_factory=dict)


def _whitney_cubes(Emask: np.ndarray, dist: np.ndarray, pitch: float):
    """Dyadic parabolic blocks covering the complement of E, split while
    d(I, E) < 4 diam(I).  Returns (level, start index, collar flag) tuples."""
    nd = Emask.ndim
    shape = np.array(Emask.shape)
    L = 0
    while True:
        bs = np.array([2 ** (L + 1)] * (nd - 1) + [4 ** (L + 1)])
        if np.any(bs > shape) or np.any(shape % bs):
            break
        L += 1
    out = []
    stack = []
    bs = np.array([2 ** L] * (nd - 1) + [4 ** L])
    for start in np.ndindex(*(shape // bs)):
        stack.append((L, np.array(start) * bs))
    while stack:
        j, st = stack.pop()
        bs = np.array([2 ** j] * (nd - 1) + [4 ** j])
        sl = tuple(slice(a, a + b) for a, b in zip(st, bs))
        side = 2 ** j * pitch
        diam = np.sqrt(nd - 1) * side + side
        hasE = bool(Emask[sl].any())
        dmin = float(dist[sl].min())
        if not hasE and dmin >= 4 * diam:
            out.append((j, st, False))
        elif j == 0:
            if not hasE:
                out.append((j, st, True))
        else:
            cbs = np.array([2 ** (j - 1)] * (nd - 1) + [4 ** (j - 1)])
            ranges = [range(2)] * (nd - 1) + [range(4)]
            for off in np.ndindex(*[len(r) for r in ranges]):
                stack.append((j - 1, st + np.array(off) * cbs))
    out.sort(key=lambda c: (c[0], tuple(c[1])))
    return out


def whitney_extend(E: np.ndarray, psi_star: GraphFunction, b_star: float, mu: float = 0.0,
                   lip_factor: float = 64.0) -> WhitneyExtension:
    """Whitney extension of psi_star off the grid set E (mask on psi_star's grid).

    Cubes: dyadic parabolic blocks (spatial side 2^j pitch, time side
    4^j pitch^2) with 4 diam <= d(I, E) < 16 diam, except one-cell blocks
    next to E (the resolution collar), which only satisfy the upper bound.
    Each block with half-size a/2 has r_i = a / sqrt(2) (the smallest I_r
    containing it); its bump is a product of quintic smoothsteps, 1 on the
    block and 0 off I_{2 r_i}.  psi_ext = sum_i (psi*(anchor_i) + mu b* rho_i)
    v_i off E and psi* on E.
    """
    E = np.asarray(E, dtype=bool)
    if E.shape != psi_star.values.shape:
        raise ValueError("E must be a mask on psi_star's grid")
    if not E.any():
        raise InvariantError("whitney_extend: E is empty")
    nd = E.ndim
    pitch = psi_star.pitch
    steps = psi_star.steps
    nodes = psi_star.nodes()
    Epts = np.ascontiguousarray(nodes[E.ravel()])
    Eidx = np.flatnonzero(E.ravel())
    dist, arg = _nearest_set(np.ascontiguousarray(nodes), Epts)
    dist = dist.reshape(E.shape)
    arg = arg.reshape(E.shape)
    cubes = _whitney_cubes(E, dist, pitch)
    vals_star = psi_star.values.ravel()
    K = len(cubes)
    anchors = np.zeros((K, nd))
    rho = np.zeros(K)
    radii = np.zeros(K)
    coeff = np.zeros(K)
    lower = np.asarray(psi_star.lower)
    num = np.zeros(E.shape)
    den = np.zeros(E.shape)
    cover = np.zeros(E.shape, dtype=np.int64)
    ratios = []
    collar = 0
    for i, (j, st, is_collar) in enumerate(cubes):
        bs = np.array([2 ** j] * (nd - 1) + [4 ** j])
        sl = tuple(slice(a, a + b) for a, b in zip(st, bs))
        cover[sl] += 1
        block_d = dist[sl]
        k = np.unravel_index(int(np.argmin(block_d)), block_d.shape)
        ei = Eidx[arg[sl][k]]
        anchors[i] = nodes[ei]
        rho[i] = float(block_d[k])
        a = 2 ** j * pitch
        radii[i] = a / np.sqrt(2.0)
        side = a
        diam = np.sqrt(nd - 1) * side + side
        ratios.append((rho[i] / (4 * diam), is_collar))
        collar += int(is_collar)
        coeff[i] = vals_star[ei] + mu * b_star * rho[i]
        # bump over its support box
        r2 = 2 * radii[i]
        cen = lower + (st + bs / 2) * steps
        half_in = np.r_[np.full(nd - 1, a / 2), a * a / 2]
        half_out = np.r_[np.full(nd - 1, r2), r2 * r2]
        lo_i = np.maximum(np.floor((cen - half_out - lower) / steps).astype(int), 0)
        hi_i = np.minimum(np.ceil((cen + half_out - lower) / steps).astype(int), np.array(E.shape))
        phi = np.ones(tuple(hi_i - lo_i))
        for ax in range(nd):
            x = lower[ax] + (np.arange(lo_i[ax], hi_i[ax]) + 0.5) * steps[ax]
            u = (half_out[ax] - np.abs(x - cen[ax])) / (half_out[ax] - half_in[ax])
            sh = [1] * nd
            sh[ax] = -1
            phi = phi * _smoothstep(u).reshape(sh)
        box = tuple(slice(a_, b_) for a_, b_ in zip(lo_i, hi_i))
        num[box] += coeff[i] * phi
        den[box] += phi
    off = ~E
    ext = psi_star.values.copy()
    ext[off] = num[off] / den[off]
    psi_ext = GraphFunction(psi_star.lower, pitch, ext, 0.0)
    # certificates
    r_arr = np.array([r for r, _ in ratios]) if ratios else np.zeros(0)
    c_arr = np.array([c for _, c in ratios], dtype=bool) if ratios else np.zeros(0, bool)
    pu = np.zeros(E.shape)
    pu[off] = den[off] / den[off]
    lip = grid_lip_constant(ext, pitch)
    psi_ext.lip_constant = lip
    cert = {
        "covering": bool(np.all(cover[off] == 1)),
        "disjoint": bool(cover.max() <= 1),
        "E_uncovered": bool(np.all(cover[E] == 0)),
        "bump_sum_min": float(den[off].min()) if off.any() else 1.0,
        "partition_error": float(np.max(np.abs(pu[off] - 1.0))) if off.any() else 0.0,
        "comparability_lower": bool(np.all(r_arr[~c_arr] >= 1.0 - 1e-12)) if r_arr.size else True,
        "comparability_upper": bool(np.all(r_arr <= 4.0 + 1e-12)) if r_arr.size else True,
        "collar_cubes": collar,
        "cubes": K,
        "agrees_on_E": bool(np.array_equal(ext[E], psi_star.values[E])),
        "lip": lip,
        "lip_ratio": lip / (b_star * (1 + mu)) if b_star > 0 else (0.0 if lip == 0 else np.inf),
        "lip_factor": lip_factor,
    }
    cert["lip_ok"] = cert["lip_ratio"] <= lip_factor
    cert["dominates"] = bool(np.all(ext >= psi_star.values - 1e-12))
    return WhitneyExtension(E, cubes, anchors, rho, radii, mu, b_star, psi_ext, psi_star, den, cert)


# ---------------------------------------------------------------------------
# Carleson transfer

@dataclass
class TransferReport:
    nu_psi: float
    nu: float
    ratio: float
    distance_factor: float
    distance_bound: float
    report_psi: CarlesonReport
    report: CarlesonReport

    def to_dict(self) -> dict:
        return {"nu_psi": self.nu_psi, "nu": self.nu, "ratio": self.ratio,
                "distance_factor": self.distance_factor, "distance_bound": self.distance_bound}


def graph_surface(ext: GraphFunction, n: int) -> SampledSurface:
    """Sigma_psi in the normalised frame (graph over the planar coordinates,
    height along x_n)."""
    g = GraphFunction(ext.lower, ext.pitch, ext.values, max(ext.lip_constant, grid_lip_constant(ext.values, ext.pitch)))
    return build_graph_surface(g, n, name="sigma_psi", axis=n - 1)


def carleson_transfer_check(surface: SampledSurface, extension: WhitneyExtension, bases,
                            scale_subdivisions: int = 8, region: float = 100.0,
                            R: float = 1.0) -> TransferReport:
    """||nu_psi|| / (1 + ||nu||) over ``bases`` (planar point, r) and the
    distance inequality d(Y, Sigma) <= factor (d(pi Y, E) + pitch) over the
    samples of Sigma_psi in Q_{region R}(0)."""
    n = surface.n
    sig_psi = graph_surface(extension.psi_ext, n)
    pb, sb = [], []
    for q, r in bases:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        h_psi = float(extension.psi_ext.evaluate(q[None, :])[0])
        pt = np.insert(q, n - 1, h_psi)
        pb.append((pt, r))
        # nearest sample of Sigma over the same planar point
        pl = _planar(surface.points, n)
        d = np.sqrt(np.sum((pl[:, :-1] - q[:-1]) ** 2, axis=1)) + np.sqrt(np.abs(pl[:, -1] - q[-1])) \
            + np.abs(surface.points[:, n - 1] - h_psi)
        sb.append((surface.points[int(np.argmin(d))], r))
    rep_psi = carleson_norm(sig_psi, pb, max(8, scale_subdivisions), coarse=0)
    rep = carleson_norm(surface, sb, max(8, scale_subdivisions), coarse=0)
    ratio = rep_psi.norm_estimate / (1 + rep.norm_estimate)
    # distance inequality
    Y = sig_psi.points
    keep = np.all(np.abs(Y[:, :-1]) <= region * R, axis=1) & (np.abs(Y[:, -1]) <= (region * R) ** 2)
    Y = Y[keep]
    E = extension.E
    nodes = extension.psi_ext.nodes()
    Epts = np.ascontiguousarray(nodes[E.ravel()])
    dE, _ = _nearest_set(np.ascontiguousarray(_planar(Y, n)), Epts)
    dS = surface.nearest_sample_distance(Y)
    pitch = extension.psi_ext.pitch
    factor = float(np.max(dS / (dE + pitch))) if Y.shape[0] else 0.0
    return TransferReport(rep_psi.norm_estimate, rep.norm_estimate, float(ratio), factor,
                          4.0 * (1 + extension.b_star), rep_psi, rep)


# ---------------------------------------------------------------------------
# end-to-end driver

@dataclass
class BigPieceRun:
    pair: CorkscrewPair
    setup: BigPieceSetup
    surface: SampledSurface = field(repr=False)
    envelope: ConeEnvelope = field(repr=False)
    carleson: CarlesonReport = field(repr=False)
    good: GoodSetResult = field(repr=False)
    extension: WhitneyExtension = field(repr=False)
    transfer: Optional[TransferReport] = field(repr=False, default=None)

    def contact_shadow_original(self) -> float:
        """Contact-shadow measure pulled back to the original frame."""
        return self.envelope.shadow_measure / self.setup.scale ** (self.setup.n + 1)

    def summary(self) -> dict:
        cert = self.good.certificate()
        out = {"setup": self.setup.to_dict(), "envelope": self.envelope.to_dict(),
               "nu": float(self.carleson.norm_estimate),
               "contact_shadow_original": self.contact_shadow_original(),
               "good_set": {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                            for k, v in cert.items()},
               "whitney": {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                           for k, v in self.extension.certificates.items()}}
        if self.transfer is not None:
            out["transfer"] = self.transfer.to_dict()
        return out


def grid_mask(points: np.ndarray, psi: GraphFunction) -> np.ndarray:
    """Cells of ``psi``'s grid containing the given planar points."""
    E = np.zeros(psi.values.shape, dtype=bool)
    if points.size:
        idx = np.floor((points - np.asarray(psi.lower)) / psi.steps).astype(int)
        idx = np.clip(idx, 0, np.array(E.shape) - 1)
        E[tuple(idx.T)] = True
    return E


def run_big_pieces(surface: SampledSurface, p, R: float, carleson_bases, M_adr: float = 2.0,
                   h: Optional[float] = None, pitch: float = 2.0 ** -6, mu: float = 0.0,
                   lip_factor: float = 64.0, transfer_bases=None, scale_subdivisions: int = 8,
                   labeling_voxels: int = 64, m: int = 12,
                   contact_tol: Optional[float] = None) -> BigPieceRun:
    """Weak corkscrews at (p, R), normalised frame, cone envelope, good set
    (eps taken from the observed contact shadow), Whitney extension and, when
    ``transfer_bases`` is given, the Carleson transfer check.

    ``carleson_bases`` is a list of (centre, r) or an existing report.
    """
    c = np.asarray(p, dtype=float)
    lab = label_components(surface, ParCube(PointST.from_array(c), R), R / labeling_voxels)
    pair = find_corkscrews(surface, lab, c, R, mode="weak")
    if pair is None:
        raise InvariantError(f"no corkscrew pair at {c.tolist()}, R={R}")
    setup, ns = normalize_setup(surface, c, R, pair, M_adr=M_adr, h=h, pitch=pitch)
    env = cone_envelope(setup, ns, h=h, pitch=pitch, contact_tol=contact_tol)
    if isinstance(carleson_bases, CarlesonReport):
        car = carleson_bases
    else:
        car = carleson_norm(surface, carleson_bases, scale_subdivisions)
    Rn = 2 * setup.M
    eps = env.shadow_measure / Rn ** (setup.n + 1)
    if eps <= 0:
        raise InvariantError("empty contact shadow")
    good = extract_good_set(ns, env.psi, np.zeros(setup.n + 1), Rn, eps=eps, carleson=car,
                            setup=setup, contact_tol=contact_tol, m=m)
    E = grid_mask(_planar(ns.points[good.F1], setup.n), env.psi)
    ext = whitney_extend(E, env.psi, env.h, mu=mu, lip_factor=lip_factor)
    tr = None
    if transfer_bases is not None:
        tr = carleson_transfer_check(ns, ext, transfer_bases, scale_subdivisions=scale_subdivisions)
    return BigPieceRun(pair, setup, ns, env, car, good, ext, tr)
