"""Time regularity of graph functions: half time derivative, parabolic BMO,
the Strichartz double-integral functional and Lip(1,1/2) constants."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy.signal import fftconvolve

from .surfaces import GraphFunction, grid_lip_constant


@dataclass
class HalfDerivative:
    """Gridded half time derivative with the truncation it was computed at."""

    values: np.ndarray
    valid: np.ndarray
    r_min: float
    r_max: float
    shells: list
    error_bar: float
    time_modulus: float

    def amplitude(self) -> float:
        v = self.values[self.valid]
        return float(np.max(np.abs(v))) if v.size else 0.0


def _shell_weights(dt: float, r_min: float, r_max: float) -> np.ndarray:
    """Exact integrals of u^{-3/2} over each grid cell [(k-1/2)dt, (k+1/2)dt]
    clipped to [r_min, r_max], for k = 0..K."""
    K = int(np.ceil(r_max / dt + 0.5))
    k = np.arange(K + 1, dtype=float)
    lo = np.clip((k - 0.5) * dt, r_min, r_max)
    hi = np.clip((k + 0.5) * dt, r_min, r_max)
    w = np.zeros(K + 1)
    m = hi > lo
    w[m] = 2.0 * (lo[m] ** -0.5 - hi[m] ** -0.5)
    return w


def _time_modulus(values: np.ndarray, dt: float) -> float:
    """Largest |psi(s) - psi(t)| / |s - t|^{1/2} along the time axis, over
    a local horizon plus dyadic gaps."""
    N = values.shape[-1]
    best = 0.0
    gaps = list(range(1, min(N, 10)))
    g = 16
    while g < N:
        gaps.append(g)
        g *= 2
    for k in gaps:
        d = np.abs(values[..., k:] - values[..., :-k])
        if d.size:
            best = max(best, float(d.max()) / np.sqrt(k * dt))
    return best


def half_time_derivative(psi: GraphFunction, r_min: float, r_max: float) -> HalfDerivative:
    """Principal-value half derivative in t with symmetric truncation.

    For each node the integral of (psi(x, s) - psi(x, t)) / |s - t|^{3/2} over
    r_min <= |s - t| <= r_max is computed with a product midpoint rule: psi
    is taken at cell centres and the kernel is integrated exactly over each
    cell, cells being grouped in dyadic shells starting at r_min.  The
    normalising constant is 1.

    Values outside the time window come from the attached formula when there
    is one; otherwise the grid is extended by constants and nodes whose
    shells leave the window are marked invalid.
    """
    dt = float(psi.steps[-1])
    T = float(psi.upper[-1] - psi.lower[-1])
    if r_min < dt * (1 - 1e-12):
        raise ValueError(f"r_min={r_min} below the time pitch {dt}")
    if r_max > T * (1 + 1e-12) or r_max <= r_min:
        raise ValueError(f"r_max={r_max} must lie in (r_min, window length {T}]")
    w = _shell_weights(dt, r_min, r_max)
    K = w.size - 1
    V = psi.values
    N = V.shape[-1]
    valid = np.ones(V.shape, dtype=bool)
    if psi.func is not None:
        axes = psi.axes()
        t_ext = axes[-1][0] + np.arange(-K, N + K) * dt
        grids = np.meshgrid(*(axes[:-1] + [t_ext]), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        ext = np.asarray(psi.func(nodes), dtype=float).reshape(V.shape[:-1] + (t_ext.size,))
    else:
        pad = [(0, 0)] * (V.ndim - 1) + [(K, K)]
        ext = np.pad(V, pad, mode="edge")
        idx = np.arange(N)
        inside = (idx - K >= 0) & (idx + K <= N - 1)
        valid &= inside
    kernel = np.concatenate([w[::-1], w[1:]])
    kernel = kernel.reshape((1,) * (V.ndim - 1) + (-1,))
    conv = fftconvolve(ext, kernel, mode="valid", axes=-1)
    D = conv - 2.0 * w.sum() * V
    shells = []
    a = r_min
    while a < r_max * (1 - 1e-12):
        shells.append((float(a), float(min(2 * a, r_max))))
        a *= 2
    b = _time_modulus(V, dt)
    # below r_min: each dyadic shell down to dt adds at most 2 b log 2, the
    # sub-cell part of a piecewise linear psi at most 4 b
    bar = b * (4.0 + 2.0 * np.log(2.0) * max(0.0, np.log2(r_min / dt)))
    return HalfDerivative(D, valid, float(r_min), float(r_max), shells, float(bar), b)


def _cube_sides(ndim: int, j: int) -> tuple:
    if ndim == 1:
        return (2 ** j,)
    return tuple([2 ** j] * (ndim - 1) + [4 ** j])


def _mean_oscillations(V: np.ndarray, ok: np.ndarray, sides, offs) -> float:
    sl = []
    for m, s, o in zip(V.shape, sides, offs):
        nb = (m - o) // s
        if nb < 1:
            return 0.0
        sl.append(slice(o, o + nb * s))
    A = V[tuple(sl)]
    M = ok[tuple(sl)]
    shape = []
    for m, s in zip(A.shape, sides):
        shape += [m // s, s]
    A = A.reshape(shape)
    M = M.reshape(shape)
    inner = tuple(range(1, 2 * V.ndim, 2))
    good = M.all(axis=inner)
    if not good.any():
        return 0.0
    A = np.where(M, A, 0.0)
    mean = A.mean(axis=inner, keepdims=True)
    osc = np.abs(A - mean).mean(axis=inner)
    return float(osc[good].max())


def bmo_norm(field, valid: Optional[np.ndarray] = None, min_level: int = 0) -> float:
    """Sup over dyadic parabolic cubes of the mean oscillation of a grid field.

    Cubes at level j have 2^j cells along each spatial axis and 4^j cells in
    time (2^j cells when the field only has a time axis).  Each level is
    scanned with three grid offsets (0, 1/3 and 2/3 of the side) so that
    oscillation straddling a dyadic boundary is still seen.
    """
    if isinstance(field, HalfDerivative):
        V, ok = field.values, field.valid
    elif isinstance(field, GraphFunction):
        V, ok = field.values, np.ones(field.values.shape, dtype=bool)
    else:
        V = np.asarray(field, dtype=float)
        ok = np.ones(V.shape, dtype=bool)
    if valid is not None:
        ok = ok & valid
    ok = ok & np.isfinite(V)
    best = 0.0
    j = min_level
    while True:
        sides = _cube_sides(V.ndim, j)
        if any(s > m for s, m in zip(sides, V.shape)):
            break
        for third in range(3):
            offs = tuple((third * s) // 3 for s in sides)
            best = max(best, _mean_oscillations(V, ok, sides, offs))
        j += 1
    return best


@njit(cache=True)
def _interval_sums(v, m, step):
    """Off-diagonal sums of |v_i - v_j|^2 / (i - j)^2 over windows of m cells
    starting at multiples of step."""
    N = v.size
    count = (N - m) // step + 1
    out = np.zeros(count)
    for c in range(count):
        s0 = c * step
        acc = 0.0
        for i in range(s0, s0 + m):
            for j in range(i + 1, s0 + m):
                d = v[i] - v[j]
                k = j - i
                acc += d * d / (k * k)
        out[c] = 2.0 * acc
    return out


def _diagonal_bound(v: np.ndarray) -> np.ndarray:
    """Per-cell bound L_i^2 dt^2 for the excluded diagonal cells, with L_i the
    steeper of the two adjacent slopes."""
    d = np.abs(np.diff(v))
    left = np.concatenate([[0.0], d])
    right = np.concatenate([d, [0.0]])
    return np.maximum(left, right) ** 2


def strichartz_criterion(psi, dt: Optional[float] = None, min_cells: int = 4,
                         return_argmax: bool = False):
    """Sup over a dyadic grid of intervals [a - h, a + h] of
    (1/h) * double integral of |psi(t) - psi(s)|^2 / |t - s|^2.

    Intervals have 2^j >= min_cells cells and start at multiples of half their
    length.  Diagonal cells are excluded from the quadrature; their
    contribution is bounded with the local slope and added as a remainder.
    Multi-dimensional grid functions give the sup over spatial rows.
    """
    if isinstance(psi, GraphFunction):
        V = psi.values
        dt = float(psi.steps[-1])
        t0 = float(psi.lower[-1])
    else:
        t0 = 0.0
        V = np.asarray(psi, dtype=float)
        if dt is None:
            raise ValueError("dt is required for raw arrays")
    rows = V.reshape(-1, V.shape[-1])
    N = rows.shape[1]
    best, arg = 0.0, None
    for r, v in enumerate(rows):
        v = np.ascontiguousarray(v, dtype=float)
        diag = np.concatenate([[0.0], np.cumsum(_diagonal_bound(v))])
        m = min_cells
        while m <= N:
            step = max(1, m // 2)
            sums = _interval_sums(v, m, step)
            starts = np.arange(sums.size) * step
            rem = diag[starts + m] - diag[starts]
            h = m * dt / 2.0
            vals = (sums + rem) / h
            i = int(np.argmax(vals))
            if vals[i] > best:
                best = float(vals[i])
                arg = (r, t0 + float((starts[i] + m / 2.0) * dt), h)
            m *= 2
    if return_argmax:
        return best, arg
    return best


def _all_pairs_lip(values: np.ndarray, pitch: float) -> float:
    P = np.stack(np.meshgrid(*[np.arange(m) for m in values.shape], indexing="ij"), -1)
    P = P.reshape(-1, values.ndim).astype(float)
    v = values.ravel()
    best = 0.0
    for s in range(0, v.size, 512):
        d = np.abs(v[s:s + 512, None] - v[None, :])
        sp = np.sqrt(((P[s:s + 512, None, :-1] - P[None, :, :-1]) ** 2).sum(-1)) * pitch
        tp = np.sqrt(np.abs(P[s:s + 512, None, -1] - P[None, :, -1])) * pitch
        dist = sp + tp
        dist[dist == 0] = np.inf
        best = max(best, float((d / dist).max()))
    return best


def lip_estimate(psi: GraphFunction, horizon: int = 3, exhaustive_limit: int = 4096) -> float:
    """Lip(1,1/2) constant of a grid function.

    Small grids are checked over all pairs.  Larger grids use every pair in a
    local horizon of cells plus dyadic gaps along each axis; spatial gaps
    chain additively so the dyadic ratios bound all spatial pairs.
    """
    V = psi.values
    if V.size <= exhaustive_limit:
        return _all_pairs_lip(V, psi.pitch)
    return float(grid_lip_constant(V, psi.pitch, horizon=horizon))


@dataclass
class RegularityProfile:
    lip_estimate: float
    half_derivative: HalfDerivative = field(repr=False)
    bmo_norm: float
    strichartz_sup: float
    truncation: tuple
    error_bars: dict

    def to_dict(self) -> dict:
        return {
            "lip": float(self.lip_estimate),
            "bmo": float(self.bmo_norm),
            "strichartz": float(self.strichartz_sup),
            "truncation": [float(v) for v in self.truncation],
            "error_bars": {k: float(v) for k, v in self.error_bars.items()},
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def regularity_profile(psi: GraphFunction, r_min: Optional[float] = None,
                       r_max: Optional[float] = None) -> RegularityProfile:
    dt = float(psi.steps[-1])
    T = float(psi.upper[-1] - psi.lower[-1])
    r_min = dt if r_min is None else r_min
    r_max = T / 4 if r_max is None else r_max
    D = half_time_derivative(psi, r_min, r_max)
    bmo = bmo_norm(D)
    st = strichartz_criterion(psi)
    return RegularityProfile(lip_estimate(psi), D, bmo, st, (r_min, r_max),
                             {"half_derivative_truncation": D.error_bar})
