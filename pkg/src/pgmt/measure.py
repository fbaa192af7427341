"""Covering estimates of parabolic Hausdorff measure and ADR checks."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .pargeo import ParCube, PointST, as_points
from .surfaces import InvariantError, SampledSurface, surface_measure

VARIANTS = ("full", "time-forward", "time-backward", "time-symmetric")

# smallest admissible scale, in units of the surface resolution
MIN_SCALE_FACTOR = 4.0
# largest admissible scale, as a fraction of the window's parabolic size
MAX_SCALE_FRACTION = 0.25


def covering_sum(points, eta: float, delta: float, dims: int | None = None) -> float:
    """Occupied-cell covering sum on the grid of pitch (delta, ..., delta^2).

    Each occupied cell contributes its parabolic diameter to the power eta.
    """
    P = as_points(points)
    if P.shape[0] == 0:
        return 0.0
    m = P.shape[1] - 1 if dims is None else dims
    steps = np.full(P.shape[1], delta)
    steps[-1] = delta * delta
    cells = np.unique(np.floor(P / steps).astype(np.int64), axis=0)
    diam = np.sqrt(m) * delta + delta
    return float(cells.shape[0] * diam ** eta)


def hausdorff_estimate(point_set, eta: float, delta_grid) -> list:
    """Greedy grid-covering sums ``sum diam_p(A_k)^eta`` for each delta.

    Returns a list of ``(delta, sum)`` pairs in the order of ``delta_grid``.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    deltas = [float(d) for d in delta_grid]
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("delta_grid must be decreasing")
    P = as_points(point_set) if len(point_set) else np.empty((0, 2))
    return [(d, covering_sum(P, eta, d)) for d in deltas]


@dataclass
class AdrReport:
    """Extremal surface-measure ratios over tested centres and scales."""

    centers_tested: int
    scales_tested: list
    ratio_min: float
    ratio_max: float
    M_observed: float
    variant: str
    ratios: np.ndarray = field(repr=False, default=None)

    def passes(self, lower: float, upper: float = np.inf) -> bool:
        return bool(self.ratio_min >= lower and self.ratio_max <= upper)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("ratios")
        return d


def valid_scale_range(surface: SampledSurface) -> tuple[float, float]:
    lo = MIN_SCALE_FACTOR * surface.resolution
    if surface.window is None:
        return lo, np.inf
    w_lo = np.asarray(surface.window.lower)
    w_hi = np.asarray(surface.window.upper)
    half = (w_hi - w_lo) / 2
    size = min(float(half[:-1].min()), float(np.sqrt(half[-1])))
    return lo, MAX_SCALE_FRACTION * size


def _check_scale(surface: SampledSurface, r: float, what: str) -> None:
    lo, hi = valid_scale_range(surface)
    if not (lo <= r <= hi):
        raise InvariantError(f"{what}: scale {r} outside the valid window [{lo}, {hi}]")


def _check_center(surface: SampledSurface, c: np.ndarray, what: str) -> None:
    tol = 1e-9 * (1.0 + float(np.abs(c).max()))
    if surface.has_exact_oracle() and not surface.contains(c[None, :], tol)[0]:
        raise InvariantError(f"{what}: centre {tuple(c)} is not on the surface")


def check_adr(surface: SampledSurface, centers, scales, variant: str = "full",
              check_window: bool = True) -> AdrReport:
    """Ratios sigma(Delta(X, t, r)) / r^{n+1} over all centres and scales.

    ``full`` uses the whole cube; ``time-forward`` / ``time-backward`` use
    the upper / lower half; ``time-symmetric`` takes the smaller of the two
    halves.  Ratios are returned per (centre, scale).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown ADR variant {variant!r}")
    C = as_points(centers)
    scales = [float(r) for r in scales]
    for r in scales:
        _check_scale(surface, r, "check_adr")
    for c in C:
        _check_center(surface, c, "check_adr")
    n = surface.n
    ratios = np.empty((C.shape[0], len(scales)))
    for i, c in enumerate(C):
        for j, r in enumerate(scales):
            cube = ParCube(PointST.from_array(c), r)
            if check_window:
                surface.check_window(cube)
            if variant == "full":
                m = surface_measure(surface, cube)
            elif variant == "time-forward":
                m = surface_measure(surface, cube, half=1)
            elif variant == "time-backward":
                m = surface_measure(surface, cube, half=-1)
            else:
                m = min(surface_measure(surface, cube, half=1), surface_measure(surface, cube, half=-1))
            ratios[i, j] = m / r ** (n + 1)
    rmin, rmax = float(ratios.min()), float(ratios.max())
    M = max(rmax, 1.0 / rmin if rmin > 0 else np.inf, 1.0)
    return AdrReport(C.shape[0], scales, rmin, rmax, M, variant, ratios)


class GHFailure(RuntimeError):
    """No surface mass found strictly in the past of a lower half cube."""


def gh_time_advance(surface: SampledSurface, p, r: float, a1: float = 0.25,
                    check_scale: bool = True, target=None, earliest: bool = False) -> tuple[PointST, float]:
    """A surface point in Delta^-(p, r) with time below t - (a1 r)^2.

    Returns the point and the surface mass of that region; the empirical
    a2 is ``mass / r^{n+1}``.  Among candidates the one spatially closest to
    ``target`` (default: p) is returned, ties broken by earlier time.  With
    ``earliest`` the earliest candidate is returned instead (ties by
    spatial distance), which makes the largest admissible time step.
    """
    if not 0 < a1 < 0.5:
        raise ValueError("a1 must lie in (0, 1/2)")
    c = p.as_array() if isinstance(p, PointST) else np.asarray(p, dtype=float)
    if check_scale:
        _check_scale(surface, r, "gh_time_advance")
    idx = surface.in_cube(c, r, half=-1)
    pts = surface.points[idx]
    keep = pts[:, -1] < c[-1] - (a1 * r) ** 2
    idx, pts = idx[keep], pts[keep]
    w = surface.weights[idx]
    mass = float(w.sum())
    if mass <= 0 or idx.size == 0:
        raise GHFailure(f"no surface mass in the past part of the lower half cube at {tuple(c)}, r={r}")
    tgt = c if target is None else np.asarray(target, dtype=float)
    sel = w > 0
    cand = pts[sel]
    d = np.sqrt(np.sum((cand[:, :-1] - tgt[:-1]) ** 2, axis=1))
    order = np.lexsort((d, cand[:, -1])) if earliest else np.lexsort((cand[:, -1], d))
    return PointST.from_array(cand[order[0]]), mass
