"""Embedded multi-resolution collar lattices.

Levels interleave square and diamond point constellations so that each
refinement doubles the point count and shrinks the mean nearest-neighbor
spacing by 1/sqrt(2), while every coarser set stays an exact subset of
every denser one. Fractional density states add the points of the next
level closest to geozone boundaries first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .grid_model import Rect

__all__ = [
    "DensityState",
    "LatticeHierarchy",
    "build_hierarchy",
    "training_collars",
    "average_spacing",
    "export_collars_csv",
]


@dataclass(frozen=True)
class DensityState:
    """Sampling density s = d + f with integer level d and fraction f."""

    d: int
    f: float = 0.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("level d must be >= 1")
        if not (0.0 <= self.f < 1.0):
            raise ValueError("fraction f must lie in [0, 1)")

    @classmethod
    def from_float(cls, s: float) -> "DensityState":
        d = int(math.floor(s + 1e-12))
        f = float(s - d)
        if f < 1e-12:
            f = 0.0
        return cls(d=d, f=f)

    @property
    def s(self) -> float:
        return self.d + self.f


@dataclass(frozen=True)
class LatticeHierarchy:
    """Per-level collar point sets P_d (pairwise disjoint), coarsest first."""

    level_points: tuple[np.ndarray, ...]  # P_1 .. P_D, each (k, 2)
    footprint: Rect
    finest_pitch: float
    scale: float
    theta: float

    @property
    def depth(self) -> int:
        return len(self.level_points)

    def nominal_pitch(self, d: int) -> float:
        """Ideal nearest-neighbor spacing of S_d in the unclipped lattice."""
        self._check_level(d)
        return self.finest_pitch * math.sqrt(2.0) ** (self.depth - d)

    def points(self, d: int) -> np.ndarray:
        """Cumulative training set S_d (concatenation of P_1..P_d)."""
        self._check_level(d)
        return np.vstack(self.level_points[:d])

    def level_sizes(self) -> list[int]:
        return [p.shape[0] for p in self.level_points]

    def _check_level(self, d: int):
        if not 1 <= d <= self.depth:
            raise ValueError(f"level {d} outside [1, {self.depth}]")


def _quincunx_depth(i: np.ndarray, j: np.ndarray, max_depth: int) -> np.ndarray:
    """Number of diamond decimations each integer lattice point survives."""
    depth = np.zeros(i.shape, dtype=np.int64)
    ii = i.copy()
    jj = j.copy()
    alive = np.ones(i.shape, dtype=bool)
    for _ in range(max_depth):
        alive = alive & (((ii + jj) & 1) == 0)
        if not alive.any():
            break
        u = (ii + jj) // 2
        v = (ii - jj) // 2
        ii = np.where(alive, u, ii)
        jj = np.where(alive, v, jj)
        depth[alive] += 1
    return depth


def build_hierarchy(
    footprint: Rect,
    a: float = 2.0,
    levels: int = 6,
    theta: float = 0.0,
    finest_pitch: float | None = None,
) -> LatticeHierarchy:
    """Construct the embedded lattice hierarchy over a footprint.

    Parameters
    ----------
    footprint : Rect
        Bench extent in meters.
    a : float
        Point-count scaling per level. Only a=2 (the interleaved
        square/diamond refinement) is supported; it is the only scaling
        with an exact embedded construction at 1/sqrt(2) spacing steps.
    levels : int
        Number of levels D (>= 2); d=1 is coarsest.
    theta : float
        Lattice rotation in radians about the footprint center.
    finest_pitch : float, optional
        Spacing of the densest level; defaults to min extent / 50.
    """
    if abs(a - 2.0) > 1e-12:
        raise ValueError("only the a=2 interleaved refinement is supported")
    if levels < 2:
        raise ValueError("need at least 2 levels")
    if finest_pitch is None:
        finest_pitch = min(footprint.width, footprint.height) / 50.0
    p = float(finest_pitch)
    if p <= 0:
        raise ValueError("finest_pitch must be positive")

    cxy = footprint.center
    half_diag = 0.5 * math.hypot(footprint.width, footprint.height)
    imax = int(math.ceil(half_diag / p)) + 2
    idx = np.arange(-imax, imax + 1)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    depth = _quincunx_depth(ii, jj, levels - 1)
    level = levels - depth

    ct, st = math.cos(theta), math.sin(theta)
    x = cxy[0] + p * (ii * ct - jj * st)
    y = cxy[1] + p * (ii * st + jj * ct)
    inside = (
        (x >= footprint.x0)
        & (x <= footprint.x1)
        & (y >= footprint.y0)
        & (y <= footprint.y1)
    )

    per_level = []
    for d in range(1, levels + 1):
        sel = inside & (level == d)
        pts = np.column_stack([x[sel], y[sel]])
        order = np.lexsort((pts[:, 0], pts[:, 1]))
        pts = np.ascontiguousarray(pts[order])
        pts.flags.writeable = False
        per_level.append(pts)
    if per_level[0].shape[0] < 1:
        raise ValueError(
            f"footprint {footprint} too small to host a level-1 point "
            f"(coarsest pitch {p * math.sqrt(2.0) ** (levels - 1):.3g} m)"
        )
    return LatticeHierarchy(
        level_points=tuple(per_level),
        footprint=footprint,
        finest_pitch=p,
        scale=a,
        theta=theta,
    )


def training_collars(
    hierarchy: LatticeHierarchy,
    state: DensityState | float,
    boundary_distance=None,
) -> np.ndarray:
    """Collar set for a density state s = d + f.

    Returns S_d plus the round-half-up(f * |P_{d+1}|) points of the next
    level with the smallest boundary distance (ties by (y, x) order).
    ``boundary_distance`` is a callable (x, y) -> meters; when omitted the
    infill order degrades to plain (y, x) order.
    """
    if not isinstance(state, DensityState):
        state = DensityState.from_float(float(state))
    D = hierarchy.depth
    if state.d > D or (state.d == D and state.f > 0):
        raise ValueError(
            f"density state s={state.s:g} exceeds hierarchy depth {D}"
        )
    base = hierarchy.points(state.d)
    if state.f == 0.0:
        return base
    nxt = hierarchy.level_points[state.d]  # P_{d+1}
    take = int(math.floor(state.f * nxt.shape[0] + 0.5))
    if take == 0:
        return base
    if boundary_distance is None:
        dist = np.zeros(nxt.shape[0])
    else:
        dist = np.asarray(
            [float(boundary_distance(px, py)) for px, py in nxt]
        )
        # +inf sentinels (single-domain bench) sort to an arbitrary but
        # deterministic (y, x) order.
        dist = np.where(np.isfinite(dist), dist, np.finfo(float).max)
    order = np.lexsort((nxt[:, 0], nxt[:, 1], dist))
    return np.vstack([base, nxt[order[:take]]])


def average_spacing(hierarchy: LatticeHierarchy, d: int) -> float:
    """Mean nearest-neighbor distance over S_d, interior points only.

    Points within one nominal level pitch of the footprint boundary are
    excluded from the average (their neighborhoods are clipped).
    """
    pts = hierarchy.points(d)
    if pts.shape[0] < 2:
        raise ValueError(f"level {d} has {pts.shape[0]} point(s); spacing undefined")
    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=2)
    nn = dist[:, 1]
    band = hierarchy.nominal_pitch(d)
    fp = hierarchy.footprint
    interior = (
        (pts[:, 0] >= fp.x0 + band)
        & (pts[:, 0] <= fp.x1 - band)
        & (pts[:, 1] >= fp.y0 + band)
        & (pts[:, 1] <= fp.y1 - band)
    )
    if not interior.any():
        interior = np.ones(pts.shape[0], dtype=bool)
    return float(nn[interior].mean())


def export_collars_csv(hierarchy: LatticeHierarchy, dest) -> None:
    """Write collars as ``x,y,level`` rows for plotting diagnostics."""
    own = isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__")
    fh = open(dest, "w", newline="") if own else dest
    try:
        fh.write("x,y,level\n")
        for d, pts in enumerate(hierarchy.level_points, start=1):
            for px, py in pts:
                fh.write(f"{px:.10g},{py:.10g},{d}\n")
    finally:
        if own:
            fh.close()
