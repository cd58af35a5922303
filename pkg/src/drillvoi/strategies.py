"""Sequential drill-hole selection policies.

Policies: RN (random), GD (regenerated rectangular grid benchmark), MV
(max posterior variance), TF (variance weighted by a gradient prior), TC
(variance weighted by a neighborhood coefficient of variation), UR
(largest expected variance reduction, with top-M pruning).

A PolicyState owns the acquired drill holes, the current hyperparameters
and a streaming posterior over the candidate-column raster; acquisition
appends columns and marks the posterior stale until the next refresh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import gp
from .grid_model import Bench, GradeModel, Rect, TrainingSet, extract_columns

__all__ = [
    "POLICIES",
    "PolicyConfig",
    "PolicyState",
    "init_pattern",
    "grid_layout",
    "make_policy_state",
    "refresh",
    "score_mv",
    "score_tf",
    "score_tc",
    "score_ur",
    "select_next",
    "set_grid_target",
]

POLICIES = ("RN", "GD", "MV", "TF", "TC", "UR")


@dataclass(frozen=True)
class PolicyConfig:
    """Tuning knobs shared by the selection policies."""

    candidate_pitch_cells: int = 2
    tc_neighbors: int = 12            # K nearest observations
    tc_weight_eps: float = 0.1        # meters, distance-weight softening
    tc_h_max: float = 10.0
    grade_floor: float = 1e-6
    ur_shortlist: int = 30            # M
    ur_radius_scales: float = 3.0     # sphere of influence, in length-scales
    refit_dense_until: int = 50       # refit every hole while n <= this
    refit_every: int = 5              # then every k holes
    fit_restarts: int = 3
    fit_maxiter: int = 60
    refit: bool = True                # False pins the initial hyperparameters


def init_pattern(footprint: Rect, padding_frac: float = 0.10) -> np.ndarray:
    """Four starting collars, one per footprint corner, inset by padding."""
    px = padding_frac * footprint.width
    py = padding_frac * footprint.height
    return np.array(
        [
            [footprint.x0 + px, footprint.y0 + py],
            [footprint.x1 - px, footprint.y0 + py],
            [footprint.x0 + px, footprint.y1 - py],
            [footprint.x1 - px, footprint.y1 - py],
        ]
    )


def grid_layout(footprint: Rect, n: int) -> np.ndarray:
    """Uniform rectangular layout of n collars (non-embedded benchmark).

    Exact factor pairs are used when one matches the footprint aspect
    within a factor of 3 (n = k^2 on a square gives a k x k grid);
    otherwise a near-square layout is built and the trailing surplus
    points of the last row are dropped.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    aspect = footprint.width / footprint.height
    best = None
    for ncol in range(1, n + 1):
        if n % ncol:
            continue
        nrow = n // ncol
        mismatch = abs(math.log((ncol / nrow) / aspect))
        if best is None or mismatch < best[0]:
            best = (mismatch, ncol, nrow)
    if best is not None and best[0] <= math.log(3.0):
        _, ncol, nrow = best
    else:
        ncol = max(1, round(math.sqrt(n * aspect)))
        nrow = math.ceil(n / ncol)
    pts = []
    for j in range(nrow):
        for i in range(ncol):
            if len(pts) == n:
                break
            pts.append(
                (
                    footprint.x0 + (i + 0.5) * footprint.width / ncol,
                    footprint.y0 + (j + 0.5) * footprint.height / nrow,
                )
            )
    return np.asarray(pts)


@dataclass
class PolicyState:
    """Mutable single-owner state of one acquisition run."""

    policy: str
    model: GradeModel
    bench: Bench
    footprint: Rect
    config: PolicyConfig
    candidates: np.ndarray          # (nc, 2) admissible collars
    cand_shape: tuple[int, int]     # candidate raster (ncx, ncy)
    test_locations: np.ndarray      # (m, 3) candidate-column raster
    raster_shape: tuple[int, int, int]
    truth: np.ndarray               # (m,) true grades on the raster
    rng: np.random.Generator
    seed: int
    acquired: list = field(default_factory=list)
    train: TrainingSet = field(default_factory=TrainingSet.empty)
    hp: gp.Hyperparameters | None = None
    solver: gp.StreamingPosterior | None = None
    _acquired_set: set = field(default_factory=set)
    _pending: list = field(default_factory=list)
    _fit_count: int = 0
    _collars_at_fit: int = -1
    gd_layout: np.ndarray | None = None
    gd_cursor: int = 0

    @property
    def n_collars(self) -> int:
        return len(self.acquired)

    def mean_raster(self) -> np.ndarray:
        return self.solver.mean.reshape(self.raster_shape)

    def sd_raster(self) -> np.ndarray:
        return self.solver.sd.reshape(self.raster_shape)

    def column_mean(self, values: np.ndarray) -> np.ndarray:
        """Mean over z per candidate column, flattened to (nc,)."""
        return values.reshape(self.raster_shape).mean(axis=2).reshape(-1)

    def is_acquired(self, collar) -> bool:
        return (float(collar[0]), float(collar[1])) in self._acquired_set


def make_policy_state(
    policy: str,
    model: GradeModel,
    bench: Bench,
    seed: int = 0,
    footprint: Rect | None = None,
    config: PolicyConfig | None = None,
    hp: gp.Hyperparameters | None = None,
) -> PolicyState:
    """Build a fresh policy state over the candidate raster of a bench."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    config = config or PolicyConfig()
    footprint = footprint or model.footprint
    pc = config.candidate_pitch_cells
    xc_all = model.axis_centers(0)
    yc_all = model.axis_centers(1)
    ix = np.flatnonzero((xc_all >= footprint.x0) & (xc_all <= footprint.x1))
    iy = np.flatnonzero((yc_all >= footprint.y0) & (yc_all <= footprint.y1))
    ix = ix[pc // 2 :: pc]
    iy = iy[pc // 2 :: pc]
    if ix.size == 0 or iy.size == 0:
        raise ValueError("footprint contains no candidate cells")
    zsl = bench.z_slice(model)
    zc = model.axis_centers(2)[zsl]
    gx, gy, gz = np.meshgrid(xc_all[ix], yc_all[iy], zc, indexing="ij")
    T = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    truth = model.grade[np.ix_(ix, iy, range(zsl.start, zsl.stop))].reshape(-1)
    cand = np.column_stack(
        [np.repeat(xc_all[ix], iy.size), np.tile(yc_all[iy], ix.size)]
    )
    return PolicyState(
        policy=policy,
        model=model,
        bench=bench,
        footprint=footprint,
        config=config,
        candidates=cand,
        cand_shape=(ix.size, iy.size),
        test_locations=T,
        raster_shape=(ix.size, iy.size, zc.size),
        truth=truth,
        rng=np.random.default_rng(seed),
        seed=seed,
        hp=hp,
    )


def acquire(state: PolicyState, collar) -> None:
    """Drill a column at the collar and mark the posterior stale."""
    collar = (float(collar[0]), float(collar[1]))
    if collar in state._acquired_set:
        raise ValueError(f"collar {collar} already acquired")
    column = extract_columns(state.model, state.bench, [collar])
    state.train = (
        column if len(state.train) == 0 else state.train.concat(column)
    )
    state.acquired.append(collar)
    state._acquired_set.add(collar)
    state._pending.append(column)


def _refit_due(state: PolicyState) -> bool:
    if not state.config.refit:
        return state.hp is None and len(state.train) >= 4
    if state.hp is None:
        return len(state.train) >= 4
    n = state.n_collars
    if n <= state.config.refit_dense_until:
        return n != state._collars_at_fit
    return n - state._collars_at_fit >= state.config.refit_every


def refresh(state: PolicyState) -> None:
    """Bring hyperparameters and the streaming posterior up to date."""
    if state.hp is None and len(state.train) < 4:
        raise RuntimeError("cannot refresh: no hyperparameters and < 4 observations")
    if _refit_due(state):
        fit_seed = (state.seed * 1_000_003 + state._fit_count) % (2**32)
        state.hp = gp.fit(
            state.train,
            restarts=state.config.fit_restarts,
            seed=fit_seed,
            maxiter=state.config.fit_maxiter,
            warm_start=state.hp,
        )
        state._fit_count += 1
        state._collars_at_fit = state.n_collars
        state.solver = None
    if state.solver is None:
        state.solver = gp.StreamingPosterior(
            state.hp,
            state.test_locations,
            capacity=max(256, len(state.train)),
        )
        if len(state.train):
            state.solver.append(state.train.X, state.train.y)
        state._pending = []
    elif state._pending:
        for column in state._pending:
            state.solver.append(column.X, column.y)
        state._pending = []


def _unacquired_mask(state: PolicyState) -> np.ndarray:
    mask = np.ones(state.candidates.shape[0], dtype=bool)
    for k, (cx, cy) in enumerate(state.candidates):
        if (cx, cy) in state._acquired_set:
            mask[k] = False
    return mask


def score_mv(state: PolicyState) -> np.ndarray:
    """Mean posterior variance down each candidate column."""
    var = state.solver.var.reshape(state.raster_shape)
    return var.mean(axis=2).reshape(-1)


def _sobel_magnitude(grid: np.ndarray) -> np.ndarray:
    g2 = np.zeros_like(grid)
    for axis in range(grid.ndim):
        g = ndimage.sobel(grid, axis=axis, mode="nearest")
        g2 += g * g
    return np.sqrt(g2)


def score_tf(state: PolicyState) -> np.ndarray:
    """Column variance score amplified by a standardized gradient prior.

    The prior is the 3D Sobel gradient magnitude of the posterior mean,
    min-max standardized to [0, 1]; its weight is the reciprocal of the
    posterior-mean standard deviation over the raster. Constant mean
    fields degrade to the MV ranking.
    """
    mu = state.mean_raster()
    sd = state.sd_raster()
    g = _sobel_magnitude(mu)
    lo, hi = float(g.min()), float(g.max())
    if hi > lo:
        g = (g - lo) / (hi - lo)
    else:
        g = np.zeros_like(g)
    mu_sd = float(mu.std())
    eta = 1.0 / mu_sd if mu_sd > 0 else 0.0
    score = sd * (1.0 + eta * g)
    return score.mean(axis=2).reshape(-1)


def score_tc(state: PolicyState, neighbors: int | None = None) -> np.ndarray:
    """Column variance score amplified by a local coefficient of variation.

    For each candidate the K nearest acquired observations (3D distance to
    the column midpoint) contribute with weights 1/(d + eps); h is their
    weighted sd over weighted mean, clamped to h_max.
    """
    cfg = state.config
    K = neighbors or cfg.tc_neighbors
    if len(state.train) < K:
        raise ValueError(f"TC needs at least K={K} observations, have {len(state.train)}")
    sd_col = state.sd_raster().mean(axis=2).reshape(-1)
    z_mid = state.bench.z_rl + 0.5 * state.bench.height
    query = np.column_stack(
        [state.candidates, np.full(state.candidates.shape[0], z_mid)]
    )
    tree = cKDTree(state.train.X)
    dist, idx = tree.query(query, k=K)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    w = 1.0 / (dist + cfg.tc_weight_eps)
    grades = state.train.y[idx]
    wsum = w.sum(axis=1)
    mean_w = (w * grades).sum(axis=1) / wsum
    var_w = (w * (grades - mean_w[:, None]) ** 2).sum(axis=1) / wsum
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.sqrt(var_w) / mean_w
    h = np.where(mean_w <= cfg.grade_floor, cfg.tc_h_max, h)
    h = np.minimum(h, cfg.tc_h_max)
    return sd_col * (1.0 + h)


def score_ur(state: PolicyState, shortlist: int | None = None) -> np.ndarray:
    """Expected variance reduction for the top-M candidate columns.

    Only the M candidates with the highest mean column sd are evaluated
    (the rest score NaN); the reduction is averaged over test points
    inside the candidate's sphere of influence (3 max length-scales) and
    uses the current hyperparameters without refitting. Observation-free:
    only geometry enters.
    """
    cfg = state.config
    M = shortlist or cfg.ur_shortlist
    sd_col = state.sd_raster().mean(axis=2).reshape(-1)
    open_mask = _unacquired_mask(state)
    ranked = np.argsort(-sd_col, kind="stable")
    ranked = ranked[open_mask[ranked]][:M]
    zc = np.unique(state.test_locations[:, 2])
    radius = cfg.ur_radius_scales * max(state.hp.length_scales)
    z_mid = 0.5 * (zc[0] + zc[-1])
    scores = np.full(sd_col.shape, np.nan)
    T = state.test_locations
    for c in ranked:
        cx, cy = state.candidates[c]
        col = np.column_stack(
            [np.full(zc.size, cx), np.full(zc.size, cy), zc]
        )
        d2 = (
            (T[:, 0] - cx) ** 2
            + (T[:, 1] - cy) ** 2
            + (T[:, 2] - z_mid) ** 2
        )
        subset = np.flatnonzero(d2 <= radius * radius)
        if subset.size == 0:
            subset = None
        red = state.solver.variance_reduction(col, test_subset=subset)
        scores[c] = float(red.mean())
    return scores


def _argmax_lex(state: PolicyState, scores: np.ndarray) -> int | None:
    """Index of the max score among unacquired candidates, ties broken by
    (y, x) order; None when no candidate is admissible."""
    mask = _unacquired_mask(state)
    vals = np.where(mask, scores, -np.inf)
    vals = np.where(np.isnan(vals), -np.inf, vals)
    best = vals.max()
    if not np.isfinite(best):
        return None
    tied = np.flatnonzero(vals == best)
    order = np.lexsort(
        (state.candidates[tied, 0], state.candidates[tied, 1])
    )
    return int(tied[order[0]])


def set_grid_target(state: PolicyState, n: int) -> None:
    """Reset a GD run to a fresh n-point layout (grids are non-embedded)."""
    if state.policy != "GD":
        raise ValueError("grid targets only apply to the GD policy")
    state.gd_layout = grid_layout(state.footprint, n)
    state.gd_cursor = 0
    state.acquired = []
    state._acquired_set = set()
    state.train = TrainingSet.empty()
    state._pending = []
    state.solver = None
    state._collars_at_fit = -1


def select_next(state: PolicyState) -> tuple[float, float] | None:
    """Pick, drill and record the next collar under the state's policy.

    Returns the collar, or None when the policy has exhausted its
    candidates (or its grid layout for GD). Scoring policies refresh the
    posterior first; the acquisition itself marks it stale again.
    """
    if state.policy == "RN":
        mask = _unacquired_mask(state)
        open_idx = np.flatnonzero(mask)
        if open_idx.size == 0:
            return None
        choice = int(state.rng.integers(open_idx.size))
        collar = tuple(state.candidates[open_idx[choice]])
    elif state.policy == "GD":
        if state.gd_layout is None:
            raise RuntimeError("GD policy needs set_grid_target(n) first")
        if state.gd_cursor >= state.gd_layout.shape[0]:
            return None
        collar = tuple(state.gd_layout[state.gd_cursor])
        state.gd_cursor += 1
    else:
        refresh(state)
        if state.policy == "MV":
            scores = score_mv(state)
        elif state.policy == "TF":
            scores = score_tf(state)
        elif state.policy == "TC":
            scores = score_tc(state)
        elif state.policy == "UR":
            scores = score_ur(state)
        else:  # pragma: no cover
            raise ValueError(state.policy)
        pick = _argmax_lex(state, scores)
        if pick is None:
            return None
        collar = tuple(state.candidates[pick])
    acquire(state, collar)
    return collar
