"""Post-processing of metric sweeps: per-column normalization and
standardization, gain factors, monotone performance-curve fits, and the
incremental cost/reward of moving between sampling density states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

__all__ = [
    "FIDELITY_METRICS",
    "normalize_by_best",
    "standardize_unit",
    "gain_factor",
    "DecayCurve",
    "fit_decay_curve",
    "lattice_density",
    "incremental_cost",
    "incremental_reward",
    "CostRewardModel",
]

# Metrics where larger is better; everything else is treated as a loss.
FIDELITY_METRICS = frozenset({"fidelity", "ssim"})


def normalize_by_best(values, masked=None, fidelity: bool = False):
    """Scale a per-density metric column by its best value.

    Loss metrics divide by the column minimum (best = 1 at the bottom);
    fidelity metrics divide by the maximum (best = 1 at the top). Masked
    entries are ignored and stay masked. Returns (normalized, masked).
    """
    values = np.asarray(values, dtype=float)
    masked = (
        np.zeros(values.shape, dtype=bool)
        if masked is None
        else np.asarray(masked, dtype=bool).copy()
    )
    masked = masked | ~np.isfinite(values)
    if masked.all():
        return np.full_like(values, np.nan), masked
    live = values[~masked]
    kappa = live.max() if fidelity else live.min()
    if kappa == 0:
        return np.full_like(values, np.nan), np.ones_like(masked)
    out = np.where(masked, np.nan, values / kappa)
    return out, masked


def standardize_unit(values, masked=None):
    """Min-max map of a column to [0, 1].

    A zero-range (constant) column cannot be standardized; it comes back
    fully masked rather than raising, so sweeps keep going.
    """
    values = np.asarray(values, dtype=float)
    masked = (
        np.zeros(values.shape, dtype=bool)
        if masked is None
        else np.asarray(masked, dtype=bool).copy()
    )
    masked = masked | ~np.isfinite(values)
    if masked.all():
        return np.full_like(values, np.nan), masked
    live = values[~masked]
    lo, hi = live.min(), live.max()
    if hi <= lo:
        return np.full_like(values, np.nan), np.ones_like(masked)
    out = np.where(masked, np.nan, (values - lo) / (hi - lo))
    return out, masked


def gain_factor(values, masked=None) -> float:
    """max/min ratio of a normalized metric column (>= 1)."""
    values = np.asarray(values, dtype=float)
    if masked is not None:
        values = values[~np.asarray(masked, dtype=bool)]
    values = values[np.isfinite(values)]
    if values.size == 0:
        return float("nan")
    lo = values.min()
    if lo <= 0:
        return float("nan")
    return float(values.max() / lo)


@dataclass(frozen=True)
class DecayCurve:
    """Monotone non-increasing fit of a standardized performance curve.

    Either a shape-constrained exponential ``c * exp(-r * s) + b`` or an
    antitonic piecewise-linear fallback, whichever fit the data better.
    """

    kind: str                    # "exp" or "isotonic"
    params: tuple = ()           # (c, r, b) for "exp"
    knots_s: np.ndarray | None = None
    knots_y: np.ndarray | None = None

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "exp":
            c, r, b = self.params
            out = c * np.exp(-r * s) + b
        else:
            out = np.interp(s, self.knots_s, self.knots_y)
        return float(out) if out.ndim == 0 else out


def _pava_decreasing(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators fit for a non-increasing sequence."""
    y = np.asarray(y, dtype=float)
    fitted = -y.copy()  # solve the increasing problem on the negated data
    weights = np.ones_like(fitted)
    blocks = [[i] for i in range(fitted.size)]
    vals = list(fitted)
    wts = list(weights)
    i = 0
    while i < len(vals) - 1:
        if vals[i] > vals[i + 1] + 1e-15:
            total_w = wts[i] + wts[i + 1]
            merged = (vals[i] * wts[i] + vals[i + 1] * wts[i + 1]) / total_w
            vals[i] = merged
            wts[i] = total_w
            blocks[i] = blocks[i] + blocks[i + 1]
            del vals[i + 1], wts[i + 1], blocks[i + 1]
            if i > 0:
                i -= 1
        else:
            i += 1
    out = np.empty_like(fitted)
    for val, idx in zip(vals, blocks):
        out[idx] = val
    return -out


def fit_decay_curve(s_values, y_values) -> DecayCurve:
    """Fit a monotone non-increasing curve evaluable at fractional density.

    Tries the exponential decay first (log-linear initialization, bounded
    least squares with c, r >= 0) and falls back to antitonic regression
    with linear interpolation when that fits the points better in RMSE.
    """
    s = np.asarray(s_values, dtype=float)
    y = np.asarray(y_values, dtype=float)
    ok = np.isfinite(s) & np.isfinite(y)
    s, y = s[ok], y[ok]
    if s.size < 3:
        raise ValueError(f"need at least 3 support points, got {s.size}")
    order = np.argsort(s)
    s, y = s[order], y[order]

    b0 = float(y.min())
    amp = max(float(y.max()) - b0, 1e-12)
    shifted = np.maximum(y - b0 + 0.05 * amp, 1e-12)
    slope, intercept = np.polyfit(s, np.log(shifted), 1)
    r0 = max(-slope, 1e-6)
    c0 = max(math.exp(intercept), 1e-12)

    def resid(p):
        c, r, b = p
        return c * np.exp(-r * s) + b - y

    exp_curve = None
    exp_rmse = np.inf
    try:
        res = least_squares(
            resid,
            x0=[c0, r0, b0],
            bounds=([0.0, 0.0, -np.inf], [np.inf, np.inf, np.inf]),
            max_nfev=2000,
        )
        exp_curve = DecayCurve(kind="exp", params=tuple(res.x))
        exp_rmse = float(np.sqrt(np.mean(res.fun**2)))
    except Exception:
        pass

    iso_y = _pava_decreasing(y)
    iso_curve = DecayCurve(kind="isotonic", knots_s=s, knots_y=iso_y)
    iso_rmse = float(np.sqrt(np.mean((iso_y - y) ** 2)))

    if exp_curve is not None and exp_rmse <= iso_rmse:
        return exp_curve
    return iso_curve


def lattice_density(hierarchy, area: float | None = None):
    """Holes-per-square-meter at each level, measured from the lattice.

    Returns a callable d -> lambda(d) built from the actual level sizes
    (robust to footprint boundary effects).
    """
    fp = hierarchy.footprint
    area = area or (fp.width * fp.height)
    sizes = np.cumsum(hierarchy.level_sizes())
    lam = {d + 1: sizes[d] / area for d in range(len(sizes))}

    def density(d: int) -> float:
        if d not in lam:
            raise ValueError(f"no level {d} in hierarchy")
        return lam[d]

    return density


def _split_state(s: float) -> tuple[int, float]:
    d = int(math.floor(s + 1e-12))
    return d, float(s - d)


def incremental_cost(s_from: float, s_to: float, area: float, density) -> float:
    """Drilling cost of moving to a denser sampling state.

    Proportional to area times the change in effective hole density
    (1 + f) * lambda(d); the proportionality constant is fixed to 1.
    """
    if s_to < s_from:
        raise ValueError("s_to must not be below s_from")
    d0, f0 = _split_state(s_from)
    d1, f1 = _split_state(s_to)
    return area * ((1.0 + f1) * density(d1) - (1.0 + f0) * density(d0))


def incremental_reward(
    s_from: float,
    s_to: float,
    worth: float,
    gain: float,
    curve: DecayCurve,
) -> float:
    """Expected payoff of the same move: worth x gain x curve drop."""
    if s_to < s_from:
        raise ValueError("s_to must not be below s_from")
    return worth * gain * (curve(s_from) - curve(s_to))


@dataclass(frozen=True)
class CostRewardModel:
    """Bundle of everything needed to price a density move in one region."""

    area: float
    density: object               # callable d -> holes per m^2
    worth: float
    gain: float
    curve: DecayCurve

    def delta_cost(self, s_from: float, s_to: float) -> float:
        return incremental_cost(s_from, s_to, self.area, self.density)

    def delta_reward(self, s_from: float, s_to: float) -> float:
        return incremental_reward(s_from, s_to, self.worth, self.gain, self.curve)
