"""Evaluation statistics for grade predictions.

Global-distortion and uncertainty measures (Jensen-Shannon divergence,
variogram fidelity, interval tightness, coefficient of variation) plus the
localized scenario measures (RMSE, SSIM, Gaussian CRPS) and the empirical
variogram estimator they build on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import pdist
from scipy.special import erf

__all__ = [
    "Histogram",
    "Variogram",
    "shared_edges",
    "jsd",
    "empirical_variogram",
    "variogram_fidelity",
    "interval_tightness",
    "coefficient_of_variation",
    "rmse",
    "ssim",
    "crps",
]

# 90% central interval half-width in standard deviations.
Z90 = 1.645
GRADE_FLOOR = 1e-6


@dataclass(frozen=True)
class Histogram:
    """Normalized histogram over shared bin edges."""

    edges: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        mass = np.asarray(self.mass, dtype=float)
        if edges.ndim != 1 or mass.ndim != 1 or edges.size != mass.size + 1:
            raise ValueError("need len(edges) == len(mass) + 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if mass.size and (mass.min() < 0 or abs(mass.sum() - 1.0) > 1e-12):
            raise ValueError("mass must be non-negative and sum to 1")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_samples(cls, values, edges) -> "Histogram":
        values = np.asarray(values, dtype=float).ravel()
        counts, _ = np.histogram(values, bins=np.asarray(edges, dtype=float))
        total = counts.sum()
        if total == 0:
            raise ValueError("no samples fall inside the bin range")
        return cls(edges=np.asarray(edges, dtype=float), mass=counts / total)


def shared_edges(a, b, n_bins: int = 32) -> np.ndarray:
    """Equal-width bin edges spanning the union range of two samples."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi <= lo:
        hi = lo + 1e-9
    return np.linspace(lo, hi, n_bins + 1)


def jsd(p: Histogram, q: Histogram) -> float:
    """Jensen-Shannon divergence in nats (symmetric, bounded by ln 2).

    Zero-mass bins contribute nothing by the 0*log(0) = 0 convention.
    """
    if p.edges.shape != q.edges.shape or not np.array_equal(p.edges, q.edges):
        raise ValueError("histograms must share identical bin edges")
    m = 0.5 * (p.mass + q.mass)

    def _kl(a, ref):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / ref[nz])))

    return 0.5 * _kl(p.mass, m) + 0.5 * _kl(q.mass, m)


@dataclass(frozen=True)
class Variogram:
    """Empirical semivariance per distance bin."""

    lags: np.ndarray     # bin centers, meters
    gamma: np.ndarray    # semivariance, grade^2
    counts: np.ndarray   # pair counts per bin

    def reliable(self, min_pairs: int = 30) -> np.ndarray:
        return self.counts >= min_pairs


def _decimate(n: int, max_points: int) -> np.ndarray:
    if n <= max_points:
        return np.arange(n)
    stride = int(math.ceil(n / max_points))
    return np.arange(0, n, stride)


def empirical_variogram(
    locations,
    values,
    bin_edges,
    max_points: int = 4000,
) -> Variogram:
    """Pairwise semivariance gamma(lag) = sum (v_i - v_j)^2 / (2 N_lag).

    Large inputs are decimated with a deterministic stride before the
    all-pairs accumulation. Bins with no pairs report gamma = 0 and
    count = 0 (callers treat them as unreliable).
    """
    locations = np.asarray(locations, dtype=float).reshape(-1, 3)
    values = np.asarray(values, dtype=float).ravel()
    if locations.shape[0] != values.size:
        raise ValueError("locations and values lengths differ")
    edges = np.asarray(bin_edges, dtype=float)
    keep = _decimate(locations.shape[0], max_points)
    locations = locations[keep]
    values = values[keep]
    d = pdist(locations)
    dv = pdist(values[:, None], metric="sqeuclidean")
    which = np.digitize(d, edges) - 1
    nb = edges.size - 1
    ok = (which >= 0) & (which < nb)
    counts = np.bincount(which[ok], minlength=nb)
    sums = np.bincount(which[ok], weights=dv[ok], minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, 0.5 * sums / np.maximum(counts, 1), 0.0)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return Variogram(lags=centers, gamma=gamma, counts=counts)


def default_lag_bins(locations, n_bins: int = 12) -> np.ndarray:
    """Lag bins from one cell pitch to half the region extent."""
    locations = np.asarray(locations, dtype=float).reshape(-1, 3)
    spans = locations.max(axis=0) - locations.min(axis=0)
    extent = float(np.max(spans))
    pitch = None
    for axis in range(3):
        u = np.unique(locations[:, axis])
        if u.size > 1:
            gap = float(np.diff(u).min())
            pitch = gap if pitch is None else min(pitch, gap)
    if pitch is None or pitch <= 0:
        pitch = extent / 100.0
    hi = max(extent / 2.0, pitch * (n_bins + 1))
    return np.linspace(pitch, hi, n_bins + 1)


def variogram_fidelity(
    pred_values,
    true_values,
    locations,
    n_bins: int = 12,
    min_pairs: int = 30,
    max_points: int = 4000,
) -> float:
    """Median ratio of predicted to true semivariance over reliable lags.

    1 means the prediction preserves the spatial texture; oversmoothed
    predictions fall below 1. Higher is better.
    """
    edges = default_lag_bins(locations, n_bins=n_bins)
    vp = empirical_variogram(locations, pred_values, edges, max_points=max_points)
    vt = empirical_variogram(locations, true_values, edges, max_points=max_points)
    ok = vp.reliable(min_pairs) & vt.reliable(min_pairs) & (vt.gamma > 0)
    if not ok.any():
        raise ValueError("no reliable common variogram lag")
    return float(np.median(vp.gamma[ok] / vt.gamma[ok]))


def interval_tightness(sd, truth) -> float:
    """Mean 90% interval width normalized by the true interquartile range.

    Lower is better; 0 means the model claims certainty everywhere.
    """
    sd = np.asarray(sd, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    q75, q25 = np.percentile(truth, [75, 25])
    iqr = q75 - q25
    if iqr <= 0:
        raise ValueError("degenerate truth: interquartile range is zero")
    return float(np.mean(2.0 * Z90 * sd) / iqr)


def coefficient_of_variation(mean, sd, grade_floor: float = GRADE_FLOOR) -> float:
    """Mean predictive sd over predictive mean; ground-truth-free."""
    mean = np.asarray(mean, dtype=float).ravel()
    sd = np.asarray(sd, dtype=float).ravel()
    return float(np.mean(sd / np.maximum(mean, grade_floor)))


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def _ssim_2d(x, y, data_range, sigma, win) -> float:
    truncate = ((win - 1) / 2.0) / sigma
    filt = lambda a: ndimage.gaussian_filter(  # noqa: E731
        a, sigma=sigma, truncate=truncate, mode="reflect"
    )
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mx = filt(x)
    my = filt(y)
    mxx = filt(x * x)
    myy = filt(y * y)
    mxy = filt(x * y)
    vx = mxx - mx * mx
    vy = myy - my * my
    cxy = mxy - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def ssim(pred, truth, data_range: float | None = None,
         sigma: float = 1.5, win: int = 11) -> float:
    """Structural similarity with a Gaussian window.

    3D fields are scored per z-slice and averaged. ``data_range`` defaults
    to the true grade range.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth shapes differ")
    if data_range is None:
        data_range = float(truth.max() - truth.min())
    if data_range <= 0:
        data_range = 1.0
    if pred.ndim == 2:
        return _ssim_2d(pred, truth, data_range, sigma, win)
    if pred.ndim != 3:
        raise ValueError("ssim expects a 2D or 3D field")
    return float(
        np.mean(
            [
                _ssim_2d(pred[:, :, k], truth[:, :, k], data_range, sigma, win)
                for k in range(pred.shape[2])
            ]
        )
    )


def crps(mean, sd, truth) -> float:
    """Mean continuous ranked probability score of Gaussian forecasts.

    Uses the closed form sd * [z(2*Phi(z) - 1) + 2*phi(z) - 1/sqrt(pi)];
    zero-sd points degrade to the absolute error (point-mass limit).
    """
    mean = np.asarray(mean, dtype=float).ravel()
    sd = np.asarray(sd, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    err = truth - mean
    out = np.abs(err)
    pos = sd > 0
    if pos.any():
        z = err[pos] / sd[pos]
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        cdf = 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
        out_pos = sd[pos] * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / math.sqrt(math.pi))
        out = out.copy()
        out[pos] = out_pos
    return float(out.mean())
