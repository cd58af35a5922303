"""Gaussian Process regression with an anisotropic Matern 5/2 kernel.

Hyperparameters are learned by minimizing the negative log marginal
likelihood (analytic gradients, L-BFGS-B in log space, multi-start);
prediction returns the posterior mean and predictive standard deviation
(noise included, so far-field variance reverts to signal + noise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import minimize

__all__ = [
    "Hyperparameters",
    "PosteriorField",
    "IllConditionedError",
    "FitError",
    "kernel",
    "nlml",
    "fit",
    "posterior",
    "StreamingPosterior",
]

_SQRT5 = math.sqrt(5.0)
# Relative noise floor applied during fitting: sn2 >= NOISE_FLOOR_REL * var(y).
NOISE_FLOOR_REL = 1e-6
_JITTER_START_REL = 1e-10
_JITTER_MAX_REL = 1e-4


class IllConditionedError(np.linalg.LinAlgError):
    """Cholesky failed even after jitter escalation."""

    def __init__(self, jitter: float):
        super().__init__(
            f"covariance matrix not positive definite (final jitter {jitter:g})"
        )
        self.jitter = jitter


class FitError(RuntimeError):
    """Every optimizer restart failed."""


@dataclass(frozen=True)
class Hyperparameters:
    """Matern 5/2 kernel parameters plus a constant mean."""

    length_scales: tuple[float, float, float]
    signal_variance: float
    noise_variance: float
    mean_value: float = 0.0

    def __post_init__(self):
        ls = tuple(float(v) for v in self.length_scales)
        if len(ls) != 3 or any(v <= 0 for v in ls):
            raise ValueError("length_scales must be three positive values")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")
        object.__setattr__(self, "length_scales", ls)

    def to_dict(self) -> dict:
        return {
            "length_scales": list(self.length_scales),
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
            "mean_value": self.mean_value,
        }


@dataclass(frozen=True)
class PosteriorField:
    """Posterior summary at a set of test locations."""

    locations: np.ndarray  # (m, 3)
    mean: np.ndarray       # (m,)
    sd: np.ndarray         # (m,) predictive sd, noise included
    cov: np.ndarray | None = None  # (m, m) when requested

    def __post_init__(self):
        if len(self.mean) != len(self.sd) or len(self.mean) != len(self.locations):
            raise ValueError("locations, mean and sd lengths differ")
        if self.sd.size and self.sd.min() < 0:
            raise ValueError("negative posterior sd")


def _scaled_sq_axis(A: np.ndarray, B: np.ndarray, ls) -> list[np.ndarray]:
    """Per-axis squared scaled separations ((a_i - b_i) / l_i)^2."""
    return [
        ((A[:, i, None] - B[None, :, i]) / ls[i]) ** 2 for i in range(3)
    ]


def _matern52(r: np.ndarray, sf2: float) -> np.ndarray:
    return sf2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-_SQRT5 * r)


def _cov(A: np.ndarray, B: np.ndarray, hp: Hyperparameters) -> np.ndarray:
    """Dense cross-covariance K(A, B); GEMM-based scaled distances."""
    ls = np.asarray(hp.length_scales)
    As = A / ls
    Bs = B / ls
    sq = (
        (As * As).sum(axis=1)[:, None]
        + (Bs * Bs).sum(axis=1)[None, :]
        - 2.0 * As @ Bs.T
    )
    np.maximum(sq, 0.0, out=sq)
    return _matern52(np.sqrt(sq), hp.signal_variance)


def kernel(x1, x2, hp: Hyperparameters) -> float:
    """Matern 5/2 covariance between two points under anisotropic scaling."""
    x1 = np.asarray(x1, dtype=float).reshape(3)
    x2 = np.asarray(x2, dtype=float).reshape(3)
    r = math.sqrt(
        sum(((x1[i] - x2[i]) / hp.length_scales[i]) ** 2 for i in range(3))
    )
    return float(_matern52(np.asarray(r), hp.signal_variance))


def _chol_jitter(K: np.ndarray, sf2: float):
    """Lower Cholesky factor with escalating diagonal jitter.

    Tries exact first, then jitter from 1e-10*sf2 up to 1e-4*sf2 in decade
    steps. Returns (L, jitter_used); raises IllConditionedError beyond the
    cap.
    """
    jitter = 0.0
    while True:
        try:
            Kj = K if jitter == 0.0 else K + jitter * np.eye(K.shape[0])
            return cholesky(Kj, lower=True), jitter
        except np.linalg.LinAlgError:
            pass
        jitter = _JITTER_START_REL * sf2 if jitter == 0.0 else jitter * 10.0
        if jitter > _JITTER_MAX_REL * sf2 * 1.0000001:
            raise IllConditionedError(jitter / 10.0)


def nlml(hp: Hyperparameters, train) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood and its gradient.

    The gradient is with respect to the log parameters, ordered
    ``[log lx, log ly, log lz, log sf2, log sn2]``. Targets are centered by
    ``hp.mean_value`` before evaluation.
    """
    X = np.asarray(train.X, dtype=float)
    y = np.asarray(train.y, dtype=float) - hp.mean_value
    n = X.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    ls = hp.length_scales
    sf2 = hp.signal_variance
    sn2 = hp.noise_variance

    axis_sq = _scaled_sq_axis(X, X, ls)
    r = np.sqrt(axis_sq[0] + axis_sq[1] + axis_sq[2])
    e = np.exp(-_SQRT5 * r)
    K = sf2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r * r) * e
    Ky = K + sn2 * np.eye(n)
    L, _ = _chol_jitter(Ky, sf2)

    alpha = solve_triangular(L, y, lower=True)
    alpha = solve_triangular(L.T, alpha, lower=False)
    value = (
        0.5 * float(y @ alpha)
        + float(np.log(np.diag(L)).sum())
        + 0.5 * n * math.log(2.0 * math.pi)
    )

    Kinv = solve_triangular(L, np.eye(n), lower=True)
    Kinv = solve_triangular(L.T, Kinv, lower=False)
    W = Kinv - np.outer(alpha, alpha)

    grad = np.empty(5)
    dk_common = sf2 * (5.0 / 3.0) * (1.0 + _SQRT5 * r) * e
    for i in range(3):
        grad[i] = 0.5 * float((W * (dk_common * axis_sq[i])).sum())
    grad[3] = 0.5 * float((W * K).sum())
    grad[4] = 0.5 * sn2 * float(np.trace(W))
    return value, grad


def _axis_scale_hints(X: np.ndarray):
    """Per-axis (smallest positive gap, extent) used for initialization."""
    lows, highs = [], []
    for i in range(3):
        u = np.unique(X[:, i])
        ext = float(u[-1] - u[0]) if u.size > 1 else 0.0
        if u.size > 1:
            gap = float(np.diff(u).min())
        else:
            gap = 0.0
        if ext <= 0:
            lows.append(1.0)
            highs.append(1.0)
        else:
            lows.append(max(gap, ext / 1000.0))
            highs.append(max(ext / 2.0, lows[-1] * 1.001))
    return np.array(lows), np.array(highs)


def fit(
    train,
    restarts: int = 5,
    seed: int = 0,
    maxiter: int = 60,
    warm_start: Hyperparameters | None = None,
) -> Hyperparameters:
    """Learn hyperparameters by multi-start NLML minimization.

    The first start uses ``warm_start`` when given, otherwise a mid-range
    heuristic; remaining starts draw length-scales log-uniformly between
    the smallest data gap and half the data extent. Deterministic for a
    fixed seed.
    """
    n = len(train.y)
    if n < 4:
        raise ValueError(f"need at least 4 observations to fit, got {n}")
    y = np.asarray(train.y, dtype=float)
    mean_value = float(y.mean())
    var_y = float(y.var())
    var_ref = max(var_y, 1e-12)
    noise_floor = NOISE_FLOOR_REL * var_ref
    lows, highs = _axis_scale_hints(np.asarray(train.X, dtype=float))

    log_bounds = (
        [(math.log(lows[i] / 10.0), math.log(highs[i] * 20.0)) for i in range(3)]
        + [(math.log(1e-8 * var_ref), math.log(1e3 * var_ref))]
        + [(math.log(noise_floor), math.log(10.0 * var_ref))]
    )

    def objective(logp):
        hp = Hyperparameters(
            length_scales=tuple(np.exp(logp[:3])),
            signal_variance=float(np.exp(logp[3])),
            noise_variance=float(np.exp(logp[4])),
            mean_value=mean_value,
        )
        try:
            return nlml(hp, train)
        except IllConditionedError:
            return 1e25, np.zeros(5)

    rng = np.random.default_rng(seed)
    starts = []
    if warm_start is not None:
        start = np.log(
            np.array(
                [
                    *warm_start.length_scales,
                    warm_start.signal_variance,
                    max(warm_start.noise_variance, noise_floor),
                ]
            )
        )
        starts.append(start)
    else:
        starts.append(
            np.log(
                np.array(
                    [
                        *(np.sqrt(lows * highs)),
                        var_ref,
                        max(1e-2 * var_ref, noise_floor),
                    ]
                )
            )
        )
    while len(starts) < restarts:
        ls = np.exp(rng.uniform(np.log(lows), np.log(highs)))
        sf2 = var_ref * np.exp(rng.uniform(math.log(0.1), math.log(10.0)))
        sn2 = np.exp(rng.uniform(math.log(noise_floor), math.log(max(0.1 * var_ref, noise_floor * 1.001))))
        starts.append(np.log(np.array([*ls, sf2, sn2])))

    best_val = np.inf
    best_x = None
    for x0 in starts:
        x0 = np.clip(x0, [b[0] for b in log_bounds], [b[1] for b in log_bounds])
        res = minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=log_bounds,
            options={"maxiter": maxiter},
        )
        if res.fun < best_val and res.fun < 1e24:
            best_val = float(res.fun)
            best_x = res.x
    if best_x is None:
        raise FitError("all optimizer restarts ended ill-conditioned")
    return Hyperparameters(
        length_scales=tuple(np.exp(best_x[:3])),
        signal_variance=float(np.exp(best_x[3])),
        noise_variance=float(np.exp(best_x[4])),
        mean_value=mean_value,
    )


def posterior(
    train,
    hp: Hyperparameters,
    x_star,
    want_cov: bool = False,
    chunk: int = 8192,
) -> PosteriorField:
    """Posterior mean and predictive sd at the test locations.

    The predictive variance includes the noise term, so it reverts to
    signal + noise variance far from data. ``want_cov`` additionally
    returns the full predictive covariance (memory is quadratic in the
    number of test points; intended for candidate-set computations).
    """
    Xs = np.asarray(x_star, dtype=float).reshape(-1, 3)
    if Xs.shape[0] == 0:
        raise ValueError("empty test set")
    X = np.asarray(train.X, dtype=float)
    y = np.asarray(train.y, dtype=float) - hp.mean_value
    n = X.shape[0]
    m = Xs.shape[0]
    sf2 = hp.signal_variance
    sn2 = hp.noise_variance

    if n == 0:
        sd = np.full(m, math.sqrt(sf2 + sn2))
        mean = np.full(m, hp.mean_value)
        cov = _cov(Xs, Xs, hp) + sn2 * np.eye(m) if want_cov else None
        return PosteriorField(locations=Xs, mean=mean, sd=sd, cov=cov)

    Ky = _cov(X, X, hp) + sn2 * np.eye(n)
    L, _ = _chol_jitter(Ky, sf2)
    wres = solve_triangular(L, y, lower=True)

    mean = np.empty(m)
    var = np.empty(m)
    V_full = np.empty((n, m)) if want_cov else None
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        Kst = _cov(X, Xs[lo:hi], hp)
        v = solve_triangular(L, Kst, lower=True)
        mean[lo:hi] = hp.mean_value + v.T @ wres
        var[lo:hi] = sf2 + sn2 - np.einsum("ij,ij->j", v, v)
        if want_cov:
            V_full[:, lo:hi] = v
    np.maximum(var, 0.0, out=var)
    cov = None
    if want_cov:
        cov = _cov(Xs, Xs, hp) + sn2 * np.eye(m) - V_full.T @ V_full
    return PosteriorField(locations=Xs, mean=mean, sd=np.sqrt(var), cov=cov)


class StreamingPosterior:
    """Posterior over a fixed test set, extended one column block at a time.

    Maintains the Cholesky factor of the training covariance and the
    whitened cross-covariance so each appended drill-hole column costs one
    block update instead of a full refit. Identical (to floating-point
    roundoff) to rebuilding with :func:`posterior`.
    """

    def __init__(self, hp: Hyperparameters, test_locations, capacity: int = 256):
        self.hp = hp
        self.T = np.asarray(test_locations, dtype=float).reshape(-1, 3)
        m = self.T.shape[0]
        self._cap = capacity
        self._n = 0
        self._L = np.zeros((capacity, capacity))
        self._V = np.zeros((capacity, m))
        self._wres = np.zeros(capacity)
        self._X = np.zeros((capacity, 3))
        self._y = np.zeros(capacity)
        self.mean = np.full(m, hp.mean_value)
        self.var = np.full(m, hp.signal_variance + hp.noise_variance)
        self._jitter = _JITTER_START_REL * hp.signal_variance

    @property
    def n_obs(self) -> int:
        return self._n

    @property
    def train_X(self) -> np.ndarray:
        return self._X[: self._n]

    @property
    def train_y(self) -> np.ndarray:
        return self._y[: self._n]

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.var, 0.0))

    def _grow(self, need: int):
        if need <= self._cap:
            return
        new_cap = self._cap
        while new_cap < need:
            new_cap *= 2
        for name in ("_L", "_V", "_X"):
            old = getattr(self, name)
            shape = (new_cap,) + old.shape[1:]
            buf = np.zeros(shape)
            buf[: self._n] = old[: self._n]
            if name == "_L":
                buf = np.zeros((new_cap, new_cap))
                buf[: self._n, : self._n] = old[: self._n, : self._n]
            setattr(self, name, buf)
        for name in ("_wres", "_y"):
            old = getattr(self, name)
            buf = np.zeros(new_cap)
            buf[: self._n] = old[: self._n]
            setattr(self, name, buf)
        self._cap = new_cap

    def append(self, Xc, yc) -> None:
        """Add a block of observations and refresh mean/var in place."""
        Xc = np.asarray(Xc, dtype=float).reshape(-1, 3)
        yc = np.asarray(yc, dtype=float).reshape(-1)
        c = Xc.shape[0]
        if c == 0:
            return
        hp = self.hp
        n = self._n
        self._grow(n + c)
        Scc = _cov(Xc, Xc, hp) + (hp.noise_variance + self._jitter) * np.eye(c)
        if n == 0:
            Ls, _ = _chol_jitter(Scc, hp.signal_variance)
            B = np.zeros((0, c))
        else:
            Kxc = _cov(self._X[:n], Xc, hp)
            B = solve_triangular(self._L[:n, :n], Kxc, lower=True)
            Ls, _ = _chol_jitter(Scc - B.T @ B, hp.signal_variance)
        Kct = _cov(Xc, self.T, hp)
        if n:
            W = solve_triangular(Ls, Kct - B.T @ self._V[:n], lower=True)
            resid = yc - hp.mean_value - B.T @ self._wres[:n]
        else:
            W = solve_triangular(Ls, Kct, lower=True)
            resid = yc - hp.mean_value
        w_new = solve_triangular(Ls, resid, lower=True)

        self._L[n : n + c, :n] = B.T
        self._L[n : n + c, n : n + c] = Ls
        self._V[n : n + c] = W
        self._wres[n : n + c] = w_new
        self._X[n : n + c] = Xc
        self._y[n : n + c] = yc
        self._n = n + c

        self.mean += W.T @ w_new
        self.var -= np.einsum("ij,ij->j", W, W)
        np.maximum(self.var, 0.0, out=self.var)

    def variance_reduction(self, Xc, test_subset=None) -> np.ndarray:
        """Per-test-point predictive variance drop if ``Xc`` were drilled.

        Entirely observation-free: depends only on geometry and the kernel.
        ``test_subset`` restricts the output to an index subset of the test
        locations.
        """
        Xc = np.asarray(Xc, dtype=float).reshape(-1, 3)
        c = Xc.shape[0]
        hp = self.hp
        n = self._n
        Scc = _cov(Xc, Xc, hp) + (hp.noise_variance + self._jitter) * np.eye(c)
        T = self.T if test_subset is None else self.T[test_subset]
        Kct = _cov(Xc, T, hp)
        if n:
            Kxc = _cov(self._X[:n], Xc, hp)
            B = solve_triangular(self._L[:n, :n], Kxc, lower=True)
            Ls, _ = _chol_jitter(Scc - B.T @ B, hp.signal_variance)
            Vsub = self._V[:n] if test_subset is None else self._V[:n, test_subset]
            W = solve_triangular(Ls, Kct - B.T @ Vsub, lower=True)
        else:
            Ls, _ = _chol_jitter(Scc, hp.signal_variance)
            W = solve_triangular(Ls, Kct, lower=True)
        return np.einsum("ij,ij->j", W, W)
