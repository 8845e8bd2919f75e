"""Gaussian-process regression with box-bounded likelihood fitting and EI search.

Kernel parameters are optimized in natural-log coordinates: one log-lengthscale
per input dimension, then log signal variance, then log noise variance. The
target is standardized before fitting, so the variance boxes are scale-free.
"""

from __future__ import annotations

import math
import threading
from collections.abc import Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import linalg, optimize
from scipy.special import ndtr

from mulch.priors import LengthscaleBox, PriorEnsemble, sample_prior
from mulch.space import Configuration, SearchSpace, decode, encode_unchecked, unit_points

SIGNAL_BOX = (math.log(0.05), math.log(20.0))
NOISE_BOX = (math.log(1e-8), math.log(1e-1))
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
SQRT5 = math.sqrt(5.0)
GOLDEN_ITERS = 20
_INV_PHI = (math.sqrt(5.0) - 1) / 2


class SingularCovarianceError(np.linalg.LinAlgError):
    """Covariance matrix is not positive definite even after jitter."""


# -- fit instrumentation ------------------------------------------------------
_local = threading.local()


@contextmanager
def count_fits():
    """Count ``fit`` calls made by the current thread inside the block."""
    counter = [0]
    prev = getattr(_local, "counter", None)
    _local.counter = counter
    try:
        yield counter
    finally:
        _local.counter = prev


@dataclass(frozen=True)
class KernelParams:
    lengthscales: tuple[float, ...]
    signal_variance: float = 1.0
    noise_variance: float = 1e-6

    def __post_init__(self) -> None:
        ls = tuple(float(x) for x in np.atleast_1d(self.lengthscales))
        if not ls or any(not x > 0 for x in ls):
            raise ValueError("lengthscales must be positive")
        if not self.signal_variance > 0:
            raise ValueError("signal variance must be positive")
        if not self.noise_variance >= 0:
            raise ValueError("noise variance must be nonnegative")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def d(self) -> int:
        return len(self.lengthscales)

    def to_log_params(self) -> np.ndarray:
        return np.log(np.r_[self.lengthscales, self.signal_variance, max(self.noise_variance, 1e-300)])

    @classmethod
    def from_log_params(cls, log_params: np.ndarray) -> "KernelParams":
        log_params = np.asarray(log_params, dtype=float)
        return cls(tuple(np.exp(log_params[:-2])), float(np.exp(log_params[-2])), float(np.exp(log_params[-1])))

    def to_dict(self) -> dict:
        return {"lengthscales": list(self.lengthscales), "signal_variance": self.signal_variance,
                "noise_variance": self.noise_variance}

    @classmethod
    def from_dict(cls, d) -> "KernelParams":
        return cls(tuple(d["lengthscales"]), d["signal_variance"], d["noise_variance"])


def _scaled_dist(A: np.ndarray, B: np.ndarray, ls: np.ndarray) -> np.ndarray:
    diff = (A[:, None, :] - B[None, :, :]) / ls
    return np.sqrt(np.sum(diff * diff, axis=-1))


def matern52(A: np.ndarray, B: np.ndarray, kernel: KernelParams) -> np.ndarray:
    r = _scaled_dist(np.atleast_2d(A), np.atleast_2d(B), np.asarray(kernel.lengthscales))
    s = SQRT5 * r
    return kernel.signal_variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def _standardize(y: np.ndarray) -> tuple[np.ndarray, float, float]:
    mean = float(y.mean())
    scale = float(y.std()) if y.size > 1 else 1.0
    if not scale > 1e-12:
        scale = 1.0
    return (y - mean) / scale, mean, scale


def _cholesky(K: np.ndarray, noise: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K + noise*I``, with jitter only for noisy models."""
    n = K.shape[0]
    if noise == 0.0:
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            raise SingularCovarianceError("noise-free covariance is singular") from None
        diag = np.diag(L)
        if diag.min() < 1e-7 * diag.max():
            raise SingularCovarianceError("noise-free covariance is numerically singular")
        return L, 0.0
    base = K + noise * np.eye(n)
    for jitter in JITTERS:
        try:
            return np.linalg.cholesky(base + jitter * np.eye(n) if jitter else base), jitter
        except np.linalg.LinAlgError:
            continue
    raise SingularCovarianceError(f"covariance not positive definite with jitter up to {JITTERS[-1]}")


def _lml_grad(log_params: np.ndarray, X: np.ndarray, ys: np.ndarray) -> tuple[float, np.ndarray]:
    """Log marginal likelihood of standardized targets and its gradient in log coordinates."""
    n, d = X.shape
    ls = np.exp(log_params[:d])
    sf, sn = math.exp(log_params[d]), math.exp(log_params[d + 1])
    diff2 = ((X[:, None, :] - X[None, :, :]) / ls) ** 2
    s = SQRT5 * np.sqrt(diff2.sum(-1))
    e = np.exp(-s)
    K = sf * (1.0 + s + s * s / 3.0) * e
    L, jitter = _cholesky(K, sn)
    alpha = linalg.cho_solve((L, True), ys)
    lml = -0.5 * ys @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi)
    Kinv = linalg.cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    grad = np.empty(d + 2)
    common = sf * (5.0 / 3.0) * (1.0 + s) * e
    for j in range(d):
        grad[j] = 0.5 * np.sum(W * common * diff2[:, :, j])
    grad[d] = 0.5 * np.sum(W * K)
    grad[d + 1] = 0.5 * sn * np.trace(W)
    return float(lml), grad


def log_marginal_likelihood(X, y, kernel: KernelParams) -> float:
    """Exact Gaussian log marginal likelihood of the standardized targets."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ys, _, _ = _standardize(np.asarray(y, dtype=float))
    if X.shape[1] != kernel.d:
        raise ValueError("kernel dimension does not match inputs")
    return _lml_grad(kernel.to_log_params(), X, ys)[0] if kernel.noise_variance > 0 else _lml_noise_free(X, ys, kernel)


def _lml_noise_free(X: np.ndarray, ys: np.ndarray, kernel: KernelParams) -> float:
    L, _ = _cholesky(matern52(X, X, kernel), 0.0)
    alpha = linalg.cho_solve((L, True), ys)
    return float(-0.5 * ys @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(ys) * math.log(2 * math.pi))


@dataclass(frozen=True, eq=False)
class GpModel:
    X: np.ndarray
    y: np.ndarray
    kernel: KernelParams
    y_mean: float
    y_scale: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @classmethod
    def build(cls, X, y, kernel: KernelParams) -> "GpModel":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.shape[0] or X.shape[0] < 1:
            raise ValueError("need n >= 1 aligned rows")
        if not np.all(np.isfinite(y)):
            raise ValueError("targets must be finite")
        ys, mean, scale = _standardize(y)
        L, jitter = _cholesky(matern52(X, X, kernel), kernel.noise_variance)
        alpha = linalg.cho_solve((L, True), ys)
        return cls(X, y, kernel, mean, scale, L, alpha, jitter)

    def predict_many(self, Xc) -> tuple[np.ndarray, np.ndarray]:
        Xc = np.atleast_2d(np.asarray(Xc, dtype=float))
        if Xc.shape[1] != self.d:
            raise ValueError(f"expected {self.d}-dimensional inputs, got {Xc.shape[1]}")
        Ks = matern52(Xc, self.X, self.kernel)
        mean = Ks @ self.alpha
        v = linalg.solve_triangular(self.chol, Ks.T, lower=True)
        var = self.kernel.signal_variance - np.sum(v * v, axis=0)
        if np.any(var < -1e-10):
            raise FloatingPointError(f"negative predictive variance {var.min():.3e}")
        var = np.maximum(var, 0.0)
        return self.y_mean + self.y_scale * mean, self.y_scale**2 * var

    def to_dict(self) -> dict:
        return {"X": self.X.tolist(), "y": self.y.tolist(), "kernel": self.kernel.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "GpModel":
        return cls.build(np.array(d["X"], dtype=float), np.array(d["y"], dtype=float),
                         KernelParams.from_dict(d["kernel"]))


def predict(gp: GpModel, x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != gp.d:
        raise ValueError(f"expected a {gp.d}-vector, got {x.shape[0]}")
    mean, var = gp.predict_many(x[None, :])
    return float(mean[0]), float(var[0])


def _bounds(box: LengthscaleBox) -> list[tuple[float, float]]:
    return list(zip(box.lower, box.upper)) + [SIGNAL_BOX, NOISE_BOX]


def fit(X, y, box: LengthscaleBox | None = None, n_starts: int = 8, seed: int = 0) -> GpModel:
    """Maximize the log marginal likelihood inside the box (MAP under a uniform box prior)."""
    counter = getattr(_local, "counter", None)
    if counter is not None:
        counter[0] += 1
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if n != y.shape[0] or n < 1:
        raise ValueError("need n >= 1 aligned rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    box = box or LengthscaleBox.default(d)
    if box.d != d:
        raise ValueError(f"lengthscale box has {box.d} dims, inputs have {d}")
    bounds = _bounds(box)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    mid = (lo + hi) / 2
    if n == 1:
        log_params = mid.copy()
        log_params[d] = 0.0  # unit signal variance in standardized units
        return GpModel.build(X, y, KernelParams.from_log_params(log_params))

    ys, _, _ = _standardize(y)
    starts = [mid]
    if n_starts > 1:
        u = unit_points(len(lo), n_starts - 1, "quasi", seed)
        starts += list(lo + u * (hi - lo))
    fixed = lo == hi

    def neg(log_params):
        log_params = np.where(fixed, lo, log_params)
        try:
            val, grad = _lml_grad(log_params, X, ys)
        except SingularCovarianceError:
            return 1e25, np.zeros_like(log_params)
        grad = np.where(fixed, 0.0, grad)
        return -val, -grad

    best_params, best_val = None, np.inf
    for start in starts:
        res = optimize.minimize(neg, start, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 200})
        log_params = np.where(fixed, lo, np.clip(res.x, lo, hi))
        val = neg(log_params)[0]
        if val < best_val:
            best_params, best_val = log_params, val
    if best_val >= 1e25:
        raise SingularCovarianceError("covariance singular at every start")
    return GpModel.build(X, y, KernelParams.from_log_params(best_params))


# -- acquisition --------------------------------------------------------------


def _ei(mu: np.ndarray, sigma: np.ndarray, best_y: float, direction: str) -> np.ndarray:
    if direction == "max":
        imp = mu - best_y
    elif direction == "min":
        imp = best_y - mu
    else:
        raise ValueError(f"direction must be 'max' or 'min', got {direction!r}")
    out = np.maximum(imp, 0.0)
    ok = sigma >= 1e-12
    if np.any(ok):
        s = sigma[ok]
        z = imp[ok] / s
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        out[ok] = np.maximum(s * (z * ndtr(z) + pdf), 0.0)
    return out


def expected_improvement_from(mu, sigma, best_y: float, direction: str = "max") -> np.ndarray:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    return _ei(mu, sigma, best_y, direction)


def expected_improvement(gp: GpModel, x, best_y: float, direction: str = "max") -> float:
    mean, var = predict(gp, x)
    return float(_ei(np.array([mean]), np.array([math.sqrt(var)]), best_y, direction)[0])


def ei_many(gp: GpModel, Xc, best_y: float, direction: str = "max") -> np.ndarray:
    mean, var = gp.predict_many(Xc)
    return _ei(mean, np.sqrt(var), best_y, direction)


def _snap(space: SearchSpace, x: np.ndarray) -> np.ndarray:
    """Move a unit vector onto the nearest encodable configuration."""
    return encode_unchecked(space, decode(space, x))


def _candidates(space: SearchSpace, n: int, seed: int, source: Any) -> np.ndarray:
    if source is None or (isinstance(source, str) and source == "uniform"):
        u = unit_points(space.d, n, "quasi", seed)
        return np.array([_snap(space, row) for row in u])
    if isinstance(source, PriorEnsemble):
        configs = sample_prior(source, n, seed, space=space)
        return np.array([encode_unchecked(space, c) for c in configs])
    raise ValueError(f"unknown candidate source {source!r}")


def _refine(gp: GpModel, space: SearchSpace, x0: np.ndarray, score0: float, best_y: float,
            direction: str) -> tuple[np.ndarray, float]:
    """One coordinate sweep of golden-section search on EI."""
    x, score = x0.copy(), score0

    def f(j: int, t: float) -> tuple[np.ndarray, float]:
        cand = x.copy()
        cand[j] = t
        cand = _snap(space, cand)
        return cand, float(ei_many(gp, cand[None, :], best_y, direction)[0])

    for j in range(space.d):
        a, b = 0.0, 1.0
        c = b - _INV_PHI * (b - a)
        e = a + _INV_PHI * (b - a)
        pc, fc = f(j, c)
        pe, fe = f(j, e)
        best_local = max(((fc, pc), (fe, pe)), key=lambda t: t[0])
        for _ in range(GOLDEN_ITERS):
            if fc >= fe:
                b, e, fe, pe = e, c, fc, pc
                c = b - _INV_PHI * (b - a)
                pc, fc = f(j, c)
                cand = (fc, pc)
            else:
                a, c, fc, pc = c, e, fe, pe
                e = a + _INV_PHI * (b - a)
                pe, fe = f(j, e)
                cand = (fe, pe)
            if cand[0] > best_local[0]:
                best_local = cand
        if best_local[0] > score:
            score, x = best_local[0], best_local[1]
    return x, score


def propose(gp: GpModel, space: SearchSpace, best_y: float, n_candidates: int = 256, seed: int = 0,
            candidate_source: Any = "uniform", k: int = 1, refine: bool = True,
            direction: str = "max") -> list[tuple[Configuration, float]]:
    """Top-``k`` configurations by EI: the refined argmax first, then the best other candidates."""
    if n_candidates < 1 or k < 1:
        raise ValueError("n_candidates and k must be >= 1")
    if gp.d != space.d:
        raise ValueError("model and space dimensions differ")
    cands = _candidates(space, n_candidates, seed, candidate_source)
    scores = ei_many(gp, cands, best_y, direction)
    order = np.argsort(-scores, kind="stable")
    top = int(order[0])
    x, score = cands[top], float(scores[top])
    if refine:
        x, score = _refine(gp, space, x, score, best_y, direction)
    out = [(decode(space, x), score)]
    seen = {out[0][0]}
    for i in order[1:]:
        if len(out) >= k:
            break
        cfg = decode(space, cands[i])
        if cfg not in seen:
            seen.add(cfg)
            out.append((cfg, float(scores[i])))
    return out


def suggest(gp: GpModel, space: SearchSpace, best_y: float, n_candidates: int = 256, seed: int = 0,
            candidate_source: Any = "uniform", refine: bool = True, direction: str = "max") -> Configuration:
    return propose(gp, space, best_y, n_candidates, seed, candidate_source, 1, refine, direction)[0][0]


def fit_configs(space: SearchSpace, configs: Sequence, y, box: LengthscaleBox | None = None,
                n_starts: int = 8, seed: int = 0) -> GpModel:
    """Fit on configurations (encoded without a domain check, so stale bounds are tolerated)."""
    X = np.array([encode_unchecked(space, c) for c in configs])
    return fit(X, y, box, n_starts, seed)
