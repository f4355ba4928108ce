"""Gaussian-process regression with a squared-exponential kernel.

Zero-mean prior, per-dimension length scales, Cholesky-factorized exact
posterior, and hyperparameter selection by bounded minimization of the
negative log marginal likelihood.  Inputs are affinely mapped to [0, 1]
per dimension before kernel evaluation (raw gain scales differ by orders
of magnitude) and targets are standardized; predictions are returned in
the original units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import yaml
from scipy.linalg import cho_solve, cholesky, solve_triangular

__all__ = [
    "GpFitError",
    "KernelHyperparameters",
    "HyperparameterBounds",
    "GpModel",
    "se_kernel",
    "gram",
    "nlml",
    "fit_hyperparameters",
    "posterior",
    "posterior_batch",
    "dump_model",
    "load_model",
]

JITTER_START = 1e-10
JITTER_MAX = 1e-6


class GpFitError(RuntimeError):
    """Raised when the kernel matrix cannot be factorized within jitter limits."""


@dataclass(frozen=True)
class KernelHyperparameters:
    """Output scale, per-dimension length scales, and noise deviation."""

    sigma_f: float
    length_scales: tuple
    sigma_n: float

    def __post_init__(self):
        object.__setattr__(self, "length_scales",
                           tuple(float(l) for l in np.atleast_1d(self.length_scales)))
        if not self.sigma_f > 0.0:
            raise ValueError("sigma_f must be positive")
        if any(l <= 0.0 for l in self.length_scales):
            raise ValueError("length scales must be positive")
        if self.sigma_n < 0.0:
            raise ValueError("sigma_n must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.length_scales)


@dataclass(frozen=True)
class HyperparameterBounds:
    """Box bounds for the marginal-likelihood search (per parameter)."""

    sigma_f: tuple = (1e-2, 1e2)
    length_scale: tuple = (1e-2, 1e1)
    sigma_n: tuple = (1e-4, 1e-1)

    def __post_init__(self):
        for name in ("sigma_f", "length_scale", "sigma_n"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ValueError(f"bounds.{name} must satisfy 0 < lo <= hi")


def se_kernel(x, x_other, h: KernelHyperparameters) -> float:
    """Squared-exponential covariance between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_other = np.atleast_1d(np.asarray(x_other, dtype=float))
    ls = np.asarray(h.length_scales)
    if x.shape != x_other.shape or x.shape[0] != ls.shape[0]:
        raise ValueError("point dimension does not match the length scales")
    z = (x - x_other) / ls
    return h.sigma_f ** 2 * math.exp(-0.5 * float(z @ z))


def gram(X: np.ndarray, h: KernelHyperparameters) -> np.ndarray:
    """Symmetric matrix of pairwise kernel values."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = X / np.asarray(h.length_scales)
    sq = np.sum(Z * Z, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
    np.maximum(d2, 0.0, out=d2)
    K = h.sigma_f ** 2 * np.exp(-0.5 * d2)
    return 0.5 * (K + K.T)


def _factorize(K: np.ndarray, sigma_n: float):
    """Cholesky of K + sigma_n^2 I with escalating diagonal jitter."""
    n = K.shape[0]
    base = K + sigma_n ** 2 * np.eye(n)
    jitter = 0.0
    scale = max(np.max(np.diag(K)), 1.0)
    while True:
        try:
            return cholesky(base + jitter * scale * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            pass
        jitter = JITTER_START if jitter == 0.0 else jitter * 100.0
        if jitter > JITTER_MAX:
            raise GpFitError("kernel matrix not positive definite within jitter budget")


def nlml(X: np.ndarray, y: np.ndarray, h: KernelHyperparameters) -> float:
    """Negative log marginal likelihood of the targets under the GP prior."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = y.size
    L = _factorize(gram(X, h), h.sigma_n)
    alpha = cho_solve((L, True), y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return float(0.5 * y @ alpha + 0.5 * logdet + 0.5 * n * math.log(2.0 * math.pi))


def _coordinate_search(f, theta0, lo, hi, rel_tol=1e-6, max_cycles=40):
    """Cyclic golden-section descent over a box, all in log coordinates."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    theta = theta0.copy()
    best = f(theta)
    width = hi - lo
    for _ in range(max_cycles):
        prev = best
        for j in range(theta.size):
            if width[j] <= 0.0:
                continue
            a = max(lo[j], theta[j] - 0.5 * width[j])
            b = min(hi[j], theta[j] + 0.5 * width[j])

            def fj(v):
                t = theta.copy()
                t[j] = v
                return f(t)

            c = b - invphi * (b - a)
            d = a + invphi * (b - a)
            fc, fd = fj(c), fj(d)
            for _ in range(24):
                if fc < fd:
                    b, d, fd = d, c, fc
                    c = b - invphi * (b - a)
                    fc = fj(c)
                else:
                    a, c, fc = c, d, fd
                    d = a + invphi * (b - a)
                    fd = fj(d)
            v = c if fc < fd else d
            fv = min(fc, fd)
            if fv < best:
                theta[j] = v
                best = fv
        width *= 0.5
        if prev - best < rel_tol * max(1.0, abs(prev)):
            break
    return theta, best


def fit_hyperparameters(X: np.ndarray, y: np.ndarray,
                        bounds: HyperparameterBounds | None = None,
                        n_starts: int = 8, seed: int = 0) -> KernelHyperparameters:
    """Minimize the NLML over a box by multi-start coordinate search.

    Runs in log-parameter space from one center start plus seeded random
    starts; deterministic for a given seed.  Raises GpFitError if every
    start fails to factorize.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise ValueError("hyperparameter fitting needs at least two points")
    bounds = bounds or HyperparameterBounds()
    d = X.shape[1]
    lo = np.log(np.array([bounds.sigma_f[0]] + [bounds.length_scale[0]] * d
                         + [bounds.sigma_n[0]]))
    hi = np.log(np.array([bounds.sigma_f[1]] + [bounds.length_scale[1]] * d
                         + [bounds.sigma_n[1]]))

    def unpack(theta):
        v = np.exp(theta)
        return KernelHyperparameters(v[0], tuple(v[1:1 + d]), v[1 + d])

    def objective(theta):
        try:
            return nlml(X, y, unpack(theta))
        except GpFitError:
            return float("inf")

    rng = np.random.default_rng(seed)
    starts = [0.5 * (lo + hi)]
    for _ in range(max(0, n_starts - 1)):
        starts.append(lo + rng.random(lo.size) * (hi - lo))

    best_theta, best_val = None, float("inf")
    for theta0 in starts:
        theta, val = _coordinate_search(objective, np.asarray(theta0), lo, hi)
        if val < best_val:
            best_theta, best_val = theta, val
    if best_theta is None or not np.isfinite(best_val):
        raise GpFitError("all hyperparameter starts failed to factorize")
    return unpack(best_theta)


@dataclass(frozen=True)
class GpModel:
    """Trained GP: normalized data, hyperparameters, and the posterior cache.

    Immutable once built; queries are safe to run concurrently.
    """

    X_raw: np.ndarray
    y_raw: np.ndarray
    hyper: KernelHyperparameters
    x_lo: np.ndarray
    x_hi: np.ndarray
    y_mean: float
    y_std: float
    L: np.ndarray | None
    alpha: np.ndarray | None

    @property
    def n(self) -> int:
        return self.y_raw.size

    def normalize(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        span = np.where(self.x_hi > self.x_lo, self.x_hi - self.x_lo, 1.0)
        return (X - self.x_lo) / span

    @staticmethod
    def fit(X, y, hyper: KernelHyperparameters, x_lo=None, x_hi=None) -> "GpModel":
        """Build the posterior cache for fixed hyperparameters.

        x_lo/x_hi set the input normalization box (defaults to the data
        extent); targets are standardized internally.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            d = X.shape[1] if X.size else hyper.dim
            return GpModel(X_raw=np.zeros((0, d)), y_raw=y, hyper=hyper,
                           x_lo=np.zeros(d), x_hi=np.ones(d),
                           y_mean=0.0, y_std=1.0, L=None, alpha=None)
        x_lo = np.asarray(x_lo if x_lo is not None else X.min(axis=0), dtype=float)
        x_hi = np.asarray(x_hi if x_hi is not None else X.max(axis=0), dtype=float)
        y_mean = float(np.mean(y))
        y_std = float(np.std(y))
        if y_std <= 0.0:
            y_std = 1.0
        model = GpModel(X_raw=X.copy(), y_raw=y.copy(), hyper=hyper,
                        x_lo=x_lo, x_hi=x_hi, y_mean=y_mean, y_std=y_std,
                        L=None, alpha=None)
        Xn = model.normalize(X)
        yn = (y - y_mean) / y_std
        L = _factorize(gram(Xn, hyper), hyper.sigma_n)
        alpha = cho_solve((L, True), yn)
        object.__setattr__(model, "L", L)
        object.__setattr__(model, "alpha", alpha)
        return model

    def nlml(self) -> float:
        if self.n == 0:
            return 0.0
        Xn = self.normalize(self.X_raw)
        yn = (self.y_raw - self.y_mean) / self.y_std
        return nlml(Xn, yn, self.hyper)


def posterior(model: GpModel, x_query) -> tuple[float, float]:
    """Exact posterior mean and variance at one query point (original units)."""
    mu, var = posterior_batch(model, np.atleast_2d(np.asarray(x_query, dtype=float)))
    return float(mu[0]), float(var[0])


def posterior_batch(model: GpModel, X_query: np.ndarray):
    """Vectorized posterior mean and variance over query rows."""
    Xq = np.atleast_2d(np.asarray(X_query, dtype=float))
    h = model.hyper
    if model.n == 0:
        mu = np.zeros(Xq.shape[0])
        var = np.full(Xq.shape[0], h.sigma_f ** 2)
        return mu, var
    Xn = model.normalize(model.X_raw)
    Qn = model.normalize(Xq)
    ls = np.asarray(h.length_scales)
    Zt = Xn / ls
    Zq = Qn / ls
    d2 = (np.sum(Zq * Zq, axis=1)[:, None] + np.sum(Zt * Zt, axis=1)[None, :]
          - 2.0 * (Zq @ Zt.T))
    np.maximum(d2, 0.0, out=d2)
    Kx = h.sigma_f ** 2 * np.exp(-0.5 * d2)  # (q, n)
    mu_n = Kx @ model.alpha
    V = solve_triangular(model.L, Kx.T, lower=True)
    var_n = h.sigma_f ** 2 - np.sum(V * V, axis=0)
    np.maximum(var_n, 0.0, out=var_n)
    mu = mu_n * model.y_std + model.y_mean
    var = var_n * model.y_std ** 2
    return mu, var


def dump_model(model: GpModel, path) -> None:
    """Write the training set and hyperparameters as a YAML document."""
    doc = {
        "hyperparameters": {
            "sigma_f": float(model.hyper.sigma_f),
            "length_scales": [float(l) for l in model.hyper.length_scales],
            "sigma_n": float(model.hyper.sigma_n),
        },
        "normalization": {
            "x_lo": [float(v) for v in model.x_lo],
            "x_hi": [float(v) for v in model.x_hi],
            "y_mean": float(model.y_mean),
            "y_std": float(model.y_std),
        },
        "training": {
            "inputs": [[float(v) for v in row] for row in model.X_raw],
            "targets": [float(v) for v in model.y_raw],
        },
    }
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def load_model(path) -> GpModel:
    with open(path) as f:
        doc = yaml.safe_load(f)
    h = KernelHyperparameters(
        doc["hyperparameters"]["sigma_f"],
        tuple(doc["hyperparameters"]["length_scales"]),
        doc["hyperparameters"]["sigma_n"],
    )
    X = np.array(doc["training"]["inputs"], dtype=float)
    y = np.array(doc["training"]["targets"], dtype=float)
    norm = doc["normalization"]
    return GpModel.fit(X, y, h, x_lo=np.array(norm["x_lo"]), x_hi=np.array(norm["x_hi"]))
