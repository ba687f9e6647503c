"""Exact Gaussian-process regression with a squared-exponential ARD kernel.

Two kernel conventions are supported::

    "linear":   sigma_f^2 exp(-sum_i (z_i - z'_i)^2 / (2 l_i))
    "standard": sigma_f^2 exp(-sum_i (z_i - z'_i)^2 / (2 l_i^2))

"linear" is the default. Hyperparameters are optimised in log space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-6
LOG_BOUND = 10.0
_LOG2PI = np.log(2.0 * np.pi)
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
CONVENTIONS = ("linear", "standard")


def _divisor(lengthscales: np.ndarray, convention: str) -> np.ndarray:
    if convention == "linear":
        return 2.0 * lengthscales
    if convention == "standard":
        return 2.0 * lengthscales ** 2
    raise ValueError(f"unknown kernel convention {convention!r}; choose from {CONVENTIONS}")


def kernel_matrix(A, B, sigma_f: float, lengthscales, convention: str = "linear") -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    w = 1.0 / np.sqrt(_divisor(np.asarray(lengthscales, dtype=float), convention))
    Aw, Bw = A * w, B * w
    d2 = np.sum(Aw * Aw, 1)[:, None] + np.sum(Bw * Bw, 1)[None, :] - 2.0 * Aw @ Bw.T
    return sigma_f ** 2 * np.exp(-np.maximum(d2, 0.0))


def kernel(z, z_prime, theta, convention: str = "linear") -> float:
    """Covariance between two points; ``theta = (sigma_f, lengthscales)``."""
    sigma_f, lengthscales = theta
    z = np.atleast_1d(np.asarray(z, dtype=float))
    z_prime = np.atleast_1d(np.asarray(z_prime, dtype=float))
    if z.shape != z_prime.shape:
        raise ValueError("kernel inputs must have the same dimension")
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), z.shape)
    return float(sigma_f ** 2 * np.exp(-np.sum((z - z_prime) ** 2 / _divisor(ls, convention))))


@dataclass
class GaussianPrediction:
    mean: np.ndarray
    variance: np.ndarray
    cov: np.ndarray | None = None

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def _chol_with_jitter(K: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    eye = np.eye(K.shape[0])
    for j in _JITTERS:
        try:
            return linalg.cholesky(K + j * scale * eye, lower=True), j * scale
        except linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("kernel matrix is not positive definite even with jitter")


@dataclass
class GpModel:
    """A GP with fixed hyperparameters and a cached Cholesky factor of ``C_ZZ + sigma_y^2 I``."""

    Z: np.ndarray
    y: np.ndarray
    sigma_f: float
    lengthscales: np.ndarray
    sigma_y: float = NOISE_FLOOR
    convention: str = "linear"
    warning: bool = False
    L: np.ndarray = field(init=False, repr=False)
    alpha: np.ndarray = field(init=False, repr=False)
    jitter: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.Z.shape[0] != self.y.size:
            raise ValueError("Z and y must have the same number of rows")
        self.lengthscales = np.broadcast_to(
            np.asarray(self.lengthscales, dtype=float), (self.Z.shape[1],)).copy()
        if self.sigma_f <= 0 or np.any(self.lengthscales <= 0):
            raise ValueError("sigma_f and lengthscales must be positive")
        self.sigma_y = max(float(self.sigma_y), NOISE_FLOOR)
        _divisor(self.lengthscales, self.convention)
        K = self.gram(self.Z) + self.sigma_y ** 2 * np.eye(self.n)
        self.L, self.jitter = _chol_with_jitter(K, self.sigma_f ** 2)
        self.alpha = linalg.cho_solve((self.L, True), self.y)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def log_params(self) -> np.ndarray:
        return np.concatenate([[np.log(self.sigma_f)], np.log(self.lengthscales), [np.log(self.sigma_y)]])

    @classmethod
    def from_log_params(cls, Z, y, p, convention: str = "linear") -> "GpModel":
        p = np.asarray(p, dtype=float)
        return cls(Z, y, float(np.exp(p[0])), np.exp(p[1:-1]), float(np.exp(p[-1])), convention)

    def gram(self, A, B=None) -> np.ndarray:
        return kernel_matrix(A, A if B is None else B, self.sigma_f, self.lengthscales, self.convention)

    def predict(self, Z_star, full_cov: bool = False) -> GaussianPrediction:
        return gp_predict(self, Z_star, full_cov)

    def log_marginal_likelihood(self) -> float:
        return log_marginal_likelihood(self)

    def inverse(self) -> np.ndarray:
        """``(C_ZZ + sigma_y^2 I)^-1`` from the cached factor (for batched prediction)."""
        return linalg.cho_solve((self.L, True), np.eye(self.n))


def gp_predict(model: GpModel, Z_star, full_cov: bool = False) -> GaussianPrediction:
    """Posterior predictive of the latent function at ``Z_star``."""
    Z_star = np.atleast_2d(np.asarray(Z_star, dtype=float))
    Ks = model.gram(Z_star, model.Z)
    mean = Ks @ model.alpha
    V = linalg.solve_triangular(model.L, Ks.T, lower=True)
    if full_cov:
        cov = model.gram(Z_star) - V.T @ V
        var = np.maximum(np.diag(cov).copy(), 0.0)
        return GaussianPrediction(mean, var, 0.5 * (cov + cov.T))
    var = np.maximum(model.sigma_f ** 2 - np.sum(V * V, axis=0), 0.0)
    return GaussianPrediction(mean, var)


def log_marginal_likelihood(model: GpModel) -> float:
    return float(-0.5 * model.y @ model.alpha - np.sum(np.log(np.diag(model.L)))
                 - 0.5 * model.n * _LOG2PI)


def pairwise_sq_diffs(Z) -> np.ndarray:
    """Squared coordinate differences, shape ``(n * n, d)``; reusable across likelihood calls."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n, d = Z.shape
    return ((Z[:, None, :] - Z[None, :, :]) ** 2).reshape(n * n, d)


def lml_and_grad(p, Z, y, convention: str = "linear", diff2=None) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient w.r.t. ``(log sigma_f, log l_i, log sigma_y)``.

    ``diff2`` may carry :func:`pairwise_sq_diffs` of ``Z`` to skip recomputing it.
    """
    p = np.asarray(p, dtype=float)
    Z = np.atleast_2d(Z)
    y = np.asarray(y, dtype=float).ravel()
    n, d = Z.shape
    if diff2 is None:
        diff2 = pairwise_sq_diffs(Z)
    sf2 = np.exp(2.0 * p[0])
    ls = np.exp(p[1:1 + d])
    sy2 = np.exp(2.0 * p[-1])
    inv_div = 1.0 / _divisor(ls, convention)
    Kf = sf2 * np.exp(-(diff2 @ inv_div)).reshape(n, n)
    L, _ = _chol_with_jitter(Kf + sy2 * np.eye(n), sf2)
    alpha = linalg.cho_solve((L, True), y)
    value = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG2PI
    inner = np.outer(alpha, alpha) - linalg.cho_solve((L, True), np.eye(n))
    A = inner * Kf
    grad = np.empty_like(p)
    grad[0] = np.sum(A)
    # d/dlog l of -diff^2/div: diff^2/(2l) for "linear", diff^2/l^2 for "standard"
    fac = 1.0 if convention == "linear" else 2.0
    grad[1:1 + d] = 0.5 * fac * (A.ravel() @ diff2) * inv_div
    grad[-1] = sy2 * np.trace(inner)
    return float(value), grad


def _bounds(d: int, noise_floor: float) -> list[tuple[float, float]]:
    lo_noise = max(-LOG_BOUND, np.log(noise_floor))
    return [(-LOG_BOUND, LOG_BOUND)] * (1 + d) + [(lo_noise, LOG_BOUND)]


def gp_fit(
    Z,
    y,
    restarts: int = 8,
    seed=0,
    convention: str = "linear",
    init=None,
    noise_floor: float = NOISE_FLOOR,
) -> GpModel:
    """Maximise the log marginal likelihood by multi-start L-BFGS-B in log space.

    The first start is ``init`` (log parameters) when given, otherwise a
    data-scaled default; further starts are drawn from the seeded RNG in order,
    so a larger ``restarts`` only ever adds candidates. If every start fails
    the default hyperparameters are returned with ``warning=True``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = Z.shape
    if n < 2:
        raise ValueError("gp_fit needs at least two training points")
    bounds = _bounds(d, noise_floor)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    rng = np.random.default_rng(seed)

    spread = np.maximum(Z.std(axis=0), 1e-3)
    default_ls = spread if convention == "standard" else spread ** 2
    ystd = max(float(np.std(y)), 1e-3)
    default = np.concatenate([[np.log(ystd)], np.log(default_ls), [np.log(max(0.1 * ystd, noise_floor))]])
    starts = [np.clip(np.asarray(init, dtype=float), lo, hi) if init is not None else np.clip(default, lo, hi)]
    for _ in range(max(restarts, 1) - 1):
        s = np.concatenate([
            [np.log(ystd) + rng.uniform(-1.0, 1.0)],
            np.log(default_ls) + rng.uniform(-2.0, 2.0, d),
            [rng.uniform(np.log(max(noise_floor, 1e-4)), np.log(ystd))],
        ])
        starts.append(np.clip(s, lo, hi))

    diff2 = pairwise_sq_diffs(Z)

    def neg(p):
        try:
            v, g = lml_and_grad(p, Z, y, convention, diff2)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(p)
        if not np.isfinite(v):
            return 1e25, np.zeros_like(p)
        return -v, -g

    best_p, best_v = None, -np.inf
    for s in starts:
        res = optimize.minimize(neg, s, jac=True, method="L-BFGS-B", bounds=bounds)
        v = -res.fun
        if np.isfinite(v) and v > -1e24 and v > best_v:
            best_p, best_v = res.x, v
    if best_p is None:
        log.warning("all %d GP hyperparameter restarts failed; using defaults", len(starts))
        model = GpModel.from_log_params(Z, y, np.clip(default, lo, hi), convention)
        model.warning = True
        return model
    return GpModel.from_log_params(Z, y, best_p, convention)
