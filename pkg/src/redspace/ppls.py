"""Probabilistic partial least squares.

Generative model on normalised data::

    z ~ N(0, I),   s = W z + e_s,  e_s ~ N(0, diag(sigma_s)),
                   y = Q z + e_y,  e_y ~ N(0, diag(sigma_y)),

with orthonormal loadings. Training is EM: an exact Gaussian E-step and an
M-step in which the loadings are re-orthonormalised through a Cholesky factor
of their Gram matrix, followed by closed-form diagonal noise updates.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .doe import Dataset

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
_LOG2PI = np.log(2.0 * np.pi)


@dataclass
class PplsModel:
    W: np.ndarray
    Q: np.ndarray
    sigma_s: np.ndarray
    sigma_y: np.ndarray
    n_iter: int = 0
    elbo: float = float("nan")
    elbo_trace: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.sigma_s = np.atleast_1d(np.asarray(self.sigma_s, dtype=float))
        self.sigma_y = np.atleast_1d(np.asarray(self.sigma_y, dtype=float))
        if self.W.shape[1] != self.Q.shape[1]:
            raise ValueError("W and Q must share the latent dimension")
        if self.sigma_s.shape != (self.W.shape[0],) or self.sigma_y.shape != (self.Q.shape[0],):
            raise ValueError("noise diagonals do not match the loading shapes")
        if np.any(self.sigma_s <= 0) or np.any(self.sigma_y <= 0):
            raise ValueError("noise variances must be strictly positive")

    @property
    def d_s(self) -> int:
        return self.W.shape[0]

    @property
    def d_y(self) -> int:
        return self.Q.shape[0]

    @property
    def d_z(self) -> int:
        return self.W.shape[1]

    @property
    def B(self) -> np.ndarray:
        return np.vstack([self.Q, self.W])

    @property
    def noise(self) -> np.ndarray:
        return np.concatenate([self.sigma_y, self.sigma_s])

    def copy(self) -> "PplsModel":
        return PplsModel(
            self.W.copy(), self.Q.copy(), self.sigma_s.copy(), self.sigma_y.copy(),
            n_iter=self.n_iter, elbo=self.elbo, elbo_trace=list(self.elbo_trace),
        )

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Draw ``(S, Y, Z)`` from the generative model."""
        rng = np.random.default_rng(rng)
        Z = rng.standard_normal((n, self.d_z))
        S = Z @ self.W.T + rng.standard_normal((n, self.d_s)) * np.sqrt(self.sigma_s)
        Y = Z @ self.Q.T + rng.standard_normal((n, self.d_y)) * np.sqrt(self.sigma_y)
        return S, Y, Z

    def to_dict(self) -> dict:
        return {
            "d_s": self.d_s,
            "d_y": self.d_y,
            "d_z": self.d_z,
            "W": self.W.ravel().tolist(),
            "Q": self.Q.ravel().tolist(),
            "sigma_s": self.sigma_s.tolist(),
            "sigma_y": self.sigma_y.tolist(),
            "n_iter": self.n_iter,
            "elbo": self.elbo,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PplsModel":
        W = np.asarray(d["W"], dtype=float).reshape(d["d_s"], d["d_z"])
        Q = np.asarray(d["Q"], dtype=float).reshape(d["d_y"], d["d_z"])
        return cls(W, Q, d["sigma_s"], d["sigma_y"], n_iter=d.get("n_iter", 0),
                   elbo=d.get("elbo", float("nan")))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PplsModel":
        return cls.from_dict(json.loads(text))


@dataclass
class LatentPosterior:
    """Gaussian latent posterior; ``mu`` is (d_z,) or (n, d_z), ``Sigma`` is shared."""

    mu: np.ndarray
    Sigma: np.ndarray


@dataclass
class DiagonalGaussian:
    mean: np.ndarray
    var: np.ndarray

    def sample(self, rng, size=None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        shape = self.mean.shape if size is None else (size,) + self.mean.shape
        return self.mean + np.sqrt(self.var) * rng.standard_normal(shape)


def marginal_covariance(model: PplsModel) -> np.ndarray:
    """Joint covariance of ``[y; s]`` with the latent integrated out."""
    B = model.B
    return B @ B.T + np.diag(model.noise)


def latent_posterior(model: PplsModel, y, s) -> LatentPosterior:
    """Exact posterior of ``z`` given ``(y, s)``; rows of ``y``/``s`` give batched means.

    Uses the information form ``Sigma_z = (I + B^T Psi^-1 B)^-1``, which equals
    ``I - B^T Sigma_ys^-1 B`` but stays accurate when the noise is tiny.
    """
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    d = np.concatenate([y, s], axis=-1)
    psi = model.noise
    if not np.all(np.isfinite(psi)) or np.any(psi <= 0):
        raise np.linalg.LinAlgError("noise diagonal is not positive; Sigma_ys is singular")
    B = model.B
    Bp = B / psi[:, None]
    prec = np.eye(model.d_z) + B.T @ Bp
    try:
        cf = linalg.cho_factor(prec, lower=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("latent precision is not positive definite") from exc
    Sigma = linalg.cho_solve(cf, np.eye(model.d_z))
    Sigma = 0.5 * (Sigma + Sigma.T)
    mu = d @ Bp @ Sigma
    return LatentPosterior(mu=mu, Sigma=Sigma)


def log_evidence(model: PplsModel, Y, S) -> float:
    """Sum over rows of ``ln N([y; s]; 0, Sigma_ys)``."""
    D = np.concatenate([np.atleast_2d(Y), np.atleast_2d(S)], axis=1)
    C = marginal_covariance(model)
    L = linalg.cholesky(C, lower=True)
    A = linalg.solve_triangular(L, D.T, lower=True)
    n, p = D.shape
    return float(-0.5 * np.sum(A * A) - n * np.sum(np.log(np.diag(L))) - 0.5 * n * p * _LOG2PI)


def elbo(model: PplsModel, data: Dataset | tuple, q: LatentPosterior) -> float:
    """Evidence lower bound summed over rows for Gaussian trial densities ``q``.

    ``data`` is a Dataset (its normalised matrices are used) or a ``(Y, S)`` pair.
    ``q.Sigma`` may be shared (d_z, d_z) or per row (n, d_z, d_z).
    """
    Y, S = (data.Y_norm, data.S_norm) if isinstance(data, Dataset) else map(np.atleast_2d, data)
    n = S.shape[0]
    M = np.atleast_2d(q.mu)
    V = np.asarray(q.Sigma, dtype=float)
    Vs = np.broadcast_to(V, (n,) + V.shape[-2:])
    eig = np.linalg.eigvalsh(Vs)
    if np.any(eig < -1e-12 * max(1.0, np.abs(eig).max())):
        raise ValueError("trial covariance is not positive semi-definite")
    sign, logdet = np.linalg.slogdet(Vs)
    logdet = np.where(sign > 0, logdet, -np.inf)

    total = 0.0
    for X, L, psi in ((S, model.W, model.sigma_s), (Y, model.Q, model.sigma_y)):
        R = X - M @ L.T
        quad = np.sum(R * R / psi, axis=1)
        G = L.T @ (L / psi[:, None])
        trace = np.einsum("ij,nji->n", G, Vs)
        total += np.sum(-0.5 * (X.shape[1] * _LOG2PI + np.sum(np.log(psi)) + quad + trace))
    d_z = model.d_z
    prior = -0.5 * (d_z * _LOG2PI + np.sum(M * M, axis=1) + np.trace(Vs, axis1=1, axis2=2))
    entropy = 0.5 * (d_z * (1.0 + _LOG2PI) + logdet)
    return float(total + np.sum(prior) + np.sum(entropy))


def conditional_design_density(model: PplsModel, z_bar) -> DiagonalGaussian:
    """``p(s | z) = N(W z, diag(sigma_s))`` in normalised coordinates."""
    z_bar = np.asarray(z_bar, dtype=float)
    return DiagonalGaussian(mean=z_bar @ model.W.T, var=model.sigma_s.copy())


def init_model(d_s: int, d_y: int, d_z: int, seed=0) -> PplsModel:
    """Orthonormal loadings from QR of Gaussian matrices, unit noise."""
    rng = np.random.default_rng(seed)
    W = _qr_orthonormal(rng.standard_normal((d_s, d_z)))
    Q = _qr_orthonormal(rng.standard_normal((d_y, d_z)))
    return PplsModel(W, Q, np.ones(d_s), np.ones(d_y))


def _qr_orthonormal(A: np.ndarray) -> np.ndarray:
    # tall: orthonormal columns; wide: orthonormal rows
    if A.shape[0] >= A.shape[1]:
        Qf, R = np.linalg.qr(A)
        return Qf * np.sign(np.diag(R))
    Qf, R = np.linalg.qr(A.T)
    return (Qf * np.sign(np.diag(R))).T


def _jittered_cholesky(A: np.ndarray) -> np.ndarray:
    scale = max(np.trace(A) / A.shape[0], np.finfo(float).tiny)
    for jitter in JITTERS:
        try:
            return linalg.cholesky(A + jitter * scale * np.eye(A.shape[0]), lower=True)
        except linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(
        "Gram matrix of the loading update is rank deficient even with jitter; reduce d_z"
    )


def _polar(A: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(A, full_matrices=False)
    return U @ Vt


def _loading_objective(L, G, R, prec) -> float:
    # L-dependent part of the expected complete-data log-likelihood
    return float(np.sum(prec[:, None] * G * L) - 0.5 * np.sum(prec[:, None] * (L @ R) * L))


def _update_loading(L_old, G, R, psi, mm_steps: int = 3):
    """Orthonormal loading update, guarded so the EM objective cannot drop.

    Two closed-form candidates are scored: the Cholesky orthonormalisation
    ``G chol(G^T G)^-T`` and the polar factor of the unconstrained maximiser
    ``G R^-1``; the better one is taken if it improves on ``L_old``. When
    neither does, up to ``mm_steps`` majorise-minimise Procrustes steps are
    taken from ``L_old``, each accepted only if it improves the expected
    log-likelihood.
    """
    prec = 1.0 / psi
    best, f_best = L_old, _loading_objective(L_old, G, R, prec)
    Lc = _jittered_cholesky(G.T @ G)
    chol = linalg.solve_triangular(Lc, G.T, lower=True).T
    polar = _polar(linalg.solve(R, G.T, assume_a="pos").T)
    for cand in (chol, polar):
        f = _loading_objective(cand, G, R, prec)
        if f > f_best:
            best, f_best = cand, f
    if best is not L_old:
        return best
    lam = prec.max() * np.linalg.eigvalsh(R)[-1]
    for _ in range(mm_steps):
        mm = _polar(prec[:, None] * (G - best @ R) + lam * best)
        f = _loading_objective(mm, G, R, prec)
        if f <= f_best + 1e-14 * abs(f_best):
            break
        best, f_best = mm, f
    return best


def _noise_update(X, L, M, R) -> np.ndarray:
    n = X.shape[0]
    diag = (np.sum(X * X, axis=0) - 2.0 * np.sum((M @ L.T) * X, axis=0)
            + np.sum((L @ R) * L, axis=1)) / n
    return np.maximum(diag, VARIANCE_FLOOR)


def em_fit(
    data: Dataset | tuple,
    d_z: int,
    n_t: int = 100,
    init: PplsModel | None = None,
    seed=0,
    tol: float = 1e-10,
    canonical: bool = True,
) -> PplsModel:
    """Fit a PPLS model by EM on normalised data.

    Runs at most ``n_t`` E/M sweeps and stops early once the log evidence
    (the ELBO at the exact posterior) improves by less than ``tol``.
    ``data`` is a Dataset or a ``(Y, S)`` pair of already normalised arrays.
    With ``canonical`` the fitted latent axes are rotated by
    :func:`canonical_rotation`, which leaves the likelihood unchanged.
    """
    Y, S = (data.Y_norm, data.S_norm) if isinstance(data, Dataset) else map(np.atleast_2d, data)
    n, d_s = S.shape
    d_y = Y.shape[1]
    if not 1 <= d_z <= d_s:
        raise ValueError(f"d_z must lie in [1, {d_s}], got {d_z}")
    if n_t < 0:
        raise ValueError("n_t must be non-negative")
    if init is None:
        model = init_model(d_s, d_y, d_z, seed)
    else:
        if init.W.shape != (d_s, d_z) or init.Q.shape != (d_y, d_z):
            raise ValueError("initial model does not match the data dimensions")
        model = init.copy()

    current = log_evidence(model, Y, S)
    trace = [current]
    it = 0
    for it in range(1, n_t + 1):
        post = latent_posterior(model, Y, S)
        M = post.mu
        R = n * post.Sigma + M.T @ M
        W = _update_loading(model.W, S.T @ M, R, model.sigma_s)
        Q = _update_loading(model.Q, Y.T @ M, R, model.sigma_y)
        sigma_s = _noise_update(S, W, M, R)
        sigma_y = _noise_update(Y, Q, M, R)
        model = PplsModel(W, Q, sigma_s, sigma_y)
        new = log_evidence(model, Y, S)
        trace.append(new)
        gain = new - current
        current = new
        if gain < tol:
            break
    if n_t > 0 and canonical:
        model = canonical_rotation(model, Y, S)
    model.n_iter = it if n_t > 0 else 0
    model.elbo = current
    model.elbo_trace = trace
    return model


def canonical_rotation(model: PplsModel, Y, S) -> PplsModel:
    """Rotate the latent axes into a fixed orientation.

    ``(W R, Q R)`` has the same likelihood for every orthogonal ``R``. The
    leading axes are the left singular vectors of ``E[Z]^T Y`` (ordered by
    cross-covariance with the outputs), any remaining axes are ordered by the
    variance of the posterior means, and signs follow :func:`fix_signs` on W.
    """
    M = latent_posterior(model, Y, S).mu
    U, sv, _ = np.linalg.svd(M.T @ np.atleast_2d(Y), full_matrices=True)
    r = int(np.sum(sv > 1e-12 * max(1.0, sv.max(initial=0.0))))
    if r < model.d_z:
        rest = U[:, r:]
        P = rest.T @ (M.T @ M) @ rest
        _, V = np.linalg.eigh(0.5 * (P + P.T))
        U = np.hstack([U[:, :r], rest @ V[:, ::-1]])
    W = model.W @ U
    Q = model.Q @ U
    idx = np.argmax(np.abs(W), axis=0)
    signs = np.sign(W[idx, np.arange(W.shape[1])])
    signs[signs == 0] = 1.0
    return PplsModel(W * signs, Q * signs, model.sigma_s.copy(), model.sigma_y.copy(),
                     n_iter=model.n_iter, elbo=model.elbo, elbo_trace=list(model.elbo_trace))


def select_latent_dim(data: Dataset, max_dz: int, threshold: float, n_t: int = 100, seed=0) -> int:
    """Smallest d_z after which the fitted ELBO gains less than ``threshold``."""
    prev = None
    for d_z in range(1, max_dz + 1):
        value = em_fit(data, d_z, n_t=n_t, seed=seed).elbo
        if prev is not None and value - prev < threshold:
            return d_z - 1
        prev = value
    return max_dz
