"""Deterministic linear subspaces: PLS by NIPALS and a PCA baseline."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .doe import Dataset

NIPALS_TOL = 1e-10
NIPALS_MAX_ITER = 500


def fix_signs(W: np.ndarray) -> np.ndarray:
    """Flip columns so that each one's largest-magnitude entry is positive."""
    W = np.array(W, dtype=float, copy=True)
    if W.size == 0:
        return W
    idx = np.argmax(np.abs(W), axis=0)
    signs = np.sign(W[idx, np.arange(W.shape[1])])
    signs[signs == 0] = 1.0
    return W * signs


@dataclass
class PlsBasis:
    """Input weights ``W`` (d_s x d_z) and output directions ``Q`` (d_y x d_z).

    ``T`` and ``U`` hold the training scores ``z = W^T s`` and ``v = Q^T y``.
    ``residual_norm`` is the Frobenius norm of the cross-covariance left after
    deflating all components, next to ``initial_norm`` for the raw ``S^T Y``.
    """

    W: np.ndarray
    Q: np.ndarray
    T: np.ndarray | None = None
    U: np.ndarray | None = None
    initial_norm: float = float("nan")
    residual_norm: float = float("nan")

    @property
    def d_z(self) -> int:
        return self.W.shape[1]

    @cached_property
    def reconstruction_matrix(self) -> np.ndarray:
        # (W^+)^T; equals W when the columns are orthonormal
        return np.linalg.pinv(self.W).T

    def project(self, s) -> np.ndarray:
        return np.asarray(s, dtype=float) @ self.W


def nipals_fit(data: Dataset, d_z: int) -> PlsBasis:
    """PLS2 by NIPALS on the normalised data, one deflation step per component."""
    X = data.S_norm.copy()
    Y = data.Y_norm.copy()
    n, d_s = X.shape
    if not 1 <= d_z <= min(d_s, n - 1):
        raise ValueError(f"d_z must lie in [1, {min(d_s, n - 1)}], got {d_z}")
    initial_norm = float(np.linalg.norm(X.T @ Y))
    if initial_norm == 0.0:
        raise ValueError("S^T Y is identically zero; no input-output covariance to explain")

    W = np.zeros((d_s, d_z))
    Qd = np.zeros((Y.shape[1], d_z))
    T = np.zeros((n, d_z))
    for k in range(d_z):
        w, q = _nipals_component(X, Y)
        t = X @ w
        tt = t @ t
        if tt <= 0.0:
            raise ValueError(f"component {k + 1} has zero scores; reduce d_z")
        X = X - np.outer(t, X.T @ t / tt)
        Y = Y - np.outer(t, Y.T @ t / tt)
        W[:, k] = w
        Qd[:, k] = q
        T[:, k] = t

    signs = np.sign(W[np.argmax(np.abs(W), axis=0), np.arange(d_z)])
    signs[signs == 0] = 1.0
    W *= signs
    Qd *= signs
    T *= signs
    Q = _orthonormalise_leading(Qd)
    return PlsBasis(
        W=W,
        Q=Q,
        T=T,
        U=data.Y_norm @ Q,
        initial_norm=initial_norm,
        residual_norm=float(np.linalg.norm(X.T @ Y)),
    )


def _nipals_component(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    C = X.T @ Y
    if np.linalg.norm(C) <= 1e-14 * max(1.0, np.linalg.norm(X)):
        # no cross-covariance left: continue along the top residual input direction,
        # which is orthogonal to every earlier weight vector after deflation
        _, _, Vt = np.linalg.svd(X, full_matrices=False)
        return Vt[0], np.zeros(Y.shape[1])
    u = Y[:, np.argmax(Y.var(axis=0))]
    w_old = None
    for _ in range(NIPALS_MAX_ITER):
        w = X.T @ u
        w /= np.linalg.norm(w)
        t = X @ w
        q = Y.T @ t
        nq = np.linalg.norm(q)
        if nq == 0.0:
            break
        q /= nq
        u = Y @ q
        if w_old is not None and min(np.linalg.norm(w - w_old), np.linalg.norm(w + w_old)) < NIPALS_TOL:
            break
        w_old = w
    return w, q


def _orthonormalise_leading(Q: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the first min(d_y, d_z) columns; later columns only normalised."""
    Q = Q.copy()
    d_y, d_z = Q.shape
    m = min(d_y, d_z)
    for j in range(d_z):
        v = Q[:, j]
        if j < m:
            for i in range(j):
                v = v - (Q[:, i] @ v) * Q[:, i]
        nv = np.linalg.norm(v)
        Q[:, j] = v / nv if nv > 1e-14 else 0.0
    return Q


def pls_reconstruct(z, basis: PlsBasis) -> np.ndarray:
    """Low-rank design reconstruction ``(W^+)^T z`` in normalised coordinates."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != basis.d_z:
        raise ValueError(f"latent vector has length {z.shape[-1]}, basis expects {basis.d_z}")
    return z @ basis.reconstruction_matrix.T


def pca_fit(data: Dataset, d_z: int) -> np.ndarray:
    """Top ``d_z`` eigenvectors of the normalised input covariance (sign-fixed)."""
    X = data.S_norm
    n, d_s = X.shape
    if not 1 <= d_z <= min(d_s, n - 1):
        raise ValueError(f"d_z must lie in [1, {min(d_s, n - 1)}], got {d_z}")
    cov = X.T @ X / (n - 1)
    _, vecs = np.linalg.eigh(cov)
    return fix_signs(vecs[:, ::-1][:, :d_z])
