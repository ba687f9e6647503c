"""Acquisition functions, latent-domain geometry and a seeded global maximiser."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .doe import DesignDomain

SIGMA_EPS = 1e-12
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class AcquisitionConfig:
    """``gamma`` is a non-negative float or ``"adaptive"``; ``rho`` applies to every constraint."""

    kind: str = "EI"
    gamma: float | str = "adaptive"
    xi: float = 0.0
    rho: float = -1.0

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in ("EI", "UCB"):
            raise ValueError(f"acquisition kind must be 'EI' or 'UCB', got {self.kind!r}")
        if isinstance(self.gamma, str):
            if self.gamma != "adaptive":
                raise ValueError("gamma must be a non-negative number or 'adaptive'")
        elif self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not -1.0 <= self.rho <= 0.0:
            raise ValueError("rho must lie in [-1, 0]")

    def gamma_at(self, k: int, d_z: int) -> float:
        if self.gamma == "adaptive":
            return adaptive_gamma(k, d_z)
        return float(self.gamma)


@dataclass
class LatentBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if not np.all(self.lower < self.upper):
            raise ValueError("latent box must have lower < upper in every coordinate")

    def contains(self, z, atol: float = 0.0) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.all((z >= self.lower - atol) & (z <= self.upper + atol), axis=-1)


def ucb(mu, sigma, gamma: float):
    return -np.asarray(mu) + gamma * np.asarray(sigma)


def adaptive_gamma(k: int, d_z: int) -> float:
    """Exploration weight ``0.2 d_z ln(2(k + 1))`` at adaptive iteration ``k``."""
    return 0.2 * d_z * np.log(2.0 * (k + 1))


def ei(mu, sigma, y_best: float, xi: float = 0.0):
    """Expected improvement below ``y_best`` for minimisation; never negative."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imp = y_best - mu - xi
    safe = np.where(sigma > SIGMA_EPS, sigma, 1.0)
    u = imp / safe
    val = imp * ndtr(u) + safe * _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    val = np.where(sigma > SIGMA_EPS, val, np.maximum(imp, 0.0))
    return np.maximum(val, 0.0)


def constrained_weight(constraint_preds: Sequence, rho, thresholds=None):
    """Product over constraints of ``1 + rho_i P(f_i > t_i)``.

    Each prediction is a ``(mean, std)`` pair or an object with ``mean`` and
    ``std``. Constraint ``i`` is satisfied when ``f_i <= t_i`` (default 0).
    """
    m = len(constraint_preds)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (m,))
    t = np.zeros(m) if thresholds is None else np.broadcast_to(np.asarray(thresholds, dtype=float), (m,))
    weight = 1.0
    for i, pred in enumerate(constraint_preds):
        mean, std = (pred.mean, pred.std) if hasattr(pred, "mean") else pred
        mean = np.asarray(mean, dtype=float)
        std = np.asarray(std, dtype=float)
        safe = np.where(std > SIGMA_EPS, std, 1.0)
        p_violate = np.where(std > SIGMA_EPS, ndtr((mean - t[i]) / safe), (mean > t[i]).astype(float))
        weight = weight * (1.0 + rho[i] * p_violate)
    return weight


def latent_box(W, domain: DesignDomain) -> LatentBox:
    """Bounding box of ``W^T v`` over the vertices ``v`` of the domain.

    A linear function attains its extremes over a box at vertices, and each
    latent coordinate separates over design variables, so the min/max over
    all ``2^d_s`` vertices is computed exactly without enumerating them.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    lo = W * domain.lower[:, None]
    hi = W * domain.upper[:, None]
    lower = np.minimum(lo, hi).sum(axis=0)
    upper = np.maximum(lo, hi).sum(axis=0)
    # a zero column collapses to a point; keep the box non-degenerate
    flat = upper - lower <= 1e-12
    lower = np.where(flat, lower - 1e-9, lower)
    upper = np.where(flat, upper + 1e-9, upper)
    return LatentBox(lower, upper)


def indicator(W, z_bar, domain: DesignDomain, atol: float = 0.0):
    """1 where ``W z_bar`` lies inside the domain (bounds inclusive), else 0."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    s = np.asarray(z_bar, dtype=float) @ W.T
    return domain.contains(s, atol).astype(int)


def maximize_acquisition(
    objective: Callable[[np.ndarray], np.ndarray],
    lower,
    upper,
    budget: int = 20,
    seed=0,
    population: int = 64,
    init_points=None,
    refine: bool = True,
) -> tuple[np.ndarray, float]:
    """Seeded genetic search followed by coordinate pattern refinement.

    ``objective`` maps an ``(N, d)`` batch to ``N`` values; non-finite values
    mark invalid points. ``budget`` is the number of generations. Returns the
    best point ever evaluated and its value.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lower.size
    width = upper - lower
    rng = np.random.default_rng(seed)

    def evaluate(X):
        f = np.asarray(objective(X), dtype=float).reshape(-1)
        return np.where(np.isfinite(f), f, -np.inf)

    pop = lower + rng.random((population, d)) * width
    if init_points is not None:
        init = np.clip(np.atleast_2d(np.asarray(init_points, dtype=float)), lower, upper)[:population]
        pop[: len(init)] = init
    fit = evaluate(pop)
    i = int(np.argmax(fit))
    best_x, best_f = pop[i].copy(), fit[i]

    n_elite = max(1, population // 16)
    for g in range(budget):
        order = np.argsort(-fit, kind="stable")
        elites = pop[order[:n_elite]]
        n_child = population - n_elite
        a = rng.integers(0, population, (n_child, 3))
        b = rng.integers(0, population, (n_child, 3))
        pa = pop[a[np.arange(n_child), np.argmax(fit[a], axis=1)]]
        pb = pop[b[np.arange(n_child), np.argmax(fit[b], axis=1)]]
        mix = rng.uniform(-0.25, 1.25, (n_child, d))
        child = pa + mix * (pb - pa)
        scale = 0.15 * width * (0.85 ** g)
        mutate = rng.random((n_child, 1)) < 0.5
        child = child + mutate * rng.standard_normal((n_child, d)) * scale
        child = np.clip(child, lower, upper)
        cfit = evaluate(child)
        pop = np.vstack([elites, child])
        fit = np.concatenate([fit[order[:n_elite]], cfit])
        j = int(np.argmax(cfit))
        if cfit[j] > best_f:
            best_x, best_f = child[j].copy(), cfit[j]

    if not np.isfinite(best_f):
        raise ValueError("objective was non-finite at every probed point")

    if refine:
        step = 0.05 * width
        eye = np.eye(d)
        for _ in range(200):
            if np.all(step < 1e-4 * np.maximum(width, 1e-300)):
                break
            cand = np.clip(np.vstack([best_x + eye * step, best_x - eye * step]), lower, upper)
            cf = evaluate(cand)
            j = int(np.argmax(cf))
            if cf[j] > best_f:
                best_x, best_f = cand[j].copy(), cf[j]
            else:
                step = step / 2.0
    return best_x, float(best_f)
