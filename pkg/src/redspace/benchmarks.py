"""Analytic benchmark problems and a planted-subspace synthetic generator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .doe import DesignDomain
from .optimizer import Problem
from .ppls import _qr_orthonormal

ILLUSTRATIVE_DIM = 20
CANTILEVER_DOMAIN = DesignDomain(
    np.array([100.0, 100.0, 20.0, 20.0, 20.0]),
    np.array([200.0, 200.0, 70.0, 70.0, 70.0]),
)


def _check_domain(s, domain: DesignDomain) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape != (domain.dim,):
        raise ValueError(f"expected a design vector of length {domain.dim}, got shape {s.shape}")
    if not np.all(np.isfinite(s)) or not domain.contains(s):
        raise ValueError(f"design {s.tolist()} lies outside the domain")
    return s


def illustrative_objective(s) -> float:
    """Multimodal in ``(s1, s2)`` plus a weak linear drift in the other 18 inputs."""
    s = _check_domain(s, DesignDomain.unit(ILLUSTRATIVE_DIM))
    s1, s2 = s[0], s[1]
    main = (6.0 * s1 ** 2 + 3.0) * np.sin(9.0 * s1 ** 2 + 1.0) * np.cos(6.0 * s2 ** 2 + 2.0) / 9.0
    return float(main + s[2:].sum() / 1000.0)


def illustrative_constraint(s) -> float:
    """Affine constraint; feasible iff the value is ``<= 0``."""
    s = _check_domain(s, DesignDomain.unit(ILLUSTRATIVE_DIM))
    return float(0.75 - s[0] - s[1] - s[2:].sum() / 1000.0)


def _volume_cost(s) -> float:
    s1, s2, s3, s4, s5 = s
    return 0.000108 * (s1 * s3 + s2 * s4 + s5 * (500.0 - s1 - s2))


def step_cost(x):
    """Per-dimension cost with logistic steps at 30, 40 and 50."""
    x = np.asarray(x, dtype=float)
    f = lambda t: expit(100.0 * t)
    return x * (0.0963 - 0.0450 * f(x - 30.0) + 0.0662 * f(x - 40.0) + 0.0313 * f(x - 50.0))


def periodic_cost(x):
    x = np.asarray(x, dtype=float)
    return 0.0513 * x + 1.38 * np.cos(0.15 * x) ** 2


def cantilever_objective(s, variant: str = "periodic") -> float:
    """Volume-proportional cost plus a step or periodic cost on ``s3..s5``."""
    s = _check_domain(s, CANTILEVER_DOMAIN)
    if variant == "step":
        extra = step_cost(s[2:])
    elif variant == "periodic":
        extra = periodic_cost(s[2:])
    else:
        raise ValueError(f"variant must be 'step' or 'periodic', got {variant!r}")
    return float(_volume_cost(s) + np.sum(extra))


def _cantilever_step(s) -> float:
    return cantilever_objective(s, "step")


def _cantilever_periodic(s) -> float:
    return cantilever_objective(s, "periodic")


@dataclass
class BenchmarkSpec:
    """A named problem with its reference values.

    ``reported_optimum`` and ``reported_optimiser`` are the published values
    (kept for comparison, not as ground truth); ``target`` is the threshold
    used for iterations-to-target.
    """

    name: str
    problem: Problem
    reported_optimum: float
    reported_optimiser: np.ndarray
    target: float | None = None
    flags: dict = field(default_factory=dict)


def benchmark_registry() -> list[BenchmarkSpec]:
    unit = DesignDomain.unit(ILLUSTRATIVE_DIM)
    illustrative_opt = np.zeros(ILLUSTRATIVE_DIM)
    illustrative_opt[:2] = (0.642, 0.858)
    omitted = {"constraint_omitted": "FE displacement"}
    return [
        BenchmarkSpec(
            name="illustrative-constrained",
            problem=Problem(illustrative_objective, [illustrative_constraint], unit,
                            known_optimum=ILLUSTRATIVE_GRID_OPTIMUM, name="illustrative-constrained"),
            reported_optimum=-0.817,
            reported_optimiser=illustrative_opt,
        ),
        BenchmarkSpec(
            name="cantilever-step-unconstrained",
            problem=Problem(_cantilever_step, [], CANTILEVER_DOMAIN, name="cantilever-step-unconstrained"),
            reported_optimum=6.8,
            reported_optimiser=np.array([129.0, 200.0, 32.0, 32.1, 32.8]),
            target=7.18,
            flags=dict(omitted),
        ),
        BenchmarkSpec(
            name="cantilever-periodic-unconstrained",
            problem=Problem(_cantilever_periodic, [], CANTILEVER_DOMAIN,
                            name="cantilever-periodic-unconstrained"),
            reported_optimum=6.6,
            reported_optimiser=np.array([133.0, 166.0, 31.6, 32.3, 29.6]),
            target=7.44,
            flags=dict(omitted),
        ),
    ]


def get_benchmark(name: str) -> BenchmarkSpec:
    for spec in benchmark_registry():
        if spec.name == name:
            return spec
    names = [b.name for b in benchmark_registry()]
    raise KeyError(f"unknown benchmark {name!r}; available: {names}")


def illustrative_grid_optimum(n: int = 2000) -> tuple[float, np.ndarray]:
    """Feasible minimum over an ``n x n`` grid of ``(s1, s2)`` with the other inputs at 0."""
    g = np.linspace(0.0, 1.0, n)
    s1, s2 = np.meshgrid(g, g, indexing="ij")
    J = (6.0 * s1 ** 2 + 3.0) * np.sin(9.0 * s1 ** 2 + 1.0) * np.cos(6.0 * s2 ** 2 + 2.0) / 9.0
    J = np.where(0.75 - s1 - s2 <= 0.0, J, np.inf)
    i, j = np.unravel_index(np.argmin(J), J.shape)
    s = np.zeros(ILLUSTRATIVE_DIM)
    s[:2] = g[i], g[j]
    return float(J[i, j]), s


# value of illustrative_grid_optimum() at the default resolution
ILLUSTRATIVE_GRID_OPTIMUM = -0.8442688812410971


def planted_subspace(
    n: int,
    d_s: int,
    d_y: int,
    d_z: int,
    noise: float = 0.0,
    seed=0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Synthetic data from a PPLS model with random orthonormal loadings.

    Returns ``(S, Y, W, Q)``. ``noise`` is the observation standard deviation;
    zero gives data lying exactly in the planted subspace. Synthetic, not a
    published benchmark.
    """
    rng = np.random.default_rng(seed)
    W = _qr_orthonormal(rng.standard_normal((d_s, d_z)))
    Q = _qr_orthonormal(rng.standard_normal((d_y, d_z)))
    Z = rng.standard_normal((n, d_z)) * np.linspace(2.0, 1.0, d_z)
    S = Z @ W.T + noise * rng.standard_normal((n, d_s))
    Y = Z @ Q.T + noise * rng.standard_normal((n, d_y))
    return S, Y, W, Q
