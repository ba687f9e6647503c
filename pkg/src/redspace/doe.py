"""Initial designs (Latin hypercube, Plackett-Burman) and data normalisation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Generator rows of the cyclic two-level Plackett-Burman designs. Rows 2..n-1
# are cyclic shifts of the generator; the final run sets every factor low.
_PB_GENERATORS = {
    4: "++-",
    8: "+++-+--",
    12: "++-+++---+-",
    16: "++++-+-++--+---",
    20: "++--++++-+-+----++-",
    24: "+++++-+-++--++--+-+----",
}


@dataclass(frozen=True)
class DesignDomain:
    """Axis-aligned box ``lower <= s <= upper`` in design units."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError("lower and upper must be 1-D vectors of equal length")
        if lower.size < 1:
            raise ValueError("domain needs at least one design variable")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @classmethod
    def unit(cls, dim: int) -> "DesignDomain":
        return cls(np.zeros(dim), np.ones(dim))

    def contains(self, s, atol: float = 0.0) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.all((s >= self.lower - atol) & (s <= self.upper + atol), axis=-1)

    def clip(self, s) -> np.ndarray:
        return np.clip(s, self.lower, self.upper)

    def scale_unit(self, u) -> np.ndarray:
        """Map points of the unit cube into the box."""
        return self.lower + np.asarray(u, dtype=float) * (self.upper - self.lower)


def latin_hypercube(n: int, domain: DesignDomain, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Random Latin hypercube with one sample per stratum in every column."""
    if n < 1:
        raise ValueError("latin_hypercube needs n >= 1")
    rng = np.random.default_rng(seed)
    d = domain.dim
    strata = np.argsort(rng.random((n, d)), axis=0)
    u = (strata + rng.random((n, d))) / n
    return domain.scale_unit(u)


def pb_matrix(n_runs: int) -> np.ndarray:
    """Full ±1 Plackett-Burman matrix with ``n_runs`` rows and ``n_runs - 1`` columns."""
    try:
        gen = _PB_GENERATORS[n_runs]
    except KeyError:
        raise ValueError(
            f"no Plackett-Burman generator for {n_runs} runs; "
            f"available: {sorted(_PB_GENERATORS)}"
        ) from None
    row = np.array([1 if c == "+" else -1 for c in gen], dtype=int)
    rows = [np.roll(row, k) for k in range(n_runs - 1)]
    rows.append(-np.ones(n_runs - 1, dtype=int))
    return np.array(rows)


def plackett_burman(domain: DesignDomain, coded: bool = False) -> np.ndarray:
    """Two-level Plackett-Burman design with levels at the domain bounds.

    The run count is the smallest multiple of four strictly greater than the
    number of design variables; surplus columns of the full design are dropped.
    With ``coded=True`` the ±1 matrix is returned instead of design units.
    """
    d = domain.dim
    if d < 2:
        raise ValueError("plackett_burman needs at least two design variables")
    n_runs = 4 * (d // 4 + 1)
    X = pb_matrix(n_runs)[:, :d]
    if coded:
        return X
    return np.where(X > 0, domain.upper, domain.lower)


@dataclass
class Dataset:
    """Raw design/observation matrices with column-wise normalisation statistics.

    Normalisation is ``(x - mean) / scale`` with the sample standard deviation
    as scale; constant columns keep scale 1 so they normalise to zero.
    """

    S: np.ndarray
    Y: np.ndarray
    mean_s: np.ndarray = field(init=False)
    scale_s: np.ndarray = field(init=False)
    mean_y: np.ndarray = field(init=False)
    scale_y: np.ndarray = field(init=False)

    def __post_init__(self):
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        self.Y = Y[:, None] if Y.ndim == 1 else Y
        if self.S.shape[0] != self.Y.shape[0]:
            raise ValueError("S and Y must have the same number of rows")
        if self.S.shape[0] < 2:
            raise ValueError("normalisation needs at least two rows")
        self.mean_s, self.scale_s = _column_stats(self.S)
        self.mean_y, self.scale_y = _column_stats(self.Y)

    @property
    def n(self) -> int:
        return self.S.shape[0]

    @property
    def d_s(self) -> int:
        return self.S.shape[1]

    @property
    def d_y(self) -> int:
        return self.Y.shape[1]

    @property
    def S_norm(self) -> np.ndarray:
        return self.s_forward(self.S)

    @property
    def Y_norm(self) -> np.ndarray:
        return self.y_forward(self.Y)

    def s_forward(self, s):
        return (np.asarray(s, dtype=float) - self.mean_s) / self.scale_s

    def s_inverse(self, s_norm):
        return np.asarray(s_norm, dtype=float) * self.scale_s + self.mean_s

    def y_forward(self, y):
        return (np.asarray(y, dtype=float) - self.mean_y) / self.scale_y

    def y_inverse(self, y_norm):
        return np.asarray(y_norm, dtype=float) * self.scale_y + self.mean_y

    def normalised_domain(self, domain: DesignDomain) -> DesignDomain:
        return DesignDomain(self.s_forward(domain.lower), self.s_forward(domain.upper))


def _column_stats(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = A.mean(axis=0)
    scale = A.std(axis=0, ddof=1)
    # relative test: a column of identical floats can still give std ~1e-17
    const = scale <= 1e-12 * np.maximum(1.0, np.abs(mean))
    scale = np.where(const, 1.0, scale)
    return mean, scale


def normalize(S, Y) -> Dataset:
    return Dataset(S, Y)
