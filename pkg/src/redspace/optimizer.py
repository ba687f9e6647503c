"""Adaptive-sampling loops: classical BO, PCA-BO, PLS-BO and PPLS-BO.

All loops work in normalised coordinates (statistics recomputed from the
current data every iteration), fit one GP per output, and propose one design
per iteration. Every random draw comes from a generator keyed on
``(seed, iteration, purpose)``, so a run is a pure function of its inputs.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import lapack

from .acquisition import (
    AcquisitionConfig,
    constrained_weight,
    ei,
    latent_box,
    maximize_acquisition,
    ucb,
)
from .doe import Dataset, DesignDomain, latin_hypercube, plackett_burman
from .gp import GpModel, _divisor, gp_fit
from .ppls import PplsModel, em_fit, latent_posterior
from .reduction import nipals_fit, pca_fit

log = logging.getLogger(__name__)

METHODS = ("BO", "PCA-BO", "PLS-BO", "PPLS-BO")

# purpose codes for per-iteration random streams
_INIT, _GP, _GA, _MC, _SAMPLE, _EM, _PROBE = range(7)


def stream(seed: int, k: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(k), int(purpose)])


@dataclass
class Problem:
    """Objective ``J(s)`` and constraints ``H_j(s)``, feasible iff every ``H_j <= 0``.

    When ``evaluator`` is given it replaces ``objective``/``constraints`` and must
    return the full observation vector ``[J, H_1, ...]`` of length ``d_y``.
    """

    objective: Callable | None
    constraints: Sequence[Callable]
    domain: DesignDomain
    known_optimum: float | None = None
    name: str = ""
    evaluator: Callable | None = None
    n_outputs: int | None = None

    @property
    def d_y(self) -> int:
        if self.evaluator is not None:
            return int(self.n_outputs)
        return 1 + len(self.constraints)

    def evaluate(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.evaluator is not None:
            y = np.asarray(self.evaluator(s), dtype=float).ravel()
        else:
            y = np.array([self.objective(s)] + [h(s) for h in self.constraints], dtype=float)
        if y.size != self.d_y:
            raise EvaluationError(f"evaluator returned {y.size} outputs, expected {self.d_y}")
        if not np.all(np.isfinite(y)):
            raise EvaluationError(f"non-finite observation {y.tolist()}")
        return y


class EvaluationError(RuntimeError):
    """A problem evaluation failed; ``trace`` holds the rows completed so far."""

    def __init__(self, message: str, k: int | None = None, trace: "Trace | None" = None):
        super().__init__(message if k is None else f"iteration {k}: {message}")
        self.k = k
        self.trace = trace


@dataclass
class InitConfig:
    """Initial design: an optional Plackett-Burman block plus ``n_lhs`` seeded LHS points."""

    pbd: bool = True
    n_lhs: int = 0

    def __post_init__(self):
        if self.n_lhs < 0:
            raise ValueError("n_lhs must be non-negative")
        if not self.pbd and self.n_lhs < 2:
            raise ValueError("an LHS-only initial design needs at least two points")


@dataclass
class RunConfig:
    method: str = "PPLS-BO"
    d_z: int = 2
    n_k: int = 100
    n_t: int = 100
    n_l: int = 1000
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    seed: int = 0
    init: InitConfig = field(default_factory=InitConfig)
    gp_restarts: int = 3
    ga_generations: int = 10
    ga_population: int | None = None
    warm_start: bool = True
    stop_below: float | None = None
    kernel: str = "linear"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if isinstance(self.acquisition, dict):
            self.acquisition = AcquisitionConfig(**self.acquisition)
        if isinstance(self.init, dict):
            self.init = InitConfig(**self.init)
        if self.d_z < 1:
            raise ValueError("d_z must be at least 1")
        if self.n_k < 0 or self.n_t < 0:
            raise ValueError("n_k and n_t must be non-negative")
        if self.method == "PPLS-BO" and self.n_l < 2:
            raise ValueError("PPLS-BO needs n_l >= 2")
        if self.gp_restarts < 1 or self.ga_generations < 1:
            raise ValueError("gp_restarts and ga_generations must be at least 1")
        if self.ga_population is not None and self.ga_population < 4:
            raise ValueError("ga_population must be at least 4")
        if self.kernel not in ("linear", "standard"):
            raise ValueError("kernel must be 'linear' or 'standard'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TraceRow:
    k: int
    s: np.ndarray
    y: np.ndarray
    feasible: bool
    incumbent: float


@dataclass
class Trace:
    method: str
    seed: int
    rows: list = field(default_factory=list)
    digests: list = field(default_factory=list)

    def append(self, k: int, s, y):
        y = np.asarray(y, dtype=float)
        feasible = bool(np.all(y[1:] <= 0.0))
        prev = self.rows[-1].incumbent if self.rows else np.inf
        inc = min(prev, float(y[0])) if feasible else prev
        self.rows.append(TraceRow(k, np.asarray(s, dtype=float).copy(), y.copy(), feasible, inc))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def S(self) -> np.ndarray:
        return np.array([r.s for r in self.rows])

    @property
    def Y(self) -> np.ndarray:
        return np.array([r.y for r in self.rows])

    @property
    def incumbents(self) -> np.ndarray:
        return np.array([r.incumbent for r in self.rows])

    @property
    def n_init(self) -> int:
        return sum(1 for r in self.rows if r.k == 0)

    def final_incumbent(self) -> float:
        return self.rows[-1].incumbent if self.rows else np.inf

    def to_csv(self) -> str:
        d_s = self.rows[0].s.size if self.rows else 0
        d_y = self.rows[0].y.size if self.rows else 0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "seed", "method"] + [f"s_{i + 1}" for i in range(d_s)]
                   + [f"y_{i + 1}" for i in range(d_y)] + ["feasible", "incumbent"])
        for r in self.rows:
            w.writerow([r.k, self.seed, self.method] + [_fmt(v) for v in r.s] + [_fmt(v) for v in r.y]
                       + [int(r.feasible), _fmt(r.incumbent)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "Trace":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        s_cols = [i for i, h in enumerate(header) if h.startswith("s_")]
        y_cols = [i for i, h in enumerate(header) if h.startswith("y_")]
        trace = None
        for row in reader:
            if trace is None:
                trace = cls(method=row[2], seed=int(row[1]))
            trace.rows.append(TraceRow(
                k=int(row[0]),
                s=np.array([float(row[i]) for i in s_cols]),
                y=np.array([float(row[i]) for i in y_cols]),
                feasible=bool(int(row[-2])),
                incumbent=float(row[-1]),
            ))
        return trace if trace is not None else cls(method="", seed=0)

    @classmethod
    def read_csv(cls, path) -> "Trace":
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())

    def to_json(self) -> str:
        return json.dumps({
            "method": self.method,
            "seed": self.seed,
            "rows": [{"k": r.k, "s": r.s.tolist(), "y": r.y.tolist(), "feasible": r.feasible,
                      "incumbent": r.incumbent if np.isfinite(r.incumbent) else None} for r in self.rows],
            "digests": self.digests,
        })


def _fmt(v: float) -> str:
    return "%.17g" % v


def best_feasible(trace: Trace) -> tuple[float, np.ndarray, int, bool]:
    """``(J*, s*, k*, feasible)``; falls back to the best infeasible row with ``feasible=False``."""
    if not trace.rows:
        raise ValueError("best_feasible needs a non-empty trace")
    feas = [r for r in trace.rows if r.feasible]
    pool = feas if feas else trace.rows
    best = min(pool, key=lambda r: r.y[0])
    return float(best.y[0]), best.s.copy(), best.k, bool(feas)


# --------------------------------------------------------------------------
# MC-marginalised predictive


class MarginalPredictor:
    """GP prediction averaged over random training and test latents.

    Hyperparameters come from ``gps`` (fitted on posterior-mean latents) and
    stay fixed; the ``n_l`` latent draws are made once at construction, so
    repeated calls see the same draws (common random numbers).
    """

    def __init__(self, gps: Sequence[GpModel], mu, Sigma, n_l: int, rng):
        if n_l < 2:
            raise ValueError("n_l must be at least 2")
        rng = np.random.default_rng(rng)
        mu = np.atleast_2d(np.asarray(mu, dtype=float))
        n, d_z = mu.shape
        Sigma = np.asarray(Sigma, dtype=float)
        C = _psd_factor(Sigma)
        self.n_l = n_l
        self.C = C
        self.test_eps = rng.standard_normal((n_l, d_z)) @ C.T
        self.Z = mu[None] + rng.standard_normal((n_l, n, d_z)) @ C.T
        self.gps = list(gps)
        self._LinvT = []
        self._alpha = []
        self._scaled = []
        for gp in self.gps:
            w = 1.0 / np.sqrt(_divisor(gp.lengthscales, gp.convention))
            Zw = self.Z * w
            sq = np.sum(Zw * Zw, axis=2)
            d2 = sq[:, :, None] + sq[:, None, :] - 2.0 * Zw @ Zw.transpose(0, 2, 1)
            K = gp.sigma_f ** 2 * np.exp(-np.maximum(d2, 0.0))
            K = K + (gp.sigma_y ** 2 + gp.jitter) * np.eye(n)
            LinvT = _batched_inverse_factor(K, gp.sigma_f ** 2).transpose(0, 2, 1).copy()
            self._LinvT.append(LinvT)
            self._alpha.append(LinvT @ (gp.y @ LinvT)[:, :, None])
            self._scaled.append((w, Zw.transpose(0, 2, 1).copy(), sq[:, None, :]))

    def predict(self, Zc) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(mu_hat, var_hat)`` of shape ``(d_y, m)`` at latent means ``Zc``."""
        Zc = np.atleast_2d(np.asarray(Zc, dtype=float))
        Zs = Zc[None, :, :] + self.test_eps[:, None, :]
        means, variances = [], []
        for gp, LinvT, alpha, (w, BT, b2) in zip(self.gps, self._LinvT, self._alpha, self._scaled):
            A = Zs * w
            d2 = np.sum(A * A, axis=2)[:, :, None] + b2 - 2.0 * (A @ BT)
            Ks = gp.sigma_f ** 2 * np.exp(-np.maximum(d2, 0.0))
            mu_l = (Ks @ alpha)[:, :, 0]
            V = Ks @ LinvT
            var_l = gp.sigma_f ** 2 - np.einsum("lmn,lmn->lm", V, V)
            var_l = np.maximum(var_l, 0.0)
            means.append(mu_l.mean(axis=0))
            variances.append(mu_l.var(axis=0, ddof=1) + var_l.mean(axis=0))
        return np.array(means), np.array(variances)


def _psd_factor(Sigma: np.ndarray) -> np.ndarray:
    """A factor ``C`` with ``C C^T = Sigma``, valid for singular (even zero) Sigma."""
    vals, vecs = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
    return vecs * np.sqrt(np.maximum(vals, 0.0))


def _batched_inverse_factor(K: np.ndarray, scale: float) -> np.ndarray:
    """Inverse Cholesky factors ``L^-1`` of a stack of kernel matrices, with escalating jitter."""
    eye = np.eye(K.shape[-1])
    for j in (0.0, 1e-10, 1e-8, 1e-6, 1e-4):
        try:
            L = np.linalg.cholesky(K + j * scale * eye)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise np.linalg.LinAlgError("MC kernel matrices are not positive definite")
    return np.stack([lapack.dtrtri(Li, lower=1)[0] for Li in L])


def marginal_predictive(gps, ppls: PplsModel, data: Dataset, z_bar_star, n_l: int, seed=0):
    """Per-output ``(mu_hat, sigma_hat)`` at ``z_bar_star`` marginalised over latent uncertainty."""
    post = latent_posterior(ppls, data.Y_norm, data.S_norm)
    pred = MarginalPredictor(gps, post.mu, post.Sigma, n_l, seed)
    mu, var = pred.predict(np.atleast_2d(z_bar_star))
    return [(mu[j], np.sqrt(var[j])) for j in range(mu.shape[0])]


# --------------------------------------------------------------------------
# loops


def initial_design(problem: Problem, config: RunConfig) -> np.ndarray:
    blocks = []
    if config.init.pbd:
        blocks.append(plackett_burman(problem.domain))
    if config.init.n_lhs:
        blocks.append(latin_hypercube(config.init.n_lhs, problem.domain, stream(config.seed, 0, _INIT)))
    return np.vstack(blocks)


def _acquisition_values(means, variances, data: Dataset, config: RunConfig, k: int, d_search: int,
                        y_best: float, shift: float | None):
    mu0, sd0 = means[0], np.sqrt(variances[0])
    acq = config.acquisition
    if acq.kind == "EI":
        base = ei(mu0, sd0, y_best, acq.xi)
    else:
        base = ucb(mu0, sd0, acq.gamma_at(k, d_search))
        if shift is not None:
            base = np.maximum(base - shift, 0.0)
    if len(means) > 1:
        thresholds = (0.0 - data.mean_y[1:]) / data.scale_y[1:]
        preds = [(means[j], np.sqrt(variances[j])) for j in range(1, len(means))]
        base = base * constrained_weight(preds, acq.rho, thresholds)
    return base


def _y_best(data: Dataset) -> float:
    Yn = data.Y_norm
    feas = np.all(data.Y[:, 1:] <= 0.0, axis=1)
    return float(Yn[feas, 0].min() if feas.any() else Yn[:, 0].min())


def _fit_gps(X, data: Dataset, config: RunConfig, k: int, prev):
    gps = []
    Yn = data.Y_norm
    for j in range(data.d_y):
        init = prev[j].log_params if (prev is not None and config.warm_start) else None
        gps.append(gp_fit(X, Yn[:, j], restarts=config.gp_restarts, seed=stream(config.seed, k, _GP * 100 + j),
                          convention=config.kernel, init=init))
    return gps


def _gp_batch(gps):
    def predict(X):
        preds = [gp.predict(X) for gp in gps]
        return [p.mean for p in preds], [p.variance for p in preds]
    return predict


def _maximise(predict, lower, upper, valid, data, config, k, anchors):
    """Build the (shifted, constrained, masked) acquisition and maximise it."""
    d = lower.size
    y_best = _y_best(data)
    shift = None
    if config.acquisition.kind == "UCB":
        rng = stream(config.seed, k, _PROBE)
        probe = lower + rng.random((256, d)) * (upper - lower)
        if anchors is not None:
            probe = np.vstack([anchors, probe])
        m, v = predict(probe)
        vals = ucb(m[0], np.sqrt(v[0]), config.acquisition.gamma_at(k, d))
        ok = valid(probe)
        shift = float(vals[ok].min()) if ok.any() else float(vals.min())

    def objective(X):
        ok = valid(X)
        out = np.full(X.shape[0], -np.inf)
        if ok.any():
            m, v = predict(X[ok])
            out[ok] = _acquisition_values(m, v, data, config, k, d, y_best, shift)
        return out

    # population scales with the search dimension unless set explicitly
    population = config.ga_population or int(np.clip(16 * d, 32, 64))
    x, _ = maximize_acquisition(objective, lower, upper, budget=config.ga_generations,
                                seed=stream(config.seed, k, _GA), population=population, init_points=anchors)
    return x


def run(problem: Problem, config: RunConfig) -> Trace:
    """Dispatch on ``config.method``."""
    return {"BO": run_bo, "PCA-BO": run_pca_bo, "PLS-BO": run_pls_bo, "PPLS-BO": run_ppls_bo}[config.method](
        problem, config)


def _loop(problem: Problem, config: RunConfig, propose) -> Trace:
    if config.method != "BO" and config.d_z > problem.domain.dim:
        raise ValueError(f"d_z={config.d_z} exceeds the design dimension {problem.domain.dim}")
    trace = Trace(config.method, config.seed)
    for s in initial_design(problem, config):
        trace.append(0, s, _evaluate(problem, s, 0, trace))
    state: dict = {}
    for k in range(1, config.n_k + 1):
        if config.stop_below is not None and trace.final_incumbent() < config.stop_below:
            break
        data = Dataset(trace.S, trace.Y)
        s_new, digest = propose(data, k, state)
        s_new = problem.domain.clip(s_new)
        trace.append(k, s_new, _evaluate(problem, s_new, k, trace))
        digest["k"] = k
        trace.digests.append(digest)
    return trace


def _evaluate(problem: Problem, s, k: int, trace: Trace) -> np.ndarray:
    try:
        return problem.evaluate(s)
    except EvaluationError as exc:
        raise EvaluationError(str(exc), k, trace) from exc
    except Exception as exc:
        raise EvaluationError(f"{type(exc).__name__}: {exc}", k, trace) from exc


def _gp_digest(gps) -> list:
    return [gp.log_params.tolist() for gp in gps]


def run_bo(problem: Problem, config: RunConfig) -> Trace:
    """GP-per-output BO directly over the design box."""

    def propose(data: Dataset, k: int, state: dict):
        X = data.S_norm
        gps = _fit_gps(X, data, config, k, state.get("gps"))
        state["gps"] = gps
        box = data.normalised_domain(problem.domain)
        valid = lambda Z: np.ones(Z.shape[0], dtype=bool)
        x = _maximise(_gp_batch(gps), box.lower, box.upper, valid, data, config, k, None)
        return data.s_inverse(x), {"gp": _gp_digest(gps)}

    return _loop(problem, config, propose)


def _linear_subspace_loop(problem: Problem, config: RunConfig, basis_fn) -> Trace:
    def propose(data: Dataset, k: int, state: dict):
        W, R = basis_fn(data)
        X = data.S_norm @ W
        gps = _fit_gps(X, data, config, k, state.get("gps"))
        state["gps"] = gps
        ndom = data.normalised_domain(problem.domain)
        box = latent_box(W, ndom)
        valid = lambda Z: ndom.contains(Z @ R.T)
        # z = 0 maps to the data mean, which always lies inside the domain
        z = _maximise(_gp_batch(gps), box.lower, box.upper, valid, data, config, k, np.zeros((1, W.shape[1])))
        digest = {"gp": _gp_digest(gps), "W": W.tolist(), "z": z.tolist(),
                  "mean_s": data.mean_s.tolist(), "scale_s": data.scale_s.tolist()}
        return data.s_inverse(z @ R.T), digest

    return _loop(problem, config, propose)


def run_pls_bo(problem: Problem, config: RunConfig) -> Trace:
    """BO over NIPALS latent scores, proposals reconstructed through ``(W^+)^T``."""

    def basis(data):
        b = nipals_fit(data, config.d_z)
        return b.W, b.reconstruction_matrix

    return _linear_subspace_loop(problem, config, basis)


def run_pca_bo(problem: Problem, config: RunConfig) -> Trace:
    """BO over the leading principal directions of the designs."""

    def basis(data):
        W = pca_fit(data, config.d_z)
        return W, W

    return _linear_subspace_loop(problem, config, basis)


def run_ppls_bo(problem: Problem, config: RunConfig) -> Trace:
    """BO over a PPLS latent space with MC-marginalised GP predictions.

    Designs are drawn from ``p(s | z)`` at the chosen latent point and clipped
    to the domain, so proposals may leave the fitted subspace.
    """

    def propose(data: Dataset, k: int, state: dict):
        init = state.get("ppls") if config.warm_start else None
        model = em_fit(data, config.d_z, config.n_t, init=init, seed=stream(config.seed, k, _EM))
        state["ppls"] = model
        post = latent_posterior(model, data.Y_norm, data.S_norm)
        gps = _fit_gps(post.mu, data, config, k, state.get("gps"))
        state["gps"] = gps
        mc = MarginalPredictor(gps, post.mu, post.Sigma, config.n_l, stream(config.seed, k, _MC))
        ndom = data.normalised_domain(problem.domain)
        W = model.W
        box = latent_box(W, ndom)
        valid = lambda Z: ndom.contains(Z @ W.T)

        def predict(X):
            m, v = mc.predict(X)
            return list(m), list(v)

        z = _maximise(predict, box.lower, box.upper, valid, data, config, k, np.zeros((1, W.shape[1])))
        s_norm = z @ W.T + np.sqrt(model.sigma_s) * stream(config.seed, k, _SAMPLE).standard_normal(W.shape[0])
        digest = {"gp": _gp_digest(gps), "W": W.tolist(), "z": z.tolist(), "elbo": model.elbo,
                  "sigma_s": model.sigma_s.tolist(), "mean_s": data.mean_s.tolist(),
                  "scale_s": data.scale_s.tolist()}
        return data.s_inverse(s_norm), digest

    return _loop(problem, config, propose)

