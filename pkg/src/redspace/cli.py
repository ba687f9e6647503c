"""Experiment runner: JSON configs, seeded multi-run execution and summaries.

Usage::

    redspace run config.json [--out DIR] [--parallelism N]
    redspace summarize DIR
    redspace list-benchmarks
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import queue
import shlex
import subprocess
import sys
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .acquisition import AcquisitionConfig
from .benchmarks import benchmark_registry, get_benchmark
from .doe import DesignDomain
from .optimizer import METHODS, EvaluationError, InitConfig, Problem, RunConfig, Trace, run

SEED_OFFSET_ENV = "REDSPACE_SEED_OFFSET"

_TOP_KEYS = {"benchmark", "evaluator", "method", "methods", "seeds", "defaults", "overrides",
             "target", "output_dir", "parallelism"}
_EVALUATOR_KEYS = {"command", "lower", "upper", "n_outputs", "timeout"}
_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"method", "seed"}
_ACQ_KEYS = {f.name for f in fields(AcquisitionConfig)}
_INIT_KEYS = {f.name for f in fields(InitConfig)}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """A validated experiment: one problem, several methods, several seeds.

    ``runs`` maps each method to its fully resolved :class:`RunConfig`
    (the seed field is a placeholder; each run substitutes its own seed).
    """

    methods: list
    seeds: list
    runs: dict
    benchmark: str | None = None
    evaluator: dict | None = None
    target: float | None = None
    output_dir: str = "results"
    parallelism: int | None = None

    def canonical(self) -> dict:
        """Fully explicit JSON form; re-parsing it gives an identical config."""
        overrides = {}
        for m in self.methods:
            d = asdict(self.runs[m])
            d.pop("method")
            d.pop("seed")
            overrides[m] = d
        out = {"methods": list(self.methods), "seeds": list(self.seeds), "defaults": {},
               "overrides": overrides, "target": self.target, "output_dir": self.output_dir,
               "parallelism": self.parallelism}
        if self.benchmark is not None:
            out["benchmark"] = self.benchmark
        else:
            out["evaluator"] = dict(self.evaluator)
        return out

    def config_hash(self) -> str:
        c = self.canonical()
        c.pop("output_dir")
        c.pop("parallelism")
        return hashlib.sha256(json.dumps(c, sort_keys=True).encode()).hexdigest()

    def problem(self) -> Problem:
        if self.benchmark is not None:
            return get_benchmark(self.benchmark).problem
        return external_evaluator(self.evaluator)


def _check_keys(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {where}; allowed: {sorted(allowed)}")


def _run_config(method: str, raw: dict, where: str) -> RunConfig:
    _check_keys(raw, _RUN_KEYS, where)
    raw = dict(raw)
    if "acquisition" in raw:
        _check_keys(raw["acquisition"], _ACQ_KEYS, f"{where}.acquisition")
    if "init" in raw:
        _check_keys(raw["init"], _INIT_KEYS, f"{where}.init")
    try:
        return RunConfig(method=method, **raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(source) -> ExperimentConfig:
    """Validate a config given as a path, JSON text already loaded into a dict, or a dict."""
    if isinstance(source, dict):
        raw = source
    else:
        with open(source, encoding="utf-8") as fh:
            raw = json.load(fh)
    _check_keys(raw, _TOP_KEYS, "config")
    if ("benchmark" in raw) == ("evaluator" in raw):
        raise ConfigError("config needs exactly one of 'benchmark' or 'evaluator'")
    if "method" in raw and "methods" in raw:
        raise ConfigError("give either 'method' or 'methods', not both")
    methods = raw.get("methods", [raw["method"]] if "method" in raw else None)
    if not methods:
        raise ConfigError("config needs 'method' or a non-empty 'methods' list")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r} in 'methods'; choose from {list(METHODS)}")
    if len(set(methods)) != len(methods):
        raise ConfigError("'methods' contains duplicates")
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("'seeds' must be a non-empty list of non-negative integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("'seeds' must be distinct")

    benchmark, evaluator, target = raw.get("benchmark"), raw.get("evaluator"), raw.get("target")
    if benchmark is not None:
        try:
            spec = get_benchmark(benchmark)
        except KeyError as exc:
            raise ConfigError(f"'benchmark': {exc.args[0]}") from None
        d_s = spec.problem.domain.dim
        if target is None:
            target = spec.target
    else:
        _check_keys(evaluator, _EVALUATOR_KEYS, "evaluator")
        for key in ("command", "lower", "upper", "n_outputs"):
            if key not in evaluator:
                raise ConfigError(f"missing key {key!r} in evaluator")
        try:
            d_s = DesignDomain(evaluator["lower"], evaluator["upper"]).dim
        except ValueError as exc:
            raise ConfigError(f"evaluator bounds: {exc}") from None
        if int(evaluator["n_outputs"]) < 1:
            raise ConfigError("evaluator 'n_outputs' must be at least 1")
    if target is not None and not np.isfinite(float(target)):
        raise ConfigError("'target' must be finite")

    defaults = raw.get("defaults", {})
    _check_keys(defaults, _RUN_KEYS, "defaults")
    overrides = raw.get("overrides", {})
    _check_keys(overrides, set(METHODS), "overrides")
    runs = {}
    for m in methods:
        merged = dict(defaults)
        for key, val in overrides.get(m, {}).items():
            if isinstance(val, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **val}
            else:
                merged[key] = val
        rc = _run_config(m, merged, f"overrides.{m}" if m in overrides else "defaults")
        if m != "BO" and rc.d_z > d_s:
            raise ConfigError(f"d_z={rc.d_z} for {m} exceeds the design dimension d_s={d_s}")
        runs[m] = rc
    parallelism = raw.get("parallelism")
    if parallelism is not None and (not isinstance(parallelism, int) or parallelism < 1):
        raise ConfigError("'parallelism' must be a positive integer")
    return ExperimentConfig(
        methods=list(methods), seeds=list(seeds), runs=runs, benchmark=benchmark,
        evaluator=dict(evaluator) if evaluator is not None else None,
        target=None if target is None else float(target),
        output_dir=str(raw.get("output_dir", "results")), parallelism=parallelism,
    )


# --------------------------------------------------------------------------
# external evaluator


class ExternalEvaluator:
    """Newline-delimited JSON bridge to a long-running child process.

    Each call writes ``{"s": [...]}`` and waits up to ``timeout`` seconds for
    one ``{"y": [...]}`` line.
    """

    def __init__(self, command, timeout: float = 60.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._proc = None
        self._lines: queue.Queue = queue.Queue()

    def _start(self):
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, encoding="utf-8", bufsize=1,
            )
        except OSError as exc:
            raise EvaluationError(f"cannot start evaluator {self.command!r}: {exc}") from exc
        threading.Thread(target=self._pump, args=(self._proc.stdout,), daemon=True).start()

    def _pump(self, stream):
        for line in stream:
            self._lines.put(line)
        self._lines.put(None)

    def __call__(self, s) -> np.ndarray:
        if self._proc is None:
            self._start()
        try:
            self._proc.stdin.write(json.dumps({"s": [float(v) for v in s]}) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EvaluationError(f"evaluator input closed: {exc}") from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise EvaluationError(f"evaluator timed out after {self.timeout} s") from None
        if line is None:
            raise EvaluationError("evaluator exited before replying")
        try:
            y = json.loads(line)["y"]
            return np.asarray(y, dtype=float).ravel()
        except (ValueError, KeyError, TypeError) as exc:
            raise EvaluationError(f"malformed evaluator line {line.strip()!r}") from exc

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        self._proc = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def external_evaluator(spec: dict) -> Problem:
    """Wrap an evaluator spec (``command``, ``lower``, ``upper``, ``n_outputs``, ``timeout``)."""
    domain = DesignDomain(spec["lower"], spec["upper"])
    ev = ExternalEvaluator(spec["command"], float(spec.get("timeout", 60.0)))
    return Problem(None, [], domain, name="external", evaluator=ev, n_outputs=int(spec["n_outputs"]))


# --------------------------------------------------------------------------
# running and summarising


def iterations_to_target(trace: Trace, target: float) -> int | None:
    """First adaptive iteration with a feasible objective below ``target``; 0 if the initial
    design already reaches it, ``None`` if never reached."""
    for r in trace.rows:
        if r.feasible and r.y[0] < target:
            return r.k
    return None


def _trace_name(method: str, seed: int) -> str:
    return f"trace_{method}_seed{seed}.csv"


def _one_run(args):
    cfg_dict, method, seed, out_dir = args
    config = parse_config(cfg_dict)
    rc = RunConfig(**{**asdict(config.runs[method]), "seed": seed})
    problem = config.problem()
    t0 = time.perf_counter()
    entry = {"method": method, "seed": seed, "file": _trace_name(method, seed)}
    try:
        trace = run(problem, rc)
        entry["status"] = "ok"
    except EvaluationError as exc:
        trace = exc.trace
        entry["status"] = "failed"
        entry["error"] = str(exc)
    except Exception as exc:
        trace = None
        entry["status"] = "failed"
        entry["error"] = f"{type(exc).__name__}: {exc}"
    finally:
        if problem.evaluator is not None:
            problem.evaluator.close()
    entry["wall_time"] = time.perf_counter() - t0
    if trace is not None and len(trace):
        trace.write_csv(Path(out_dir) / entry["file"])
        entry["n_evals"] = len(trace)
        entry["final_incumbent"] = _json_float(trace.final_incumbent())
    else:
        entry["file"] = None
    return entry


def _json_float(v: float):
    return float(v) if np.isfinite(v) else None


def run_experiment(config: ExperimentConfig, out_dir=None, parallelism: int | None = None) -> tuple[Path, bool]:
    """Execute every (method, seed) run; returns the results directory and an all-ok flag."""
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    offset = int(os.environ.get(SEED_OFFSET_ENV, "0"))
    workers = parallelism or config.parallelism or os.cpu_count() or 1
    canonical = config.canonical()
    jobs = [(canonical, m, s + offset, str(out)) for m in config.methods for s in config.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            entries = list(pool.map(_one_run, jobs))
    else:
        entries = [_one_run(j) for j in jobs]
    manifest = {
        "config": canonical,
        "config_hash": config.config_hash(),
        "seed_offset": offset,
        "versions": {"redspace": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "runs": entries,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    summarize(out)
    return out, all(e["status"] == "ok" for e in entries)


@dataclass
class ConvergenceSummary:
    """Per-method incumbent curves (mean/std across seeds) and iterations-to-target.

    Runs that never reach the target count as ``n_k`` iterations.
    """

    curves: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)


def summarize(directory) -> ConvergenceSummary:
    """Recompute summaries from the trace CSVs and manifest; writes two CSV files."""
    directory = Path(directory)
    with open(directory / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = manifest["config"]
    target = cfg.get("target")
    summary = ConvergenceSummary()
    for method in cfg["methods"]:
        n_k = cfg["overrides"][method]["n_k"]
        traces = [Trace.read_csv(directory / e["file"]) for e in manifest["runs"]
                  if e["method"] == method and e["file"] is not None]
        if not traces:
            continue
        curves = np.full((len(traces), n_k + 1), np.inf)
        for i, tr in enumerate(traces):
            inc = tr.incumbents
            ks = np.array([r.k for r in tr.rows])
            for k in range(n_k + 1):
                upto = inc[ks <= k]
                curves[i, k] = upto[-1] if upto.size else np.inf
        with np.errstate(invalid="ignore"):
            summary.curves[method] = (np.arange(n_k + 1), curves.mean(axis=0), curves.std(axis=0))
        if target is not None:
            its = [iterations_to_target(tr, target) for tr in traces]
            counts = np.array([n_k if v is None else v for v in its], dtype=float)
            summary.targets[method] = (float(counts.mean()), float(counts.std()),
                                       sum(v is not None for v in its), len(its))
    with open(directory / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "k", "mean_incumbent", "std_incumbent"])
        for method, (ks, mean, std) in summary.curves.items():
            for k, m, s in zip(ks, mean, std):
                w.writerow([method, int(k), "%.17g" % m, "%.17g" % s])
    if target is not None:
        with open(directory / "summary_targets.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "target", "mean_iterations", "std_iterations", "n_reached", "n_runs"])
            for method, (m, s, reached, total) in summary.targets.items():
                w.writerow([method, "%.17g" % target, "%.17g" % m, "%.17g" % s, reached, total])
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="redspace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run every (method, seed) in a config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--parallelism", type=int, default=None)
    p_sum = sub.add_parser("summarize", help="recompute summaries from a results directory")
    p_sum.add_argument("directory")
    sub.add_parser("list-benchmarks", help="list registered benchmark problems")
    args = parser.parse_args(argv)

    if args.command == "list-benchmarks":
        for b in benchmark_registry():
            extra = f"  target={b.target}" if b.target is not None else ""
            flags = "".join(f"  {k}={v}" for k, v in b.flags.items())
            print(f"{b.name}  d_s={b.problem.domain.dim}  d_y={b.problem.d_y}{extra}{flags}")
        return 0
    if args.command == "summarize":
        summary = summarize(args.directory)
        for method, (ks, mean, _) in summary.curves.items():
            print(f"{method}: final mean incumbent {mean[-1]:.6g}")
        for method, (m, s, reached, total) in summary.targets.items():
            print(f"{method}: iterations to target {m:.2f} ({s:.2f}), reached {reached}/{total}")
        return 0
    try:
        config = parse_config(args.config)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out, ok = run_experiment(config, args.out, args.parallelism)
    print(f"results written to {out}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
