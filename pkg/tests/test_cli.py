import csv
import json
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from redspace.cli import (
    ConfigError,
    ExternalEvaluator,
    iterations_to_target,
    main,
    parse_config,
    run_experiment,
    summarize,
)
from redspace.optimizer import EvaluationError, Trace, run

FAST = {"n_k": 2, "n_l": 8, "gp_restarts": 1, "ga_generations": 2, "init": {"pbd": True, "n_lhs": 1}}

ILLUSTRATIVE_CHILD = textwrap.dedent("""
    import json, sys
    from redspace.benchmarks import illustrative_objective, illustrative_constraint
    for line in sys.stdin:
        s = json.loads(line)["s"]
        print(json.dumps({"y": [illustrative_objective(s), illustrative_constraint(s)]}), flush=True)
""")

SUM_CHILD = textwrap.dedent("""
    import json, sys
    for line in sys.stdin:
        s = json.loads(line)["s"]
        y = float("nan") if s[0] > 0.5 else sum(s)
        print(json.dumps({"y": [y, -1.0]}), flush=True)
""")


def _script(tmp_path, name, body):
    path = tmp_path / name
    path.write_text(body)
    return [sys.executable, str(path)]


def test_minimal_config_gets_defaults():
    cfg = parse_config({"benchmark": "illustrative-constrained", "method": "PPLS-BO", "seeds": [0]})
    rc = cfg.runs["PPLS-BO"]
    assert rc.acquisition.kind == "EI" and rc.acquisition.xi == 0.0 and rc.acquisition.rho == -1.0
    assert rc.n_l == 1000 and rc.n_t == 100 and rc.n_k == 100
    assert cfg.seeds == [0] and cfg.methods == ["PPLS-BO"]


def test_cantilever_config_inherits_target():
    cfg = parse_config({"benchmark": "cantilever-periodic-unconstrained", "methods": ["BO"]})
    assert cfg.target == 7.44


@pytest.mark.parametrize("raw,needle", [
    ({"benchmark": "illustrative-constrained", "method": "PLS-BO", "defaults": {"d_z": 21}}, "d_z"),
    ({"benchmark": "illustrative-constrained", "method": "BO", "colour": 1}, "colour"),
    ({"benchmark": "illustrative-constrained", "method": "BO", "defaults": {"nk": 3}}, "nk"),
    ({"benchmark": "illustrative-constrained", "method": "BO", "defaults": {"acquisition": {"kappa": 1}}},
     "kappa"),
    ({"benchmark": "nope", "method": "BO"}, "nope"),
    ({"benchmark": "illustrative-constrained", "method": "BO", "seeds": [1, 1]}, "distinct"),
    ({"benchmark": "illustrative-constrained", "method": "XX"}, "XX"),
    ({"benchmark": "illustrative-constrained", "method": "PPLS-BO", "defaults": {"n_l": 1}}, "n_l"),
])
def test_invalid_configs_name_the_problem(raw, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(raw)


def test_canonical_round_trip(tmp_path):
    raw = {"benchmark": "illustrative-constrained", "methods": ["BO", "PLS-BO"], "seeds": [3, 1],
           "defaults": {"n_k": 7, "acquisition": {"kind": "UCB"}},
           "overrides": {"PLS-BO": {"d_z": 3, "acquisition": {"gamma": 0.5}}}}
    cfg = parse_config(raw)
    assert cfg.runs["PLS-BO"].acquisition.kind == "UCB" and cfg.runs["PLS-BO"].acquisition.gamma == 0.5
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.canonical()))
    again = parse_config(path)
    assert again.canonical() == cfg.canonical()
    assert again.config_hash() == cfg.config_hash()
    raw["defaults"]["n_k"] = 8
    assert parse_config(raw).config_hash() != cfg.config_hash()
    raw["defaults"]["n_k"] = 7
    raw["output_dir"] = "elsewhere"
    assert parse_config(raw).config_hash() == cfg.config_hash()


def _experiment(tmp_path, **extra):
    raw = {"benchmark": "illustrative-constrained", "methods": ["BO", "PLS-BO"], "seeds": [0, 1, 2],
           "defaults": dict(FAST), "parallelism": 1}
    raw.update(extra)
    return parse_config(raw)


def test_run_experiment_files_and_determinism(tmp_path):
    cfg = _experiment(tmp_path)
    out, ok = run_experiment(cfg, tmp_path / "a")
    assert ok
    traces = sorted(p.name for p in out.glob("trace_*.csv"))
    assert len(traces) == 6
    assert (out / "summary.csv").exists() and (out / "manifest.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.config_hash()
    assert all(r["status"] == "ok" and r["wall_time"] >= 0 for r in manifest["runs"])
    out2, _ = run_experiment(cfg, tmp_path / "b", parallelism=2)
    for name in traces:
        assert (out / name).read_bytes() == (out2 / name).read_bytes()
    assert (out / "summary.csv").read_bytes() == (out2 / "summary.csv").read_bytes()


def test_summary_matches_independent_recomputation(tmp_path):
    cfg = _experiment(tmp_path, target=-0.3)
    out, _ = run_experiment(cfg, tmp_path / "r")
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    for method in ("BO", "PLS-BO"):
        curves = []
        for seed in (0, 1, 2):
            with open(out / f"trace_{method}_seed{seed}.csv") as fh:
                recs = list(csv.DictReader(fh))
            curve = []
            for k in range(3):
                vals = [float(r["incumbent"]) for r in recs if int(r["k"]) <= k]
                curve.append(vals[-1])
            curves.append(curve)
        curves = np.array(curves)
        got = [r for r in rows if r["method"] == method]
        np.testing.assert_array_equal([float(r["mean_incumbent"]) for r in got], curves.mean(axis=0))
        np.testing.assert_array_equal([float(r["std_incumbent"]) for r in got], curves.std(axis=0))
    before = (out / "summary_targets.csv").read_bytes()
    summarize(out)
    assert (out / "summary_targets.csv").read_bytes() == before


def test_seed_offset_env(tmp_path, monkeypatch):
    monkeypatch.setenv("REDSPACE_SEED_OFFSET", "10")
    cfg = parse_config({"benchmark": "illustrative-constrained", "method": "BO", "seeds": [0],
                        "defaults": dict(FAST), "parallelism": 1})
    out, ok = run_experiment(cfg, tmp_path)
    assert ok and (out / "trace_BO_seed10.csv").exists()


def test_external_evaluator_matches_in_process(tmp_path):
    command = _script(tmp_path, "child.py", ILLUSTRATIVE_CHILD)
    evaluator = {"command": command, "lower": [0.0] * 20, "upper": [1.0] * 20, "n_outputs": 2}
    for method in ("BO", "PPLS-BO"):
        ext = parse_config({"evaluator": evaluator, "method": method, "defaults": dict(FAST)})
        local = parse_config({"benchmark": "illustrative-constrained", "method": method, "defaults": dict(FAST)})
        problem = ext.problem()
        try:
            a = run(problem, ext.runs[method])
        finally:
            problem.evaluator.close()
        b = run(local.problem(), local.runs[method])
        assert a.to_csv() == b.to_csv()


def test_external_evaluator_nan_reports_iteration(tmp_path):
    command = _script(tmp_path, "sum.py", SUM_CHILD)
    cfg = parse_config({"evaluator": {"command": command, "lower": [0.0, 0.0], "upper": [0.4, 1.0],
                                      "n_outputs": 2}, "method": "BO",
                        "defaults": {**FAST, "init": {"pbd": False, "n_lhs": 3}}})
    problem = cfg.problem()
    tr = run(problem, cfg.runs["BO"])
    problem.evaluator.close()
    assert len(tr) == 5

    cfg = parse_config({"evaluator": {"command": command, "lower": [0.0, 0.0], "upper": [1.0, 1.0],
                                      "n_outputs": 2}, "method": "BO", "defaults": dict(FAST)})
    problem = cfg.problem()
    with pytest.raises(EvaluationError, match="iteration 0"):
        run(problem, cfg.runs["BO"])
    problem.evaluator.close()


def test_external_evaluator_errors(tmp_path):
    silent = _script(tmp_path, "silent.py", "import sys, time\nfor line in sys.stdin:\n    time.sleep(5)\n")
    ev = ExternalEvaluator(silent, timeout=0.5)
    with pytest.raises(EvaluationError, match="timed out"):
        ev([0.1])
    ev.close()
    bad = _script(tmp_path, "bad.py", "import sys\nfor line in sys.stdin:\n    print('hello', flush=True)\n")
    ev = ExternalEvaluator(bad)
    with pytest.raises(EvaluationError, match="malformed"):
        ev([0.1])
    ev.close()
    with pytest.raises(EvaluationError, match="cannot start"):
        ExternalEvaluator(["/nonexistent/evaluator"])([0.1])


def test_failed_run_is_recorded_and_others_continue(tmp_path):
    command = _script(tmp_path, "sum.py", SUM_CHILD)
    cfg = parse_config({"evaluator": {"command": command, "lower": [0.0, 0.0], "upper": [1.0, 1.0],
                                      "n_outputs": 2}, "methods": ["BO", "PLS-BO"], "seeds": [0],
                        "defaults": dict(FAST), "parallelism": 1})
    out, ok = run_experiment(cfg, tmp_path / "f")
    assert not ok
    manifest = json.loads((out / "manifest.json").read_text())
    assert [r["status"] for r in manifest["runs"]] == ["failed", "failed"]
    assert all("iteration" in r["error"] for r in manifest["runs"])


def _trace(values):
    tr = Trace("BO", 0)
    for i, v in enumerate(values):
        tr.append(0 if i < 2 else i - 1, [0.0], [v])
    return tr


def test_iterations_to_target_examples():
    tr = _trace([1.0, 0.5, 0.7, 0.2, 0.1])
    assert iterations_to_target(tr, 0.6) == 0
    assert iterations_to_target(tr, 0.3) == 2
    assert iterations_to_target(tr, 0.0) is None


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=20), st.floats(-10, 10), st.floats(0, 5))
def test_iterations_to_target_scan_and_monotone(values, target, bump):
    tr = _trace(values)
    ks = [0, 0] + list(range(1, len(values) - 1))
    scan = next((k for k, v in zip(ks, values) if v < target), None)
    assert iterations_to_target(tr, target) == scan
    higher = iterations_to_target(tr, target + bump)
    if scan is not None:
        assert higher is not None and higher <= scan


def test_cli_main(tmp_path, capsys):
    assert main(["list-benchmarks"]) == 0
    assert "cantilever-periodic-unconstrained" in capsys.readouterr().out
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"benchmark": "illustrative-constrained", "method": "PCA-BO",
                                "defaults": dict(FAST)}))
    assert main(["run", str(path), "--out", str(tmp_path / "o"), "--parallelism", "1"]) == 0
    assert main(["summarize", str(tmp_path / "o")]) == 0
    assert "PCA-BO" in capsys.readouterr().out
    path.write_text(json.dumps({"benchmark": "illustrative-constrained", "method": "PCA-BO", "bogus": 1}))
    assert main(["run", str(path)]) == 2
