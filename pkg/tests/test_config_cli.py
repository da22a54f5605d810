import json

import pytest

from relloc.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from relloc.config import config_hash, experiment_config, load_experiment, merge
from relloc.errors import ConfigError

SMALL_NDE = """
seed = 3
[nde]
samples = 300
chains = 40
steps = 200
burn = 50
curve_sizes = [200, 300]
test_size = 300
"""


def test_config_roundtrip(tmp_path):
    p = tmp_path / "exp.toml"
    p.write_text('preset = "table2"\ntrials = 3\nsigmas = [0.01]\n[window]\nwindow = 8\ndrop = 4\neval_instants = 8\n')
    cfg, doc = load_experiment(p, {"seed": 7})
    assert cfg.trials == 3 and cfg.sigmas == (0.01,) and cfg.seed == 7 and cfg.window == 8
    assert config_hash(doc) == config_hash(dict(reversed(list(doc.items()))))


def test_config_json_and_errors(tmp_path):
    p = tmp_path / "exp.json"
    p.write_text(json.dumps({"trials": 2, "algorithms": "alg1,alg2"}))
    cfg, _ = load_experiment(p)
    assert cfg.algorithms == ("alg1", "alg2")
    with pytest.raises(ConfigError):
        experiment_config({"bogus": 1})
    with pytest.raises(ConfigError):
        experiment_config({"window": {"nope": 3}})
    with pytest.raises(ConfigError):
        experiment_config({"preset": "unknown"})
    with pytest.raises(ConfigError):
        load_experiment(tmp_path / "missing.toml")
    assert merge({"a": 1, "t": {"x": 1}}, {"a": None, "t": {"y": 2}}) == {"a": 1, "t": {"x": 1, "y": 2}}


def _simulate(out, *extra):
    return main(["simulate", "--trials", "2", "--sigma", "0.01", "--algs", "alg1,alg2", "--seed", "4",
                 "--threads", "1", "--quiet", "--out-dir", str(out), *extra])


def test_simulate_deterministic_bytes(tmp_path):
    assert _simulate(tmp_path / "a") == EXIT_OK
    assert _simulate(tmp_path / "b") == EXIT_OK
    for name in ("summary.csv", "trials.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["status"] == "ok" and man["seed"] == 4
    head = (tmp_path / "a" / "summary.csv").read_text().splitlines()[0]
    assert head == "sigma,space,algorithm,trials,failures,mean_rmse,var_rmse"


def test_usage_errors(tmp_path, capsys):
    assert main(["simulate", "--sigma", "abc", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert main(["simulate", "--algs", "nope", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert main(["bogus"]) == EXIT_USAGE
    assert main(["nde", "eval", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert main(["nde", "eval", "--model", str(tmp_path / "none.bin"), "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("RELLOC_THREADS", "0")
    assert _simulate(tmp_path) == EXIT_USAGE


def test_nde_train_eval(tmp_path):
    cfg = tmp_path / "nde.toml"
    cfg.write_text(SMALL_NDE)
    out = tmp_path / "out"
    assert main(["nde", "train", "--config", str(cfg), "--out-dir", str(out), "--quiet"]) == EXIT_OK
    assert (out / "nde_model.bin").is_file()
    assert main(["nde", "eval", "--config", str(cfg), "--model", str(out / "nde_model.bin"),
                 "--out-dir", str(out), "--quiet"]) == EXIT_OK
    rows = (out / "tv.csv").read_text().splitlines()
    assert rows[0] == "component,tv_distance,mode_in_oracle_68" and len(rows) == 5
    assert (out / "marginals.csv").read_text().startswith("component,x,learned_density,oracle_density")


def test_robust_demo(tmp_path):
    assert main(["robust-demo", "--trials", "20", "--out-dir", str(tmp_path), "--quiet"]) == EXIT_OK
    assert (tmp_path / "outliers.csv").is_file()
    recs = [json.loads(l) for l in (tmp_path / "failures.jsonl").read_text().splitlines()]
    assert {r["scenario"] for r in recs} == {"angle:1", "range:2", "disp:1", "angle:1,2"}
