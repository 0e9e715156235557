import csv
import json

import jsonschema
import numpy as np
import pytest
from scipy import stats

from diverse_pop.cli import main
from diverse_pop.experiments import (ConfigError, ExperimentConfig, convergence_step,
                                     halving_steps, initial_configuration, run_experiment,
                                     run_sweep)
from diverse_pop.telemetry import SNAPSHOT_SCHEMA, validate_record

SMOKE = {"n": 100, "weights": [1, 1], "steps": 100_000, "band": 0.1, "seed": 7}


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return p


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="weight"):
        ExperimentConfig.from_dict({**SMOKE, "weights": [1, 0.5]})
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_dict({**SMOKE, "colour_count": 2})
    with pytest.raises(ConfigError, match="missing"):
        ExperimentConfig.from_dict({"n": 10})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMOKE, "engine": "warp"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMOKE, "engine": "agentwise", "tracked": 2})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMOKE, "engine": "derandomized", "weights": [1, 1.5]})
    p = write(tmp_path, '{\n  "n": 100,\n  "weights": [1, 1]\n  "steps": 5\n}')
    with pytest.raises(ConfigError, match=r"cfg\.json:4:3"):
        ExperimentConfig.load(p)


def test_defaults():
    cfg = ExperimentConfig.from_dict({"n": 400, "weights": [1, 2], "steps": 10})
    assert cfg.cadence == 40 and cfg.band_value == pytest.approx(0.5) and cfg.window == 4000
    assert ExperimentConfig.from_dict(cfg.to_json()) == cfg


def test_initial_configurations():
    base = {"n": 10, "weights": [1, 2, 3], "steps": 1}
    worst = initial_configuration(ExperimentConfig.from_dict(base))
    assert worst.dark_counts == {0: 8, 1: 1, 2: 1}
    uni = initial_configuration(ExperimentConfig.from_dict({**base, "initial": "uniform"}))
    assert uni.dark_counts == {0: 4, 1: 3, 2: 3}
    exp = {**base, "initial": {"dark": [2, 3, 5]}}
    assert initial_configuration(ExperimentConfig.from_dict(exp)).dark_counts[2] == 5
    with pytest.raises(ConfigError):
        initial_configuration(ExperimentConfig.from_dict(
            {**base, "initial": {"dark": [2, 2, 2], "light": [1, 1, 2]}}))
    with pytest.raises(ConfigError):
        initial_configuration(ExperimentConfig.from_dict({**base, "initial": {"dark": [1, 1, 1]}}))
    ok = {**base, "initial": {"dark": [2, 2, 2], "light": [1, 1, 2]}, "allow_light_start": True}
    assert initial_configuration(ExperimentConfig.from_dict(ok)).light_counts[2] == 2


def test_smoke_run_converges_and_is_deterministic(tmp_path):
    cfg = ExperimentConfig.from_dict(SMOKE)
    a = run_experiment(cfg, out_dir=tmp_path / "a")
    b = run_experiment(cfg, out_dir=tmp_path / "b")
    assert a.error is None and a.sustainability["passed"]
    assert a.convergence_step is not None and a.convergence_step < 100_000
    ta = (tmp_path / "a" / "telemetry.jsonl").read_bytes()
    assert ta == (tmp_path / "b" / "telemetry.jsonl").read_bytes()
    lines = ta.decode().splitlines()
    assert len(lines) == 100_000 // cfg.cadence
    for line in lines:
        validate_record(json.loads(line))
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["convergence_step"] == a.convergence_step and report["passed"]


def test_schema_rejects_bad_records():
    good = {"t": 10, "parallel_t": 0.1, "phi": 1.0, "psi": 0.0, "sigma_sq": 0.5,
            "colours": [0, 1], "err": [0.1, 0.2],
            "regions": {r: True for r in SNAPSHOT_SCHEMA["properties"]["regions"]["required"]}}
    validate_record(good)
    for bad in ({**good, "extra": 1}, {**good, "t": -1}, {**good, "err": [0.1]},
                {k: v for k, v in good.items() if k != "phi"}):
        with pytest.raises(jsonschema.ValidationError):
            validate_record(bad)


def test_other_engines_run():
    for engine in ("agentwise", "derandomized"):
        cfg = ExperimentConfig.from_dict({**SMOKE, "engine": engine, "steps": 20_000})
        rep = run_experiment(cfg)
        assert rep.error is None and rep.final["n"] == 100 and rep.engine == engine


def test_agentwise_matches_counts_in_distribution():
    def finals(engine):
        cfg = ExperimentConfig.from_dict({"n": 50, "weights": [1, 2], "steps": 2000,
                                          "engine": engine, "snapshot_every": 2000})
        return [run_experiment(cfg, seed=s).final["dark_counts"]["0"] for s in range(200)]

    p = stats.ks_2samp(finals("counts"), finals("agentwise")).pvalue
    assert p > 0.01


def test_tracked_fairness_in_report():
    cfg = ExperimentConfig.from_dict({"n": 20, "weights": [1, 1], "steps": 400_000,
                                      "tracked": 2, "burn_in": 10_000,
                                      "fairness_tolerance": 0.15, "snapshot_every": 10_000})
    rep = run_experiment(cfg, seed=3)
    assert len(rep.fairness) == 2 and rep.passed


def test_sweep_outputs_and_worker_independence(tmp_path):
    cfg = ExperimentConfig.from_dict({**SMOKE, "steps": 20_000})
    one = run_sweep(cfg, [1, 2, 3], workers=1, out_dir=tmp_path / "one")
    two = run_sweep(cfg, [1, 2, 3], workers=2, out_dir=tmp_path / "two")
    strip = lambda rows: [{k: v for k, v in r.items() if k != "steps_per_sec"} for r in rows]
    assert strip(one.rows) == strip(two.rows)
    with open(tmp_path / "one" / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["seed"] for r in rows] == ["1", "2", "3", "summary"]
    agg = json.loads((tmp_path / "one" / "aggregate.json").read_text())
    assert agg["seeds"] == 3 and agg["complete"]
    with pytest.raises(ConfigError):
        run_sweep(cfg, [1, 1])


def test_convergence_step():
    steps = np.arange(0, 1000, 100)
    err = np.array([5, 4, 0.1, 3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1])
    assert convergence_step(steps, err, 0.5, 300) == (400, True)
    assert convergence_step(steps, err, 0.5, 10_000) == (400, False)
    assert convergence_step(steps, np.full(10, 9.0), 0.5, 300) == (None, False)


def test_halving_steps():
    steps = np.arange(6) * 10
    vals = np.array([100, 60, 50, 30, 24, 5])
    assert halving_steps(steps, vals, floor=1) == [20, 20, 10]
    assert halving_steps(steps, vals, floor=60) == [20]


def test_cli(tmp_path, capsys):
    assert main(["oracle", "stationary", "--k", "2", "--w", "1,2", "--n", "50"]) == 0
    assert main(["oracle", "stationary", "--k", "3", "--w", "1,2", "--n", "50"]) == 2
    assert main(["oracle", "ruin", "--p", "0.6", "--s", "3", "--b", "10"]) == 0
    assert main(["oracle", "ruin", "--p", "0.5", "--s", "3", "--b", "10"]) == 2
    assert main(["oracle", "kernel", "--n", "4"]) == 0
    capsys.readouterr()
    assert main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out) == SNAPSHOT_SCHEMA
    bad = write(tmp_path, {**SMOKE, "weights": [1, 0.5]}, "bad.json")
    assert main(["run", "--config", str(bad)]) == 2
    good = write(tmp_path, SMOKE, "good.json")
    assert main(["run", "--config", str(good), "--steps", "20000",
                 "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "telemetry.jsonl").exists()
    capsys.readouterr()
    assert main(["sweep", "--config", str(good), "--steps", "5000", "--seeds", "1-2",
                 "--workers", "1", "--out", str(tmp_path / "sw")]) == 0
    assert (tmp_path / "sw" / "sweep.csv").exists()
