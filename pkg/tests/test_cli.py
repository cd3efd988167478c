from __future__ import annotations

import json

import jsonschema
import numpy as np
import pytest

from giqs import cli
from giqs.config import parse_config
from giqs.errors import GiqsError
from giqs.io import load_schema, read_container, read_csv, read_json

SMALL_RUN = {
    "partition": {"annulus": [8, 20]},
    "clusters": {"E_max": 200},
    "melnikov": {"cutoff": 6},
    "steepness": {"n_points": 4, "n_subspaces": 2, "n_lines": 5, "samples_per_line": 51},
    "spectrum": {"cutoff": 16, "n_shells": 3},
    "normalform": {"cutoff": 16, "n_shells": 3},
    "evolve": {"cutoff": 8, "t1": 10, "n_records": 12, "fit_window": [1, 10],
               "checkpoints": [5.0]},
}


def write_cfg(tmp_path, model=None, run=None, name="cfg.json"):
    doc = {"model": model or {"kind": "torus"}, "run": run or SMALL_RUN,
           "output": {"dir": str(tmp_path / "out")}}
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


@pytest.fixture(scope="module")
def validator():
    schema = load_schema()
    jsonschema.Draft202012Validator.check_schema(schema)
    return jsonschema.Draft202012Validator(schema)


@pytest.mark.parametrize("sub", ["partition", "clusters", "steepness", "spectrum", "normalform", "evolve"])
def test_subcommands_run_and_validate(tmp_path, validator, sub):
    p = write_cfg(tmp_path)
    code = cli.main([sub, "--config", str(p)])
    assert code == 0
    rec = read_json(tmp_path / "out" / f"{sub}-seed0.json")
    validator.validate(rec)
    assert rec["subcommand"] == sub and rec["n_violations"] == 0
    assert rec["experiment_id"] == f"{sub}-{rec['config_hash'][:12]}-seed0"


def test_melnikov_reports_violations(tmp_path, validator):
    p = write_cfg(tmp_path, model={"kind": "torus", "d": 1})
    assert cli.main(["melnikov", "--config", str(p)]) == 2
    rec = read_json(tmp_path / "out" / "melnikov-seed0.json")
    validator.validate(rec)
    assert rec["n_violations"] > 0


def test_config_error_exit(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"model": {"kind": "torus"}, "resonance": {"delta": 1.5}}')
    assert cli.main(["partition", "--config", str(p)]) == 1
    assert "resonance.delta" in capsys.readouterr().err
    assert cli.main(["partition", "--config", str(tmp_path / "missing.json")]) == 1


def test_runtime_error_exit(tmp_path, monkeypatch, capsys):
    def boom(cfg, files):
        raise GiqsError("injected fault")

    monkeypatch.setitem(cli.RUNNERS, "clusters", boom)
    assert cli.main(["clusters", "--config", str(write_cfg(tmp_path))]) == 1
    assert "injected fault" in capsys.readouterr().err


def test_injected_violation_exit(tmp_path, monkeypatch):
    monkeypatch.setitem(cli.RUNNERS, "clusters", lambda cfg, files: ({}, 3))
    assert cli.main(["clusters", "--config", str(write_cfg(tmp_path))]) == 2


def test_deterministic_apart_from_timing(tmp_path):
    p = write_cfg(tmp_path)
    recs = []
    for out in ("a", "b"):
        cli.main(["evolve", "--config", str(p), "--out", str(tmp_path / out), "--seed", "3"])
        rec = read_json(tmp_path / out / "evolve-seed3.json")
        rec.pop("timing")
        recs.append(rec)
    assert recs[0] == recs[1]
    a, _ = read_container(tmp_path / "a" / "evolve-seed3.giqs")
    b, _ = read_container(tmp_path / "b" / "evolve-seed3.giqs")
    np.testing.assert_array_equal(a, b)


def test_zero_perturbation_norms_constant(tmp_path):
    run = json.loads(json.dumps(SMALL_RUN))
    run["evolve"]["perturbation"] = {"kind": "zero"}
    p = write_cfg(tmp_path, run=run)
    assert cli.main(["evolve", "--config", str(p)]) == 0
    header, data = read_csv(tmp_path / "out" / "evolve-seed0.csv")
    assert header[:2] == ["t", "l2"]
    assert np.ptp(data[:, 1:-1], axis=0).max() <= 1e-12
    rec = read_json(tmp_path / "out" / "evolve-seed0.json")
    assert abs(rec["payload"]["growth"]["exponent"]) <= 1e-10
    states, head = read_container(tmp_path / "out" / "evolve-seed0.giqs")
    assert states.shape[0] == 3 and head["meta"]["rows"][0] == "initial"


def test_seed_sweep_with_jobs(tmp_path):
    run = dict(SMALL_RUN, seeds=[1, 2, 3])
    p = write_cfg(tmp_path, run=run)
    assert cli.main(["clusters", "--config", str(p), "--jobs", "2"]) == 0
    for s in (1, 2, 3):
        assert (tmp_path / "out" / f"clusters-seed{s}.json").exists()
        assert (tmp_path / "out" / f"clusters-seed{s}.csv").exists()


def test_run_api_and_paths(tmp_path):
    cfg = parse_config(write_cfg(tmp_path).read_text())
    rec, code = cli.run(cfg, "partition", tmp_path / "api")
    assert code == 0 and rec["files"] == {}
    with pytest.raises(GiqsError):
        cli.run(cfg, "nothing", tmp_path)


def test_bad_jobs_flag(tmp_path):
    assert cli.main(["clusters", "--config", str(write_cfg(tmp_path)), "--jobs", "0"]) == 1
