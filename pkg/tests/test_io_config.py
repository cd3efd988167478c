from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from giqs.config import ConfigError, DEFAULTS, parse_config
from giqs.io import (MAGIC, config_hash, dumps, read_container, read_csv, read_json,
                     to_jsonable, write_container, write_csv, write_json)


def cfg(**model):
    return json.dumps({"model": {"kind": "torus", **model}})


def test_minimal_config_gets_defaults():
    c = parse_config(cfg())
    assert c.model.kind == "torus"
    assert c.section("resonance") == {"delta": 0.5, "mu": 0.25, "R": 8.0}
    assert c.section("run", "evolve", "dt") == DEFAULTS["run"]["evolve"]["dt"]
    assert c.seed == 0 and c.with_seed(7).seed == 7


def test_delta_out_of_range():
    text = json.dumps({"model": {"kind": "torus"}, "resonance": {"delta": 1.5}})
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert any(v.startswith("resonance.delta") for v in err.value.violations)


def test_ell_zero_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config(cfg(kind="anharmonic", ell=0))
    assert err.value.violations == [err.value.violations[0]]
    assert err.value.violations[0].startswith("model.ell")


def test_all_violations_collected():
    text = json.dumps({"model": {"kind": "torus", "colour": 1}, "resonance": {"delta": 3.0},
                       "run": {"evolve": {"dt": -1}, "melnikov": {"r": 1}}, "extra": {}})
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    v = err.value.violations
    for prefix in ("model.colour", "resonance.delta", "run.evolve.dt", "run.melnikov.r", "extra"):
        assert any(x.startswith(prefix) for x in v), prefix


def test_missing_model_kind():
    with pytest.raises(ConfigError) as err:
        parse_config("{}")
    assert any("model.kind" in v for v in err.value.violations)


def test_syntax_error_location():
    with pytest.raises(ConfigError) as err:
        parse_config('{"model":\n  {"kind": "torus",}}')
    assert err.value.violations[0].startswith("syntax error at line 2, column")


def test_magnetic_needs_torus():
    text = json.dumps({"model": {"kind": "sphere", "n": 2}})
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert any("magnetic-torus" in v for v in err.value.violations)


def test_metric_checks():
    with pytest.raises(ConfigError):
        parse_config(cfg(metric=[[1, 2], [2, 1]]))
    with pytest.raises(ConfigError):
        parse_config(cfg(metric=[[1, 0, 0]]))
    assert parse_config(cfg(metric=[[2, 1], [1, 2]])).model is not None


def test_budget_violation(monkeypatch):
    monkeypatch.setenv("GIQS_BUDGET_MB", "1")
    with pytest.raises(ConfigError) as err:
        parse_config(cfg())
    assert any("run.spectrum.cutoff" in v and "budget" in v for v in err.value.violations)


def test_jsonable_non_finite_and_numpy():
    obj = {"a": np.float64(math.inf), "b": [np.int32(3), -math.inf, math.nan],
           "c": np.array([1.5, 2.0]), "d": 1 + 2j, 3: True}
    assert to_jsonable(obj) == {"a": "inf", "b": [3, "-inf", "nan"], "c": [1.5, 2.0],
                                "d": [1.0, 2.0], "3": True}


def test_dumps_is_canonical():
    assert dumps({"b": 1, "a": 0.1}) == dumps({"a": 0.1, "b": 1})
    assert config_hash({"x": [1, 2]}) == config_hash({"x": (1, 2)})
    assert config_hash({"x": 1}) != config_hash({"x": 2})


@given(st.dictionaries(st.text(max_size=5),
                       st.one_of(st.floats(allow_nan=False, allow_infinity=False),
                                 st.integers(-10**6, 10**6), st.text(max_size=5)), max_size=6))
def test_json_round_trip(obj):
    assert json.loads(dumps(obj)) == obj


def test_json_file_round_trip(tmp_path):
    p = write_json(tmp_path / "sub" / "r.json", {"x": [0.1, 2]})
    assert read_json(p) == {"x": [0.1, 2]}


def test_csv_round_trip(tmp_path):
    rows = [[0.1, 1e-17, 3], [math.pi, -2.5, 0]]
    p = write_csv(tmp_path / "t.csv", ["a", "b", "c"], rows)
    header, data = read_csv(p)
    assert header == ["a", "b", "c"]
    np.testing.assert_array_equal(data, np.array(rows, dtype=float))


@given(arrays(np.complex128, st.tuples(st.integers(0, 4), st.integers(1, 5)),
              elements=st.complex_numbers(allow_nan=False, allow_infinity=False, max_magnitude=1e6)))
def test_container_round_trip(tmp_path_factory, arr):
    p = tmp_path_factory.mktemp("c") / "x.giqs"
    write_container(p, arr, {"note": "t"})
    back, header = read_container(p)
    np.testing.assert_array_equal(back, arr)
    assert header["shape"] == list(arr.shape) and header["meta"] == {"note": "t"}


def test_container_layout(tmp_path):
    p = write_container(tmp_path / "x.giqs", np.array([1 + 2j]))
    raw = p.read_bytes()
    assert raw[:5] == MAGIC
    n = int.from_bytes(raw[5:9], "little")
    assert json.loads(raw[9:9 + n])["dtype"] == "complex128-le"
    assert np.frombuffer(raw[9 + n:], "<c16")[0] == 1 + 2j


def test_container_rejects_garbage(tmp_path):
    p = tmp_path / "bad.giqs"
    p.write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        read_container(p)
    write_container(p, np.zeros(4, complex))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_container(p)
