"""Experiment configuration: JSON parsing, defaults and exhaustive validation."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GiqsError
from .lattice import budget_bytes, build_model, lattice_arrays

MODEL_KINDS = ("torus", "sphere", "lie", "anharmonic")
POTENTIAL_KINDS = ("trigonometric", "convolution", "random-decay")
PERTURBATION_KINDS = ("magnetic-torus", "convolution-potential", "random-decay", "zero")
DENSE_MATRICES = 4  # working float64 matrices held at once
REQUIRED = object()


class ConfigError(GiqsError):
    """Every problem found in a configuration document."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


def _potential_defaults():
    return {"kind": "trigonometric", "eps": 0.1, "nu": 4.0, "k_max": 3.0, "order": 0.0}


# leaf value: default; nested dict: section; REQUIRED marks mandatory keys
DEFAULTS = {
    "model": {"kind": REQUIRED, "d": 2, "metric": None, "n": 2, "group": None,
              "weights": None, "ell": 2, "kappa": None},
    "resonance": {"delta": None, "mu": 0.25, "R": 8.0},
    "run": {
        "seed": 0,
        "seeds": None,
        "partition": {"annulus": [8.0, 64.0], "include_members": False},
        "clusters": {"E_max": 1e4},
        "melnikov": {"r": 4, "cutoff": 10.0, "gamma": 1.0, "tau": 1.0, "max_report": 1000},
        "steepness": {"s": 1, "annulus": None, "n_points": 32, "n_subspaces": 4,
                      "n_lines": 50, "samples_per_line": 201, "zero_threshold": 1e-3},
        "spectrum": {"cutoff": 40.0, "potential": _potential_defaults(), "omega_only": True,
                     "n_shells": 6, "statistic": "max"},
        "normalform": {"cutoff": 40.0, "steps": 1, "potential": _potential_defaults(),
                       "n_shells": 8, "bookkeeping_tol": 1e-10},
        "evolve": {"cutoff": 32.0, "t0": 0.0, "t1": 1000.0, "dt": 0.2, "s_list": [0.0, 1.0, 2.0],
                   "n_records": 60, "fit_s": 2.0, "fit_window": [1.0, 1000.0], "checkpoints": [],
                   "perturbation": {"kind": "magnetic-torus", "amplitude": 0.1, "potential": 0.1,
                                    "n_modes": 2, "k_max": 2.0, "nu": 4.0,
                                    "frequencies": [1.0, math.sqrt(2.0), math.sqrt(3.0)],
                                    "order": 0.0},
                   "initial": {"center": None, "width": 1.0},
                   "l2_tol": 1e-8},
    },
    "output": {"dir": "giqs_out", "csv": True, "binary": True},
}

# free-form (list/None) leaves whose value is not itself a section
FREE = {("model", "metric"), ("model", "weights"), ("model", "kappa")}


@dataclass
class ExperimentConfig:
    raw: dict
    data: dict
    model: object = field(repr=False, default=None)

    def section(self, *path):
        node = self.data
        for p in path:
            node = node[p]
        return node

    @property
    def seed(self) -> int:
        return int(self.data["run"]["seed"])

    def with_seed(self, seed: int) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        data["run"]["seed"] = int(seed)
        return ExperimentConfig(self.raw, data, self.model)


def _merge(defaults: dict, given, path: tuple, errors: list) -> dict:
    if not isinstance(given, dict):
        errors.append(f"{'.'.join(path) or '<root>'}: expected an object")
        given = {}
    out = {}
    for key in sorted(set(given) - set(defaults)):
        errors.append(f"{'.'.join(path + (key,))}: unknown key")
    for key, dv in defaults.items():
        p = path + (key,)
        if isinstance(dv, dict) and p not in FREE:
            out[key] = _merge(dv, given.get(key, {}), p, errors)
        elif key in given:
            out[key] = given[key]
        elif dv is REQUIRED:
            errors.append(f"{'.'.join(p)}: required key missing")
            out[key] = None
        else:
            out[key] = copy.deepcopy(dv)
    return out


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


class _Checker:
    def __init__(self, data: dict):
        self.data = data
        self.errors: list[str] = []

    def get(self, path: str):
        node = self.data
        for p in path.split("."):
            node = node[p]
        return node

    def fail(self, path: str, msg: str):
        self.errors.append(f"{path}: {msg}")

    def number(self, path, lo=None, hi=None, strict_lo=False, integer=False, nullable=False):
        v = self.get(path)
        if v is None and nullable:
            return None
        if not (_int(v) if integer else _num(v)):
            self.fail(path, f"expected {'an integer' if integer else 'a finite number'}, got {v!r}")
            return None
        if lo is not None and (v <= lo if strict_lo else v < lo):
            self.fail(path, f"must be {'>' if strict_lo else '>='} {lo}, got {v!r}")
            return None
        if hi is not None and v > hi:
            self.fail(path, f"must be <= {hi}, got {v!r}")
            return None
        return v

    def boolean(self, path):
        v = self.get(path)
        if not isinstance(v, bool):
            self.fail(path, f"expected true/false, got {v!r}")

    def choice(self, path, options, nullable=False):
        v = self.get(path)
        if v is None and nullable:
            return None
        if v not in options:
            self.fail(path, f"must be one of {list(options)}, got {v!r}")
            return None
        return v

    def numbers(self, path, length=None, nullable=False, increasing=False, positive=False):
        v = self.get(path)
        if v is None and nullable:
            return None
        if not isinstance(v, list) or not all(_num(x) for x in v):
            self.fail(path, f"expected a list of numbers, got {v!r}")
            return None
        if length is not None and len(v) != length:
            self.fail(path, f"expected {length} entries, got {len(v)}")
            return None
        if increasing and any(b <= a for a, b in zip(v[:-1], v[1:])):
            self.fail(path, "entries must be strictly increasing")
            return None
        if positive and any(x < 0 for x in v):
            self.fail(path, "entries must be >= 0")
            return None
        return v


def _estimate_states(model, cutoff: float) -> int:
    vol = math.pi ** (model.d / 2) / math.gamma(model.d / 2 + 1) * (cutoff + 1) ** model.d
    if vol > 5e6:
        return int(vol)
    idx, _ = lattice_arrays(model, model.min_radius, cutoff)
    return int(sum(model.multiplicity(tuple(r)) for r in idx.tolist()))


def _check_model(c: _Checker):
    n_before = len(c.errors)
    kind = c.choice("model.kind", MODEL_KINDS)
    c.number("model.d", lo=1, integer=True)
    c.number("model.n", lo=2, integer=True)
    c.number("model.ell", lo=1, integer=True)
    c.choice("model.group", ("su2", "su3"), nullable=True)
    metric = c.get("model.metric")
    if metric is not None:
        if not (isinstance(metric, list) and all(isinstance(r, list) and all(_num(x) for x in r)
                                                 for r in metric)):
            c.fail("model.metric", "expected a square matrix of numbers")
        else:
            M = np.array(metric, dtype=float)
            d = c.get("model.d")
            if not _int(d) or M.shape != (d, d):
                c.fail("model.metric", f"expected a {d}x{d} matrix")
            elif not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() <= 0:
                c.fail("model.metric", "must be symmetric positive definite")
    kappa = c.get("model.kappa")
    if kappa is not None and (not isinstance(kappa, list) or not all(_num(x) for x in kappa)):
        c.fail("model.kappa", "expected a list of numbers")
    if kind == "lie" and c.get("model.group") is None and c.get("model.weights") is None:
        c.fail("model.group", "lie model needs 'group' or 'weights'")
    if len(c.errors) > n_before:
        return None
    params = {k: v for k, v in c.get("model").items() if k != "kind" and v is not None}
    try:
        return build_model(kind, **params)
    except (ValueError, GiqsError) as exc:
        c.fail("model", str(exc))
        return None


def _check_potential(c: _Checker, base: str):
    c.choice(f"{base}.kind", POTENTIAL_KINDS)
    c.number(f"{base}.eps", lo=0)
    c.number(f"{base}.nu", lo=0)
    c.number(f"{base}.k_max", lo=0, strict_lo=True)
    c.number(f"{base}.order", hi=0)


def _check_run(c: _Checker, model):
    c.number("run.seed", lo=0, integer=True)
    seeds = c.get("run.seeds")
    if seeds is not None and (not isinstance(seeds, list) or not seeds
                              or not all(_int(s) and s >= 0 for s in seeds)):
        c.fail("run.seeds", "expected a non-empty list of non-negative integers")
    c.numbers("run.partition.annulus", length=2, increasing=True, positive=True)
    c.boolean("run.partition.include_members")
    c.number("run.clusters.E_max", lo=0, strict_lo=True)
    c.number("run.melnikov.r", lo=2, integer=True)
    c.number("run.melnikov.cutoff", lo=0, strict_lo=True)
    c.number("run.melnikov.gamma", lo=0, strict_lo=True)
    c.number("run.melnikov.tau", lo=0)
    c.number("run.melnikov.max_report", lo=0, integer=True)
    s = c.number("run.steepness.s", lo=1, integer=True)
    if model is not None and s is not None and model.d >= 2 and s > model.d - 1:
        c.fail("run.steepness.s", f"must be <= d - 1 = {model.d - 1}")
    c.numbers("run.steepness.annulus", length=2, increasing=True, positive=True, nullable=True)
    for k in ("n_points", "n_subspaces", "n_lines"):
        c.number(f"run.steepness.{k}", lo=1, integer=True)
    c.number("run.steepness.samples_per_line", lo=3, integer=True)
    c.number("run.steepness.zero_threshold", lo=0, strict_lo=True)
    for sec in ("spectrum", "normalform"):
        c.number(f"run.{sec}.cutoff", lo=0, strict_lo=True)
        c.number(f"run.{sec}.n_shells", lo=2, integer=True)
        _check_potential(c, f"run.{sec}.potential")
    c.boolean("run.spectrum.omega_only")
    c.choice("run.spectrum.statistic", ("max", "rms", "mean"))
    c.number("run.normalform.steps", lo=1, integer=True)
    c.number("run.normalform.bookkeeping_tol", lo=0, strict_lo=True)
    ev = "run.evolve"
    c.number(f"{ev}.cutoff", lo=0, strict_lo=True)
    t0 = c.number(f"{ev}.t0")
    t1 = c.number(f"{ev}.t1")
    if t0 is not None and t1 is not None and t0 == t1:
        c.fail(f"{ev}.t1", "must differ from t0")
    c.number(f"{ev}.dt", lo=0, strict_lo=True)
    c.numbers(f"{ev}.s_list", positive=True)
    c.number(f"{ev}.n_records", lo=2, integer=True)
    fit_s = c.number(f"{ev}.fit_s", lo=0)
    sl = c.get(f"{ev}.s_list")
    if fit_s is not None and isinstance(sl, list) and fit_s not in sl:
        c.fail(f"{ev}.fit_s", "must be one of s_list")
    c.numbers(f"{ev}.fit_window", length=2, increasing=True, positive=True)
    c.numbers(f"{ev}.checkpoints")
    c.number(f"{ev}.l2_tol", lo=0, strict_lo=True)
    pk = c.choice(f"{ev}.perturbation.kind", PERTURBATION_KINDS)
    for k in ("amplitude", "potential", "nu"):
        c.number(f"{ev}.perturbation.{k}", lo=0)
    c.number(f"{ev}.perturbation.n_modes", lo=1, integer=True)
    c.number(f"{ev}.perturbation.k_max", lo=1)
    c.number(f"{ev}.perturbation.order", hi=0)
    fr = c.numbers(f"{ev}.perturbation.frequencies")
    if fr is not None and not 1 <= len(fr) <= 3:
        c.fail(f"{ev}.perturbation.frequencies", "between one and three frequencies")
    if pk == "magnetic-torus" and model is not None and c.get("model.kind") != "torus":
        c.fail(f"{ev}.perturbation.kind", "magnetic-torus needs the torus model")
    c.numbers(f"{ev}.initial.center", nullable=True)
    c.number(f"{ev}.initial.width", lo=0, strict_lo=True)
    if model is not None:
        center = c.get(f"{ev}.initial.center")
        if isinstance(center, list) and len(center) != model.d:
            c.fail(f"{ev}.initial.center", f"expected {model.d} entries")
        dense = ["spectrum", "normalform"] + (["evolve"] if pk == "random-decay" else [])
        for sec in dense:
            cut = c.get(f"run.{sec}.cutoff")
            if _num(cut) and cut > 0:
                n = _estimate_states(model, cut)
                need = DENSE_MATRICES * 8 * n * n
                if need > budget_bytes():
                    c.fail(f"run.{sec}.cutoff",
                           f"{n} states need ~{need / 2**20:.0f} MB, over the budget "
                           f"of {budget_bytes() / 2**20:.0f} MB (GIQS_BUDGET_MB)")


def _check_resonance(c: _Checker, model):
    delta = c.get("resonance.delta")
    if model is not None and delta is None:
        c.data["resonance"]["delta"] = (model.degree - 1.0) / 2.0
    elif delta is not None and not _num(delta):
        c.fail("resonance.delta", f"expected a finite number, got {delta!r}")
    elif model is not None and not 0 < delta < model.degree - 1:
        c.fail("resonance.delta", f"need 0 < delta < degree - 1 = {model.degree - 1:g}, got {delta:g}")
    c.number("resonance.mu", lo=0, strict_lo=True)
    c.number("resonance.R", lo=0, strict_lo=True)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON document; raises :class:`ConfigError` listing every violation."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    errors: list[str] = []
    data = _merge(DEFAULTS, raw, (), errors)
    c = _Checker(data)
    c.errors = errors
    blocking = [e for e in errors if e.startswith("model") and not e.endswith("unknown key")]
    model = None if blocking else _check_model(c)
    _check_resonance(c, model)
    _check_run(c, model)
    c.boolean("output.csv")
    c.boolean("output.binary")
    if not isinstance(c.get("output.dir"), str) or not c.get("output.dir"):
        c.fail("output.dir", "expected a non-empty path string")
    if c.errors:
        raise ConfigError(c.errors)
    return ExperimentConfig(raw, data, model)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
