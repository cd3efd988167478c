"""Command-line front door.

Usage:
    giqs <subcommand> --config run.json [--seed N] [--jobs N] [--out DIR]

Subcommands: partition, clusters, melnikov, steepness, spectrum, normalform, evolve.
Exit status: 0 success, 2 verification violations found (report still written), 1 errors.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import resource
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .basis import (TruncatedBasis, convolution_operator, decaying_convolution,
                    random_decay_operator, trigonometric_potential)
from .clusters import build_clusters, melnikov_scan
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .dynamics import TimeDependentPerturbation, evolve, gaussian_packet, growth_exponent
from .errors import FitRefusedError, GiqsError
from .lattice import budget_bytes, lattice_arrays
from .normalform import (homological_step, iterate_normal_form, omega_density, perturbed_spectrum,
                         remainder_order, support_violations)
from .partition import IndexLookup, ResonanceParams, build_partition
from .steepness import Annulus, niederman_check, steepness_profile

SUBCOMMANDS = ("partition", "clusters", "melnikov", "steepness", "spectrum", "normalform", "evolve")
EXIT_OK, EXIT_ERROR, EXIT_VIOLATIONS = 0, 1, 2


def _params(cfg: ExperimentConfig) -> ResonanceParams:
    r = cfg.section("resonance")
    return ResonanceParams(r["delta"], r["mu"], r["R"]).validate(cfg.model)


def _operator(cfg: ExperimentConfig, basis: TruncatedBasis, pot: dict):
    seed = cfg.seed
    if pot["kind"] == "trigonometric":
        return convolution_operator(basis, trigonometric_potential(pot["eps"], pot["nu"], pot["k_max"], seed),
                                    pot["order"], pot["nu"])
    if pot["kind"] == "convolution":
        return convolution_operator(basis, decaying_convolution(pot["eps"], pot["nu"], seed),
                                    pot["order"], pot["nu"])
    return random_decay_operator(basis, pot["order"], pot["nu"], seed, pot["eps"])


def _omega_states(basis: TruncatedBasis, partition) -> np.ndarray:
    pos = IndexLookup(partition.indices).find(basis.point_indices)
    om = np.zeros(basis.n_points, bool)
    om[pos >= 0] = partition.omega_mask()[pos[pos >= 0]]
    return om[basis.state_point]


def run_partition(cfg, files):
    sec = cfg.section("run", "partition")
    rep = build_partition(cfg.model, tuple(sec["annulus"]), _params(cfg))
    return rep.to_dict(include_members=sec["include_members"]), rep.n_violations


def run_clusters(cfg, files):
    cl = build_clusters(cfg.model, cfg.section("run", "clusters")["E_max"])
    ver = cl.verify()
    bad = (not ver["widths_ok"]) + len(ver["gap_failures"]) + (not ver["covered"]) + (not ver["ordered"])
    if files.get("csv"):
        rows = [[i + 1, a, b] for i, (a, b) in enumerate(zip(cl.alpha, cl.beta))]
        io.write_csv(files["csv"], ["n", "alpha", "beta"], rows)
    return {"verification": ver, "n_intervals": cl.n_intervals, "E_max": cl.E_max,
            "exponent": cl.exponent}, int(bad)


def run_melnikov(cfg, files):
    sec = cfg.section("run", "melnikov")
    model = cfg.model
    _, pts = lattice_arrays(model, model.min_radius, sec["cutoff"])
    cl = build_clusters(model, float(np.max(model.h(pts))) + 1.0)
    rep = melnikov_scan(model, cl, sec["r"], sec["cutoff"], sec["gamma"], sec["tau"],
                        max_report=sec["max_report"])
    return rep.to_dict(), rep.n_violations


def run_steepness(cfg, files):
    sec = cfg.section("run", "steepness")
    model = cfg.model
    dom = Annulus(*sec["annulus"]) if sec["annulus"] else Annulus.default_for(model)
    payload, bad = {"domain": [dom.r_min, dom.r_max]}, 0
    if model.d >= 2:
        est = steepness_profile(model, dom, sec["s"], sec["n_points"], sec["n_subspaces"], seed=cfg.seed)
        payload["steepness"] = est.to_dict()
    nd = niederman_check(model, dom, sec["n_lines"], sec["samples_per_line"], sec["zero_threshold"],
                         seed=cfg.seed)
    payload["niederman"] = nd.to_dict()
    bad += nd.n_failed
    return payload, bad


def run_spectrum(cfg, files):
    sec = cfg.section("run", "spectrum")
    model, p = cfg.model, _params(cfg)
    basis = TruncatedBasis(model, sec["cutoff"])
    V = _operator(cfg, basis, sec["potential"])
    mask = None
    payload = {"basis": basis.describe()}
    if sec["omega_only"]:
        part = build_partition(model, (basis.r_min, sec["cutoff"]), p)
        mask = _omega_states(basis, part)
        radii = [r for r in (16.0, 32.0, 64.0) if r <= sec["cutoff"]]
        if radii:
            payload["omega_density"] = omega_density(part, radii).to_dict()
    res = perturbed_spectrum(model, V, mask=mask)
    hi = 0.8 * sec["cutoff"]
    try:
        fit = res.residual_fit(p.R, hi, sec["n_shells"], sec["statistic"]).to_dict()
    except (ValueError, GiqsError) as exc:
        fit = {"refused": str(exc)}
    payload.update({"n_matches": len(res.matches), "skipped_clusters": res.skipped_clusters,
                    "residual_fit": fit, "fit_range": [p.R, hi]})
    if files.get("csv"):
        io.write_csv(files["csv"], ["a", "slot", "lambda_a", "mu", "lambda", "residual"],
                     [[" ".join(map(str, m.a)), m.slot, m.lam0, m.mu, m.lam, m.residual]
                      for m in res.matches])
    return payload, len(res.skipped_clusters)


def run_normalform(cfg, files):
    sec = cfg.section("run", "normalform")
    model, p = cfg.model, _params(cfg)
    basis = TruncatedBasis(model, sec["cutoff"])
    V = _operator(cfg, basis, sec["potential"])
    part = build_partition(model, (basis.r_min, sec["cutoff"]), p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if sec["steps"] == 1:
            res = homological_step(basis.omega, V, model, p, part)
        else:
            res = iterate_normal_form(basis.omega, V, model, p, sec["steps"], part)
    book = res.bookkeeping_error(V)
    sv = support_violations(res.Z, part)
    fit = remainder_order(res, p, n_shells=sec["n_shells"])
    payload = {"basis": basis.describe(), "summary": res.summary(), "bookkeeping_error": book,
               "support_violations": sv, "remainder_order": fit.to_dict(),
               "z_frobenius": res.Z.frobenius(), "remainder_frobenius": res.remainder.frobenius()}
    if files.get("binary"):
        io.write_container(files["binary"], res.Z.entries, {"matrix": "Z", "n": len(basis)})
    bad = sv + int(book > sec["bookkeeping_tol"]) + int(not fit.exponent < 0)
    return payload, bad


def _perturbation(cfg, model) -> TimeDependentPerturbation:
    pc = cfg.section("run", "evolve", "perturbation")
    seed = cfg.seed
    kind = pc["kind"]
    if kind == "zero":
        return TimeDependentPerturbation.zero()
    if kind == "magnetic-torus":
        return TimeDependentPerturbation.magnetic_torus(model.d, pc["amplitude"], pc["potential"],
                                                        pc["n_modes"], pc["k_max"], pc["nu"],
                                                        pc["frequencies"], seed)
    if kind == "convolution-potential":
        return TimeDependentPerturbation.convolution_potential(model.d, pc["potential"], pc["n_modes"],
                                                               pc["k_max"], pc["nu"], pc["frequencies"], seed)
    return TimeDependentPerturbation.random_decay(pc["order"], pc["nu"], pc["amplitude"],
                                                  pc["frequencies"], seed)


def run_evolve(cfg, files):
    sec = cfg.section("run", "evolve")
    model = cfg.model
    basis = TruncatedBasis(model, sec["cutoff"])
    spec = _perturbation(cfg, model)
    psi0 = gaussian_packet(basis, sec["initial"]["center"], sec["initial"]["width"], cfg.seed)
    t0, t1 = sec["t0"], sec["t1"]
    span = abs(t1 - t0)
    rec = t0 + math.copysign(1.0, t1 - t0) * np.concatenate(
        [[0.0], np.geomspace(min(sec["dt"], span), span, sec["n_records"] - 1)])
    traj, psi = evolve(basis, spec, psi0, t0, t1, sec["dt"], sec["s_list"], rec, sec["checkpoints"])
    l2_err = max(abs(x - traj.l2[0]) for x in traj.l2) / traj.l2[0]
    payload = {"basis": basis.describe(), "perturbation": spec.to_dict(), "trajectory": traj.to_dict(),
               "l2_error": l2_err}
    bad = int(l2_err > sec["l2_tol"])
    try:
        fit = growth_exponent(traj, sec["fit_s"], sec["fit_window"])
        payload["growth"] = fit.to_dict()
    except FitRefusedError as exc:
        payload["growth"] = {"refused": str(exc), "diagnostics": exc.diagnostics}
        bad += 1
    if files.get("csv"):
        io.write_csv(files["csv"], traj.header(), traj.rows())
    if files.get("binary"):
        states = [psi0] + [traj.checkpoints[t] for t in sorted(traj.checkpoints)] + [psi]
        io.write_container(files["binary"], np.array(states),
                           {"rows": ["initial"] + sorted(traj.checkpoints) + ["final"],
                            "indices": basis.indices.tolist(), "slots": basis.state_slot.tolist()})
    return payload, bad


RUNNERS = {"partition": run_partition, "clusters": run_clusters, "melnikov": run_melnikov,
           "steepness": run_steepness, "spectrum": run_spectrum, "normalform": run_normalform,
           "evolve": run_evolve}


def output_paths(out_dir, subcommand: str, seed: int, cfg: ExperimentConfig) -> dict:
    stem = Path(out_dir) / f"{subcommand}-seed{seed}"
    out = cfg.section("output")
    return {"json": stem.with_suffix(".json"),
            "csv": stem.with_suffix(".csv") if out["csv"] else None,
            "binary": stem.with_suffix(".giqs") if out["binary"] else None}


def run(cfg: ExperimentConfig, subcommand: str, out_dir=None) -> tuple[dict, int]:
    """Execute one job; returns the report record and its exit status."""
    if subcommand not in RUNNERS:
        raise GiqsError(f"unknown subcommand {subcommand!r}")
    out_dir = out_dir or cfg.section("output")["dir"]
    files = output_paths(out_dir, subcommand, cfg.seed, cfg)
    chash = io.config_hash(cfg.data)
    start = time.perf_counter()
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    payload, n_bad = RUNNERS[subcommand](cfg, files)
    record = {"schema_version": io.SCHEMA_VERSION,
              "experiment_id": f"{subcommand}-{chash[:12]}-seed{cfg.seed}",
              "subcommand": subcommand, "seed": cfg.seed, "config_hash": chash,
              "config": cfg.data, "payload": payload, "n_violations": int(n_bad),
              "files": {k: Path(v).name for k, v in files.items() if v is not None and k != "json"
                        and Path(v).exists()},
              "budget": {"budget_mb": budget_bytes() / 2**20},
              "timing": {"started_utc": started, "wall_seconds": time.perf_counter() - start,
                         "peak_rss_mb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024}}
    io.write_json(files["json"], record)
    return record, EXIT_VIOLATIONS if n_bad else EXIT_OK


def _job(args):
    data, subcommand, out_dir = args
    try:
        # models hold closures, so workers rebuild them from the plain data
        cfg = parse_config(json.dumps(data))
        record, code = run(cfg, subcommand, out_dir)
        return code, record["experiment_id"], record["n_violations"], None
    except (GiqsError, ValueError, MemoryError) as exc:
        return EXIT_ERROR, f"{subcommand}-seed{data['run']['seed']}", None, f"{type(exc).__name__}: {exc}"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="giqs", description=__doc__.split("\n")[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment configuration")
    ap.add_argument("--seed", type=int, default=None, help="override run.seed (and run.seeds)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for seed sweeps")
    ap.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    if args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = cfg.section("run")["seeds"] or [cfg.seed]
    jobs = [(cfg.with_seed(s).data, args.subcommand, args.out) for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    codes = []
    for code, name, n_bad, err in results:
        if err:
            print(f"{name}: error: {err}", file=sys.stderr)
        else:
            print(f"{name}: {'ok' if code == EXIT_OK else f'{n_bad} violation(s)'}")
        codes.append(code)
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    return EXIT_VIOLATIONS if EXIT_VIOLATIONS in codes else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
