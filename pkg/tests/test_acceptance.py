"""Acceptance criteria, one test each.

Every test prints a single ``[criterion N] PASS|FAIL ...`` line before
asserting, so ``pytest -v -s tests/test_acceptance.py`` (or the tee'd full
run) shows the verdicts side by side.  Runtime limits are part of the verdict.
"""

from __future__ import annotations

import itertools
import math
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest

from giqs.anharmonic import AnharmonicParams, invert_actions, radial_action
from giqs.basis import OperatorMatrix, TruncatedBasis, convolution_operator, trigonometric_potential
from giqs.clusters import build_clusters, melnikov_scan
from giqs.dynamics import TimeDependentPerturbation, evolve, gaussian_packet, growth_exponent
from giqs.lattice import (AnharmonicModel, FunctionModel, LieGroupModel, LieGroupParams,
                          SphereModel, TorusModel)
from giqs.normalform import (average_quadrature, commutant_projection, homological_step,
                             omega_density, perturbed_spectrum, remainder_order,
                             support_violations)
from giqs.partition import IndexLookup, ResonanceParams, build_partition
from giqs.steepness import Annulus, niederman_check, steepness_profile


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return emit


# 1 -------------------------------------------------------------------------

def test_criterion_1_lattice_oracles(verdict):
    t = time.perf_counter()
    p1 = AnharmonicParams(ell=1)
    worst = 0.0
    for E in np.linspace(0.5, 20.0, 20):
        for frac in np.linspace(-0.95, 0.95, 20):
            Mz = frac * E
            worst = max(worst, abs(radial_action(p1, E, Mz) - (E - abs(Mz)) / 2))
    p2 = AnharmonicParams(ell=2)
    rng = np.random.default_rng(0)
    hom = 0.0
    for _ in range(20):
        a1 = rng.uniform(0.2, 3.0)
        a = np.array([a1, rng.uniform(-0.9 * a1, 2.0)])
        lam = rng.uniform(1.5, 4.0)
        e1, e2 = invert_actions(p2, *a), invert_actions(p2, *(lam * a))
        hom = max(hom, abs(e2 - lam ** (4 / 3) * e1) / e2)
    torus = TorusModel()
    tor_ok = all(float(torus.h(np.array([a], float))[0]) == a[0] ** 2 + a[1] ** 2
                 for a in [(3, 4), (-2, 7), (0, 0)])
    sph_ok = all(SphereModel(n).laplacian_eigenvalue((j + (n - 1) / 2,)) == j * (j + n - 1)
                 for n in (2, 3, 4) for j in range(10))
    su2 = LieGroupModel(LieGroupParams.su2())
    su2_ok = all(su2.laplacian_eigenvalue((m_ + 1,)) == m_ * (m_ + 2) / 4 for m_ in range(10))
    dt = time.perf_counter() - t
    ok = worst <= 1e-8 and hom <= 1e-6 and tor_ok and sph_ok and su2_ok and dt < 30
    verdict(1, ok, f"ell=1 max err {worst:.1e}, ell=2 homogeneity {hom:.1e}, "
                   f"torus {tor_ok}, sphere {sph_ok}, SU(2) {su2_ok}, {dt:.1f}s")
    assert ok


# 2 -------------------------------------------------------------------------

def test_criterion_2_partition(verdict):
    t = time.perf_counter()
    m = TorusModel()
    rep = build_partition(m, (8, 64), ResonanceParams.default_for(m))
    dt = time.perf_counter() - t
    seen = [mm.index for b in rep.blocks for mm in b.members]
    cover = len(seen) == len(set(seen)) == len(rep.indices)
    ok = cover and math.isfinite(rep.C) and rep.K > 0 and rep.n_violations == 0 and dt < 60
    verdict(2, ok, f"{len(rep.indices)} points in {len(rep.blocks)} blocks, cover {cover}, "
                   f"C={rep.C:.3g}, K={rep.K:.3g}, violations {rep.n_violations}, {dt:.1f}s")
    assert ok


# 3 -------------------------------------------------------------------------

def test_criterion_3_clusters(verdict):
    t = time.perf_counter()
    cl = build_clusters(TorusModel(), 1e4)
    ver = cl.verify()
    widths = np.asarray(cl.beta) - np.asarray(cl.alpha)
    n = np.arange(1, len(widths) + 1)
    gaps = np.asarray(cl.alpha)[1:] - np.asarray(cl.beta)[:-1]
    gaps_direct = bool(np.all(gaps >= 2.0 / n[:-1] - 1e-12))
    dt = time.perf_counter() - t
    ok = (ver["widths_ok"] and ver["gaps_ok"] and ver["covered"] and widths.max() <= 2
          and gaps_direct and dt < 10)
    verdict(3, ok, f"{len(widths)} clusters, max width {widths.max():g}, "
                   f"min gap*n {np.min(gaps * n[:-1]):g}, {dt:.2f}s")
    assert ok


# 4 -------------------------------------------------------------------------

def _brute_force_melnikov(cl, r, cutoff, gamma, tau):
    pts = list(range(-int(cutoff), int(cutoff) + 1))
    cid = {a: int(cl.cluster_of(float(a * a))) for a in pts}
    found = {}
    for tup in itertools.product(pts, repeat=r):
        mx = max(abs(a) for a in tup)
        bound = gamma / mx**tau if mx > 0 else gamma
        for j in range(1, r + 1):
            plus, minus = tup[:j], tup[j:]
            div = abs(sum(a * a for a in plus) - sum(a * a for a in minus))
            if not div < bound:
                continue
            if 2 * j == r and sorted(cid[a] for a in plus) == sorted(cid[a] for a in minus):
                continue
            key = (tuple(sorted(plus)), tuple(sorted(minus)), j)
            found[key] = Fraction(div)
    return found


def test_criterion_4_melnikov(verdict):
    m = TorusModel(d=1)
    t = time.perf_counter()
    cl = build_clusters(m, 101.0)
    rep = melnikov_scan(m, cl, 4, 10, 1.0, 1.0, max_report=10**6)
    dt = time.perf_counter() - t
    got = {(tuple(sorted(p[0] for p in v.plus)), tuple(sorted(q[0] for q in v.minus)), v.j):
           Fraction(v.divisor_exact) for v in rep.violations}
    # divisors recomputed from the integer indices alone
    exact = all(Fraction(v.divisor_exact) == abs(sum(p[0] ** 2 for p in v.plus)
                                                 - sum(q[0] ** 2 for q in v.minus))
                for v in rep.violations)
    brute = _brute_force_melnikov(cl, 4, 10, 1.0, 1.0)
    hit = [v for v in rep.violations
           if sorted(abs(p[0]) for p in v.plus) == [1, 7] and [abs(q[0]) for q in v.minus] == [5, 5]]
    hit_ok = bool(hit) and all(v.divisor == 0 and v.kind == "nondangerous" for v in hit)
    ok = hit_ok and exact and got == brute and dt < 10
    verdict(4, ok, f"{rep.n_violations} violations (brute force {len(brute)}), "
                   f"(1,7|5,5) zero divisor nondangerous {hit_ok}, exact {exact}, scan {dt:.2f}s")
    assert ok


# 5 -------------------------------------------------------------------------

def test_criterion_5_averaging(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        A = rng.permutation(60)[:20].astype(float)[:, None]
        G = rng.normal(size=(20, 20)) + 1j * rng.normal(size=(20, 20))
        V = (G + G.conj().T) / 2
        worst = max(worst, np.abs(average_quadrature(V, A) - commutant_projection(V, A)).max())
    b = TruncatedBasis(SphereModel(2), 3.0)
    G = rng.normal(size=(len(b), len(b)))
    Vs = OperatorMatrix(b, (G + G.T) / 2)
    Q = average_quadrature(Vs)
    same = b.state_point[:, None] == b.state_point[None, :]
    kept = bool(np.abs(Q.entries[same] - Vs.entries[same]).max() <= 1e-10)
    sph_err = float(np.abs(Q.entries - commutant_projection(Vs).entries).max())
    dt = time.perf_counter() - t
    ok = worst <= 1e-10 and sph_err <= 1e-10 and kept and dt < 10
    verdict(5, ok, f"random max diff {worst:.1e}, sphere diff {sph_err:.1e}, "
                   f"multiplet entries kept {kept}, {dt:.2f}s")
    assert ok


# 6 and 7 share one setup -----------------------------------------------------

@pytest.fixture(scope="module")
def torus_normal_form():
    t = time.perf_counter()
    m = TorusModel()
    p = ResonanceParams.default_for(m)
    basis = TruncatedBasis(m, 40.0, r_min=0.0)
    V = convolution_operator(basis, trigonometric_potential(0.1, 4.0, 3.0, seed=0), 0.0, 4.0)
    part = build_partition(m, (0.0, 40.0), p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = homological_step(basis.omega, V, m, p, part)
    return m, p, basis, V, part, res, time.perf_counter() - t


def test_criterion_6_normal_form(verdict, torus_normal_form):
    m, p, basis, V, part, res, setup = torus_normal_form
    t = time.perf_counter()
    sv = support_violations(res.Z, part)
    book = res.bookkeeping_error(V)
    fit = remainder_order(res, p)
    dt = setup + time.perf_counter() - t
    ok = sv == 0 and book <= 1e-10 and fit.exponent < 0 and dt < 120
    verdict(6, ok, f"{len(basis)} states, off-block Z entries {sv}, bookkeeping {book:.1e}, "
                   f"remainder order {fit.exponent:.2f} (R^2 {fit.r2:.2f}), {dt:.0f}s")
    assert ok


def test_criterion_7_eigenvalue_stability(verdict, torus_normal_form):
    m, p, basis, V, part, _, _ = torus_normal_form
    t = time.perf_counter()
    pos = IndexLookup(part.indices).find(basis.point_indices)
    mask = part.omega_mask()[pos][basis.state_point]
    spec = perturbed_spectrum(m, V, mask=mask)
    fit = spec.residual_fit(p.R, 0.8 * basis.cutoff, n_shells=6, stat="max")
    wide = build_partition(m, (0.0, 64.0), p)
    dens = omega_density(wide, [16.0, 32.0, 64.0])
    dt = time.perf_counter() - t
    fit_ok = fit.exponent < 0 and fit.r2 >= 0.8
    ok = fit_ok and dens.decreasing and dt < 300
    verdict(7, ok, f"residual order m2={fit.exponent:.2f} R^2={fit.r2:.2f} ({'ok' if fit_ok else 'fail'}), "
                   f"Omega deficiency at R=16,32,64: "
                   f"{', '.join(f'{x:.3f}' for x in dens.deficiency)} "
                   f"({'decreasing' if dens.decreasing else 'not decreasing'}), {dt:.0f}s")
    assert ok


# 8 -------------------------------------------------------------------------

def test_criterion_8_dynamics(verdict):
    t = time.perf_counter()
    m = TorusModel()
    basis = TruncatedBasis(m, 32.0)
    spec = TimeDependentPerturbation.magnetic_torus(2, 0.1, 0.1, 2, 2.0, 4.0, seed=1)
    psi0 = gaussian_packet(basis, width=1.0, seed=1)
    rec = np.concatenate([[0.0], np.geomspace(0.2, 1000.0, 59)])
    traj, _ = evolve(basis, spec, psi0, 0.0, 1000.0, 0.2, record_times=rec)
    l2 = max(abs(x - 1.0) for x in traj.l2)
    fit = growth_exponent(traj, 2, (1.0, 1000.0))
    free, _ = evolve(basis, TimeDependentPerturbation.zero(), psi0, 0.0, 1000.0, 0.2, record_times=rec)
    free_fit = growth_exponent(free, 2, (1.0, 1000.0))
    dt = time.perf_counter() - t
    ok = (l2 <= 1e-8 and fit.max_tail <= 1e-6 and fit.exponent <= 0.3
          and abs(free_fit.exponent) <= 1e-10 and dt < 600)
    verdict(8, ok, f"{len(basis)} states, L2 drift {l2:.1e}, max tail {fit.max_tail:.1e}, "
                   f"growth exponent {fit.exponent:.3f}, free {free_fit.exponent:.1e}, {dt:.0f}s")
    assert ok


# 9 -------------------------------------------------------------------------

def test_criterion_9_steepness(verdict):
    t = time.perf_counter()
    est = steepness_profile(TorusModel(), Annulus(0.5, 1.0))
    lin = FunctionModel(2, lambda q: 3.0 * q[:, 0] + 2.0 * q[:, 1], 1.0,
                        w=lambda q: np.tile([3.0, 2.0], (len(q), 1)))
    lin_est = steepness_profile(lin, Annulus(0.5, 1.0))
    nd = niederman_check(AnharmonicModel(), n_lines=50)
    dt = time.perf_counter() - t
    ok = (0.9 <= est.alpha <= 1.1 and est.steep and not lin_est.steep
          and nd.passed and len(nd.lines) == 50 and dt < 120)
    verdict(9, ok, f"quadratic alpha {est.alpha:.3f}, linear '{lin_est.verdict}', "
                   f"anharmonic Niederman {50 - nd.n_failed}/50 lines, {dt:.0f}s")
    assert ok
