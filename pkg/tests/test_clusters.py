from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from giqs.clusters import (build_clusters, build_clusters_from_values, classify_tuple, divisor,
                           is_exempt, melnikov_scan)
from giqs.lattice import SphereModel, TorusModel


def sums_of_two_squares(E):
    m = int(math.isqrt(E))
    return sorted({a * a + b * b for a in range(m + 1) for b in range(m + 1) if a * a + b * b <= E})


def test_torus_clusters_match_sums_of_two_squares():
    cl = build_clusters(TorusModel(), 2000)
    vals = sums_of_two_squares(2000)
    # 0, 1, 2 are within width 2 and the first gap bound is 2: one leading interval
    assert cl.alpha[0] == 0 and cl.beta[0] == 2
    assert list(cl.alpha[1:]) == vals[3:]
    assert np.all(cl.widths[1:] == 0)
    v = cl.verify()
    assert v["widths_ok"] and v["gaps_ok"] and v["covered"] and v["ordered"]


def test_sphere_clusters_singletons():
    cl = build_clusters(SphereModel(2), 100)
    want = [(j + 0.5) ** 2 for j in range(10) if (j + 0.5) ** 2 <= 100]
    assert np.allclose(cl.alpha, want) and np.allclose(cl.beta, want)
    assert np.allclose(np.diff(cl.alpha), [2 * j + 2 for j in range(len(want) - 1)])


def test_single_value():
    cl = build_clusters_from_values([5.0], 2, 2.0)
    assert cl.n_intervals == 1 and cl.alpha[0] == cl.beta[0] == 5.0


@pytest.mark.parametrize("seed", range(4))
def test_every_value_in_exactly_one_interval(seed):
    rng = np.random.default_rng(seed)
    vals = np.sort(rng.uniform(0, 200, 400))
    cl = build_clusters_from_values(vals, 2, 2.0)
    ids = cl.cluster_of(vals)
    assert np.all(ids >= 0)
    assert np.all(np.diff(ids) >= 0)
    assert np.all(cl.alpha[1:] > cl.beta[:-1])
    # too dense for the counting behind the width bound: the greedy rule reports, never hides, wide intervals
    assert bool(np.any(cl.widths > 2.0)) == bool(cl.failures)


def test_classify_examples():
    cl = build_clusters(TorusModel(d=1), 200)
    assert classify_tuple(cl, [1.0, 4.0, 9.0]) == "nondangerous"
    assert classify_tuple(cl, [49.0, 49.0]) == "dangerous"
    assert classify_tuple(cl, [1.0, 49.0, 25.0, 25.0], j=2) == "nondangerous"
    assert is_exempt("dangerous", 1, 2)
    assert not is_exempt("dangerous", 1, 4)
    assert not is_exempt("nondangerous", 2, 4)


def _brute_force_violations(model, cl, r, cutoff, gamma, tau):
    """Ordered-tuple loops; canonicalized by sorting each side."""
    pts = list(range(-int(cutoff), int(cutoff) + 1))
    om = {a: Fraction(a * a) for a in pts}
    cid = {a: int(cl.cluster_of(float(a * a))) for a in pts}
    found = {}
    for tup in itertools.product(pts, repeat=r):
        mx = max(abs(a) for a in tup)
        bound = gamma / mx**tau if mx > 0 else gamma
        for j in range(1, r + 1):
            plus, minus = tup[:j], tup[j:]
            div = abs(sum(om[a] for a in plus) - sum(om[a] for a in minus))
            if not div < bound:
                continue
            # exempt: balanced split whose halves occupy the same clusters
            if 2 * j == r and sorted(cid[a] for a in plus) == sorted(cid[a] for a in minus):
                continue
            key = (tuple(sorted(plus, key=lambda a: (a * a, a))),
                   tuple(sorted(minus, key=lambda a: (a * a, a))), j)
            found[key] = div
    return found


def test_melnikov_torus_1d_against_brute_force():
    m = TorusModel(d=1)
    cl = build_clusters(m, 500)
    rep = melnikov_scan(m, cl, 4, 10, 1.0, 1.0, max_report=10**6)
    got = {}
    for v in rep.violations:
        key = (tuple(p[0] for p in v.plus), tuple(p[0] for p in v.minus), v.j)
        got[key] = Fraction(v.divisor_exact)
        assert divisor(m, v.plus, v.minus) == Fraction(v.divisor_exact)
    want = _brute_force_violations(m, cl, 4, 10, 1.0, 1.0)
    canon = {(tuple(sorted(p, key=lambda a: (a * a, a))), tuple(sorted(q, key=lambda a: (a * a, a))), j): d
             for (p, q, j), d in got.items()}
    assert canon == want
    assert rep.n_violations == len(want) == 395
    hit = [v for v in rep.violations
           if sorted(abs(p[0]) for p in v.plus) == [1, 7] and [abs(p[0]) for p in v.minus] == [5, 5]
           and v.j == 2]
    assert hit and all(v.divisor == 0 and v.kind == "nondangerous" for v in hit)


def test_melnikov_exemption_r2():
    m = TorusModel(d=1)
    cl = build_clusters(m, 200)
    rep = melnikov_scan(m, cl, 2, 5, 1.0, 1.0, max_report=10**5)
    # (a, a) at j = 1 is dangerous, hence exempt; (a, -a) has the same cluster too
    assert not any(v.j == 1 and [p[0] ** 2 for p in v.plus] == [q[0] ** 2 for q in v.minus]
                   for v in rep.violations)


def test_sphere_min_divisor_positive():
    m = SphereModel(2)
    cl = build_clusters(m, 200)
    rep = melnikov_scan(m, cl, 3, 10, 1e-6, 1.0)
    assert rep.exact
    assert rep.min_divisor == pytest.approx(0.25)
    assert rep.n_violations == 0
