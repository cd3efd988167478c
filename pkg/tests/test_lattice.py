from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from giqs.errors import BudgetExceededError, OutOfDomainError
from giqs.lattice import (ActionPoint, AnharmonicModel, AnharmonicParams, FunctionModel,
                          LieGroupModel, LieGroupParams, SphereModel, TorusModel, build_model,
                          enumerate_lattice, gradient_w, h_value, lattice_arrays, multiplicity,
                          sample_rays)

MODELS = {
    "torus": lambda: TorusModel(),
    "torus3": lambda: TorusModel([[2, 1, 0], [1, 2, 0], [0, 0, 1]], 3),
    "sphere2": lambda: SphereModel(2),
    "sphere3": lambda: SphereModel(3),
    "su2": lambda: LieGroupModel(LieGroupParams.su2()),
    "su3": lambda: LieGroupModel(LieGroupParams.su3()),
    "anharmonic2": lambda: AnharmonicModel(AnharmonicParams(ell=2)),
}


def test_torus_small_disk_count():
    # brute force over the box |a_i| <= 2
    want = sum(1 for a, b in itertools.product(range(-2, 3), repeat=2) if a * a + b * b <= 4)
    pts = enumerate_lattice(TorusModel(), 0, 2)
    assert len(pts) == want == 13
    assert [p.index for p in pts] == sorted(p.index for p in pts)


def test_sphere_points_are_shifted_integers():
    pts = enumerate_lattice(SphereModel(2), 0, 3)
    assert [float(p.value[0]) for p in pts] == [0.5, 1.5, 2.5]


def test_anharmonic_cone_excludes_lower_wedge():
    m = AnharmonicModel()
    _, pts = lattice_arrays(m, 0, 1.5)
    assert len(pts) > 0
    neg = pts[:, 1] < 0
    assert np.all(pts[neg, 0] >= np.abs(pts[neg, 1]))
    assert np.all(pts[~neg, 0] >= 0)
    assert np.allclose(pts[:, 0] % 1, 0.5)


@given(st.integers(0, 30), st.integers(1, 30), st.sampled_from(["torus", "torus3", "sphere3", "su3"]))
def test_enumeration_matches_brute_force(m0, dm, name):
    # squared norms of these lattices are integers, so radii sqrt(m + 0.37) never sit on a point
    m = MODELS[name]()
    r0, r1 = np.sqrt(m0 + 0.37), np.sqrt(m0 + dm + 0.37)
    idx, _ = lattice_arrays(m, r0, r1)
    got = {tuple(r) for r in idx.tolist()}
    n = int(np.ceil(r1)) + 1
    want = set()
    for t in itertools.product(range(-n, n + 1), repeat=m.d):
        a = np.array(t) + m.kappa
        nr = np.linalg.norm(a)
        if r0 <= nr <= r1 and m.cone.contains(a)[0] and m.in_spectrum(np.array([t]))[0]:
            want.add(t)
    assert got == want


def test_h_examples():
    assert h_value(TorusModel(), (3, 4)) == 25
    assert TorusModel().omega_exact((3, 4)) == 25
    assert h_value(LieGroupModel(LieGroupParams.su2()), (2,)) == pytest.approx(1.0)
    assert h_value(AnharmonicModel(AnharmonicParams(ell=1)), (1.0, 1.0)) == pytest.approx(3.0, abs=1e-10)


def test_gradient_examples():
    assert np.allclose(gradient_w(TorusModel(), (3, 4)), (6, 8))
    lie = LieGroupModel(LieGroupParams.su3())
    a = np.array([2.0, 5.0])
    assert np.allclose(gradient_w(lie, a), 2 * LieGroupParams.su3().gram @ a)


def test_anharmonic_gradient_homogeneity():
    m = AnharmonicModel(AnharmonicParams(ell=2))
    a = np.array([2.5, -1.0])
    lam = 3.0
    assert np.allclose(m.w(lam * a), lam ** (m.degree - 1) * m.w(a), rtol=1e-6)


def test_casimir_oracles():
    su2 = LieGroupModel(LieGroupParams.su2())
    for m_ in range(8):
        assert su2.laplacian_eigenvalue((m_ + 1,)) == pytest.approx(m_ * (m_ + 2) / 4)
    su3 = LieGroupModel(LieGroupParams.su3())
    for p, q in itertools.product(range(5), repeat=2):
        want = (p * p + q * q + p * q + 3 * p + 3 * q) / 3
        assert su3.laplacian_eigenvalue((p + 1, q + 1)) == pytest.approx(want)


def test_su3_exact_eigenvalue_is_rational():
    su3 = LieGroupModel(LieGroupParams.su3())
    assert su3.omega_exact((1, 2)) == Fraction(1 + 4 + 2, 3)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_sphere_spectrum(n):
    m = SphereModel(n)
    for j in range(10):
        a = (j + (n - 1) / 2,)
        assert m.laplacian_eigenvalue(a) == pytest.approx(j * (j + n - 1))


def test_multiplicities():
    assert multiplicity(TorusModel(), (5, -3)) == 1
    s = SphereModel(2)
    assert multiplicity(s, (2,)) == 5
    assert multiplicity(s, (0,)) == 1
    # S^3: (j+1)^2
    assert [SphereModel(3).multiplicity((j,)) for j in range(5)] == [1, 4, 9, 16, 25]


@pytest.mark.parametrize("name", sorted(MODELS))
def test_homogeneity_on_rays(name):
    m = MODELS[name]()
    r = max(2.0, 2 * m.r_hom, 2 * m.min_radius)
    pts = sample_rays(m, 100, r, seed=1, interior_margin=0.05)
    base = m.h(pts)
    for lam in (1.5, 2.0, 4.0):
        scaled = m.h(lam * pts)
        assert np.all(np.abs(scaled - lam**m.degree * base) <= 1e-6 * np.abs(scaled))


@pytest.mark.parametrize("name", sorted(MODELS))
def test_gradient_matches_finite_differences(name):
    m = MODELS[name]()
    pts = sample_rays(m, 20, max(3.0, 3 * m.min_radius), seed=2, interior_margin=0.1)
    W = m.w(pts)
    step = 1e-5
    for i in range(m.d):
        e = np.zeros(m.d)
        e[i] = step
        fd = (m.h(pts + e) - m.h(pts - e)) / (2 * step)
        assert np.all(np.abs(fd - W[:, i]) <= 1e-5 * np.linalg.norm(W, axis=1))


@pytest.mark.parametrize("name", sorted(MODELS))
def test_k0_weight_comparable_to_bracket(name):
    m = MODELS[name]()
    idx, pts = lattice_arrays(m, m.min_radius, 12)
    w = m.k0_weight(pts)
    br = np.sqrt(1 + np.sum(pts**2, axis=1))
    ratio = w / br
    assert ratio.min() > 0.1 and ratio.max() < 10


def test_regularization_radius_enforced():
    m = AnharmonicModel()
    with pytest.raises(OutOfDomainError):
        m.h((0.5, 0.0))


def test_out_of_cone_rejected():
    with pytest.raises(OutOfDomainError):
        SphereModel(2).h((-1.0,))


def test_budget(monkeypatch):
    monkeypatch.setenv("GIQS_BUDGET_MB", "1")
    with pytest.raises(BudgetExceededError):
        lattice_arrays(TorusModel(d=3), 0, 200)


def test_build_model_catalog():
    assert build_model("torus").kind == "torus"
    assert build_model("sphere", n=3).n == 3
    assert build_model("lie", group="su3").d == 2
    assert build_model("anharmonic", ell=1).degree == 1.0
    with pytest.raises(OutOfDomainError):
        build_model("klein")


def test_function_model_fd_gradient():
    m = FunctionModel(2, lambda p: p[:, 0] ** 2 + 3 * p[:, 1] ** 2, 2.0)
    assert np.allclose(m.w((1.0, 2.0)), (2.0, 12.0), atol=1e-6)


def test_action_point_norm():
    p = ActionPoint((3, 4))
    assert p.norm == 5.0
    assert ActionPoint((0,), (0.5,)).value[0] == 0.5
