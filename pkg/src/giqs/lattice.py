"""Joint-spectrum lattices and the catalog of globally integrable models.

Every model exposes the same small surface: ``h`` (the integrable
Hamiltonian in action variables), its gradient ``w``, the joint-eigenvalue
multiplicity, the Sobolev weight ``k0_weight`` and the cone/shift data that
define the lattice ``(Z^d + kappa) ∩ C``.  Array methods take points of shape
``(n, d)`` (or a single ``(d,)`` point) and are vectorized.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import anharmonic as _anh
from .anharmonic import AnharmonicParams
from .errors import BudgetExceededError, OutOfDomainError

DEFAULT_BUDGET_MB = 1024.0


def budget_bytes() -> float:
    """Memory budget for enumerations, from ``GIQS_BUDGET_MB`` (default 1024 MB)."""
    raw = os.environ.get("GIQS_BUDGET_MB")
    mb = float(raw) if raw else DEFAULT_BUDGET_MB
    return mb * 1024.0 * 1024.0


@dataclass(frozen=True, order=True)
class ActionPoint:
    """A point ``index + kappa`` of the joint spectrum."""

    index: tuple[int, ...]
    kappa: tuple[float, ...] = field(default=(), compare=False)
    norm: float = field(default=float("nan"), compare=False, repr=False)

    def __post_init__(self):
        idx = tuple(int(i) for i in self.index)
        object.__setattr__(self, "index", idx)
        kap = tuple(float(k) for k in self.kappa) or (0.0,) * len(idx)
        if len(kap) != len(idx):
            raise ValueError("index and kappa must have equal length")
        object.__setattr__(self, "kappa", kap)
        object.__setattr__(self, "norm", float(np.linalg.norm(self.value)))

    @property
    def value(self) -> np.ndarray:
        return np.asarray(self.index, dtype=float) + np.asarray(self.kappa)

    @property
    def d(self) -> int:
        return len(self.index)


@dataclass(frozen=True)
class Cone:
    """A closed convex cone given by a vectorized membership predicate."""

    name: str
    predicate: Callable[[np.ndarray], np.ndarray]

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.asarray(self.predicate(pts), dtype=bool)


def full_cone() -> Cone:
    return Cone("full", lambda p: np.ones(len(p), dtype=bool))


def orthant_cone() -> Cone:
    return Cone("orthant", lambda p: np.all(p >= 0, axis=1))


def anharmonic_cone() -> Cone:
    return Cone("anharmonic", lambda p: _anh.in_action_cone(p[:, 0], p[:, 1]))


def _as_points(a, d: int) -> tuple[np.ndarray, bool]:
    if isinstance(a, ActionPoint):
        a = a.value
    arr = np.asarray(a, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != d:
        raise OutOfDomainError(f"expected points of dimension {d}, got shape {arr.shape}")
    return arr, single


def _fd_gradient(h, pts: np.ndarray, step: float) -> np.ndarray:
    n, d = pts.shape
    out = np.empty((n, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        out[:, i] = (h(pts + e) - h(pts - e)) / (2 * step)
    return out


class GiqsModel:
    """Base class: a GIQS ``h_L(A_1, ..., A_d)`` on the lattice ``(Z^d + kappa) ∩ C``."""

    kind = "generic"

    def __init__(self, d: int, kappa, degree: float, cone: Cone | None = None,
                 r_hom: float = 0.0, min_radius: float = 0.0, name: str | None = None):
        self.d = int(d)
        self.kappa = np.zeros(self.d) if kappa is None else np.asarray(kappa, dtype=float).reshape(self.d)
        self.degree = float(degree)
        self.cone = cone or full_cone()
        self.r_hom = float(r_hom)
        self.min_radius = float(min_radius)
        self.name = name or self.kind
        self.fd_step = 1e-5

    # -- subclass hooks -------------------------------------------------
    def _h(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _w(self, pts: np.ndarray) -> np.ndarray:
        return _fd_gradient(self._h, pts, self.fd_step * max(1.0, float(np.max(np.abs(pts)))))

    def in_spectrum(self, indices: np.ndarray) -> np.ndarray:
        """Extra restriction of the lattice beyond the cone (default: none)."""
        return np.ones(len(indices), dtype=bool)

    def multiplicity(self, a) -> int:
        return 1

    def omega_exact(self, index) -> Fraction | None:
        """Exact rational eigenvalue, when the model supports it."""
        return None

    # -- public, validated evaluators -----------------------------------
    def _validate(self, pts: np.ndarray):
        if not np.all(np.isfinite(pts)):
            raise OutOfDomainError("non-finite action point")
        if not np.all(self.cone.contains(pts)):
            raise OutOfDomainError(f"point outside the {self.cone.name} cone")
        if self.min_radius > 0:
            norms = np.linalg.norm(pts, axis=1)
            if np.any(norms < self.min_radius):
                raise OutOfDomainError(
                    f"|a| below the regularization radius {self.min_radius}")

    def h(self, a):
        pts, single = _as_points(a, self.d)
        self._validate(pts)
        out = np.asarray(self._h(pts), dtype=float)
        return float(out[0]) if single else out

    def w(self, a):
        pts, single = _as_points(a, self.d)
        self._validate(pts)
        out = np.asarray(self._w(pts), dtype=float)
        return out[0] if single else out

    def k0_weight(self, a):
        """Sobolev weight, the Japanese bracket <a> = sqrt(1 + |a|^2)."""
        pts, single = _as_points(a, self.d)
        out = np.sqrt(1.0 + np.sum(pts**2, axis=1))
        return float(out[0]) if single else out

    def unit_h_bounds(self, n_dirs: int = 2048, seed: int = 0) -> tuple[float, float]:
        """(min, max) of h over unit vectors in the cone, by sampling."""
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=(n_dirs * 4, self.d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        dirs = dirs[self.cone.contains(dirs)][:n_dirs]
        r = max(1.0, 2.0 * self.min_radius, self.r_hom)
        vals = self._h(r * dirs) / r**self.degree
        return float(np.min(vals)), float(np.max(vals))

    def radius_for_energy(self, E_max: float) -> float:
        """A radius beyond which h exceeds E_max (used to bound spectral enumerations)."""
        lo, _ = self.unit_h_bounds()
        if lo <= 0:
            raise OutOfDomainError("h is not bounded below by a positive multiple of |a|^degree")
        r = (E_max / (0.9 * lo)) ** (1.0 / self.degree)
        return max(r, self.r_hom, self.min_radius) + 1.0

    def describe(self) -> dict:
        return {"kind": self.kind, "name": self.name, "d": self.d,
                "kappa": [float(x) for x in self.kappa], "degree": self.degree,
                "cone": self.cone.name, "r_hom": self.r_hom, "min_radius": self.min_radius}


class FunctionModel(GiqsModel):
    """A model from user callables; gradient by centered differences when not given."""

    kind = "function"

    def __init__(self, d, h: Callable, degree: float, w: Callable | None = None,
                 kappa=None, cone: Cone | None = None, r_hom=0.0, min_radius=0.0, name=None):
        super().__init__(d, kappa, degree, cone, r_hom, min_radius, name)
        self._hf = h
        self._wf = w

    def _h(self, pts):
        return np.asarray(self._hf(pts), dtype=float)

    def _w(self, pts):
        if self._wf is None:
            return super()._w(pts)
        return np.asarray(self._wf(pts), dtype=float)


def _fraction(x) -> Fraction | None:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        try:
            return Fraction(x)
        except ValueError:
            return None
    return None


class QuadraticModel(GiqsModel):
    """``h(a) = a^T G a`` with a symmetric positive definite Gram matrix ``G``."""

    kind = "quadratic"

    def __init__(self, gram, kappa=None, cone=None, name=None, kappa_exact=None):
        rows = [list(r) for r in gram]
        d = len(rows)
        G = np.array([[float(_fraction(x) if _fraction(x) is not None else x) for x in r]
                      for r in rows])
        if G.shape != (d, d) or not np.allclose(G, G.T):
            raise OutOfDomainError("Gram/metric matrix must be square and symmetric")
        if np.min(np.linalg.eigvalsh(G)) <= 0:
            raise OutOfDomainError("Gram/metric matrix must be positive definite")
        super().__init__(d, kappa, 2.0, cone, 0.0, 0.0, name)
        self.gram = G
        exact = [[_fraction(x) for x in r] for r in rows]
        self.gram_exact = exact if all(x is not None for r in exact for x in r) else None
        if kappa_exact is None:
            kappa_exact = [Fraction(0)] * d if kappa is None else [_fraction(k) for k in kappa]
        self.kappa_exact = kappa_exact if all(k is not None for k in kappa_exact) else None

    def _h(self, pts):
        return np.einsum("ni,ij,nj->n", pts, self.gram, pts)

    def _w(self, pts):
        return 2.0 * pts @ self.gram

    def omega_exact(self, index):
        if self.gram_exact is None or self.kappa_exact is None:
            return None
        a = [int(i) + k for i, k in zip(index, self.kappa_exact)]
        return sum(a[i] * a[j] * self.gram_exact[i][j]
                   for i in range(self.d) for j in range(self.d))

    def unit_h_bounds(self, n_dirs=2048, seed=0):
        ev = np.linalg.eigvalsh(self.gram)
        if self.cone.name == "full":
            return float(ev[0]), float(ev[-1])
        return super().unit_h_bounds(n_dirs, seed)


class TorusModel(QuadraticModel):
    """Flat torus: ``-Delta_g = sum g^{ij} A_i A_j`` with ``A_j = i d_j``; kappa = 0, full cone."""

    kind = "torus"

    def __init__(self, metric=None, d: int = 2):
        if metric is None:
            metric = [[1 if i == j else 0 for j in range(d)] for i in range(d)]
        super().__init__(metric, None, full_cone(), "torus")


class SphereModel(QuadraticModel):
    """Round sphere S^n: one action with spectrum ``j + (n-1)/2``, ``h = a^2``."""

    kind = "sphere"

    def __init__(self, n: int = 2):
        if int(n) != n or n < 2:
            raise OutOfDomainError("sphere dimension n must be an integer >= 2")
        self.n = int(n)
        shift = Fraction(self.n - 1, 2)
        super().__init__([[1]], [float(shift)], orthant_cone(), f"sphere{self.n}",
                         kappa_exact=[shift])

    def in_spectrum(self, indices):
        return np.asarray(indices)[:, 0] >= 0

    def multiplicity(self, a) -> int:
        j = _index_of(a)[0]
        if j < 0:
            raise OutOfDomainError("not a point of the sphere spectrum")
        n = self.n
        # dimension of degree-j spherical harmonics on S^n
        return math.comb(j + n, n) - (math.comb(j + n - 2, n) if j >= 2 else 0)

    def laplacian_eigenvalue(self, a) -> float:
        """j (j + n - 1), recovered as a^2 - ((n-1)/2)^2."""
        return float(self.h(a)) - ((self.n - 1) / 2.0) ** 2


@dataclass(frozen=True)
class LieGroupParams:
    """Fundamental weights ``f_1..f_d`` (rows) of a compact simply connected Lie group."""

    weights: tuple[tuple[float, ...], ...]
    gram_exact: tuple[tuple[Fraction, ...], ...] | None = None

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise OutOfDomainError("need d fundamental weights in R^d")
        if abs(np.linalg.det(W)) < 1e-12:
            raise OutOfDomainError("fundamental weights must be linearly independent")

    @property
    def rank(self) -> int:
        return len(self.weights)

    @property
    def gram(self) -> np.ndarray:
        W = np.asarray(self.weights, dtype=float)
        return W @ W.T

    @property
    def offset(self) -> float:
        """F = sum_{i,j} f_i . f_j."""
        return float(np.sum(self.gram))

    @classmethod
    def su2(cls):
        return cls(((0.5,),), ((Fraction(1, 4),),))

    @classmethod
    def su3(cls):
        f1 = (0.5, 0.5 / math.sqrt(3.0))
        f2 = (0.0, 1.0 / math.sqrt(3.0))
        g = ((Fraction(1, 3), Fraction(1, 6)), (Fraction(1, 6), Fraction(1, 3)))
        return cls((f1, f2), g)


class LieGroupModel(QuadraticModel):
    """Laplacian on a compact Lie group, ``h(a) = sum a_i a_j f_i.f_j`` with ``a_j = w^j + 1``."""

    kind = "lie"

    def __init__(self, params: LieGroupParams):
        gram = params.gram_exact if params.gram_exact is not None else params.gram.tolist()
        super().__init__(gram, None, orthant_cone(), f"lie{params.rank}")
        self.gram = params.gram
        self.params = params

    def in_spectrum(self, indices):
        return np.all(np.asarray(indices) >= 1, axis=1)

    def laplacian_eigenvalue(self, a) -> float:
        return float(self.h(a)) - self.params.offset


class AnharmonicModel(GiqsModel):
    """Planar anharmonic oscillator in the regularized actions ``(a_1, a_2 = Mz)``.

    ``h`` is the energy obtained by inverting ``a_1(E, a_2)``; it is defined for
    ``|a| >= 1`` only (the neighborhood of the origin is cut off).
    """

    kind = "anharmonic"

    def __init__(self, params: AnharmonicParams | None = None, kappa=(0.5, 0.0)):
        self.params = params or AnharmonicParams()
        super().__init__(2, kappa, self.params.degree, anharmonic_cone(),
                         r_hom=1.0, min_radius=1.0, name=f"anharmonic{self.params.ell}")

    def _h(self, pts):
        return np.asarray(_anh.invert_actions(self.params, pts[:, 0], pts[:, 1]), dtype=float).reshape(-1)

    def _w(self, pts):
        E = self._h(pts)
        _, dE, dM = _anh.action_a1_with_derivatives(self.params, E, pts[:, 1])
        # implicit differentiation of a1(E, a2) = const
        return np.stack([1.0 / dE, -dM / dE], axis=1)

    def describe(self):
        out = super().describe()
        out["ell"] = self.params.ell
        return out


def _index_of(a) -> tuple[int, ...]:
    if isinstance(a, ActionPoint):
        return a.index
    return tuple(int(i) for i in np.atleast_1d(a))


# -- enumeration ---------------------------------------------------------

def lattice_arrays(model: GiqsModel, r_min: float, r_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Integer indices and real points of the lattice in the closed annulus, lexicographic."""
    if not r_min < r_max:
        raise OutOfDomainError(f"need r_min < r_max, got {r_min}, {r_max}")
    d = model.d
    lo = [math.ceil(-r_max - k - 1e-9) for k in model.kappa]
    hi = [math.floor(r_max - k + 1e-9) for k in model.kappa]
    box = 1
    for a, b in zip(lo, hi):
        box *= max(0, b - a + 1)
    if box * d * 8 * 4 > budget_bytes():
        raise BudgetExceededError(
            f"enumeration box of {box} points exceeds the memory budget (GIQS_BUDGET_MB)")
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    grids = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    pts = idx + model.kappa
    n2 = np.sum(pts**2, axis=1)
    tol = 1e-12 * max(1.0, r_max**2)
    keep = (n2 <= r_max**2 + tol) & (n2 >= r_min**2 - tol)
    keep &= model.cone.contains(pts) if len(pts) else keep
    idx, pts = idx[keep], pts[keep]
    keep = model.in_spectrum(idx) if len(idx) else np.zeros(0, bool)
    return idx[keep], pts[keep]


def enumerate_lattice(model: GiqsModel, r_min: float, r_max: float) -> list[ActionPoint]:
    """The points of ``(Z^d + kappa) ∩ C`` with ``r_min <= |a| <= r_max``, ordered by index."""
    idx, _ = lattice_arrays(model, r_min, r_max)
    kap = tuple(float(k) for k in model.kappa)
    return [ActionPoint(tuple(row), kap) for row in idx.tolist()]


def h_value(model: GiqsModel, a) -> float:
    return model.h(a)


def gradient_w(model: GiqsModel, a) -> np.ndarray:
    return model.w(a)


def multiplicity(model: GiqsModel, a) -> int:
    return model.multiplicity(a)


def build_model(kind: str, **params) -> GiqsModel:
    """Construct a catalog model by name (used by the configuration layer)."""
    if kind == "torus":
        return TorusModel(params.get("metric"), params.get("d", 2))
    if kind == "sphere":
        return SphereModel(params.get("n", 2))
    if kind == "lie":
        group = params.get("group")
        if group == "su2":
            return LieGroupModel(LieGroupParams.su2())
        if group == "su3":
            return LieGroupModel(LieGroupParams.su3())
        weights = params.get("weights")
        if weights is None:
            raise OutOfDomainError("lie model needs 'group' or 'weights'")
        return LieGroupModel(LieGroupParams(tuple(tuple(float(x) for x in r) for r in weights)))
    if kind == "anharmonic":
        ap = AnharmonicParams(ell=params.get("ell", 2))
        return AnharmonicModel(ap, tuple(params.get("kappa", (0.5, 0.0))))
    raise OutOfDomainError(f"unknown model kind {kind!r}")


def sample_rays(model: GiqsModel, n: int, r: float, seed: int = 0,
                interior_margin: float = 0.0) -> np.ndarray:
    """n points of norm r in the cone (optionally shrunk away from its boundary)."""
    rng = np.random.default_rng(seed)
    out = []
    while sum(len(o) for o in out) < n:
        dirs = rng.normal(size=(4 * n, model.d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        ok = model.cone.contains(dirs)
        if interior_margin > 0:
            ok &= _cone_interior(model.cone, dirs, interior_margin)
        out.append(dirs[ok])
    return r * np.concatenate(out)[:n]


def _cone_interior(cone: Cone, dirs: np.ndarray, margin: float) -> np.ndarray:
    """Directions whose ``margin``-neighborhood stays in the cone (checked on the axes)."""
    ok = np.ones(len(dirs), dtype=bool)
    d = dirs.shape[1]
    for i in range(d):
        for s in (-1.0, 1.0):
            e = np.zeros(d)
            e[i] = s * margin
            ok &= cone.contains(dirs + e)
    return ok

