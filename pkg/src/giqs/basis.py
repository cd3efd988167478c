"""Truncated bases of joint eigenstates and matrices indexed by them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceededError, ModelMismatchError, OutOfDomainError
from .lattice import ActionPoint, GiqsModel, budget_bytes, lattice_arrays
from .partition import IndexLookup


@dataclass(frozen=True)
class BasisIndex:
    point: ActionPoint
    slot: int = 0

    def __post_init__(self):
        if self.slot < 0:
            raise OutOfDomainError("slot must be >= 0")


class TruncatedBasis:
    """All states ``(a, slot)`` with ``r_min <= |a| <= cutoff``, ordered by index then slot."""

    def __init__(self, model: GiqsModel, cutoff: float, r_min: float | None = None,
                 boundary_fraction: float = 0.1):
        self.model = model
        self.cutoff = float(cutoff)
        self.r_min = float(model.min_radius if r_min is None else r_min)
        idx, pts = lattice_arrays(model, self.r_min, self.cutoff)
        if len(idx) == 0:
            raise OutOfDomainError("empty truncated basis")
        mult = np.array([model.multiplicity(tuple(r)) for r in idx.tolist()], dtype=np.int64)
        self.point_indices = idx
        self.point_values = pts
        self.point_mult = mult
        self.state_point = np.repeat(np.arange(len(idx)), mult)
        self.state_slot = np.concatenate([np.arange(m) for m in mult])
        self.lookup = IndexLookup(idx)
        self.point_omega = np.asarray(model.h(pts), dtype=float)
        self.point_norm = np.linalg.norm(pts, axis=1)
        self.boundary_radius = (1.0 - boundary_fraction) * self.cutoff
        self._items = None

    def __len__(self) -> int:
        return len(self.state_point)

    @property
    def n_points(self) -> int:
        return len(self.point_indices)

    @property
    def indices(self) -> np.ndarray:
        """Per-state integer index rows."""
        return self.point_indices[self.state_point]

    @property
    def actions(self) -> np.ndarray:
        """Per-state joint action values."""
        return self.point_values[self.state_point]

    @property
    def omega(self) -> np.ndarray:
        return self.point_omega[self.state_point]

    @property
    def norms(self) -> np.ndarray:
        return self.point_norm[self.state_point]

    @property
    def weights(self) -> np.ndarray:
        """Per-state Sobolev weight ``k0_weight(a)``."""
        return np.asarray(self.model.k0_weight(self.actions), dtype=float).reshape(-1)

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.norms >= self.boundary_radius

    def items(self) -> list[BasisIndex]:
        if self._items is None:
            kap = tuple(float(k) for k in self.model.kappa)
            pts = [ActionPoint(tuple(r), kap) for r in self.point_indices.tolist()]
            self._items = [BasisIndex(pts[p], int(s))
                           for p, s in zip(self.state_point.tolist(), self.state_slot.tolist())]
        return self._items

    def position(self, index, slot: int = 0) -> int:
        """State position of ``(index, slot)``; -1 if outside the truncation."""
        idx = index.index if isinstance(index, ActionPoint) else index
        p = int(self.lookup.find(np.asarray(idx, dtype=np.int64).reshape(1, -1))[0])
        if p < 0 or slot >= self.point_mult[p]:
            return -1
        start = int(np.searchsorted(self.state_point, p))
        return start + slot

    def check_dense(self, n_matrices: int = 1, itemsize: int = 8):
        need = len(self) ** 2 * itemsize * n_matrices
        if need > budget_bytes():
            raise BudgetExceededError(
                f"{n_matrices} dense {len(self)}x{len(self)} matrices need {need / 2**20:.0f} MB")

    def describe(self) -> dict:
        return {"cutoff": self.cutoff, "r_min": self.r_min, "n_states": len(self),
                "n_points": self.n_points, "boundary_radius": self.boundary_radius}


@dataclass
class OperatorMatrix:
    """A finite Hermitian matrix on a truncated basis with ``(order, decay)`` metadata."""

    basis: TruncatedBasis
    entries: np.ndarray
    order: float = 0.0
    decay: float = math.inf
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.basis)
        if self.entries.shape != (n, n):
            raise ModelMismatchError(f"matrix shape {self.entries.shape} does not match basis size {n}")

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.entries)

    def hermiticity_error(self) -> float:
        M = self.entries
        scale = max(np.abs(M).max(), 1e-300)
        return float(np.abs(M - M.conj().T).max() / scale)

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.entries))

    def with_entries(self, entries: np.ndarray, **meta) -> "OperatorMatrix":
        return OperatorMatrix(self.basis, entries, self.order, self.decay, {**self.meta, **meta})

    def decay_audit(self, tol: float = 1e-14) -> dict:
        """Fit ``c`` in ``|V_ab| <= c (<a>+<b>)^order <a-b>^(-decay)`` on the nonzero entries."""
        M = np.abs(self.entries)
        nz = M > tol * max(M.max(), 1e-300)
        i, j = np.nonzero(nz)
        if len(i) == 0:
            return {"c": 0.0, "n_entries": 0}
        A = self.basis.actions
        w = self.basis.weights
        env = (w[i] + w[j]) ** self.order
        if math.isfinite(self.decay):
            env = env * (1.0 + np.sum((A[i] - A[j]) ** 2, axis=1)) ** (-self.decay / 2)
        ratio = M[i, j] / env
        return {"c": float(ratio.max()), "c_median": float(np.median(ratio)), "n_entries": int(len(i))}


def _diff_keys(basis: TruncatedBasis, rows: slice):
    idx = basis.indices
    span = idx.max(axis=0) - idx.min(axis=0)
    width = 2 * span + 1
    D = idx[rows, None, :] - idx[None, :, :] + span
    key = np.zeros(D.shape[:2], dtype=np.int64)
    for ax in range(idx.shape[1]):
        key = key * width[ax] + D[:, :, ax]
    return key, span, width


def convolution_operator(basis: TruncatedBasis, coeff, order: float = 0.0, decay: float = math.inf,
                         chunk: int = 512) -> OperatorMatrix:
    """``V_ab = v(a - b)`` on point indices, identity in the slot variables.

    ``coeff`` maps an ``(m, d)`` integer array of differences to ``m`` values and
    must satisfy ``v(-k) = conj(v(k))`` for a Hermitian result.
    """
    n = len(basis)
    basis.check_dense()
    idx = basis.indices
    span = idx.max(axis=0) - idx.min(axis=0)
    width = 2 * span + 1
    grids = np.meshgrid(*[np.arange(-s, s + 1) for s in span], indexing="ij")
    K = np.stack([g.ravel() for g in grids], axis=1)
    table = np.asarray(coeff(K))
    dtype = np.complex128 if np.iscomplexobj(table) else np.float64
    M = np.zeros((n, n), dtype=dtype)
    slots = basis.state_slot
    for s in range(0, n, chunk):
        rows = slice(s, min(n, s + chunk))
        key, _, _ = _diff_keys(basis, rows)
        blk = table[key]
        blk[slots[rows, None] != slots[None, :]] = 0
        M[rows] = blk
    return OperatorMatrix(basis, M, order, decay, {"kind": "convolution"})


def _canonical_sign(K: np.ndarray, seed: int) -> np.ndarray:
    """Pseudo-random +-1 depending only on the pair {k, -k}."""
    first = np.zeros(len(K), dtype=np.int64)
    for ax in range(K.shape[1] - 1, -1, -1):
        first = np.where(K[:, ax] != 0, np.sign(K[:, ax]), first)
    C = K * np.where(first < 0, -1, 1)[:, None]
    key = np.zeros(len(K), dtype=np.uint64)
    for ax in range(K.shape[1]):
        key = key * np.uint64(4099) + (C[:, ax] + 2048).astype(np.uint64)
    key = (key + np.uint64(seed)) * np.uint64(0x9E3779B97F4A7C15)
    return np.where((key >> np.uint64(40)) & np.uint64(1), -1.0, 1.0)


def decaying_convolution(eps: float = 0.1, nu: float = 4.0, seed: int = 0):
    """Coefficient function ``v(k) = eps * s(k) * <k>^(-nu)``, real and even in ``k``."""

    def coeff(K):
        K = np.asarray(K, dtype=np.int64)
        return eps * _canonical_sign(K, seed) * (1.0 + np.sum(K.astype(float) ** 2, axis=1)) ** (-nu / 2)

    return coeff


def random_decay_operator(basis: TruncatedBasis, order: float, decay: float, seed: int = 0,
                          scale: float = 1.0, complex_entries: bool = True) -> OperatorMatrix:
    """Hermitian random matrix with envelope ``(<a>+<b>)^order <a-b>^(-decay)``."""
    basis.check_dense(2 if complex_entries else 1)
    n = len(basis)
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(n, n))
    if complex_entries:
        G = G + 1j * rng.normal(size=(n, n))
    G = (G + G.conj().T) / 2
    w = basis.weights
    A = basis.actions
    d2 = np.zeros((n, n))
    for ax in range(A.shape[1]):
        d2 += (A[:, None, ax] - A[None, :, ax]) ** 2
    env = (w[:, None] + w[None, :]) ** order * (1.0 + d2) ** (-decay / 2)
    return OperatorMatrix(basis, scale * G * env, order, decay, {"kind": "random-decay", "seed": seed})


def trigonometric_potential(eps: float = 0.1, nu: float = 4.0, k_max: float = 3.0, seed: int = 0):
    """Finitely many Fourier modes ``|k| <= k_max`` with ``v(k) = eps * s(k) * <k>^(-nu)``.

    A smooth (trigonometric polynomial) potential whose coefficients obey the
    ``<k>^(-nu)`` envelope; ``v`` is real and even.
    """
    full = decaying_convolution(eps, nu, seed)

    def coeff(K):
        K = np.asarray(K, dtype=np.int64)
        v = full(K)
        v[np.sum(K.astype(float) ** 2, axis=1) > k_max**2 + 1e-9] = 0.0
        return v

    return coeff
