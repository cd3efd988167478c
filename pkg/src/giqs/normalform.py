"""Matrix-level quantum normal form, perturbed eigenvalues and the Omega-set checks.

Conjugation convention: the generator ``W`` is anti-Hermitian with entries
``W_ab = V_ab / (omega_a - omega_b)`` on eliminated pairs, the unitary is
``U = exp(W)`` (equivalently ``exp(i X)`` with ``X = -i W`` Hermitian), new
states are ``psi = U^* phi`` and

    U (H + V) U^*  =  H + Z + R_rem

which defines ``R_rem``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .basis import OperatorMatrix, TruncatedBasis
from .clusters import build_clusters_from_values
from .errors import ConvergenceError, ModelMismatchError, OutOfDomainError, QuadratureError
from .lattice import GiqsModel
from .partition import (IndexLookup, PartitionReport, ResonanceParams, build_partition,
                        integer_vectors, resonance_matrix)

DIVISOR_FLOOR = 1e-10


# -- averaging ------------------------------------------------------------

def commutant_projection(V: OperatorMatrix | np.ndarray, action_values=None):
    """Zero every entry between states with different joint action values."""
    M = V.entries if isinstance(V, OperatorMatrix) else np.asarray(V)
    A = np.asarray(V.basis.actions if action_values is None else action_values, dtype=float)
    A = A.reshape(len(A), -1)
    same = np.ones(M.shape, dtype=bool)
    for ax in range(A.shape[1]):
        same &= A[:, None, ax] == A[None, :, ax]
    out = np.where(same, M, 0)
    return V.with_entries(out, averaged=True) if isinstance(V, OperatorMatrix) else out


def required_grid(action_values) -> int:
    A = np.asarray(action_values, dtype=float).reshape(len(action_values), -1)
    spread = int(np.ceil(np.max(A.max(axis=0) - A.min(axis=0)))) if len(A) else 0
    return 2 * spread + 1


def average_quadrature(V: OperatorMatrix | np.ndarray, action_values=None, grid_N: int | None = None,
                       check: bool = True):
    """Uniform-grid quadrature of ``(2pi)^-d int exp(-i phi.A) V exp(i phi.A) dphi``.

    The torus average factorizes over the axes, so each axis is averaged in turn
    with diagonal phase matrices.  With ``check`` the result is compared with
    :func:`commutant_projection` and aliasing raises :class:`QuadratureError`.
    """
    M = V.entries if isinstance(V, OperatorMatrix) else np.asarray(V)
    A = np.asarray(V.basis.actions if action_values is None else action_values, dtype=float)
    A = A.reshape(len(A), -1)
    N = required_grid(A) if grid_N is None else int(grid_N)
    if N < 1:
        raise OutOfDomainError("grid_N must be >= 1")
    out = M.astype(np.complex128)
    for ax in range(A.shape[1]):
        acc = np.zeros_like(out)
        a = A[:, ax] - A[:, ax].min()
        for m in range(N):
            ph = np.exp(1j * 2 * np.pi * m / N * a)
            acc += ph.conj()[:, None] * out * ph[None, :]
        out = acc / N
    if not np.iscomplexobj(M):
        out = out.real
    if check:
        ref = commutant_projection(M, A)
        scale = max(np.linalg.norm(M), 1e-300)
        if np.linalg.norm(out - ref) > 1e-10 * scale:
            raise QuadratureError(f"grid of size {N} aliases (need >= {required_grid(A)})")
    return V.with_entries(out, averaged=True) if isinstance(V, OperatorMatrix) else out


# -- homological equation ------------------------------------------------

@dataclass
class SupportSplit:
    z_mask: np.ndarray
    elim_mask: np.ndarray
    degenerate_in_block: int
    degenerate_cross_block: int
    tail_mask: np.ndarray


def resonant_support(basis: TruncatedBasis, p: ResonanceParams,
                     partition: PartitionReport | None = None,
                     floor: float = DIVISOR_FLOOR) -> SupportSplit:
    """Classify every matrix position as normal form, eliminated, or left in the remainder.

    Normal form: same joint action, or ``b = a + k`` with ``a`` or ``b`` resonant
    with ``k``.  Eliminated: the remaining pairs with ``|k| <= max(|a|,|b|)^mu``
    and both ``|a|, |b| >= R`` whose divisor clears ``floor``.  Everything else
    (pairs below ``R`` or at distances beyond the resonance range) stays in the
    remainder; degenerate pairs inside one block are moved into the normal form.
    """
    model = basis.model
    n = len(basis)
    pidx = basis.point_indices
    norms = basis.point_norm
    evaluable = norms >= max(model.min_radius, 1e-300)
    W = np.zeros_like(basis.point_values)
    W[evaluable] = model.w(basis.point_values[evaluable])
    K = integer_vectors(max(basis.cutoff, 1.0) ** p.mu, model.d)
    res = resonance_matrix(W, norms, K, p) & evaluable[:, None]
    sp = basis.state_point

    point_z = np.zeros((basis.n_points, basis.n_points), dtype=bool)
    np.fill_diagonal(point_z, True)
    for c in range(len(K)):
        src = np.flatnonzero(res[:, c])
        if len(src) == 0:
            continue
        dst = basis.lookup.find(pidx[src] + K[c])
        ok = dst >= 0
        point_z[src[ok], dst[ok]] = True
        point_z[dst[ok], src[ok]] = True

    if partition is None:
        partition = build_partition(model, (basis.r_min, basis.cutoff), p)
    pos = IndexLookup(partition.indices).find(pidx)
    if np.any(pos < 0):
        raise ModelMismatchError("partition does not cover the basis")
    blk = partition.block_of[pos]

    z_mask = point_z[np.ix_(sp, sp)]
    om = basis.point_omega[sp]
    nrm = norms[sp]
    div = np.abs(om[:, None] - om[None, :])
    D2 = np.zeros((n, n))
    ind = basis.indices
    for ax in range(ind.shape[1]):
        D2 += (ind[:, None, ax] - ind[None, :, ax]).astype(float) ** 2
    big = np.maximum(nrm[:, None], nrm[None, :])
    in_range = (D2 <= (big ** p.mu) ** 2 * (1 + 1e-12)) & (np.minimum(nrm[:, None], nrm[None, :]) >= p.R)
    candidate = ~z_mask & in_range
    degenerate = ~z_mask & (div < floor)
    same_block = blk[sp][:, None] == blk[sp][None, :]
    deg_in = degenerate & same_block
    deg_cross = degenerate & ~same_block
    z_mask = z_mask | deg_in
    elim = candidate & ~degenerate
    tail = ~z_mask & ~elim
    return SupportSplit(z_mask, elim, int(deg_in.sum()), int(deg_cross.sum()), tail)


@dataclass
class NormalFormResult:
    """Output of one or more homological steps."""

    generator: OperatorMatrix
    Z: OperatorMatrix
    remainder: OperatorMatrix
    unitary: np.ndarray
    masses: list
    floor: float
    warnings: dict
    z_diagonals: list = field(default_factory=list)
    steps: int = 1
    convention: str = "U = exp(W), W anti-Hermitian, U (H+V) U^* = H + Z + R"

    @property
    def basis(self) -> TruncatedBasis:
        return self.Z.basis

    @property
    def z0(self) -> np.ndarray:
        return self.z_diagonals[0]

    @property
    def z1(self) -> np.ndarray:
        if len(self.z_diagonals) < 2:
            raise ValueError("z1 needs at least two steps")
        return self.z_diagonals[1] - self.z_diagonals[0]

    def bookkeeping_error(self, V: OperatorMatrix) -> float:
        """``|U(H+V)U^* - (H + Z + R)|_F / |V|_F``."""
        H = np.diag(self.basis.omega)
        U = self.unitary
        lhs = U @ (H + V.entries) @ U.conj().T
        rhs = H + self.Z.entries + self.remainder.entries
        return float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(V.entries), 1e-300))

    def unitarity_error(self) -> float:
        U = self.unitary
        return float(np.abs(U @ U.conj().T - np.eye(len(U))).max())

    def summary(self) -> dict:
        return {"steps": self.steps, "masses": self.masses, "floor": self.floor,
                "warnings": self.warnings, "convention": self.convention,
                "unitarity_error": self.unitarity_error()}


def _unitary(G: np.ndarray) -> np.ndarray:
    return sla.expm(G)


def homological_step(H_diag, V: OperatorMatrix, model: GiqsModel, p: ResonanceParams,
                     partition: PartitionReport | None = None, floor: float = DIVISOR_FLOOR,
                     split: SupportSplit | None = None) -> NormalFormResult:
    """One elimination step; see the module docstring for the convention."""
    basis = V.basis
    if basis.model is not model:
        raise ModelMismatchError("operator basis belongs to a different model")
    om = np.asarray(H_diag, dtype=float).reshape(-1)
    if om.shape != (len(basis),):
        raise ModelMismatchError("H_diag must give one frequency per basis state")
    split = split or resonant_support(basis, p, partition, floor)
    M = V.entries
    Zm = np.where(split.z_mask, M, 0)
    elim = np.where(split.elim_mask, M, 0)
    denom = om[:, None] - om[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        G = np.where(split.elim_mask, elim / np.where(split.elim_mask, denom, 1.0), 0)
    U = _unitary(G)
    H = np.diag(om)
    conj = U @ (H + M) @ U.conj().T
    R = conj - H - Zm
    R = (R + R.conj().T) / 2
    mass = float(np.linalg.norm(elim))
    warn = {"degenerate_in_block": split.degenerate_in_block,
            "degenerate_cross_block": split.degenerate_cross_block}
    if split.degenerate_in_block:
        warnings.warn(f"{split.degenerate_in_block} entries below the divisor floor moved into Z")
    return NormalFormResult(V.with_entries(G, generator=True), V.with_entries(Zm),
                            V.with_entries(R), U, [mass], floor, warn,
                            [np.real(np.diag(Zm)).copy()], 1)


def iterate_normal_form(H_diag, V: OperatorMatrix, model: GiqsModel, p: ResonanceParams, N: int,
                        partition: PartitionReport | None = None,
                        floor: float = DIVISOR_FLOOR) -> NormalFormResult:
    """``N`` homological steps, each applied to the normal form plus remainder of the last."""
    if N < 1:
        raise OutOfDomainError("N must be >= 1")
    split = resonant_support(V.basis, p, partition, floor)
    res = homological_step(H_diag, V, model, p, partition, floor, split)
    for _ in range(1, N):
        Vn = V.with_entries(res.Z.entries + res.remainder.entries)
        nxt = homological_step(H_diag, Vn, model, p, partition, floor, split)
        if nxt.masses[0] > res.masses[-1]:
            raise ConvergenceError(
                f"eliminated mass grew from {res.masses[-1]:.3e} to {nxt.masses[0]:.3e}")
        warn = {k: res.warnings[k] + nxt.warnings[k] for k in res.warnings}
        res = NormalFormResult(nxt.generator, nxt.Z, nxt.remainder, nxt.unitary @ res.unitary,
                               res.masses + nxt.masses, floor, warn,
                               res.z_diagonals + nxt.z_diagonals, res.steps + 1)
    return res


def support_violations(Z: OperatorMatrix, partition: PartitionReport, tol: float = 0.0) -> int:
    """Number of nonzero entries of ``Z`` connecting different partition blocks."""
    pos = IndexLookup(partition.indices).find(Z.basis.point_indices)
    blk = partition.block_of[pos][Z.basis.state_point]
    off = blk[:, None] != blk[None, :]
    return int(np.count_nonzero(np.abs(Z.entries[off]) > tol))


# -- shell statistics and power-law fits -----------------------------------

@dataclass
class PowerFit:
    exponent: float
    prefactor: float
    r2: float
    x: list
    y: list

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "prefactor": self.prefactor, "r2": self.r2,
                "x": self.x, "y": self.y}


def power_fit(x, y) -> PowerFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 3:
        raise OutOfDomainError("power-law fit needs at least three positive points")
    lx, ly = np.log(x[ok]), np.log(y[ok])
    slope, icpt = np.polyfit(lx, ly, 1)
    pred = slope * lx + icpt
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - pred) ** 2)) / ss if ss > 0 else 1.0
    return PowerFit(float(slope), float(math.exp(icpt)), r2, x[ok].tolist(), y[ok].tolist())


def shell_statistic(radii, values, r_lo: float, r_hi: float, n_shells: int = 8,
                    stat: str = "max", weights=None):
    """Per-shell statistic of ``values`` against the mean bracket ``<a>`` of the shell."""
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    edges = np.linspace(r_lo, r_hi, n_shells + 1)
    xs, ys = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (radii >= lo) & (radii < hi)
        if not np.any(m):
            continue
        v = values[m]
        if stat == "max":
            y = float(v.max())
        elif stat == "rms":
            y = float(np.sqrt(np.mean(v**2)))
        elif stat == "mean":
            y = float(v.mean())
        else:
            raise ValueError(f"unknown statistic {stat!r}")
        xs.append(float(np.mean(np.sqrt(1 + radii[m] ** 2))))
        ys.append(y)
    return np.array(xs), np.array(ys)


def remainder_order(result: NormalFormResult, p: ResonanceParams, r_hi_fraction: float = 0.8,
                    n_shells: int = 8) -> PowerFit:
    """Power-law order of the RMS remainder row norm per shell over ``[R, 0.8 cutoff]``."""
    basis = result.basis
    rows = np.linalg.norm(result.remainder.entries, axis=1)
    x, y = shell_statistic(basis.norms, rows, p.R, r_hi_fraction * basis.cutoff, n_shells, "rms")
    return power_fit(x, y)


# -- perturbed eigenvalues -------------------------------------------------

@dataclass
class EigenMatch:
    a: tuple
    slot: int
    lam0: float
    mu: float
    lam: float
    residual: float
    norm: float

    def to_dict(self) -> dict:
        return {"a": list(self.a), "slot": self.slot, "lambda_a": self.lam0, "mu": self.mu,
                "lambda": self.lam, "residual": self.residual}


@dataclass
class SpectrumResult:
    matches: list
    skipped_clusters: list
    eigenvalues: np.ndarray

    def residual_fit(self, r_lo: float, r_hi: float, n_shells: int = 8, stat: str = "max") -> PowerFit:
        norms = np.array([m.norm for m in self.matches])
        res = np.array([m.residual for m in self.matches])
        x, y = shell_statistic(norms, res, r_lo, r_hi, n_shells, stat)
        return power_fit(x, y)


def first_corrections(V: OperatorMatrix) -> np.ndarray:
    """Per-state ``mu_{a,j}``: eigenvalues of ``Pi_a <V> Pi_a`` (ascending within each point)."""
    basis = V.basis
    out = np.zeros(len(basis))
    sp = basis.state_point
    if np.all(basis.point_mult == 1):
        return np.real(np.diag(V.entries)).copy()
    for q in range(basis.n_points):
        s = np.flatnonzero(sp == q)
        out[s] = np.linalg.eigvalsh(V.entries[np.ix_(s, s)])
    return out


def perturbed_spectrum(model: GiqsModel, V: OperatorMatrix, cutoff: float | None = None,
                       mask=None) -> SpectrumResult:
    """Eigenvalues of ``H_L + V`` matched per spectral cluster to ``lambda_a + mu_{a,j}``.

    ``mask`` selects which states carry predictions (e.g. the Omega set); all
    eigenvalues of a cluster window are available to the assignment.  ``cutoff``
    optionally restricts the reported matches to ``|a| <= cutoff``.
    """
    basis = V.basis
    if basis.model is not model:
        raise ModelMismatchError("operator basis belongs to a different model")
    om = basis.omega
    H = np.diag(om) + V.entries
    ev = np.linalg.eigvalsh(H)
    mu = first_corrections(V)
    pred_mask = np.ones(len(basis), bool) if mask is None else np.asarray(mask, bool)
    if cutoff is not None:
        pred_mask &= basis.norms <= cutoff
    cl = build_clusters_from_values(om, model.d, model.degree)
    mids = (cl.beta[:-1] + cl.alpha[1:]) / 2
    ev_win = np.searchsorted(mids, ev)
    st_win = np.searchsorted(mids, om)
    matches, skipped = [], []
    idx = basis.indices
    order_ev = np.argsort(ev_win, kind="stable")
    ev_sorted_win = ev_win[order_ev]
    pred_states = np.flatnonzero(pred_mask)
    by_win = {}
    for s in pred_states:
        by_win.setdefault(int(st_win[s]), []).append(s)
    for w, states in sorted(by_win.items()):
        lo, hi = np.searchsorted(ev_sorted_win, [w, w + 1])
        eigs = ev[order_ev[lo:hi]]
        if len(states) > len(eigs):
            skipped.append({"cluster": w, "predictions": len(states), "eigenvalues": len(eigs)})
            continue
        pred = om[states] + mu[states]
        cost = np.abs(pred[:, None] - eigs[None, :])
        r, c = linear_sum_assignment(cost)
        for i, j in zip(r, c):
            s = states[i]
            matches.append(EigenMatch(tuple(int(x) for x in idx[s]), int(basis.state_slot[s]),
                                      float(om[s]), float(mu[s]), float(eigs[j]),
                                      float(cost[i, j]), float(basis.norms[s])))
    return SpectrumResult(matches, skipped, ev)


# -- Omega set -------------------------------------------------------------

@dataclass
class OmegaDensityFit:
    radii: list
    deficiency: list
    counts: list
    rho: float | None
    decreasing: bool
    empty: bool
    note: str = ""

    def to_dict(self) -> dict:
        return {"radii": self.radii, "deficiency": self.deficiency, "counts": self.counts,
                "rho": self.rho, "decreasing": self.decreasing, "empty": self.empty,
                "note": self.note}


def omega_density(partition: PartitionReport, radii) -> OmegaDensityFit:
    """Deficiency ``1 - #(Omega ∩ B_R)/#(Lambda ∩ B_R)`` per radius and a log-log rate."""
    radii = [float(r) for r in radii]
    r_lo, r_hi = partition.annulus
    if max(radii) > r_hi + 1e-12:
        raise OutOfDomainError("partition does not cover every requested radius")
    norms = np.linalg.norm(partition.points, axis=1)
    om = partition.omega_mask()
    deficiency, counts = [], []
    for R in radii:
        m = norms <= R
        tot = int(m.sum())
        counts.append(tot)
        deficiency.append(1.0 - float(om[m].sum()) / tot if tot else math.nan)
    empty = not bool(np.any(om & (norms >= partition.params.R)))
    dec = all(b < a for a, b in zip(deficiency[:-1], deficiency[1:]))
    rho, note = None, ""
    if empty:
        note = "Omega is empty beyond R: every point is resonant"
    else:
        pos = [(r, dd) for r, dd in zip(radii, deficiency) if dd > 0]
        if len(pos) >= 2:
            slope = np.polyfit(np.log([r for r, _ in pos]), np.log([dd for _, dd in pos]), 1)[0]
            rho = float(-slope)
        elif deficiency and all(dd == 0 for dd in deficiency):
            rho = math.inf
    return OmegaDensityFit(radii, deficiency, counts, rho, dec, empty, note)


# -- asymptotic expansion --------------------------------------------------

@dataclass
class AsymptoticFit:
    z0: np.ndarray
    z1: np.ndarray
    norms: np.ndarray
    m0: float | None
    m1: float | None
    m_residual: float | None
    ordered: bool
    details: dict

    def to_dict(self) -> dict:
        return {"m0": self.m0, "m1": self.m1, "m_residual": self.m_residual,
                "ordered": self.ordered, "details": self.details}


def _order_or_none(x, y):
    if not np.any(np.asarray(y) > 0):
        return None, None
    f = power_fit(x, y)
    return f.exponent, f


def asymptotic_expansion_fit(result: NormalFormResult, omega_mask, p: ResonanceParams,
                             spectrum: SpectrumResult | None = None, r_hi_fraction: float = 0.8,
                             n_shells: int = 6) -> AsymptoticFit:
    """Tabulate ``z0, z1`` on Omega and fit their decay orders on ``[R, 0.8 cutoff]``."""
    basis = result.basis
    if np.any(basis.point_mult > 1):
        raise ModelMismatchError("the expansion fit needs a multiplicity-one model")
    if len(result.z_diagonals) < 2:
        raise OutOfDomainError("need a normal form with at least two steps")
    mask = np.asarray(omega_mask, bool)
    nrm = basis.norms
    core = mask & (nrm >= p.R) & (nrm <= r_hi_fraction * basis.cutoff)
    if core.sum() < 3 * n_shells:
        raise OutOfDomainError("insufficient Omega points for a fit")
    z0, z1 = result.z0, result.z1
    lo, hi = p.R, r_hi_fraction * basis.cutoff
    x0, y0 = shell_statistic(nrm[core], np.abs(z0[core]), lo, hi, n_shells, "max")
    x1, y1 = shell_statistic(nrm[core], np.abs(z1[core]), lo, hi, n_shells, "max")
    m0, f0 = _order_or_none(x0, y0)
    m1, f1 = _order_or_none(x1, y1)
    details = {"z0_fit": f0.to_dict() if f0 else None, "z1_fit": f1.to_dict() if f1 else None}
    m_res = None
    if spectrum is not None:
        pos = {(m.a, m.slot): m for m in spectrum.matches}
        items = basis.indices
        rs, rr = [], []
        for s in np.flatnonzero(core):
            m = pos.get((tuple(int(x) for x in items[s]), int(basis.state_slot[s])))
            if m is not None:
                rs.append(nrm[s])
                rr.append(abs(m.lam - m.lam0 - z0[s] - z1[s]))
        if len(rs) >= 3 * n_shells:
            xr, yr = shell_statistic(rs, rr, lo, hi, n_shells, "max")
            m_res, fr = _order_or_none(xr, yr)
            details["residual_fit"] = fr.to_dict() if fr else None
    ordered = all(a is not None and b is not None and b < a
                  for a, b in [(m0, m1)] + ([(m1, m_res)] if m_res is not None else []))
    return AsymptoticFit(z0[core], z1[core], nrm[core], m0, m1, m_res, ordered, details)
