"""Spectral clusters of the eigenvalues and the Melnikov small-divisor scanner."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import BudgetExceededError, OutOfDomainError
from .lattice import ActionPoint, GiqsModel, lattice_arrays

DEFAULT_MAX_TUPLES = 50_000_000


def _unique_sorted(values: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    v = np.sort(values)
    if len(v) == 0:
        return v
    scale = max(1.0, float(np.max(np.abs(v))))
    keep = np.ones(len(v), dtype=bool)
    keep[1:] = np.diff(v) > rel_tol * scale
    return v[keep]


@dataclass
class SpectralCluster:
    """Intervals ``[alpha_n, beta_n]`` covering the spectrum up to ``E_max``.

    Intervals are numbered from ``n = 1``; the gap after interval ``n`` must be
    at least ``2 n^(-d/degree)``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    values: np.ndarray
    E_max: float
    exponent: float
    failures: list = field(default_factory=list)

    @property
    def n_intervals(self) -> int:
        return len(self.alpha)

    @property
    def widths(self) -> np.ndarray:
        return self.beta - self.alpha

    @property
    def gaps(self) -> np.ndarray:
        return self.alpha[1:] - self.beta[:-1]

    def gap_bounds(self) -> np.ndarray:
        n = np.arange(1, self.n_intervals, dtype=float)
        return 2.0 * n ** (-self.exponent)

    def cluster_of(self, omega) -> np.ndarray | int:
        """Interval index (0-based position) containing each value, -1 if uncovered."""
        om = np.atleast_1d(np.asarray(omega, dtype=float))
        pos = np.searchsorted(self.alpha, om, side="right") - 1
        tol = 1e-12 * max(1.0, abs(self.E_max))
        ok = (pos >= 0) & (om <= self.beta[np.maximum(pos, 0)] + tol)
        out = np.where(ok, pos, -1)
        return int(out[0]) if np.ndim(omega) == 0 else out

    def verify(self) -> dict:
        widths_ok = bool(np.all(self.widths <= 2.0 + 1e-12))
        gap_ok = self.gaps >= self.gap_bounds() * (1 - 1e-12)
        covered = self.cluster_of(self.values)
        return {"widths_ok": widths_ok,
                "max_width": float(self.widths.max()) if self.n_intervals else 0.0,
                "gaps_ok": bool(np.all(gap_ok)),
                "gap_failures": [int(i + 1) for i in np.flatnonzero(~gap_ok)],
                "min_gap_ratio": float(np.min(self.gaps / self.gap_bounds())) if self.n_intervals > 1 else math.inf,
                "covered": bool(np.all(covered >= 0)),
                "ordered": bool(np.all(self.alpha <= self.beta) and np.all(self.gaps > 0))}

    def to_dict(self) -> dict:
        return {"E_max": self.E_max, "n_intervals": self.n_intervals,
                "gap_exponent": self.exponent,
                "intervals": [[float(a), float(b)] for a, b in zip(self.alpha, self.beta)],
                "failures": self.failures, "verification": self.verify()}


def build_clusters_from_values(values, d: int, degree: float, E_max: float | None = None) -> SpectralCluster:
    """Greedy clustering of sorted values: split as soon as the gap bound allows, merge otherwise."""
    v = _unique_sorted(np.asarray(values, dtype=float))
    if len(v) == 0:
        raise OutOfDomainError("no eigenvalues to cluster")
    exponent = d / degree
    alpha, beta, failures = [v[0]], [v[0]], []
    for x in v[1:]:
        n = len(alpha)
        if x - beta[-1] >= 2.0 * n ** (-exponent):
            alpha.append(x)
            beta.append(x)
        else:
            beta[-1] = x
            if beta[-1] - alpha[-1] > 2.0 + 1e-12:
                if not failures or failures[-1]["n"] != n:
                    failures.append({"n": n, "reason": "width exceeds 2 while the gap bound forbids a split"})
    return SpectralCluster(np.array(alpha), np.array(beta), v,
                           float(v[-1] if E_max is None else E_max), exponent, failures)


def spectrum_points(model: GiqsModel, E_max: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lattice points with ``h <= E_max``: (indices, points, omegas)."""
    r = model.radius_for_energy(E_max)
    idx, pts = lattice_arrays(model, model.min_radius, r)
    om = model.h(pts) if len(pts) else np.zeros(0)
    keep = om <= E_max * (1 + 1e-14)
    return idx[keep], pts[keep], om[keep]


def build_clusters(model: GiqsModel, E_max: float) -> SpectralCluster:
    _, _, om = spectrum_points(model, E_max)
    return build_clusters_from_values(om, model.d, model.degree, E_max)


def classify_tuple(clusters: SpectralCluster, omegas, j: int | None = None,
                   up_to_permutation: bool = False) -> str:
    """``"dangerous"`` or ``"nondangerous"`` for a tuple given by its eigenvalues.

    The literal rule pairs entry ``l`` with entry ``l + r/2``.  With
    ``up_to_permutation`` the two halves are compared as multisets of clusters.
    ``j`` only matters for the exemption, see :func:`is_exempt`.
    """
    om = [float(x) for x in omegas]
    r = len(om)
    if j is not None and not 0 <= j <= r:
        raise OutOfDomainError("split index must satisfy 0 <= j <= r")
    if r % 2:
        return "nondangerous"
    ids = [int(c) for c in np.atleast_1d(clusters.cluster_of(np.array(om)))]
    if min(ids) < 0:
        return "nondangerous"
    left, right = ids[: r // 2], ids[r // 2:]
    if up_to_permutation:
        left, right = sorted(left), sorted(right)
    return "dangerous" if left == right else "nondangerous"


def is_exempt(kind: str, j: int, r: int) -> bool:
    return kind == "dangerous" and 2 * j == r


@dataclass
class MelnikovViolation:
    plus: tuple
    minus: tuple
    j: int
    divisor: float
    divisor_exact: str | None
    bound: float
    kind: str

    def to_dict(self) -> dict:
        return {"plus": [list(p) for p in self.plus], "minus": [list(p) for p in self.minus],
                "j": self.j, "divisor": self.divisor, "divisor_exact": self.divisor_exact,
                "bound": self.bound, "class": self.kind}


@dataclass
class MelnikovReport:
    r: int
    cutoff: float
    gamma: float
    tau: float
    n_points: int
    n_tuples: int
    exact: bool
    min_divisor: float
    min_divisor_at: dict | None
    gamma_eff_max: float
    gamma_eff_max3: float
    n_violations: int
    violations: list
    truncated: bool

    def to_dict(self) -> dict:
        return {"r": self.r, "cutoff": self.cutoff, "gamma_r": self.gamma, "tau_r": self.tau,
                "n_points": self.n_points, "n_tuples": self.n_tuples, "exact": self.exact,
                "min_divisor": self.min_divisor, "min_divisor_at": self.min_divisor_at,
                "gamma_eff_max": self.gamma_eff_max, "gamma_eff_max3": self.gamma_eff_max3,
                "n_violations": self.n_violations, "violations_truncated": self.truncated,
                "violations": [v.to_dict() for v in self.violations]}


def _multisets(n: int, size: int) -> np.ndarray:
    if size == 0:
        return np.zeros((1, 0), dtype=np.int64)
    flat = np.fromiter(itertools.chain.from_iterable(
        itertools.combinations_with_replacement(range(n), size)), dtype=np.int64)
    return flat.reshape(-1, size)


def _top3(norms: np.ndarray, sets: np.ndarray) -> np.ndarray:
    """Three largest norms of each multiset, descending, zero padded."""
    if sets.shape[1] == 0:
        return np.zeros((len(sets), 3))
    vals = -np.sort(-norms[sets], axis=1)[:, :3]
    if vals.shape[1] < 3:
        vals = np.hstack([vals, np.zeros((len(vals), 3 - vals.shape[1]))])
    return vals


def _exact_scale(model: GiqsModel, idx: np.ndarray):
    """Common-denominator integer eigenvalues, or None if not exactly representable."""
    fr = [model.omega_exact(tuple(int(x) for x in row)) for row in idx]
    if any(f is None for f in fr):
        return None
    L = 1
    for f in fr:
        L = L * f.denominator // math.gcd(L, f.denominator)
    ints = [int(f * L) for f in fr]
    if max((abs(x) for x in ints), default=0) * 64 > 2**62:
        return None
    return np.array(ints, dtype=np.int64), L


def melnikov_scan(model: GiqsModel, clusters: SpectralCluster, r: int, cutoff: float,
                  gamma: float, tau: float, max_tuples: int = DEFAULT_MAX_TUPLES,
                  max_report: int = 10_000, zero_tol: float = 1e-9) -> MelnikovReport:
    """Scan ``|sum_{l<=j} w - sum_{l>j} w|`` over r-tuples from the ball of radius ``cutoff``.

    Each side of the split is enumerated as a multiset (sorted by eigenvalue), so
    permutations within a side are visited once.  A tuple is exempt only when it
    is dangerous and ``j = r/2``.  Exact rational arithmetic is used when the model
    provides exact eigenvalues.
    """
    if r < 2:
        raise OutOfDomainError("r must be >= 2")
    idx, pts = lattice_arrays(model, model.min_radius, cutoff)
    n = len(idx)
    if n == 0:
        raise OutOfDomainError("no lattice points inside the cutoff")
    om = model.h(pts)
    order = np.lexsort((np.arange(n), om))
    idx, pts, om = idx[order], pts[order], om[order]
    norms = np.linalg.norm(pts, axis=1)
    cid = clusters.cluster_of(om)
    if np.any(cid < 0):
        raise OutOfDomainError("clusters do not cover every eigenvalue inside the cutoff")

    def count(k):
        return math.comb(n + k - 1, k)

    total = sum(count(j) * count(r - j) for j in range(1, r + 1))
    if total > max_tuples:
        raise BudgetExceededError(f"{total} tuples exceed the scan budget {max_tuples}")
    ex = _exact_scale(model, idx)
    exact = ex is not None
    om_num = ex[0] if exact else om
    denom = ex[1] if exact else 1

    best = (math.inf, None)
    g_max = math.inf
    g_max3 = math.inf
    violations: list[MelnikovViolation] = []
    n_viol = 0
    for j in range(1, r + 1):
        A = _multisets(n, j)
        B = _multisets(n, r - j)
        SA = om_num[A].sum(axis=1)
        SB = om_num[B].sum(axis=1) if B.shape[1] else np.zeros(1, dtype=om_num.dtype)
        MA = norms[A].max(axis=1)
        MB = norms[B].max(axis=1) if B.shape[1] else np.zeros(1)
        TA, TB = _top3(norms, A), _top3(norms, B)
        check_danger = (r % 2 == 0) and 2 * j == r
        if check_danger:
            keys, inv = np.unique(cid[A], axis=0, return_inverse=True)
            ka = inv.ravel()
            kb = ka  # A and B enumerate the same multisets when j = r/2
        chunk = max(1, 4_000_000 // max(1, len(B)))
        for s in range(0, len(A), chunk):
            sl = slice(s, s + chunk)
            num = np.abs(SA[sl, None] - SB[None, :])
            div = num / denom if exact else num
            zero = (num == 0) if exact else (num <= zero_tol * np.maximum(1.0, np.abs(SA[sl, None]) + np.abs(SB[None, :])))
            mx = np.maximum(MA[sl, None], MB[None, :])
            with np.errstate(divide="ignore"):
                bound = gamma / np.where(mx > 0, mx, 1.0) ** tau
            exempt = np.zeros(div.shape, dtype=bool)
            if check_danger:
                exempt = ka[sl, None] == kb[None, :]
            live = ~exempt
            nz = live & ~zero
            if np.any(nz):
                dv = np.where(nz, div, np.inf)
                pos = np.unravel_index(int(np.argmin(dv)), dv.shape)
                if dv[pos] < best[0]:
                    best = (float(dv[pos]), (j, s + pos[0], pos[1]))
                g_max = min(g_max, float(np.min(np.where(nz, div * mx**tau, np.inf))))
                T = np.concatenate([np.broadcast_to(TA[sl, None, :], div.shape + (3,)),
                                    np.broadcast_to(TB[None, :, :], div.shape + (3,))], axis=2)
                m3 = -np.sort(-T, axis=2)[:, :, 2]
                m3 = np.where(m3 > 0, m3, 1.0)
                g_max3 = min(g_max3, float(np.min(np.where(nz, div * m3**tau, np.inf))))
            bad = live & (div < bound)
            nb = int(bad.sum())
            if nb:
                n_viol += nb
                for ia, ib in zip(*np.nonzero(bad)):
                    if len(violations) >= max_report:
                        break
                    plus = tuple(tuple(int(x) for x in idx[q]) for q in A[s + ia])
                    minus = tuple(tuple(int(x) for x in idx[q]) for q in B[ib])
                    kind = classify_tuple(clusters, list(om[A[s + ia]]) + list(om[B[ib]]),
                                          j, up_to_permutation=True)
                    d_ex = str(Fraction(int(num[ia, ib]), denom)) if exact else None
                    violations.append(MelnikovViolation(plus, minus, j, float(div[ia, ib]),
                                                        d_ex, float(bound[ia, ib]), kind))
    at = None
    if best[1] is not None:
        j, ia, ib = best[1]
        A = _multisets(n, j)[ia]
        B = _multisets(n, r - j)[ib]
        at = {"plus": [idx[q].tolist() for q in A], "minus": [idx[q].tolist() for q in B], "j": j}
    return MelnikovReport(r, float(cutoff), float(gamma), float(tau), n, int(total), exact,
                          best[0], at, g_max, g_max3, n_viol, violations, n_viol > len(violations))


def divisor(model: GiqsModel, plus, minus) -> float | Fraction:
    """Independent recomputation of a single divisor, exact when possible."""
    ex = [model.omega_exact(tuple(p)) for p in list(plus) + list(minus)]
    if all(e is not None for e in ex):
        k = len(plus)
        return abs(sum(ex[:k], Fraction(0)) - sum(ex[k:], Fraction(0)))
    kap = np.asarray(model.kappa)
    vp = sum(model.h(np.asarray(p) + kap) for p in plus)
    vm = sum(model.h(np.asarray(p) + kap) for p in minus)
    return abs(vp - vm)


def tuple_points(model: GiqsModel, indices) -> list[ActionPoint]:
    kap = tuple(float(x) for x in model.kappa)
    return [ActionPoint(tuple(int(x) for x in i), kap) for i in indices]
