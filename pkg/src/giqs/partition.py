"""Quantum resonances and the Nekhoroshev-Bourgain partition of the joint spectrum.

Blocks are built as connected components of the resonance adjacency
``a <-> a + k`` (``a`` resonant with ``k`` or ``a + k`` resonant with ``k``)
and the three structural properties (dyadicity, resonance closure,
separation) are verified afterwards.  Violations are reported, never fixed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import BudgetExceededError, OutOfDomainError
from .intlattice import saturate
from .lattice import ActionPoint, GiqsModel, lattice_arrays

MAX_K_VECTORS = 2_000_000


@dataclass(frozen=True)
class ResonanceParams:
    """Resonance thresholds: ``|w.k| < |a|^delta |k|``, ``|k| <= |a|^mu``, ``|a| >= R``."""

    delta: float
    mu: float = 0.25
    R: float = 8.0

    def __post_init__(self):
        if not self.mu > 0:
            raise OutOfDomainError("mu must be > 0")
        if not self.R > 0:
            raise OutOfDomainError("R must be > 0")

    def validate(self, model: GiqsModel) -> "ResonanceParams":
        if not 0 < self.delta < model.degree - 1:
            raise OutOfDomainError(
                f"need 0 < delta < degree - 1 = {model.degree - 1:g}, got delta={self.delta:g}")
        return self

    @classmethod
    def default_for(cls, model: GiqsModel) -> "ResonanceParams":
        return cls(delta=(model.degree - 1.0) / 2.0, mu=0.25, R=8.0)


@dataclass(frozen=True)
class ResonanceModule:
    """A saturated sublattice ``M = span_R(M) ∩ Z^d`` with its canonical (HNF) basis."""

    rank: int
    basis: tuple[tuple[int, ...], ...]
    saturated: bool = True

    @classmethod
    def from_vectors(cls, vectors, d: int) -> "ResonanceModule":
        B = saturate(list(vectors), d)
        return cls(len(B), tuple(tuple(r) for r in B))

    def to_dict(self) -> dict:
        return {"rank": self.rank, "basis": [list(r) for r in self.basis]}


def integer_vectors(k_max: float, d: int) -> np.ndarray:
    """All nonzero ``k in Z^d`` with ``|k| <= k_max``, lexicographic."""
    m = int(math.floor(k_max + 1e-12))
    if (2 * m + 1) ** d > MAX_K_VECTORS:
        raise BudgetExceededError(f"|k| <= {k_max:g} in dimension {d} is too many vectors")
    axes = [np.arange(-m, m + 1)] * d
    K = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    n2 = np.sum(K**2, axis=1)
    keep = (n2 > 0) & (n2 <= k_max**2 + 1e-9)
    return K[keep].astype(np.int64)


def resonance_matrix(W: np.ndarray, norms: np.ndarray, K: np.ndarray,
                     p: ResonanceParams) -> np.ndarray:
    """Boolean ``(n, len(K))``: point i resonant with K[j]."""
    knorm = np.linalg.norm(K, axis=1)
    lhs = np.abs(W @ K.T.astype(float))
    with np.errstate(divide="ignore"):
        rhs = norms[:, None] ** p.delta * knorm[None, :]
        kcap = norms[:, None] ** p.mu
    return (lhs < rhs) & (knorm[None, :] <= kcap * (1 + 1e-12)) & (norms[:, None] >= p.R)


def is_resonant(model: GiqsModel, a, k, p: ResonanceParams) -> bool:
    """Whether ``a`` is resonant with the nonzero integer vector ``k``."""
    k = np.asarray(k, dtype=np.int64).reshape(1, -1)
    if not np.any(k):
        raise OutOfDomainError("k must be nonzero")
    val = a.value if isinstance(a, ActionPoint) else np.asarray(a, dtype=float)
    norm = float(np.linalg.norm(val))
    if norm < p.R:
        return False
    w = np.asarray(model.w(val), dtype=float).reshape(1, -1)
    return bool(resonance_matrix(w, np.array([norm]), k, p)[0, 0])


def resonant_vectors(model: GiqsModel, a, p: ResonanceParams) -> np.ndarray:
    val = a.value if isinstance(a, ActionPoint) else np.asarray(a, dtype=float)
    norm = float(np.linalg.norm(val))
    if norm < p.R:
        return np.zeros((0, model.d), dtype=np.int64)
    K = integer_vectors(norm**p.mu, model.d)
    if len(K) == 0:
        return K
    w = np.asarray(model.w(val), dtype=float).reshape(1, -1)
    return K[resonance_matrix(w, np.array([norm]), K, p)[0]]


def resonance_module(model: GiqsModel, a, p: ResonanceParams) -> ResonanceModule:
    """Saturation of the set of vectors ``a`` is resonant with (rank 0 if none)."""
    return ResonanceModule.from_vectors(resonant_vectors(model, a, p).tolist(), model.d)


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb] or (self.size[ra] == self.size[rb] and rb < ra):
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def labels(self) -> np.ndarray:
        return np.array([self.find(i) for i in range(len(self.parent))], dtype=np.int64)


class IndexLookup:
    """Vectorized map from integer index rows to positions (-1 when absent)."""

    def __init__(self, idx: np.ndarray):
        self.lo = idx.min(axis=0) if len(idx) else np.zeros(idx.shape[1], np.int64)
        span = (idx.max(axis=0) - self.lo + 1) if len(idx) else np.ones(idx.shape[1], np.int64)
        self.span = span.astype(np.int64)
        keys = self._key(idx)
        self.order = np.argsort(keys, kind="stable")
        self.sorted_keys = keys[self.order]

    def _key(self, idx):
        rel = idx - self.lo
        key = np.zeros(len(idx), dtype=np.int64)
        for i in range(idx.shape[1]):
            key = key * self.span[i] + rel[:, i]
        return key

    def find(self, idx: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(idx)
        inside = np.all((idx >= self.lo) & (idx < self.lo + self.span), axis=1)
        out = np.full(len(idx), -1, dtype=np.int64)
        if not np.any(inside) or len(self.sorted_keys) == 0:
            return out
        keys = self._key(idx[inside])
        pos = np.searchsorted(self.sorted_keys, keys)
        pos = np.minimum(pos, len(self.sorted_keys) - 1)
        hit = self.sorted_keys[pos] == keys
        res = np.where(hit, self.order[pos], -1)
        out[inside] = res
        return out


@dataclass
class PartitionBlock:
    module: ResonanceModule
    j: int
    members: list[ActionPoint]
    min_norm: float
    max_norm: float
    boundary: bool = False

    @property
    def label(self) -> tuple:
        return (self.module.rank, self.module.basis, self.j)

    def to_dict(self) -> dict:
        return {"s": self.module.rank, "module": [list(r) for r in self.module.basis],
                "j": self.j, "size": len(self.members),
                "members": [list(m.index) for m in self.members],
                "min_norm": self.min_norm, "max_norm": self.max_norm,
                "boundary_truncated": self.boundary}


@dataclass
class PartitionReport:
    model: GiqsModel
    params: ResonanceParams
    annulus: tuple[float, float]
    blocks: list[PartitionBlock]
    indices: np.ndarray
    points: np.ndarray
    block_of: np.ndarray
    C: float
    C_by_rank: dict
    K: float
    K_by_shell: list
    violations: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_violations(self) -> int:
        return sum(len(v) for v in self.violations.values())

    def same_block(self, i: int, j: int) -> bool:
        return self.block_of[i] == self.block_of[j]

    def omega_mask(self) -> np.ndarray:
        """Points lying in rank-0 (nonresonant) blocks."""
        ranks = np.array([b.module.rank for b in self.blocks])
        return ranks[self.block_of] == 0

    def to_dict(self, include_members: bool = True) -> dict:
        blocks = []
        for b in self.blocks:
            bd = b.to_dict()
            if not include_members:
                bd.pop("members")
            blocks.append(bd)
        ranks = {}
        for b in self.blocks:
            ranks[str(b.module.rank)] = ranks.get(str(b.module.rank), 0) + 1
        return {"model": self.model.describe(),
                "resonance": {"delta": self.params.delta, "mu": self.params.mu, "R": self.params.R},
                "annulus": list(self.annulus), "n_points": int(len(self.indices)),
                "n_blocks": len(self.blocks), "blocks_by_rank": ranks,
                "C": self.C, "C_by_rank": self.C_by_rank, "K": self.K,
                "K_by_shell": self.K_by_shell,
                "violations": self.violations, "diagnostics": self.diagnostics,
                "blocks": blocks}


def _separation(points, omegas, norms, block_of, eligible, mu):
    """min over cross-block eligible pairs of (|a-b| + |w_a - w_b|)/(|a|^mu + |b|^mu)."""
    sel = np.flatnonzero(eligible)
    if len(sel) < 2:
        return math.inf, None
    P, Om, Nm, B = points[sel], omegas[sel], norms[sel], block_of[sel]
    tree = cKDTree(P)
    cap = 2.0 * float(np.max(Nm)) ** mu
    radius = 2.0
    best, arg = math.inf, None
    while True:
        pairs = tree.query_pairs(radius, output_type="ndarray")
        if len(pairs):
            i, j = pairs[:, 0], pairs[:, 1]
            cross = B[i] != B[j]
            i, j = i[cross], j[cross]
            if len(i):
                ratio = (np.linalg.norm(P[i] - P[j], axis=1) + np.abs(Om[i] - Om[j])) / (
                    Nm[i] ** mu + Nm[j] ** mu)
                m = int(np.argmin(ratio))
                if ratio[m] < best:
                    best, arg = float(ratio[m]), (int(sel[i[m]]), int(sel[j[m]]))
        # any pair farther than `radius` has ratio >= radius / cap
        if best <= radius / cap or radius > 4 * float(np.max(Nm)) + 4:
            return best, arg
        radius *= 2.0


def build_partition(model: GiqsModel, annulus, p: ResonanceParams,
                    k_floor: float = 0.0) -> PartitionReport:
    """Adjacency-closure blocks on the annulus, with a posteriori verification.

    ``k_floor`` is the separation constant a cross-block pair must reach to not be
    listed as a separation violation (0 only flags coincident points).
    """
    r_min, r_max = float(annulus[0]), float(annulus[1])
    idx, pts = lattice_arrays(model, r_min, r_max)
    n = len(idx)
    if n == 0:
        raise OutOfDomainError("empty annulus")
    norms = np.linalg.norm(pts, axis=1)
    evaluable = norms >= max(model.min_radius, 1e-300)
    omegas = np.full(n, np.nan)
    W = np.zeros_like(pts)
    if np.any(evaluable):
        omegas[evaluable] = model.h(pts[evaluable])
        W[evaluable] = model.w(pts[evaluable])
    K = integer_vectors(max(r_max, 1.0) ** p.mu, model.d)
    res = resonance_matrix(W, norms, K, p) & evaluable[:, None] if len(K) else np.zeros((n, 0), bool)

    lookup = IndexLookup(idx)
    uf = UnionFind(n)
    escapes = np.zeros(n, dtype=bool)
    for c in range(len(K)):
        src = np.flatnonzero(res[:, c])
        if len(src) == 0:
            continue
        dst = lookup.find(idx[src] + K[c])
        escapes[src[dst < 0]] = True
        for a, b in zip(src[dst >= 0].tolist(), dst[dst >= 0].tolist()):
            uf.union(a, b)
    roots = uf.labels()

    # components in order of their first (lexicographically smallest) member
    _, first = np.unique(roots, return_index=True)
    comp_roots = roots[np.sort(first)]
    comp_id = {int(r): i for i, r in enumerate(comp_roots)}
    comp_of = np.array([comp_id[int(r)] for r in roots], dtype=np.int64)
    n_comp = len(comp_roots)
    members_of: list[list[int]] = [[] for _ in range(n_comp)]
    for i, c in enumerate(comp_of.tolist()):
        members_of[c].append(i)

    kap = tuple(float(x) for x in model.kappa)
    counters: dict = {}
    blocks: list[PartitionBlock] = []
    for c in range(n_comp):
        mem = members_of[c]
        rows = res[mem]
        used = np.flatnonzero(rows.any(axis=0))
        module = ResonanceModule.from_vectors(K[used].tolist(), model.d)
        key = (module.rank, module.basis)
        j = counters.get(key, 0)
        counters[key] = j + 1
        blocks.append(PartitionBlock(
            module, j, [ActionPoint(tuple(idx[i].tolist()), kap) for i in mem],
            float(norms[mem].min()), float(norms[mem].max()), bool(escapes[mem].any())))
    block_of = comp_of

    report = PartitionReport(model, p, (r_min, r_max), blocks, idx, pts, block_of,
                             math.nan, {}, math.nan, [])
    _verify(report, res, K, lookup, omegas, norms, escapes, k_floor)
    return report


def _verify(report, res, K, lookup, omegas, norms, escapes, k_floor):
    blocks, idx, block_of = report.blocks, report.indices, report.block_of
    n = len(idx)
    viol = {"cover": [], "dyadic": [], "closure": [], "rank0_resonant": [], "separation": []}

    sizes = np.bincount(block_of, minlength=len(blocks))
    if sizes.sum() != n or any(len(b.members) != s for b, s in zip(blocks, sizes)):
        viol["cover"].append("block sizes do not add up to the enumerated annulus")
    seen = set()
    for b in blocks:
        for m in b.members:
            if m.index in seen:
                viol["cover"].append(f"point {list(m.index)} in two blocks")
            seen.add(m.index)
    if len(seen) != n:
        viol["cover"].append("union of blocks differs from the annulus")

    interior = ~np.array([b.boundary for b in blocks])
    ratios = np.array([1.0 if len(b.members) == 1 else
                       (b.max_norm / b.min_norm if b.min_norm > 0 else math.inf) for b in blocks])
    report.C = float(ratios[interior].max()) if interior.any() else math.nan
    C_by_rank = {}
    for b, r, ok in zip(blocks, ratios, interior):
        if ok:
            key = str(b.module.rank)
            C_by_rank[key] = max(C_by_rank.get(key, 1.0), float(r))
    report.C_by_rank = C_by_rank
    for b, r, ok in zip(blocks, ratios, interior):
        if ok and not math.isfinite(r):
            viol["dyadic"].append({"block": [b.module.rank, b.j], "ratio": str(r)})

    # (ii) closure: a resonant with k => a+k in the same block
    for c in range(len(K)):
        src = np.flatnonzero(res[:, c])
        if len(src) == 0:
            continue
        dst = lookup.find(idx[src] + K[c])
        inside = dst >= 0
        bad = inside & (block_of[src] != block_of[np.where(inside, dst, 0)])
        for i in src[bad][:50].tolist():
            viol["closure"].append({"a": idx[i].tolist(), "k": K[c].tolist()})
    any_res = res.any(axis=1) if res.shape[1] else np.zeros(n, bool)
    for bi, b in enumerate(blocks):
        if b.module.rank == 0 and (len(b.members) != 1 or any_res[block_of == bi].any()):
            viol["rank0_resonant"].append({"block": bi})
    # members joined only through "a + k resonant with k"; a diagnostic, not a violation
    rank_of_point = np.array([b.module.rank for b in blocks])[block_of]
    lonely = np.flatnonzero((rank_of_point > 0) & ~any_res)
    report.diagnostics["nonresonant_members_in_resonant_blocks"] = int(len(lonely))

    # (iii) separation among non-boundary blocks
    eligible = interior[block_of] & np.isfinite(omegas)
    mu = report.params.mu
    Kval, arg = _separation(report.points, omegas, norms, block_of, eligible, mu)
    report.K = Kval
    if arg is not None:
        report.diagnostics["K_attained_at"] = [idx[arg[0]].tolist(), idx[arg[1]].tolist()]
    if not Kval > k_floor:
        viol["separation"].append({"K": Kval, "k_floor": k_floor, "pair": report.diagnostics.get("K_attained_at")})
    # per dyadic shell, to expose degradation with scale
    r_lo, r_hi = report.annulus
    shells = []
    lo = max(r_lo, report.params.R, 1.0)
    while lo < r_hi:
        hi = min(2 * lo, r_hi)
        in_shell = eligible & (norms >= lo) & (norms < hi if hi < r_hi else norms <= hi)
        kv, _ = _separation(report.points, omegas, norms, block_of, in_shell, mu)
        shells.append({"r_min": lo, "r_max": hi, "K": kv})
        lo = hi
    report.K_by_shell = shells
    report.violations = viol
    report.diagnostics["boundary_blocks"] = int((~interior).sum())
    report.diagnostics["resonant_points"] = int(any_res.sum())


def adjacency_closure_violations(report: PartitionReport) -> list:
    """Exhaustive re-check of closure using the scalar resonance test (oracle path)."""
    model, p = report.model, report.params
    pos = {tuple(r): i for i, r in enumerate(report.indices.tolist())}
    bad = []
    for i, a in enumerate(report.indices.tolist()):
        val = report.points[i]
        for k in resonant_vectors(model, val, p).tolist():
            b = tuple(x + y for x, y in zip(a, k))
            if b in pos and report.block_of[pos[b]] != report.block_of[i]:
                bad.append((a, k))
    return bad


def brute_force_nonresonant(model: GiqsModel, a, p: ResonanceParams) -> bool:
    """Independent check that no k with |k| <= |a|^mu is resonant with a (plain loops)."""
    val = a.value if isinstance(a, ActionPoint) else np.asarray(a, dtype=float)
    norm = math.sqrt(float(np.dot(val, val)))
    if norm < p.R:
        return True
    w = np.asarray(model.w(val), dtype=float)
    m = int(math.floor(norm**p.mu))
    for k in itertools.product(range(-m, m + 1), repeat=model.d):
        kn = math.sqrt(sum(x * x for x in k))
        if kn == 0 or kn > norm**p.mu:
            continue
        if abs(sum(wi * ki for wi, ki in zip(w, k))) < norm**p.delta * kn:
            return False
    return True
