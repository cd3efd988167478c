"""Truncated Schroedinger evolution ``i d/dt psi = (H_L + V(t)) psi`` and Sobolev growth.

Perturbations are sums of time profiles times fixed sparse matrices sharing
one sparsity pattern, so assembling ``V(t)`` only rescales data arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import jv

from .basis import OperatorMatrix, TruncatedBasis, random_decay_operator
from .errors import ConvergenceError, FitRefusedError, ModelMismatchError, OutOfDomainError
from .lattice import TorusModel

DEFAULT_FREQUENCIES = (1.0, math.sqrt(2.0), math.sqrt(3.0))
TAIL_THRESHOLD = 1e-6


@dataclass(frozen=True)
class TimeProfile:
    """``g(t) = sum_i amp_i cos(freq_i t + phase_i)``; a constant is a zero-frequency term."""

    terms: tuple = ((0.0, 1.0, 0.0),)

    def __call__(self, t: float) -> float:
        return float(sum(a * math.cos(f * t + ph) for f, a, ph in self.terms))

    @property
    def frequencies(self) -> list:
        return sorted({abs(f) for f, _, _ in self.terms if f != 0})

    def bound(self, derivative: int = 0) -> float:
        return float(sum(abs(a) * abs(f) ** derivative for f, a, _ in self.terms))

    @classmethod
    def constant(cls, c: float = 1.0) -> "TimeProfile":
        return cls(((0.0, float(c), 0.0),))

    @classmethod
    def quasiperiodic(cls, frequencies, rng: np.random.Generator, amplitude: float = 1.0):
        fr = list(frequencies)
        if len(fr) > 3:
            raise OutOfDomainError("at most three frequencies per profile")
        amps = amplitude / len(fr)
        return cls(tuple((float(f), amps, float(rng.uniform(0, 2 * np.pi))) for f in fr))

    def to_dict(self) -> dict:
        return {"terms": [list(t) for t in self.terms]}


@dataclass(frozen=True)
class FieldMode:
    """One real spatial mode ``c e^{ik.x} + conj(c) e^{-ik.x}`` (just ``c`` when ``k = 0``)."""

    field: str
    k: tuple
    coeff: complex
    profile: TimeProfile

    def series(self) -> dict:
        k = tuple(int(x) for x in self.k)
        if not any(k):
            return {k: complex(self.coeff).real + 0j}
        mk = tuple(-x for x in k)
        return {k: complex(self.coeff), mk: complex(self.coeff).conjugate()}


@dataclass(frozen=True)
class TimeDependentPerturbation:
    """``kind`` in {magnetic-torus, convolution-potential, random-decay, zero}.

    Magnetic fields are named ``B1..Bd`` and the scalar potential ``W``.
    ``H(t) = sum_j (D_j + B_j(t))^2 + W(t)`` with ``D_j`` the action multiplier,
    so ``V(t) = sum_j (D_j B_j + B_j D_j + B_j^2) + W``, where ``B_j^2`` is the
    convolution by the squared field.
    """

    kind: str
    modes: tuple = ()
    order: float = 0.0
    decay: float = math.inf
    seed: int = 0
    random_scale: float = 0.0
    random_profile: TimeProfile = TimeProfile()

    @classmethod
    def zero(cls) -> "TimeDependentPerturbation":
        return cls("zero")

    @classmethod
    def magnetic_torus(cls, d: int = 2, amplitude: float = 0.05, potential: float = 0.05,
                       n_modes: int = 2, k_max: float = 2.0, nu: float = 4.0,
                       frequencies=DEFAULT_FREQUENCIES, seed: int = 0) -> "TimeDependentPerturbation":
        rng = np.random.default_rng(seed)
        ks = _small_vectors(d, k_max)
        modes = []
        for name in [f"B{j + 1}" for j in range(d)] + ["W"]:
            amp = potential if name == "W" else amplitude
            for q in rng.choice(len(ks), size=min(n_modes, len(ks)), replace=False):
                k = tuple(int(x) for x in ks[q])
                mag = amp * (1.0 + sum(x * x for x in k)) ** (-nu / 2)
                c = mag * np.exp(1j * rng.uniform(0, 2 * np.pi)) / 2
                modes.append(FieldMode(name, k, complex(c),
                                       TimeProfile.quasiperiodic(frequencies, rng)))
        return cls("magnetic-torus", tuple(modes), 1.0, nu, seed)

    @classmethod
    def convolution_potential(cls, d: int = 2, amplitude: float = 0.05, n_modes: int = 3,
                              k_max: float = 2.0, nu: float = 4.0, frequencies=DEFAULT_FREQUENCIES,
                              seed: int = 0) -> "TimeDependentPerturbation":
        rng = np.random.default_rng(seed)
        ks = _small_vectors(d, k_max)
        modes = []
        for q in rng.choice(len(ks), size=min(n_modes, len(ks)), replace=False):
            k = tuple(int(x) for x in ks[q])
            mag = amplitude * (1.0 + sum(x * x for x in k)) ** (-nu / 2)
            c = mag * np.exp(1j * rng.uniform(0, 2 * np.pi)) / 2
            modes.append(FieldMode("W", k, complex(c), TimeProfile.quasiperiodic(frequencies, rng)))
        return cls("convolution-potential", tuple(modes), 0.0, nu, seed)

    @classmethod
    def random_decay(cls, order: float = 0.0, decay: float = 4.0, amplitude: float = 0.05,
                     frequencies=DEFAULT_FREQUENCIES, seed: int = 0) -> "TimeDependentPerturbation":
        rng = np.random.default_rng(seed)
        return cls("random-decay", (), order, decay, seed, amplitude,
                   TimeProfile.quasiperiodic(frequencies, rng))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "order": self.order, "decay": self.decay, "seed": self.seed,
                "modes": [{"field": m.field, "k": list(m.k), "coeff": [m.coeff.real, m.coeff.imag],
                           "profile": m.profile.to_dict()} for m in self.modes],
                "random_scale": self.random_scale}


def _small_vectors(d: int, k_max: float) -> np.ndarray:
    m = int(math.floor(k_max))
    grids = np.meshgrid(*[np.arange(-m, m + 1)] * d, indexing="ij")
    K = np.stack([g.ravel() for g in grids], axis=1)
    n2 = np.sum(K**2, axis=1)
    K = K[(n2 > 0) & (n2 <= k_max**2 + 1e-9)]
    # one representative per pair {k, -k}
    keep = [tuple(k) > tuple(-k) for k in K]
    return K[np.array(keep)]


def _convolve(s1: dict, s2: dict) -> dict:
    out: dict = {}
    for k1, c1 in s1.items():
        for k2, c2 in s2.items():
            k = tuple(a + b for a, b in zip(k1, k2))
            out[k] = out.get(k, 0) + c1 * c2
    return {k: c for k, c in out.items() if c != 0}


class CompiledPerturbation:
    """``V(t) = sum_i coef_i(t) M_i`` with all ``M_i`` on one CSR sparsity pattern."""

    def __init__(self, basis: TruncatedBasis, spec: TimeDependentPerturbation):
        self.basis = basis
        self.spec = spec
        self.dense_random = None
        if spec.kind == "magnetic-torus" and not isinstance(basis.model, TorusModel):
            raise ModelMismatchError("the magnetic-torus perturbation needs the torus model")
        if spec.kind not in {"magnetic-torus", "convolution-potential", "random-decay", "zero"}:
            raise ModelMismatchError(f"unknown perturbation kind {spec.kind!r}")
        d = basis.model.d
        terms = []  # (profiles, Fourier series, action axis or None)
        for m in spec.modes:
            if m.field == "W":
                terms.append(((m.profile,), m.series(), None))
            elif m.field.startswith("B"):
                j = int(m.field[1:]) - 1
                if not 0 <= j < d:
                    raise ModelMismatchError(f"field {m.field} does not exist in dimension {d}")
                terms.append(((m.profile,), m.series(), j))
            else:
                raise ModelMismatchError(f"unknown field {m.field!r}")
        by_field: dict = {}
        for m in spec.modes:
            if m.field.startswith("B"):
                by_field.setdefault(m.field, []).append(m)
        for ms in by_field.values():
            for m1 in ms:
                for m2 in ms:
                    terms.append(((m1.profile, m2.profile), _convolve(m1.series(), m2.series()), None))
        self.profiles = [t[0] for t in terms]
        n = len(basis)
        mats = [self._matrix(series, axis) for _, series, axis in terms]
        if mats:
            pattern = sp.csr_matrix((n, n))
            for M in mats:
                pattern = pattern + abs(M)
            pattern = pattern.tocsr()
            pattern.sort_indices()
            pr = np.repeat(np.arange(n), np.diff(pattern.indptr))
            self._keys = pr * n + pattern.indices
            self.pattern = sp.csr_matrix((np.ones(pattern.nnz, complex), pattern.indices.copy(),
                                          pattern.indptr.copy()), shape=(n, n))
            self.data = np.array([self._on_pattern(M) for M in mats])
        else:
            self.pattern = sp.csr_matrix((n, n), dtype=complex)
            self.data = np.zeros((0, 0), dtype=complex)
        if spec.kind == "random-decay":
            self.dense_random = random_decay_operator(basis, spec.order, spec.decay, spec.seed,
                                                      spec.random_scale).entries

    def _on_pattern(self, M: sp.csr_matrix) -> np.ndarray:
        """Data of ``M`` laid out on the shared pattern (its support lies inside it)."""
        n = M.shape[0]
        C = M.tocoo()
        out = np.zeros(len(self._keys), dtype=complex)
        np.add.at(out, np.searchsorted(self._keys, C.row.astype(np.int64) * n + C.col), C.data)
        return out

    def _matrix(self, series: dict, axis) -> sp.csr_matrix:
        """``M_ab = c_k`` (times ``a_j + b_j`` for a field on axis ``j``) where ``a - b = k``."""
        basis = self.basis
        n = len(basis)
        start = np.searchsorted(basis.state_point, np.arange(basis.n_points))
        act = basis.actions
        rows, cols, vals = [], [], []
        for k, c in series.items():
            src = basis.lookup.find(basis.point_indices - np.array(k))
            p = np.flatnonzero(src >= 0)
            q = src[p]
            m = np.minimum(basis.point_mult[p], basis.point_mult[q])
            for s in range(int(m.max()) if len(m) else 0):
                sel = m > s
                r = start[p[sel]] + s
                cc = start[q[sel]] + s
                w = np.full(len(r), c, dtype=complex)
                if axis is not None:
                    w = w * (act[r, axis] + act[cc, axis])
                rows.append(r)
                cols.append(cc)
                vals.append(w)
        if not rows:
            return sp.csr_matrix((n, n), dtype=complex)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))

    def coefficients(self, t: float) -> np.ndarray:
        return np.array([math.prod(g(t) for g in prof) for prof in self.profiles])

    def sparse(self, t: float) -> sp.csr_matrix:
        M = self.pattern.astype(complex)
        M.data = self.coefficients(t) @ self.data if len(self.data) else M.data * 0
        return M

    def dense(self, t: float) -> np.ndarray:
        out = self.sparse(t).toarray()
        if self.dense_random is not None:
            out = out + self.spec.random_profile(t) * self.dense_random
        return out

    def is_zero(self) -> bool:
        return self.spec.kind == "zero" or (len(self.data) == 0 and self.dense_random is None)

    def is_diagonal(self) -> bool:
        if self.dense_random is not None:
            return False
        r, c = self.pattern.nonzero()
        return bool(np.all(r == c))


def assemble_perturbation(basis: TruncatedBasis, spec: TimeDependentPerturbation, t: float,
                          compiled: CompiledPerturbation | None = None) -> OperatorMatrix:
    """Dense Hermitian ``V(t)`` on the basis."""
    cp = compiled or CompiledPerturbation(basis, spec)
    M = cp.dense(t)
    return OperatorMatrix(basis, M, spec.order, spec.decay, {"kind": spec.kind, "t": t})


# -- norms -----------------------------------------------------------------

def sobolev_norm(basis: TruncatedBasis, psi, s: float) -> float:
    w = basis.weights
    return float(np.sqrt(np.sum(w ** (2 * s) * np.abs(np.asarray(psi)) ** 2)))


def tail_mass(basis: TruncatedBasis, psi) -> float:
    """Fraction of the squared mass in the boundary shell."""
    m = np.abs(np.asarray(psi)) ** 2
    tot = float(m.sum())
    return float(m[basis.boundary_mask].sum() / tot) if tot > 0 else 0.0


# -- propagation -----------------------------------------------------------

def _gershgorin(diag: np.ndarray, M) -> tuple[float, float]:
    if M is None:
        return float(diag.min()), float(diag.max())
    if sp.issparse(M):
        off = np.asarray(abs(M).sum(axis=1)).ravel() - np.abs(M.diagonal())
        dd = diag + M.diagonal().real
    else:
        off = np.abs(M).sum(axis=1) - np.abs(np.diag(M))
        dd = diag + np.diag(M).real
    return float((dd - off).min()), float((dd + off).max())


def chebyshev_expm_apply(H, psi: np.ndarray, dt: float, lo: float, hi: float,
                         tol: float = 1e-15) -> np.ndarray:
    """``exp(-i dt H) psi`` by a Chebyshev series with Bessel coefficients."""
    c = (hi + lo) / 2
    r = max((hi - lo) / 2, 1e-300)
    z = dt * r
    kmax = int(z + 10 * math.log10(1 + z) + 30)
    J = jv(np.arange(kmax + 1), z)
    while abs(J[-1]) > tol and kmax < 100000:
        kmax *= 2
        J = jv(np.arange(kmax + 1), z)

    def Hs(x):
        return (H @ x - c * x) / r

    t0 = psi
    t1 = Hs(psi)
    out = J[0] * t0 + 2 * (-1j) * J[1] * t1
    k = 2
    while k <= kmax:
        t2 = 2 * Hs(t1) - t0
        coef = 2 * (-1j) ** k * J[k]
        out = out + coef * t2
        t0, t1 = t1, t2
        if k > z and abs(J[k]) < tol and (k + 1 > kmax or abs(J[k - 1]) < tol):
            break
        k += 1
    return np.exp(-1j * dt * c) * out


class Propagator:
    """Midpoint exponential steps ``psi <- exp(-i dt H(t + dt/2)) psi``."""

    def __init__(self, basis: TruncatedBasis, spec: TimeDependentPerturbation,
                 dense_limit: int = 400):
        self.basis = basis
        self.cp = CompiledPerturbation(basis, spec)
        self.omega = basis.omega.astype(float)
        self.dense = len(basis) <= dense_limit or self.cp.dense_random is not None
        self.diagonal = self.cp.is_diagonal()

    def hamiltonian(self, t: float):
        if self.dense:
            return np.diag(self.omega).astype(complex) + self.cp.dense(t)
        return (sp.diags(self.omega.astype(complex)) + self.cp.sparse(t)).tocsr()

    def step(self, psi: np.ndarray, t: float, dt: float) -> np.ndarray:
        tm = t + dt / 2
        if self.cp.is_zero():
            return np.exp(-1j * dt * self.omega) * psi
        if self.diagonal:
            diag = self.omega + self.cp.sparse(tm).diagonal().real
            return np.exp(-1j * dt * diag) * psi
        H = self.hamiltonian(tm)
        if self.dense:
            return sla.expm(-1j * dt * H) @ psi
        lo, hi = _gershgorin(self.omega, self.cp.sparse(tm))
        return chebyshev_expm_apply(H, psi, dt, lo, hi)


@dataclass
class Trajectory:
    times: list
    l2: list
    sobolev: dict
    tail: list
    checkpoints: dict = field(default_factory=dict)
    rejected_steps: int = 0
    max_drift: float = 0.0
    n_steps: int = 0

    def rows(self) -> list:
        keys = sorted(self.sobolev)
        return [[t, l] + [self.sobolev[s][i] for s in keys] + [tm]
                for i, (t, l, tm) in enumerate(zip(self.times, self.l2, self.tail))]

    def header(self) -> list:
        return ["t", "l2"] + [f"sobolev_{s:g}" for s in sorted(self.sobolev)] + ["tail_mass"]

    def to_dict(self) -> dict:
        return {"n_records": len(self.times), "rejected_steps": self.rejected_steps,
                "max_drift": self.max_drift, "n_steps": self.n_steps,
                "l2_first": self.l2[0] if self.l2 else None,
                "l2_last": self.l2[-1] if self.l2 else None,
                "max_tail": max(self.tail) if self.tail else None}


def evolve(basis: TruncatedBasis, spec: TimeDependentPerturbation, psi0, t0: float, t1: float,
           dt: float, s_list=(0.0, 1.0, 2.0), record_times=None, checkpoint_times=(),
           drift_tol: float = 1e-10, max_halvings: int = 8, dense_limit: int = 400,
           propagator: Propagator | None = None) -> tuple[Trajectory, np.ndarray]:
    """Integrate from ``t0`` to ``t1`` (either direction) and record norms.

    Returns the trajectory and the final state.  ``record_times`` defaults to
    every step; records are taken at the step boundary closest to each time.
    """
    if not dt > 0:
        raise OutOfDomainError("dt must be > 0")
    psi = np.asarray(psi0, dtype=complex).copy()
    if psi.shape != (len(basis),):
        raise ModelMismatchError("initial state does not match the basis")
    prop = propagator or Propagator(basis, spec, dense_limit)
    sign = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    n = max(1, int(math.ceil(span / dt - 1e-9)))
    h = span / n
    grid = t0 + sign * h * np.arange(n + 1)
    want = None
    if record_times is not None:
        rt = np.asarray(sorted(record_times), dtype=float)
        want = set(np.unique(np.clip(np.round((np.abs(rt - t0)) / h).astype(int), 0, n)).tolist())
    ck = set(np.clip(np.round(np.abs(np.asarray(checkpoint_times, float) - t0) / h).astype(int), 0, n).tolist()) \
        if len(checkpoint_times) else set()
    s_list = [float(s) for s in s_list]
    traj = Trajectory([], [], {s: [] for s in s_list}, [])
    w = basis.weights
    bmask = basis.boundary_mask

    def record(i, state):
        m = np.abs(state) ** 2
        tot = float(m.sum())
        traj.times.append(float(grid[i]))
        traj.l2.append(math.sqrt(tot))
        for s in s_list:
            traj.sobolev[s].append(float(np.sqrt(np.sum(w ** (2 * s) * m))))
        traj.tail.append(float(m[bmask].sum() / tot) if tot > 0 else 0.0)

    def visit(i, state):
        if want is None or i in want:
            record(i, state)
        if i in ck:
            traj.checkpoints[float(grid[i])] = state.copy()

    visit(0, psi)
    for i in range(n):
        before = float(np.linalg.norm(psi))
        sub = 1
        while True:
            trial = psi
            hh = sign * h / sub
            for q in range(sub):
                trial = prop.step(trial, grid[i] + q * hh, hh)
            drift = abs(float(np.linalg.norm(trial)) - before) / max(before, 1e-300)
            if drift <= drift_tol:
                break
            traj.rejected_steps += 1
            sub *= 2
            if sub > 2**max_halvings:
                raise ConvergenceError(f"norm drift {drift:.2e} at t={grid[i]:.6g} persists after halving")
        traj.max_drift = max(traj.max_drift, drift)
        traj.n_steps += sub
        psi = trial
        visit(i + 1, psi)
    return traj, psi


@dataclass
class GrowthFit:
    s: float
    exponent: float
    prefactor: float
    window: list
    residual: float
    max_tail: float
    n_points: int

    def to_dict(self) -> dict:
        return {"s": self.s, "exponent": self.exponent, "prefactor": self.prefactor,
                "window": self.window, "residual": self.residual, "max_tail": self.max_tail,
                "n_points": self.n_points}


def growth_exponent(traj: Trajectory, s: float, window, tail_threshold: float = TAIL_THRESHOLD) -> GrowthFit:
    """Least-squares slope of ``log |psi(t)|_s`` against ``log <t>`` inside ``window``."""
    s = float(s)
    if s not in traj.sobolev:
        raise OutOfDomainError(f"trajectory has no records for s={s}")
    t = np.asarray(traj.times)
    lo, hi = float(window[0]), float(window[1])
    m = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    if m.sum() < 3:
        raise FitRefusedError("fewer than three records in the fit window", {"window": [lo, hi]})
    tail = np.asarray(traj.tail)[m]
    diag = {"window": [lo, hi], "max_tail": float(tail.max()), "threshold": tail_threshold}
    if tail.max() > tail_threshold:
        raise FitRefusedError("boundary-shell mass exceeds the validity threshold", diag)
    x = np.log(np.sqrt(1 + t[m] ** 2))
    y = np.log(np.asarray(traj.sobolev[s])[m])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return GrowthFit(s, float(coef[0]), float(math.exp(coef[1])), [lo, hi], resid,
                     float(tail.max()), int(m.sum()))


def gaussian_packet(basis: TruncatedBasis, center=None, width: float = 1.5, seed: int = 0) -> np.ndarray:
    """Normalized state concentrated near ``center`` with random phases."""
    rng = np.random.default_rng(seed)
    c = np.zeros(basis.model.d) if center is None else np.asarray(center, float)
    d2 = np.sum((basis.actions - c) ** 2, axis=1)
    amp = np.exp(-d2 / (2 * width**2))
    amp[amp < 1e-30] = 0
    psi = amp * np.exp(1j * rng.uniform(0, 2 * np.pi, len(basis)))
    return psi / np.linalg.norm(psi)
