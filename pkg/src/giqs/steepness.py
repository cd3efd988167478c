"""Numerical steepness estimates and the isolated-critical-point line criterion.

For a point ``a`` and a subspace ``M`` orthogonal to ``w(a)`` the steepness
curve is ``xi -> max_{0<=eta<=xi} min_{u in M, |u|=1} |P_M w(a + eta u)|``.
Power-law fits of its lower envelope over sampled ``(a, M)`` give the index
``alpha_s`` and coefficient ``B_s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import minimize_scalar

from .errors import OutOfDomainError
from .lattice import GiqsModel


@dataclass(frozen=True)
class Annulus:
    """``r_min <= |a| <= r_max`` intersected with the model cone."""

    r_min: float
    r_max: float

    def __post_init__(self):
        if not 0 <= self.r_min < self.r_max:
            raise OutOfDomainError("annulus needs 0 <= r_min < r_max")

    @classmethod
    def default_for(cls, model: GiqsModel) -> "Annulus":
        scale = max(1.0, 2.0 * model.min_radius)
        return cls(0.5 * scale, 1.0 * scale)

    def contains(self, model: GiqsModel, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        n = np.linalg.norm(pts, axis=1)
        return (n >= self.r_min) & (n <= self.r_max) & model.cone.contains(pts)


def _sample_points(model: GiqsModel, domain: Annulus, n: int, margin: float,
                   rng: np.random.Generator) -> np.ndarray:
    lo, hi = domain.r_min + margin, domain.r_max - margin
    if not lo < hi:
        raise OutOfDomainError("domain too thin for the requested xi grid")
    out = []
    tries = 0
    while sum(len(o) for o in out) < n:
        tries += 1
        if tries > 200:
            raise OutOfDomainError("empty domain: no sample points inside the cone")
        m = 4 * n
        dirs = rng.normal(size=(m, model.d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        # uniform in area between lo and hi
        r = (lo**model.d + rng.random(m) * (hi**model.d - lo**model.d)) ** (1.0 / model.d)
        pts = dirs * r[:, None]
        ok = _ball_inside(model, domain, pts, margin)
        out.append(pts[ok])
    return np.concatenate(out)[:n]


def _ball_inside(model, domain, pts, margin):
    """Points whose margin-ball (probed along axes and diagonals) stays in the domain."""
    ok = domain.contains(model, pts)
    if margin <= 0:
        return ok
    d = model.d
    probes = [np.eye(d)[i] * sgn for i in range(d) for sgn in (1, -1)]
    if d == 2:
        probes += [np.array(v) / math.sqrt(2) for v in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
    for e in probes:
        ok &= domain.contains(model, pts + margin * e)
    return ok


def _subspace(w: np.ndarray, s: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal columns spanning an s-dimensional subspace orthogonal to w."""
    perp = null_space(w.reshape(1, -1))
    if s == perp.shape[1]:
        return perp
    q, _ = np.linalg.qr(rng.normal(size=(perp.shape[1], s)))
    return perp @ q


def _unit_vectors(s: int, n_u: int, rng: np.random.Generator) -> np.ndarray:
    if s == 1:
        return np.array([[1.0], [-1.0]])
    if s == 2:
        th = np.linspace(0.0, 2 * np.pi, n_u, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    u = rng.normal(size=(n_u, s))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _min_over_u(model, a, basis, eta, n_u, rng):
    """min_{u in M, |u|=1} |P_M w(a + eta u)| with local refinement for s = 2."""
    s = basis.shape[1]
    coords = _unit_vectors(s, n_u, rng)
    U = coords @ basis.T
    W = model.w(a[None, :] + eta * U)
    vals = np.linalg.norm(W @ basis, axis=1)
    i = int(np.argmin(vals))
    best = float(vals[i])
    if s == 2 and eta > 0:
        step = 2 * np.pi / n_u
        th0 = math.atan2(coords[i, 1], coords[i, 0])

        def f(th):
            u = basis @ np.array([math.cos(th), math.sin(th)])
            return float(np.linalg.norm(model.w(a + eta * u) @ basis))

        res = minimize_scalar(f, bounds=(th0 - step, th0 + step), method="bounded",
                              options={"xatol": 1e-10})
        best = min(best, float(res.fun))
    return best


def steepness_curve(model: GiqsModel, a, basis: np.ndarray, xi_grid, n_eta: int = 64,
                    n_u: int = 64, seed: int = 0) -> np.ndarray:
    """Running-max curve at ``a`` for the subspace spanned by ``basis`` columns."""
    a = np.asarray(a, dtype=float)
    xi = np.asarray(xi_grid, dtype=float)
    if np.any(np.diff(xi) <= 0) or xi[0] <= 0:
        raise OutOfDomainError("xi grid must be positive and increasing")
    rng = np.random.default_rng(seed)
    etas = np.unique(np.concatenate([np.linspace(0.0, xi[-1], n_eta), xi]))
    g = np.array([_min_over_u(model, a, basis, e, n_u, rng) for e in etas])
    run = np.maximum.accumulate(g)
    out = run[np.searchsorted(etas, xi)]
    if np.any(np.diff(out) < 0):
        raise AssertionError("steepness curve is not monotone")
    return out


@dataclass
class SteepnessEstimate:
    s: int
    alpha: float
    B: float
    radius: float
    inf_grad: float
    steep: bool
    verdict: str
    alpha_fit: float
    xi_grid: list
    envelope: list
    n_points: int
    n_subspaces: int
    fit_window: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"s": self.s, "alpha": self.alpha, "alpha_fit": self.alpha_fit, "B": self.B,
                "radius": self.radius, "inf_grad": self.inf_grad, "steep": self.steep,
                "verdict": self.verdict, "xi_grid": self.xi_grid, "envelope": self.envelope,
                "n_points": self.n_points, "n_subspaces": self.n_subspaces,
                "fit_window": self.fit_window}


def default_xi_grid(domain: Annulus, n: int = 12) -> np.ndarray:
    width = domain.r_max - domain.r_min
    return np.geomspace(1e-3 * width, 0.2 * width, n)


def steepness_profile(model: GiqsModel, domain: Annulus | None = None, s: int = 1,
                      n_points: int = 32, n_subspaces: int = 4, xi_grid=None,
                      seed: int = 0, grad_tol: float = 1e-8, noise_rel: float = 1e-9,
                      n_eta: int = 48, n_u: int = 48) -> SteepnessEstimate:
    """Estimate ``(alpha_s, B_s)`` from the lower envelope over sampled points and subspaces."""
    if not 1 <= s <= model.d - 1:
        raise OutOfDomainError(f"need 1 <= s <= d-1 = {model.d - 1}")
    domain = domain or Annulus.default_for(model)
    xi = np.asarray(default_xi_grid(domain) if xi_grid is None else xi_grid, dtype=float)
    rng = np.random.default_rng(seed)
    pts = _sample_points(model, domain, n_points, float(xi[-1]), rng)
    W = model.w(pts)
    gnorm = np.linalg.norm(W, axis=1)
    inf_grad = float(gnorm.min())
    mean_grad = float(gnorm.mean())
    n_sub = 1 if s == model.d - 1 else n_subspaces
    if inf_grad <= grad_tol * max(1.0, mean_grad):
        return SteepnessEstimate(s, math.nan, 0.0, float(xi[-1]), inf_grad, False,
                                 "not steep: vanishing gradient", math.nan, xi.tolist(),
                                 [0.0] * len(xi), len(pts), n_sub)
    env = np.full(len(xi), np.inf)
    for i, a in enumerate(pts):
        for _ in range(n_sub):
            basis = _subspace(W[i], s, rng)
            curve = steepness_curve(model, a, basis, xi, n_eta, n_u,
                                    seed=int(rng.integers(2**31)))
            env = np.minimum(env, curve)
    floor = noise_rel * mean_grad
    ok = env > floor
    if not np.all(ok):
        return SteepnessEstimate(s, math.nan, 0.0, float(xi[-1]), inf_grad, False,
                                 "not steep: envelope vanishes", math.nan, xi.tolist(),
                                 env.tolist(), len(pts), n_sub)
    slope, _ = np.polyfit(np.log(xi), np.log(env), 1)
    alpha = max(1.0, float(slope))
    B = float(np.min(env / xi**alpha))
    return SteepnessEstimate(s, alpha, B, float(xi[-1]), inf_grad, True, "steep",
                             float(slope), xi.tolist(), env.tolist(), len(pts), n_sub,
                             [float(xi[0]), float(xi[-1])])


@dataclass
class LineReport:
    point: list
    direction: list
    t_range: list
    segments: list
    passed: bool

    def to_dict(self) -> dict:
        return {"point": self.point, "direction": self.direction, "t_range": self.t_range,
                "segments": self.segments, "pass": self.passed}


@dataclass
class NiedermanReport:
    n_lines: int
    n_samples: int
    zero_threshold: float
    isolation_threshold: int
    lines: list
    passed: bool

    @property
    def n_failed(self) -> int:
        return sum(not ln.passed for ln in self.lines)

    def to_dict(self) -> dict:
        return {"n_lines": self.n_lines, "n_samples_per_line": self.n_samples,
                "zero_threshold": self.zero_threshold,
                "isolation_threshold": self.isolation_threshold,
                "n_failed": self.n_failed, "pass": self.passed,
                "lines": [ln.to_dict() for ln in self.lines]}


def _line_range(model, domain, p, v, half_length, n_probe=257):
    """Largest t-interval around 0 with p + t v inside the domain."""
    t = np.linspace(-half_length, half_length, n_probe)
    inside = domain.contains(model, p[None, :] + t[:, None] * v[None, :])
    mid = n_probe // 2
    if not inside[mid]:
        return None
    lo = mid
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = mid
    while hi < n_probe - 1 and inside[hi + 1]:
        hi += 1
    if hi - lo < 4:
        return None
    return float(t[lo]), float(t[hi])


def restricted_derivative(model: GiqsModel, p, v, t: np.ndarray, step: float) -> np.ndarray:
    """Centered finite difference of ``t -> h(p + t v)``."""
    X = np.asarray(p)[None, :] + np.asarray(t)[:, None] * np.asarray(v)[None, :]
    return (model.h(X + step * v) - model.h(X - step * v)) / (2 * step)


def critical_segments(t: np.ndarray, g: np.ndarray, threshold: float) -> list[dict]:
    """Maximal runs of consecutive samples with ``|g| < threshold``."""
    below = np.abs(g) < threshold
    segs = []
    dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
    i = 0
    while i < len(t):
        if below[i]:
            j = i
            while j + 1 < len(t) and below[j + 1]:
                j += 1
            segs.append({"t_start": float(t[i]), "t_end": float(t[j]), "n_samples": j - i + 1,
                         "length": (j - i + 1) * dt})
            i = j + 1
        else:
            i += 1
    return segs


def niederman_check(model: GiqsModel, domain: Annulus | None = None, n_lines: int = 50,
                    n_samples_per_line: int = 201, zero_threshold: float = 1e-3,
                    seed: int = 0, isolation_threshold: int = 3, lines=None,
                    fd_step: float = 1e-5) -> NiedermanReport:
    """Sample affine lines and flag non-isolated critical points of the restriction of h.

    A line fails when some run of consecutive samples with
    ``|d/dt h| < zero_threshold * mean|w|`` has at least ``isolation_threshold``
    samples.  Explicit ``lines`` (pairs of point and direction) that leave the
    domain immediately raise; randomly drawn degenerate lines are redrawn.
    """
    if not zero_threshold > 0 or n_samples_per_line < 3 or n_lines < 1:
        raise OutOfDomainError("need zero_threshold > 0, >= 3 samples and >= 1 line")
    domain = domain or Annulus.default_for(model)
    rng = np.random.default_rng(seed)
    half = 0.5 * (domain.r_max - domain.r_min) + 0.25 * domain.r_max
    reports = []
    explicit = list(lines) if lines is not None else None
    count = len(explicit) if explicit is not None else n_lines
    attempts = 0
    while len(reports) < count:
        if explicit is not None:
            p, v = (np.asarray(x, dtype=float) for x in explicit[len(reports)])
            v = v / np.linalg.norm(v)
        else:
            attempts += 1
            if attempts > 100 * count:
                raise OutOfDomainError("could not draw nondegenerate lines in the domain")
            p = _sample_points(model, domain, 1, 0.0, rng)[0]
            v = rng.normal(size=model.d)
            v /= np.linalg.norm(v)
        rng_t = _line_range(model, domain, p, v, half)
        if rng_t is None:
            if explicit is not None:
                raise OutOfDomainError("degenerate line: leaves the domain immediately")
            continue
        t = np.linspace(rng_t[0], rng_t[1], n_samples_per_line)
        # keep the finite-difference stencil inside the domain
        span = rng_t[1] - rng_t[0]
        step = min(fd_step * max(1.0, domain.r_max), 1e-3 * span)
        inner = t.copy()
        inner[0] += step
        inner[-1] -= step
        g = restricted_derivative(model, p, v, inner, step)
        scale = float(np.mean(np.linalg.norm(model.w(p[None, :] + inner[:, None] * v[None, :]), axis=1)))
        segs = critical_segments(inner, g, zero_threshold * scale)
        passed = all(sg["n_samples"] < isolation_threshold for sg in segs)
        reports.append(LineReport(p.tolist(), v.tolist(), list(rng_t), segs, passed))
    return NiedermanReport(len(reports), n_samples_per_line, zero_threshold, isolation_threshold,
                           reports, all(r.passed for r in reports))
