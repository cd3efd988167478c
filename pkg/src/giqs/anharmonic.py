"""Action variables of the planar anharmonic oscillator.

The classical Hamiltonian is ``|xi|^2/2 + |x|^(2l)/(2l)``.  With angular
momentum ``Mz`` the radial motion is governed by the effective potential
``V(r) = Mz^2/(2 r^2) + r^(2l)/(2l)`` and the radial action is

    a_r(E, Mz) = (sqrt(2)/pi) * int_{r_m}^{r_M} sqrt(E - V(r)) dr.

All integrals are evaluated in the variable ``u = r^2``.  There
``u (E - V) = P(u) = (u - u_m)(u_M - u) q(u) / (2l)`` with ``q`` a positive
polynomial obtained by exact synthetic division, and the substitution
``u = u_m + (u_M - u_m) sin^2(theta)`` removes both square-root endpoint
singularities.  The only remaining non-smooth feature is the pole of ``1/u``
sitting at imaginary distance ``~sqrt(u_m/(u_M - u_m))`` from ``theta = 0``;
geometrically graded Gauss-Legendre panels resolve it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre

from .errors import OutOfDomainError, QuadratureError

SQRT2_OVER_PI = np.sqrt(2.0) / np.pi

# panel grading toward theta = 0
_GRADING_RATIO = 0.35
_GRADING_LEVELS = 16


@dataclass(frozen=True)
class AnharmonicParams:
    """Numerical settings for the anharmonic action map."""

    ell: int = 2
    nodes_per_panel: int = 16
    bisection_tol: float = 4e-16
    inversion_tol: float = 1e-14
    quadrature_tol: float = 1e-11
    max_iter: int = 200

    def __post_init__(self):
        if int(self.ell) != self.ell or self.ell < 1:
            raise OutOfDomainError(f"ell must be an integer >= 1, got {self.ell!r}")
        if self.nodes_per_panel < 2:
            raise OutOfDomainError("nodes_per_panel must be >= 2")
        for name in ("bisection_tol", "inversion_tol", "quadrature_tol"):
            if not getattr(self, name) > 0:
                raise OutOfDomainError(f"{name} must be > 0")

    @property
    def degree(self) -> float:
        return 2.0 * self.ell / (self.ell + 1.0)


def _graded_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights on [0, pi/2], graded toward 0."""
    x, wts = roots_legendre(n)
    edges = [0.5 * np.pi * _GRADING_RATIO**k for k in range(_GRADING_LEVELS + 1)]
    edges.append(0.0)
    nodes, weights = [], []
    for hi, lo in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (x + 1.0))
        weights.append(half * wts)
    return np.concatenate(nodes), np.concatenate(weights)


_RULE_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _rule(n: int):
    if n not in _RULE_CACHE:
        _RULE_CACHE[n] = _graded_rule(n)
    return _RULE_CACHE[n]


def effective_potential(r, Mz, ell: int):
    r = np.asarray(r, dtype=float)
    return Mz**2 / (2.0 * r**2) + r ** (2 * ell) / (2.0 * ell)


def min_energy(Mz, ell: int):
    """Energy of the circular orbit, i.e. the minimum of the effective potential."""
    m = np.abs(np.asarray(Mz, dtype=float))
    return m ** (2.0 * ell / (ell + 1.0)) * (ell + 1.0) / (2.0 * ell)


def max_angular_momentum(E, ell: int):
    """Supremum of |Mz| at energy E (the admissible-domain boundary)."""
    E = np.asarray(E, dtype=float)
    return (2.0 * ell * E / (ell + 1.0)) ** ((ell + 1.0) / (2.0 * ell))


def _check_domain(E, Mz, ell):
    E = np.asarray(E, dtype=float)
    Mz = np.asarray(Mz, dtype=float)
    if np.any(~np.isfinite(E)) or np.any(~np.isfinite(Mz)):
        raise OutOfDomainError("non-finite energy or angular momentum")
    if np.any(E <= 0):
        raise OutOfDomainError("energy must be positive")
    emin = min_energy(Mz, ell)
    bad = E < emin * (1.0 - 1e-13)
    if np.any(bad):
        i = np.flatnonzero(bad.ravel())[0]
        raise OutOfDomainError(
            f"|Mz| >= (2lE/(l+1))^((l+1)/2l): E={E.ravel()[i]!r}, Mz={np.broadcast_to(Mz, E.shape).ravel()[i]!r}"
        )
    return E, Mz


def _turning_u(E, Mz, ell, tol, max_iter):
    """Roots u_m <= u_M of N(u) = u^(l+1) - 2lEu + lMz^2 (u = r^2), vectorized bisection."""
    E, Mz = np.broadcast_arrays(np.asarray(E, float), np.asarray(Mz, float))
    E = E.astype(float).ravel()
    M2 = (Mz.astype(float) ** 2).ravel()

    def N(u, E_, M2_):
        return u ** (ell + 1) - 2.0 * ell * E_ * u + ell * M2_

    u_star = (2.0 * ell * E / (ell + 1.0)) ** (1.0 / ell)
    u_top = (2.0 * ell * E) ** (1.0 / ell)
    circ = E <= min_energy(np.sqrt(M2), ell) * (1.0 + 1e-14)

    # upper root on [u*, u_top]: N(u*) < 0 < N(u_top)
    lo, hi = u_star.copy(), u_top.copy()
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        neg = N(mid, E, M2) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.all(hi - lo <= tol * hi):
            break
    else:
        raise QuadratureError("turning point bisection (outer) did not converge")
    u_M = 0.5 * (lo + hi)

    # lower root on [M^2/(2E), u*]: N decreasing there; geometric bisection
    u_m = np.zeros_like(E)
    lead = M2 / (2.0 * E)
    # u_m = lead + u_m^(l+1) / (2lE): once the correction is below tol the leading term is the root
    settled = (M2 > 0) & (lead**ell <= tol * 2.0 * ell * E)
    u_m[settled] = lead[settled]
    pos = (M2 > 0) & ~settled
    if np.any(pos):
        E_, M2_ = E[pos], M2[pos]
        lo = lead[pos]
        hi = u_star[pos].copy()
        for _ in range(max_iter):
            # geometric steps while far apart (lo * hi may underflow), then arithmetic
            mid = np.where(hi > 2.0 * lo, np.sqrt(lo) * np.sqrt(hi), 0.5 * (lo + hi))
            above = N(mid, E_, M2_) > 0
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
            if np.all(hi - lo <= tol * hi):
                break
        else:
            raise QuadratureError("turning point bisection (inner) did not converge")
        u_m[pos] = 0.5 * (lo + hi)
    # circular orbit: both roots collapse on the potential minimum
    uc = (np.sqrt(M2)) ** (2.0 / (ell + 1.0))
    u_m = np.where(circ, uc, np.minimum(u_m, u_M))
    u_M = np.where(circ, uc, u_M)
    return u_m, u_M


def turning_points(params: AnharmonicParams, E, Mz):
    """Turning radii r_m <= r_M where E = V*(r)."""
    E, Mz = _check_domain(E, Mz, params.ell)
    u_m, u_M = _turning_u(E, Mz, params.ell, params.bisection_tol, params.max_iter)
    shape = np.broadcast(E, Mz).shape
    return np.sqrt(u_m).reshape(shape), np.sqrt(u_M).reshape(shape)


def _quotient_coeffs(E, M2, u_m, u_M, ell):
    """Coefficients (low to high) of q(u) = N(u) / ((u - u_m)(u - u_M))."""
    s = u_m + u_M
    p = u_m * u_M
    n = np.zeros((ell + 2,) + E.shape)
    n[0] = ell * M2
    n[1] += -2.0 * ell * E
    n[ell + 1] += 1.0
    c = np.zeros((ell + 1,) + E.shape)  # c[ell] is a zero guard
    c[ell - 1] = n[ell + 1]
    for i in range(ell - 2, -1, -1):
        c[i] = n[i + 2] + s * c[i + 1] - p * (c[i + 2] if i + 2 <= ell else 0.0)
    return c[:ell]


def _horner(coeffs, u):
    out = np.zeros_like(u)
    for ci in coeffs[::-1]:
        out = out * u + ci[:, None]
    return out


def _integrals(E, Mz, ell, n, tol, max_iter, need=("a", "dE", "dM")):
    """Vectorized radial action and its partial derivatives."""
    E = np.asarray(E, float).ravel()
    Mz = np.asarray(Mz, float).ravel()
    u_m, u_M = _turning_u(E, Mz, ell, tol, max_iter)
    du = u_M - u_m
    theta, wq = _rule(n)
    sin2 = np.sin(theta) ** 2
    u = u_m[:, None] + du[:, None] * sin2[None, :]
    coeffs = _quotient_coeffs(E, Mz**2, u_m, u_M, ell)
    q = _horner(coeffs, u)
    if np.any(q <= 0):
        raise QuadratureError("non-positive quotient polynomial on the orbit")
    sq = np.sqrt(q / (2.0 * ell))
    # the 1/u factors peak at u ~ u_m, a feature too narrow for the rule when
    # |Mz| is tiny; their q(0) part is integrated in closed form instead
    q0 = coeffs[0]
    sq0 = np.sqrt(q0 / (2.0 * ell))
    dq = _horner(coeffs[1:], u) if ell > 1 else np.zeros_like(u)  # (q(u) - q(0)) / u
    out = {}
    if "a" in need:
        # (sqrt2/pi) int du^2 sin^2 cos^2 sqrt(q/2l) / u dtheta
        cos2 = 1.0 - sin2
        smooth = (du[:, None] ** 2) * (sin2 * cos2)[None, :] * dq / (2.0 * ell * (sq + sq0[:, None]))
        # du^2 int_0^{pi/2} sin^2 cos^2 / (u_m + du sin^2) dtheta
        rm, rM = np.sqrt(u_m), np.sqrt(u_M)
        exact = du * (np.pi / 4.0 - np.pi * rm / (2.0 * (rm + rM)))
        out["a"] = SQRT2_OVER_PI * (sq0 * exact + smooth @ wq)
    if "dE" in need:
        out["dE"] = SQRT2_OVER_PI * (0.5 / sq) @ wq
    if "dM" in need:
        with np.errstate(divide="ignore", invalid="ignore"):
            # Mz int_0^{pi/2} dtheta / (u_m + du sin^2) = pi Mz / (2 sqrt(u_m u_M));
            # Mz / sqrt(u_m) -> sign(Mz) sqrt(2E) once M^2 underflows
            ratio = np.where(np.abs(Mz) > 1e-150, Mz / np.sqrt(u_m), np.sign(Mz) * np.sqrt(2.0 * E))
            exact = np.pi * ratio / (2.0 * np.sqrt(u_M)) / sq0
            smooth = -dq / (2.0 * ell * sq * sq0[:, None] * (sq + sq0[:, None]))
            val = SQRT2_OVER_PI * (-0.5) * (exact + Mz * (smooth @ wq))
        out["dM"] = np.where(Mz == 0.0, -0.5, val)
    return out


def _radial_checked(params, E, Mz, keys):
    E, Mz = _check_domain(E, Mz, params.ell)
    shape = np.broadcast(E, Mz).shape
    Eb, Mb = np.broadcast_arrays(E, Mz)
    n = params.nodes_per_panel
    coarse = _integrals(Eb, Mb, params.ell, n, params.bisection_tol, params.max_iter, keys)
    fine = _integrals(Eb, Mb, params.ell, 2 * n, params.bisection_tol, params.max_iter, keys)
    for k in keys:
        scale = np.maximum(np.abs(fine[k]), 1.0)
        err = np.max(np.abs(fine[k] - coarse[k]) / scale) if fine[k].size else 0.0
        if err > params.quadrature_tol:
            raise QuadratureError(f"quadrature self-check failed for {k}: {err:.3e}")
    return {k: fine[k].reshape(shape) for k in keys}


def radial_action(params: AnharmonicParams, E, Mz):
    """Radial action a_r(E, Mz); accepts scalars or broadcastable arrays."""
    out = _radial_checked(params, E, Mz, ("a",))["a"]
    return float(out) if np.ndim(out) == 0 else out


def regularized_action_a1(params: AnharmonicParams, E, Mz):
    """a_1 = a_r for Mz >= 0 and a_r - Mz for Mz < 0 (analytic across Mz = 0)."""
    a_r = _radial_checked(params, E, Mz, ("a",))["a"]
    out = np.where(np.asarray(Mz) < 0, a_r - np.asarray(Mz, float), a_r)
    return float(out) if np.ndim(out) == 0 else out


def action_a1_with_derivatives(params: AnharmonicParams, E, Mz):
    """Vectorized (a1, d a1/dE, d a1/dMz) using the primary quadrature rule only."""
    E, Mz = _check_domain(E, Mz, params.ell)
    Eb, Mb = np.broadcast_arrays(E, Mz)
    out = _integrals(Eb, Mb, params.ell, params.nodes_per_panel,
                     params.bisection_tol, params.max_iter)
    M = Mb.ravel()
    neg = M < 0
    a1 = np.where(neg, out["a"] - M, out["a"])
    dM = np.where(neg, out["dM"] - 1.0, out["dM"])
    shape = Eb.shape
    return a1.reshape(shape), out["dE"].reshape(shape), dM.reshape(shape)


def in_action_cone(a1, a2):
    a1 = np.asarray(a1, float)
    a2 = np.asarray(a2, float)
    tol = 1e-12 * np.maximum(1.0, np.abs(a2))
    return np.where(a2 >= 0, a1 >= -tol, a1 >= np.abs(a2) - tol)


def invert_actions(params: AnharmonicParams, a1, a2):
    """Energy E with a_1(E, a2) = a1, by safeguarded Newton on the monotone map E -> a_1."""
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    shape = np.broadcast(a1, a2).shape
    t, M = (x.ravel().astype(float) for x in np.broadcast_arrays(a1, a2))
    if not np.all(in_action_cone(t, M)):
        raise OutOfDomainError("action point outside the cone a1>=0 (a2>=0), a1>=|a2| (a2<0)")
    if np.any((t == 0) & (M == 0)):
        raise OutOfDomainError("the origin is excluded from the action domain")
    ell = params.ell
    # a_r target; on the cone boundary the orbit is circular
    target = np.where(M < 0, t + M, t)
    target = np.maximum(target, 0.0)
    lo = min_energy(M, ell)
    E = lo.copy()
    zero_m = lo == 0
    # Mz = 0: a_r(E, 0) is positive for any E > 0, start from a tiny positive energy
    E[zero_m] = np.finfo(float).tiny ** 0.25
    lo = E.copy()
    done = target <= 0.0
    hi = np.maximum(2.0 * lo, 1.0)
    for _ in range(params.max_iter):
        f_hi = _integrals(hi, M, ell, params.nodes_per_panel, params.bisection_tol,
                          params.max_iter, ("a",))["a"] - target
        short = (f_hi < 0) & ~done
        if not np.any(short):
            break
        lo = np.where(short, hi, lo)
        hi = np.where(short, 2.0 * hi, hi)
    else:
        raise QuadratureError("could not bracket the inverse action map")
    E = np.where(done, min_energy(M, ell), lo)
    active = ~done
    for _ in range(params.max_iter):
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        r = _integrals(E[idx], M[idx], ell, params.nodes_per_panel,
                       params.bisection_tol, params.max_iter, ("a", "dE"))
        f = r["a"] - target[idx]
        neg = f < 0
        lo[idx] = np.where(neg, E[idx], lo[idx])
        hi[idx] = np.where(neg, hi[idx], E[idx])
        step = f / r["dE"]
        E_new = E[idx] - step
        outside = (E_new <= lo[idx]) | (E_new >= hi[idx])
        E_new = np.where(outside, 0.5 * (lo[idx] + hi[idx]), E_new)
        conv = np.abs(E_new - E[idx]) <= params.inversion_tol * np.abs(E_new)
        E[idx] = E_new
        active[idx[conv]] = False
    else:
        raise QuadratureError("inverse action map did not converge")
    out = E.reshape(shape)
    return float(out) if np.ndim(out) == 0 else out
