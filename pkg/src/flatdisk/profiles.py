"""Convex cost profiles on phase density and their planar reduction.

A micro profile assigns a convex cost phi(f) to the pointwise phase-space
density f.  Minimizing kinetic energy plus phi-cost over all velocity
profiles with fixed spatial density rho produces the reduced cost psi(rho);
the two are linked through their convex conjugates by

    (psi')^{-1}(lam) = 2*pi * phi*(lam),
    psi*(lam)        = 2*pi * integral_0^lam phi*(s) ds,

where phi*(lam) = sup_{f>=0} (lam*f - phi(f)).  The polytrope family
phi(f) = f**(1 + 1/k) keeps every one of these maps in closed form, which
is what the test oracles lean on; tabulated profiles fall back to monotone
interpolation plus numeric conjugation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .errors import BracketFailure, NoConvergence

__all__ = [
    "MicroProfile",
    "ReducedProfile",
    "VelocityProfile",
    "make_polytrope",
    "make_tabulated",
    "load_tabulated",
    "legendre_transform",
    "reduce_profile",
    "optimal_velocity_profile",
    "psi_inverse_derivative",
]


def _nonneg(x, what: str):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError(f"{what} must be nonnegative")
    return x


@dataclass(frozen=True)
class MicroProfile:
    """Strictly convex cost on phase density with phi(0) = phi'(0) = 0.

    All evaluators accept scalars or arrays of nonnegative reals and raise
    ValueError on negative input (no +inf extension).  Immutable; safe to
    share across threads.
    """

    kind: str                       # "polytrope" or "tabulated"
    k: Optional[float]              # growth exponent when polytrope, else None
    phi: Callable = field(repr=False)
    phi_prime: Callable = field(repr=False)
    phi_second: Callable = field(repr=False)
    phi_prime_inv: Callable = field(repr=False)
    phi_star: Callable = field(repr=False)


@dataclass(frozen=True)
class ReducedProfile:
    """Reduced cost on spatial density, with its slope, inverse slope and
    conjugate.  n = k + 1 for the polytrope family (None for tabulated
    sources, where no single exponent applies)."""

    n: Optional[float]
    psi: Callable = field(repr=False)
    psi_prime: Callable = field(repr=False)
    psi_prime_inv: Callable = field(repr=False)
    psi_star: Callable = field(repr=False)
    micro: MicroProfile = field(repr=False, default=None)


def make_polytrope(k: float) -> MicroProfile:
    """Power-law profile phi(f) = f**(1 + 1/k), everything in closed form.

    Valid for 0 < k <= 1.  k = 1 is accepted for cross-checks only; the
    steady-state solver's compactness arguments need k < 1 and callers are
    expected to treat k = 1 results as diagnostic.
    """
    if not (0.0 < k <= 1.0):
        raise ValueError(f"polytrope exponent must lie in (0, 1], got {k}")
    p = 1.0 + 1.0 / k      # growth power of phi
    # conjugate: phi*(lam) = k^k (k+1)^-(k+1) lam^(k+1)
    cstar = k**k * (k + 1.0) ** (-(k + 1.0))

    def phi(f):
        return _nonneg(f, "phase density") ** p

    def phi_prime(f):
        return p * _nonneg(f, "phase density") ** (1.0 / k)

    def phi_second(f):
        # (1+1/k)(1/k) f^(1/k - 1); one-sided value 0 at f=0 for k<1
        f = _nonneg(f, "phase density")
        return p / k * f ** (1.0 / k - 1.0)

    def phi_prime_inv(y):
        return (_nonneg(y, "slope value") * k / (k + 1.0)) ** k

    def phi_star(lam):
        return cstar * _nonneg(lam, "multiplier") ** (k + 1.0)

    return MicroProfile(kind="polytrope", k=k, phi=phi, phi_prime=phi_prime,
                        phi_second=phi_second, phi_prime_inv=phi_prime_inv,
                        phi_star=phi_star)


def make_tabulated(f_values, slope_values) -> MicroProfile:
    """Profile from strictly increasing (f, phi'(f)) samples, first row (0, 0).

    phi' is monotone piecewise-cubic interpolation (shape preserving, so
    convexity of phi survives); phi is its exact antiderivative; the inverse
    slope interpolates the swapped table.  Outside the table phi' continues
    linearly, which keeps the conjugate's maximizer bracketable.
    """
    f = np.asarray(f_values, dtype=float)
    g = np.asarray(slope_values, dtype=float)
    if f.ndim != 1 or f.shape != g.shape or len(f) < 3:
        raise ValueError("need matching 1-D tables with at least 3 rows")
    if f[0] != 0.0 or g[0] != 0.0:
        raise ValueError("tables must start at (0, 0)")
    if np.any(np.diff(f) <= 0) or np.any(np.diff(g) <= 0):
        raise ValueError("tables must be strictly increasing")

    slope = PchipInterpolator(f, g)
    anti = slope.antiderivative()
    inv = PchipInterpolator(g, f)
    d_slope = slope.derivative()
    f_top, g_top = f[-1], g[-1]
    m_top = float(d_slope(f_top))    # linear continuation slope

    def phi_prime(x):
        x = _nonneg(x, "phase density")
        return np.where(x <= f_top, slope(np.minimum(x, f_top)),
                        g_top + m_top * (x - f_top))

    def phi(x):
        x = _nonneg(x, "phase density")
        inside = anti(np.minimum(x, f_top))
        t = np.maximum(x - f_top, 0.0)
        return inside + g_top * t + 0.5 * m_top * t * t

    def phi_second(x):
        x = _nonneg(x, "phase density")
        return np.where(x <= f_top, d_slope(np.minimum(x, f_top)), m_top)

    def phi_prime_inv(y):
        y = _nonneg(y, "slope value")
        return np.where(y <= g_top, inv(np.minimum(y, g_top)),
                        f_top + (y - g_top) / m_top)

    prof_stub = MicroProfile(kind="tabulated", k=None, phi=phi,
                             phi_prime=phi_prime, phi_second=phi_second,
                             phi_prime_inv=phi_prime_inv, phi_star=None)

    def phi_star(lam):
        lam_arr = np.asarray(lam, dtype=float)
        out = np.vectorize(lambda s: legendre_transform(prof_stub, s))(lam_arr)
        return out if lam_arr.ndim else float(out)

    return MicroProfile(kind="tabulated", k=None, phi=phi, phi_prime=phi_prime,
                        phi_second=phi_second, phi_prime_inv=phi_prime_inv,
                        phi_star=phi_star)


def load_tabulated(path) -> MicroProfile:
    """Load a tabulated profile from CSV with header ``f,phi_prime``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return make_tabulated(data[:, 0], data[:, 1])


def _value_and_slope(profile):
    if isinstance(profile, ReducedProfile):
        return profile.psi, profile.psi_prime
    return profile.phi, profile.phi_prime


def legendre_transform(profile, lam: float) -> float:
    """sup_{f>=0} (lam*f - cost(f)) by bracketed scalar maximization.

    Works for micro and reduced profiles alike.  The maximizer sits where
    the cost slope equals lam; superlinear growth guarantees a finite
    bracket, found by geometric doubling.
    """
    if lam < 0:
        raise ValueError("multiplier must be nonnegative")
    if lam == 0.0:
        return 0.0
    value, slope = _value_and_slope(profile)
    hi = 1.0
    for _ in range(200):
        if slope(hi) > lam:
            break
        hi *= 2.0
    else:
        raise BracketFailure("cost slope never exceeded the multiplier; "
                             "profile growth looks sublinear")
    res = minimize_scalar(lambda f: -(lam * f - float(value(f))),
                          bounds=(0.0, hi), method="bounded",
                          options={"xatol": 1e-14})
    if not res.success:
        raise BracketFailure("conjugate maximization did not converge")
    return max(0.0, -float(res.fun))


def reduce_profile(micro: MicroProfile) -> ReducedProfile:
    """Build the reduced cost from a micro profile.

    The inverse slope is the planar conjugate integral 2*pi*phi*(lam); the
    slope itself is recovered by bisection, the value by the conjugacy
    identity psi(rho) = rho*psi'(rho) - psi*(psi'(rho)).  Polytropes take
    the closed-form route.
    """
    if micro.kind == "polytrope":
        k = micro.k
        n = k + 1.0
        cn = 2.0 * np.pi * k**k / (k + 1.0) ** (k + 1.0)
        cpsi = n / (n + 1.0) * cn ** (-1.0 / n)

        def psi_prime_inv(lam):
            return cn * _nonneg(lam, "multiplier") ** n

        def psi_prime(rho):
            return (_nonneg(rho, "density") / cn) ** (1.0 / n)

        def psi_star(lam):
            return cn * _nonneg(lam, "multiplier") ** (n + 1.0) / (n + 1.0)

        def psi(rho):
            return cpsi * _nonneg(rho, "density") ** (1.0 + 1.0 / n)

        return ReducedProfile(n=n, psi=psi, psi_prime=psi_prime,
                              psi_prime_inv=psi_prime_inv, psi_star=psi_star,
                              micro=micro)

    def psi_prime_inv_scalar(lam):
        return 2.0 * np.pi * float(micro.phi_star(lam))

    def psi_prime_inv(lam):
        lam_arr = _nonneg(lam, "multiplier")
        out = np.vectorize(psi_prime_inv_scalar)(lam_arr)
        return out if lam_arr.ndim else float(out)

    def psi_prime_scalar(rho):
        # bisection-invert the (strictly increasing) inverse slope;
        # bracket grown geometrically, 1e-12 absolute on the argument
        if rho == 0.0:
            return 0.0
        lo, hi = 0.0, 1.0
        for _ in range(200):
            if psi_prime_inv_scalar(hi) >= rho:
                break
            hi *= 2.0
        else:
            raise BracketFailure("inverse slope never reached the density")
        while hi - lo > 1e-12 and (hi - lo) > 1e-15 * hi:
            mid = 0.5 * (lo + hi)
            if psi_prime_inv_scalar(mid) < rho:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def psi_prime(rho):
        rho_arr = _nonneg(rho, "density")
        out = np.vectorize(psi_prime_scalar)(rho_arr)
        return out if rho_arr.ndim else float(out)

    def psi_star_scalar(lam):
        if lam == 0.0:
            return 0.0
        val, err = quad(lambda s: float(micro.phi_star(s)), 0.0, lam, limit=200)
        return 2.0 * np.pi * val

    def psi_star(lam):
        lam_arr = _nonneg(lam, "multiplier")
        out = np.vectorize(psi_star_scalar)(lam_arr)
        return out if lam_arr.ndim else float(out)

    def psi_scalar(rho):
        lam = psi_prime_scalar(rho)
        return rho * lam - psi_star_scalar(lam)

    def psi(rho):
        rho_arr = _nonneg(rho, "density")
        out = np.vectorize(psi_scalar)(rho_arr)
        return out if rho_arr.ndim else float(out)

    return ReducedProfile(n=None, psi=psi, psi_prime=psi_prime,
                          psi_prime_inv=psi_prime_inv, psi_star=psi_star,
                          micro=micro)


@dataclass(frozen=True)
class VelocityProfile:
    """Radial velocity profile realizing the reduced cost at one density.

    density(v) gives the phase density at speed v; mass and cost are its
    2*pi*v-weighted quadratures, guaranteed to match the requested spatial
    density and psi(rho) respectively (tolerance 1e-6 relative).
    """

    lam: float
    v_max: float
    density: Callable = field(repr=False)
    mass: float = 0.0
    cost: float = 0.0


def optimal_velocity_profile(reduced: ReducedProfile, r: float) -> VelocityProfile:
    """Minimizer g(v) = (phi')^{-1}((lam_r - v^2/2)+) with lam_r = psi'(r)."""
    if r < 0:
        raise ValueError("density must be nonnegative")
    micro = reduced.micro
    if r == 0.0:
        return VelocityProfile(lam=0.0, v_max=0.0,
                               density=lambda v: np.zeros_like(np.asarray(v, float)),
                               mass=0.0, cost=0.0)
    lam = float(reduced.psi_prime(r))
    v_max = np.sqrt(2.0 * lam)

    def density(v):
        v = np.asarray(v, dtype=float)
        lev = np.clip(lam - 0.5 * v * v, 0.0, None)
        return micro.phi_prime_inv(lev)

    mass, _ = quad(lambda v: 2.0 * np.pi * v * float(density(v)), 0.0, v_max,
                   limit=200)
    cost, _ = quad(lambda v: 2.0 * np.pi * v * (0.5 * v * v * float(density(v))
                                                + float(micro.phi(density(v)))),
                   0.0, v_max, limit=200)
    return VelocityProfile(lam=lam, v_max=v_max, density=density,
                           mass=float(mass), cost=float(cost))


def psi_inverse_derivative(micro: MicroProfile, lam: float) -> float:
    """d/dlam of the inverse slope map, as a phase-area integral.

    Substituting u = lam - v^2/2 in 2*pi*int_0^sqrt(2 lam) v dv / phi''(...)
    gives 2*pi*int_0^lam du / phi''((phi')^{-1}(u)).  The endpoint
    singularity at u=0 is integrable whenever phi'' vanishes slower than
    linearly along the inverse slope; a divergent integral is reported, not
    truncated.
    """
    if lam <= 0:
        raise ValueError("multiplier must be positive")

    def integrand(u):
        d2 = float(micro.phi_second(micro.phi_prime_inv(u)))
        return 1.0 / d2

    val, abserr = quad(integrand, 0.0, lam, limit=400, full_output=False)
    if not np.isfinite(val) or abserr > 1e-7 * max(abs(val), 1.0):
        raise NoConvergence(
            "phase-area integral did not converge; the profile curvature "
            "vanishes too fast near zero",
            diagnostics={"value": val, "abserr": abserr, "lam": lam})
    return 2.0 * np.pi * val
