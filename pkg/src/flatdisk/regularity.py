"""Grid-scale surrogates for continuity, smoothing, and Holder bounds.

Function-space statements do not survive discretization literally, so the
checks here are refinement studies with explicit thresholds: a quantity is
accepted when it stabilizes (or shrinks) as the grid resolves, and the raw
numbers ride along in the report.  Sobolev and Holder norms are replaced
by finite-difference Lp norms and pairwise difference quotients at matched
resolutions.

The potential operator gains one derivative: the field of a merely
bounded, even discontinuous, density has a stable first-derivative norm
(smoothing_check), and the radial derivative of a solved state's
potential has a finite Holder seminorm at exponent 1 - n/2
(holder_seminorm).  In frequency space the operator acts as
multiplication by -2*pi/|xi| (fourier_symbol_check), which is where both
statements come from.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import j0

from .errors import PropertyViolation
from .radial_field import (RadialDensity, RadialGrid, disk_potential,
                           lp_norm)
from .variational import SolverOptions, SteadyState, solve_steady_state

__all__ = [
    "SmoothingVerdict", "HolderEstimate", "SymbolVerdict", "ContinuityRow",
    "RegularityReport", "l4n_norm", "l4n_bound_ratio", "smoothing_check",
    "pairwise_holder", "holder_seminorm", "fourier_symbol_check",
    "continuity_table", "regularity_report",
]


# ---------------------------------------------------------------------------
# report rows

@dataclass(frozen=True)
class SmoothingVerdict:
    verdict: str                      # PASS or FAIL
    p: float
    resolutions: tuple
    derivative_norms: tuple           # ||dU/dr||_p per resolution
    second_derivative_norms: tuple
    variation: float                  # relative change across finest pair

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_json_dict(self) -> dict:
        return {"verdict": self.verdict, "p": self.p,
                "resolutions": list(self.resolutions),
                "derivative_norms": list(self.derivative_norms),
                "second_derivative_norms": list(self.second_derivative_norms),
                "variation": self.variation}


@dataclass(frozen=True)
class HolderEstimate:
    exponent: float
    resolutions: tuple
    estimates: tuple                  # seminorm estimate per resolution
    growth: float                     # worst relative growth on refinement
    band: tuple                       # (r_lo, r_hi) of the pair window
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_json_dict(self) -> dict:
        return {"exponent": self.exponent,
                "resolutions": list(self.resolutions),
                "estimates": list(self.estimates), "growth": self.growth,
                "band": list(self.band), "verdict": self.verdict}


@dataclass(frozen=True)
class SymbolVerdict:
    verdict: str                      # PASS, FAIL, SKIPPED, ILL_CONDITIONED
    band: tuple
    max_rel_err: float
    frequencies: tuple = ()
    ratios: tuple = ()

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_json_dict(self) -> dict:
        return {"verdict": self.verdict, "band": list(self.band),
                "max_rel_err": self.max_rel_err,
                "frequencies": list(self.frequencies),
                "ratios": list(self.ratios)}


@dataclass(frozen=True)
class ContinuityRow:
    n_nodes: int
    max_jump: float                   # max node-to-node change of U
    max_width: float


@dataclass(frozen=True)
class RegularityReport:
    l4n: Optional[float]
    l4n_ratio: Optional[float]
    exponent_target: float
    continuity: tuple                 # ContinuityRow per resolution
    holder: HolderEstimate
    smoothing: SmoothingVerdict
    symbol: SymbolVerdict

    def to_json_dict(self) -> dict:
        return {
            "l4n": self.l4n, "l4n_ratio": self.l4n_ratio,
            "exponent_target": self.exponent_target,
            "continuity": [{"n_nodes": c.n_nodes, "max_jump": c.max_jump,
                            "max_width": c.max_width}
                           for c in self.continuity],
            "holder": self.holder.to_json_dict(),
            "smoothing": self.smoothing.to_json_dict(),
            "symbol": self.symbol.to_json_dict(),
        }


# ---------------------------------------------------------------------------
# density integrability gain

def l4n_norm(source: Union[SteadyState, RadialDensity],
             n: Optional[float] = None) -> float:
    """L^{4/n} norm of the spatial density.

    For a solved state the exponent comes from its profile; a bare density
    needs n passed explicitly.
    """
    if isinstance(source, SteadyState):
        rho = source.rho0
        n = source.reduced.n if n is None else n
    else:
        rho = source
    if n is None:
        raise ValueError("exponent n required (tabulated profiles carry none)")
    if not (0.0 < n < 4.0):
        raise ValueError(f"need 0 < n < 4 for an L^(4/n) norm, got n={n}")
    value = lp_norm(rho, 4.0 / n)
    if not np.isfinite(value):
        raise PropertyViolation(f"L^(4/n) norm not finite: {value}")
    return value


def l4n_bound_ratio(state: SteadyState) -> float:
    """Ratio of int rho^(4/n) to int (psi'(rho))^4 on the support.

    The integrability gain rests on the density being a power of the
    multiplier slope; for the closed polytrope family the ratio is the
    exact constant c_n^(4/n), so a drift flags quadrature or profile bugs.
    """
    n = state.reduced.n
    if n is None:
        raise ValueError("bound ratio needs a single-exponent profile")
    rho = state.rho0.values
    W = state.grid.weights
    pos = rho > 0
    num = float(W[pos] @ rho[pos] ** (4.0 / n))
    slopes = np.asarray(state.reduced.psi_prime(rho[pos]), dtype=float)
    den = float(W[pos] @ slopes ** 4)
    return num / den


# ---------------------------------------------------------------------------
# one-derivative smoothing

def _as_callable(rho) -> Callable:
    if callable(rho):
        return rho
    grid, vals = rho.grid, rho.values

    def fn(r):
        return np.interp(np.asarray(r, dtype=float), grid.nodes, vals,
                         left=vals[0], right=0.0)

    return fn


def smoothing_check(rho, p: float = 2.0, r_max: float = 4.0,
                    base_n: int = 128) -> SmoothingVerdict:
    """Refinement study of ||dU/dr||_p for a possibly rough density.

    Computes the potential of rho at three resolutions and the Lp norm of
    its finite-difference radial derivative.  PASS when the norm moves
    less than 5% between the two finest grids, which is the observable
    trace of the operator returning one more derivative than it is fed.
    """
    fn = _as_callable(rho)
    resolutions = (base_n, 2 * base_n, 4 * base_n)
    d1 = []
    d2 = []
    for m in resolutions:
        grid = RadialGrid.make(n=m, r_max=r_max, mode="uniform")
        dens = RadialDensity(grid=grid,
                             values=np.clip(np.asarray(fn(grid.nodes),
                                                       dtype=float), 0.0,
                                            None))
        pot = disk_potential(dens)
        du = np.gradient(pot.values, grid.nodes)
        ddu = np.gradient(du, grid.nodes)
        d1.append(float((grid.weights @ np.abs(du) ** p) ** (1.0 / p)))
        d2.append(float((grid.weights @ np.abs(ddu) ** p) ** (1.0 / p)))
    scale = max(abs(d1[-1]), 1e-300)
    variation = abs(d1[-1] - d1[-2]) / scale
    verdict = "PASS" if variation < 0.05 else "FAIL"
    return SmoothingVerdict(verdict=verdict, p=p, resolutions=resolutions,
                            derivative_norms=tuple(d1),
                            second_derivative_norms=tuple(d2),
                            variation=variation)


# ---------------------------------------------------------------------------
# Holder seminorm of dU/dr

def pairwise_holder(nodes: np.ndarray, values: np.ndarray, lo: float,
                    hi: float, exponent: float,
                    separations: np.ndarray) -> float:
    """Sup of |v(r1)-v(r2)| / |r1-r2|^exponent over sampled node pairs.

    Pairs start in [lo, hi] and reach across each requested separation to
    the nearest node; actual node distances enter the quotient.
    """
    sel = np.flatnonzero((nodes >= lo) & (nodes <= hi))
    if sel.size < 2:
        return 0.0
    if sel.size > 64:
        sel = sel[np.linspace(0, sel.size - 1, 64).astype(int)]
    best = 0.0
    for i in sel:
        targets = nodes[i] + separations
        j = np.searchsorted(nodes, targets)
        j = np.clip(j, 0, len(nodes) - 1)
        gap = np.abs(nodes[j] - nodes[i])
        ok = gap > 0
        if not np.any(ok):
            continue
        quot = np.abs(values[j[ok]] - values[i]) / gap[ok] ** exponent
        best = max(best, float(quot.max()))
    return best


def _resolved_family(state: SteadyState, refine: Sequence[int]):
    """Re-solve the state's problem at scaled resolutions on its grid span."""
    base = max(state.grid.n // 2, 64)
    r_max = float(state.grid.edges[-1])
    profile = state.micro if state.micro.kind == "polytrope" else state.reduced
    family = []
    for f in refine:
        m = int(base * f)
        grid = RadialGrid.make(n=m, r_max=r_max, mode="geometric")
        family.append(solve_steady_state(profile, state.M,
                                         external=state.external, grid=grid))
    return family


def holder_seminorm(state: SteadyState, exponent: Optional[float] = None,
                    refine: Sequence[int] = (1, 2, 4)) -> HolderEstimate:
    """Holder seminorm estimate for dU/dr at exponent 1 - n/2.

    Re-solves the state at increasing resolution and takes the pairwise
    sup over the support region, separations spanning two decades below
    the support radius.  PASS when the estimate grows by less than 25%
    per refinement; growth beyond that means the quotient is still
    resolving, i.e. no finite seminorm is in evidence.
    """
    n = state.reduced.n
    if exponent is None:
        if n is None:
            raise ValueError("exponent required for tabulated profiles")
        exponent = 1.0 - n / 2.0
    if not (0.0 < exponent < 1.0):
        raise ValueError(f"Holder exponent must lie in (0, 1), got {exponent}")
    family = _resolved_family(state, refine)
    lo, hi = 0.0, 2.0 * state.R0
    seps = state.R0 * np.geomspace(0.01, 1.0, 9)
    estimates = []
    for st in family:
        du = np.gradient(st.u_total, st.grid.nodes)
        estimates.append(pairwise_holder(st.grid.nodes, du, lo, hi,
                                         exponent, seps))
    if not all(np.isfinite(estimates)):
        raise PropertyViolation("Holder seminorm estimate not finite")
    growth = 0.0
    for a, b in zip(estimates, estimates[1:]):
        growth = max(growth, (b - a) / max(abs(a), 1e-300))
    verdict = "PASS" if growth < 0.25 else "FAIL"
    return HolderEstimate(exponent=float(exponent),
                          resolutions=tuple(st.grid.n for st in family),
                          estimates=tuple(map(float, estimates)),
                          growth=float(growth), band=(lo, hi),
                          verdict=verdict)


# ---------------------------------------------------------------------------
# frequency-side check

def _hankel(weights, nodes, values, xi):
    return np.array([float(weights @ (values * j0(x * nodes))) for x in xi])


def fourier_symbol_check(rho: RadialDensity, band=(0.5, 2.0),
                         n_freq: int = 16, n_nodes: int = 2048,
                         r_max: float = 200.0) -> SymbolVerdict:
    """Check that the transform ratio of U to rho matches -2*pi/|xi|.

    Both transforms are order-zero radial (Bessel J0) quadratures on a
    wide uniform grid.  The potential's slow -M/r tail would wreck a
    truncated transform, so it is split off and transformed in closed
    form; the remainder decays fast enough to integrate.  Intended for
    smooth, rapidly decaying densities.
    """
    fn = _as_callable(rho)
    grid = RadialGrid.make(n=n_nodes, r_max=r_max, mode="uniform")
    vals = np.clip(np.asarray(fn(grid.nodes), dtype=float), 0.0, None)
    if not np.any(vals > 0):
        return SymbolVerdict(verdict="SKIPPED", band=tuple(band),
                             max_rel_err=0.0)
    dens = RadialDensity(grid=grid, values=vals)
    mass = dens.mass
    pot = disk_potential(dens)
    xi = np.geomspace(band[0], band[1], n_freq)
    rho_hat = _hankel(grid.weights, grid.nodes, vals, xi)
    if np.min(np.abs(rho_hat)) < 1e-9 * mass:
        return SymbolVerdict(verdict="ILL_CONDITIONED", band=tuple(band),
                             max_rel_err=float("nan"),
                             frequencies=tuple(xi),
                             ratios=tuple(rho_hat))
    # subtract the monopole tail; its transform is -2 pi M / xi exactly
    reg = pot.values + mass / grid.nodes
    u_hat = _hankel(grid.weights, grid.nodes, reg, xi) - 2.0 * np.pi * mass / xi
    ratio = u_hat / rho_hat
    target = -2.0 * np.pi / xi
    err = float(np.max(np.abs(ratio - target) / np.abs(target)))
    verdict = "PASS" if err < 0.01 else "FAIL"
    return SymbolVerdict(verdict=verdict, band=tuple(band), max_rel_err=err,
                         frequencies=tuple(xi), ratios=tuple(ratio))


# ---------------------------------------------------------------------------
# continuity of U under refinement

def _continuity_rows(family) -> tuple:
    rows = []
    for st in family:
        jump = float(np.max(np.abs(np.diff(st.u_total))))
        rows.append(ContinuityRow(n_nodes=st.grid.n, max_jump=jump,
                                  max_width=float(st.grid.widths.max())))
    return tuple(rows)


def continuity_table(state: SteadyState,
                     refine: Sequence[int] = (1, 2, 4)) -> tuple:
    """Max node-to-node jump of U per resolution; shrinks with spacing."""
    return _continuity_rows(_resolved_family(state, refine))


def regularity_report(state: SteadyState, p: float = 2.0,
                      refine: Sequence[int] = (1, 2, 4)) -> RegularityReport:
    """Full desk-scale regularity study of a solved state.

    One family of re-solves feeds both the continuity table and the
    Holder estimate; the smoothing check runs on the state's own density
    and the symbol check on a unit Gaussian (the symbol does not depend
    on the source).
    """
    n = state.reduced.n
    exponent = 1.0 - n / 2.0 if n is not None else 0.25
    if n is not None and 1.0 < n < 2.0 and not (0.0 < exponent < 0.5):
        raise PropertyViolation(
            f"exponent target {exponent} outside (0, 1/2) at n={n}")
    family = _resolved_family(state, refine)
    continuity = _continuity_rows(family)
    lo, hi = 0.0, 2.0 * state.R0
    seps = state.R0 * np.geomspace(0.01, 1.0, 9)
    estimates = []
    for st in family:
        du = np.gradient(st.u_total, st.grid.nodes)
        estimates.append(pairwise_holder(st.grid.nodes, du, lo, hi,
                                         exponent, seps))
    growth = 0.0
    for a, b in zip(estimates, estimates[1:]):
        growth = max(growth, (b - a) / max(abs(a), 1e-300))
    holder = HolderEstimate(exponent=float(exponent),
                            resolutions=tuple(st.grid.n for st in family),
                            estimates=tuple(map(float, estimates)),
                            growth=float(growth), band=(lo, hi),
                            verdict="PASS" if growth < 0.25 else "FAIL")

    r_span = 6.0 * state.R0
    smoothing = smoothing_check(state.rho0, p=p, r_max=r_span)

    def gauss(r):
        return np.exp(-0.5 * np.asarray(r, dtype=float) ** 2) / (2.0 * np.pi)

    ref_grid = RadialGrid.make(n=256, r_max=12.0, mode="uniform")
    symbol = fourier_symbol_check(
        RadialDensity(grid=ref_grid, values=gauss(ref_grid.nodes)))
    try:
        l4n = l4n_norm(state)
        ratio = l4n_bound_ratio(state)
    except ValueError:
        l4n, ratio = None, None
    return RegularityReport(l4n=l4n, l4n_ratio=ratio,
                            exponent_target=float(exponent),
                            continuity=continuity, holder=holder,
                            smoothing=smoothing, symbol=symbol)
