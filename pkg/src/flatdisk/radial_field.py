"""Radial grids, the in-plane potential operator, Coulomb energy, externals.

The potential of a razor-thin axisymmetric density evaluated in the plane is

    U(r) = -int rho(s) * 4 s / (s + r) * K(m) ds,    m = 4 r s / (r + s)^2,

with K the complete elliptic integral of the first kind, which carries a
logarithmic singularity at s = r.  Assembly splits each target row into a
band of near cells, where K's log asymptote and the 1/(s-r) pole of the
radial derivative are integrated exactly against a linear density
reconstruction, and a far field handled by 2-point Gauss subpoints with
cubic reconstruction.  The result is a dense matrix pair (A, B) with
U = A @ rho and dU/dr = B @ rho at the nodes.

Sign conventions: A and B already carry the attractive sign, so U <= 0 for
nonnegative sources and the Coulomb energy is D(rho, sigma) =
-(1/2) sum_i w_i rho_i U_sigma(r_i) >= 0.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.special import ellipe, ellipkm1

__all__ = [
    "RadialGrid",
    "RadialDensity",
    "RadialPotential",
    "ExternalDensity",
    "GridResolutionWarning",
    "disk_potential",
    "center_potential",
    "coulomb_energy",
    "lp_norm",
    "make_external",
    "C_HLS_DEFAULT",
]

# Diagnostic envelope for 2 D(rho,rho) <= C ||rho||_{4/3}^2.  The sharp
# planar constant for this kernel is 2*sqrt(pi) ~ 3.5449 (the uniform disk
# alone reaches 16/(3 sqrt(pi)) ~ 3.009), so 3.6 cannot produce false
# failures while still flagging broken quadrature.
C_HLS_DEFAULT = 3.6

BAND = 3   # half-width of the analytically integrated diagonal band


class GridResolutionWarning(UserWarning):
    """Singular-cell quadrature error estimate exceeded the tolerance."""


def _make_edges(n: int, r_max: float, mode: str, r_inner: Optional[float]):
    if mode == "uniform":
        return np.linspace(0.0, r_max, n + 1)
    if mode != "geometric":
        raise ValueError(f"unknown grid mode {mode!r}")
    if r_inner is None:
        r_inner = r_max / (8 * n)
    ratio = r_max / r_inner
    if ratio <= n:
        # geometric growth impossible without shrinking cells; fall back
        return np.linspace(0.0, r_max, n + 1)

    def excess(g):
        return np.expm1(n * np.log(g)) / (g - 1.0) - ratio

    g = brentq(excess, 1.0 + 1e-12, 2.0, xtol=5e-16)
    widths = r_inner * g ** np.arange(n)
    edges = np.concatenate([[0.0], np.cumsum(widths)])
    edges[-1] = r_max
    return edges


@dataclass(eq=False)
class RadialGrid:
    """Node/edge/weight triple for quadrature of int g(r) 2 pi r dr.

    Nodes are cell midpoints; weights are annulus areas, so a unit disk
    indicator aligned with an edge integrates to its area exactly.  The
    geometric mode grows cell widths geometrically from r_inner (default
    r_max / (8n)), keeping neighbor width ratios near 1 everywhere.

    Treat instances as immutable; the dense operator pair is built lazily
    on first use and cached.
    """

    mode: str
    n: int
    r_max: float
    r_inner: Optional[float] = None
    edges: np.ndarray = field(init=False, repr=False)
    nodes: np.ndarray = field(init=False, repr=False)
    widths: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 8:
            raise ValueError("need at least 8 cells")
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")
        self.edges = _make_edges(self.n, self.r_max, self.mode, self.r_inner)
        self.nodes = 0.5 * (self.edges[:-1] + self.edges[1:])
        self.widths = np.diff(self.edges)
        self.weights = np.pi * (self.edges[1:] ** 2 - self.edges[:-1] ** 2)
        self._ops = None
        self._sym = None

    @classmethod
    def make(cls, n: int = 512, r_max: float = 8.0, mode: str = "geometric",
             r_inner: Optional[float] = None) -> "RadialGrid":
        return cls(mode=mode, n=n, r_max=r_max, r_inner=r_inner)

    def operators(self):
        """Dense (A, B): U = A @ rho, dU/dr = B @ rho at the nodes."""
        if self._ops is None:
            A, B, Afar = _build_operators(self.edges, self.nodes, self.widths)
            self._ops = (A, B)
            self._afar = Afar
        return self._ops

    def symmetrized(self):
        """(Gs, Ahat): symmetric interaction form and its potential operator
        Ahat = diag(w)^-1 Gs.

        Gs is the quadratic form of the self-interaction energy; Ahat is
        the potential operator consistent with it, so the solver's energy
        and the probe's descent directions agree with the fixed point to
        interpolation accuracy.

        The banded singular part symmetrizes by plain averaging (adjacent
        cells, comparable weights, both rows accurate).  The far part is
        rebuilt as a Galerkin product rule: the symmetric ring-pair kernel
        evaluated at Gauss subpoint pairs, contracted with the same cubic
        reconstruction on both sides.  That form is symmetric entry by
        entry, and every term is a true kernel value, so no row has to
        absorb another row's interpolation spill.

        The innermost rows (node below 20 cell widths) are then replaced,
        and mirrored, by rows of true cell-pair interaction integrals:
        those cells carry the density peak at radii comparable to their
        own width, where averaged, reconstructed, or one-sided collocated
        reads disagree at the percent level, and any of those
        disagreements, divided by the tiny inner weights, wrecks the
        central potential profile.  Every replaced entry approximates the
        same symmetric pair quantity, so the mirror introduces no
        reciprocity error and Gs stays exactly symmetric.
        """
        if self._sym is None:
            A, _ = self.operators()
            W = self.weights
            Gb = W[:, None] * (A - self._afar)
            Gs = 0.5 * (Gb + Gb.T) + _galerkin_far(self.nodes, self.widths)
            cut = int(np.count_nonzero(self.nodes < 20.0 * self.widths))
            if cut:
                S = _special_rows(self.edges, cut)
                Gs[:cut, :] = -S
                Gs[:, :cut] = -S.T
            Ahat = Gs / W[:, None]
            self._sym = (Gs, Ahat)
        return self._sym

    def compatible(self, other: "RadialGrid") -> bool:
        return self is other or (self.n == other.n
                                 and np.array_equal(self.edges, other.edges))

    def to_json(self, path=None):
        doc = {"mode": self.mode, "n": self.n, "r_max": self.r_max}
        if self.r_inner is not None:
            doc["r_inner"] = self.r_inner
        if path is None:
            return doc
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        return doc

    @classmethod
    def from_json(cls, source) -> "RadialGrid":
        if isinstance(source, dict):
            doc = source
        else:
            with open(source) as fh:
                doc = json.load(fh)
        return cls(mode=doc["mode"], n=int(doc["n"]), r_max=float(doc["r_max"]),
                   r_inner=doc.get("r_inner"))


@dataclass(eq=False)
class RadialDensity:
    """Nonnegative surface density sampled at grid nodes."""

    grid: RadialGrid
    values: np.ndarray
    symmetric_decreasing: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.nodes.shape:
            raise ValueError("values must match the grid size")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density values must be finite")
        if np.any(self.values < 0):
            raise ValueError("density values must be nonnegative")
        if self.symmetric_decreasing:
            # tolerance scales with the peak: round-off wiggles are fine
            slack = 1e-12 * max(1.0, float(self.values.max(initial=0.0)))
            if np.any(np.diff(self.values) > slack):
                raise ValueError("flagged decreasing but values increase")

    @classmethod
    def from_callable(cls, grid: RadialGrid, fn: Callable,
                      symmetric_decreasing: bool = False) -> "RadialDensity":
        return cls(grid=grid, values=np.asarray(fn(grid.nodes), dtype=float),
                   symmetric_decreasing=symmetric_decreasing)

    @property
    def mass(self) -> float:
        return float(self.grid.weights @ self.values)

    def to_csv(self, path, comment: Optional[str] = None):
        with open(path, "w", newline="\n") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write("r,value\n")
            for r, v in zip(self.grid.nodes, self.values):
                fh.write(f"{float(r)!r},{float(v)!r}\n")

    @classmethod
    def from_csv(cls, path, grid: RadialGrid) -> "RadialDensity":
        data = np.loadtxt(path, delimiter=",", skiprows=1, comments="#", ndmin=2)
        if data.shape[0] != grid.n:
            raise ValueError("row count does not match the grid")
        return cls(grid=grid, values=data[:, 1])


@dataclass(eq=False)
class RadialPotential:
    """Potential and radial derivative at grid nodes (U <= 0 for sources)."""

    grid: RadialGrid
    values: np.ndarray
    dvalues: np.ndarray

    def to_csv(self, path, comment: Optional[str] = None):
        with open(path, "w", newline="\n") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write("r,value\n")
            for r, v in zip(self.grid.nodes, self.values):
                fh.write(f"{float(r)!r},{float(v)!r}\n")


# ---------------------------------------------------------------------------
# operator assembly

def _xlog(t):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = t * np.log(np.abs(t))
    return np.where(t == 0.0, 0.0, out)


def _int_lin_log(u, c):
    # antiderivative of (u - c) * (-ln|u|)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = -0.5 * u * u * np.log(np.abs(u))
    q = np.where(u == 0.0, 0.0, q)
    return q + 0.25 * u * u + c * (_xlog(u) - u)


def _fd_matrix(nodes):
    # first-derivative stencil on the nonuniform node set
    n = len(nodes)
    D = np.zeros((n, n))
    h = np.diff(nodes)
    for i in range(1, n - 1):
        hl, hr = h[i - 1], h[i]
        D[i, i - 1] = -hr / (hl * (hl + hr))
        D[i, i] = (hr - hl) / (hl * hr)
        D[i, i + 1] = hl / (hr * (hl + hr))
    D[0, 0], D[0, 1] = -1.0 / h[0], 1.0 / h[0]
    D[n - 1, n - 2], D[n - 1, n - 1] = -1.0 / h[-1], 1.0 / h[-1]
    return D


def _band_pieces(r, el, er, si):
    """Band-row coefficients for one target radius r against cells [el, er].

    Returns weights multiplying (rho_i, rho'_i) for the potential and
    ((s rho)_i evaluated via the pole terms, (s rho)'_i) for the derivative;
    the log pole of K and the 1/(s-r) pole are integrated exactly, smooth
    factors frozen at the cell node.
    """
    de = er - el
    Sig = si + r
    Del = si - r
    p = np.clip((Del / Sig) ** 2, 1e-300, None)
    with np.errstate(divide="ignore"):
        K_res = ellipkm1(p) - np.log(4.0 * Sig / np.maximum(np.abs(Del), 1e-300))
    K_res = np.where(p > 1e-280, K_res, 0.0)
    E = ellipe(np.clip(1.0 - p, 0.0, 1.0))
    ln4S = np.log(4.0 * Sig)
    ul, ur = el - r, er - r
    Lam = (ur - _xlog(ur)) - (ul - _xlog(ul))
    with np.errstate(divide="ignore"):
        Pv = np.log(np.abs(ur)) - np.log(np.abs(ul))
    c = si - r
    J2 = _int_lin_log(ur, c) - _int_lin_log(ul, c)
    Cpole = de + (r - si) * Pv

    Ksm = K_res + ln4S
    a0 = 4.0 * si / Sig * (de * Ksm + Lam) + 4.0 * r / Sig**2 * J2
    a1 = 4.0 * si / Sig * J2
    with np.errstate(divide="ignore", invalid="ignore"):
        H = (E - 1.0) / Del - Ksm / Sig
    H = np.where(np.abs(Del) < 1e-14 * Sig, -Ksm / Sig, H)
    b0 = si * (Pv + de * H - Lam / Sig + J2 / Sig**2)
    b1 = Cpole - J2 / Sig
    return a0, a1, b0, b1


def _band_pieces_quad(r, el, er, si):
    """Band-row potential coefficients by adaptive quadrature.

    The analytic pieces freeze the smooth part of K at the cell node,
    valid only when the whole band sits at s/r near 1.  The first few
    nodes of any grid violate that (r is about one cell width), so their
    rows integrate the true kernel instead.
    """
    def kernel(s):
        if s <= 0.0:
            return 0.0
        q = ((s - r) / (s + r)) ** 2
        if q < 1e-300:
            return 0.0
        return 4.0 * s / (s + r) * ellipkm1(q)

    a0 = np.empty_like(si)
    a1 = np.empty_like(si)
    for c in range(len(si)):
        pts = [r] if el[c] < r < er[c] else None
        a0[c], _ = quad(kernel, el[c], er[c], points=pts, limit=100)
        a1[c], _ = quad(lambda s: kernel(s) * (s - si[c]), el[c], er[c],
                        points=pts, limit=100)
    return a0, a1


def _subpoint_scheme(nodes, widths):
    """2-point Gauss subpoints per cell with the cubic reconstruction
    matrix mapping node values to subpoint values."""
    n = len(nodes)
    half = 0.5 * widths / np.sqrt(3.0)
    sq = np.empty(2 * n)
    sq[0::2] = nodes - half
    sq[1::2] = nodes + half
    wsub = np.repeat(0.5 * widths, 2)
    P = np.zeros((2 * n, n))
    for j in range(n):
        j0 = min(max(j - 1, 0), n - 4)
        xs = nodes[j0:j0 + 4]
        for a in range(2):
            x = sq[2 * j + a]
            for cc in range(4):
                L = 1.0
                for d in range(4):
                    if d != cc:
                        L *= (x - xs[d]) / (xs[cc] - xs[d])
                P[2 * j + a, j0 + cc] = L
    return sq, wsub, P


def _pair_kernel(x, y):
    # ring-ring interaction energy density, symmetric in its arguments
    q = ((x - y) / (x + y)) ** 2
    return 8.0 * np.pi * x * y / (x + y) * ellipkm1(np.clip(q, 1e-300, None))


def _galerkin_far(nodes, widths):
    """Symmetric far-pair energy form: ring-pair kernel at subpoint pairs,
    contracted with the cubic reconstruction on both coordinates.  Pairs
    of cells inside the band distance are excluded (the banded singular
    rows cover them)."""
    n = len(nodes)
    sq, wsub, P = _subpoint_scheme(nodes, widths)
    x = sq[:, None]
    y = sq[None, :]
    cell = np.repeat(np.arange(n), 2)
    far = np.abs(cell[:, None] - cell[None, :]) > BAND
    K2 = np.where(far, _pair_kernel(x, y), 0.0)
    M = wsub[:, None] * P
    return -(M.T @ K2 @ M)


def _diag_pair(edges, i):
    """Self-interaction of one cell.

    Reduced to 1-D in the separation u = x - y; the kernel's log(u)
    diagonal is pulled out and integrated exactly against a polynomial
    fit of its smooth prefactor, Gauss quadrature handles the rest.
    Adaptive nested quadrature gives the same digits at ~1000x the cost.
    """
    a, b = edges[i], edges[i + 1]
    d = b - a
    gx8, gw8 = np.polynomial.legendre.leggauss(8)

    def slab(u):
        # integrate over x at fixed separation, kernel split as
        # c*(log(4s) + resid) - c*log(u) with s = x + y
        lo = a + u
        xs = 0.5 * (lo + b) + 0.5 * (b - lo) * gx8
        ws = 0.5 * (b - lo) * gw8
        s = 2.0 * xs - u
        c = 8.0 * np.pi * xs * (xs - u) / s
        p = np.clip((u / s) ** 2, 1e-300, None)
        resid = ellipkm1(p) + 0.5 * np.log(p) - np.log(4.0)
        return (float(np.sum(ws * c * (np.log(4.0 * s) + resid))),
                float(np.sum(ws * c)))

    gx16, gw16 = np.polynomial.legendre.leggauss(16)
    us = 0.5 * d * (1.0 + gx16)
    smooth = sum(0.5 * d * w * slab(u)[0] for u, w in zip(us, gw16))
    k = np.arange(15)
    tau = 0.5 * (1.0 - np.cos(np.pi * (k + 0.5) / 15))
    hv = np.array([slab(t * d)[1] for t in tau])
    coef = np.polynomial.polynomial.polyfit(tau, hv, 14)
    log_part = d * np.log(d) * np.dot(coef, 1.0 / (k + 1.0))
    log_part += d * np.dot(coef, -1.0 / (k + 1.0) ** 2)
    return 2.0 * (smooth - log_part)


def _pair_quad(edges, i, j):
    """Cell-pair interaction integral by adaptive quadrature.

    Integral of the ring-pair kernel over cell i x cell j, the inner
    integral split at the kernel's logarithmic diagonal.  Tolerances are
    relative: at the innermost radii the absolute scale is far below any
    fixed epsabs.
    """
    xl, xr = edges[i], edges[i + 1]
    yl, yr = edges[j], edges[j + 1]

    def inner(x):
        if yl < x < yr:
            lo, _ = quad(lambda y: _pair_kernel(x, y), yl, x,
                         epsabs=0.0, epsrel=1e-11, limit=100)
            hi, _ = quad(lambda y: _pair_kernel(x, y), x, yr,
                         epsabs=0.0, epsrel=1e-11, limit=100)
            return lo + hi
        val, _ = quad(lambda y: _pair_kernel(x, y), yl, yr,
                      epsabs=0.0, epsrel=1e-11, limit=100)
        return val

    with warnings.catch_warnings():
        # roundoff-limited convergence near the diagonal is expected and
        # still leaves ~1e-9 relative accuracy (checked against dblquad)
        warnings.simplefilter("ignore", IntegrationWarning)
        val, _ = quad(inner, xl, xr, epsabs=0.0, epsrel=1e-9, limit=100)
    return val


def _special_rows(edges, cut):
    """Symmetric interaction coefficients for the innermost rows.

    Row i < cut gets, for every column j, an approximation of the same
    symmetric quantity S_ij = integral of the ring-pair kernel over cell
    i x cell j: adaptive quadrature through the near-diagonal block where
    the kernel is singular or steep, a 4-point tensor Gauss rule beyond.
    Because each entry depends only on the unordered cell pair, mirroring
    these rows into a symmetric matrix cannot create reciprocity error,
    and a row read divides by the cell mass-weight to give the
    mass-weighted cell average of the potential.  The innermost cells
    carry the density peak at radii comparable to their own width, where
    collocated or reconstructed quadratures disagree at the percent
    level; that disagreement, amplified by the tiny inner weights, is
    what these rows exist to avoid.
    """
    n = len(edges) - 1
    hi = min(cut + BAND + 1, n)
    rows = np.zeros((cut, n))
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    # log-split rule on the diagonal, adaptive quadrature for the
    # edge-sharing neighbours; both see the kernel singularity
    for i in range(cut):
        rows[i, i] = _diag_pair(edges, i)
        j = i + 1
        if j < min(hi, n):
            v = _pair_quad(edges, i, j)
            rows[i, j] = v
            if j < cut:
                rows[j, i] = v
    # an 8-point tensor Gauss rule is ample once a full cell separates
    # the pair (the kernel is analytic there, even at the origin)
    gx8, gw8 = np.polynomial.legendre.leggauss(8)
    for i in range(cut):
        cols = np.arange(i + 2, hi)
        if cols.size == 0:
            continue
        xs = mid[i] + half[i] * gx8
        wx = half[i] * gw8
        ys = (mid[cols, None] + half[cols, None] * gx8[None, :]).ravel()
        wy = (half[cols, None] * gw8[None, :]).ravel()
        contrib = ((wx @ _pair_kernel(xs[:, None], ys[None, :])) * wy)
        vals = contrib.reshape(cols.size, 8).sum(axis=1)
        rows[i, cols] = vals
        inner_cols = cols[cols < cut]
        rows[inner_cols, i] = vals[:inner_cols.size]
    if hi < n:
        gx, gw = np.polynomial.legendre.leggauss(4)
        ys = (mid[hi:, None] + half[hi:, None] * gx[None, :]).ravel()
        wy = (half[hi:, None] * gw[None, :]).ravel()
        for i in range(cut):
            xs = mid[i] + half[i] * gx
            wx = half[i] * gw
            K = _pair_kernel(xs[:, None], ys[None, :])
            contrib = (wx @ K) * wy
            rows[i, hi:] = contrib.reshape(n - hi, 4).sum(axis=1)
    return rows


def _build_operators(edges, nodes, widths):
    n = len(nodes)
    Dm = _fd_matrix(nodes)
    DmS = Dm * nodes[None, :]
    A = np.zeros((n, n))
    B = np.zeros((n, n))

    for i in range(n):
        lo, hi = max(0, i - BAND), min(n, i + BAND + 1)
        el, er, si = edges[lo:hi], edges[lo + 1:hi + 1], nodes[lo:hi]
        r = nodes[i]
        a0, a1, b0, b1 = _band_pieces(r, el, er, si)
        if r < 10.0 * widths[i]:
            a0, a1 = _band_pieces_quad(r, el, er, si)
        A[i, lo:hi] += a0
        B[i, lo:hi] += b0 / r
        A[i, :] += a1 @ Dm[lo:hi, :]
        B[i, :] += (b1 / r) @ DmS[lo:hi, :]

    # far field rows: 2-point Gauss subpoints, cubic reconstruction
    sq, wsub, P = _subpoint_scheme(nodes, widths)
    r_col = nodes[:, None]
    s_row = sq[None, :]
    Sig = s_row + r_col
    Del = s_row - r_col
    m = 4.0 * s_row * r_col / Sig**2
    p = np.clip(1.0 - m, 1e-300, None)
    K = ellipkm1(p)
    E = ellipe(m)
    kerA = 4.0 * s_row / Sig * K
    with np.errstate(divide="ignore", invalid="ignore"):
        kerB = (s_row / r_col) * (E / Del - K / Sig)
    mask = np.zeros((n, 2 * n), dtype=bool)
    for i in range(n):
        lo, hi = max(0, i - BAND), min(n, i + BAND + 1)
        mask[i, 2 * lo:2 * hi] = True
    kerA[mask] = 0.0
    kerB[mask] = 0.0
    Afar = -((kerA * wsub[None, :]) @ P)
    A = -A + Afar
    B = -2.0 * (B + (kerB * wsub[None, :]) @ P)

    return A, B, Afar


def center_potential(rho: RadialDensity) -> float:
    """U(0) = -2 pi int rho dr, exact for node-sampled densities."""
    return float(-2.0 * np.pi * rho.grid.widths @ rho.values)


def _coarseness_estimate(grid: RadialGrid, values: np.ndarray) -> float:
    # crude singular-cell error proxy: local second difference of rho
    # against the h^2 log h weight of the diagonal block
    if grid.n < 3:
        return 0.0
    d2 = np.abs(np.diff(values, 2))
    w = grid.widths[1:-1]
    return float(np.max(d2 * w * w * (1.0 + np.abs(np.log(w)))))


def disk_potential(rho: RadialDensity, grid: Optional[RadialGrid] = None,
                   tol: float = 1e-4) -> RadialPotential:
    """Potential and radial derivative of an axisymmetric planar density.

    Uses the banded singular quadrature described in the module docstring.
    Emits GridResolutionWarning when the singular-cell error estimate
    exceeds tol relative to the potential scale.
    """
    if grid is None:
        grid = rho.grid
    elif not grid.compatible(rho.grid):
        raise ValueError("grid mismatch between density and request")
    A, B = grid.operators()
    U = A @ rho.values
    dU = B @ rho.values
    scale = 1.0 + float(np.max(np.abs(U), initial=0.0))
    est = _coarseness_estimate(grid, rho.values)
    if est > tol * scale:
        warnings.warn(
            f"grid too coarse near the kernel singularity "
            f"(error estimate {est:.2e} vs tolerance {tol * scale:.2e})",
            GridResolutionWarning, stacklevel=2)
    return RadialPotential(grid=grid, values=U, dvalues=dU)


def coulomb_energy(rho: RadialDensity, sigma: RadialDensity) -> float:
    """D(rho, sigma) = (1/2) double integral rho(x) sigma(y) / |x - y|.

    Evaluated through the symmetrized quadratic form, so symmetry in the
    arguments and bilinearity hold to round-off.
    """
    if not rho.grid.compatible(sigma.grid):
        raise ValueError("grid mismatch between densities")
    Gs, _ = rho.grid.symmetrized()
    return float(-0.5 * rho.values @ (Gs @ sigma.values))


def lp_norm(rho: RadialDensity, p: float) -> float:
    if p < 1:
        raise ValueError("p must be at least 1")
    return float((rho.grid.weights @ rho.values**p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# external densities

@dataclass(eq=False)
class ExternalDensity:
    """Fixed background surface density with its potential.

    Closed forms are attached where available (kuzmin, none); otherwise the
    potential is assembled once per grid through disk_potential and cached.
    Instances validate strict symmetric decrease wherever the density is
    positive.
    """

    kind: str
    params: dict
    rho_fn: Callable = field(repr=False)
    potential_fn: Optional[Callable] = field(repr=False, default=None)
    force_fn: Optional[Callable] = field(repr=False, default=None)
    mass: float = 0.0

    def __post_init__(self):
        self._cache = {}

    def rho_values(self, grid: RadialGrid) -> np.ndarray:
        return np.asarray(self.rho_fn(grid.nodes), dtype=float)

    def _grid_eval(self, grid: RadialGrid):
        key = id(grid)
        if key not in self._cache:
            vals = self.rho_values(grid)
            pot = disk_potential(RadialDensity(grid=grid, values=vals))
            self._cache[key] = (pot.values, pot.dvalues)
        return self._cache[key]

    def potential_values(self, grid: RadialGrid) -> np.ndarray:
        if self.potential_fn is not None:
            return np.asarray(self.potential_fn(grid.nodes), dtype=float)
        return self._grid_eval(grid)[0]

    def force_values(self, grid: RadialGrid) -> np.ndarray:
        """dU_ext/dr at the nodes."""
        if self.force_fn is not None:
            return np.asarray(self.force_fn(grid.nodes), dtype=float)
        return self._grid_eval(grid)[1]

    def potential(self, r, grid: Optional[RadialGrid] = None):
        """U_ext at arbitrary radii; grid interpolation with monopole tail
        when no closed form exists."""
        r = np.asarray(r, dtype=float)
        if self.potential_fn is not None:
            return self.potential_fn(r)
        if grid is None:
            raise ValueError(f"{self.kind} external needs a grid to evaluate "
                             "off-node potentials")
        U = self._grid_eval(grid)[0]
        out = np.interp(r, grid.nodes, U)
        far = r > grid.nodes[-1]
        if np.any(far):
            out = np.where(far, -self.mass / np.maximum(r, 1e-300), out)
        return out

    def radial_force(self, r, grid: Optional[RadialGrid] = None):
        """dU_ext/dr at arbitrary radii (same fallback rules as potential)."""
        r = np.asarray(r, dtype=float)
        if self.force_fn is not None:
            return self.force_fn(r)
        if grid is None:
            raise ValueError(f"{self.kind} external needs a grid to evaluate "
                             "off-node forces")
        dU = self._grid_eval(grid)[1]
        out = np.interp(r, grid.nodes, dU)
        far = r > grid.nodes[-1]
        if np.any(far):
            out = np.where(far, self.mass / np.maximum(r, 1e-300) ** 2, out)
        return out

    def lq_diagnostics(self, grid: RadialGrid, qs=(2.0, 3.0, 4.0)) -> dict:
        """Grid L^q norms; q = p/(p-1) for p in (1,2) spans (2, inf), so a
        few representative values are reported instead of picking one p."""
        dens = RadialDensity(grid=grid, values=self.rho_values(grid))
        out = {f"L{q:g}": lp_norm(dens, q) for q in qs}
        out["L4/3"] = lp_norm(dens, 4.0 / 3.0)
        return out


def _as_pair(params, names):
    if isinstance(params, dict):
        vals = [params[k] for k in names]
    else:
        vals = list(params)
    if len(vals) != len(names):
        raise ValueError(f"expected parameters {names}")
    vals = [float(v) for v in vals]
    if any(v <= 0 for v in vals):
        raise ValueError("external parameters must be positive")
    return vals


def make_external(kind: str, params=None) -> Optional[ExternalDensity]:
    """Catalog constructor: none, kuzmin(M, a), gaussian(M, w), tabulated.

    Returns None for kind 'none' (call sites treat missing externals and
    'none' identically).  Tabulated input is a (r, rho) table, validated
    strictly decreasing wherever positive.
    """
    if kind in (None, "none"):
        return None
    if kind == "kuzmin":
        M, a = _as_pair(params, ("M", "a"))

        def rho_fn(r):
            return M * a / (2.0 * np.pi * (np.asarray(r, float) ** 2 + a * a) ** 1.5)

        def potential_fn(r):
            return -M / np.sqrt(np.asarray(r, float) ** 2 + a * a)

        def force_fn(r):
            r = np.asarray(r, float)
            return M * r / (r * r + a * a) ** 1.5

        return ExternalDensity(kind=kind, params={"M": M, "a": a}, rho_fn=rho_fn,
                               potential_fn=potential_fn, force_fn=force_fn,
                               mass=M)
    if kind == "gaussian":
        M, w = _as_pair(params, ("M", "w"))

        def rho_fn(r):
            r = np.asarray(r, float)
            return M / (2.0 * np.pi * w * w) * np.exp(-0.5 * (r / w) ** 2)

        return ExternalDensity(kind=kind, params={"M": M, "w": w}, rho_fn=rho_fn,
                               mass=M)
    if kind == "tabulated":
        r_tab = np.asarray(params["r"], dtype=float)
        v_tab = np.asarray(params["rho"], dtype=float)
        if np.any(v_tab < 0):
            raise ValueError("tabulated density must be nonnegative")
        pos = v_tab > 0
        if np.any(np.diff(v_tab[pos]) >= 0):
            raise ValueError("tabulated density must be strictly decreasing "
                             "where positive")
        interp = PchipInterpolator(r_tab, v_tab, extrapolate=False)

        def rho_fn(r):
            out = interp(np.asarray(r, float))
            return np.nan_to_num(np.clip(out, 0.0, None))

        # mass via trapezoid on the table's own resolution
        mass = float(np.trapz(2.0 * np.pi * r_tab * v_tab, r_tab))
        return ExternalDensity(kind=kind, params={"r": r_tab, "rho": v_tab},
                               rho_fn=rho_fn, mass=mass)
    raise ValueError(f"unknown external kind {kind!r}")
