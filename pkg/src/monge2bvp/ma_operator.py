"""Discrete subdifferential cells, R-curvature masses and target masses."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .geometry import (
    EMPTY,
    UNBOUNDED,
    Density,
    HalfPlane,
    Polygon,
    Region,
    _clean,
    clip_polygon,
    integrate_density,
    intersect_half_planes,
)
from .lattice import Grid, Layout, PartitionCell, Stencil, StencilError, build_partition, extension_mask
from .quadrature import triangle_rule

log = logging.getLogger(__name__)

MASS_TOL = 1e-6


class IncompatibleDataError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class SubdiffCell:
    site: tuple[int, int]
    cell: Polygon | Region
    mass: float


@dataclass
class ProblemData:
    """Everything the discrete equation needs on one grid.

    ``masses[k]`` is the prescribed mass of grid site ``k``; they sum to the
    integral of ``target_R`` over ``target_polygon``.
    """

    grid: Grid
    source_f: Density
    target_R: Density
    omega_star: Polygon
    target_polygon: Polygon
    epsilon: float
    partition: list[PartitionCell]
    masses: np.ndarray
    quadrature_order: int = 5
    target_mass: float = 0.0
    mass_scale: float = 1.0
    eps_reg: float = 0.0
    dilation: float = 1.0
    base_polygon: Polygon | None = field(default=None, repr=False)

    def mass_at(self, ij) -> float:
        return float(self.masses[self.grid.slot[(int(ij[0]), int(ij[1]))]])


def subdifferential_cell(fn, x, stencil: Stencil) -> Polygon | Region:
    """``{p : p . (h e) >= fn(x) - fn(x - h e) for e in V}`` at lattice index ``x``."""
    h = fn.grid.h
    i, j = int(x[0]), int(x[1])
    ux = fn((i, j))
    hps = [HalfPlane((float(a), float(b)), (ux - fn((i - a, j - b))) / h) for a, b in stencil]
    cell = intersect_half_planes(hps)
    if cell is UNBOUNDED:
        raise StencilError("unbounded subdifferential cell: the stencil violates its invariants")
    return cell


def r_curvature(fn, x, stencil: Stencil, R: Density, order=5) -> float:
    return integrate_density(subdifferential_cell(fn, x, stencil), R, order)


def subdiff_cells(fn, stencil: Stencil, R: Density, order=5) -> list[SubdiffCell]:
    out = []
    for ij in map(tuple, fn.grid.index.tolist()):
        cell = subdifferential_cell(fn, ij, stencil)
        out.append(SubdiffCell(ij, cell, integrate_density(cell, R, order)))
    return out


def epsilon_correction(f: Density, R: Density, omega_star: Polygon, k_star: Polygon, order=5,
                       domain: Polygon | None = None) -> float:
    """Fraction of source mass that the polygon ``k_star`` cannot receive."""
    domain = domain if domain is not None else f.support
    if domain is None:
        raise ValueError("source density needs a support polygon (the domain)")
    total_f = integrate_density(domain, f, order)
    if not total_f > 0.0:
        raise IncompatibleDataError("the source density must have positive total mass")
    missing = integrate_density(omega_star, R, order) - integrate_density(k_star, R, order)
    eps = missing / total_f
    if abs(eps) < 1e-14:
        eps = 0.0
    if not 0.0 <= eps < 1.0:
        raise IncompatibleDataError(f"correction epsilon={eps:.6g} is outside [0, 1)")
    return eps


def target_masses(f: Density, epsilon: float, partition: list[PartitionCell], order=5) -> np.ndarray:
    return np.array(
        [(1.0 - epsilon) * sum(integrate_density(p, f, order) for p in cell.pieces) for cell in partition]
    )


def build_problem(grid: Grid, f: Density, R: Density, omega_star: Polygon, k_star: Polygon | None = None,
                  order=5, normalize_source=False) -> ProblemData:
    """Assemble masses on ``grid`` for source ``f`` and target ``R`` on ``k_star`` (default ``omega_star``).

    With ``normalize_source`` the source is rescaled to the target's total
    mass; otherwise the two must already balance.
    """
    k_star = k_star if k_star is not None else omega_star
    if not omega_star.contains_polygon(k_star, tol=1e-12):
        raise IncompatibleDataError("the target polygon must lie inside the target domain")
    if f.support is None:
        f = f.restricted(grid.domain)
    total_f = integrate_density(grid.domain, f, order)
    total_R = integrate_density(omega_star, R, order)
    if not total_f > 0.0:
        raise IncompatibleDataError("the source density must have positive total mass")
    if abs(total_f - total_R) > MASS_TOL * max(total_R, 1e-300):
        if not normalize_source:
            raise IncompatibleDataError(
                f"source mass {total_f:.12g} does not match target mass {total_R:.12g}"
            )
        scale = total_R / total_f
        g = f.evaluator
        coeffs = None if f.coeffs is None else f.coeffs * scale
        f = Density(lambda p: scale * g(p), f.kind, f.support, coeffs)
        log.info("rescaled source density by %.12g to balance the target", scale)
    eps = epsilon_correction(f, R, omega_star, k_star, order, domain=grid.domain)
    partition = build_partition(grid)
    mu = target_masses(f, eps, partition, order)
    want = integrate_density(k_star, R, order)
    got = float(mu.sum())
    if abs(got - want) > MASS_TOL * want:
        raise IncompatibleDataError(f"target masses sum to {got:.12g}, expected {want:.12g}")
    scale = want / got
    return ProblemData(grid, f, R, omega_star, k_star, eps, partition, mu * scale, order, want, scale)


def _polygon_mass(poly: Polygon, R: Density, order) -> float:
    return integrate_density(poly, R, order)


def regularize_degenerate(data: ProblemData, eps_reg: float, tol=1e-12) -> ProblemData:
    """Add ``eps_reg * |E_x|`` to every mass and dilate the target polygon to rebalance."""
    if not eps_reg > 0.0:
        raise ValueError("eps_reg must be positive")
    areas = np.array([c.area for c in data.partition])
    mu = data.masses + eps_reg * areas
    want = float(mu.sum())
    base = data.target_polygon
    c0 = base.centroid
    t_max = np.inf
    for hp in data.omega_star.halfplanes():
        n = np.asarray(hp.normal)
        slack = float(n @ c0) - hp.offset
        for v in base.vertices:
            s = float(n @ (v - c0))
            if s < 0.0:
                t_max = min(t_max, slack / -s)
    t_max = max(t_max, 1.0)

    def excess(t):
        return _polygon_mass(base.dilate(t, c0), data.target_R, data.quadrature_order) - want

    if excess(t_max) < -tol * want:
        raise DegenerateDataError(
            f"eps_reg={eps_reg:g} is too large: no dilation of the target polygon inside the "
            "target domain carries the regularised mass"
        )
    lo, hi = 1.0, t_max
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    t = 0.5 * (lo + hi)
    k_eps = base.dilate(t, c0)
    total = _polygon_mass(k_eps, data.target_R, data.quadrature_order)
    # absorb the remaining bisection residual (below tol) into the masses
    mu = mu * (total / want)
    return replace(data, target_polygon=k_eps, masses=mu, target_mass=total, eps_reg=eps_reg,
                   dilation=t, base_polygon=base)


class Discretization:
    """Grid, stencil and target density packed for the compiled kernels."""

    def __init__(self, grid: Grid, stencil: Stencil, R: Density, target: Polygon, order=5):
        if R.coeffs is None:
            raise ValueError("the solvers need a polynomial target density (constant, affine or polynomial)")
        self.grid = grid
        self.stencil = stencil
        self.layout = Layout(grid, stencil)
        self.target = target
        self.R = R
        self.h = grid.h
        self.coeffs = np.ascontiguousarray(R.coeffs, dtype=float)
        deg = R.degree or 0
        qp, qw = triangle_rule(max(order, deg, 1))
        self.qpts = np.ascontiguousarray(qp)
        self.qw = np.ascontiguousarray(qw)
        if R.support is not None:
            hps = R.support.halfplanes()
            self.clip_n = np.ascontiguousarray([hp.normal for hp in hps], dtype=float)
            self.clip_c = np.ascontiguousarray([hp.offset for hp in hps], dtype=float)
        else:
            self.clip_n = np.zeros((0, 2))
            self.clip_c = np.zeros(0)
        self.kverts = np.ascontiguousarray(target.vertices, dtype=float)
        self.layer_mask = extension_mask(grid, target)
        self.bsites = np.ascontiguousarray(self.layout.sites[self.layer_mask])
        self.backend = _kernels

    @classmethod
    def for_problem(cls, data: ProblemData, stencil: Stencil) -> "Discretization":
        return cls(data.grid, stencil, data.target_R, data.target_polygon, data.quadrature_order)

    def padded(self, values) -> np.ndarray:
        lay = self.layout
        U = np.full(lay.shape, np.nan)
        U[lay.sites[:, 0], lay.sites[:, 1]] = values
        self.fill(U)
        return U

    def fill(self, U):
        self.backend.fill_exterior(U, self.bsites, self.layout.exterior, self.kverts, self.h)

    def masses(self, U, sites=None) -> np.ndarray:
        sites = self.layout.sites if sites is None else sites
        return self.backend.cell_masses(U, sites, self.layout.dirs, self.h, self.coeffs, self.qpts,
                                        self.qw, self.clip_n, self.clip_c)

    def masses_of(self, values) -> np.ndarray:
        return self.masses(self.padded(values))

    def cell(self, U, k) -> Polygon | Region:
        s = self.layout.sites[k]
        pts = _clean(self.backend.cell_vertices(U, int(s[0]), int(s[1]), self.layout.dirs, self.h).tolist())
        if len(pts) < 3:
            return EMPTY
        poly = Polygon(pts, check=False)
        return poly if poly.area >= 1e-14 else EMPTY


@dataclass
class Residual:
    omega: np.ndarray
    mu: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.omega - self.mu

    @property
    def sup(self) -> float:
        return float(np.abs(self.values).max())

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def to_csv(self, grid: Grid) -> str:
        buf = io.StringIO()
        buf.write("i,j,omega,mu,residual\n")
        for (i, j), w, m in zip(grid.index.tolist(), self.omega, self.mu):
            buf.write(f"{i},{j},{w:.17g},{m:.17g},{w - m:.17g}\n")
        return buf.getvalue()


def residual(fn, data: ProblemData, stencil: Stencil, disc: Discretization | None = None) -> Residual:
    """Per-site ``omega_a(R, fn, {x}) - mu_x``."""
    disc = disc or Discretization.for_problem(data, stencil)
    return Residual(disc.masses_of(fn.values), np.asarray(data.masses))


def clipped_cell(cell: Polygon | Region, R: Density) -> Polygon | Region:
    if not isinstance(cell, Polygon) or R.support is None:
        return cell
    return clip_polygon(cell, R.support.halfplanes())
