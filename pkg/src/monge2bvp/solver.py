"""Solvers for the discrete second boundary value problem.

Both methods fix ``v(x1) = alpha`` at one site and solve for the rest:

* ``solve_monotone`` starts from the cone ``alpha + max_j a_j . (x - x1)``,
  which puts all mass at ``x1``, and repeatedly lowers each other site just
  enough to reach its prescribed mass (Gauss-Seidel sweeps, bisection per
  site). Iterates decrease monotonically and free masses never exceed
  their targets. An iterate need not be discrete convex at sites whose cell
  is still empty; the converged solution is, since every mass is positive.
* ``solve_newton`` applies damped Newton to ``omega(x) - mu(x) = 0`` over the
  free sites with a finite-difference sparse Jacobian, starting from a
  strictly convex quadratic whose cells are all nonempty.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .extension import MeshFunction, is_discrete_convex
from .geometry import support_function
from .lattice import Grid, Stencil
from .ma_operator import DegenerateDataError, Discretization, ProblemData

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    method: str = "newton"
    normalization_site: tuple[int, int] | None = None
    normalization_value: float = 0.0
    tol_residual: float | None = None
    max_iterations: int | None = None
    newton_damping: float = 1.0
    fd_step: float = 1e-6
    bisection_steps: int = 60
    threads: int = 1
    debug: bool = False

    def __post_init__(self):
        if self.method not in ("monotone", "newton"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 < self.newton_damping <= 1.0:
            raise ValueError("newton_damping must lie in (0, 1]")
        if self.threads < 0:
            raise ValueError("threads must be nonnegative (0 means all cores)")
        if self.tol_residual is not None and not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")


@dataclass
class SolveReport:
    solution: MeshFunction
    iterations: int
    final_residual_sup: float
    residual_history: list = field(default_factory=list)
    converged: bool = False
    method: str = ""
    seconds: float = 0.0
    convex: bool = True
    omega: np.ndarray | None = field(default=None, repr=False)

    def to_json(self):
        return {
            "method": self.method,
            "iterations": self.iterations,
            "final_residual_sup": self.final_residual_sup,
            "converged": self.converged,
            "discrete_convex": self.convex,
            "seconds": self.seconds,
            "residual_history": [float(r) for r in self.residual_history],
        }


def default_normalization_site(grid: Grid) -> tuple[int, int]:
    return grid.nearest_site(grid.domain.centroid)


def _resolve(config: SolverConfig, data: ProblemData, grid: Grid) -> SolverConfig:
    site = config.normalization_site or default_normalization_site(grid)
    site = (int(site[0]), int(site[1]))
    if site not in grid:
        raise ValueError(f"normalization site {site} is not a grid site")
    tol = config.tol_residual if config.tol_residual is not None else 1e-10 * data.target_mass
    iters = config.max_iterations
    if iters is None:
        iters = 200_000 if config.method == "monotone" else 100
    return replace(config, normalization_site=site, tol_residual=tol, max_iterations=iters)


def lipschitz_constant(target) -> float:
    """Bound on ``|v(x) - v(y)| / |x - y|_1`` for discrete convex functions with this target."""
    return max(abs(support_function(target, r)) for r in ((1, 0), (-1, 0), (0, 1), (0, -1)))


def stability_bound(data: ProblemData, grid: Grid, config: SolverConfig) -> float:
    cfg = _resolve(config, data, grid)
    x1 = grid.point(cfg.normalization_site)
    reach = float(np.abs(grid.points - x1).sum(axis=1).max())
    return abs(cfg.normalization_value) + lipschitz_constant(data.target_polygon) * reach


def initial_guess(data: ProblemData, grid: Grid, config: SolverConfig) -> MeshFunction:
    """The cone with apex at the normalisation site."""
    cfg = _resolve(config, data, grid)
    x1 = grid.point(cfg.normalization_site)
    vals = (grid.points - x1) @ data.target_polygon.vertices.T
    return MeshFunction(grid, vals.max(axis=1) + cfg.normalization_value, data.target_polygon)


def smooth_guess(data: ProblemData, grid: Grid, config: SolverConfig) -> MeshFunction:
    """A strictly convex quadratic whose gradient maps the domain well inside the target polygon.

    Every cell of its samples is nonempty, which keeps the Newton Jacobian
    nonsingular from the first step.
    """
    cfg = _resolve(config, data, grid)
    k = data.target_polygon
    p0 = k.centroid
    inr = min((float(np.dot(hp.normal, p0)) - hp.offset) / float(np.hypot(*hp.normal))
              for hp in k.halfplanes())
    c = grid.domain.centroid
    reach = float(np.hypot(*(grid.domain.vertices - c).T).max())
    s = 0.5 * inr / reach
    d = grid.points - c
    vals = 0.5 * s * (d * d).sum(axis=1) + d @ p0
    x1 = grid.slot[cfg.normalization_site]
    return MeshFunction(grid, vals - vals[x1] + cfg.normalization_value, k)


def _check_masses(data: ProblemData, skip: int):
    mu = np.delete(np.asarray(data.masses), skip)
    if np.any(mu <= 0.0):
        raise DegenerateDataError(
            "some prescribed masses vanish; apply regularize_degenerate before solving"
        )


class _Sweeper:
    """Monotone Gauss-Seidel sweeps on a padded value array."""

    def __init__(self, disc: Discretization, data: ProblemData, skip: int, nbisect: int):
        self.disc = disc
        self.mu = np.ascontiguousarray(data.masses, dtype=float)
        self.skip = skip
        self.nbisect = nbisect
        V = disc.layout.dirs
        kv = disc.kverts
        width = max(float((kv @ e).max() + (kv @ -e).max()) for e in V.astype(float))
        self.delta_max = 2.0 * disc.h * width
        self.layer = np.ascontiguousarray(disc.layer_mask.astype(np.int8))

    def __call__(self, U) -> int:
        d = self.disc
        return d.backend.monotone_sweep(
            U, d.layout.sites, self.skip, self.mu, d.layout.dirs, d.h, d.coeffs, d.qpts, d.qw,
            d.clip_n, d.clip_c, self.layer, d.layout.exterior, d.kverts, self.delta_max,
            self.nbisect,
        )


def _site_values(disc: Discretization, U) -> np.ndarray:
    s = disc.layout.sites
    return U[s[:, 0], s[:, 1]].copy()


def _finish(disc, data, U, cfg, iters, history, omega, t0, method, stencil) -> SolveReport:
    sol = MeshFunction(data.grid, _site_values(disc, U), data.target_polygon)
    sup = float(np.abs(omega - data.masses).max())
    convex, _ = is_discrete_convex(sol, stencil, layout=disc.layout)
    return SolveReport(sol, iters, sup, history, bool(sup <= cfg.tol_residual and convex), method,
                       time.perf_counter() - t0, bool(convex), omega)


def _check_iterate(disc, data, U, before, skip):
    """Invariants of the descent: values never rise and free masses stay at or below target.

    Discrete convexity is not among them. Sites whose cell is still empty
    can be non-convex until the iteration fills them (see the module notes).
    """
    after = _site_values(disc, U)
    if np.any(after > before):
        raise AssertionError("monotone sweep raised a value")
    excess = np.delete(disc.masses(U) - data.masses, skip)
    if np.any(excess > 1e-9 * data.target_mass):
        k = int(np.argmax(excess))
        raise AssertionError(f"monotone sweep overshot the target mass by {excess[k]:.3g}")
    if after[skip] != before[skip]:
        raise AssertionError("monotone sweep moved the normalisation site")


def solve_monotone(data: ProblemData, grid: Grid, stencil: Stencil, config: SolverConfig | None = None,
                   disc: Discretization | None = None, start: MeshFunction | None = None) -> SolveReport:
    """Pointwise monotone descent from the cone (or from ``start``)."""
    t0 = time.perf_counter()
    cfg = _resolve(config or SolverConfig(method="monotone"), data, grid)
    disc = disc or Discretization.for_problem(data, stencil)
    skip = grid.slot[cfg.normalization_site]
    _check_masses(data, skip)
    fn = start if start is not None else initial_guess(data, grid, cfg)
    U = disc.padded(fn.values)
    sweep = _Sweeper(disc, data, skip, cfg.bisection_steps)
    history = []
    iters = 0
    while True:
        omega = disc.masses(U)
        sup = float(np.abs(omega - data.masses).max())
        history.append(sup)
        if sup <= cfg.tol_residual or iters >= cfg.max_iterations:
            break
        before = _site_values(disc, U) if cfg.debug else None
        changed = sweep(U)
        iters += 1
        if cfg.debug:
            _check_iterate(disc, data, U, before, skip)
        if changed == 0:
            log.warning("monotone sweep made no progress at residual %.3g", sup)
            omega = disc.masses(U)
            history.append(float(np.abs(omega - data.masses).max()))
            break
    return _finish(disc, data, U, cfg, iters, history, omega, t0, "monotone", stencil)


class _Jacobian:
    """Forward-difference Jacobian of the free-site residuals."""

    def __init__(self, disc: Discretization, skip: int):
        self.disc = disc
        lay = disc.layout
        m = len(lay.sites)
        self.free = np.array([k for k in range(m) if k != skip], dtype=np.int64)
        self.col_of = -np.ones(m, dtype=np.int64)
        self.col_of[self.free] = np.arange(len(self.free))
        bnd = disc.layer_mask
        touching = set(lay.touching_exterior.tolist())
        self.affected = []
        for k in range(m):
            nb = set(lay.neighbours_of(k).tolist())
            if bnd[k]:
                nb |= touching
            self.affected.append(np.array(sorted(nb), dtype=np.int64))

    def __call__(self, U, omega, step, threads=1) -> sp.csc_matrix:
        n = len(self.free)
        if threads > 1 and n > threads:
            chunks = np.array_split(self.free, threads)
            # each worker perturbs its own copy of U
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(lambda c: self._columns(U.copy(), omega, step, c), chunks))
        else:
            parts = [self._columns(U, omega, step, self.free)]
        rows = np.concatenate([p[0] for p in parts])
        cols = np.concatenate([p[1] for p in parts])
        vals = np.concatenate([p[2] for p in parts])
        return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))

    def _columns(self, U, omega, step, which):
        disc = self.disc
        lay = disc.layout
        ext = lay.exterior
        bnd = disc.layer_mask
        rows, cols, vals = [], [], []
        for k in which:
            si, sj = lay.sites[k]
            old = U[si, sj]
            U[si, sj] = old + step
            if bnd[k]:
                saved = U[ext[:, 0], ext[:, 1]].copy()
                disc.fill(U)
            aff = self.affected[k]
            col = (disc.masses(U, np.ascontiguousarray(lay.sites[aff])) - omega[aff]) / step
            U[si, sj] = old
            if bnd[k]:
                U[ext[:, 0], ext[:, 1]] = saved
            r = self.col_of[aff]
            keep = (r >= 0) & (col != 0.0)
            rows.extend(r[keep].tolist())
            cols.extend([self.col_of[k]] * int(keep.sum()))
            vals.extend(col[keep].tolist())
        return (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals, dtype=float))


def _free_sup(r, free) -> float:
    return float(np.abs(r[free]).max()) if len(free) else 0.0


def solve_newton(data: ProblemData, grid: Grid, stencil: Stencil, config: SolverConfig | None = None,
                 disc: Discretization | None = None, start: MeshFunction | None = None) -> SolveReport:
    """Damped Newton on the free sites from ``smooth_guess`` (or ``start``)."""
    t0 = time.perf_counter()
    cfg = _resolve(config or SolverConfig(method="newton"), data, grid)
    disc = disc or Discretization.for_problem(data, stencil)
    skip = grid.slot[cfg.normalization_site]
    _check_masses(data, skip)
    fn = start if start is not None else smooth_guess(data, grid, cfg)
    U = disc.padded(fn.values)
    sweep = _Sweeper(disc, data, skip, cfg.bisection_steps)
    mu = np.asarray(data.masses)
    jac = _Jacobian(disc, skip)
    free = jac.free
    step = cfg.fd_step * disc.h
    nthreads = cfg.threads or os.cpu_count() or 1
    history = []
    iters = 0
    omega = disc.masses(U)
    sup = float(np.abs(omega - mu).max())
    # the fixed site's residual is minus the sum of the free ones
    merit = _free_sup(omega - mu, free)
    history.append(sup)
    while sup > cfg.tol_residual and iters < cfg.max_iterations:
        iters += 1
        J = jac(U, omega, step, nthreads)
        G = (omega - mu)[free]
        d = None
        if np.all(J.diagonal() != 0.0):
            try:
                d = spla.splu(J).solve(-G)
            except RuntimeError:
                pass
        accepted = False
        if d is not None and np.all(np.isfinite(d)):
            lam = cfg.newton_damping
            sites = disc.layout.sites[free]
            base = U[sites[:, 0], sites[:, 1]].copy()
            for _ in range(40):
                T = U.copy()
                T[sites[:, 0], sites[:, 1]] = base + lam * d
                disc.fill(T)
                om = disc.masses(T)
                m = _free_sup(om - mu, free)
                # positive masses everywhere keep the iterate discrete convex
                if m < merit and np.all(om > 0.0):
                    U, omega, merit = T, om, m
                    sup = float(np.abs(om - mu).max())
                    accepted = True
                    break
                lam *= 0.5
        if not accepted:
            log.info("newton step rejected at residual %.3g; falling back to a monotone sweep", sup)
            changed = sweep(U)
            omega = disc.masses(U)
            sup = float(np.abs(omega - mu).max())
            merit = _free_sup(omega - mu, free)
            if changed == 0:
                history.append(sup)
                log.warning("newton stalled at residual %.3g", sup)
                break
        history.append(sup)
    return _finish(disc, data, U, cfg, iters, history, omega, t0, "newton", stencil)


def solve(data: ProblemData, grid: Grid, stencil: Stencil, config: SolverConfig | None = None,
          **kw) -> SolveReport:
    config = config or SolverConfig()
    if config.method == "monotone":
        return solve_monotone(data, grid, stencil, config, **kw)
    return solve_newton(data, grid, stencil, config, **kw)


def check_uniqueness(data: ProblemData, grid: Grid, stencil: Stencil, config: SolverConfig | None = None,
                     alphas=(0.0, 5.0)) -> float:
    """Solve with two normalisation values and measure how far the difference is from constant."""
    config = config or SolverConfig()
    a1, a2 = (float(a) for a in alphas)
    disc = Discretization.for_problem(data, stencil)
    r1 = solve(data, grid, stencil, replace(config, normalization_value=a1), disc=disc)
    r2 = solve(data, grid, stencil, replace(config, normalization_value=a2), disc=disc)
    diff = r1.solution.values - r2.solution.values
    return float(np.abs(diff - (a1 - a2)).max())
