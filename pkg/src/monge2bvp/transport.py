"""Transport-map recovery, error measures and convergence studies."""

from __future__ import annotations

import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .extension import MeshFunction
from .geometry import Density, Polygon, hausdorff_distance
from .lattice import Stencil, build_grid, build_stencil
from .ma_operator import build_problem, subdifferential_cell
from .solver import SolverConfig, SolveReport, solve

log = logging.getLogger(__name__)

STUDY_COLUMNS = ("h", "radius", "err_u", "err_grad", "order_u", "order_grad", "iters", "seconds")


@dataclass(frozen=True)
class ExactSolution:
    u: Callable
    grad_u: Callable
    description: str = ""

    def check_gradient(self, points, step=1e-6, tol=1e-6) -> float:
        """Largest deviation of ``grad_u`` from central differences of ``u`` at ``points``.

        Raises ``ValueError`` when it exceeds ``tol``.
        """
        worst = 0.0
        for p in np.atleast_2d(np.asarray(points, dtype=float)):
            g = np.asarray(self.grad_u(p), dtype=float)
            fd = np.empty(2)
            for k in range(2):
                e = np.zeros(2)
                e[k] = step
                fd[k] = (self.u(p + e) - self.u(p - e)) / (2 * step)
            worst = max(worst, float(np.abs(fd - g).max()))
        if worst > tol:
            raise ValueError(f"grad_u disagrees with u by {worst:.3g}")
        return worst


@dataclass(frozen=True)
class Benchmark:
    """A problem with a known solution, reconstructible at any ``h``."""

    name: str
    domain: Polygon
    omega_star: Polygon
    source: Density
    target: Density
    exact: ExactSolution

    def problem(self, h, order=5):
        grid = build_grid(h, self.domain)
        return build_problem(grid, self.source, self.target, self.omega_star, order=order), grid


def quadratic_benchmark() -> Benchmark:
    sq = Polygon.box(0, 0, 1, 1)
    ex = ExactSolution(lambda x: 0.5 * float(np.dot(x, x)), lambda x: np.asarray(x, dtype=float),
                       "u = |x|^2/2, identity map of the unit square")
    return Benchmark("quadratic", sq, sq, Density.constant(1.0, sq), Density.constant(1.0), ex)


def anisotropic_benchmark() -> Benchmark:
    sq = Polygon.box(0, 0, 1, 1)
    ex = ExactSolution(lambda x: 0.5 * (2 * x[0] ** 2 + x[1] ** 2),
                       lambda x: np.array([2.0 * x[0], x[1]]),
                       "u = (2 x1^2 + x2^2)/2 onto (0,2)x(0,1)")
    return Benchmark("anisotropic", sq, Polygon.box(0, 0, 2, 1), Density.constant(2.0, sq),
                     Density.constant(1.0), ex)


def translated_benchmark(b=(0.5, -0.5)) -> Benchmark:
    sq = Polygon.box(0, 0, 1, 1)
    b = np.asarray(b, dtype=float)
    ex = ExactSolution(lambda x: 0.5 * float(np.dot(x, x)) + float(b @ x),
                       lambda x: np.asarray(x, dtype=float) + b,
                       f"u = |x|^2/2 + b.x with b = ({b[0]:g}, {b[1]:g})")
    return Benchmark("translated", sq, sq.translate(b), Density.constant(1.0, sq), Density.constant(1.0), ex)


def cubic_benchmark() -> Benchmark:
    """Separable ``u = g(x1) + g(x2)``, ``g(t) = t^2/4 + t^3/6``, mapping the unit square onto itself.

    Unlike the quadratic benchmarks its cells are not reproduced exactly on
    any grid, so the error genuinely depends on ``h``.
    """
    sq = Polygon.box(0, 0, 1, 1)

    def g(t):
        return t * t / 4 + t ** 3 / 6

    def dg(t):
        return (t + t * t) / 2

    # f = g''(x1) g''(x2) = (1 + 2 x1)(1 + 2 x2) / 4
    f = Density.polynomial([[0.25, 0.5], [0.5, 1.0]], sq)
    ex = ExactSolution(lambda x: g(x[0]) + g(x[1]), lambda x: np.array([dg(x[0]), dg(x[1])]),
                       "u = g(x1) + g(x2), g(t) = t^2/4 + t^3/6")
    return Benchmark("cubic", sq, sq, f, Density.constant(1.0), ex)


BENCHMARKS = {
    "quadratic": quadratic_benchmark,
    "anisotropic": anisotropic_benchmark,
    "translated": translated_benchmark,
    "cubic": cubic_benchmark,
}


def get_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]()
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None


def select_gradient(fn: MeshFunction, x, stencil: Stencil):
    """Centroid of the discrete subdifferential at ``x``, or ``None`` if the cell is empty."""
    if tuple(int(c) for c in x) not in fn.grid:
        raise ValueError(f"{tuple(x)} is not a grid site")
    cell = subdifferential_cell(fn, x, stencil)
    if not isinstance(cell, Polygon):
        return None
    return cell.centroid


def sup_error(fn: MeshFunction, exact: ExactSolution, normalize=True) -> float:
    diff = fn.values - np.array([exact.u(p) for p in fn.grid.points])
    if normalize:
        diff = diff - diff.mean()
    return float(np.abs(diff).max())


def gradient_error(fn: MeshFunction, exact: ExactSolution, stencil: Stencil) -> float:
    """Largest Euclidean distance between the selected and exact gradients (inf on an empty cell)."""
    worst = 0.0
    for ij, p in zip(fn.grid.index.tolist(), fn.grid.points):
        g = select_gradient(fn, ij, stencil)
        if g is None:
            return math.inf
        worst = max(worst, float(np.hypot(*(g - exact.grad_u(p)))))
    return worst


@dataclass
class StudyRow:
    h: float
    radius: int
    err_u: float
    err_grad: float
    order_u: float = math.nan
    order_grad: float = math.nan
    iters: int = 0
    seconds: float = 0.0
    converged: bool = True

    def as_tuple(self):
        return tuple(getattr(self, c) for c in STUDY_COLUMNS)


@dataclass
class StudyResult:
    rows: list = field(default_factory=list)
    benchmark: str = ""

    def errors(self, radius=None, which="err_u"):
        return [getattr(r, which) for r in self.rows if radius is None or r.radius == radius]

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(STUDY_COLUMNS) + "\n")
        for r in self.rows:
            buf.write(f"{r.h:.17g},{r.radius},{r.err_u:.17g},{r.err_grad:.17g},{r.order_u:.17g},"
                      f"{r.order_grad:.17g},{r.iters},{r.seconds:.17g}\n")
        return buf.getvalue()

    def to_json(self):
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v

        return {
            "benchmark": self.benchmark,
            "columns": list(STUDY_COLUMNS) + ["converged"],
            "rows": [[clean(v) for v in r.as_tuple()] + [r.converged] for r in self.rows],
        }


def _order(e_coarse, e_fine, h_coarse, h_fine) -> float:
    if not (e_coarse > 0 and e_fine > 0 and math.isfinite(e_coarse) and math.isfinite(e_fine)):
        return math.nan
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def _fill_orders(rows):
    by_radius = {}
    for r in rows:
        by_radius.setdefault(r.radius, []).append(r)
    for group in by_radius.values():
        group.sort(key=lambda r: -r.h)
        for a, b in zip(group, group[1:]):
            b.order_u = _order(a.err_u, b.err_u, a.h, b.h)
            b.order_grad = _order(a.err_grad, b.err_grad, a.h, b.h)


def _threads(n) -> int:
    n = 1 if n is None else int(n)
    if n == 0:
        return os.cpu_count() or 1
    return max(n, 1)


def run_instance(bench: Benchmark, h, radius, config: SolverConfig | None = None, order=5):
    """Solve one benchmark instance; returns ``(StudyRow, SolveReport)``."""
    data, grid = bench.problem(h, order)
    stencil = build_stencil(radius, bench.omega_star)
    rep = solve(data, grid, stencil, config or SolverConfig())
    if not rep.converged:
        log.warning("%s h=%g radius=%d did not converge (residual %.3g)", bench.name, h, radius,
                    rep.final_residual_sup)
    row = StudyRow(float(h), int(radius), sup_error(rep.solution, bench.exact, True),
                   gradient_error(rep.solution, bench.exact, stencil), iters=rep.iterations,
                   seconds=rep.seconds, converged=rep.converged)
    return row, rep


def convergence_study(bench: Benchmark | str, h_list, radius_list=(1,), config: SolverConfig | None = None,
                      threads=1, order=5) -> StudyResult:
    """Solve every ``(h, radius)`` pair and tabulate errors and observed orders.

    Non-converged instances stay in the table with ``converged=False``.
    """
    if isinstance(bench, str):
        bench = get_benchmark(bench)
    h_list = [float(h) for h in h_list]
    if not h_list:
        raise ValueError("h_list must not be empty")
    jobs = [(h, int(r)) for r in radius_list for h in h_list]

    def one(job):
        return run_instance(bench, job[0], job[1], config, order)[0]

    n = _threads(threads)
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            rows = list(pool.map(one, jobs))
    else:
        rows = [one(j) for j in jobs]
    _fill_orders(rows)
    return StudyResult(rows, bench.name)


@dataclass
class RefinementRow:
    index: int
    epsilon: float
    hausdorff: float
    diff_prev: float
    iters: int
    converged: bool
    seconds: float


@dataclass
class RefinementResult:
    rows: list = field(default_factory=list)
    solutions: list = field(default_factory=list, repr=False)

    @property
    def epsilons(self):
        return [r.epsilon for r in self.rows]

    @property
    def differences(self):
        return [r.diff_prev for r in self.rows[1:]]

    @property
    def differences_decreasing(self) -> bool:
        d = self.differences
        return all(b <= a for a, b in zip(d, d[1:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("m,epsilon,hausdorff,diff_prev,iters,converged,seconds\n")
        for r in self.rows:
            buf.write(f"{r.index},{r.epsilon:.17g},{r.hausdorff:.17g},{r.diff_prev:.17g},{r.iters},"
                      f"{int(r.converged)},{r.seconds:.17g}\n")
        return buf.getvalue()

    def to_json(self):
        return {"rows": [
            {**r.__dict__, "diff_prev": None if math.isnan(r.diff_prev) else r.diff_prev} for r in self.rows
        ]}


def check_nested(omega_star: Polygon, polygons, tol=1e-12):
    for m, k in enumerate(polygons):
        if not omega_star.contains_polygon(k, tol):
            raise ValueError(f"polygon {m} is not contained in the target domain")
    for m, (a, b) in enumerate(zip(polygons, polygons[1:])):
        if not b.contains_polygon(a, tol):
            raise ValueError(f"polygon {m} is not contained in polygon {m + 1}: the sequence is not nested")


def target_refinement_study(omega_star: Polygon, polygons, domain: Polygon, source: Density,
                            target: Density, h, radius=1, config: SolverConfig | None = None,
                            order=5) -> RefinementResult:
    """Solve with each polygon of a nested sequence approximating ``omega_star`` as target.

    All solves share the grid and the normalisation, so consecutive solutions
    are compared directly.
    """
    polygons = list(polygons)
    if not polygons:
        raise ValueError("the polygon sequence must not be empty")
    check_nested(omega_star, polygons)
    grid = build_grid(h, domain)
    config = config or SolverConfig()
    out = RefinementResult()
    prev = None
    for m, k in enumerate(polygons):
        data = build_problem(grid, source, target, omega_star, k, order=order)
        stencil = build_stencil(radius, k)
        rep: SolveReport = solve(data, grid, stencil, config)
        diff = math.nan if prev is None else float(np.abs(rep.solution.values - prev).max())
        out.rows.append(RefinementRow(m, data.epsilon, hausdorff_distance(k, omega_star), diff,
                                      rep.iterations, rep.converged, rep.seconds))
        out.solutions.append(rep.solution)
        prev = rep.solution.values
    return out


def study_to_files(result, out_dir, stem="study"):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{stem}.csv"), "w") as fh:
        fh.write(result.to_csv())
    with open(os.path.join(out_dir, f"{stem}.json"), "w") as fh:
        json.dump(result.to_json(), fh, indent=2)
