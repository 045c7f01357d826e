"""Command-line interface: ``monge2bvp {solve,verify,study,refine-target,dump}``.

Every command writes its outputs and a ``manifest.json`` under ``--out``.
Exit codes: 0 success, 1 solver non-convergence (or a failed check), 2 bad
input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy

from . import __version__, _kernels
from .extension import MeshFunction, is_discrete_convex
from .geometry import Density, GeometryError, Polygon, integrate_density
from .lattice import EmptyGridError, StencilError, build_grid, build_stencil
from .ma_operator import (
    DegenerateDataError,
    IncompatibleDataError,
    Discretization,
    build_problem,
    regularize_degenerate,
    residual,
)
from .solver import SolverConfig, initial_guess, solve, stability_bound
from .transport import convergence_study, study_to_files, target_refinement_study

log = logging.getLogger(__name__)

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INPUT = 0, 1, 2
DENSITY_NAMES = ("constant", "affine", "polynomial")


class SpecError(ValueError):
    """Invalid problem description."""


@dataclass
class ProblemSpec:
    domain: Polygon
    target_domain: Polygon
    target_polygon: Polygon
    source_density: dict
    target_density: dict
    h: float
    stencil_radius: int = 1
    solver: dict = field(default_factory=dict)
    quadrature_order: int = 5
    eps_reg: float | None = None
    normalize_source: bool = False

    def to_json(self):
        return {
            "domain": self.domain.to_json(),
            "target_domain": self.target_domain.to_json(),
            "target_polygon": self.target_polygon.to_json(),
            "source_density": self.source_density,
            "target_density": self.target_density,
            "h": self.h,
            "stencil_radius": self.stencil_radius,
            "solver": self.solver,
            "quadrature_order": self.quadrature_order,
            "eps_reg": self.eps_reg,
            "normalize_source": self.normalize_source,
        }

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver)

    def densities(self):
        f = make_density(self.source_density, self.domain)
        R = make_density(self.target_density, self.target_domain)
        return f, R


def _polygon(value, what) -> Polygon:
    try:
        return Polygon.from_json(value)
    except (GeometryError, TypeError, ValueError) as exc:
        raise SpecError(f"{what}: {exc}") from None


def make_density(spec: dict, default_support: Polygon) -> Density:
    """Build a named density; ``support`` defaults to ``default_support``."""
    if not isinstance(spec, dict) or "name" not in spec:
        raise SpecError("a density must be an object with a 'name'")
    name = spec["name"]
    support = _polygon(spec["support"], "density support") if "support" in spec else default_support
    params = spec.get("params", spec.get("coefficients"))
    try:
        if name == "constant":
            value = params[0] if isinstance(params, list) else (1.0 if params is None else params)
            return Density.constant(value, support)
        if name == "affine":
            return Density.affine(*params, support=support)
        if name == "polynomial":
            return Density.polynomial(params, support)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"bad parameters for {name} density: {exc}") from None
    raise SpecError(f"unknown density name {name!r}; expected one of {', '.join(DENSITY_NAMES)}")


def _load_json(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise SpecError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text), text.encode()
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def spec_from_dict(raw: dict) -> ProblemSpec:
    if not isinstance(raw, dict):
        raise SpecError("the problem description must be a JSON object")
    if "spec" in raw and "command" in raw:
        # a manifest written by a previous run
        raw = raw["spec"]
    for key in ("domain", "target_domain", "source_density", "target_density", "h"):
        if key not in raw:
            raise SpecError(f"missing required field {key!r}")
    domain = _polygon(raw["domain"], "domain")
    omega_star = _polygon(raw["target_domain"], "target_domain")
    if raw.get("target_polygon") is None:
        k_star = omega_star
    else:
        k_star = _polygon(raw["target_polygon"], "target_polygon")
        for v in k_star.vertices:
            if not omega_star.contains(v, tol=1e-12):
                raise SpecError(f"target_polygon vertex ({v[0]:.17g}, {v[1]:.17g}) lies outside target_domain")
    for key in ("source_density", "target_density"):
        name = raw[key].get("name") if isinstance(raw[key], dict) else None
        if name not in DENSITY_NAMES:
            raise SpecError(f"{key}: unknown density name {name!r}; expected one of {', '.join(DENSITY_NAMES)}")
    try:
        h = float(raw["h"])
        radius = int(raw.get("stencil_radius", 1))
        order = int(raw.get("quadrature_order", 5))
    except (TypeError, ValueError) as exc:
        raise SpecError(f"bad numeric field: {exc}") from None
    if not h > 0:
        raise SpecError("h must be positive")
    solver = dict(raw.get("solver", {}))
    known = {f.name for f in fields(SolverConfig)}
    unknown = set(solver) - known
    if unknown:
        raise SpecError(f"unknown solver fields: {', '.join(sorted(unknown))}")
    if solver.get("normalization_site") is not None:
        solver["normalization_site"] = tuple(solver["normalization_site"])
    try:
        SolverConfig(**solver)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"solver: {exc}") from None
    eps_reg = raw.get("eps_reg")
    spec = ProblemSpec(domain, omega_star, k_star, raw["source_density"], raw["target_density"], h, radius,
                       solver, order, None if eps_reg is None else float(eps_reg),
                       bool(raw.get("normalize_source", False)))
    spec.densities()
    return spec


def parse_spec(path) -> ProblemSpec:
    raw, _ = _load_json(path)
    return spec_from_dict(raw)


def _apply_overrides(spec: ProblemSpec, args) -> ProblemSpec:
    solver = dict(spec.solver)
    if getattr(args, "method", None):
        solver["method"] = args.method
    if getattr(args, "tol", None) is not None:
        solver["tol_residual"] = args.tol
    if getattr(args, "threads", None) is not None:
        solver["threads"] = args.threads
    spec = replace(spec, solver=solver)
    if getattr(args, "h", None) is not None:
        spec = replace(spec, h=float(args.h))
    if getattr(args, "stencil_radius", None) is not None:
        spec = replace(spec, stencil_radius=int(args.stencil_radius))
    if getattr(args, "quadrature_order", None) is not None:
        spec = replace(spec, quadrature_order=int(args.quadrature_order))
    return spec


def prepare(spec: ProblemSpec):
    """Grid, problem data (regularised when requested) and stencil for a spec."""
    f, R = spec.densities()
    grid = build_grid(spec.h, spec.domain)
    data = build_problem(grid, f, R, spec.target_domain, spec.target_polygon, spec.quadrature_order,
                         spec.normalize_source)
    if spec.eps_reg:
        data = regularize_degenerate(data, spec.eps_reg)
    stencil = build_stencil(spec.stencil_radius, data.target_polygon)
    return grid, data, stencil


def _versions():
    return {
        "monge2bvp": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "kernel_backend": _kernels.BACKEND,
    }


def _write(out, name, text):
    path = os.path.join(out, name)
    with open(path, "w") as fh:
        fh.write(text)
    return name


def _write_json(out, name, obj):
    return _write(out, name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(out, command, argv, inputs: dict, timings, outputs, spec=None, extra=None):
    digest = hashlib.sha256()
    for key in sorted(inputs):
        digest.update(key.encode())
        digest.update(inputs[key])
    manifest = {
        "command": command,
        "argv": list(argv),
        "inputs_sha256": digest.hexdigest(),
        "versions": _versions(),
        "timings": timings,
        "outputs": sorted(outputs),
    }
    if spec is not None:
        manifest["spec"] = spec.to_json()
    if extra:
        manifest.update(extra)
    _write_json(out, "manifest.json", manifest)


def _load_spec(args):
    if not args.config:
        raise SpecError("--config is required")
    raw, blob = _load_json(args.config)
    return _apply_overrides(spec_from_dict(raw), args), {"config": blob}


def cmd_solve(args, argv):
    t0 = time.perf_counter()
    spec, inputs = _load_spec(args)
    grid, data, stencil = prepare(spec)
    t1 = time.perf_counter()
    config = spec.solver_config()
    disc = Discretization.for_problem(data, stencil)
    rep = solve(data, grid, stencil, config, disc=disc)
    t2 = time.perf_counter()
    out = _outdir(args)
    res = residual(rep.solution, data, stencil, disc)
    report = rep.to_json()
    report.update({
        "epsilon": data.epsilon,
        "target_mass": data.target_mass,
        "total_omega": float(res.omega.sum()),
        "signed_residual_sum": res.total,
        "grid_sites": len(grid),
        "stencil_directions": len(stencil),
        "eps_reg": data.eps_reg,
        "dilation": data.dilation,
        "sup_norm": float(np.abs(rep.solution.values).max()),
        "stability_bound": stability_bound(data, grid, config),
    })
    outputs = [
        _write(out, "solution.csv", rep.solution.to_csv()),
        _write(out, "solution.json", rep.solution.to_json()),
        _write(out, "residual.csv", res.to_csv(grid)),
        _write_json(out, "report.json", report),
    ]
    _manifest(out, "solve", argv, inputs, {"setup": t1 - t0, "solve": t2 - t1}, outputs, spec)
    print(f"{'converged' if rep.converged else 'NOT converged'}: {rep.iterations} iterations, "
          f"residual {rep.final_residual_sup:.3g}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def verify_suite(grid, data, stencil, seed=0) -> list[dict]:
    """Operator invariants on the cone start and on random discrete convex functions."""
    rng = np.random.default_rng(seed)
    disc = Discretization.for_problem(data, stencil)
    checks = []
    kstar = data.target_polygon
    R = data.target_R
    total = integrate_density(kstar, R, data.quadrature_order)

    def record(name, ok, detail):
        checks.append({"name": name, "passed": bool(ok), "detail": detail})

    record("mass balance of target masses", abs(data.masses.sum() - total) <= 1e-8 * max(total, 1.0),
           f"sum mu = {data.masses.sum():.17g}, integral of R over K* = {total:.17g}")
    record("epsilon in [0, 1)", 0.0 <= data.epsilon < 1.0, f"epsilon = {data.epsilon:.17g}")

    cone = initial_guess(data, grid, SolverConfig())
    U = disc.padded(cone.values)
    om = disc.masses(U)
    x1 = grid.slot[grid.nearest_site(grid.domain.centroid)]
    others = np.delete(om, x1)
    record("cone puts all mass at the apex",
           abs(om[x1] - total) <= 1e-10 * max(total, 1.0) and np.all(np.abs(others) <= 1e-10),
           f"apex mass {om[x1]:.17g}, largest other {np.abs(others).max() if len(others) else 0.0:.3g}")

    samples = [cone]
    pts = grid.points
    c = grid.domain.centroid
    for _ in range(8):
        a = rng.uniform(0.2, 2.0, size=2)
        d = pts - c
        q = 0.5 * (a[0] * d[:, 0] ** 2 + a[1] * d[:, 1] ** 2) + d @ kstar.centroid
        samples.append(MeshFunction(grid, q * 0.1 + rng.uniform(-1e-3, 1e-3, size=len(q)) * grid.h ** 2, kstar))
    samples = [s for s in samples if is_discrete_convex(s, stencil, layout=disc.layout)[0]]
    hps = kstar.halfplanes()
    worst_out = 0.0
    worst_shift = 0.0
    excess = -np.inf
    for fn in samples:
        V = disc.padded(fn.values)
        for k in range(len(grid)):
            cell = disc.cell(V, k)
            if isinstance(cell, Polygon):
                for v in cell.vertices:
                    for hp in hps:
                        worst_out = max(worst_out, (hp.offset - float(np.dot(hp.normal, v))) / np.hypot(*hp.normal))
        m = disc.masses(V)
        m2 = disc.masses(disc.padded(fn.values + 17.3))
        worst_shift = max(worst_shift, float(np.abs(m - m2).max()))
        excess = max(excess, float(m.sum() - total))
    record("cells inside K*", worst_out <= 1e-9, f"largest violation {worst_out:.3g} over {len(samples)} functions")
    record("shift invariance", worst_shift <= 1e-12 * max(total, 1.0), f"largest mass change {worst_shift:.3g}")
    record("total curvature bounded by target mass", excess <= 1e-8,
           f"largest excess {excess:.3g}")
    return checks


def cmd_verify(args, argv):
    t0 = time.perf_counter()
    spec, inputs = _load_spec(args)
    grid, data, stencil = prepare(spec)
    checks = verify_suite(grid, data, stencil)
    ok = all(c["passed"] for c in checks)
    report = {"passed": ok, "checks": checks}
    out = _outdir(args, required=False)
    if out:
        outputs = [_write_json(out, "verify.json", report)]
        _manifest(out, "verify", argv, inputs, {"total": time.perf_counter() - t0}, outputs, spec)
    print(json.dumps(report, indent=2))
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _floats(text):
    try:
        return [float(eval_fraction(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise SpecError(f"bad number list {text!r}") from None


def eval_fraction(token: str) -> float:
    """``'0.25'`` or ``'1/4'``."""
    token = token.strip()
    if "/" in token:
        a, b = token.split("/", 1)
        return float(a) / float(b)
    return float(token)


def cmd_study(args, argv):
    t0 = time.perf_counter()
    hs = _floats(args.h or "0.25,0.125,0.0625")
    radii = [int(r) for r in _floats(args.radius or "1")]
    solver = {}
    if args.method:
        solver["method"] = args.method
    if args.tol is not None:
        solver["tol_residual"] = args.tol
    config = SolverConfig(**solver)
    try:
        # threads go to independent instances; each solve stays single-threaded
        result = convergence_study(args.benchmark, hs, radii, config,
                                   threads=1 if args.threads is None else args.threads,
                                   order=args.quadrature_order or 5)
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    out = _outdir(args)
    study_to_files(result, out)
    _manifest(out, "study", argv, {"benchmark": args.benchmark.encode(), "h": repr(hs).encode(),
                                   "radius": repr(radii).encode()},
              {"total": time.perf_counter() - t0}, ["study.csv", "study.json"])
    sys.stdout.write(result.to_csv())
    return EXIT_OK if result.all_converged else EXIT_NOT_CONVERGED


def cmd_refine(args, argv):
    t0 = time.perf_counter()
    spec, inputs = _load_spec(args)
    if not args.sequence:
        raise SpecError("--sequence is required")
    seq_raw, blob = _load_json(args.sequence)
    inputs["sequence"] = blob
    if isinstance(seq_raw, dict):
        seq_raw = seq_raw.get("polygons")
    if not isinstance(seq_raw, list) or not seq_raw:
        raise SpecError("the sequence file must hold a nonempty list of polygons")
    polys = [_polygon(p, f"sequence polygon {m}") for m, p in enumerate(seq_raw)]
    f, R = spec.densities()
    try:
        result = target_refinement_study(spec.target_domain, polys, spec.domain, f, R, spec.h,
                                         spec.stencil_radius, spec.solver_config(), spec.quadrature_order)
    except (ValueError, GeometryError) as exc:
        if isinstance(exc, (IncompatibleDataError, EmptyGridError)):
            raise
        raise SpecError(str(exc)) from None
    out = _outdir(args)
    study_to_files(result, out, "refinement")
    _manifest(out, "refine-target", argv, inputs, {"total": time.perf_counter() - t0},
              ["refinement.csv", "refinement.json"], spec)
    sys.stdout.write(result.to_csv())
    return EXIT_OK if all(r.converged for r in result.rows) else EXIT_NOT_CONVERGED


def cmd_dump(args, argv):
    t0 = time.perf_counter()
    spec, inputs = _load_spec(args)
    grid, data, stencil = prepare(spec)
    config = spec.solver_config()
    out = _outdir(args)
    code = EXIT_OK
    if args.function == "solution":
        rep = solve(data, grid, stencil, config)
        fn = rep.solution
        code = EXIT_OK if rep.converged else EXIT_NOT_CONVERGED
    else:
        fn = initial_guess(data, grid, config)
    outputs = [
        _write_json(out, "grid.json", grid.to_json()),
        _write_json(out, "stencil.json", stencil.to_json()),
        _write(out, f"{args.function}.csv", fn.to_csv()),
        _write(out, f"{args.function}.json", fn.to_json()),
    ]
    _manifest(out, "dump", argv, inputs, {"total": time.perf_counter() - t0}, outputs, spec)
    return code


def _outdir(args, required=True):
    out = getattr(args, "out", None)
    if not out:
        if required:
            raise SpecError("--out is required")
        return None
    os.makedirs(out, exist_ok=True)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monge2bvp", description="Lattice solver for the second boundary "
                                "value problem of the Monge-Ampere equation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="problem description (JSON) or a previous manifest.json")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--h", type=eval_fraction, help="lattice spacing, e.g. 0.125 or 1/8")
        sp.add_argument("--stencil-radius", type=int)
        sp.add_argument("--method", choices=("newton", "monotone"))
        sp.add_argument("--tol", type=float, help="residual tolerance (absolute)")
        sp.add_argument("--threads", type=int, help="worker threads, 0 = all cores")
        sp.add_argument("--quadrature-order", type=int)

    common(sub.add_parser("solve", help="solve a problem"))
    common(sub.add_parser("verify", help="check operator invariants on a problem"))
    st = sub.add_parser("study", help="convergence study on a benchmark")
    st.add_argument("--benchmark", default="quadratic")
    st.add_argument("--radius", help="comma-separated stencil radii")
    st.add_argument("--out")
    st.add_argument("--h", help="comma-separated spacings, e.g. 1/4,1/8,1/16")
    st.add_argument("--method", choices=("newton", "monotone"))
    st.add_argument("--tol", type=float)
    st.add_argument("--threads", type=int)
    st.add_argument("--quadrature-order", type=int)
    st.add_argument("--stencil-radius", type=int, help="alias for a single --radius")
    rt = sub.add_parser("refine-target", help="solve for a nested sequence of target polygons")
    common(rt)
    rt.add_argument("--sequence", help="JSON list of nested polygons")
    dp = sub.add_parser("dump", help="write grid, stencil and a mesh function")
    common(dp)
    dp.add_argument("--function", choices=("initial", "solution"), default="initial")
    return p


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "study": cmd_study, "refine-target": cmd_refine,
            "dump": cmd_dump}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "study" and args.stencil_radius is not None and not args.radius:
        args.radius = str(args.stencil_radius)
    try:
        return COMMANDS[args.command](args, argv)
    except EmptyGridError as exc:
        print(f"error: empty grid: {exc}", file=sys.stderr)
    except (SpecError, IncompatibleDataError, DegenerateDataError, GeometryError, StencilError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
