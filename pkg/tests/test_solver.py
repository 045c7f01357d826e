import numpy as np
import pytest

from monge2bvp.extension import is_discrete_convex
from monge2bvp.geometry import Density, Polygon
from monge2bvp.lattice import build_grid, build_stencil
from monge2bvp.ma_operator import DegenerateDataError, Discretization, build_problem, r_curvature
from monge2bvp.solver import (
    SolverConfig,
    _Jacobian,
    check_uniqueness,
    default_normalization_site,
    initial_guess,
    smooth_guess,
    solve,
    solve_monotone,
    solve_newton,
    stability_bound,
)

SQUARE = Polygon.box(0, 0, 1, 1)
ONE = Density.constant(1.0)


def quadratic_problem(h, target=SQUARE):
    return build_problem(build_grid(h), Density.constant(1.0, SQUARE), ONE, target)


def half(p):
    return 0.5 * (p ** 2).sum(axis=-1)


def normalized(fn):
    g = fn.grid
    k = g.slot[default_normalization_site(g)]
    return fn.values - fn.values[k]


# -- configuration and start ------------------------------------------------


def test_config_validation():
    for bad in (dict(method="gauss"), dict(newton_damping=0.0), dict(newton_damping=1.5),
                dict(threads=-1), dict(tol_residual=0.0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_default_site_and_tolerance():
    data = quadratic_problem(1 / 8)
    g = data.grid
    assert default_normalization_site(g) == (4, 4)
    rep = solve(data, g, build_stencil(1, SQUARE), SolverConfig(max_iterations=0))
    assert rep.iterations == 0 and not rep.converged


def test_initial_guess_is_the_cone():
    data = quadratic_problem(1 / 8)
    g = data.grid
    s = build_stencil(1, SQUARE)
    cone = initial_guess(data, g, SolverConfig(normalization_value=2.5))
    assert cone((4, 4)) == 2.5
    assert r_curvature(cone, (4, 4), s, ONE) == pytest.approx(1.0, abs=1e-10)
    assert r_curvature(cone, (1, 6), s, ONE) == 0.0


def test_smooth_guess_cells_nonempty():
    data = quadratic_problem(1 / 8, Polygon([(0, 0), (2, 0), (0, 1)]))
    g = data.grid
    s = build_stencil(1, data.target_polygon)
    fn = smooth_guess(data, g, SolverConfig())
    masses = Discretization.for_problem(data, s).masses_of(fn.values)
    assert np.all(masses > 0)
    assert is_discrete_convex(fn, s)[0]
    assert fn(default_normalization_site(g)) == 0.0


def test_zero_mass_site_is_refused():
    f = Density.constant(4.0, Polygon.box(0, 0, 0.5, 0.5))
    data = build_problem(build_grid(1 / 8), f, ONE, SQUARE)
    for method in ("monotone", "newton"):
        with pytest.raises(DegenerateDataError, match="regularize"):
            solve(data, data.grid, build_stencil(1, SQUARE), SolverConfig(method=method))


# -- solutions --------------------------------------------------------------


@pytest.mark.parametrize("method", ["monotone", "newton"])
def test_single_site_grid(method):
    data = quadratic_problem(0.5)
    rep = solve(data, data.grid, build_stencil(1, SQUARE), SolverConfig(method=method, normalization_value=1.5))
    assert rep.converged and rep.iterations == 0
    assert rep.solution.values.tolist() == [1.5]


@pytest.mark.parametrize("method", ["monotone", "newton"])
def test_quarter_grid_recovers_quadratic(method):
    data = quadratic_problem(0.25)
    g = data.grid
    rep = solve(data, g, build_stencil(1, SQUARE), SolverConfig(method=method))
    assert rep.converged and rep.convex
    exact = half(g.points)
    exact -= exact[g.slot[(2, 2)]]
    assert np.abs(normalized(rep.solution) - exact).max() < 1e-8
    assert rep.final_residual_sup <= 1e-10


def test_methods_agree_quarter_grid():
    data = quadratic_problem(0.25)
    s = build_stencil(1, SQUARE)
    a = solve_monotone(data, data.grid, s, SolverConfig(method="monotone"))
    b = solve_newton(data, data.grid, s, SolverConfig(method="newton"))
    assert np.abs(a.solution.values - b.solution.values).max() < 1e-8


def test_monotone_history_non_increasing():
    data = build_problem(build_grid(1 / 8), Density.affine(0, 1, 1, SQUARE), ONE, SQUARE)
    rep = solve_monotone(data, data.grid, build_stencil(1, SQUARE),
                         SolverConfig(method="monotone", max_iterations=300, debug=True))
    hist = rep.residual_history[1:]
    assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))
    assert rep.convex


def test_monotone_never_raises_values():
    data = build_problem(build_grid(1 / 6), Density.affine(0, 1, 1, SQUARE), ONE, SQUARE)
    g = data.grid
    cfg = SolverConfig(method="monotone")
    cone = initial_guess(data, g, cfg)
    rep = solve_monotone(data, g, build_stencil(1, SQUARE), cfg)
    assert np.all(rep.solution.values <= cone.values + 1e-15)


@pytest.mark.parametrize("method", ["monotone", "newton"])
def test_normalization_and_stability(method):
    f = Density.affine(0, 1, 1, SQUARE)
    data = build_problem(build_grid(1 / 8), f, ONE, SQUARE)
    g = data.grid
    cfg = SolverConfig(method=method, normalization_site=(2, 5), normalization_value=-0.7)
    rep = solve(data, g, build_stencil(1, SQUARE), cfg)
    assert rep.converged
    assert rep.solution((2, 5)) == -0.7
    assert np.abs(rep.solution.values).max() <= stability_bound(data, g, cfg)
    assert rep.omega.sum() == pytest.approx(1.0, abs=1e-9)


def test_non_square_target():
    tri = Polygon([(0, 0), (2, 0), (0, 1)])
    f = Density.constant(1.0, SQUARE)
    data = build_problem(build_grid(1 / 8), f, ONE, tri, normalize_source=True)
    s = build_stencil(1, tri)
    a = solve(data, data.grid, s, SolverConfig(method="newton"))
    b = solve(data, data.grid, s, SolverConfig(method="monotone"))
    assert a.converged and b.converged
    assert np.abs(a.solution.values - b.solution.values).max() <= 10 * 1e-10
    disc = Discretization.for_problem(data, s)
    for k in range(len(data.grid)):
        cell = disc.cell(disc.padded(a.solution.values), k)
        assert tri.contains_polygon(cell, tol=1e-9)


def test_uniqueness_examples():
    data = build_problem(build_grid(1 / 8), Density.affine(0, 1, 1, SQUARE), ONE, SQUARE)
    s = build_stencil(1, SQUARE)
    assert check_uniqueness(data, data.grid, s) <= 1e-6
    assert check_uniqueness(data, data.grid, s, alphas=(1.0, 1.0)) <= 1e-10


def test_other_normalization_site_gives_same_solution():
    data = build_problem(build_grid(1 / 8), Density.affine(0, 1, 1, SQUARE), ONE, SQUARE)
    g = data.grid
    s = build_stencil(1, SQUARE)
    a = solve(data, g, s)
    b = solve(data, g, s, SolverConfig(normalization_site=(1, 6), normalization_value=a.solution((1, 6))))
    assert np.abs(a.solution.values - b.solution.values).max() <= 1e-6


# -- Jacobian ---------------------------------------------------------------


def dense_jacobian(disc, U, skip, step):
    free = [k for k in range(len(disc.layout.sites)) if k != skip]
    base = disc.masses(U)
    J = np.zeros((len(free), len(free)))
    for c, k in enumerate(free):
        T = U.copy()
        si, sj = disc.layout.sites[k]
        T[si, sj] += step
        disc.fill(T)
        J[:, c] = ((disc.masses(T) - base) / step)[free]
    return J


@pytest.mark.parametrize("radius", [1, 2])
def test_jacobian_matches_dense_and_sparsity(radius):
    tri = Polygon([(0, 0), (2, 0), (0, 1)])
    data = build_problem(build_grid(1 / 6), Density.constant(1.0, SQUARE), ONE, tri, normalize_source=True)
    g = data.grid
    s = build_stencil(radius, tri)
    disc = Discretization.for_problem(data, s)
    skip = g.slot[default_normalization_site(g)]
    U = disc.padded(smooth_guess(data, g, SolverConfig()).values)
    omega = disc.masses(U)
    step = 1e-6 * g.h
    jac = _Jacobian(disc, skip)
    J = jac(U, omega, step).toarray()
    D = dense_jacobian(disc, U, skip, step)
    assert np.allclose(J, D, atol=1e-12)
    free = jac.free.tolist()
    for c, k in enumerate(free):
        y = g.index[k]
        rows = set(np.flatnonzero(D[:, c] != 0.0).tolist())
        if not disc.layer_mask[k]:
            # x - h e = y or x = y
            allowed = {free.index(g.slot[(int(y[0] + e[0]), int(y[1] + e[1]))])
                       for e in s if (int(y[0] + e[0]), int(y[1] + e[1])) in g and
                       g.slot[(int(y[0] + e[0]), int(y[1] + e[1]))] != skip}
            allowed.add(c)
            assert rows <= allowed
        else:
            assert rows <= set(jac.col_of[jac.affected[k]].tolist())


def test_threaded_jacobian_equals_serial():
    data = quadratic_problem(1 / 8)
    g = data.grid
    s = build_stencil(2, SQUARE)
    disc = Discretization.for_problem(data, s)
    U = disc.padded(smooth_guess(data, g, SolverConfig()).values)
    omega = disc.masses(U)
    jac = _Jacobian(disc, g.slot[default_normalization_site(g)])
    a = jac(U, omega, 1e-7, threads=1)
    b = jac(U, omega, 1e-7, threads=3)
    assert (a != b).nnz == 0
    c = solve_newton(data, g, s, SolverConfig(threads=2))
    d = solve_newton(data, g, s, SolverConfig(threads=1))
    assert np.array_equal(c.solution.values, d.solution.values)


def test_intermediate_iterates_need_not_be_convex():
    # after one sweep site (1, 1) still has an empty cell and a negative
    # second difference; convexity returns once every mass is positive
    data = build_problem(build_grid(1 / 8), Density.affine(0, 1, 1, SQUARE), ONE, SQUARE)
    s = build_stencil(1, SQUARE)
    one = solve_monotone(data, data.grid, s, SolverConfig(method="monotone", max_iterations=1))
    assert is_discrete_convex(one.solution, s) == (False, ((1, 1), (1, 0)))
    assert not one.converged
    done = solve_monotone(data, data.grid, s, SolverConfig(method="monotone"))
    assert done.converged and is_discrete_convex(done.solution, s)[0]
