import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monge2bvp.extension import (
    ConeFunction,
    MeshFunction,
    cone_samples,
    cone_value,
    extend,
    is_discrete_convex,
    second_difference,
    second_differences,
)
from monge2bvp.geometry import Polygon, support_function
from monge2bvp.lattice import Layout, build_grid, build_stencil, edge_normals, extension_mask

SQUARE = Polygon.box(0, 0, 1, 1)
TRI = Polygon([(0, 0), (2, 0), (0, 1)])


def layer_sites(grid, normals):
    """Sites with a canonical or edge-normal neighbour outside the grid."""
    dirs = [(1, 0), (0, 1)] + list(normals)
    out = []
    for k, (i, j) in enumerate(grid.index.tolist()):
        if any((i + a, j + b) not in grid or (i - a, j - b) not in grid for a, b in dirs):
            out.append(k)
    return out


def brute_extension(fn, x):
    """Direct evaluation of the min-max formula over the layer and target vertices."""
    g = fn.grid
    best = np.inf
    for k in layer_sites(g, edge_normals(fn.target)):
        y = g.index[k]
        lin = max(float(np.dot((np.asarray(x) - y) * g.h, a)) for a in fn.target.vertices)
        best = min(best, fn.values[k] + lin)
    return best


def quadratic(grid, target=SQUARE, a=1.0, b=1.0):
    return MeshFunction.from_function(grid, target, lambda p: 0.5 * (a * p[0] ** 2 + b * p[1] ** 2))


def test_extend_returns_stored_values():
    g = build_grid(0.25)
    fn = MeshFunction(g, np.arange(9.0), SQUARE)
    for k, ij in enumerate(g.index.tolist()):
        assert extend(fn, ij) == k


def test_extend_zero_function_example():
    g = build_grid(0.25)
    fn = MeshFunction(g, np.zeros(9), SQUARE)
    assert extend(fn, (5, 2)) == pytest.approx(0.5, abs=1e-15)
    assert extend(fn, (5, 2)) == pytest.approx(brute_extension(fn, (5, 2)), abs=0)


@pytest.mark.parametrize("target", [SQUARE, TRI, Polygon([(0, 0), (3, 1), (1, 2)])])
def test_cone_reproduced_by_extension(target):
    g = build_grid(1 / 8)
    outside = [x for x in itertools.product(range(-4, 13), repeat=2) if x not in g]
    for apex in g.index.tolist():
        fn = cone_samples(g, target, apex, level=0.7)
        cone = ConeFunction(tuple(g.point(apex)), 0.7, target)
        for x in outside:
            assert fn(x) == pytest.approx(cone(np.asarray(x) / 8), abs=1e-12)


def test_extension_layer_covers_long_normals():
    # (4, 6) + (1, 2) leaves the grid although all canonical neighbours of
    # (4, 6) are sites; without it in the layer the cone below is not reproduced
    g = build_grid(1 / 8)
    k = g.slot[(4, 6)]
    assert not g.boundary_mask[k]
    assert extension_mask(g, TRI)[k]
    assert np.array_equal(extension_mask(g, SQUARE), g.boundary_mask)
    assert sorted(np.flatnonzero(extension_mask(g, TRI))) == layer_sites(g, edge_normals(TRI))
    fn = cone_samples(g, TRI, (2, 2))
    assert fn((5, 8)) == pytest.approx(0.75, abs=1e-15)


def test_cone_value_examples():
    c = ConeFunction((0.0, 0.0), 0.0, SQUARE)
    assert cone_value(c, (1, 1)) == 2.0
    assert cone_value(c, (-1, -1)) == 0.0
    assert cone_value(ConeFunction((0.3, 0.2), 1.5, TRI), (0.3, 0.2)) == 1.5


@given(st.floats(0.1, 5.0), st.floats(-2, 2), st.floats(-2, 2))
def test_cone_is_positively_homogeneous(lam, x, y):
    c = ConeFunction((0.1, -0.3), 0.4, TRI)
    p = np.array([x, y])
    apex = np.array(c.apex)
    assert c(apex + lam * (p - apex)) - 0.4 == pytest.approx(lam * (c(p) - 0.4), abs=1e-12)


def test_second_difference_examples():
    h = 1 / 8
    g = build_grid(h)
    fn = quadratic(g)
    assert second_difference(fn, (4, 4), (1, 0)) == pytest.approx(h * h, abs=1e-15)
    assert second_difference(fn, (4, 4), (2, 1), h) == pytest.approx(5 * h * h, abs=1e-15)
    aff = MeshFunction.from_function(g, SQUARE, lambda p: 0.3 * p[0] - 0.7 * p[1] + 2)
    assert second_difference(aff, (4, 4), (1, 1)) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        second_difference(fn, (4, 4), (1, 0), h=0.5)


def test_discrete_convexity_examples():
    g = build_grid(0.25)
    s = build_stencil(1, SQUARE)
    assert is_discrete_convex(quadratic(g), s) == (True, None)
    v = np.zeros(9)
    v[g.slot[(2, 2)]] = 1.0
    assert is_discrete_convex(MeshFunction(g, v, SQUARE), s) == (False, ((2, 2), (1, 0)))
    assert is_discrete_convex(cone_samples(g, SQUARE, (1, 2)), s)[0]


def test_second_differences_match_pointwise():
    g = build_grid(1 / 8)
    s = build_stencil(2, SQUARE)
    fn = cone_samples(g, SQUARE, (3, 3))
    d2 = second_differences(fn, s, Layout(g, s))
    for k, ij in enumerate(g.index.tolist()):
        for m, e in enumerate(s):
            assert d2[k, m] == pytest.approx(second_difference(fn, ij, e), abs=1e-14)


def test_cache_dropped_when_boundary_changes():
    g = build_grid(0.25)
    fn = MeshFunction(g, np.zeros(9), SQUARE)
    before = fn((5, 2))
    fn.set_value((3, 2), -1.0)
    assert fn((5, 2)) == pytest.approx(brute_extension(fn, (5, 2)))
    assert fn((5, 2)) != before
    fn.values = np.full(9, 2.0)
    assert fn((5, 2)) == pytest.approx(2.5)


def test_values_are_read_only():
    fn = MeshFunction(build_grid(0.25), np.zeros(9), SQUARE)
    with pytest.raises(ValueError):
        fn.values[0] = 1.0


def test_extend_witness_realises_value():
    g = build_grid(0.25)
    fn = MeshFunction(g, np.linspace(0, 1, 9), TRI)
    val, slot, j = fn.extend_witness((6, -1))
    y = g.index[slot]
    assert val == pytest.approx(fn.values[slot] + (np.array([6, -1]) - y) * 0.25 @ TRI.vertices[j])


def test_csv_and_json():
    g = build_grid(0.5)
    fn = MeshFunction(g, [1 / 3], SQUARE)
    assert fn.to_csv() == "i,j,value\n1,1,0.33333333333333331\n"
    assert '"values": [0.3333333333333333]' in fn.to_json()


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        MeshFunction(build_grid(0.25), np.zeros(4), SQUARE)


# -- properties -------------------------------------------------------------

seeds = st.integers(0, 2**31 - 1)


def random_convex_mesh(seed, h=1 / 8, target=SQUARE):
    """Max of a few affine functions with slopes in ``target``, plus a small convex quadratic."""
    rng = np.random.default_rng(seed)
    g = build_grid(h)
    x0, y0, x1, y1 = target.bounding_box()
    slopes = rng.uniform((x0, y0), (x1, y1), size=(4, 2))
    offs = rng.uniform(-0.3, 0.3, 4)
    c = rng.uniform(0, 0.3)
    vals = (g.points @ slopes.T + offs).max(axis=1) + c * (g.points ** 2).sum(axis=1)
    return MeshFunction(g, vals, target)


@given(seeds)
def test_extension_dominated_by_every_boundary_candidate(seed):
    fn = random_convex_mesh(seed)
    g = fn.grid
    rng = np.random.default_rng(seed)
    for x in rng.integers(-4, 13, size=(10, 2)):
        if tuple(x) in g:
            continue
        v = extend(fn, x)
        assert v == pytest.approx(brute_extension(fn, x), abs=1e-14)
        for k in np.flatnonzero(g.boundary_mask):
            cand = fn.values[k] + max(float(np.dot((x - g.index[k]) * g.h, a)) for a in SQUARE.vertices)
            assert v <= cand + 1e-15


@given(seeds)
def test_lipschitz_bound(seed):
    s = build_stencil(1, SQUARE)
    fn = random_convex_mesh(seed)
    if not is_discrete_convex(fn, s)[0]:
        return
    C = max(max(abs(support_function(SQUARE, r)), abs(support_function(SQUARE, -np.asarray(r))))
            for r in [(1, 0), (0, 1)])
    g = fn.grid
    rng = np.random.default_rng(seed)
    for a, b in rng.integers(0, len(g), size=(30, 2)):
        d = np.abs(g.points[a] - g.points[b]).sum()
        assert abs(fn.values[a] - fn.values[b]) <= C * d + 1e-12


@given(seeds)
def test_increments_monotone_and_bounded(seed):
    s = build_stencil(2, SQUARE)
    fn = random_convex_mesh(seed, h=1 / 6)
    if not is_discrete_convex(fn, s)[0]:
        return
    g = fn.grid
    h = g.h
    for e in s:
        lo = -support_function(SQUARE, -np.asarray(e)) * h
        hi = support_function(SQUARE, e) * h
        for start in g.index.tolist():
            line = [tuple(start)]
            while (line[-1][0] + e[0], line[-1][1] + e[1]) in g:
                line.append((line[-1][0] + e[0], line[-1][1] + e[1]))
            inc = [fn(q) - fn(p) for p, q in zip(line, line[1:])]
            assert all(b >= a - 1e-12 for a, b in zip(inc, inc[1:]))
            assert all(lo - 1e-12 <= t <= hi + 1e-12 for t in inc)
