from math import factorial

import numpy as np
import pytest

from monge2bvp.quadrature import triangle_rule


def reference_monomial(i, j):
    # integral of x^i y^j over the triangle (0,0), (1,0), (0,1)
    return factorial(i) * factorial(j) / factorial(i + j + 2)


@pytest.mark.parametrize("degree", range(1, 11))
def test_rule_exact_up_to_degree(degree):
    pts, w = triangle_rule(degree)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    x, y = pts[:, 1], pts[:, 2]
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            got = 0.5 * float(w @ (x ** i * y ** j))
            assert got == pytest.approx(reference_monomial(i, j), rel=1e-12, abs=1e-15)


def test_barycentric_points_are_valid():
    for degree in range(1, 9):
        pts, _ = triangle_rule(degree)
        assert np.allclose(pts.sum(axis=1), 1.0)
        assert np.all(pts >= -1e-15)


def test_degree_must_be_positive():
    with pytest.raises(ValueError):
        triangle_rule(0)
