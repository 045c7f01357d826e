"""Symmetric Gauss rules on triangles.

Rules are given in barycentric coordinates with weights summing to one, so
``sum(w * g(point)) * area`` approximates the integral of ``g`` over the
triangle. Degrees 1 to 5 use the classical Dunavant points; higher degrees
fall back to a collapsed (Duffy) tensor product of Gauss-Legendre rules.
"""

from functools import lru_cache

import numpy as np


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    pts = [(a, a, b), (a, b, a), (b, a, a)]
    return pts, [w] * 3


_DUNAVANT = {
    1: ([(1 / 3, 1 / 3, 1 / 3)], [1.0]),
    2: _orbit3(1 / 6, 1 / 3),
}


def _build_dunavant():
    pts, wts = [(1 / 3, 1 / 3, 1 / 3)], [-27 / 48]
    p, w = _orbit3(0.2, 25 / 48)
    _DUNAVANT[3] = (pts + p, wts + w)

    # tabulated to 15 digits; renormalised so the weights sum to one
    p1, w1 = _orbit3(0.445948490915965, 0.223381589678011)
    p2, w2 = _orbit3(0.091576213509771, 0.109951743655322)
    total = sum(w1 + w2)
    _DUNAVANT[4] = (p1 + p2, [w / total for w in w1 + w2])

    r15 = 15.0**0.5
    p1, w1 = _orbit3((6 + r15) / 21, (155 + r15) / 1200)
    p2, w2 = _orbit3((6 - r15) / 21, (155 - r15) / 1200)
    _DUNAVANT[5] = ([(1 / 3, 1 / 3, 1 / 3)] + p1 + p2, [0.225] + w1 + w2)


_build_dunavant()


@lru_cache(maxsize=None)
def _collapsed_rule(degree):
    n = (degree + 3) // 2
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    # Duffy map (s, t) -> (s, (1 - s) t) from the unit square onto the triangle.
    xs, xt = np.meshgrid(x, x, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    xs = xs.ravel()
    xt = xt.ravel()
    lam1 = xs
    lam2 = (1.0 - xs) * xt
    lam0 = 1.0 - lam1 - lam2
    weights = 2.0 * (ws * wt).ravel() * (1.0 - xs)
    return np.column_stack([lam0, lam1, lam2]), weights


def triangle_rule(degree=5):
    """Return ``(barycentric_points, weights)`` exact for polynomials of ``degree``.

    Weights sum to one (they are relative to the triangle area).
    """
    degree = int(degree)
    if degree < 1:
        raise ValueError("quadrature degree must be >= 1")
    if degree in _DUNAVANT:
        pts, wts = _DUNAVANT[degree]
        return np.array(pts, dtype=float), np.array(wts, dtype=float)
    pts, wts = _collapsed_rule(degree)
    return pts.copy(), wts.copy()
