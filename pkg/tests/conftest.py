import re

import numpy as np
import pytest
from hypothesis import settings
from scipy.spatial import ConvexHull

from monge2bvp.geometry import Polygon

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def hull_polygon(points) -> Polygon:
    pts = np.asarray(points, dtype=float)
    hull = ConvexHull(pts)
    return Polygon(pts[hull.vertices])


def random_convex_polygon(rng, n=10, scale=1.0, center=(0.0, 0.0)) -> Polygon:
    while True:
        pts = rng.uniform(-scale, scale, size=(n, 2)) + np.asarray(center)
        try:
            poly = hull_polygon(pts)
        except Exception:
            continue
        if poly.area > 0.05 * scale * scale:
            return poly


def mc_area(poly_or_contains, box, n, rng, chunk=2_000_000):
    """Monte-Carlo membership estimate of an area inside ``box = (x0, y0, x1, y1)``."""
    x0, y0, x1, y1 = box
    hits = 0
    done = 0
    normals, offsets = poly_or_contains
    while done < n:
        m = min(chunk, n - done)
        p = np.column_stack([rng.uniform(x0, x1, m), rng.uniform(y0, y1, m)])
        hits += int(np.all(p @ normals.T >= offsets, axis=1).sum())
        done += m
    return hits / n * (x1 - x0) * (y1 - y0)


@pytest.fixture
def unit_square():
    return Polygon.box(0, 0, 1, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance summary -----------------------------------------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m or (report.when != "call" and report.passed):
        return
    ok = report.passed and not hasattr(report, "wasxfail")
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    _CRITERIA[int(m.group(1))] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())
