"""Pure-Python kernels (reference implementation and fallback backend).

Array conventions shared with the compiled backend:

* ``U``: 2-D float array of mesh values on the padded index box, exterior
  entries holding extension values;
* ``sites``/``ext``: ``(M, 2)`` integer positions in that box;
* ``dirs``: ``(nd, 2)`` integer stencil directions;
* ``coeffs[i, j]``: coefficient of ``p1**i p2**j`` of the target density;
* ``qpts``/``qw``: barycentric triangle rule with weights summing to one;
* ``clip_n``/``clip_c``: extra constraints ``n . p >= c`` (density support).
"""

import math

import numpy as np

AREA_TOL = 1e-14
EXPAND_LIMIT = 60


def _clip(pts, nx, ny, c):
    out = []
    if not pts:
        return out
    px, py = pts[-1]
    sp = nx * px + ny * py - c
    for qx, qy in pts:
        sq = nx * qx + ny * qy - c
        if sq >= 0.0:
            if sp < 0.0:
                t = sp / (sp - sq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
            out.append((qx, qy))
        elif sp >= 0.0:
            t = sp / (sp - sq)
            out.append((px + t * (qx - px), py + t * (qy - py)))
        px, py, sp = qx, qy, sq
    return out


def _cell(offsets, dirs):
    """Cell ``{p : e . p >= offset_e}`` as a vertex loop (list of tuples)."""
    lo1 = lo2 = -math.inf
    hi1 = hi2 = math.inf
    for (a, b), c in zip(dirs, offsets):
        if b == 0 and a != 0:
            if a > 0:
                lo1 = max(lo1, c / a)
            else:
                hi1 = min(hi1, c / a)
        elif a == 0 and b != 0:
            if b > 0:
                lo2 = max(lo2, c / b)
            else:
                hi2 = min(hi2, c / b)
    if not (lo1 < hi1 and lo2 < hi2):
        return []
    if math.isinf(lo1) or math.isinf(hi1) or math.isinf(lo2) or math.isinf(hi2):
        raise ValueError("stencil lacks the canonical directions; cell is unbounded")
    pts = [(lo1, lo2), (hi1, lo2), (hi1, hi2), (lo1, hi2)]
    for (a, b), c in zip(dirs, offsets):
        if a != 0 and b != 0:
            pts = _clip(pts, a, b, c)
            if not pts:
                return []
    return pts


def _offsets(U, i, j, dirs, h, value=None):
    u = U[i][j] if value is None else value
    return [(u - U[i - a][j - b]) / h for a, b in dirs]


def _moments(pts):
    x0, y0 = pts[0]
    a = mx = my = 0.0
    n = len(pts)
    for k in range(n):
        x1, y1 = pts[k][0] - x0, pts[k][1] - y0
        x2, y2 = pts[(k + 1) % n][0] - x0, pts[(k + 1) % n][1] - y0
        cr = x1 * y2 - x2 * y1
        a += cr
        mx += (x1 + x2) * cr
        my += (y1 + y2) * cr
    a *= 0.5
    mx /= 6.0
    my /= 6.0
    # shift first moments back from the local origin
    return a, mx + x0 * a, my + y0 * a


def _poly_eval(coeffs, x, y):
    total = 0.0
    for i in range(len(coeffs) - 1, -1, -1):
        row = coeffs[i]
        acc = 0.0
        for j in range(len(row) - 1, -1, -1):
            acc = acc * y + row[j]
        total = total * x + acc
    return total


def _is_linear(coeffs):
    for i, row in enumerate(coeffs):
        for j, c in enumerate(row):
            if i + j >= 2 and c != 0.0:
                return False
    return True


def _mass(pts, coeffs, linear, qpts, qw, clip):
    for nx, ny, c in clip:
        pts = _clip(pts, nx, ny, c)
        if not pts:
            return 0.0
    if len(pts) < 3:
        return 0.0
    a, mx, my = _moments(pts)
    if a < AREA_TOL:
        return 0.0
    if linear:
        c00 = coeffs[0][0]
        c10 = coeffs[1][0] if len(coeffs) > 1 else 0.0
        c01 = coeffs[0][1] if len(coeffs[0]) > 1 else 0.0
        return c00 * a + c10 * mx + c01 * my
    cx, cy = mx / a, my / a
    total = 0.0
    n = len(pts)
    for k in range(n):
        ax, ay = pts[k]
        bx, by = pts[(k + 1) % n]
        ta = 0.5 * ((ax - cx) * (by - cy) - (bx - cx) * (ay - cy))
        s = 0.0
        for (l0, l1, l2), w in zip(qpts, qw):
            s += w * _poly_eval(coeffs, l0 * cx + l1 * ax + l2 * bx, l0 * cy + l1 * ay + l2 * by)
        total += ta * s
    return total


def _prep(coeffs, qpts, qw, clip_n, clip_c):
    coeffs = np.asarray(coeffs, dtype=float).tolist()
    clip = [(float(n[0]), float(n[1]), float(c)) for n, c in zip(np.asarray(clip_n).reshape(-1, 2), np.asarray(clip_c).ravel())]
    return coeffs, _is_linear(coeffs), np.asarray(qpts).tolist(), np.asarray(qw).tolist(), clip


def cell_vertices(U, si, sj, dirs, h):
    """Raw vertex loop of the cell at padded position ``(si, sj)``."""
    Ul = np.asarray(U).tolist()
    d = [tuple(e) for e in np.asarray(dirs).tolist()]
    pts = _cell(_offsets(Ul, int(si), int(sj), d, h), d)
    return np.array(pts, dtype=float).reshape(-1, 2)


def cell_masses(U, sites, dirs, h, coeffs, qpts, qw, clip_n, clip_c):
    """Density mass of the cell of every site in ``sites``."""
    Ul = np.asarray(U).tolist()
    d = [tuple(e) for e in np.asarray(dirs).tolist()]
    co, lin, qp, qwl, clip = _prep(coeffs, qpts, qw, clip_n, clip_c)
    out = np.empty(len(sites))
    for k, (i, j) in enumerate(np.asarray(sites).tolist()):
        pts = _cell(_offsets(Ul, i, j, d, h), d)
        out[k] = _mass(pts, co, lin, qp, qwl, clip) if pts else 0.0
    return out


def _psi(dx, dy, kverts):
    return max(dx * a + dy * b for a, b in kverts)


def fill_exterior(U, bsites, ext, kverts, h):
    """Write extension values into ``U`` at every position in ``ext`` (in place)."""
    kv = np.asarray(kverts, dtype=float).tolist()
    bl = np.asarray(bsites).tolist()
    bvals = [float(U[i, j]) for i, j in bl]
    for zi, zj in np.asarray(ext).tolist():
        best = math.inf
        for (i, j), v in zip(bl, bvals):
            cand = v + _psi((zi - i) * h, (zj - j) * h, kv)
            if cand < best:
                best = cand
        U[zi, zj] = best


def monotone_sweep(U, sites, skip, mu, dirs, h, coeffs, qpts, qw, clip_n, clip_c,
                   bnd, ext, kverts, delta_max, nbisect):
    """One Gauss-Seidel pass of pointwise lowering (in place on ``U``).

    Sites are visited in the given order; ``skip`` is the normalisation slot.
    Returns the number of sites whose value decreased.
    """
    Ul = np.asarray(U).tolist()
    d = [tuple(e) for e in np.asarray(dirs).tolist()]
    co, lin, qp, qwl, clip = _prep(coeffs, qpts, qw, clip_n, clip_c)
    kv = np.asarray(kverts, dtype=float).tolist()
    extl = np.asarray(ext).tolist()
    shape = np.shape(U)
    is_ext = set(map(tuple, extl))
    sig_neg = [h * max(-a * p - b * q for p, q in kv) for a, b in d]
    changed = 0
    for k, (i, j) in enumerate(np.asarray(sites).tolist()):
        if k == skip:
            continue
        v = Ul[i][j]
        boundary = bool(bnd[k])
        nb = []
        for (a, b), sn in zip(d, sig_neg):
            q = (i - a, j - b)
            nb.append((Ul[q[0]][q[1]], boundary and q in is_ext, sn))

        def mass_at(t):
            offs = []
            for uq, dep, sn in nb:
                if dep:
                    uq = min(uq, t + sn)
                offs.append((t - uq) / h)
            pts = _cell(offs, d)
            return _mass(pts, co, lin, qp, qwl, clip) if pts else 0.0

        target = mu[k]
        if mass_at(v) >= target:
            continue
        lo, hi = 0.0, delta_max
        expand = 0
        while mass_at(v - hi) <= target and expand < EXPAND_LIMIT:
            lo, hi = hi, 2.0 * hi
            expand += 1
        for _ in range(nbisect):
            mid = 0.5 * (lo + hi)
            if mass_at(v - mid) <= target:
                lo = mid
            else:
                hi = mid
        if lo <= 0.0:
            continue
        changed += 1
        nv = v - lo
        Ul[i][j] = nv
        if boundary:
            for zi, zj in extl:
                cand = nv + _psi((zi - i) * h, (zj - j) * h, kv)
                if cand < Ul[zi][zj]:
                    Ul[zi][zj] = cand
    U[...] = np.asarray(Ul, dtype=float).reshape(shape)
    return changed
