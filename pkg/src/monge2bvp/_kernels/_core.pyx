# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same contract as ``_pure``."""

import numpy as np

from libc.math cimport INFINITY, isinf
from libc.stdint cimport int64_t
from libc.stdlib cimport free, malloc, calloc

cdef double AREA_TOL = 1e-14
cdef int EXPAND_LIMIT = 60


cdef int _clip(const double* src, int n, double* dst, double nx, double ny, double c) noexcept nogil:
    cdef int m = 0, k
    cdef double px, py, sp, qx, qy, sq, t
    if n == 0:
        return 0
    px = src[2 * (n - 1)]
    py = src[2 * (n - 1) + 1]
    sp = nx * px + ny * py - c
    for k in range(n):
        qx = src[2 * k]
        qy = src[2 * k + 1]
        sq = nx * qx + ny * qy - c
        if sq >= 0.0:
            if sp < 0.0:
                t = sp / (sp - sq)
                dst[2 * m] = px + t * (qx - px)
                dst[2 * m + 1] = py + t * (qy - py)
                m += 1
            dst[2 * m] = qx
            dst[2 * m + 1] = qy
            m += 1
        elif sp >= 0.0:
            t = sp / (sp - sq)
            dst[2 * m] = px + t * (qx - px)
            dst[2 * m + 1] = py + t * (qy - py)
            m += 1
        px = qx
        py = qy
        sp = sq
    return m


cdef struct Work:
    double* a
    double* b
    double* offs
    double* nbval
    double* signeg
    char* nbdep


cdef int _work_alloc(Work* w, int nd, int nc) noexcept nogil:
    cdef int cap = 2 * (nd + nc + 8)
    w.a = <double*> malloc(cap * sizeof(double))
    w.b = <double*> malloc(cap * sizeof(double))
    w.offs = <double*> malloc((nd + 1) * sizeof(double))
    w.nbval = <double*> malloc((nd + 1) * sizeof(double))
    w.signeg = <double*> malloc((nd + 1) * sizeof(double))
    w.nbdep = <char*> malloc((nd + 1) * sizeof(char))
    if w.a == NULL or w.b == NULL or w.offs == NULL or w.nbval == NULL or w.signeg == NULL or w.nbdep == NULL:
        return -1
    return 0


cdef void _work_free(Work* w) noexcept nogil:
    free(w.a)
    free(w.b)
    free(w.offs)
    free(w.nbval)
    free(w.signeg)
    free(w.nbdep)


cdef int _cell(const double* offs, const int64_t[:, ::1] dirs, Work* w, double** out) noexcept nogil:
    """Vertex loop of ``{p : e . p >= offs_e}``; -1 if the box is unbounded."""
    cdef int nd = dirs.shape[0], k, n
    cdef double lo1 = -INFINITY, hi1 = INFINITY, lo2 = -INFINITY, hi2 = INFINITY
    cdef double c, v
    cdef int64_t a, b
    cdef double* src = w.a
    cdef double* dst = w.b
    cdef double* tmp
    for k in range(nd):
        a = dirs[k, 0]
        b = dirs[k, 1]
        c = offs[k]
        if b == 0 and a != 0:
            v = c / a
            if a > 0:
                if v > lo1:
                    lo1 = v
            elif v < hi1:
                hi1 = v
        elif a == 0 and b != 0:
            v = c / b
            if b > 0:
                if v > lo2:
                    lo2 = v
            elif v < hi2:
                hi2 = v
    if not (lo1 < hi1 and lo2 < hi2):
        out[0] = src
        return 0
    if isinf(lo1) or isinf(hi1) or isinf(lo2) or isinf(hi2):
        return -1
    src[0] = lo1; src[1] = lo2
    src[2] = hi1; src[3] = lo2
    src[4] = hi1; src[5] = hi2
    src[6] = lo1; src[7] = hi2
    n = 4
    for k in range(nd):
        a = dirs[k, 0]
        b = dirs[k, 1]
        if a != 0 and b != 0:
            n = _clip(src, n, dst, <double> a, <double> b, offs[k])
            tmp = src
            src = dst
            dst = tmp
            if n == 0:
                break
    out[0] = src
    return n


cdef double _poly_eval(const double[:, ::1] co, double x, double y) noexcept nogil:
    cdef int i, j
    cdef double total = 0.0, acc
    for i in range(co.shape[0] - 1, -1, -1):
        acc = 0.0
        for j in range(co.shape[1] - 1, -1, -1):
            acc = acc * y + co[i, j]
        total = total * x + acc
    return total


cdef double _mass(double* pts, int n, Work* w, const double[:, ::1] co, bint linear,
                  const double[:, ::1] qpts, const double[::1] qw,
                  const double[:, ::1] clip_n, const double[::1] clip_c) noexcept nogil:
    cdef int k, q, j
    cdef double* src = pts
    cdef double* dst = w.b if pts == w.a else w.a
    cdef double* tmp
    cdef double x0, y0, x1, y1, x2, y2, cr, a = 0.0, mx = 0.0, my = 0.0
    cdef double cx, cy, ax, ay, bx, by, ta, s, total, c10, c01
    for k in range(clip_n.shape[0]):
        n = _clip(src, n, dst, clip_n[k, 0], clip_n[k, 1], clip_c[k])
        tmp = src
        src = dst
        dst = tmp
        if n == 0:
            return 0.0
    if n < 3:
        return 0.0
    x0 = src[0]
    y0 = src[1]
    for k in range(n):
        x1 = src[2 * k] - x0
        y1 = src[2 * k + 1] - y0
        q = (k + 1) % n
        x2 = src[2 * q] - x0
        y2 = src[2 * q + 1] - y0
        cr = x1 * y2 - x2 * y1
        a += cr
        mx += (x1 + x2) * cr
        my += (y1 + y2) * cr
    a *= 0.5
    mx = mx / 6.0 + x0 * a
    my = my / 6.0 + y0 * a
    if a < AREA_TOL:
        return 0.0
    if linear:
        c10 = co[1, 0] if co.shape[0] > 1 else 0.0
        c01 = co[0, 1] if co.shape[1] > 1 else 0.0
        return co[0, 0] * a + c10 * mx + c01 * my
    cx = mx / a
    cy = my / a
    total = 0.0
    for k in range(n):
        q = (k + 1) % n
        ax = src[2 * k]
        ay = src[2 * k + 1]
        bx = src[2 * q]
        by = src[2 * q + 1]
        ta = 0.5 * ((ax - cx) * (by - cy) - (bx - cx) * (ay - cy))
        s = 0.0
        for j in range(qw.shape[0]):
            s += qw[j] * _poly_eval(co, qpts[j, 0] * cx + qpts[j, 1] * ax + qpts[j, 2] * bx,
                                    qpts[j, 0] * cy + qpts[j, 1] * ay + qpts[j, 2] * by)
        total += ta * s
    return total


cdef bint _is_linear(const double[:, ::1] co):
    cdef int i, j
    for i in range(co.shape[0]):
        for j in range(co.shape[1]):
            if i + j >= 2 and co[i, j] != 0.0:
                return False
    return True


def cell_vertices(double[:, ::1] U, int64_t si, int64_t sj, const int64_t[:, ::1] dirs, double h):
    cdef Work w
    cdef int k, n, nd = dirs.shape[0]
    cdef double* pts
    if _work_alloc(&w, nd, 0) != 0:
        _work_free(&w)
        raise MemoryError()
    try:
        for k in range(nd):
            w.offs[k] = (U[si, sj] - U[si - dirs[k, 0], sj - dirs[k, 1]]) / h
        n = _cell(w.offs, dirs, &w, &pts)
        if n < 0:
            raise ValueError("stencil lacks the canonical directions; cell is unbounded")
        out = np.empty((n, 2))
        for k in range(n):
            out[k, 0] = pts[2 * k]
            out[k, 1] = pts[2 * k + 1]
        return out
    finally:
        _work_free(&w)


def cell_masses(double[:, ::1] U, const int64_t[:, ::1] sites, const int64_t[:, ::1] dirs, double h,
                const double[:, ::1] coeffs, const double[:, ::1] qpts, const double[::1] qw,
                const double[:, ::1] clip_n, const double[::1] clip_c):
    cdef Work w
    cdef int k, e, n, nd = dirs.shape[0], bad = 0
    cdef int64_t i, j
    cdef double* pts
    cdef bint linear = _is_linear(coeffs)
    out = np.zeros(sites.shape[0])
    cdef double[::1] res = out
    if _work_alloc(&w, nd, clip_n.shape[0]) != 0:
        _work_free(&w)
        raise MemoryError()
    with nogil:
        for k in range(sites.shape[0]):
            i = sites[k, 0]
            j = sites[k, 1]
            for e in range(nd):
                w.offs[e] = (U[i, j] - U[i - dirs[e, 0], j - dirs[e, 1]]) / h
            n = _cell(w.offs, dirs, &w, &pts)
            if n < 0:
                bad = 1
                break
            if n > 0:
                res[k] = _mass(pts, n, &w, coeffs, linear, qpts, qw, clip_n, clip_c)
    _work_free(&w)
    if bad:
        raise ValueError("stencil lacks the canonical directions; cell is unbounded")
    return out


cdef inline double _psi(double dx, double dy, const double[:, ::1] kv) noexcept nogil:
    cdef int m
    cdef double best = -INFINITY, v
    for m in range(kv.shape[0]):
        v = dx * kv[m, 0] + dy * kv[m, 1]
        if v > best:
            best = v
    return best


def fill_exterior(double[:, ::1] U, const int64_t[:, ::1] bsites, const int64_t[:, ::1] ext,
                  const double[:, ::1] kverts, double h):
    cdef int z, b
    cdef double best, cand
    cdef int64_t zi, zj, i, j
    with nogil:
        for z in range(ext.shape[0]):
            zi = ext[z, 0]
            zj = ext[z, 1]
            best = INFINITY
            for b in range(bsites.shape[0]):
                i = bsites[b, 0]
                j = bsites[b, 1]
                cand = U[i, j] + _psi((zi - i) * h, (zj - j) * h, kverts)
                if cand < best:
                    best = cand
            U[zi, zj] = best


cdef double _trial_mass(double t, int nd, Work* w, const int64_t[:, ::1] dirs, double h,
                        const double[:, ::1] co, bint linear, const double[:, ::1] qpts,
                        const double[::1] qw, const double[:, ::1] clip_n,
                        const double[::1] clip_c, int* bad) noexcept nogil:
    cdef int e, n
    cdef double uq
    cdef double* pts
    for e in range(nd):
        uq = w.nbval[e]
        if w.nbdep[e] and t + w.signeg[e] < uq:
            uq = t + w.signeg[e]
        w.offs[e] = (t - uq) / h
    n = _cell(w.offs, dirs, w, &pts)
    if n < 0:
        bad[0] = 1
        return 0.0
    if n == 0:
        return 0.0
    return _mass(pts, n, w, co, linear, qpts, qw, clip_n, clip_c)


def monotone_sweep(double[:, ::1] U, const int64_t[:, ::1] sites, int skip, const double[::1] mu,
                   const int64_t[:, ::1] dirs, double h, const double[:, ::1] coeffs,
                   const double[:, ::1] qpts, const double[::1] qw,
                   const double[:, ::1] clip_n, const double[::1] clip_c,
                   const signed char[::1] bnd, const int64_t[:, ::1] ext,
                   const double[:, ::1] kverts, double delta_max, int nbisect):
    cdef Work w
    cdef int k, e, m, z, expand, it, changed = 0, bad = 0
    cdef int nd = dirs.shape[0]
    cdef int64_t i, j, qi, qj, zi, zj
    cdef double v, lo, hi, mid, target, nv, cand, s
    cdef bint linear = _is_linear(coeffs)
    cdef Py_ssize_t n0 = U.shape[0], n1 = U.shape[1]
    cdef char* exmask = <char*> calloc(n0 * n1, sizeof(char))
    if exmask == NULL or _work_alloc(&w, nd, clip_n.shape[0]) != 0:
        free(exmask)
        _work_free(&w)
        raise MemoryError()
    with nogil:
        for z in range(ext.shape[0]):
            exmask[ext[z, 0] * n1 + ext[z, 1]] = 1
        for e in range(nd):
            s = -INFINITY
            for m in range(kverts.shape[0]):
                cand = -(dirs[e, 0] * kverts[m, 0] + dirs[e, 1] * kverts[m, 1])
                if cand > s:
                    s = cand
            w.signeg[e] = h * s
        for k in range(sites.shape[0]):
            if k == skip:
                continue
            i = sites[k, 0]
            j = sites[k, 1]
            v = U[i, j]
            for e in range(nd):
                qi = i - dirs[e, 0]
                qj = j - dirs[e, 1]
                w.nbval[e] = U[qi, qj]
                w.nbdep[e] = bnd[k] != 0 and exmask[qi * n1 + qj] != 0
            target = mu[k]
            if _trial_mass(v, nd, &w, dirs, h, coeffs, linear, qpts, qw, clip_n, clip_c, &bad) >= target:
                continue
            lo = 0.0
            hi = delta_max
            expand = 0
            while expand < EXPAND_LIMIT and \
                    _trial_mass(v - hi, nd, &w, dirs, h, coeffs, linear, qpts, qw, clip_n, clip_c, &bad) <= target:
                lo = hi
                hi = 2.0 * hi
                expand += 1
            for it in range(nbisect):
                mid = 0.5 * (lo + hi)
                if _trial_mass(v - mid, nd, &w, dirs, h, coeffs, linear, qpts, qw, clip_n, clip_c, &bad) <= target:
                    lo = mid
                else:
                    hi = mid
            if bad:
                break
            if lo <= 0.0:
                continue
            changed += 1
            nv = v - lo
            U[i, j] = nv
            if bnd[k]:
                for z in range(ext.shape[0]):
                    zi = ext[z, 0]
                    zj = ext[z, 1]
                    cand = nv + _psi((zi - i) * h, (zj - j) * h, kverts)
                    if cand < U[zi, zj]:
                        U[zi, zj] = cand
    free(exmask)
    _work_free(&w)
    if bad:
        raise ValueError("stencil lacks the canonical directions; cell is unbounded")
    return changed
