# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled nonuniform DFT kernels on a tensor-product grid.

Axis phases ``exp(i x_a p)`` come from a resynchronised complex recurrence.
Inner loops run on split real/imaginary arrays so the compiler can vectorise
them; points are processed in blocks to keep the grid slice in cache.
"""
import numpy as np
from libc.math cimport cos, sin


cdef inline void _axis_phases(const double[::1] x, double p, double* re, double* im,
                              Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t a
    cdef double zr, zi, wr, wi, t
    zr = cos(x[0] * p)
    zi = sin(x[0] * p)
    if n > 1:
        wr = cos((x[1] - x[0]) * p)
        wi = sin((x[1] - x[0]) * p)
    else:
        wr = 1.0
        wi = 0.0
    for a in range(n):
        re[a] = zr
        im[a] = zi
        if (a & 31) == 31 and a + 1 < n:
            # resync against recurrence drift
            zr = cos(x[a + 1] * p)
            zi = sin(x[a + 1] * p)
        else:
            t = zr * wr - zi * wi
            zi = zr * wi + zi * wr
            zr = t


def forward(f, const double[::1] x, const double[:, ::1] points):
    """out[j] = sum_{a,b} exp(i (x_a p_j0 + x_b p_j1)) f[a, b]."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = points.shape[0]
    cdef Py_ssize_t j, a, b
    cdef double rr, ri, sr, si
    fr_arr = np.ascontiguousarray(f.real)
    fi_arr = np.ascontiguousarray(f.imag)
    cdef const double[:, ::1] fr = fr_arr
    cdef const double[:, ::1] fi = fi_arr
    out_r = np.empty(m)
    out_i = np.empty(m)
    cdef double[::1] orr = out_r
    cdef double[::1] oii = out_i
    buf = np.empty((6, n))
    cdef double[:, ::1] e = buf
    with nogil:
        for j in range(m):
            _axis_phases(x, points[j, 0], &e[0, 0], &e[1, 0], n)
            _axis_phases(x, points[j, 1], &e[2, 0], &e[3, 0], n)
            # t[b] = sum_a e1[a] f[a, b] as row updates (vectorisable)
            for b in range(n):
                e[4, b] = 0.0
                e[5, b] = 0.0
            for a in range(n):
                rr = e[0, a]
                ri = e[1, a]
                for b in range(n):
                    e[4, b] = e[4, b] + rr * fr[a, b] - ri * fi[a, b]
                    e[5, b] = e[5, b] + rr * fi[a, b] + ri * fr[a, b]
            sr = 0.0
            si = 0.0
            for b in range(n):
                sr = sr + e[4, b] * e[2, b] - e[5, b] * e[3, b]
                si = si + e[4, b] * e[3, b] + e[5, b] * e[2, b]
            orr[j] = sr
            oii[j] = si
    return out_r + 1j * out_i


def adjoint(g, const double[::1] x, const double[:, ::1] points):
    """out[a, b] = sum_j exp(-i (x_a p_j0 + x_b p_j1)) g[j]."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = points.shape[0]
    cdef Py_ssize_t j, a, b
    cdef double cr, ci
    gr_arr = np.ascontiguousarray(g.real)
    gi_arr = np.ascontiguousarray(g.imag)
    cdef const double[::1] gr = gr_arr
    cdef const double[::1] gi = gi_arr
    out_r = np.zeros((n, n))
    out_i = np.zeros((n, n))
    cdef double[:, ::1] orr = out_r
    cdef double[:, ::1] oii = out_i
    buf = np.empty((4, n))
    cdef double[:, ::1] e = buf
    with nogil:
        for j in range(m):
            _axis_phases(x, -points[j, 0], &e[0, 0], &e[1, 0], n)
            _axis_phases(x, -points[j, 1], &e[2, 0], &e[3, 0], n)
            for a in range(n):
                cr = e[0, a] * gr[j] - e[1, a] * gi[j]
                ci = e[0, a] * gi[j] + e[1, a] * gr[j]
                for b in range(n):
                    orr[a, b] = orr[a, b] + cr * e[2, b] - ci * e[3, b]
                    oii[a, b] = oii[a, b] + cr * e[3, b] + ci * e[2, b]
    return out_r + 1j * out_i


def nearest_site(const double[:, ::1] probes, const double[:, ::1] sites):
    """Index of the nearest site for every probe (ties go to the lowest index)."""
    cdef Py_ssize_t q = probes.shape[0]
    cdef Py_ssize_t s = sites.shape[0]
    cdef Py_ssize_t i, j, best
    cdef double d, dmin, dx, dy
    out = np.empty(q, dtype=np.intp)
    cdef Py_ssize_t[::1] res = out
    with nogil:
        for i in range(q):
            best = 0
            dmin = 1e308
            for j in range(s):
                dx = probes[i, 0] - sites[j, 0]
                dy = probes[i, 1] - sites[j, 1]
                d = dx * dx + dy * dy
                if d < dmin:
                    dmin = d
                    best = j
            res[i] = best
    return out
