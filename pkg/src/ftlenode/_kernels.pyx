# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled batched flow/tangent kernels over a packed parameter vector.

Same contract as ftlenode._kernels_py: explicit Euler with per-step block
indices, snapshots at sorted record steps, non-finite values propagating
untouched. Each call runs serially with the GIL released, so callers can
parallelize across point chunks with plain threads.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline double _act(double z, int act_id) noexcept nogil:
    if act_id == 0:
        return tanh(z)
    return 1.0 / (1.0 + exp(-z))


cdef inline double _act_deriv(double s, int act_id) noexcept nogil:
    if act_id == 0:
        return 1.0 - s * s
    return s * (1.0 - s)


cdef void _field_value(const double* theta, const i64[:, ::1] ldims,
                       const i64[:, :, ::1] offsets, int act_id, int ell,
                       Py_ssize_t k, const double* x, Py_ssize_t d,
                       double* hbuf, double* ba, double* bb,
                       double* out) noexcept nogil:
    """out <- f_k(x); hbuf/ba/bb are max_width scratch."""
    cdef Py_ssize_t i, r, c, t, p, h, q
    cdef const double* w
    cdef const double* b
    cdef const double* v
    cdef const double* a
    cdef const double* cur = x
    cdef double* dst
    cdef double acc
    for i in range(ell):
        p = ldims[i, 0]
        h = ldims[i, 1]
        q = ldims[i, 2]
        w = theta + offsets[k, i, 0]
        b = theta + offsets[k, i, 1]
        v = theta + offsets[k, i, 2]
        a = theta + offsets[k, i, 3]
        for r in range(h):
            acc = b[r]
            for c in range(p):
                acc += w[r * p + c] * cur[c]
            hbuf[r] = _act(acc, act_id)
        dst = out if i == ell - 1 else (ba if (i & 1) == 0 else bb)
        for t in range(q):
            acc = a[t]
            for r in range(h):
                acc += v[t * h + r] * hbuf[r]
            dst[t] = acc
        cur = dst


cdef void _field_value_jac(const double* theta, const i64[:, ::1] ldims,
                           const i64[:, :, ::1] offsets, int act_id, int ell,
                           Py_ssize_t k, const double* x, Py_ssize_t d,
                           double* hbuf, double* dbuf, double* ba, double* bb,
                           double* pa, double* pb, double* cb,
                           double* out, double* jac) noexcept nogil:
    """out <- f_k(x) and jac <- df_k/dx (row-major d*d).

    pa/pb/cb are max_width*d scratch carrying the Jacobian chain product.
    """
    cdef Py_ssize_t i, r, c, t, j, p, h, q
    cdef const double* w
    cdef const double* b
    cdef const double* v
    cdef const double* a
    cdef const double* cur = x
    cdef double* dst
    cdef double* pcur = pa
    cdef double* pnext
    cdef double acc
    for r in range(d):
        for j in range(d):
            pcur[r * d + j] = 1.0 if r == j else 0.0
    for i in range(ell):
        p = ldims[i, 0]
        h = ldims[i, 1]
        q = ldims[i, 2]
        w = theta + offsets[k, i, 0]
        b = theta + offsets[k, i, 1]
        v = theta + offsets[k, i, 2]
        a = theta + offsets[k, i, 3]
        for r in range(h):
            acc = b[r]
            for c in range(p):
                acc += w[r * p + c] * cur[c]
            hbuf[r] = _act(acc, act_id)
            dbuf[r] = _act_deriv(hbuf[r], act_id)
        # cb <- diag(act') * W * pcur
        for r in range(h):
            for j in range(d):
                acc = 0.0
                for c in range(p):
                    acc += w[r * p + c] * pcur[c * d + j]
                cb[r * d + j] = dbuf[r] * acc
        dst = out if i == ell - 1 else (ba if (i & 1) == 0 else bb)
        pnext = jac if i == ell - 1 else (pb if pcur == pa else pa)
        for t in range(q):
            acc = a[t]
            for r in range(h):
                acc += v[t * h + r] * hbuf[r]
            dst[t] = acc
            for j in range(d):
                acc = 0.0
                for r in range(h):
                    acc += v[t * h + r] * cb[r * d + j]
                pnext[t * d + j] = acc
        cur = dst
        pcur = pnext


def flow_batch(double[::1] theta, i64[:, ::1] ldims, i64[:, :, ::1] offsets,
               int act_id, int max_width, double[:, ::1] x0s, double dt,
               i64[::1] kidx, i64[::1] record):
    cdef Py_ssize_t n = x0s.shape[0]
    cdef Py_ssize_t d = x0s.shape[1]
    cdef Py_ssize_t n_rec = record.shape[0]
    cdef Py_ssize_t n_steps = kidx.shape[0]
    cdef int ell = <int> ldims.shape[0]
    out_arr = np.empty((n_rec, n, d))
    cdef double[:, :, ::1] out = out_arr
    scratch_arr = np.empty(3 * max_width + 2 * d)
    cdef double[::1] scratch = scratch_arr
    cdef double* hbuf
    cdef double* ba
    cdef double* bb
    cdef double* xb
    cdef double* fb
    cdef Py_ssize_t pt, step, j, ri
    with nogil:
        hbuf = &scratch[0]
        ba = hbuf + max_width
        bb = ba + max_width
        xb = bb + max_width
        fb = xb + d
        for pt in range(n):
            for j in range(d):
                xb[j] = x0s[pt, j]
            ri = 0
            while ri < n_rec and record[ri] == 0:
                for j in range(d):
                    out[ri, pt, j] = xb[j]
                ri += 1
            for step in range(n_steps):
                _field_value(&theta[0], ldims, offsets, act_id, ell,
                             kidx[step], xb, d, hbuf, ba, bb, fb)
                for j in range(d):
                    xb[j] = xb[j] + dt * fb[j]
                while ri < n_rec and record[ri] == step + 1:
                    for j in range(d):
                        out[ri, pt, j] = xb[j]
                    ri += 1
    return out_arr


def tangent_batch(double[::1] theta, i64[:, ::1] ldims, i64[:, :, ::1] offsets,
                  int act_id, int max_width, double[:, ::1] x0s, double dt,
                  i64[::1] kidx, i64[::1] record):
    cdef Py_ssize_t n = x0s.shape[0]
    cdef Py_ssize_t d = x0s.shape[1]
    cdef Py_ssize_t n_rec = record.shape[0]
    cdef Py_ssize_t n_steps = kidx.shape[0]
    cdef int ell = <int> ldims.shape[0]
    final_arr = np.empty((n, d))
    rec_arr = np.empty((n_rec, n, d, d))
    cdef double[:, ::1] final = final_arr
    cdef double[:, :, :, ::1] rec = rec_arr
    scratch_arr = np.empty(4 * max_width + 3 * max_width * d + 2 * d + 3 * d * d)
    cdef double[::1] scratch = scratch_arr
    cdef double* hbuf
    cdef double* dbuf
    cdef double* ba
    cdef double* bb
    cdef double* pa
    cdef double* pb
    cdef double* cb
    cdef double* xb
    cdef double* fb
    cdef double* yb
    cdef double* jb
    cdef double* tb
    cdef Py_ssize_t pt, step, i, j, m, ri
    cdef double acc
    with nogil:
        hbuf = &scratch[0]
        dbuf = hbuf + max_width
        ba = dbuf + max_width
        bb = ba + max_width
        pa = bb + max_width
        pb = pa + max_width * d
        cb = pb + max_width * d
        xb = cb + max_width * d
        fb = xb + d
        yb = fb + d
        jb = yb + d * d
        tb = jb + d * d
        for pt in range(n):
            for j in range(d):
                xb[j] = x0s[pt, j]
            for i in range(d):
                for j in range(d):
                    yb[i * d + j] = 1.0 if i == j else 0.0
            ri = 0
            while ri < n_rec and record[ri] == 0:
                for i in range(d):
                    for j in range(d):
                        rec[ri, pt, i, j] = yb[i * d + j]
                ri += 1
            for step in range(n_steps):
                _field_value_jac(&theta[0], ldims, offsets, act_id, ell,
                                 kidx[step], xb, d, hbuf, dbuf, ba, bb,
                                 pa, pb, cb, fb, jb)
                for i in range(d):
                    for j in range(d):
                        acc = 0.0
                        for m in range(d):
                            acc += jb[i * d + m] * yb[m * d + j]
                        tb[i * d + j] = acc
                for i in range(d):
                    for j in range(d):
                        yb[i * d + j] = yb[i * d + j] + dt * tb[i * d + j]
                for j in range(d):
                    xb[j] = xb[j] + dt * fb[j]
                while ri < n_rec and record[ri] == step + 1:
                    for i in range(d):
                        for j in range(d):
                            rec[ri, pt, i, j] = yb[i * d + j]
                    ri += 1
            for j in range(d):
                final[pt, j] = xb[j]
    return final_arr, rec_arr
