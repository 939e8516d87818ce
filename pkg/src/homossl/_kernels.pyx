# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled group-correlation kernels.

Same contract as ``_kernels_py``. For every (example, output element) the
needed input values are gathered into a small ``Cin*S`` buffer so the
channel reductions run over contiguous memory. All reductions run in a fixed
sequential order.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


cdef void _gather(floating[:, :, ::1] y, const cnp.int64_t[:, ::1] table, Py_ssize_t n,
                  Py_ssize_t g, floating* buf) noexcept nogil:
    cdef Py_ssize_t cin = y.shape[1], s = table.shape[1], i, k
    cdef cnp.int64_t idx
    for i in range(cin):
        for k in range(s):
            idx = table[g, k]
            buf[i * s + k] = y[n, i, idx] if idx >= 0 else 0


def gconv_forward(floating[:, :, ::1] y, floating[:, :, ::1] psi, const cnp.int64_t[:, ::1] table):
    cdef Py_ssize_t n = y.shape[0], cin = y.shape[1], cout = psi.shape[0]
    cdef Py_ssize_t ng = table.shape[0], s = table.shape[1], m = cin * s
    cdef Py_ssize_t b, g, c, k
    dtype = np.float64 if floating is double else np.float32
    out = np.empty((n, ng, cout), dtype=dtype)
    cdef floating[:, :, ::1] z = out
    # filter as [Cin*S, Cout] so the inner loop is a contiguous axpy over channels
    psi_t_arr = np.ascontiguousarray(np.asarray(psi).reshape(cout, m).T)
    cdef floating[:, ::1] psi_t = psi_t_arr
    buf_arr = np.empty(m, dtype=dtype)
    cdef floating[::1] buf = buf_arr
    cdef floating v
    cdef floating* acc
    cdef floating* w
    with nogil:
        for b in range(n):
            for g in range(ng):
                _gather(y, table, b, g, &buf[0])
                acc = &z[b, g, 0]
                for c in range(cout):
                    acc[c] = 0
                for k in range(m):
                    v = buf[k]
                    w = &psi_t[k, 0]
                    for c in range(cout):
                        acc[c] = acc[c] + v * w[c]
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def gconv_backward_input(floating[:, :, ::1] dz, floating[:, :, ::1] psi,
                         const cnp.int64_t[:, ::1] table, Py_ssize_t x):
    cdef Py_ssize_t n = dz.shape[0], cout = dz.shape[1], ng = dz.shape[2]
    cdef Py_ssize_t cin = psi.shape[1], s = psi.shape[2], m = cin * s
    cdef Py_ssize_t b, g, c, k, i
    cdef cnp.int64_t idx
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((n, cin, x), dtype=dtype)
    cdef floating[:, :, ::1] dy = out
    buf_arr = np.empty(m, dtype=dtype)
    cdef floating[::1] buf = buf_arr
    cdef floating d
    cdef floating* w
    with nogil:
        for b in range(n):
            for g in range(ng):
                for k in range(m):
                    buf[k] = 0
                for c in range(cout):
                    d = dz[b, c, g]
                    w = &psi[c, 0, 0]
                    for k in range(m):
                        buf[k] = buf[k] + d * w[k]
                for i in range(cin):
                    for k in range(s):
                        idx = table[g, k]
                        if idx >= 0:
                            dy[b, i, idx] += buf[i * s + k]
    return out


def gconv_backward_filter(floating[:, :, ::1] dz, floating[:, :, ::1] y,
                          const cnp.int64_t[:, ::1] table):
    cdef Py_ssize_t n = dz.shape[0], cout = dz.shape[1], ng = dz.shape[2]
    cdef Py_ssize_t cin = y.shape[1], s = table.shape[1], m = cin * s
    cdef Py_ssize_t b, g, c, k
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((cout, cin, s), dtype=dtype)
    cdef floating[:, :, ::1] dpsi = out
    buf_arr = np.empty(m, dtype=dtype)
    cdef floating[::1] buf = buf_arr
    cdef floating d
    cdef floating* w
    with nogil:
        for b in range(n):
            for g in range(ng):
                _gather(y, table, b, g, &buf[0])
                for c in range(cout):
                    d = dz[b, c, g]
                    w = &dpsi[c, 0, 0]
                    for k in range(m):
                        w[k] = w[k] + d * buf[k]
    return out
