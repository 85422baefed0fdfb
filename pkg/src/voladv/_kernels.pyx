# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled gated linear recurrence used by the scan-seg model.

Columns ``[0, n_fwd)`` run forward in time and the remaining columns run
backward, so both directions of one scan orientation share a single call.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def gated_scan(const double[:, ::1] z, const double[:, ::1] sz, const double[:, ::1] a,
               Py_ssize_t n_fwd):
    """h[t] = a[t] * h[t-1] + (1 - a[t]) * z[t] * sz[t], h before the first step = 0.

    ``sz`` is sigmoid(z), so the scan input is silu(z); ``a`` is the gate.
    """
    cdef Py_ssize_t n = z.shape[0], k = z.shape[1], s, t, j
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] h = out
    cdef double hp
    for s in range(n):
        t = s
        for j in range(n_fwd):
            hp = h[t - 1, j] if s > 0 else 0.0
            h[t, j] = a[t, j] * hp + (1.0 - a[t, j]) * z[t, j] * sz[t, j]
        t = n - 1 - s
        for j in range(n_fwd, k):
            hp = h[t + 1, j] if s > 0 else 0.0
            h[t, j] = a[t, j] * hp + (1.0 - a[t, j]) * z[t, j] * sz[t, j]
    return out


cdef inline void _step_back(Py_ssize_t t, Py_ssize_t j, double hp, double[::1] carry,
                            const double[:, ::1] z, const double[:, ::1] sz, const double[:, ::1] a,
                            const double[:, ::1] grad_h, double[:, ::1] dz, double[:, ::1] dzg) noexcept nogil:
    cdef double g = grad_h[t, j] + carry[j]
    cdef double at = a[t, j], st = sz[t, j], zt = z[t, j]
    dzg[t, j] = g * (hp - zt * st) * at * (1.0 - at)
    dz[t, j] = g * (1.0 - at) * st * (1.0 + zt * (1.0 - st))
    carry[j] = g * at


def gated_scan_backward(const double[:, ::1] z, const double[:, ::1] sz, const double[:, ::1] a,
                        const double[:, ::1] h, const double[:, ::1] grad_h, Py_ssize_t n_fwd):
    """Gradients of ``sum(grad_h * h)`` w.r.t. the pre-activations ``z`` and ``zg``."""
    cdef Py_ssize_t n = z.shape[0], k = z.shape[1], s, t, j
    dz_arr = np.empty((n, k), dtype=np.float64)
    dzg_arr = np.empty((n, k), dtype=np.float64)
    carry_arr = np.zeros(k, dtype=np.float64)
    cdef double[:, ::1] dz = dz_arr
    cdef double[:, ::1] dzg = dzg_arr
    cdef double[::1] carry = carry_arr
    for s in range(n - 1, -1, -1):
        t = s
        for j in range(n_fwd):
            _step_back(t, j, h[t - 1, j] if s > 0 else 0.0, carry, z, sz, a, grad_h, dz, dzg)
        t = n - 1 - s
        for j in range(n_fwd, k):
            _step_back(t, j, h[t + 1, j] if s > 0 else 0.0, carry, z, sz, a, grad_h, dz, dzg)
    return dz_arr, dzg_arr
