# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled fuzzy c-means inner kernels.

Function-for-function drop-in for ``_fcm_numpy``; the fuzzifier m=2 fast
path avoids pow() entirely. All kernels run without the GIL.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()

BACKEND_NAME = "cython"


cdef inline double _zero_tol(double m) noexcept nogil:
    cdef double tol = pow(10.0, -300.0 * (m - 1.0))
    return tol if tol > 1e-300 else 1e-300


def pairwise_sq_dist(double[:, ::1] x, double[:, ::1] centers):
    """Squared Euclidean distances, shape (K, c)."""
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1], c = centers.shape[0]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t k, l, e
    cdef double acc, diff
    with nogil:
        for k in range(n):
            for l in range(c):
                acc = 0.0
                for e in range(dim):
                    diff = x[k, e] - centers[l, e]
                    acc += diff * diff
                out[k, l] = acc
    return out_arr


def memberships(double[:, ::1] d2, double m):
    """Membership weights from squared distances; rows sum to 1."""
    cdef Py_ssize_t n = d2.shape[0], c = d2.shape[1]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double tol = _zero_tol(m)
    cdef double expo = -1.0 / (m - 1.0)
    cdef bint square = m == 2.0
    cdef Py_ssize_t k, l, hits
    cdef double total, u
    with nogil:
        for k in range(n):
            hits = 0
            for l in range(c):
                if d2[k, l] <= tol:
                    hits += 1
            if hits > 0:
                # Exact (or indistinguishable) coincidence with >= 1 center:
                # split full membership equally over the coinciding centers.
                for l in range(c):
                    out[k, l] = (1.0 / hits) if d2[k, l] <= tol else 0.0
                continue
            total = 0.0
            for l in range(c):
                u = 1.0 / d2[k, l] if square else pow(d2[k, l], expo)
                out[k, l] = u
                total += u
            for l in range(c):
                out[k, l] /= total
    return out_arr


def weighted_centers(double[:, ::1] x, double[:, ::1] w, double m):
    """Centers as membership^m weighted means of the elements."""
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1], c = w.shape[1]
    num_arr = np.zeros((c, dim), dtype=np.float64)
    den_arr = np.zeros(c, dtype=np.float64)
    cdef double[:, ::1] num = num_arr
    cdef double[::1] den = den_arr
    cdef bint square = m == 2.0
    cdef Py_ssize_t k, l, e
    cdef double wm
    with nogil:
        for k in range(n):
            for l in range(c):
                wm = w[k, l] * w[k, l] if square else pow(w[k, l], m)
                den[l] += wm
                for e in range(dim):
                    num[l, e] += wm * x[k, e]
    return num_arr / den_arr[:, None]


def objective(double[:, ::1] d2, double[:, ::1] w, double m):
    """The fuzzy c-means objective: sum of w^m times squared distance."""
    cdef Py_ssize_t n = d2.shape[0], c = d2.shape[1]
    cdef bint square = m == 2.0
    cdef double total = 0.0
    cdef Py_ssize_t k, l
    with nogil:
        for k in range(n):
            for l in range(c):
                total += (w[k, l] * w[k, l] if square else pow(w[k, l], m)) * d2[k, l]
    return total
