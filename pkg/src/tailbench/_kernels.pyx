# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for SGD ensembles and Euler-Maruyama stepping.

Every function here has a NumPy twin in ``_fallback`` with the same
signature and the same in-place semantics.  Random numbers are always drawn
by the caller, so both backends consume identical streams.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def sgd_block(const double[:, ::1] A, const double[::1] b, double[:, ::1] X,
              const cnp.int64_t[:, :, ::1] idx, double gamma, double delta,
              double guard):
    """Run minibatch SGD for a block of replicas, updating ``X`` in place.

    Returns an int64 array with, per replica, the step index at which the
    iterate became non-finite or exceeded ``guard`` in norm (-1 if never).
    """
    cdef Py_ssize_t m = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t K = idx.shape[1]
    cdef Py_ssize_t B = idx.shape[2]
    cdef Py_ssize_t r, k, j, c, i
    cdef double res, nrm, step = gamma / B, decay = gamma * delta
    cdef double guard2 = guard * guard
    cdef double[::1] g = np.empty(d)
    diverged_arr = np.full(m, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] diverged = diverged_arr

    with nogil:
        for r in range(m):
            for k in range(K):
                for c in range(d):
                    g[c] = 0.0
                for j in range(B):
                    i = idx[r, k, j]
                    res = 0.0
                    for c in range(d):
                        res = res + A[i, c] * X[r, c]
                    res = res - b[i]
                    for c in range(d):
                        g[c] = g[c] + res * A[i, c]
                nrm = 0.0
                for c in range(d):
                    X[r, c] = X[r, c] - (step * g[c] + decay * X[r, c])
                    nrm = nrm + X[r, c] * X[r, c]
                # NaN fails every comparison, so this also catches it
                if not (nrm <= guard2 and nrm < INFINITY):
                    diverged[r] = k
                    break
    return diverged_arr


def em_steps(double[:, ::1] Z, const double[:, :, ::1] dW,
             const double[::1] theta, const double[::1] mu,
             const double[::1] a, double h, bint coupled):
    """Euler-Maruyama steps of the Pearson-type system, in place.

    ``coupled`` selects the shared squared norm |Z|^2 in each coordinate's
    diffusion; otherwise coordinate i only sees Z_i^2.  ``dW`` holds
    standard normals of shape (steps, N, d); they are scaled by sqrt(h) here.
    Returns the first step index where a state went non-finite, or -1.
    """
    cdef Py_ssize_t S = dW.shape[0]
    cdef Py_ssize_t N = Z.shape[0]
    cdef Py_ssize_t d = Z.shape[1]
    cdef Py_ssize_t s, p, c
    cdef double sq, norm2, z, sh = sqrt(h)
    cdef Py_ssize_t bad = -1
    cdef double[::1] amp = np.empty(d)
    cdef double[::1] drift = np.empty(d)

    for c in range(d):
        amp[c] = sqrt(2.0 * theta[c] * a[c])
        drift[c] = theta[c] * h

    with nogil:
        for s in range(S):
            for p in range(N):
                norm2 = 0.0
                if coupled:
                    for c in range(d):
                        norm2 = norm2 + Z[p, c] * Z[p, c]
                for c in range(d):
                    z = Z[p, c]
                    if coupled:
                        sq = sqrt(norm2 + 1.0)
                    else:
                        sq = sqrt(z * z + 1.0)
                    Z[p, c] = z - drift[c] * (z - mu[c]) + amp[c] * sq * sh * dW[s, p, c]
                    if bad < 0 and not (Z[p, c] - Z[p, c] == 0.0):
                        bad = s
            if bad >= 0:
                break
    return bad
