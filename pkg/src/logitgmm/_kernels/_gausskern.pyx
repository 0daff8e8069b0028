# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Gaussian log-density kernels.

Hot path for both EM responsibilities and batch detection scoring: per
component, a forward substitution against the covariance Cholesky factor
gives the Mahalanobis term without ever forming an inverse.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport M_PI, log

cnp.import_array()


def component_log_densities(
    double[:, ::1] x,
    double[:, ::1] means,
    double[:, :, ::1] chols,
):
    """Log N(x_i; mu_j, L_j L_j^T) for every sample i and component j.

    x: (n, d), means: (m, d), chols: (m, d, d) lower-triangular Cholesky
    factors. Returns an (n, m) float64 array.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t m = means.shape[0]
    cdef Py_ssize_t i, j, k, r
    cdef double acc, mahal, logdet
    cdef double norm_const = d * log(2.0 * M_PI)

    out_arr = np.empty((n, m), dtype=np.float64)
    work_arr = np.empty(d, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] work = work_arr

    for j in range(m):
        logdet = 0.0
        for k in range(d):
            logdet += log(chols[j, k, k])
        logdet *= 2.0
        for i in range(n):
            # solve L y = x - mu, accumulate |y|^2
            mahal = 0.0
            for k in range(d):
                acc = x[i, k] - means[j, k]
                for r in range(k):
                    acc -= chols[j, k, r] * work[r]
                acc /= chols[j, k, k]
                work[k] = acc
                mahal += acc * acc
            out[i, j] = -0.5 * (norm_const + logdet + mahal)
    return out_arr
