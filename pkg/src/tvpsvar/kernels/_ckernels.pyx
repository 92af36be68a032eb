# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same contracts as ``_pykernels``; see that module."""
import numpy as np

from libc.math cimport sqrt, log, exp, M_PI
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

from ._pykernels import KernelError

cdef double RIDGE_START = 1e-10
cdef double RIDGE_STOP = 1e-6
cdef int CHOL_OK = 0
cdef int CHOL_ZERO = 1
cdef int CHOL_FAIL = -1


cdef int _chol_plain(double* a, int n) noexcept nogil:
    # in-place lower Cholesky of row-major a; upper triangle zeroed
    cdef int i, j, k
    cdef double s, acc
    for j in range(n):
        s = a[j * n + j]
        for k in range(j):
            s -= a[j * n + k] * a[j * n + k]
        if not (s > 0.0):
            return -1
        s = sqrt(s)
        a[j * n + j] = s
        for i in range(j + 1, n):
            acc = a[i * n + j]
            for k in range(j):
                acc -= a[i * n + k] * a[j * n + k]
            a[i * n + j] = acc / s
    for i in range(n):
        for j in range(i + 1, n):
            a[i * n + j] = 0.0
    return 0


cdef int _chol_ridge(const double* src, double* out, int n) noexcept nogil:
    cdef int i, j
    cdef double tr = 0.0, ridge, add
    cdef bint nonzero = False
    for i in range(n * n):
        if not (src[i] - src[i] == 0.0):  # nan or inf
            return CHOL_FAIL
        if src[i] != 0.0:
            nonzero = True
    for i in range(n):
        tr += src[i * n + i]
    memcpy(out, src, n * n * sizeof(double))
    if _chol_plain(out, n) == 0:
        return CHOL_OK
    if not nonzero:
        return CHOL_ZERO
    if tr <= 0.0:
        return CHOL_FAIL
    ridge = RIDGE_START
    while ridge <= RIDGE_STOP * (1.0 + 1e-9):
        memcpy(out, src, n * n * sizeof(double))
        add = ridge * tr / n
        for i in range(n):
            out[i * n + i] += add
        if _chol_plain(out, n) == 0:
            return CHOL_OK
        ridge *= 10.0
    return CHOL_FAIL


cdef void _cho_solve(const double* L, double* b, int n, int r) noexcept nogil:
    # solve (L L') X = B in place; B is row-major n x r
    # row-oriented substitution keeps the inner loop contiguous
    cdef int i, k, c
    cdef double lik, inv
    for i in range(n):
        for k in range(i):
            lik = L[i * n + k]
            for c in range(r):
                b[i * r + c] -= lik * b[k * r + c]
        inv = 1.0 / L[i * n + i]
        for c in range(r):
            b[i * r + c] *= inv
    for i in range(n - 1, -1, -1):
        for k in range(i + 1, n):
            lik = L[k * n + i]
            for c in range(r):
                b[i * r + c] -= lik * b[k * r + c]
        inv = 1.0 / L[i * n + i]
        for c in range(r):
            b[i * r + c] *= inv


cdef void _symmetrize(double* a, int n) noexcept nogil:
    cdef int i, j
    cdef double s
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.5 * (a[i * n + j] + a[j * n + i])
            a[i * n + j] = s
            a[j * n + i] = s


def kalman_filter(const double[:, ::1] obs, const double[:, :, ::1] loading,
                  const double[:, :, ::1] obs_cov, const double[:, ::1] trans_cov,
                  const double[::1] init_mean, const double[:, ::1] init_cov):
    cdef Py_ssize_t T = obs.shape[0]
    cdef int p = <int>obs.shape[1]
    cdef int k = <int>init_mean.shape[0]
    m_filt_a = np.empty((T, k))
    P_filt_a = np.empty((T, k, k))
    m_pred_a = np.empty((T, k))
    P_pred_a = np.empty((T, k, k))
    loglik_a = np.zeros(T)
    cdef double[:, ::1] m_filt = m_filt_a
    cdef double[:, :, ::1] P_filt = P_filt_a
    cdef double[:, ::1] m_pred = m_pred_a
    cdef double[:, :, ::1] P_pred = P_pred_a
    cdef double[::1] loglik = loglik_a

    cdef double* ZP = <double*>malloc(p * k * sizeof(double))
    cdef double* W = <double*>malloc(p * k * sizeof(double))
    cdef double* F = <double*>malloc(p * p * sizeof(double))
    cdef double* L = <double*>malloc(p * p * sizeof(double))
    cdef double* v = <double*>malloc(p * sizeof(double))
    cdef Py_ssize_t t
    cdef int a, b, i, j, l, status
    cdef double acc, logdet, quad
    cdef double log2pi = log(2.0 * M_PI)
    cdef Py_ssize_t fail_t = -1
    try:
        with nogil:
            for t in range(T):
                if t == 0:
                    for i in range(k):
                        m_pred[t, i] = init_mean[i]
                        for j in range(k):
                            P_pred[t, i, j] = init_cov[i, j]
                else:
                    for i in range(k):
                        m_pred[t, i] = m_filt[t - 1, i]
                        for j in range(k):
                            P_pred[t, i, j] = P_filt[t - 1, i, j] + trans_cov[i, j]
                _symmetrize(&P_pred[t, 0, 0], k)
                for a in range(p):
                    for j in range(k):
                        acc = 0.0
                        for l in range(k):
                            acc = acc + loading[t, a, l] * P_pred[t, l, j]
                        ZP[a * k + j] = acc
                for a in range(p):
                    for b in range(p):
                        acc = 0.0
                        for l in range(k):
                            acc = acc + ZP[a * k + l] * loading[t, b, l]
                        F[a * p + b] = acc + obs_cov[t, a, b]
                _symmetrize(F, p)
                for a in range(p):
                    acc = 0.0
                    for l in range(k):
                        acc = acc + loading[t, a, l] * m_pred[t, l]
                    v[a] = obs[t, a] - acc
                status = _chol_ridge(F, L, p)
                if status == CHOL_ZERO:
                    for i in range(k):
                        m_filt[t, i] = m_pred[t, i]
                        for j in range(k):
                            P_filt[t, i, j] = P_pred[t, i, j]
                    continue
                if status == CHOL_FAIL:
                    fail_t = t
                    break
                memcpy(W, ZP, p * k * sizeof(double))
                _cho_solve(L, W, p, k)
                # v <- F^{-1} v, keep quad form with the raw innovation
                quad = 0.0
                for a in range(p):
                    F[a] = v[a]
                _cho_solve(L, v, p, 1)
                for a in range(p):
                    quad = quad + F[a] * v[a]
                for i in range(k):
                    acc = m_pred[t, i]
                    for a in range(p):
                        acc = acc + ZP[a * k + i] * v[a]
                    m_filt[t, i] = acc
                for i in range(k):
                    for j in range(k):
                        acc = P_pred[t, i, j]
                        for a in range(p):
                            acc = acc - ZP[a * k + i] * W[a * k + j]
                        P_filt[t, i, j] = acc
                _symmetrize(&P_filt[t, 0, 0], k)
                logdet = 0.0
                for a in range(p):
                    logdet = logdet + log(L[a * p + a])
                loglik[t] = -0.5 * (p * log2pi + 2.0 * logdet + quad)
    finally:
        free(ZP)
        free(W)
        free(F)
        free(L)
        free(v)
    if fail_t >= 0:
        raise KernelError("innovation covariance is not positive semidefinite or not finite", fail_t)
    return m_filt_a, P_filt_a, m_pred_a, P_pred_a, loglik_a


def backward_sample(const double[:, ::1] m_filt, const double[:, :, ::1] P_filt,
                    const double[:, ::1] trans_cov, const double[:, ::1] normals):
    cdef Py_ssize_t T = m_filt.shape[0]
    cdef int k = <int>m_filt.shape[1]
    path_a = np.empty((T, k))
    cdef double[:, ::1] path = path_a
    cdef double* Pp = <double*>malloc(k * k * sizeof(double))
    cdef double* Lp = <double*>malloc(k * k * sizeof(double))
    cdef double* Jt = <double*>malloc(k * k * sizeof(double))
    cdef double* C = <double*>malloc(k * k * sizeof(double))
    cdef double* Lc = <double*>malloc(k * k * sizeof(double))
    cdef double* mean = <double*>malloc(k * sizeof(double))
    cdef double* d = <double*>malloc(k * sizeof(double))
    cdef Py_ssize_t t
    cdef int i, j, l, status
    cdef double acc
    cdef Py_ssize_t fail_t = -1
    cdef int fail_kind = 0
    try:
        with nogil:
            status = _chol_ridge(&P_filt[T - 1, 0, 0], Lc, k)
            if status == CHOL_FAIL:
                fail_t = T - 1
                fail_kind = 1
            else:
                for i in range(k):
                    acc = m_filt[T - 1, i]
                    if status == CHOL_OK:
                        for l in range(i + 1):
                            acc = acc + Lc[i * k + l] * normals[T - 1, l]
                    path[T - 1, i] = acc
                t = T - 2
                while t >= 0:
                    for i in range(k):
                        for j in range(k):
                            Pp[i * k + j] = P_filt[t, i, j] + trans_cov[i, j]
                    _symmetrize(Pp, k)
                    status = _chol_ridge(Pp, Lp, k)
                    if status == CHOL_FAIL:
                        fail_t = t
                        fail_kind = 2
                        break
                    if status == CHOL_ZERO:
                        for i in range(k):
                            path[t, i] = m_filt[t, i]
                        t -= 1
                        continue
                    # Jt = Pp^{-1} P  (= J')
                    for i in range(k):
                        for j in range(k):
                            Jt[i * k + j] = P_filt[t, i, j]
                    _cho_solve(Lp, Jt, k, k)
                    for i in range(k):
                        d[i] = path[t + 1, i] - m_filt[t, i]
                    for i in range(k):
                        acc = m_filt[t, i]
                        for l in range(k):
                            acc = acc + Jt[l * k + i] * d[l]
                        mean[i] = acc
                    # C = J Q
                    for i in range(k * k):
                        C[i] = 0.0
                    for i in range(k):
                        for l in range(k):
                            acc = Jt[l * k + i]
                            for j in range(k):
                                C[i * k + j] += acc * trans_cov[l, j]
                    _symmetrize(C, k)
                    status = _chol_ridge(C, Lc, k)
                    if status == CHOL_FAIL:
                        fail_t = t
                        fail_kind = 3
                        break
                    for i in range(k):
                        acc = mean[i]
                        if status == CHOL_OK:
                            for l in range(i + 1):
                                acc = acc + Lc[i * k + l] * normals[t, l]
                        path[t, i] = acc
                    t -= 1
    finally:
        free(Pp)
        free(Lp)
        free(Jt)
        free(C)
        free(Lc)
        free(mean)
        free(d)
    if fail_t >= 0:
        msg = {
            1: "terminal filtered covariance is not positive semidefinite",
            2: "one-step predicted covariance is not positive semidefinite",
            3: "conditional covariance is not positive semidefinite",
        }[fail_kind]
        raise KernelError(msg, fail_t)
    return path_a


def sv_single_move(const double[::1] lnh, const double[::1] y2, double h0, double g,
                   const double[::1] normals, const double[::1] uniforms):
    cdef Py_ssize_t T = lnh.shape[0]
    out_a = np.array(lnh, dtype=float, copy=True)
    cdef double[::1] out = out_a
    cdef Py_ssize_t t
    cdef long accepted = 0
    cdef double left, mu, sd, cand, cur, log_ratio
    cdef double sd_mid = sqrt(0.5 * g)
    cdef double sd_end = sqrt(g)
    with nogil:
        for t in range(T):
            left = h0 if t == 0 else out[t - 1]
            if t < T - 1:
                mu = 0.5 * (left + out[t + 1])
                sd = sd_mid
            else:
                mu = left
                sd = sd_end
            cand = mu + sd * normals[t]
            cur = out[t]
            log_ratio = -0.5 * (cand - cur) - 0.5 * y2[t] * (exp(-cand) - exp(-cur))
            if log(uniforms[t]) < log_ratio:
                out[t] = cand
                accepted += 1
    return out_a, accepted
