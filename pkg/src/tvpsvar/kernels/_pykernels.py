"""Pure-Python (numpy) implementation of the hot kernels.

This module is the reference implementation. The compiled module
``_ckernels`` implements the same functions with the same argument
conventions, the same ridge policy and the same consumption of the
pre-drawn random numbers, so both backends agree to rounding error.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_solve

RIDGE_START = 1e-10
RIDGE_STOP = 1e-6

CHOL_OK = 0
CHOL_ZERO = 1
CHOL_FAIL = -1

_LOG_2PI = math.log(2.0 * math.pi)


class KernelError(RuntimeError):
    """Numerical breakdown inside a kernel; ``date`` is the offending index."""

    def __init__(self, message: str, date: int):
        super().__init__(f"{message} at date index {date}")
        self.date = date


def chol_ridge(a: np.ndarray) -> tuple[int, np.ndarray | None]:
    """Lower Cholesky factor of a symmetric PSD matrix with escalating ridge.

    Returns ``(CHOL_ZERO, None)`` for an all-zero matrix, ``(CHOL_FAIL, None)``
    when even the largest ridge does not help.
    """
    if not np.all(np.isfinite(a)):
        return CHOL_FAIL, None
    dim = a.shape[0]
    tr = float(np.trace(a))
    try:
        return CHOL_OK, np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    if not np.any(a):
        return CHOL_ZERO, None
    if tr <= 0.0:
        return CHOL_FAIL, None
    ridge = RIDGE_START
    eye = np.eye(dim)
    while ridge <= RIDGE_STOP * (1.0 + 1e-9):
        try:
            return CHOL_OK, np.linalg.cholesky(a + ridge * tr / dim * eye)
        except np.linalg.LinAlgError:
            ridge *= 10.0
    return CHOL_FAIL, None


def kalman_filter(obs, loading, obs_cov, trans_cov, init_mean, init_cov):
    """Kalman filter for a random-walk state observed through ``loading``.

    State: ``x_0 ~ N(init_mean, init_cov)``, ``x_t = x_{t-1} + w_t`` with
    ``w_t ~ N(0, trans_cov)`` for ``t >= 1``.  Observation:
    ``obs_t = loading_t x_t + v_t``, ``v_t ~ N(0, obs_cov_t)``.

    Returns ``(m_filt, P_filt, m_pred, P_pred, loglik)`` where ``loglik`` holds
    per-date contributions.
    """
    T, p = obs.shape
    k = init_mean.shape[0]
    m_filt = np.empty((T, k))
    P_filt = np.empty((T, k, k))
    m_pred = np.empty((T, k))
    P_pred = np.empty((T, k, k))
    loglik = np.zeros(T)
    for t in range(T):
        if t == 0:
            mp = init_mean.copy()
            Pp = init_cov.copy()
        else:
            mp = m_filt[t - 1].copy()
            Pp = P_filt[t - 1] + trans_cov
        Pp = 0.5 * (Pp + Pp.T)
        m_pred[t] = mp
        P_pred[t] = Pp
        Z = loading[t]
        ZP = Z @ Pp
        F = ZP @ Z.T + obs_cov[t]
        F = 0.5 * (F + F.T)
        v = obs[t] - Z @ mp
        status, L = chol_ridge(F)
        if status == CHOL_ZERO:
            m_filt[t] = mp
            P_filt[t] = Pp
            continue
        if status == CHOL_FAIL:
            raise KernelError("innovation covariance is not positive semidefinite or not finite", t)
        W = cho_solve((L, True), ZP)
        s = cho_solve((L, True), v)
        m_filt[t] = mp + ZP.T @ s
        P = Pp - ZP.T @ W
        P_filt[t] = 0.5 * (P + P.T)
        loglik[t] = -0.5 * (p * _LOG_2PI + 2.0 * np.sum(np.log(np.diag(L))) + v @ s)
    return m_filt, P_filt, m_pred, P_pred, loglik


def backward_sample(m_filt, P_filt, trans_cov, normals):
    """Carter-Kohn backward pass driven by pre-drawn standard normals."""
    T, k = m_filt.shape
    path = np.empty((T, k))
    status, L = chol_ridge(P_filt[T - 1])
    if status == CHOL_FAIL:
        raise KernelError("terminal filtered covariance is not positive semidefinite", T - 1)
    path[T - 1] = m_filt[T - 1] if status == CHOL_ZERO else m_filt[T - 1] + L @ normals[T - 1]
    for t in range(T - 2, -1, -1):
        P = P_filt[t]
        Pp = P + trans_cov
        Pp = 0.5 * (Pp + Pp.T)
        status, Lp = chol_ridge(Pp)
        if status == CHOL_FAIL:
            raise KernelError("one-step predicted covariance is not positive semidefinite", t)
        if status == CHOL_ZERO:
            path[t] = m_filt[t]
            continue
        # J = P Pp^{-1};  cov = P - J P = J Q  (no cancellation when Q is small)
        J = cho_solve((Lp, True), P).T
        mean = m_filt[t] + J @ (path[t + 1] - m_filt[t])
        cov = J @ trans_cov
        cov = 0.5 * (cov + cov.T)
        status, Lc = chol_ridge(cov)
        if status == CHOL_FAIL:
            raise KernelError("conditional covariance is not positive semidefinite", t)
        path[t] = mean if status == CHOL_ZERO else mean + Lc @ normals[t]
    return path


def sv_single_move(lnh, y2, h0, g, normals, uniforms):
    """One single-move Metropolis sweep over a log-volatility path.

    ``lnh`` is updated date by date.  The proposal for date ``t`` is the
    log-normal implied by the random-walk neighbours (``h0`` is the fixed
    value before the first date; the last date has only a left neighbour),
    so the acceptance probability is the ratio of ``h^-1/2 exp(-y2/(2h))``.

    Returns the new path and the number of accepted proposals.
    """
    T = lnh.shape[0]
    out = np.array(lnh, dtype=float, copy=True)
    accepted = 0
    for t in range(T):
        left = h0 if t == 0 else out[t - 1]
        if t < T - 1:
            mu = 0.5 * (left + out[t + 1])
            sd = math.sqrt(0.5 * g)
        else:
            mu = left
            sd = math.sqrt(g)
        cand = mu + sd * normals[t]
        cur = out[t]
        log_ratio = -0.5 * (cand - cur) - 0.5 * y2[t] * (math.exp(-cand) - math.exp(-cur))
        if math.log(uniforms[t]) < log_ratio:
            out[t] = cand
            accepted += 1
    return out, accepted
