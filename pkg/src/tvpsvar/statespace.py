"""Gaussian linear state-space kernels: Kalman filter and Carter-Kohn sampler.

The state follows a random walk, ``x_t = x_{t-1} + w_t``, with
``x_0 ~ N(init_mean, init_cov)`` at the first date.  Both the Φ and the
contemporaneous-relation draws of the Gibbs sampler go through here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import KernelError


class StateSpaceError(RuntimeError):
    """Invalid state-space inputs or numerical breakdown (with date index)."""

    def __init__(self, message: str, date: int | None = None):
        super().__init__(message)
        self.date = date


@dataclass
class StateSpaceSpec:
    """Random-walk state space with time-varying loading and observation noise.

    Attributes
    ----------
    obs_loading : (T, p, k) array
    obs_cov : (T, p, p) array
    trans_cov : (k, k) array, constant over the sample
    init_mean : (k,) array
    init_cov : (k, k) array
    """

    obs_loading: np.ndarray
    obs_cov: np.ndarray
    trans_cov: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray

    def __post_init__(self):
        self.obs_loading = np.ascontiguousarray(self.obs_loading, dtype=float)
        self.obs_cov = np.ascontiguousarray(self.obs_cov, dtype=float)
        self.trans_cov = np.ascontiguousarray(self.trans_cov, dtype=float)
        self.init_mean = np.ascontiguousarray(self.init_mean, dtype=float).reshape(-1)
        self.init_cov = np.ascontiguousarray(self.init_cov, dtype=float)
        if self.obs_loading.ndim != 3:
            raise StateSpaceError("obs_loading must be (T, p, k)")
        T, p, k = self.obs_loading.shape
        if self.obs_cov.shape != (T, p, p):
            raise StateSpaceError(f"obs_cov must be {(T, p, p)}, got {self.obs_cov.shape}")
        if self.trans_cov.shape != (k, k) or self.init_cov.shape != (k, k):
            raise StateSpaceError(f"trans_cov and init_cov must be {(k, k)}")
        if self.init_mean.shape != (k,):
            raise StateSpaceError(f"init_mean must have length {k}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.obs_loading.shape


@dataclass
class FilterOutput:
    """Filtered and one-step predicted moments plus per-date log-likelihood."""

    m_filt: np.ndarray
    P_filt: np.ndarray
    m_pred: np.ndarray
    P_pred: np.ndarray
    loglik: np.ndarray

    @property
    def total_loglik(self) -> float:
        return float(np.sum(self.loglik))


def kalman_filter(spec: StateSpaceSpec, obs: np.ndarray) -> FilterOutput:
    """Run the forward filter.

    Covariances are symmetrised after every predict and update step.
    Raises ``StateSpaceError`` on a dimension mismatch or when an
    innovation covariance cannot be factorised even after ridging.
    """
    obs = np.ascontiguousarray(obs, dtype=float)
    if obs.ndim == 1:
        obs = obs[:, None]
    T, p, _ = spec.dims
    if obs.shape != (T, p):
        raise StateSpaceError(f"observations must be {(T, p)}, got {obs.shape}")
    try:
        out = kernels.kalman_filter(
            obs, spec.obs_loading, spec.obs_cov, spec.trans_cov, spec.init_mean, spec.init_cov
        )
    except KernelError as exc:
        raise StateSpaceError(str(exc), exc.date) from exc
    return FilterOutput(*out)


def backward_sample(filt: FilterOutput, trans_cov: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw a state path from its joint conditional given all observations.

    ``x_T ~ N(m_T|T, P_T|T)``, then backwards
    ``x_t ~ N(m_t|t + J_t (x_{t+1} - m_t|t), P_t|t - J_t P_t|t)`` with
    ``J_t = P_t|t P_{t+1|t}^{-1}``.  Consumes exactly ``T * k`` standard
    normals from ``rng``.
    """
    T, k = filt.m_filt.shape
    normals = rng.standard_normal((T, k))
    try:
        return kernels.backward_sample(
            filt.m_filt, filt.P_filt, np.ascontiguousarray(trans_cov, dtype=float), normals
        )
    except KernelError as exc:
        raise StateSpaceError(str(exc), exc.date) from exc


def ffbs(spec: StateSpaceSpec, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Forward filter, backward sample."""
    return backward_sample(kalman_filter(spec, obs), spec.trans_cov, rng)


def smoother_moments(filt: FilterOutput, trans_cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rauch-Tung-Striebel smoothed means and covariances (diagnostics, tests)."""
    T, k = filt.m_filt.shape
    ms = filt.m_filt.copy()
    Ps = filt.P_filt.copy()
    for t in range(T - 2, -1, -1):
        Pp = filt.P_filt[t] + trans_cov
        J = filt.P_filt[t] @ np.linalg.pinv(Pp)
        ms[t] = filt.m_filt[t] + J @ (ms[t + 1] - filt.m_filt[t])
        Ps[t] = filt.P_filt[t] + J @ (Ps[t + 1] - Pp) @ J.T
    return ms, Ps
