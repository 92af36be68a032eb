"""Prior hyperparameters and initial states calibrated on a training sample."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import TimeSeriesPanel
from .varutil import lag_matrix, n_alpha


class PriorError(ValueError):
    pass


@dataclass
class PriorSet:
    """All prior hyperparameters of the model.

    Coefficient vectors are equation-major: element ``i * m + j`` is the
    coefficient of regressor ``j`` (``[1, y_{t-1}', ..., y_{t-L}']``) in
    equation ``i``, ``m = 1 + n * lags``.

    The inverse-Wishart convention is scipy's: ``IW(scale, dof)`` has mean
    ``scale / (dof - dim - 1)``.  The inverse-gamma on each volatility
    innovation variance has density ``∝ g^(-shape-1) exp(-scale / g)``.
    The degrees-of-freedom prior is a gamma with mean ``v0`` and ``v_dof``
    degrees of freedom (``v_dof = 2`` is an exponential with mean ``v0``).
    """

    n: int
    lags: int
    phi0_mean: np.ndarray
    phi0_cov: np.ndarray
    a0_mean: np.ndarray
    a0_cov: np.ndarray
    sigma0: np.ndarray
    hyperq_scale: np.ndarray
    hyperq_dof: float
    s_scales: list[np.ndarray]
    s_dofs: list[float]
    g_shape: np.ndarray
    g_scale: np.ndarray
    v0: float = 20.0
    v_dof: float = 2.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.phi0_mean = np.asarray(self.phi0_mean, dtype=float).reshape(-1)
        self.phi0_cov = np.asarray(self.phi0_cov, dtype=float)
        self.a0_mean = np.asarray(self.a0_mean, dtype=float).reshape(-1)
        self.a0_cov = np.asarray(self.a0_cov, dtype=float).reshape(self.a0_mean.size, self.a0_mean.size)
        self.sigma0 = np.asarray(self.sigma0, dtype=float).reshape(-1)
        self.hyperq_scale = np.asarray(self.hyperq_scale, dtype=float)
        self.s_scales = [np.atleast_2d(np.asarray(s, dtype=float)) for s in self.s_scales]
        self.s_dofs = [float(d) for d in self.s_dofs]
        self.g_shape = np.broadcast_to(np.asarray(self.g_shape, dtype=float), (self.n,)).copy()
        self.g_scale = np.broadcast_to(np.asarray(self.g_scale, dtype=float), (self.n,)).copy()
        k = self.k
        if self.phi0_mean.shape != (k,) or self.phi0_cov.shape != (k, k) or self.hyperq_scale.shape != (k, k):
            raise PriorError(f"coefficient prior dimensions must match k={k}")
        if self.a0_mean.size != n_alpha(self.n):
            raise PriorError(f"a0_mean must have {n_alpha(self.n)} elements")
        if len(self.s_scales) != self.n - 1 or len(self.s_dofs) != self.n - 1:
            raise PriorError("need one S block per equation 2..n")
        for i, (s, d) in enumerate(zip(self.s_scales, self.s_dofs), start=1):
            if s.shape != (i, i):
                raise PriorError(f"S block {i} must be {i}x{i}")
            if d <= i - 1:
                raise PriorError(f"S block {i} dof must exceed {i - 1}")
        if self.hyperq_dof <= k - 1:
            raise PriorError(f"HyperQ dof must exceed k-1={k - 1}")
        if np.any(self.sigma0 <= 0):
            raise PriorError("sigma0 must be positive")
        if np.any(self.g_shape <= 0) or np.any(self.g_scale <= 0):
            raise PriorError("inverse-gamma shape and scale must be positive")
        if self.v0 <= 0 or self.v_dof <= 0:
            raise PriorError("degrees-of-freedom prior must have positive mean and dof")

    @property
    def m(self) -> int:
        return 1 + self.n * self.lags

    @property
    def k(self) -> int:
        return self.n * self.m

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "lags": self.lags,
            "phi0_mean": self.phi0_mean.tolist(),
            "phi0_cov": self.phi0_cov.tolist(),
            "a0_mean": self.a0_mean.tolist(),
            "a0_cov": self.a0_cov.tolist(),
            "sigma0": self.sigma0.tolist(),
            "hyperq_scale": self.hyperq_scale.tolist(),
            "hyperq_dof": self.hyperq_dof,
            "s_scales": [s.tolist() for s in self.s_scales],
            "s_dofs": self.s_dofs,
            "g_shape": self.g_shape.tolist(),
            "g_scale": self.g_scale.tolist(),
            "v0": self.v0,
            "v_dof": self.v_dof,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSet":
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PriorSet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def ols_var(data: np.ndarray, lags: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """OLS of a VAR with intercept.

    Returns ``(B, resid_cov, xtx_inv, resid)`` where ``B`` is ``(m, n)``
    (column ``i`` holds equation ``i``) and ``resid_cov`` uses the
    degrees-of-freedom correction ``T - m``.
    """
    Y, X = lag_matrix(data, lags)
    T, m = X.shape
    if T <= m:
        raise PriorError(f"OLS needs more than {m} observations, got {T}")
    xtx = X.T @ X
    if np.linalg.matrix_rank(xtx) < m:
        raise PriorError("singular regressor cross-product: training sample too short or collinear")
    xtx_inv = np.linalg.inv(xtx)
    B = xtx_inv @ (X.T @ Y)
    resid = Y - X @ B
    return B, resid.T @ resid / (T - m), xtx_inv, resid


def unit_lower_factor(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``cov = L D L'`` with ``L`` unit lower triangular; returns ``(L, diag(D))``."""
    C = np.linalg.cholesky(cov)
    d = np.diag(C)
    return C / d[None, :], d**2


def alpha_from_A(A: np.ndarray) -> np.ndarray:
    """Free (strictly lower) elements of ``A``, row by row."""
    n = A.shape[0]
    return np.concatenate([A[i, :i] for i in range(1, n)]) if n > 1 else np.zeros(0)


def calibrate(
    training: TimeSeriesPanel,
    lags: int = 2,
    *,
    hyperq_factor: float = 1e-4,
    s_factor: float = 1e-3,
    a0_cov_factor: float = 10.0,
    s_dof: list[float] | None = None,
    g_shape: float = 0.5,
    g_scale: float = 1e-4 / 2,
    v0: float = 20.0,
    v_dof: float = 2.0,
) -> PriorSet:
    """Calibrate the priors from an OLS fit on the training sample.

    The contemporaneous prior mean comes from ``A = L^{-1}`` where
    ``v_ols = L D L'`` with ``L`` unit lower triangular, i.e. the free
    elements of ``A`` make the OLS residuals orthogonal.  The volatility innovation prior
    is an inverse gamma with ``shape = 1/2`` and ``scale = 1e-4 / 2``.
    """
    n = training.n
    data = training.data
    if training.T <= n * lags + n + 1:
        raise PriorError(f"training sample of {training.T} rows too short for n={n}, lags={lags}")
    B, v_ols, xtx_inv, _ = ols_var(data, lags)
    phi0_mean = B.T.reshape(-1)
    phi0_cov = np.kron(v_ols, xtx_inv)
    phi0_cov = 0.5 * (phi0_cov + phi0_cov.T)
    L, _ = unit_lower_factor(v_ols)
    a0_mean = alpha_from_A(np.linalg.inv(L))
    a0_cov = np.diag(a0_cov_factor * np.abs(a0_mean))
    s_scales, dofs = [], []
    pos = 0
    for i in range(1, n):
        block = a0_mean[pos : pos + i]
        pos += i
        s_scales.append(np.diag(np.abs(block) * s_factor))
    dofs = list(s_dof) if s_dof is not None else [float(i + 1) for i in range(1, n)]
    return PriorSet(
        n=n,
        lags=lags,
        phi0_mean=phi0_mean,
        phi0_cov=phi0_cov,
        a0_mean=a0_mean,
        a0_cov=a0_cov,
        sigma0=np.diag(v_ols).copy(),
        hyperq_scale=phi0_cov * hyperq_factor,
        hyperq_dof=float(training.T),
        s_scales=s_scales,
        s_dofs=dofs,
        g_shape=g_shape,
        g_scale=g_scale,
        v0=v0,
        v_dof=v_dof,
        meta={"training_start": int(training.dates[0]), "training_end": int(training.dates[-1])},
    )
