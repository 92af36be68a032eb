"""VAR bookkeeping shared across modules: regressors, A matrices, companion form."""
from __future__ import annotations

import numpy as np


def n_alpha(n: int) -> int:
    return n * (n - 1) // 2


def lag_matrix(data: np.ndarray, lags: int) -> tuple[np.ndarray, np.ndarray]:
    """``Y = data[lags:]`` and ``X = [1, y_{t-1}', ..., y_{t-lags}']``."""
    data = np.asarray(data, dtype=float)
    T = data.shape[0]
    if T <= lags:
        raise ValueError(f"need more than {lags} rows")
    X = np.ones((T - lags, 1 + data.shape[1] * lags))
    for l in range(1, lags + 1):
        X[:, 1 + (l - 1) * data.shape[1] : 1 + l * data.shape[1]] = data[lags - l : T - l]
    return data[lags:], X


def coef_matrix(phi: np.ndarray, n: int) -> np.ndarray:
    """Equation-major coefficient vector(s) ``(..., n*m)`` -> ``(..., n, m)``."""
    phi = np.asarray(phi, dtype=float)
    return phi.reshape(phi.shape[:-1] + (n, phi.shape[-1] // n))


def lag_blocks(phi: np.ndarray, n: int, lags: int) -> np.ndarray:
    """Lag matrices ``(..., lags, n, n)`` from coefficient vector(s)."""
    C = coef_matrix(phi, n)
    blocks = [C[..., :, 1 + l * n : 1 + (l + 1) * n] for l in range(lags)]
    return np.stack(blocks, axis=-3)


def companion(phi: np.ndarray, n: int, lags: int) -> np.ndarray:
    """Companion matrices ``(..., n*lags, n*lags)``."""
    B = lag_blocks(phi, n, lags)
    lead = B.shape[:-3]
    F = np.zeros(lead + (n * lags, n * lags))
    for l in range(lags):
        F[..., :n, l * n : (l + 1) * n] = B[..., l, :, :]
    if lags > 1:
        F[..., n:, : n * (lags - 1)] = np.eye(n * (lags - 1))
    return F


def spectral_radius(phi: np.ndarray, n: int, lags: int) -> np.ndarray:
    return np.max(np.abs(np.linalg.eigvals(companion(phi, n, lags))), axis=-1)


def A_from_alpha(alpha: np.ndarray, n: int) -> np.ndarray:
    """Unit lower-triangular ``A`` (``(..., n, n)``) from free elements, row by row."""
    alpha = np.asarray(alpha, dtype=float)
    lead = alpha.shape[:-1]
    A = np.broadcast_to(np.eye(n), lead + (n, n)).copy()
    pos = 0
    for i in range(1, n):
        A[..., i, :i] = alpha[..., pos : pos + i]
        pos += i
    return A


def alpha_slices(n: int) -> list[slice]:
    """Slice of the alpha vector that belongs to each equation ``i = 1..n-1``."""
    out, pos = [], 0
    for i in range(1, n):
        out.append(slice(pos, pos + i))
        pos += i
    return out


def reduced_cov(alpha: np.ndarray, lnsig: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """``Σ_t = A_t^{-1} H_t A_t^{-1}'`` with ``H_t = diag(exp(lnsig) / λ)``."""
    n = lnsig.shape[-1]
    Ainv = np.linalg.inv(A_from_alpha(alpha, n))
    h = np.exp(lnsig) / lam
    return np.einsum("...ij,...j,...kj->...ik", Ainv, h, Ainv)


def obs_loading(X: np.ndarray, n: int) -> np.ndarray:
    """``Z_t = I_n ⊗ x_t'`` for every row of ``X``: ``(T, n, n*m)``."""
    T, m = X.shape
    Z = np.zeros((T, n, n * m))
    for i in range(n):
        Z[:, i, i * m : (i + 1) * m] = X
    return Z
