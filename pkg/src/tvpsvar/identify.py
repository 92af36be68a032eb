"""Structural identification at one date of one posterior draw.

Moving-average matrices come from the date-``t`` coefficients (constant-
coefficient approximation).  Two schemes map the lower Cholesky factor
``Ω̃`` of ``Σ_t`` to structural impact vectors ``Ω̃ q``:

* max-share: ``q`` maximises the share of the target variable's
  forecast-error variance, summed over horizons ``1..K``, explained by one
  shock; it is the top eigenvector of
  ``M = Σ_{j<K} (K - j) Ω̃'B_j' e e' B_j Ω̃``.
* sign restrictions: ``Q`` is drawn uniformly (Haar) over orthonormal
  matrices until every restricted column has the required signs, with
  column sign flips allowed.

The batched functions work over any leading axes (draws, dates).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .varutil import lag_blocks

SCHEMES = ("maxshare", "sign", "cholesky")

# Impact signs of the four-variable scheme, by variable role and shock.
DEFAULT_SIGN_SHOCKS = ("AD", "AS", "MS", "MD")
DEFAULT_SIGNS = {
    "output": {"AD": 1, "AS": 1, "MS": 0, "MD": 0},
    "prices": {"AD": 1, "AS": -1, "MS": 1, "MD": 0},
    "money": {"AD": 0, "AS": 0, "MS": 1, "MD": 1},
    "rate": {"AD": 1, "AS": 0, "MS": -1, "MD": 1},
}


class IdentificationError(ValueError):
    pass


@dataclass
class MaShape:
    """MA matrices ``B`` (``(K+1, n, n)``, ``B[0] = I``) and ``Ω̃`` with ``Ω̃Ω̃' = Σ``."""

    B: np.ndarray
    omega: np.ndarray

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return self.omega @ self.omega.T

    @classmethod
    def from_var(cls, phi_t: np.ndarray, sigma_t: np.ndarray, lags: int, horizons: int) -> "MaShape":
        n = sigma_t.shape[0]
        return cls(ma_coefficients(phi_t, n, lags, horizons), np.linalg.cholesky(sigma_t))


@dataclass
class StructuralRotation:
    """Orthonormal columns ``Q`` (``(n, n_shocks)``) and how they were chosen."""

    scheme: str
    Q: np.ndarray
    target: int | None = None
    horizon: int | None = None
    share: float | None = None
    sign_matrix: np.ndarray | None = None
    shock_names: tuple[str, ...] = field(default_factory=tuple)
    tries: int = 0


def ma_coefficients(phi_t: np.ndarray, n: int, lags: int, horizons: int) -> np.ndarray:
    """``B_0..B_horizons`` for coefficient vector(s) ``(..., k)``.

    ``B_j = Σ_{l=1..min(j, lags)} A_l B_{j-l}``, the top-left block of the
    ``j``-th power of the companion matrix.
    """
    A = lag_blocks(np.asarray(phi_t, dtype=float), n, lags)
    lead = A.shape[:-3]
    B = np.zeros(lead + (horizons + 1, n, n))
    B[..., 0, :, :] = np.eye(n)
    for j in range(1, horizons + 1):
        acc = np.zeros(lead + (n, n))
        for l in range(1, min(j, lags) + 1):
            acc += A[..., l - 1, :, :] @ B[..., j - l, :, :]
        B[..., j, :, :] = acc
    return B


def fev_matrix(B: np.ndarray, omega: np.ndarray, target: int, K: int) -> np.ndarray:
    """``M = Σ_{j<K} (K - j) w_j w_j'`` with ``w_j = Ω̃' B_j' e_target``; batched."""
    w = np.einsum("...jk,...kl->...jl", B[..., :K, target, :], omega)
    weights = (K - np.arange(K)).astype(float)
    return np.einsum("j,...ja,...jb->...ab", weights, w, w)


def fev_share(q: np.ndarray, B: np.ndarray, omega: np.ndarray, target: int, K: int) -> np.ndarray:
    """Share of the target's summed FEV explained by unit vector(s) ``q``."""
    M = fev_matrix(B, omega, target, K)
    num = np.einsum("...a,...ab,...b->...", q, M, q)
    return num / np.trace(M, axis1=-2, axis2=-1)


def max_fev_batch(B: np.ndarray, omega: np.ndarray, target: int, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Max-share impact rotation over leading axes.

    Returns ``(q, share)`` with ``q`` of shape ``(..., n)``, unit norm and
    normalised so that the target's impact response is positive.
    """
    if K < 1:
        raise IdentificationError("horizon K must be at least 1")
    n = omega.shape[-1]
    if not 0 <= target < n:
        raise IdentificationError(f"target index {target} out of range for n={n}")
    M = fev_matrix(B, omega, target, K)
    total = np.trace(M, axis1=-2, axis2=-1)
    if np.any(~(total > 0)):
        raise IdentificationError("degenerate forecast-error variance (zero or non-finite matrix)")
    vals, vecs = np.linalg.eigh(M)
    q = vecs[..., :, -1]
    impact = np.einsum("...j,...j->...", omega[..., target, :], q)
    # a zero impact (possible only for K > 1) falls back to the largest component
    ref = np.take_along_axis(q, np.argmax(np.abs(q), axis=-1)[..., None], axis=-1)[..., 0]
    sgn = np.where(impact != 0, np.sign(impact), np.sign(ref))
    return q * sgn[..., None], vals[..., -1] / total


def max_fev_rotation(shape: MaShape, target_var: int = 0, K: int = 1) -> StructuralRotation:
    """Max-share shock for ``target_var`` over horizons ``1..K``."""
    if shape.B.shape[0] < K:
        raise IdentificationError(f"need at least {K} MA matrices")
    q, share = max_fev_batch(shape.B, shape.omega, target_var, K)
    return StructuralRotation("maxshare", q[:, None], target=target_var, horizon=K, share=float(share))


def cholesky_rotation(n: int, column: int = 0) -> StructuralRotation:
    Q = np.zeros((n, 1))
    Q[column, 0] = 1.0
    return StructuralRotation("cholesky", Q, target=column)


def complete_basis(q: np.ndarray) -> np.ndarray:
    """Orthonormal ``n × n`` matrix whose first column is the unit vector ``q``."""
    q = np.asarray(q, dtype=float).reshape(-1)
    n = q.size
    Qf, _ = np.linalg.qr(np.column_stack([q, np.eye(n)]))
    Qf = Qf[:, :n]
    if Qf[:, 0] @ q < 0:
        Qf[:, 0] = -Qf[:, 0]
    return Qf


def haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed orthonormal matrix (QR with positive diagonal of R)."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d[None, :]


def cumulated_responses(B: np.ndarray, impact: np.ndarray, horizon: int) -> np.ndarray:
    """``Σ_{j≤h} B_j impact`` for ``h = 0..horizon``; ``impact`` is ``(..., n, s)``."""
    resp = np.einsum("...hij,...js->...his", B[..., : horizon + 1, :, :], impact)
    return np.cumsum(resp, axis=-3)


def sign_rotation(
    shape: MaShape,
    sign_matrix: np.ndarray,
    rng: np.random.Generator,
    max_tries: int = 1000,
    horizon: int = 0,
    shock_names: tuple[str, ...] = (),
) -> StructuralRotation | None:
    """First Haar draw satisfying the sign pattern, or ``None`` after ``max_tries``.

    ``sign_matrix`` is ``variables × shocks`` with entries in ``{1, -1, 0}``.
    Restrictions bind on the cumulated responses at horizons ``0..horizon``
    (impact only by default).  Column ``j`` of the draw is tested against
    shock ``j``; a column whose negative satisfies the pattern is flipped.
    """
    S = np.asarray(sign_matrix, dtype=float)
    n = shape.n
    if S.ndim != 2 or S.shape[0] != n or S.shape[1] > n:
        raise IdentificationError(f"sign matrix must be {n} x (<= {n})")
    if np.any(np.all(S == 0, axis=0)):
        raise IdentificationError("every shock column needs at least one restriction")
    if shape.B.shape[0] <= horizon:
        raise IdentificationError(f"need MA matrices up to horizon {horizon}")
    s = S.shape[1]
    mask = S != 0
    for attempt in range(1, max_tries + 1):
        Q = haar_orthogonal(n, rng)
        resp = cumulated_responses(shape.B, shape.omega @ Q[:, :s], horizon)  # (h, n, s)
        ok = True
        for j in range(s):
            r = np.sign(resp[:, mask[:, j], j])
            want = S[mask[:, j], j]
            if np.all(r == want):
                continue
            if np.all(r == -want):
                Q[:, j] = -Q[:, j]
                continue
            ok = False
            break
        if ok:
            return StructuralRotation("sign", Q[:, :s], sign_matrix=S, horizon=horizon,
                                      shock_names=tuple(shock_names), tries=attempt)
    return None


def default_sign_matrix(roles: list[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    """Default four-shock pattern for variables given by role."""
    unknown = [r for r in roles if r not in DEFAULT_SIGNS]
    if unknown:
        raise IdentificationError(f"no default signs for variable roles {unknown}")
    S = np.array([[DEFAULT_SIGNS[r][s] for s in DEFAULT_SIGN_SHOCKS] for r in roles], dtype=float)
    return S, DEFAULT_SIGN_SHOCKS


_SIGN_TOKENS = {"+": 1.0, "-": -1.0, "−": -1.0, "0": 0.0, "": 0.0, "1": 1.0, "-1": -1.0}


def load_sign_matrix(path: str | Path, variables: tuple[str, ...] | None = None) -> tuple[np.ndarray, tuple[str, ...]]:
    """Read a sign CSV: header ``variable,<shock>,...``; rows are variables.

    When ``variables`` is given the rows are reordered to match and every
    variable must be present.
    """
    path = Path(path)
    if not path.is_file():
        raise IdentificationError(f"sign matrix file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise IdentificationError(f"{path}: need a header and at least one row")
    shocks = tuple(c.strip() for c in rows[0][1:])
    names, vals = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(shocks) + 1:
            raise IdentificationError(f"{path}:{lineno}: expected {len(shocks) + 1} fields")
        names.append(r[0].strip())
        try:
            vals.append([_SIGN_TOKENS[c.strip()] for c in r[1:]])
        except KeyError as exc:
            raise IdentificationError(f"{path}:{lineno}: sign entries must be +, - or 0, got {exc}") from None
    S = np.array(vals)
    if variables is not None:
        missing = [v for v in variables if v not in names]
        if missing:
            raise IdentificationError(f"{path}: no row for variables {missing}")
        S = S[[names.index(v) for v in variables]]
    return S, shocks
