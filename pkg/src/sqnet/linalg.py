"""Dense symmetric linear algebra.

Packed lower-triangular storage, a cyclic Jacobi eigensolver, and the two
Cholesky-backed solves used by the covariance decoders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    ConvergenceError,
    DimensionError,
    NotPositiveDefinite,
    SingularError,
    SymmetryError,
)

__all__ = [
    "SymMatrix",
    "EigenDecomposition",
    "packed_size",
    "dim_from_packed",
    "vec_lt",
    "vec_lt_w",
    "unvec_lt",
    "jacobi_eigh",
    "min_norm_solve",
    "default_ridge",
    "spd_solve",
]


def packed_size(d: int) -> int:
    return d * (d + 1) // 2


def dim_from_packed(D: int) -> int:
    d = int((np.sqrt(8 * D + 1) - 1) // 2)
    while packed_size(d) < D:
        d += 1
    if packed_size(d) != D:
        raise DimensionError(f"{D} is not a triangular number d(d+1)/2")
    return d


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric d x d matrix stored as its packed lower triangle."""

    d: int
    storage: np.ndarray

    def __post_init__(self):
        storage = np.asarray(self.storage, dtype=float)
        if storage.ndim != 1 or storage.size != packed_size(self.d):
            raise DimensionError(
                f"packed storage for d={self.d} needs {packed_size(self.d)} entries, got {storage.size}"
            )
        object.__setattr__(self, "storage", storage)

    @classmethod
    def from_dense(cls, M, tol: float = 1e-9) -> "SymMatrix":
        return cls(np.asarray(M).shape[0], vec_lt(M, tol=tol))

    def dense(self) -> np.ndarray:
        return unvec_lt(self.storage, self.d)


@dataclass(frozen=True)
class EigenDecomposition:
    eigvals: np.ndarray  # descending
    eigvecs: np.ndarray  # orthonormal columns
    sweeps: int = 0


def _as_dense_symmetric(M, tol: float = 1e-9) -> np.ndarray:
    if isinstance(M, SymMatrix):
        return M.dense()
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > tol * scale:
        raise SymmetryError("matrix is not symmetric")
    return M


def vec_lt(M, tol: float = 1e-9) -> np.ndarray:
    """Packed lower triangle in row-major order: (0,0), (1,0), (1,1), (2,0), ..."""
    if isinstance(M, SymMatrix):
        return M.storage.copy()
    M = _as_dense_symmetric(M, tol)
    return M[np.tril_indices(M.shape[0])].copy()


def vec_lt_w(M, tol: float = 1e-9) -> np.ndarray:
    """Like :func:`vec_lt` with off-diagonal entries doubled.

    ``vec_lt_w(A) @ vec_lt(B) == trace(A @ B)`` for symmetric ``A``, ``B``.
    """
    M = _as_dense_symmetric(M, tol) if not isinstance(M, SymMatrix) else M.dense()
    rows, cols = np.tril_indices(M.shape[0])
    return np.where(rows == cols, 1.0, 2.0) * M[rows, cols]


def unvec_lt(v, d: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError("packed vector must be one-dimensional")
    if d is None:
        d = dim_from_packed(v.size)
    if v.size != packed_size(d):
        raise DimensionError(f"packed vector for d={d} needs {packed_size(d)} entries, got {v.size}")
    out = np.zeros((d, d))
    rows, cols = np.tril_indices(d)
    out[rows, cols] = v
    out[cols, rows] = v
    return out


def _off_norm(A: np.ndarray) -> float:
    # computed directly; subtracting the diagonal from the full norm cancels badly
    return float(np.linalg.norm(A - np.diag(np.diag(A))))


def jacobi_eigh(M, tol: float = 1e-12, max_sweeps: int = 100) -> EigenDecomposition:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps over all (p, q) pairs in row order until the off-diagonal Frobenius
    norm drops below ``tol * ||M||_F``. Eigenvalues are returned in descending
    order and each eigenvector is signed so its first non-negligible component
    is positive.
    """
    A = np.array(_as_dense_symmetric(M), dtype=float)
    d = A.shape[0]
    if d < 1:
        raise DimensionError("matrix must be at least 1x1")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    A = 0.5 * (A + A.T)
    V = np.eye(d)
    target = tol * float(np.linalg.norm(A))
    sweeps = 0
    off = _off_norm(A)
    while off > target:
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal norm {off:.3e})",
                residual=off,
            )
        sweeps += 1
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                colp = A[:, p].copy()
                colq = A[:, q].copy()
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                rowp = A[p, :].copy()
                rowq = A[q, :].copy()
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        off = _off_norm(A)

    eigvals = np.diag(A).copy()
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    V = V[:, order]
    for j in range(d):
        col = V[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            V[:, j] = -col
    return EigenDecomposition(eigvals, V, sweeps)


def default_ridge(A) -> float:
    """Decoder ridge: ``1e-10 * trace(A A^T) / m``."""
    A = np.asarray(A, dtype=float)
    return 1e-10 * float(np.sum(A * A)) / A.shape[0]


def min_norm_solve(A, z, ridge: float = 0.0) -> np.ndarray:
    """Return ``A^T (A A^T + ridge I)^{-1} z``.

    With ``ridge == 0`` and full row rank this is the minimum-norm solution of
    the wide system ``A x = z``.
    """
    A = np.asarray(A, dtype=float)
    z = np.asarray(z, dtype=float)
    if A.ndim != 2:
        raise DimensionError("A must be a matrix")
    m, D = A.shape
    if z.shape != (m,):
        raise DimensionError(f"z must have length {m}, got shape {z.shape}")
    if m > D:
        raise DimensionError(f"min_norm_solve expects a wide system (m <= D), got {m}x{D}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    G = A @ A.T
    G[np.diag_indices(m)] += ridge
    try:
        L = scipy.linalg.cholesky(G, lower=True)
    except np.linalg.LinAlgError:
        raise SingularError("A A^T + ridge I is singular; use ridge > 0") from None
    scale = float(np.max(np.diag(G))) if m else 1.0
    if m and float(np.min(np.diag(L))) ** 2 <= 1e-14 * scale:
        raise SingularError("A is numerically rank deficient; use ridge > 0")
    y = scipy.linalg.cho_solve((L, True), z)
    return A.T @ y


def spd_solve(M, B) -> np.ndarray:
    """Solve ``M X = B`` for symmetric positive definite ``M`` via Cholesky."""
    Md = _as_dense_symmetric(M)
    B = np.asarray(B, dtype=float)
    vector = B.ndim == 1
    if B.shape[0] != Md.shape[0]:
        raise DimensionError(f"B has {B.shape[0]} rows, M is {Md.shape[0]}x{Md.shape[0]}")
    try:
        factor = scipy.linalg.cho_factor(Md, lower=True)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("matrix has a non-positive pivot") from None
    X = scipy.linalg.cho_solve(factor, B)
    return X if not vector else X.reshape(-1)
