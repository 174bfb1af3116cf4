"""Dense symmetric-matrix kernels shared by the whole package.

All routines work on plain numpy arrays.  Symmetric matrices travel as
full square arrays; ``svec``/``smat`` convert to and from the scaled
upper-triangle vectorization used by the conic solver's PSD blocks.
"""

from __future__ import annotations

import numpy as np

SQRT2 = float(np.sqrt(2.0))

# Relative symmetry slack accepted by sym_eig / project_psd.
_SYM_RTOL = 1e-10


class InvalidMatrixError(ValueError):
    """Input matrix has non-finite entries or is not symmetric/square."""


class DimensionMismatchError(ValueError):
    """Vector or matrix dimensions are inconsistent."""


def tri_dim(n: int) -> int:
    """Length of the svec of an n x n symmetric matrix."""
    return n * (n + 1) // 2


def tri_order(length: int) -> int:
    """Inverse of tri_dim; raises if length is not a triangular number."""
    n = int((np.sqrt(8 * length + 1) - 1) / 2)
    if tri_dim(n) != length:
        raise DimensionMismatchError(
            f"length {length} is not a triangular number"
        )
    return n


def _check_square(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionMismatchError(f"expected square matrix, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidMatrixError("matrix has non-finite entries")
    return X


def _check_symmetric(X: np.ndarray) -> np.ndarray:
    X = _check_square(X)
    scale = max(1.0, float(np.abs(X).max()))
    if np.abs(X - X.T).max() > _SYM_RTOL * scale:
        raise InvalidMatrixError("matrix is not symmetric")
    return 0.5 * (X + X.T)


def sym_eig(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix.

    Returns (w, V) with eigenvalues ascending and V orthonormal so that
    X = V diag(w) V^T up to round-off.
    """
    X = _check_symmetric(X)
    w, V = np.linalg.eigh(X)
    return w, V


def project_psd(X: np.ndarray) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix (eigenvalue clipping)."""
    w, V = sym_eig(X)
    if w[0] >= 0.0:
        return np.asarray(X, dtype=float)
    w = np.maximum(w, 0.0)
    return (V * w) @ V.T


def spectral_abscissa(M: np.ndarray) -> float:
    """Largest real part over the eigenvalues of a square real matrix."""
    M = _check_square(M)
    return float(np.max(np.linalg.eigvals(M).real))


def _svec_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    # Upper triangle scanned column by column: (0,0),(0,1),(1,1),(0,2),...
    cols, rows = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = rows <= cols
    return rows[mask], cols[mask]


def svec(X: np.ndarray) -> np.ndarray:
    """Scaled vectorization of a symmetric matrix.

    Off-diagonal entries are multiplied by sqrt(2) so that
    <svec(X), svec(Y)> = trace(X Y).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionMismatchError(f"expected square matrix, got {X.shape}")
    n = X.shape[0]
    r, c = _svec_indices(n)
    v = X[r, c].copy()
    v[r != c] *= SQRT2
    return v


def smat(v: np.ndarray) -> np.ndarray:
    """Inverse of svec."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatchError("expected a vector")
    n = tri_order(v.shape[0])
    r, c = _svec_indices(n)
    vals = v.copy()
    vals[r != c] /= SQRT2
    X = np.zeros((n, n))
    X[r, c] = vals
    X[c, r] = vals
    return X
