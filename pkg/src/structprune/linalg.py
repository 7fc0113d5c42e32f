"""Small dense numerical kernels used by the importance and recovery code.

Everything here works in float64 on plain numpy arrays.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidInputError, NumericalError

VAR_EPS = kernels.VAR_EPS
NORM_EPS = 1e-30


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # column i pairs with eigenvalues[i]
    sweeps: int = 0


def _as_matrix(x, name="X"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def covariance(X):
    """Unnormalized scatter matrix ``(X - mu)^T (X - mu)`` of the rows of X."""
    X = _as_matrix(X)
    if X.shape[0] < 2:
        raise InvalidInputError(f"covariance needs at least 2 rows, got {X.shape[0]}")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc
    return 0.5 * (C + C.T)


def sym_eig(S, tol=1e-10, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Converged when the off-diagonal Frobenius norm drops to ``tol * ||S||_F``.
    Eigenvalues come back in descending order (ties keep index order).
    """
    S = _as_matrix(S, "S")
    n, m = S.shape
    if n != m:
        raise InvalidInputError(f"sym_eig needs a square matrix, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise InvalidInputError("sym_eig input contains NaN or Inf")
    a = np.ascontiguousarray(0.5 * (S + S.T))
    v = np.eye(n)
    scale = float(np.linalg.norm(a))
    sweeps, resid = kernels.jacobi_rotate(a, v, kernels.round_robin_pairs(n), tol * scale, max_sweeps)
    if sweeps < 0:
        raise NumericalError(
            f"Jacobi did not converge in {max_sweeps} sweeps; off-diagonal norm {resid:.3e}",
            residual=float(resid),
        )
    lam = np.diag(a).copy()
    order = np.argsort(-lam, kind="stable")
    return EigenDecomposition(lam[order], np.ascontiguousarray(v[:, order]), int(sweeps))


def pearson(a, b):
    """Pearson correlation of two equal-length vectors (flattened if not 1-D).

    Returns 0 when either side has (population) variance below ``VAR_EPS``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"pearson length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise InvalidInputError("pearson needs at least 2 elements")
    return kernels._pearson_flat_numpy(a, b)


def cosine(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"cosine length mismatch: {a.size} vs {b.size}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise InvalidInputError("cosine of a zero-norm vector is undefined")
    return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))


def fit_line_1d(x, y):
    """Least-squares ``y ~ A x + B``.

    Degenerate ``x`` (variance < VAR_EPS) gives ``A = 1, B = mean(y - x)``.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidInputError(f"fit_line_1d length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise InvalidInputError("fit_line_1d needs at least 2 points")
    A, B = fit_lines(x[:, None], y[:, None])
    return float(A[0]), float(B[0])


def fit_lines(X, Y):
    """Column-wise :func:`fit_line_1d`: column i of Y regressed on column i of X."""
    X = _as_matrix(X)
    Y = _as_matrix(Y, "Y")
    if X.shape != Y.shape:
        raise InvalidInputError(f"fit_lines shape mismatch: {X.shape} vs {Y.shape}")
    if X.shape[0] < 2:
        raise InvalidInputError("fit_lines needs at least 2 rows")
    mx = X.mean(axis=0)
    my = Y.mean(axis=0)
    Xc = X - mx
    var = np.einsum("ij,ij->j", Xc, Xc) / X.shape[0]
    cov = np.einsum("ij,ij->j", Xc, Y - my) / X.shape[0]
    degenerate = var < VAR_EPS
    A = np.where(degenerate, 1.0, cov / np.where(degenerate, 1.0, var))
    B = np.where(degenerate, my - mx, my - A * mx)
    return A, B


def softmax_scaled(v, alpha):
    """``softmax(alpha * v)`` with max subtraction."""
    z = float(alpha) * np.asarray(v, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def silu(x):
    return x * sigmoid(x)


__all__ = [
    "EigenDecomposition",
    "covariance",
    "sym_eig",
    "pearson",
    "cosine",
    "fit_line_1d",
    "fit_lines",
    "softmax_scaled",
    "sigmoid",
    "silu",
]
