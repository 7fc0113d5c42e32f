"""Per-output-dimension affine recovery of a pruned projection.

After pruning, each output dimension i is refit as ``O_i ~ A_i * O_pruned_i + B_i``
on calibration data, and the map is folded back into the projection as a row
scaling plus a bias.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .linalg import fit_lines


@dataclass
class RegressionCoefficients:
    A: np.ndarray
    B: np.ndarray
    per_dim_sse_before: np.ndarray
    per_dim_sse_after: np.ndarray

    @classmethod
    def identity(cls, d):
        z = np.zeros(d)
        return cls(np.ones(d), np.zeros(d), z, z.copy())

    def summary(self):
        return {
            "mean_A": float(np.mean(self.A)),
            "mean_B": float(np.mean(self.B)),
            "min_A": float(np.min(self.A)),
            "max_A": float(np.max(self.A)),
            "sse_before": float(np.sum(self.per_dim_sse_before)),
            "sse_after": float(np.sum(self.per_dim_sse_after)),
        }


def fit_recovery(O_orig, O_pruned):
    O = np.asarray(O_orig, dtype=np.float64)
    P = np.asarray(O_pruned, dtype=np.float64)
    if O.shape != P.shape or O.ndim != 2:
        raise InvalidInputError(f"fit_recovery shape mismatch: {O.shape} vs {P.shape}")
    if O.shape[0] < 2:
        raise InvalidInputError("fit_recovery needs at least 2 tokens")
    A, B = fit_lines(P, O)
    before = np.sum((O - P) ** 2, axis=0)
    after = np.sum((O - (A * P + B)) ** 2, axis=0)
    return RegressionCoefficients(A, B, before, after)


def fold_recovery(weight, bias, coeffs, drop_bias=False):
    """Fold ``y -> A*y + B`` into ``y = x @ weight.T + bias``.

    Returns ``(weight', bias')`` in float64. ``drop_bias`` ignores B (and the
    bias is then only present if one existed already).
    """
    W = np.asarray(weight, dtype=np.float64)
    A = np.asarray(coeffs.A, dtype=np.float64)
    B = np.asarray(coeffs.B, dtype=np.float64)
    if A.shape != (W.shape[0],) or B.shape != (W.shape[0],):
        raise InvalidInputError(f"coefficients length {A.shape} does not match {W.shape[0]} output rows")
    W2 = W * A[:, None]
    if drop_bias:
        new_bias = None if bias is None else A * np.asarray(bias, dtype=np.float64)
    else:
        old = 0.0 if bias is None else np.asarray(bias, dtype=np.float64)
        new_bias = A * old + B
    return W2, new_bias
