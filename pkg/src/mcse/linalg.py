"""Minimal dense-array toolbox: cosine similarity, stable softmax pieces and
a central-difference gradient oracle.

All vectors and matrices are plain float64 numpy arrays in row-major order;
batches store one instance per row. Inputs are validated at the boundary
(finiteness, shape) and degenerate inputs raise instead of being patched
silently, so collapsed embeddings surface in tests.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# Below this Euclidean norm a vector is treated as degenerate.
NORM_EPS = 1e-12


class DimensionMismatchError(ValueError):
    """Operands have incompatible shapes."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input: empty, non-finite or (near-)zero norm."""


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Validate ``x`` as a finite 1-d float64 vector and return it."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-d vector, got shape {a.shape}")
    if a.size == 0:
        raise DegenerateInputError("empty vector")
    if dim is not None and a.shape[0] != dim:
        raise DimensionMismatchError(f"expected dim {dim}, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise DegenerateInputError("vector contains non-finite entries")
    return a


def as_matrix(x, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate ``x`` as a finite 2-d float64 matrix and return it."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-d matrix, got shape {a.shape}")
    if a.size == 0:
        raise DegenerateInputError("empty matrix")
    if rows is not None and a.shape[0] != rows:
        raise DimensionMismatchError(f"expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise DimensionMismatchError(f"expected {cols} cols, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise DegenerateInputError("matrix contains non-finite entries")
    return a


def cosine_sim(a, b) -> float:
    """Cosine similarity a.b / (|a||b|). Raises on dim mismatch or zero norm."""
    va = as_vector(a)
    vb = as_vector(b)
    if va.shape[0] != vb.shape[0]:
        raise DimensionMismatchError(
            f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < NORM_EPS or nb < NORM_EPS:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.dot(va, vb) / (na * nb))


def l2_normalize(a) -> np.ndarray:
    """Rescale ``a`` to unit Euclidean norm; direction is preserved."""
    v = as_vector(a)
    n = float(np.linalg.norm(v))
    if n < NORM_EPS:
        raise DegenerateInputError(f"cannot normalize: norm {n:.3e} < {NORM_EPS}")
    return v / n


def l2_normalize_rows(m) -> np.ndarray:
    """Row-wise unit normalization of a matrix; raises if any row is degenerate."""
    a = as_matrix(m)
    norms = np.linalg.norm(a, axis=1)
    if np.any(norms < NORM_EPS):
        bad = int(np.argmin(norms))
        raise DegenerateInputError(f"row {bad} has near-zero norm {norms[bad]:.3e}")
    return a / norms[:, None]


def log_sum_exp(xs) -> float:
    """log(sum(exp(xs))) with max-shift so overflow never occurs."""
    a = np.asarray(xs, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise DegenerateInputError("log_sum_exp needs a non-empty 1-d input")
    if not np.all(np.isfinite(a)):
        raise DegenerateInputError("log_sum_exp input contains non-finite entries")
    m = float(np.max(a))
    return m + float(np.log(np.sum(np.exp(a - m))))


def softmax_nll(scores, target: int) -> float:
    """Negative log softmax probability of ``scores[target]``.

    Equals -scores[target] + log_sum_exp(scores); always >= 0.
    """
    a = np.asarray(scores, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise DegenerateInputError("softmax_nll needs a non-empty 1-d input")
    if not 0 <= target < a.shape[0]:
        raise IndexError(f"target {target} out of range for {a.shape[0]} scores")
    return -float(a[target]) + log_sum_exp(a)


def finite_diff_grad(f: Callable[[np.ndarray], float], point,
                     eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+eps*e_k) - f(x-eps*e_k)) / 2eps.

    Deliberately independent of any analytic backward pass; used to verify
    hand-derived gradients.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_vector(point).copy()
    grad = np.empty_like(x)
    for k in range(x.shape[0]):
        orig = x[k]
        x[k] = orig + eps
        f_plus = float(f(x))
        x[k] = orig - eps
        f_minus = float(f(x))
        x[k] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise DegenerateInputError(
                f"non-finite function value near coordinate {k}")
        grad[k] = (f_plus - f_minus) / (2.0 * eps)
    return grad
