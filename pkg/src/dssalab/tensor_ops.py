"""Minimal dense numeric primitives shared by all modules.

All functions take and return numpy arrays (row-major, float64 unless noted)
and validate that no NaN/Inf leaves an exported operation.
"""

from __future__ import annotations

import warnings

import numpy as np

NEG_INF = float("-inf")


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericsError(ValueError):
    """An operation produced (or received) NaN/Inf."""


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def ensure_finite(x: np.ndarray, where: str) -> np.ndarray:
    """Raise NumericsError if x contains NaN or Inf."""
    if not np.all(np.isfinite(x)):
        raise NumericsError(f"non-finite values in {where}")
    return x


def matmul(a, b) -> np.ndarray:
    """Dense product a @ b with an explicit inner-dimension check."""
    a = as_f64(a)
    b = as_f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return ensure_finite(a @ b, "matmul")


def softmax_rows(x, additive_mask=None) -> np.ndarray:
    """Row-wise softmax with max-subtraction stabilization.

    additive_mask, if given, is added to x before the exponential; excluded
    positions carry -inf. A row with every position masked is an error.
    """
    x = as_f64(x)
    if additive_mask is not None:
        m = np.asarray(additive_mask, dtype=np.float64)
        if m.shape != x.shape:
            raise ShapeError(f"mask shape {m.shape} != input shape {x.shape}")
        x = x + m
    if x.ndim == 1:
        return softmax_rows(x[None, :], None)[0]
    row_max = np.max(x, axis=-1, keepdims=True)
    if np.any(np.isneginf(row_max)):
        raise NumericsError("softmax row with all positions masked")
    with np.errstate(invalid="ignore"):
        shifted = x - row_max
    shifted[np.isneginf(x)] = NEG_INF  # -inf - (-inf) would be NaN
    e = np.exp(shifted)
    return ensure_finite(e / np.sum(e, axis=-1, keepdims=True), "softmax_rows")


def causal_additive_mask(n: int) -> np.ndarray:
    """n x n additive mask: 0 on and below the diagonal, -inf above."""
    mask = np.zeros((n, n))
    mask[np.triu_indices(n, k=1)] = NEG_INF
    return mask


def window_additive_mask(n: int, window: int) -> np.ndarray:
    """Causal mask further restricted to the last `window` positions."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    mask = causal_additive_mask(n)
    rows = np.arange(n)[:, None]
    cols = np.arange(n)[None, :]
    mask[cols < rows - window + 1] = NEG_INF
    return mask


def rms_norm(x, weight, eps: float = 1e-6) -> np.ndarray:
    """y_j = w_j * x_j / sqrt(mean(x^2) + eps), over the last axis."""
    x = as_f64(x)
    w = as_f64(weight)
    if x.shape[-1] != w.shape[-1] or w.ndim != 1:
        raise ShapeError(f"weight length {w.shape} != row length {x.shape[-1]}")
    ms = np.mean(x * x, axis=-1, keepdims=True)
    return ensure_finite(w * x / np.sqrt(ms + eps), "rms_norm")


def sigmoid(x) -> np.ndarray:
    x = as_f64(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x) -> np.ndarray:
    """x * sigmoid(x)."""
    x = as_f64(x)
    return ensure_finite(x * sigmoid(x), "silu")


def l2_normalize_rows(x) -> np.ndarray:
    """Scale each row to unit L2 norm. Zero rows stay zero and are flagged."""
    x = as_f64(x)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    zero = norms == 0.0
    if np.any(zero):
        warnings.warn("zero row(s) in l2_normalize_rows left as zeros", RuntimeWarning)
        norms = np.where(zero, 1.0, norms)
    return ensure_finite(x / norms, "l2_normalize_rows")
