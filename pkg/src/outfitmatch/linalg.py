"""Dense float64 kernel: matrices are 2-D ndarrays, vectors 1-D ndarrays.

Everything downstream (encoders, attention, teacher) is built from these
few operations, so they are kept pure and overflow-safe.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import InputError, OracleError

Matrix = np.ndarray
Vector = np.ndarray


def matvec(m: Matrix, v: Vector) -> Vector:
    """Matrix-vector product with an explicit dimension check."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise InputError(
            f"matvec dimension mismatch: matrix {m.shape} vs vector {v.shape}"
        )
    return m @ v


def sigmoid(x):
    """Numerically stable logistic 1/(1+e^-x); saturates cleanly for |x|>36.

    Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def softmax2(a: float, b: float) -> tuple[float, float]:
    """Two-way softmax with max-shift; components sum to 1."""
    m = a if a >= b else b
    ea = np.exp(a - m)
    eb = np.exp(b - m)
    s = ea + eb
    return float(ea / s), float(eb / s)


def finite_diff_gradient(
    f: Callable[[Vector], float], x: Vector, h: float = 1e-5
) -> Vector:
    """Central-difference gradient oracle: (f(x+h e_d) - f(x-h e_d)) / 2h."""
    if h <= 0:
        raise InputError("finite_diff_gradient requires h > 0")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for d in range(x.size):
        step = np.zeros_like(x)
        step.flat[d] = h
        up = f(x + step)
        down = f(x - step)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise OracleError(
                f"non-finite evaluation at dimension {d}: f+={up}, f-={down}"
            )
        grad.flat[d] = (up - down) / (2.0 * h)
    return grad
