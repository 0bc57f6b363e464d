"""Dense float32 kernels with a fixed reduction order.

Every reduction (matmul inner products, softmax denominators, layer-norm
moments) accumulates in float64 in ascending index order and rounds to
float32 exactly once, so results are bit-reproducible run to run and do not
depend on BLAS threading or blocking.  Loops over output elements may be
tiled freely; only the per-element accumulation order is fixed.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .errors import NumericError, ShapeError

# Tile sizes for the matmul loop nest.  They change cache behaviour only.
_ROW_TILE = 32
_COL_TILE = 512

_GELU_C = math.sqrt(2.0 / math.pi)


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce ``x`` to a C-contiguous 2-D float32 array."""
    m = np.ascontiguousarray(x, dtype=np.float32)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def _check_finite(m: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(m).all():
        raise NumericError(f"{op} produced a non-finite value")
    return m


@numba.njit(cache=True, boundscheck=False, error_model="numpy")
def _matmul_kernel(a, b, row_tile, col_tile):
    m, k = a.shape
    n = b.shape[1]
    out = np.empty((m, n), dtype=np.float32)
    acc = np.zeros((row_tile, col_tile), dtype=np.float64)
    for j0 in range(0, n, col_tile):
        w = min(col_tile, n - j0)
        for i0 in range(0, m, row_tile):
            ib = min(row_tile, m - i0)
            acc[:, :] = 0.0
            for p in range(k):
                brow = b[p, j0:j0 + w]
                for ii in range(ib):
                    x = np.float64(a[i0 + ii, p])
                    arow = acc[ii]
                    for j in range(w):
                        arow[j] += x * np.float64(brow[j])
            for ii in range(ib):
                for j in range(w):
                    out[i0 + ii, j0 + j] = np.float32(acc[ii, j])
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b``.

    Each output entry is ``sum_p a[i, p] * b[p, j]`` accumulated in float64
    for ``p = 0, 1, ..., k-1`` and rounded to float32 once.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if a.shape[0] == 0 or b.shape[1] == 0:
        return np.zeros((a.shape[0], b.shape[1]), dtype=np.float32)
    return _check_finite(_matmul_kernel(a, b, _ROW_TILE, _COL_TILE), "matmul")


@numba.njit(cache=True, boundscheck=False, error_model="numpy")
def _softmax_kernel(m, scale):
    rows, cols = m.shape
    out = np.empty((rows, cols), dtype=np.float32)
    buf = np.empty(cols, dtype=np.float64)
    for i in range(rows):
        top = -np.inf
        for j in range(cols):
            buf[j] = np.float64(m[i, j]) * scale
            if buf[j] > top:
                top = buf[j]
        total = 0.0
        for j in range(cols):
            buf[j] = math.exp(buf[j] - top)
            total += buf[j]
        for j in range(cols):
            out[i, j] = np.float32(buf[j] / total)
    return out


def softmax_rows(m, scale: float = 1.0) -> np.ndarray:
    """Row-wise ``softmax(scale * m)``, stabilised by the row maximum."""
    m = as_matrix(m, "m")
    if m.shape[1] == 0:
        raise ShapeError(f"softmax over an empty row: shape {m.shape}")
    _check_finite(m, "softmax_rows input")
    return _check_finite(_softmax_kernel(m, float(scale)), "softmax_rows")


@numba.njit(cache=True, boundscheck=False, error_model="numpy")
def _layer_norm_kernel(x, gamma, beta, eps):
    rows, n = x.shape
    out = np.empty((rows, n), dtype=np.float32)
    for i in range(rows):
        s = 0.0
        for j in range(n):
            s += np.float64(x[i, j])
        mean = s / n
        v = 0.0
        for j in range(n):
            c = np.float64(x[i, j]) - mean
            v += c * c
        inv = 1.0 / math.sqrt(v / n + eps)
        for j in range(n):
            y = (np.float64(x[i, j]) - mean) * inv
            out[i, j] = np.float32(y * np.float64(gamma[j]) + np.float64(beta[j]))
    return out


def layer_norm_rows(x, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    """Normalise every row of ``x`` to zero mean and unit (population) variance."""
    x = as_matrix(x, "x")
    gamma = as_matrix(gamma, "gamma").reshape(-1)
    beta = as_matrix(beta, "beta").reshape(-1)
    if not (x.shape[1] == gamma.size == beta.size):
        raise ShapeError(
            f"layer_norm shape mismatch: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return _check_finite(_layer_norm_kernel(x, gamma, beta, float(eps)), "layer_norm")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    """Single-vector form of :func:`layer_norm_rows`; returns a 1-D array."""
    return layer_norm_rows(np.asarray(x).reshape(1, -1), gamma, beta, eps).reshape(-1)


def gelu(x: float) -> float:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    return 0.5 * x * (1.0 + math.tanh(_GELU_C * (x + 0.044715 * x * x * x)))


@numba.njit(cache=True, boundscheck=False, error_model="numpy")
def _gelu_kernel(x, c):
    flat = x.ravel()
    out = np.empty(flat.size, dtype=np.float32)
    for i in range(flat.size):
        v = np.float64(flat[i])
        out[i] = np.float32(0.5 * v * (1.0 + math.tanh(c * (v + 0.044715 * v * v * v))))
    return out.reshape(x.shape)


def gelu_array(x) -> np.ndarray:
    """Element-wise :func:`gelu` over a float32 array, evaluated in float64."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    return _check_finite(_gelu_kernel(x, _GELU_C), "gelu")
