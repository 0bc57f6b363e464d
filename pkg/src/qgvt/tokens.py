"""Activation containers passed between the encoder and the compressor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

CLS_ORIGIN = -1


@dataclass(frozen=True)
class TokenMatrix:
    """``(count + 1) x d`` activations with the CLS token in row 0.

    ``origin[r]`` is the raster index of the image patch row ``r`` came from
    (``-1`` for CLS).  Patch origins are kept strictly increasing, so row
    order and origin order always agree.
    """

    tokens: np.ndarray
    origin: np.ndarray
    layer: int = -1

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ShapeError(f"tokens must be 2-D, got {self.tokens.shape}")
        if self.origin.shape != (self.tokens.shape[0],):
            raise ShapeError(f"origin shape {self.origin.shape} does not match {self.tokens.shape[0]} rows")
        if self.tokens.shape[0] < 1 or self.origin[0] != CLS_ORIGIN:
            raise ValidationError("row 0 must be the CLS token (origin -1)")
        if np.any(np.diff(self.origin[1:]) <= 0) or (len(self.origin) > 1 and self.origin[1] < 0):
            raise ValidationError("patch origins must be non-negative and strictly increasing")

    @classmethod
    def fresh(cls, tokens: np.ndarray, layer: int = -1) -> "TokenMatrix":
        """Wrap a full, uncompressed activation matrix (origins in raster order)."""
        origin = np.arange(-1, tokens.shape[0] - 1, dtype=np.int64)
        return cls(np.ascontiguousarray(tokens, dtype=np.float32), origin, layer)

    @property
    def count(self) -> int:
        """Number of patch tokens (CLS excluded)."""
        return self.tokens.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    @property
    def patch_origins(self) -> np.ndarray:
        return self.origin[1:]


@dataclass(frozen=True)
class AttentionProjections:
    """Per-head Q, K, V, each ``heads x (count + 1) x head_dim``."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    @property
    def heads(self) -> int:
        return self.k.shape[0]

    @property
    def head_dim(self) -> int:
        return self.k.shape[2]


@dataclass(frozen=True)
class AttentionTensor:
    """Row-stochastic attention: ``per_head`` is ``heads x T x T``, ``head_mean`` is ``T x T``."""

    per_head: np.ndarray
    head_mean: np.ndarray

    @classmethod
    def from_heads(cls, per_head: np.ndarray) -> "AttentionTensor":
        acc = np.zeros(per_head.shape[1:], dtype=np.float64)
        for h in range(per_head.shape[0]):  # fixed head order
            acc += per_head[h]
        return cls(per_head, (acc / per_head.shape[0]).astype(np.float32))
