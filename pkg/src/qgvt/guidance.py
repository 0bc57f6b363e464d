"""Question-side query vectors.

A question becomes a unit text embedding (toy hash embedder or an imported
``text.cls`` vector), is mapped into the vision feature space by a two-layer
GELU perceptron, and is then projected with each compression layer's own
query weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .archive import TensorArchive, load_archive, splitmix64_block, uniform_from_bits
from .errors import ValidationError
from .kernel import gelu_array, matmul

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

DEFAULT_TEXT_DIM = 768


@dataclass(frozen=True)
class TextEmbedding:
    values: np.ndarray
    source: Literal["toy", "imported"]

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class GuidanceVector:
    """Query-space vector for one compression layer."""

    values: np.ndarray
    layer: int


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def _unit(vec: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64).reshape(-1)
    if not np.isfinite(v).all():
        raise ValidationError(f"{what} contains non-finite values")
    norm = float(np.sqrt(np.dot(v, v)))
    if norm == 0.0:
        raise ValidationError(f"{what} has zero norm and cannot be normalised")
    return (v / norm).astype(np.float32)


def toy_text_embed(question: str, d_text: int = DEFAULT_TEXT_DIM, seed: int = 0) -> TextEmbedding:
    """Deterministic bag-of-words stand-in for a CLIP text encoder.

    Each lowercased whitespace token is hashed with FNV-1a (64-bit); the hash
    XOR ``seed`` starts a splitmix64 stream giving a ``d_text`` vector in
    [-1, 1).  Token vectors are averaged in float64 and L2-normalised.
    """
    tokens = question.lower().split()
    if not tokens:
        raise ValidationError("question is empty after trimming whitespace")
    if d_text <= 0:
        raise ValidationError(f"d_text must be positive, got {d_text}")
    total = np.zeros(d_text, dtype=np.float64)
    for tok in tokens:
        bits, _ = splitmix64_block(fnv1a64(tok.encode("utf-8")) ^ (seed & _MASK64), d_text)
        total += uniform_from_bits(bits, -1.0, 1.0)
    return TextEmbedding(_unit(total / len(tokens), "text embedding"), "toy")


def load_text_embedding(path) -> TextEmbedding:
    """Read a ``text.cls`` (1 x d_text) tensor from a QGVT archive."""
    archive = load_archive(path)
    if "text.cls" not in archive:
        raise ValidationError(f"{path}: archive has no 'text.cls' tensor")
    m = archive["text.cls"]
    if m.ndim != 2 or m.shape[0] != 1 or m.shape[1] == 0:
        raise ValidationError(f"{path}: 'text.cls' must have shape 1 x d_text, got {m.shape}")
    return TextEmbedding(_unit(m, "'text.cls'"), "imported")


def project_to_vision(t: TextEmbedding, weights: TensorArchive) -> np.ndarray:
    """``gelu(t @ W1) @ W2``: the text embedding expressed in vision feature space."""
    if "guide.mlp.w1" not in weights or "guide.mlp.w2" not in weights:
        raise ValidationError("weights lack guide.mlp.w1 / guide.mlp.w2")
    w1, w2 = weights["guide.mlp.w1"], weights["guide.mlp.w2"]
    if w1.shape[0] != t.dim:
        raise ValidationError(f"guide.mlp.w1 has shape {w1.shape}, expected {t.dim} rows")
    if w2.shape != (w1.shape[1], w1.shape[1]):
        raise ValidationError(f"guide.mlp.w2 has shape {w2.shape}, expected {(w1.shape[1],) * 2}")
    hidden = gelu_array(matmul(t.values.reshape(1, -1), w1))
    return matmul(hidden, w2).reshape(-1)


def make_query(v: np.ndarray, layer: int, weights: TensorArchive) -> GuidanceVector:
    """Project a vision-space vector with ``layers.{layer}.attn.wq``."""
    n_layers = weights.metadata.get("layers")
    if layer < 0 or (n_layers is not None and layer >= int(n_layers)):
        raise ValidationError(f"layer {layer} is out of range")
    name = f"layers.{layer}.attn.wq"
    if name not in weights:
        raise ValidationError(f"missing tensor {name!r} (layer {layer} out of range?)")
    wq = weights[name]
    v = np.asarray(v, dtype=np.float32).reshape(1, -1)
    if wq.shape != (v.shape[1], v.shape[1]):
        raise ValidationError(f"{name} has shape {wq.shape}, vector has dimension {v.shape[1]}")
    return GuidanceVector(matmul(v, wq).reshape(-1), layer)


def stage_queries(t: TextEmbedding, layers, weights: TensorArchive) -> list[GuidanceVector]:
    """One query per compression layer; the vision projection is computed once and shared."""
    v = project_to_vision(t, weights)
    return [make_query(v, layer, weights) for layer in layers]
