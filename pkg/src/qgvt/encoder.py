"""Pre-norm ViT forward pass with compression hooks at scheduled layers."""

from __future__ import annotations

import math
import time
from typing import Sequence

import numpy as np

from .archive import TensorArchive
from .compressor import (
    CompressionSchedule,
    CompressOptions,
    RetentionRecord,
    compress_stage,
)
from .config import EncoderConfig
from .errors import ShapeError, ValidationError
from .guidance import GuidanceVector
from .kernel import gelu_array, layer_norm_rows, matmul, softmax_rows
from .tokens import AttentionProjections, AttentionTensor, TokenMatrix
from .viz import RunStats, StageStats

__all__ = [
    "patch_embed", "attention_forward", "layer_forward", "encode",
    "TokenMatrix", "AttentionProjections", "AttentionTensor",
]


def image_patches(image: np.ndarray, config: EncoderConfig) -> np.ndarray:
    """Raster-ordered ``N x (p*p*3)`` patch rows, pixels scaled to [0, 1].

    Each row flattens its patch in (row, column, channel) order.
    """
    size, p, g = config.image_size, config.patch_size, config.grid
    image = np.asarray(image)
    if image.shape != (size, size, 3):
        raise ValidationError(f"image must be {size}x{size} RGB, got shape {image.shape}")
    blocks = image.reshape(g, p, g, p, 3).transpose(0, 2, 1, 3, 4).reshape(g * g, p * p * 3)
    return (blocks.astype(np.float64) / 255.0).astype(np.float32)


def patch_embed(image: np.ndarray, weights: TensorArchive, config: EncoderConfig) -> TokenMatrix:
    d = config.dim
    w = weights.require("patch.weight", (config.patch_dim, d))
    pos = weights.require("patch.pos", (config.token_count + 1, d))
    cls = weights.require("patch.cls", (1, d))
    x = matmul(image_patches(image, config), w)
    tokens = np.empty((config.token_count + 1, d), dtype=np.float32)
    tokens[0] = cls[0] + pos[0]
    tokens[1:] = x + pos[1:]
    return TokenMatrix.fresh(tokens)


def _split_heads(m: np.ndarray, heads: int) -> np.ndarray:
    t, d = m.shape
    return np.ascontiguousarray(m.reshape(t, heads, d // heads).transpose(1, 0, 2))


def attention_forward(
    h: np.ndarray, layer: int, weights: TensorArchive, config: EncoderConfig
) -> tuple[AttentionProjections, AttentionTensor, np.ndarray]:
    """Multi-head self-attention over the (already normalised) rows of ``h``.

    Returns the per-head projections, the attention scores and the
    output-projected result, without the residual.
    """
    d, heads = config.dim, config.heads
    if h.ndim != 2 or h.shape[1] != d:
        raise ShapeError(f"attention input has shape {h.shape}, expected (*, {d})")
    p = f"layers.{layer}.attn"
    q = _split_heads(matmul(h, weights.require(f"{p}.wq", (d, d))), heads)
    k = _split_heads(matmul(h, weights.require(f"{p}.wk", (d, d))), heads)
    v = _split_heads(matmul(h, weights.require(f"{p}.wv", (d, d))), heads)
    scale = 1.0 / math.sqrt(config.head_dim)
    t = h.shape[0]
    per_head = np.empty((heads, t, t), dtype=np.float32)
    mixed = np.empty((t, d), dtype=np.float32)
    dh = config.head_dim
    for i in range(heads):
        per_head[i] = softmax_rows(matmul(q[i], k[i].T), scale)
        mixed[:, i * dh:(i + 1) * dh] = matmul(per_head[i], v[i])
    out = matmul(mixed, weights.require(f"{p}.wo", (d, d)))
    return AttentionProjections(q, k, v), AttentionTensor.from_heads(per_head), out


def feed_forward(h: np.ndarray, layer: int, weights: TensorArchive, config: EncoderConfig) -> np.ndarray:
    p = f"layers.{layer}.ffn"
    w1 = weights.require(f"{p}.w1", (config.dim, config.ffn_dim))
    w2 = weights.require(f"{p}.w2", (config.ffn_dim, config.dim))
    return matmul(gelu_array(matmul(h, w1)), w2)


def layer_forward(
    z: TokenMatrix, layer: int, weights: TensorArchive, config: EncoderConfig
) -> tuple[TokenMatrix, AttentionTensor, AttentionProjections]:
    """``x += attn(LN1(x)); x += FFN(LN2(x))``.  K in the result comes from LN1(x)."""
    if not 0 <= layer < config.layers:
        raise ValidationError(f"layer {layer} outside [0, {config.layers})")
    p = f"layers.{layer}"
    d = config.dim
    x = z.tokens
    h = layer_norm_rows(
        x, weights.require(f"{p}.ln1.gamma", (1, d)), weights.require(f"{p}.ln1.beta", (1, d)), config.eps
    )
    proj, attn, a_out = attention_forward(h, layer, weights, config)
    x = x + a_out
    h = layer_norm_rows(
        x, weights.require(f"{p}.ln2.gamma", (1, d)), weights.require(f"{p}.ln2.beta", (1, d)), config.eps
    )
    x = x + feed_forward(h, layer, weights, config)
    return TokenMatrix(x, z.origin, layer), attn, proj


def _check_inputs(
    z0: TokenMatrix,
    guidance: Sequence[GuidanceVector] | None,
    schedule: CompressionSchedule,
    options: CompressOptions,
    config: EncoderConfig,
) -> None:
    if z0.dim != config.dim:
        raise ValidationError(f"input tokens have dimension {z0.dim}, encoder expects {config.dim}")
    if z0.count != schedule.initial:
        raise ValidationError(f"input has {z0.count} patch tokens, schedule expects {schedule.initial}")
    for layer in schedule.layers:
        if not 0 <= layer < config.layers:
            raise ValidationError(f"stage layer {layer} outside [0, {config.layers})")
    if options.guidance_source == "question" and schedule.stages:
        if guidance is None:
            raise ValidationError("question guidance selected but no guidance vectors given")
        if [g.layer for g in guidance] != schedule.layers:
            raise ValidationError(
                f"guidance layers {[g.layer for g in guidance]} do not match schedule {schedule.layers}"
            )
        for g in guidance:
            if np.asarray(g.values).size != config.dim:
                raise ValidationError(f"guidance for layer {g.layer} has wrong dimension")


def encode(
    z0: TokenMatrix,
    weights: TensorArchive,
    config: EncoderConfig,
    schedule: CompressionSchedule,
    guidance: Sequence[GuidanceVector] | None = None,
    options: CompressOptions | None = None,
) -> tuple[TokenMatrix, list[RetentionRecord], RunStats]:
    """Run every layer, compressing after the full output of each scheduled layer."""
    options = options or CompressOptions()
    _check_inputs(z0, guidance, schedule, options, config)
    queries = {g.layer: g for g in guidance or ()}

    z = z0
    records: list[RetentionRecord] = []
    stages: list[StageStats] = []
    counts: list[int] = []
    t_layers = t_compress = 0.0
    for layer in range(config.layers):
        t0 = time.perf_counter()
        z, attn, proj = layer_forward(z, layer, weights, config)
        t1 = time.perf_counter()
        keep = schedule.keep_at(layer)
        if keep is not None:
            z, rec, scores = compress_stage(z, attn, proj, queries.get(layer), keep, options)
            records.append(rec)
            stages.append(StageStats(layer, rec.kept, scores.summary()))
        t_compress += time.perf_counter() - t1
        t_layers += t1 - t0
        counts.append(z.count)
    stats = RunStats(
        question="",
        schedule=schedule,
        per_stage=stages,
        layer_counts=counts,
        options=options,
        timings={"layers_ms": t_layers * 1e3, "compression_ms": t_compress * 1e3},
    )
    return z, records, stats
