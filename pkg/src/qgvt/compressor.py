"""Question-guided token selection and attention-weighted recycling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numba
import numpy as np

from .config import EncoderConfig
from .errors import ShapeError, ValidationError
from .guidance import GuidanceVector
from .kernel import matmul, softmax_rows
from .tokens import CLS_ORIGIN, AttentionProjections, AttentionTensor, TokenMatrix

GuidanceSource = Literal["question", "image_cls"]


@dataclass(frozen=True)
class CorrelationVector:
    """Relevance distribution over the current patch tokens (CLS excluded)."""

    scores: np.ndarray
    layer: int

    def summary(self) -> dict[str, float]:
        return {
            "min": float(self.scores.min()),
            "max": float(self.scores.max()),
            "mean": float(self.scores.mean()),
        }


@dataclass(frozen=True)
class RetentionRecord:
    layer: int
    kept: tuple[int, ...]
    dropped: tuple[int, ...]

    @property
    def keep_count(self) -> int:
        return len(self.kept)

    @property
    def drop_count(self) -> int:
        return len(self.dropped)


@dataclass(frozen=True)
class CompressionSchedule:
    """Ordered ``(layer, keep)`` stages taking ``initial`` patch tokens down to ``final``."""

    stages: tuple[tuple[int, int], ...]
    initial: int

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple((int(l), int(k)) for l, k in self.stages))
        if self.initial < 1:
            raise ValidationError(f"initial token count must be positive, got {self.initial}")
        prev_layer, prev_keep = -1, self.initial
        for layer, keep in self.stages:
            if layer <= prev_layer:
                raise ValidationError(f"stage layers must be strictly increasing: {self.layers}")
            if not 1 <= keep < prev_keep:
                raise ValidationError(
                    f"keep counts must strictly decrease from {self.initial} and stay >= 1: {self.keeps}"
                )
            prev_layer, prev_keep = layer, keep

    @property
    def final(self) -> int:
        return self.stages[-1][1] if self.stages else self.initial

    @property
    def layers(self) -> list[int]:
        return [l for l, _ in self.stages]

    @property
    def keeps(self) -> list[int]:
        return [k for _, k in self.stages]

    def keep_at(self, layer: int) -> int | None:
        for l, k in self.stages:
            if l == layer:
                return k
        return None

    def validate_for(self, config: EncoderConfig) -> None:
        if self.initial != config.token_count:
            raise ValidationError(
                f"schedule starts from {self.initial} tokens but the encoder has {config.token_count}"
            )
        for layer in self.layers:
            if not 0 <= layer < config.layers:
                raise ValidationError(f"stage layer {layer} outside [0, {config.layers})")

    def layer_counts(self, layers: int) -> list[int]:
        """Patch-token count output by each layer."""
        counts, current = [], self.initial
        stage = dict(self.stages)
        for i in range(layers):
            current = stage.get(i, current)
            counts.append(current)
        return counts

    def to_dict(self) -> dict:
        return {
            "initial": self.initial,
            "final": self.final,
            "stages": [{"layer": l, "keep": k} for l, k in self.stages],
        }


def build_schedule(n: int, m: int, layers: Sequence[int]) -> CompressionSchedule:
    """Uniform-step schedule from ``n`` to ``m`` patch tokens over ``layers``.

    When ``n - m`` is not divisible by the number of stages, each of the first
    ``r`` stages drops one extra token (``r`` being the remainder).
    """
    layers = list(layers)
    if not layers:
        raise ValidationError("at least one compression layer is required")
    if not 1 <= m < n:
        raise ValidationError(f"target {m} must satisfy 1 <= target < {n}")
    step, rem = divmod(n - m, len(layers))
    if step == 0:
        raise ValidationError(f"cannot drop {n - m} tokens over {len(layers)} stages")
    stages, keep = [], n
    for i, layer in enumerate(layers):
        keep -= step + (1 if i < rem else 0)
        stages.append((layer, keep))
    return CompressionSchedule(tuple(stages), n)


@dataclass(frozen=True)
class CompressOptions:
    guidance_source: GuidanceSource = "question"
    recycle: bool = True

    def __post_init__(self):
        if self.guidance_source not in ("question", "image_cls"):
            raise ValidationError(f"unknown guidance source {self.guidance_source!r}")


def correlation(query: GuidanceVector, proj: AttentionProjections) -> CorrelationVector:
    """Softmax of head-averaged ``query_h . K_h[1:]^T / sqrt(head_dim)``.

    The query is split into per-head segments in the same column layout as
    K; the CLS key (row 0) is never scored.
    """
    heads, rows, dh = proj.k.shape
    q = np.asarray(query.values, dtype=np.float32).reshape(-1)
    if q.size != heads * dh:
        raise ShapeError(f"query has dimension {q.size}, keys expect {heads} x {dh}")
    if rows < 2:
        raise ShapeError("no patch keys to score")
    acc = np.zeros(rows - 1, dtype=np.float64)
    for h in range(heads):
        acc += matmul(proj.k[h, 1:], q[h * dh:(h + 1) * dh].reshape(-1, 1)).reshape(-1)
    logits = (acc / heads).astype(np.float32)
    scores = softmax_rows(logits.reshape(1, -1), 1.0 / math.sqrt(dh)).reshape(-1)
    return CorrelationVector(scores.astype(np.float64), query.layer)


def cls_correlation(attention: AttentionTensor, layer: int) -> CorrelationVector:
    """CLS row of the head-mean attention over patch columns, renormalised."""
    row = attention.head_mean[0, 1:].astype(np.float64)
    total = row.sum()
    if not total > 0:
        raise ValidationError("CLS attention over patches sums to zero")
    return CorrelationVector(row / total, layer)


def partition(c: CorrelationVector, keep: int, origins: Sequence[int]) -> RetentionRecord:
    """Keep the ``keep`` highest-scoring tokens; equal scores go to the lower origin."""
    scores = np.asarray(c.scores)
    origins = np.asarray(origins, dtype=np.int64)
    if scores.shape != origins.shape:
        raise ShapeError(f"{scores.size} scores for {origins.size} origins")
    if not 1 <= keep <= scores.size:
        raise ValidationError(f"keep must be in [1, {scores.size}], got {keep}")
    order = np.lexsort((origins, -scores))
    kept = np.sort(origins[order[:keep]])
    dropped = np.sort(origins[order[keep:]])
    return RetentionRecord(c.layer, tuple(int(o) for o in kept), tuple(int(o) for o in dropped))


@numba.njit(cache=True, boundscheck=False, error_model="numpy")
def _recycle_kernel(tokens, attn, keep_rows, drop_rows):
    d = tokens.shape[1]
    out = np.empty((keep_rows.size, d), dtype=np.float32)
    acc = np.empty(d, dtype=np.float64)
    for r in range(keep_rows.size):
        i = keep_rows[r]
        for c in range(d):
            acc[c] = np.float64(tokens[i, c])
        for jj in range(drop_rows.size):
            j = drop_rows[jj]
            w = np.float64(attn[i, j])
            for c in range(d):
                acc[c] += w * np.float64(tokens[j, c])
        for c in range(d):
            out[r, c] = np.float32(acc[c])
    return out


def _rows_for(tokens: TokenMatrix, rec: RetentionRecord) -> tuple[np.ndarray, np.ndarray]:
    patch = tokens.patch_origins
    kept = np.asarray(rec.kept, dtype=np.int64)
    dropped = np.asarray(rec.dropped, dtype=np.int64)
    merged = np.sort(np.concatenate([kept, dropped]))
    if merged.shape != patch.shape or np.any(merged != patch):
        raise ValidationError(f"retention record for layer {rec.layer} does not cover the current tokens")
    # origins are strictly increasing, so searchsorted gives row positions
    keep_rows = np.concatenate([[0], 1 + np.searchsorted(patch, kept)]).astype(np.int64)
    drop_rows = (1 + np.searchsorted(patch, dropped)).astype(np.int64)
    return keep_rows, drop_rows


def recycle(tokens: TokenMatrix, a_mean: np.ndarray, rec: RetentionRecord) -> TokenMatrix:
    """Fold dropped tokens into retained ones, weighted by attention.

    For every retained row ``i`` (CLS included)::

        token_i <- token_i + sum_{j dropped} A[i, j] * token_j

    summed in float64 over ``j`` in ascending origin order and rounded once.
    The sum is not renormalised.
    """
    t = tokens.count + 1
    if a_mean.shape != (t, t):
        raise ValidationError(f"attention shape {a_mean.shape} does not match {t} tokens")
    keep_rows, drop_rows = _rows_for(tokens, rec)
    out = _recycle_kernel(
        np.ascontiguousarray(tokens.tokens, dtype=np.float32),
        np.ascontiguousarray(a_mean, dtype=np.float32),
        keep_rows,
        drop_rows,
    )
    origin = np.concatenate([[CLS_ORIGIN], np.asarray(rec.kept, dtype=np.int64)])
    return TokenMatrix(out, origin, tokens.layer)


def prune(tokens: TokenMatrix, rec: RetentionRecord) -> TokenMatrix:
    """Drop rows without recycling."""
    keep_rows, _ = _rows_for(tokens, rec)
    origin = np.concatenate([[CLS_ORIGIN], np.asarray(rec.kept, dtype=np.int64)])
    return TokenMatrix(tokens.tokens[keep_rows].copy(), origin, tokens.layer)


def compress_stage(
    tokens: TokenMatrix,
    attention: AttentionTensor,
    proj: AttentionProjections,
    query: GuidanceVector | None,
    keep: int,
    options: CompressOptions | None = None,
) -> tuple[TokenMatrix, RetentionRecord, CorrelationVector]:
    """Score, partition and compress one layer's output down to ``keep`` patch tokens."""
    options = options or CompressOptions()
    if options.guidance_source == "question":
        if query is None:
            raise ValidationError("question guidance requires a query vector")
        scores = correlation(query, proj)
    else:
        scores = cls_correlation(attention, tokens.layer)
    rec = partition(scores, keep, tokens.patch_origins)
    if options.recycle:
        out = recycle(tokens, attention.head_mean, rec)
    else:
        out = prune(tokens, rec)
    return out, rec, scores
