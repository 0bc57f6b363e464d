"""Analytic compute model for the compressed encoder and the downstream LLM.

Per-layer cost follows the usual transformer estimate
``4 n d^2 + 2 n^2 d + 2 n d f`` (n tokens, width d, FFN width f).  A layer
is costed at its *input* token count: a compression layer processes all of
its input and only its output is reduced.  CLS is not counted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .compressor import CompressionSchedule, build_schedule
from .config import EncoderConfig
from .errors import ValidationError

DEFAULT_STAGE_LAYERS = (12, 14, 16, 18, 20, 22)


def layer_flops(n: int, d: int, ffn: int) -> int:
    for name, v in (("n", n), ("d", d), ("ffn", ffn)):
        if not isinstance(v, int) or v <= 0:
            raise ValidationError(f"{name} must be a positive integer, got {v!r}")
    return 4 * n * d * d + 2 * n * n * d + 2 * n * d * ffn


@dataclass(frozen=True)
class LayerCost:
    layer: int
    tokens: int
    flops: int


@dataclass(frozen=True)
class FlopsReport:
    per_layer: list[LayerCost]
    encoder_total: int
    baseline_total: int
    ratio: float
    guidance_overhead: int = 0
    guidance_items: dict[str, int] = field(default_factory=dict)
    dim: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LlmConfig:
    layers: int
    dim: int
    ffn_dim: int
    text_tokens: int

    def __post_init__(self):
        for name in ("layers", "dim", "ffn_dim"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"llm {name} must be positive")
        if self.text_tokens < 0:
            raise ValidationError("text_tokens must be non-negative")


# 7B-class decoder: 32 layers, width 4096
LLM_7B = LlmConfig(layers=32, dim=4096, ffn_dim=11008, text_tokens=60)


def guidance_costs(schedule: CompressionSchedule, config: EncoderConfig) -> dict[str, int]:
    """FLOPs of the question path, from the shapes this package actually runs."""
    if not schedule.stages:
        return {}
    d = config.dim
    scored, current = 0, schedule.initial
    for _, keep in schedule.stages:
        scored += current
        current = keep
    return {
        "mlp_projection": 2 * config.text_dim * d + 2 * d * d,
        "query_projection": len(schedule.stages) * 2 * d * d,
        "correlation_logits": 2 * scored * d,
    }


def encoder_ratio(schedule: CompressionSchedule, config: EncoderConfig, guided: bool = False) -> FlopsReport:
    schedule.validate_for(config)
    n, d, f = config.token_count, config.dim, config.ffn_dim
    per_layer = []
    current = n
    for layer, out_count in enumerate(schedule.layer_counts(config.layers)):
        per_layer.append(LayerCost(layer, current, layer_flops(current, d, f)))
        current = out_count
    encoder_total = sum(c.flops for c in per_layer)
    baseline = config.layers * layer_flops(n, d, f)
    items = guidance_costs(schedule, config) if guided else {}
    overhead = sum(items.values())
    return FlopsReport(
        per_layer=per_layer,
        encoder_total=encoder_total,
        baseline_total=baseline,
        ratio=(encoder_total + overhead) / baseline,
        guidance_overhead=overhead,
        guidance_items=items,
        dim=d,
    )


def pipeline_breakdown(visual_tokens: int, report: FlopsReport, llm: LlmConfig) -> dict[str, int]:
    """Prefill-only estimate: encoder (with guidance) + projector + LLM prefill."""
    if visual_tokens < 0:
        raise ValidationError("visual_tokens must be non-negative")
    encoder = report.encoder_total + report.guidance_overhead
    projector = 2 * visual_tokens * report.dim * llm.dim
    seq = visual_tokens + llm.text_tokens
    prefill = llm.layers * layer_flops(seq, llm.dim, llm.ffn_dim) if seq > 0 else 0
    return {"encoder": encoder, "projector": projector, "llm_prefill": prefill,
            "total": encoder + projector + prefill}


def pipeline_estimate(visual_tokens: int, report: FlopsReport, llm: LlmConfig) -> int:
    return pipeline_breakdown(visual_tokens, report, llm)["total"]


def staged_schedule(config: EncoderConfig, target: int, layers=DEFAULT_STAGE_LAYERS) -> CompressionSchedule:
    """Uniform schedule to ``target`` tokens; no stages when ``target`` is the full count."""
    if target == config.token_count:
        return CompressionSchedule((), config.token_count)
    return build_schedule(config.token_count, target, layers)
