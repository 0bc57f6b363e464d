"""Question-guided visual token compression inside a ViT encoder."""

__version__ = "0.1.0"

from .archive import TensorArchive, gen_synthetic, load_archive, save_archive, splitmix64_next
from .compressor import (
    CompressionSchedule,
    CompressOptions,
    CorrelationVector,
    RetentionRecord,
    build_schedule,
    compress_stage,
    correlation,
    partition,
    recycle,
)
from .config import PRESETS, EncoderConfig, get_preset
from .encoder import attention_forward, encode, layer_forward, patch_embed
from .errors import CorruptionError, FormatError, NumericError, QgvtError, ShapeError, ValidationError
from .flops import FlopsReport, LlmConfig, encoder_ratio, layer_flops, pipeline_estimate
from .guidance import GuidanceVector, TextEmbedding, make_query, project_to_vision, toy_text_embed
from .tokens import AttentionProjections, AttentionTensor, TokenMatrix

__all__ = [
    "AttentionProjections",
    "AttentionTensor",
    "CompressOptions",
    "CompressionSchedule",
    "CorrelationVector",
    "CorruptionError",
    "EncoderConfig",
    "FlopsReport",
    "FormatError",
    "GuidanceVector",
    "LlmConfig",
    "NumericError",
    "PRESETS",
    "QgvtError",
    "RetentionRecord",
    "ShapeError",
    "TensorArchive",
    "TextEmbedding",
    "TokenMatrix",
    "ValidationError",
    "attention_forward",
    "build_schedule",
    "compress_stage",
    "correlation",
    "encode",
    "encoder_ratio",
    "gen_synthetic",
    "get_preset",
    "layer_flops",
    "layer_forward",
    "load_archive",
    "make_query",
    "partition",
    "patch_embed",
    "pipeline_estimate",
    "project_to_vision",
    "recycle",
    "save_archive",
    "splitmix64_next",
    "toy_text_embed",
]
