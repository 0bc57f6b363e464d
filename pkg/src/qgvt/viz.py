"""Retention-mask rendering and run statistics output.

``stats.json`` layout (schema_version 1)::

    {
      "schema_version": 1,
      "question": str,
      "guidance_source": "question" | "image_cls",
      "recycle": bool,
      "schedule": {"initial": int, "final": int, "stages": [{"layer": int, "keep": int}, ...]},
      "layer_counts": [int, ...],          # patch tokens output by each layer
      "final_count": int,
      "per_stage": [{"layer": int, "kept_count": int, "kept": [int, ...],
                     "correlation": {"min": float, "max": float, "mean": float}}, ...],
      "flops": FlopsReport | null,
      "timings_ms": {...}                  # only when timings are requested
    }

Timings are wall-clock and therefore left out by default so that reruns are
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import ValidationError
from .ppm import write_ppm

if TYPE_CHECKING:
    from .compressor import CompressionSchedule, CompressOptions, RetentionRecord
    from .flops import FlopsReport

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MaskImage:
    pixels: np.ndarray
    stage: int
    kept_count: int

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class StageStats:
    layer: int
    kept: tuple[int, ...]
    correlation: dict[str, float]


@dataclass
class RunStats:
    question: str
    schedule: "CompressionSchedule"
    per_stage: list[StageStats]
    layer_counts: list[int]
    options: "CompressOptions"
    flops: "FlopsReport | None" = None
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_timings: bool = False) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "question": self.question,
            "guidance_source": self.options.guidance_source,
            "recycle": self.options.recycle,
            "schedule": self.schedule.to_dict(),
            "layer_counts": list(self.layer_counts),
            "final_count": self.layer_counts[-1] if self.layer_counts else self.schedule.initial,
            "per_stage": [
                {"layer": s.layer, "kept_count": len(s.kept), "kept": list(s.kept), "correlation": s.correlation}
                for s in self.per_stage
            ],
            "flops": self.flops.to_dict() if self.flops is not None else None,
        }
        if include_timings:
            out["timings_ms"] = dict(self.timings)
        return out


def render_mask(image: np.ndarray, rec: "RetentionRecord", grid: int = 24) -> MaskImage:
    """Darken (channel // 4) every patch not in ``rec.kept``; kept patches are copied."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape[:2]
    if image.ndim != 3 or image.shape[2] != 3 or h != w or h % grid:
        raise ValidationError(f"image of shape {image.shape} does not tile into a {grid}x{grid} grid")
    patch = h // grid
    total = grid * grid
    for o in (*rec.kept, *rec.dropped):
        if not 0 <= o < total:
            raise ValidationError(f"origin {o} outside 0..{total - 1}")
    keep = np.zeros(total, dtype=bool)
    keep[list(rec.kept)] = True
    bright = np.repeat(np.repeat(keep.reshape(grid, grid), patch, axis=0), patch, axis=1)
    out = np.where(bright[:, :, None], image, image // 4).astype(np.uint8)
    return MaskImage(out, rec.layer, len(rec.kept))


def stats_json(stats: RunStats, include_timings: bool = False) -> str:
    return json.dumps(stats.to_dict(include_timings), indent=2, sort_keys=True) + "\n"


def write_outputs(
    stats: RunStats, masks: Sequence[MaskImage], out_dir, include_timings: bool = False
) -> list[Path]:
    """Write ``stage_{layer}.ppm`` per mask and ``stats.json``; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for m in masks:
        path = out_dir / f"stage_{m.stage}.ppm"
        write_ppm(path, m.pixels)
        written.append(path)
    path = out_dir / "stats.json"
    path.write_text(stats_json(stats, include_timings), encoding="utf-8")
    written.append(path)
    return written
