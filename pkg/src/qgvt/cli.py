"""Command-line driver.

Exit codes: 0 success, 1 runtime or I/O failure, 2 argument error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .archive import archive_config, gen_synthetic, load_archive, save_archive
from .compressor import CompressionSchedule, CompressOptions, build_schedule
from .config import PRESETS, get_preset
from .encoder import encode, patch_embed
from .errors import QgvtError, ValidationError
from .flops import DEFAULT_STAGE_LAYERS, LLM_7B, LlmConfig, encoder_ratio, pipeline_breakdown
from .guidance import load_text_embedding, stage_queries, toy_text_embed
from .ppm import read_ppm
from .viz import render_mask, write_outputs

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    if text.strip().lower() in ("", "none"):
        return []
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _stage_list(text: str) -> list[tuple[int, int]]:
    try:
        pairs = [t.split(":") for t in text.split(",") if t.strip()]
        return [(int(l), int(k)) for l, k in pairs]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected layer:keep pairs, got {text!r}") from None


def _schedule_from_args(n: int, layers, target, stages) -> CompressionSchedule:
    try:
        if stages:
            if layers or target is not None:
                raise UsageError("--stages cannot be combined with --layers/--target")
            return CompressionSchedule(tuple(stages), n)
        if not layers:
            if target not in (None, n):
                raise UsageError(f"--target {target} needs compression layers")
            return CompressionSchedule((), n)
        return build_schedule(n, n if target is None else target, layers)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None


def cmd_schedule(args) -> int:
    sched = _schedule_from_args(args.n_from, args.layers, args.n_to, None)
    print(f"{'stage':>5}  {'layer':>5}  {'keep':>5}")
    for i, (layer, keep) in enumerate(sched.stages, 1):
        print(f"{i:>5}  {layer:>5}  {keep:>5}")
    print(f"keeps: {','.join(str(k) for k in sched.keeps)}")
    return EXIT_OK


def cmd_flops(args) -> int:
    config = get_preset(args.preset)
    sched = _schedule_from_args(config.token_count, args.schedule, args.target, args.stages)
    try:
        sched.validate_for(config)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    report = encoder_ratio(sched, config, guided=args.guided)
    print(f"{'layer':>5}  {'tokens':>6}  {'flops':>15}")
    for c in report.per_layer:
        print(f"{c.layer:>5}  {c.tokens:>6}  {c.flops:>15}")
    print(f"encoder flops: {report.encoder_total}")
    print(f"baseline flops: {report.baseline_total}")
    if args.guided:
        print(f"guidance overhead: {report.guidance_overhead}")
    print(f"R = {report.ratio * 100:.2f}%")
    payload = {"report": report.to_dict()}
    llm_flags = (args.llm_layers, args.llm_dim, args.llm_ffn, args.text_tokens)
    if any(v is not None for v in llm_flags):
        try:
            llm = LlmConfig(
                layers=args.llm_layers if args.llm_layers is not None else LLM_7B.layers,
                dim=args.llm_dim if args.llm_dim is not None else LLM_7B.dim,
                ffn_dim=args.llm_ffn if args.llm_ffn is not None else LLM_7B.ffn_dim,
                text_tokens=args.text_tokens if args.text_tokens is not None else LLM_7B.text_tokens,
            )
        except ValidationError as exc:
            raise UsageError(str(exc)) from None
        parts = pipeline_breakdown(sched.final, report, llm)
        for key in ("encoder", "projector", "llm_prefill", "total"):
            print(f"pipeline {key}: {parts[key]}")
        payload["pipeline"] = parts
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_gen_weights(args) -> int:
    config = get_preset(args.preset)
    archive = gen_synthetic(args.seed, config, preset=args.preset)
    save_archive(archive, args.out)
    print(f"tensors: {len(archive)}")
    print(f"payload bytes: {archive.nbytes()}")
    print(f"file bytes: {Path(args.out).stat().st_size}")
    return EXIT_OK


def cmd_run(args) -> int:
    if args.guidance == "question" and args.question is None and args.text_embedding is None:
        raise UsageError("--guidance question needs --question or --text-embedding")
    if args.stages and (args.layers is not None or args.target is not None):
        raise UsageError("--stages cannot be combined with --layers/--target")

    started = time.perf_counter()
    weights = load_archive(args.weights)
    config = archive_config(weights)
    if args.stages:
        sched = _schedule_from_args(config.token_count, None, None, args.stages)
    else:
        layers = args.layers if args.layers is not None else list(DEFAULT_STAGE_LAYERS)
        default_target = 72 if layers else config.token_count
        target = args.target if args.target is not None else default_target
        sched = _schedule_from_args(config.token_count, layers, target, None)
    try:
        sched.validate_for(config)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    image = read_ppm(args.image)
    if image.shape != (config.image_size, config.image_size, 3):
        raise ValidationError(
            f"image is {image.shape[1]}x{image.shape[0]}, the encoder needs exactly "
            f"{config.image_size}x{config.image_size}"
        )
    options = CompressOptions(
        guidance_source="question" if args.guidance == "question" else "image_cls",
        recycle=not args.no_recycle,
    )
    t0 = time.perf_counter()
    queries = None
    if options.guidance_source == "question":
        if args.text_embedding is not None:
            emb = load_text_embedding(args.text_embedding)
        else:
            emb = toy_text_embed(args.question, config.text_dim, args.text_seed)
        if sched.stages:
            queries = stage_queries(emb, sched.layers, weights)
    t1 = time.perf_counter()
    z0 = patch_embed(image, weights, config)
    z, records, stats = encode(z0, weights, config, sched, queries, options)
    t2 = time.perf_counter()
    masks = [render_mask(image, rec, config.grid) for rec in records]
    report = encoder_ratio(sched, config, guided=options.guidance_source == "question")
    stats = replace(
        stats,
        question=args.question or "",
        flops=report,
        timings={**stats.timings, "guidance_ms": (t1 - t0) * 1e3, "encode_ms": (t2 - t1) * 1e3},
    )
    write_outputs(stats, masks, args.out_dir, include_timings=args.timings)
    print(f"final tokens: {z.count}")
    print(f"stages: {len(records)}")
    print(f"R = {report.ratio * 100:.2f}%")
    print(f"elapsed: {time.perf_counter() - started:.2f} s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qgvt", description="Question-guided visual token compression")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="print a uniform compression schedule")
    p.add_argument("--from", dest="n_from", type=int, default=576, help="initial patch tokens")
    p.add_argument("--to", dest="n_to", type=int, required=True, help="final patch tokens")
    p.add_argument("--layers", type=_int_list, default=list(DEFAULT_STAGE_LAYERS))
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("flops", help="analytic encoder FLOPs ratio")
    p.add_argument("--preset", choices=sorted(PRESETS), default="vit-l-14")
    p.add_argument("--schedule", "--layers", dest="schedule", type=_int_list, default=[],
                   help="compression layers, comma separated ('none' for no compression)")
    p.add_argument("--target", type=int, help="final patch tokens (default 72 when layers are given)")
    p.add_argument("--stages", type=_stage_list, help="explicit layer:keep pairs, e.g. 12:500,20:72")
    p.add_argument("--guided", action="store_true", help="add question-guidance overhead")
    p.add_argument("--llm-layers", type=int)
    p.add_argument("--llm-dim", type=int)
    p.add_argument("--llm-ffn", type=int)
    p.add_argument("--text-tokens", type=int)
    p.add_argument("--out", help="write the report as JSON here")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gen-weights", help="write a deterministic synthetic weight archive")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default="vit-l-14")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_weights)

    p = sub.add_parser("run", help="compress one image under a question")
    p.add_argument("--image", required=True, help="binary PPM (P6) input")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--question", help="question text (toy embedder)")
    src.add_argument("--text-embedding", help="QGVT archive holding a text.cls tensor")
    p.add_argument("--text-seed", type=int, default=0)
    p.add_argument("--weights", required=True)
    p.add_argument("--target", type=int)
    p.add_argument("--layers", type=_int_list)
    p.add_argument("--stages", type=_stage_list)
    p.add_argument("--guidance", choices=("question", "image-cls"), default="question")
    p.add_argument("--no-recycle", action="store_true")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in stats.json")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "flops" and args.schedule and args.target is None and not args.stages:
        args.target = 72
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"qgvt {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QgvtError, OSError) as exc:
        print(f"qgvt {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
