"""QGVT tensor archives and deterministic synthetic weights.

File layout (all integers little-endian)::

    b"QGVT"               4 bytes  magic
    version               4 bytes  uint32, currently 1
    header_length         8 bytes  uint64
    header                UTF-8 JSON object, header_length bytes
    payload               float32 little-endian tensors, back to back

The header maps each tensor name to ``{"shape": [rows, cols], "offset": o,
"length": l}`` where ``offset`` counts bytes from the start of the payload
and ``length = rows * cols * 4``.  The reserved key ``"__metadata__"`` holds
a flat string-to-string map.  Writers emit the header with sorted keys and
no whitespace and lay tensors out in sorted-name order, so an archive is a
pure function of its contents.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import EncoderConfig
from .errors import CorruptionError, FormatError, ValidationError

MAGIC = b"QGVT"
VERSION = 1
METADATA_KEY = "__metadata__"
_PREFIX = struct.Struct("<4sIQ")

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

INIT_LOW = -0.1
INIT_HIGH = 0.1


@dataclass
class TensorArchive:
    """Named float32 matrices plus string metadata."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, np.ndarray]], metadata=None) -> "TensorArchive":
        entries: dict[str, np.ndarray] = {}
        for name, m in pairs:
            if name in entries:
                raise ValidationError(f"duplicate tensor name {name!r}")
            entries[name] = m
        return cls(entries, dict(metadata or {}))

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return sorted(self.entries)

    def require(self, name: str, shape: tuple[int, int] | None = None) -> np.ndarray:
        """Fetch a tensor, raising ValidationError if it is absent or misshapen."""
        if name not in self.entries:
            raise ValidationError(f"missing tensor {name!r}")
        m = self.entries[name]
        if shape is not None and tuple(m.shape) != tuple(shape):
            raise ValidationError(f"tensor {name!r} has shape {tuple(m.shape)}, expected {tuple(shape)}")
        return m

    def nbytes(self) -> int:
        return sum(int(m.size) * 4 for m in self.entries.values())

    def equals(self, other: "TensorArchive") -> bool:
        """Bit-level equality of names, shapes, payloads and metadata."""
        if self.metadata != other.metadata or self.names() != other.names():
            return False
        for name in self.names():
            a, b = self.entries[name], other.entries[name]
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return True


def _validated_entries(archive: TensorArchive) -> list[tuple[str, np.ndarray]]:
    out = []
    for name in sorted(archive.entries):
        if not isinstance(name, str) or not name or name == METADATA_KEY:
            raise ValidationError(f"invalid tensor name {name!r}")
        m = np.asarray(archive.entries[name])
        if m.ndim != 2:
            raise ValidationError(f"tensor {name!r} must be 2-D, got shape {m.shape}")
        m = np.ascontiguousarray(m, dtype="<f4")
        if not np.isfinite(m).all():
            raise ValidationError(f"tensor {name!r} contains non-finite values")
        out.append((name, m))
    for k, v in archive.metadata.items():
        if not isinstance(k, str) or not isinstance(v, str):
            raise ValidationError(f"metadata must map str to str, got {k!r}: {v!r}")
    return out


def save_archive(archive: TensorArchive, path) -> None:
    entries = _validated_entries(archive)
    header: dict[str, object] = {METADATA_KEY: dict(archive.metadata)}
    offset = 0
    for name, m in entries:
        length = m.size * 4
        header[name] = {"shape": [int(m.shape[0]), int(m.shape[1])], "offset": offset, "length": length}
        offset += length
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for _, m in entries:
            m.tofile(fh)


def _reject_duplicates(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise ValidationError(f"duplicate name {k!r} in archive header")
        seen[k] = v
    return seen


def _parse_entry(name: str, spec) -> tuple[tuple[int, int], int, int]:
    if not isinstance(spec, dict) or not {"shape", "offset", "length"} <= spec.keys():
        raise FormatError(f"header entry {name!r} must have shape, offset and length")
    shape, offset, length = spec["shape"], spec["offset"], spec["length"]
    ints = list(shape) + [offset, length] if isinstance(shape, list) else None
    if (
        ints is None
        or len(shape) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in ints)
    ):
        raise FormatError(f"header entry {name!r} has malformed shape/offset/length: {spec!r}")
    if length != shape[0] * shape[1] * 4:
        raise CorruptionError(f"tensor {name!r}: length {length} does not match shape {shape}")
    return (shape[0], shape[1]), offset, length


def load_archive(path) -> TensorArchive:
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) < _PREFIX.size:
            raise FormatError(f"{path}: file too short for a QGVT prefix")
        magic, version, header_len = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if _PREFIX.size + header_len > size:
            raise CorruptionError(f"{path}: header length {header_len} exceeds file size {size}")
        blob = fh.read(header_len)
    try:
        header = json.loads(blob.decode("utf-8"), object_pairs_hook=_reject_duplicates)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")

    metadata = header.pop(METADATA_KEY, {})
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise FormatError(f"{path}: metadata must map strings to strings")

    payload_start = _PREFIX.size + header_len
    payload_size = size - payload_start
    regions = []
    for name, spec in header.items():
        shape, offset, length = _parse_entry(name, spec)
        if offset + length > payload_size:
            raise CorruptionError(
                f"{path}: tensor {name!r} spans bytes {offset}..{offset + length} "
                f"but the payload has {payload_size}"
            )
        regions.append((offset, length, name, shape))
    regions.sort()
    end = 0
    for offset, length, name, _ in regions:
        if offset < end:
            raise CorruptionError(f"{path}: tensor {name!r} overlaps the previous tensor")
        end = max(end, offset + length)

    entries: dict[str, np.ndarray] = {}
    if payload_size:
        payload = np.memmap(path, dtype=np.uint8, mode="r", offset=payload_start, shape=(payload_size,))
    for offset, length, name, shape in regions:
        if length:
            m = payload[offset:offset + length].view("<f4").reshape(shape).astype(np.float32)
        else:
            m = np.zeros(shape, dtype=np.float32)
        if not np.isfinite(m).all():
            raise ValidationError(f"{path}: tensor {name!r} contains non-finite values")
        entries[name] = m
    return TensorArchive({k: entries[k] for k in sorted(entries)}, dict(metadata))


# --- splitmix64 -------------------------------------------------------------


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix64_next(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(output, new_state)``."""
    state = (state + GOLDEN_GAMMA) & MASK64
    return _mix64(state), state


def splitmix64_block(state: int, count: int) -> tuple[np.ndarray, int]:
    """The next ``count`` splitmix64 outputs as a uint64 array, plus the new state.

    splitmix64 is counter based (output i mixes ``state + (i+1) * gamma``), so
    the block is computed without a Python loop and matches repeated
    :func:`splitmix64_next` calls exactly.
    """
    state &= MASK64
    with np.errstate(over="ignore"):
        z = np.arange(1, count + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA) + np.uint64(state)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z ^= z >> np.uint64(31)
    return z, (state + count * GOLDEN_GAMMA) & MASK64


def uniform_from_bits(bits: np.ndarray, low: float = INIT_LOW, high: float = INIT_HIGH) -> np.ndarray:
    """Map uint64 draws to float32 values in ``[low, high)``.

    The top 53 bits form a float64 uniform ``u`` in [0, 1); ``low + (high-low)*u``
    is then rounded toward zero to float32, so the result never leaves the
    half-open interval even where float32 rounding would cross a bound.
    """
    u = (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    wide = low + (high - low) * u
    narrow = wide.astype(np.float32)
    over = np.abs(narrow.astype(np.float64)) > np.abs(wide)
    narrow[over] = np.nextafter(narrow[over], np.float32(0))
    return narrow


def tensor_shapes(config: EncoderConfig) -> dict[str, tuple[int, int]]:
    """Canonical name -> shape map for every tensor the pipeline reads."""
    d, f = config.dim, config.ffn_dim
    shapes = {
        "patch.weight": (config.patch_dim, d),
        "patch.pos": (config.token_count + 1, d),
        "patch.cls": (1, d),
        "guide.mlp.w1": (config.text_dim, d),
        "guide.mlp.w2": (d, d),
    }
    for i in range(config.layers):
        p = f"layers.{i}"
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{w}"] = (d, d)
        for ln in ("ln1", "ln2"):
            shapes[f"{p}.{ln}.gamma"] = (1, d)
            shapes[f"{p}.{ln}.beta"] = (1, d)
        shapes[f"{p}.ffn.w1"] = (d, f)
        shapes[f"{p}.ffn.w2"] = (f, d)
    return shapes


def gen_synthetic(seed: int, config: EncoderConfig, preset: str | None = None) -> TensorArchive:
    """Fill every canonical tensor from one splitmix64 stream, in sorted-name order."""
    if not 0 <= seed <= MASK64:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    shapes = tensor_shapes(config)
    state = seed
    entries = {}
    for name in sorted(shapes):
        rows, cols = shapes[name]
        bits, state = splitmix64_block(state, rows * cols)
        entries[name] = uniform_from_bits(bits).reshape(rows, cols)
        del bits
    metadata = config.to_metadata()
    metadata.update({"seed": str(seed), "generator": "splitmix64-uniform[-0.1,0.1)"})
    if preset is not None:
        metadata["preset"] = preset
    return TensorArchive(entries, metadata)


def archive_config(archive: TensorArchive) -> EncoderConfig:
    """Recover the EncoderConfig recorded in an archive's metadata."""
    return EncoderConfig.from_metadata(archive.metadata)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


__all__ = [
    "MAGIC", "VERSION", "TensorArchive", "save_archive", "load_archive",
    "splitmix64_next", "splitmix64_block", "uniform_from_bits", "tensor_shapes",
    "gen_synthetic", "archive_config", "file_sha256",
]
