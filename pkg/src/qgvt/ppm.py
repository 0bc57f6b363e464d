"""Binary PPM (P6, maxval 255) reading and writing."""

from __future__ import annotations

import numpy as np

from .errors import FormatError


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header fields, skipping # comments."""
    out, i, n = [], 0, len(data)
    while len(out) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise FormatError("truncated PPM header")
        out.append(data[start:i])
    return out, i


def decode_ppm(data: bytes) -> np.ndarray:
    fields, pos = _tokens(data, 4)
    if fields[0] != b"P6":
        raise FormatError(f"not a binary PPM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"bad PPM header fields {fields[1:]!r}") from exc
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise FormatError(f"bad PPM dimensions {width}x{height}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after PPM maxval")
    pixels = data[pos + 1:]
    expected = width * height * 3
    if len(pixels) < expected:
        raise FormatError(f"PPM payload has {len(pixels)} bytes, expected {expected}")
    return np.frombuffer(pixels[:expected], dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected an HxWx3 uint8 image, got {image.shape} {image.dtype}")
    h, w, _ = image.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(image).tobytes()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_ppm(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(image))
