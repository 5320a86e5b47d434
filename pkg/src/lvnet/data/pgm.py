"""Binary 8-bit grayscale PGM (P5) reading and writing."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from lvnet.errors import DataIOError


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise DataIOError(f"{path}: expected a 2-D uint8 image, got {image.dtype} {image.shape}")
    h, w = image.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(image).tobytes())
    except OSError as exc:
        raise DataIOError(f"{path}: cannot write ({exc.strerror})") from exc


def _header_tokens(data: bytes, path) -> tuple[list[bytes], int]:
    """Magic, width, height, maxval plus the offset of the pixel payload."""
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataIOError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos:pos + 1].isspace():
        raise DataIOError(f"{path}: malformed PGM header")
    return tokens, pos + 1


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"{path}: cannot read ({exc.strerror})") from exc
    tokens, offset = _header_tokens(data, path)
    if tokens[0] != b"P5":
        raise DataIOError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DataIOError(f"{path}: non-numeric PGM header field") from exc
    if w <= 0 or h <= 0:
        raise DataIOError(f"{path}: invalid PGM size {w}x{h}")
    if not 0 < maxval < 256:
        raise DataIOError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    payload = data[offset:offset + w * h]
    if len(payload) != w * h:
        raise DataIOError(f"{path}: expected {w * h} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()
