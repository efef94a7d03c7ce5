"""Minimal binary netpbm I/O: 16-bit P5 depth grids and 8-bit P6 images.

Hand-rolled rather than delegated to an imaging library so each failure
mode (bad magic, malformed header, unsupported maxval, truncated payload)
surfaces as its own error, and so encoding is byte-deterministic.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = [
    "NetpbmError",
    "MalformedHeaderError",
    "UnsupportedMaxvalError",
    "TruncatedPayloadError",
    "parse_pgm16",
    "read_pgm16",
    "write_pgm16",
    "read_ppm",
    "write_ppm",
]


class NetpbmError(ValueError):
    """Base error for netpbm parsing."""


class MalformedHeaderError(NetpbmError):
    pass


class UnsupportedMaxvalError(NetpbmError):
    pass


class TruncatedPayloadError(NetpbmError):
    pass


def _header_tokens(data: bytes, path: str) -> tuple[list[int], int]:
    """Parse width/height/maxval after the magic; returns tokens and the
    payload start offset. Comments (# to end of line) are allowed anywhere
    whitespace is."""
    tokens: list[int] = []
    i = 2  # past the magic
    n = len(data)
    while len(tokens) < 3:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] not in (0x0A, 0x0D):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i] != ord("#"):
            i += 1
        if start == i:
            raise MalformedHeaderError(f"{path}: header ended before 3 numeric fields")
        field = data[start:i]
        if not field.isdigit():
            raise MalformedHeaderError(f"{path}: non-numeric header field {field!r}")
        tokens.append(int(field))
    if i >= n:
        raise MalformedHeaderError(f"{path}: missing whitespace after maxval")
    i += 1  # exactly one whitespace byte separates header from payload
    return tokens, i


def parse_pgm16(data: bytes, name: str = "<bytes>") -> np.ndarray:
    """Parse binary 16-bit grayscale PGM bytes (magic P5, maxval 65535).

    Returns a (height, width) uint16 array; samples are big-endian per the
    netpbm convention. ``name`` labels error messages.
    """
    if data[:2] != b"P5":
        raise MalformedHeaderError(f"{name}: not a binary PGM (magic {data[:2]!r})")
    (width, height, maxval), offset = _header_tokens(data, name)
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"{name}: non-positive dimensions {width}x{height}")
    if maxval != 65535:
        raise UnsupportedMaxvalError(
            f"{name}: maxval {maxval} unsupported (require 16-bit, maxval 65535)"
        )
    expected = width * height * 2
    payload = data[offset : offset + expected]
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{name}: expected {expected} payload bytes, found {len(payload)}"
        )
    grid = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return grid.astype(np.uint16)


def read_pgm16(path: str | Path) -> np.ndarray:
    """Read a binary 16-bit grayscale PGM file."""
    return parse_pgm16(Path(path).read_bytes(), str(path))


def write_pgm16(path: str | Path, grid: np.ndarray) -> None:
    """Write a (height, width) uint16 array as a binary 16-bit PGM."""
    grid = np.asarray(grid, dtype=np.uint16)
    if grid.ndim != 2:
        raise ValueError("PGM grid must be 2-dimensional")
    height, width = grid.shape
    header = f"P5\n{width} {height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + grid.astype(">u2").tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a binary 8-bit RGB PPM (magic P6, maxval 255) into (H, W, 3) uint8."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise MalformedHeaderError(f"{path}: not a binary PPM (magic {data[:2]!r})")
    (width, height, maxval), offset = _header_tokens(data, str(path))
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"{path}: non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxvalError(
            f"{path}: maxval {maxval} unsupported (require 8-bit, maxval 255)"
        )
    expected = width * height * 3
    payload = data[offset : offset + expected]
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{path}: expected {expected} payload bytes, found {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(path: str | Path, pixels: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as a binary 8-bit PPM."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("PPM pixels must have shape (H, W, 3)")
    height, width = pixels.shape[:2]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())
