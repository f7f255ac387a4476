"""Readers and writers for the on-disk formats the toolkit exchanges.

Covered here: binary PGM (P5) and PBM (P4) images and masks, Middlebury
``.flo`` flow fields, 8-bit PGM reliability weights mapped to [0, 1],
and the raw float32 feature-map container.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

PathLike = Union[str, Path]

FLO_MAGIC = 202021.25


class FormatError(Exception):
    """Malformed or unsupported file content."""


def _read_netpbm_tokens(data: bytes, count: int, start: int) -> tuple[list[int], int]:
    """Read whitespace-separated ASCII integers, skipping # comments."""
    tokens: list[int] = []
    i = start
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated netpbm header")
        try:
            tokens.append(int(data[i:j]))
        except ValueError as exc:
            raise FormatError(f"bad netpbm header token {data[i:j]!r}") from exc
        i = j
    # exactly one whitespace byte separates the header from the raster
    if i >= n or not data[i : i + 1].isspace():
        raise FormatError("missing raster separator")
    return tokens, i + 1


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a binary (P5) PGM into a 2-D uint8 array."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {data[:2]!r})")
    (width, height, maxval), offset = _read_netpbm_tokens(data, 3, 2)
    if maxval <= 0 or maxval > 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    expected = width * height
    raster = data[offset : offset + expected]
    if len(raster) != expected:
        raise FormatError(f"{path}: raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if image.dtype != np.uint8:
        image = np.clip(np.round(image), 0, 255).astype(np.uint8)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.tobytes())


def _read_pbm(data: bytes, path: PathLike) -> np.ndarray:
    (width, height), offset = _read_netpbm_tokens(data, 2, 2)
    row_bytes = (width + 7) // 8
    expected = row_bytes * height
    raster = data[offset : offset + expected]
    if len(raster) != expected:
        raise FormatError(f"{path}: raster truncated")
    rows = np.frombuffer(raster, dtype=np.uint8).reshape(height, row_bytes)
    bits = np.unpackbits(rows, axis=1)[:, :width]
    return bits.astype(bool)  # PBM: set bit means black, treated as foreground


def read_mask(path: PathLike) -> np.ndarray:
    """Read a segmentation mask (P5 nonzero=fg, or P4 bitmap) as bool."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic == b"P5":
        return read_pgm(path) != 0
    if magic == b"P4":
        return _read_pbm(data, path)
    raise FormatError(f"{path}: expected P5 or P4, got {magic!r}")


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    mask = np.asarray(mask).astype(bool)
    write_pgm(path, np.where(mask, 255, 0).astype(np.uint8))


def read_flo(path: PathLike) -> np.ndarray:
    """Read a Middlebury .flo file into an (h, w, 2) float32 array."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: too short for a .flo header")
    magic = struct.unpack("<f", data[:4])[0]
    if abs(magic - FLO_MAGIC) > 1e-3:
        raise FormatError(f"{path}: bad magic {magic}")
    width, height = struct.unpack("<ii", data[4:12])
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    expected = width * height * 2 * 4
    raster = data[12 : 12 + expected]
    if len(raster) != expected:
        raise FormatError(f"{path}: flow payload truncated")
    flow = np.frombuffer(raster, dtype="<f4").reshape(height, width, 2)
    return flow.copy()


def write_flo(path: PathLike, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("flow must have shape (h, w, 2)")
    height, width = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", width, height))
        fh.write(flow.astype("<f4").tobytes())


def read_weights_pgm(path: PathLike) -> np.ndarray:
    """Read an 8-bit PGM of reliability weights, scaled to [0, 1]."""
    return read_pgm(path).astype(np.float64) / 255.0


def write_weights_pgm(path: PathLike, weights: np.ndarray) -> None:
    w = np.clip(np.asarray(weights, dtype=np.float64), 0.0, 1.0)
    write_pgm(path, np.round(w * 255.0).astype(np.uint8))


def read_feature_file(path: PathLike) -> np.ndarray:
    """Read a raw feature map: uint32 LE (h, w, c) header, float32 LE payload."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: too short for a feature header")
    h, w, c = struct.unpack("<III", data[:12])
    expected = h * w * c * 4
    payload = data[12 : 12 + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: feature payload truncated")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c).copy()


def write_feature_file(path: PathLike, features: np.ndarray) -> None:
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 3:
        raise ValueError("feature maps have shape (h, w, c)")
    h, w, c = features.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", h, w, c))
        fh.write(features.astype("<f4").tobytes())
