"""Binary tensor/mask containers and ingestion of images, frames and traffic CSVs.

T3B1 layout (all little-endian)::

    b"T3B1" | n1 u64 | n2 u64 | n3 u64 | n1*n2*n3 float64

T3M1 is identical with magic b"T3M1" and a bit-packed payload (element e
lives in byte e // 8, bit e % 8, least significant bit first; padding bits
are zero).  Both payloads use the same element order: frontal slice k
outermost, then row-major within the slice, i.e. ``e = (k*n1 + i)*n2 + j``.
"""

from __future__ import annotations

import csv
import math
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"T3B1"
MASK_MAGIC = b"T3M1"
HEADER = struct.Struct("<4sQQQ")
MAX_ELEMENTS = 2**40


class TensorFormatError(ValueError):
    def __init__(self, message: str, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def element_index(i: int, j: int, k: int, dims) -> int:
    """Position of entry (i, j, k) in the on-disk element order."""
    n1, n2, _ = dims
    return (k * n1 + i) * n2 + j


def to_element_order(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(a, (2, 0, 1))).reshape(-1)


def from_element_order(flat: np.ndarray, dims) -> np.ndarray:
    n1, n2, n3 = dims
    return np.ascontiguousarray(np.transpose(flat.reshape(n3, n1, n2), (1, 2, 0)))


def _parse_header(buf: bytes, magic: bytes):
    if len(buf) < 4:
        raise TensorFormatError("file too short for magic", offset=len(buf))
    if buf[:4] != magic:
        raise TensorFormatError(f"bad magic {buf[:4]!r}, expected {magic!r}", offset=0)
    if len(buf) < HEADER.size:
        raise TensorFormatError("truncated header", offset=len(buf))
    _, n1, n2, n3 = HEADER.unpack_from(buf)
    dims = (n1, n2, n3)
    if min(dims) < 1:
        raise TensorFormatError(f"dimensions must be positive, got {dims}", offset=4)
    if math.prod(dims) > MAX_ELEMENTS:
        raise TensorFormatError(f"dimensions {dims} overflow the element limit", offset=4)
    return dims


def write_tensor(t, path) -> None:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got shape {t.shape}")
    payload = to_element_order(t).astype("<f8").tobytes()
    Path(path).write_bytes(HEADER.pack(TENSOR_MAGIC, *t.shape) + payload)


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    dims = _parse_header(buf, TENSOR_MAGIC)
    expected = HEADER.size + 8 * math.prod(dims)
    if len(buf) < expected:
        raise TensorFormatError(
            f"truncated payload: need {expected} bytes for dims {dims}, file has {len(buf)}",
            offset=len(buf),
        )
    if len(buf) > expected:
        raise TensorFormatError("trailing bytes after payload", offset=expected)
    flat = np.frombuffer(buf, dtype="<f8", offset=HEADER.size).astype(np.float64)
    return from_element_order(flat, dims)


def write_mask(mask, path) -> None:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError(f"expected a third-order mask, got shape {mask.shape}")
    bits = np.packbits(to_element_order(mask), bitorder="little")
    Path(path).write_bytes(HEADER.pack(MASK_MAGIC, *mask.shape) + bits.tobytes())


def read_mask(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    dims = _parse_header(buf, MASK_MAGIC)
    size = math.prod(dims)
    expected = HEADER.size + (size + 7) // 8
    if len(buf) < expected:
        raise TensorFormatError(
            f"truncated mask payload: need {expected} bytes for dims {dims}, file has {len(buf)}",
            offset=len(buf),
        )
    if len(buf) > expected:
        raise TensorFormatError("trailing bytes after mask payload", offset=expected)
    packed = np.frombuffer(buf, dtype=np.uint8, offset=HEADER.size)
    bits = np.unpackbits(packed, bitorder="little")
    if bits[size:].any():
        raise TensorFormatError("nonzero padding bits", offset=expected - 1)
    return from_element_order(bits[:size].astype(bool), dims)


def image_to_tensor(pixels) -> np.ndarray:
    """height x width x 3 bytes -> (height, width, 3) tensor in [0, 1]."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise TensorFormatError(f"expected height x width x 3 pixels, got shape {pixels.shape}")
    return pixels.astype(np.float64) / 255.0


def tensor_to_image(t) -> np.ndarray:
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    return np.floor(t * 255.0 + 0.5).astype(np.uint8)


def frames_to_tensor(frames) -> np.ndarray:
    """Stack equally sized grayscale frames as frontal slices.

    Integer frames are read as 8-bit and divided by 255; float frames must
    already lie in [0, 1].
    """
    frames = [np.asarray(f) for f in frames]
    if not frames:
        raise TensorFormatError("no frames given")
    shape = frames[0].shape
    for idx, f in enumerate(frames):
        if f.ndim != 2 or f.shape != shape:
            raise TensorFormatError(f"frame {idx} has shape {f.shape}, expected {shape}")
    stack = np.stack(frames, axis=2)
    if np.issubdtype(stack.dtype, np.integer):
        return stack.astype(np.float64) / 255.0
    stack = stack.astype(np.float64)
    if stack.min() < 0 or stack.max() > 1:
        raise TensorFormatError("float frames must lie in [0, 1]")
    return stack


def read_raw_frames(path, height: int, width: int, n_frames: int) -> np.ndarray:
    """Planar 8-bit dump, frame after frame, row-major within a frame."""
    buf = Path(path).read_bytes()
    need = height * width * n_frames
    if len(buf) != need:
        raise TensorFormatError(f"raw frame dump needs {need} bytes, found {len(buf)}", offset=min(len(buf), need))
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(n_frames, height, width)
    return frames_to_tensor(list(raw))


def traffic_csv_to_tensor(path, sensors: int, intervals_per_day: int, days: int) -> np.ndarray:
    """sensors x (intervals * days) CSV -> (sensors, intervals, days) tensor.

    Column ``k * intervals_per_day + j`` holds interval j of day k.  Empty or
    non-finite cells become NaN (missing at source).
    """
    n_cols = intervals_per_day * days
    out = np.empty((sensors, intervals_per_day, days))
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if len(rows) != sensors:
        raise TensorFormatError(f"expected {sensors} rows, found {len(rows)}")
    for i, row in enumerate(rows):
        if len(row) != n_cols:
            raise TensorFormatError(f"row {i + 1}: expected {n_cols} columns, found {len(row)}")
        vals = np.empty(n_cols)
        for c, cell in enumerate(row):
            cell = cell.strip()
            try:
                vals[c] = float(cell) if cell else np.nan
            except ValueError:
                raise TensorFormatError(f"row {i + 1}, column {c + 1}: not a number: {cell!r}") from None
        vals[~np.isfinite(vals)] = np.nan
        out[i] = vals.reshape(days, intervals_per_day).T
    return out
