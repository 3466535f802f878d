"""Image raster type, channel statistics, and lossless file I/O.

Images are plain numpy arrays of shape (H, W, 3), dtype float64, values
nominally in [0, 1] (intermediate pipeline products may exceed that range).
PNG decoding/encoding is delegated to OpenCV; binary PPM (P6) is read and
written directly so the emitted header bytes are exactly
``P6\\n<w> <h>\\n255\\n``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import CorruptDataError, UnsupportedFormatError

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
PPM_MAGIC = b"P6"


def validate_image(image: np.ndarray) -> np.ndarray:
    """Coerce to float64 (H, W, 3) and check the raster invariants.

    Raises ValueError on wrong shape, empty dimensions, or non-finite values.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image dimensions must be >= 1, got {arr.shape[:2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel and global mean/extrema of an image."""

    per_channel_mean: tuple[float, float, float]
    global_mean: float
    per_channel_min: tuple[float, float, float]
    per_channel_max: tuple[float, float, float]
    global_min: float
    global_max: float


def compute_stats(image: np.ndarray) -> ChannelStats:
    """Exact channel statistics of a raster.

    numpy's pairwise-summation mean keeps the result stable to ~1e-6
    relative even on megapixel inputs, which the normalization identities
    downstream rely on.
    """
    arr = validate_image(image)
    per_mean = arr.mean(axis=(0, 1))
    per_min = arr.min(axis=(0, 1))
    per_max = arr.max(axis=(0, 1))
    return ChannelStats(
        per_channel_mean=tuple(float(v) for v in per_mean),
        global_mean=float(arr.mean()),
        per_channel_min=tuple(float(v) for v in per_min),
        per_channel_max=tuple(float(v) for v in per_max),
        global_min=float(arr.min()),
        global_max=float(arr.max()),
    )


def _read_ppm(data: bytes, path: str) -> np.ndarray:
    pos = 2  # past "P6"
    fields: list[int] = []

    def skip_separators(p: int) -> int:
        while p < len(data):
            c = data[p : p + 1]
            if c == b"#":
                while p < len(data) and data[p : p + 1] != b"\n":
                    p += 1
            elif c.isspace():
                p += 1
            else:
                break
        return p

    while len(fields) < 3:
        pos = skip_separators(pos)
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise CorruptDataError(f"{path}: malformed PPM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte terminating the header
    width, height, maxval = fields
    if maxval not in (255, 65535):
        raise UnsupportedFormatError(f"{path}: unsupported PPM maxval {maxval}")
    bytes_per_sample = 1 if maxval == 255 else 2
    expected = width * height * 3 * bytes_per_sample
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise CorruptDataError(
            f"{path}: truncated PPM payload ({len(payload)} of {expected} bytes)"
        )
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    raw = np.frombuffer(payload, dtype=dtype).reshape(height, width, 3)
    return raw.astype(np.float64) / maxval


def _read_png(path: str) -> np.ndarray:
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise CorruptDataError(f"{path}: PNG payload could not be decoded")
    if raw.ndim != 3 or raw.shape[2] != 3:
        channels = 1 if raw.ndim == 2 else raw.shape[2]
        raise UnsupportedFormatError(
            f"{path}: expected 3 channels, found {channels}"
        )
    scale = 255.0 if raw.dtype == np.uint8 else 65535.0
    return raw[:, :, ::-1].astype(np.float64) / scale  # BGR -> RGB


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load an 8/16-bit RGB PNG or binary PPM, scaled to [0, 1] float64."""
    path = str(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(PNG_MAGIC):
        return _read_png(path)
    if head.startswith(PPM_MAGIC):
        with open(path, "rb") as fh:
            return _read_ppm(fh.read(), path)
    raise UnsupportedFormatError(f"{path}: unknown magic {head[:2]!r}")


def save_image(image: np.ndarray, path: str | os.PathLike, bit_depth: int = 8) -> None:
    """Write an image as PNG (by extension) or binary PPM.

    Values are clamped to [0, 1] before quantization; on the nominal
    pipeline path outputs are already range-normalized and the clamp is a
    no-op. 8-bit round-trips reproduce the input within 1/(2*255) per
    channel.
    """
    arr = validate_image(image)
    path = str(path)
    clipped = np.clip(arr, 0.0, 1.0)
    suffix = Path(path).suffix.lower()
    if suffix == ".ppm":
        if bit_depth != 8:
            raise ValueError("PPM output is 8-bit only")
        quant = np.rint(clipped * 255.0).astype(np.uint8)
        header = f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
        try:
            with open(path, "wb") as fh:
                fh.write(header)
                fh.write(quant.tobytes())
        except OSError:
            raise
        return
    if suffix != ".png":
        raise UnsupportedFormatError(f"{path}: unsupported output extension {suffix!r}")
    if bit_depth == 8:
        quant = np.rint(clipped * 255.0).astype(np.uint8)
    elif bit_depth == 16:
        quant = np.rint(clipped * 65535.0).astype(np.uint16)
    else:
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    # cv2.imwrite returns False instead of raising on an unwritable path.
    ok = cv2.imwrite(path, quant[:, :, ::-1])
    if not ok:
        raise OSError(f"could not write {path}")
