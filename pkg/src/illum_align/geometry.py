"""Depth-to-normal pipeline: intrinsics from field of view, pinhole
unprojection, gradient-based surface normals, and normal-map encoding."""

from __future__ import annotations

import os
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import (
    CorruptDataError,
    ImageTooSmallError,
    InvalidFovError,
    UnsupportedFormatError,
)

DEGENERATE_CROSS_NORM = 1e-12
NORMALIZE_EPSILON = 1e-20


@dataclass(frozen=True)
class CameraIntrinsics:
    focal: float
    c_x: float
    c_y: float


def intrinsics_from_fov(width: int, height: int, fov_deg: float = 60.0) -> CameraIntrinsics:
    """Pinhole intrinsics for a sensor of the given pixel size.

    focal = width / (2 tan(fov/2)); the principal point sits on the pixel
    grid center ((W-1)/2, (H-1)/2).
    """
    if not 0.0 < fov_deg < 180.0:
        raise InvalidFovError(f"fov must be in (0, 180) degrees, got {fov_deg}")
    if width < 1 or height < 1:
        raise ValueError("width and height must be >= 1")
    focal = width / (2.0 * np.tan(np.deg2rad(fov_deg) / 2.0))
    return CameraIntrinsics(focal=float(focal), c_x=(width - 1) / 2.0, c_y=(height - 1) / 2.0)


def _as_depth(depth: np.ndarray) -> np.ndarray:
    arr = np.asarray(depth, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"depth map must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("depth map contains NaN or Inf")
    return arr


def unproject_depth(depth: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Per-pixel 3D points ((x-c_x)z/f, (y-c_y)z/f, z), shape (H, W, 3).

    Non-positive depths are unprojected like any other value; exclude them
    downstream via the ``valid`` mask of :func:`normals_from_points`.
    """
    z = _as_depth(depth)
    h, w = z.shape
    xs = np.arange(w, dtype=np.float64) - intrinsics.c_x
    ys = np.arange(h, dtype=np.float64) - intrinsics.c_y
    points = np.empty((h, w, 3), dtype=np.float64)
    points[:, :, 0] = xs[None, :] * z / intrinsics.focal
    points[:, :, 1] = ys[:, None] * z / intrinsics.focal
    points[:, :, 2] = z
    return points


def normals_from_points(points: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Unit surface normals from a point-cloud grid via spatial gradients.

    Tangents use central differences in the interior and one-sided
    differences at borders. Normals are oriented toward the camera
    (negative z). Degenerate cross products (norm < 1e-12) and pixels
    whose difference stencil touched an invalid sample yield exact zero
    vectors.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 3 or pts.shape[2] != 3:
        raise ValueError(f"points must be (H, W, 3), got {pts.shape}")
    h, w = pts.shape[:2]
    if h < 2 or w < 2:
        raise ImageTooSmallError("need at least 2x2 points for gradients")
    tangent_u = np.gradient(pts, axis=1)
    tangent_v = np.gradient(pts, axis=0)
    normal = np.cross(tangent_u, tangent_v)
    flip = normal[:, :, 2] > 0
    normal[flip] *= -1.0
    length = np.linalg.norm(normal, axis=2)
    degenerate = length < DEGENERATE_CROSS_NORM
    if valid is not None:
        mask = np.asarray(valid, dtype=bool)
        if mask.shape != (h, w):
            raise ValueError(f"valid mask {mask.shape} does not match points {(h, w)}")
        bad = ~mask
        # The stencil of a pixel spans its 4-neighborhood, so invalidity
        # spreads exactly one step along each axis.
        touched = bad.copy()
        touched[1:, :] |= bad[:-1, :]
        touched[:-1, :] |= bad[1:, :]
        touched[:, 1:] |= bad[:, :-1]
        touched[:, :-1] |= bad[:, 1:]
        degenerate = degenerate | touched
    safe = np.where(degenerate, 1.0, length)
    out = normal / safe[:, :, None]
    out[degenerate] = 0.0
    return out


def normalize_normals(raw: np.ndarray) -> np.ndarray:
    """Decode a [0, 1]-encoded normal map: rescale to [-1, 1], then divide
    by the vector norm (+1e-20). A midpoint-gray pixel decodes to the zero
    vector."""
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"raw normal map must be (H, W, 3), got {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("raw normal values must lie in [0, 1]")
    rescaled = 2.0 * arr - 1.0
    length = np.linalg.norm(rescaled, axis=2)
    return rescaled / (length + NORMALIZE_EPSILON)[:, :, None]


def encode_normals(normals: np.ndarray) -> np.ndarray:
    """Map unit (or zero) normals onto the [0, 1] image range via (n+1)/2."""
    return (np.asarray(normals, dtype=np.float64) + 1.0) / 2.0


def load_depth(path: str | os.PathLike) -> np.ndarray:
    """Read a single-channel PNG depth map, scaled by its code range.

    16-bit grayscale is the canonical format; 8-bit is accepted and scaled
    by 255. Zero pixels mean "no depth" and are flagged invalid downstream.
    """
    path = str(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise CorruptDataError(f"{path}: could not decode depth image")
    if raw.ndim != 2:
        raise UnsupportedFormatError(f"{path}: depth must be single-channel")
    scale = 255.0 if raw.dtype == np.uint8 else 65535.0
    return raw.astype(np.float64) / scale


def save_depth(depth: np.ndarray, path: str | os.PathLike) -> None:
    """Write a [0, 1] depth map as 16-bit grayscale PNG."""
    arr = _as_depth(depth)
    quant = np.rint(np.clip(arr, 0.0, 1.0) * 65535.0).astype(np.uint16)
    if not cv2.imwrite(str(path), quant):
        raise OSError(f"could not write {path}")
