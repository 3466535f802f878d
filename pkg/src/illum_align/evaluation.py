"""Full-reference image metrics and classical color-correction baselines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .colorspace import lab_to_srgb, srgb_to_lab
from .errors import (
    DegenerateBaselineError,
    DimensionMismatchError,
    ImageTooSmallError,
)
from .imagecore import validate_image

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class SsimConfig:
    """Reference SSIM parameters: 11x11 Gaussian window, sigma 1.5."""

    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self) -> None:
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window_size must be odd and >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")

    def kernel(self) -> np.ndarray:
        """1-D Gaussian taps normalized to sum exactly 1."""
        half = self.window_size // 2
        x = np.arange(-half, half + 1, dtype=np.float64)
        k = np.exp(-(x**2) / (2.0 * self.sigma**2))
        return k / k.sum()


@dataclass(frozen=True)
class MetricValues:
    psnr: float | None = None
    ssim: float | None = None
    rmse: float | None = None
    residual: float | None = None


def _check_shapes(pred: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = validate_image(pred)
    b = validate_image(ref)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(pred: np.ndarray, ref: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1]-range images.

    Zero MSE returns the 99.0 dB sentinel; the same value also caps the
    result so near-identical pairs cannot exceed the identical-pair score.
    """
    a, b = _check_shapes(pred, ref)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def ssim(pred: np.ndarray, ref: np.ndarray, config: SsimConfig | None = None) -> float:
    """Mean structural similarity with Gaussian-weighted local statistics.

    Computed per channel over the region where the window fits entirely
    inside the image, then averaged over pixels and channels. Symmetric in
    its arguments.
    """
    cfg = config or SsimConfig()
    a, b = _check_shapes(pred, ref)
    h, w = a.shape[:2]
    if h < cfg.window_size or w < cfg.window_size:
        raise ImageTooSmallError(
            f"image {h}x{w} smaller than {cfg.window_size}x{cfg.window_size} window"
        )
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    kernel = cfg.kernel()
    half = cfg.window_size // 2

    def local_mean(arr: np.ndarray) -> np.ndarray:
        out = ndimage.correlate1d(arr, kernel, axis=0, mode="nearest")
        out = ndimage.correlate1d(out, kernel, axis=1, mode="nearest")
        return out[half : h - half, half : w - half]

    total = 0.0
    for c in range(3):
        x = a[:, :, c]
        y = b[:, :, c]
        mu_x = local_mean(x)
        mu_y = local_mean(y)
        sigma_x = local_mean(x * x) - mu_x * mu_x
        sigma_y = local_mean(y * y) - mu_y * mu_y
        sigma_xy = local_mean(x * y) - mu_x * mu_y
        index = ((2.0 * mu_x * mu_y + c1) * (2.0 * sigma_xy + c2)) / (
            (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2)
        )
        total += float(index.mean())
    return total / 3.0


def rmse(pred: np.ndarray, ref: np.ndarray) -> float:
    """Root of the mean squared difference over all values."""
    a, b = _check_shapes(pred, ref)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def residual_error(pred: np.ndarray, ref: np.ndarray) -> float:
    """Mean absolute pixel-wise difference over all pixels and channels."""
    a, b = _check_shapes(pred, ref)
    return float(np.mean(np.abs(a - b)))


def white_patch(image: np.ndarray, epsilon: float = 1e-6) -> np.ndarray:
    """Rescale each channel by its maximum, clamped to [0, 1]."""
    arr = validate_image(image)
    channel_max = arr.max(axis=(0, 1))
    return np.clip(arr / (channel_max + epsilon), 0.0, 1.0)


def cielab_stretch(image: np.ndarray) -> np.ndarray:
    """Stretch CIELAB lightness to span [0, 100]; a and b are untouched.

    The input is interpreted as sRGB for the conversion. When the image's
    L range is below 1e-6 the stretch degenerates to identity and only the
    conversion round-trip error remains. Output clamped to [0, 1].
    """
    arr = validate_image(image)
    lab = srgb_to_lab(np.clip(arr, 0.0, 1.0))
    lum = lab[..., 0]
    lo = lum.min()
    hi = lum.max()
    if hi - lo >= 1e-6:
        lab = lab.copy()
        lab[..., 0] = (lum - lo) * (100.0 / (hi - lo))
    return np.clip(lab_to_srgb(lab), 0.0, 1.0)


def improvement_percent(before: float, after: float) -> float:
    """Relative reduction of an error value, in percent."""
    if before <= 0.0:
        raise DegenerateBaselineError(f"baseline must be > 0, got {before}")
    return 100.0 * (before - after) / before
