"""Closed-form illumination normalization.

Three-stage pipeline: gray-world channel balancing, a log-domain split of
the image into reflectance and a per-channel shading level, and a global
min-max recombination back onto [0, 1]. An optional box-window local gain
can be inserted after the gray-world stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import validate_image

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class PanConfig:
    epsilon: float = DEFAULT_EPSILON
    enable_local_gain: bool = False
    local_window_radius: int = 16

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.local_window_radius < 1:
            raise ValueError("local_window_radius must be >= 1")


@dataclass(frozen=True)
class IlluminationDecomposition:
    """Reflectance/shading split of a normalized image.

    ``reflectance`` is (H, W, 3); ``shading`` is one strictly positive
    level per channel, broadcast over the raster. By construction
    ``reflectance * shading == normalized + epsilon`` elementwise (up to
    float round-off, ~1e-16 relative).
    """

    reflectance: np.ndarray
    shading: np.ndarray
    epsilon: float


def gray_world_normalize(image: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Rescale each channel toward the global mean.

    output(x, c) = image(x, c) * E / (E_c + epsilon), where E is the mean
    over all pixels and channels and E_c the per-channel mean. Removes a
    global per-channel color cast exactly (up to the epsilon guard).
    """
    arr = validate_image(image)
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    global_mean = arr.mean()
    channel_mean = arr.mean(axis=(0, 1))
    return arr * (global_mean / (channel_mean + epsilon))


def retinex_decompose(
    normalized: np.ndarray, epsilon: float = DEFAULT_EPSILON
) -> IlluminationDecomposition:
    """Split an image into reflectance and per-channel shading in log space.

    The shading level of each channel is the exponential of the spatial
    mean of log(values + epsilon) — the epsilon-shifted geometric mean —
    and the reflectance is the elementwise residual, so the product of the
    two parts reproduces ``normalized + epsilon`` identically.
    """
    arr = validate_image(normalized)
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    log_shifted = np.log(arr + epsilon)
    log_shading = log_shifted.mean(axis=(0, 1))
    reflectance = np.exp(log_shifted - log_shading)
    shading = np.exp(log_shading)
    return IlluminationDecomposition(
        reflectance=reflectance, shading=shading, epsilon=epsilon
    )


def recombine_normalize(decomp: IlluminationDecomposition) -> np.ndarray:
    """Recombine the split and stretch the product onto [0, 1].

    Min and max are global over all pixels and channels jointly: one
    affine map for the whole tensor, preserving relative channel ratios.
    A constant product maps to all zeros (the epsilon in the denominator
    guards the degenerate case).
    """
    product = decomp.reflectance * decomp.shading
    lo = product.min()
    hi = product.max()
    return (product - lo) / (hi - lo + decomp.epsilon)


def local_gain(
    image: np.ndarray, radius: int = 16, epsilon: float = DEFAULT_EPSILON
) -> np.ndarray:
    """Multiply by a per-pixel gain pulling local brightness toward global.

    G(x) = E / (E_win(x) + epsilon): E_win is the mean over a box window of
    side 2*radius + 1 (clipped at the borders, so edge windows shrink)
    taken across all three channels, producing one scalar gain per pixel.
    """
    arr = validate_image(image)
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    h, w = arr.shape[:2]
    pixel_sum = arr.sum(axis=2)
    # Integral image with a zero row/column prepended; window sums become
    # four lookups regardless of radius.
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = pixel_sum.cumsum(axis=0).cumsum(axis=1)

    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.maximum(ys - radius, 0)
    y1 = np.minimum(ys + radius, h - 1) + 1
    x0 = np.maximum(xs - radius, 0)
    x1 = np.minimum(xs + radius, w - 1) + 1

    win_sum = (
        integral[np.ix_(y1, x1)]
        - integral[np.ix_(y0, x1)]
        - integral[np.ix_(y1, x0)]
        + integral[np.ix_(y0, x0)]
    )
    win_count = ((y1 - y0)[:, None] * (x1 - x0)[None, :]) * 3
    local_mean = win_sum / win_count
    gain = arr.mean() / (local_mean + epsilon)
    return arr * gain[:, :, None]


def pan_pipeline(image: np.ndarray, config: PanConfig | None = None) -> np.ndarray:
    """Run the full normalization: gray-world, log split, recombination.

    When ``config.enable_local_gain`` is set, the local gain is applied to
    the gray-world output before the decomposition. Output is in [0, 1];
    the result is deterministic and invariant to a global per-channel tint
    of the input (up to epsilon-scale error).
    """
    cfg = config or PanConfig()
    balanced = gray_world_normalize(image, cfg.epsilon)
    if cfg.enable_local_gain:
        balanced = local_gain(balanced, cfg.local_window_radius, cfg.epsilon)
    decomp = retinex_decompose(balanced, cfg.epsilon)
    return recombine_normalize(decomp)
