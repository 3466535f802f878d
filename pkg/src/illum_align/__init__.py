"""Illumination alignment toolkit.

Closed-form illumination normalization, classical color-correction
baselines, full-reference image metrics, a depth-to-normal geometric
pipeline, and a desk-scale rectified cross-attention kernel with gradient
verification, plus a dataset harness and CLI tying them together.
"""

__version__ = "0.1.0"

from .errors import (
    CorruptDataError,
    DegenerateBaselineError,
    DimensionMismatchError,
    EmptyDatasetError,
    IllumAlignError,
    ImageTooSmallError,
    InvalidFovError,
    NonFiniteError,
    ShapeMismatchError,
    UnsupportedFormatError,
)
from .imagecore import ChannelStats, compute_stats, load_image, save_image, validate_image
from .pan import (
    IlluminationDecomposition,
    PanConfig,
    gray_world_normalize,
    local_gain,
    pan_pipeline,
    recombine_normalize,
    retinex_decompose,
)
from .evaluation import (
    MetricValues,
    SsimConfig,
    cielab_stretch,
    improvement_percent,
    psnr,
    residual_error,
    rmse,
    ssim,
    white_patch,
)
from .gsra import (
    AttentionBundle,
    GsraParams,
    LossConfig,
    attention_map,
    charbonnier_loss,
    finite_diff_gradient,
    global_ssim,
    gsra_attention,
    gsra_forward,
    kv_project,
    prior_inject,
    rectify,
    run_self_check,
    scalar_loss_gradients,
    total_loss,
)
from .geometry import (
    CameraIntrinsics,
    encode_normals,
    intrinsics_from_fov,
    load_depth,
    normalize_normals,
    normals_from_points,
    save_depth,
    unproject_depth,
)
from .harness import (
    DatasetPair,
    MetricReport,
    RunConfig,
    emit_report,
    run_method,
    scan_dataset,
    synth_corpus,
)

__all__ = [
    "__version__",
    "IllumAlignError",
    "UnsupportedFormatError",
    "CorruptDataError",
    "DimensionMismatchError",
    "ShapeMismatchError",
    "ImageTooSmallError",
    "InvalidFovError",
    "DegenerateBaselineError",
    "EmptyDatasetError",
    "NonFiniteError",
    "ChannelStats",
    "compute_stats",
    "load_image",
    "save_image",
    "validate_image",
    "PanConfig",
    "IlluminationDecomposition",
    "gray_world_normalize",
    "retinex_decompose",
    "recombine_normalize",
    "local_gain",
    "pan_pipeline",
    "SsimConfig",
    "MetricValues",
    "psnr",
    "ssim",
    "rmse",
    "residual_error",
    "white_patch",
    "cielab_stretch",
    "improvement_percent",
    "GsraParams",
    "AttentionBundle",
    "LossConfig",
    "prior_inject",
    "kv_project",
    "attention_map",
    "rectify",
    "gsra_attention",
    "gsra_forward",
    "charbonnier_loss",
    "global_ssim",
    "total_loss",
    "finite_diff_gradient",
    "scalar_loss_gradients",
    "run_self_check",
    "CameraIntrinsics",
    "intrinsics_from_fov",
    "unproject_depth",
    "normals_from_points",
    "normalize_normals",
    "encode_normals",
    "load_depth",
    "save_depth",
    "DatasetPair",
    "RunConfig",
    "MetricReport",
    "scan_dataset",
    "synth_corpus",
    "run_method",
    "emit_report",
]
