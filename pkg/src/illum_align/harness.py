"""Dataset ingestion, synthetic-corpus generation, batch method execution,
metric aggregation, and deterministic report emission."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EmptyDatasetError
from .evaluation import (
    MetricValues,
    SsimConfig,
    cielab_stretch,
    psnr,
    residual_error,
    rmse,
    ssim,
    white_patch,
)
from .imagecore import load_image, save_image
from .pan import PanConfig, gray_world_normalize, pan_pipeline

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".ppm")
METHOD_NAMES = ("identity", "grayworld", "whitepatch", "cielab", "pan")
METRIC_NAMES = ("psnr", "ssim", "rmse", "residual")

# Subdirectory name pairs probed for the paired-dirs layout, in order.
# (A, C) first: ISTD checkouts keep masks in B and references in C.
PAIRED_DIR_CANDIDATES = (
    ("A", "C"),
    ("test_A", "test_C"),
    ("train_A", "train_C"),
    ("A", "B"),
    ("input", "reference"),
    ("input", "gt"),
    ("shadow", "shadow_free"),
)


@dataclass(frozen=True)
class DatasetPair:
    pair_id: str
    input_path: Path
    reference_path: Path


@dataclass
class RunConfig:
    method: str = "identity"
    metrics: tuple[str, ...] = METRIC_NAMES
    normalize_reference: bool = True
    epsilon: float = 1e-6
    pan_local_gain: bool = False
    pan_radius: int = 16
    output_dir: Path | None = None
    seed: int = 0
    jobs: int = 1
    pooled_aggregates: bool = False
    dataset_name: str = ""
    timestamp: str = ""

    def __post_init__(self) -> None:
        if self.method not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.method!r}")
        metrics = tuple(self.metrics)
        if not metrics:
            raise ValueError("at least one metric must be selected")
        for m in metrics:
            if m not in METRIC_NAMES:
                raise ValueError(f"unknown metric {m!r}")
        self.metrics = metrics

    def apply(self, image: np.ndarray) -> np.ndarray:
        if self.method == "identity":
            return image
        if self.method == "grayworld":
            return gray_world_normalize(image, self.epsilon)
        if self.method == "whitepatch":
            return white_patch(image, self.epsilon)
        if self.method == "cielab":
            return cielab_stretch(image)
        return pan_pipeline(
            image,
            PanConfig(
                epsilon=self.epsilon,
                enable_local_gain=self.pan_local_gain,
                local_window_radius=self.pan_radius,
            ),
        )


@dataclass(frozen=True)
class PairRecord:
    pair_id: str
    method: str
    values: MetricValues
    elements: int


@dataclass
class MetricReport:
    records: list[PairRecord]
    aggregates: dict[str, float]
    skipped: list[dict]
    meta: dict

    @property
    def pairs_evaluated(self) -> int:
        return len(self.records)

    @property
    def pairs_skipped(self) -> int:
        return len(self.skipped)

    @property
    def pairs_total(self) -> int:
        return self.pairs_evaluated + self.pairs_skipped


def _collect_stems(directory: Path) -> dict[str, Path]:
    stems: dict[str, Path] = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in IMAGE_EXTENSIONS and path.is_file():
            stems.setdefault(path.stem, path)
    return stems


def scan_dataset(
    root: str | Path,
    layout: str = "paired-dirs",
    input_dir: str | None = None,
    reference_dir: str | None = None,
) -> list[DatasetPair]:
    """Discover (input, reference) image pairs under ``root``.

    ``paired-dirs`` expects two sibling directories with matching
    filenames (subdirectory names auto-detected unless given); ``suffix``
    expects flat ``<id>_in.png`` / ``<id>_gt.png`` files. Unmatched files
    produce a warning and are skipped; pairs come back sorted by id.
    Dimension agreement is checked when the pair is evaluated, so the
    corpus is only decoded once.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    if layout == "paired-dirs":
        candidates = (
            ((input_dir, reference_dir),)
            if input_dir and reference_dir
            else PAIRED_DIR_CANDIDATES
        )
        chosen = None
        for in_name, ref_name in candidates:
            if (root / in_name).is_dir() and (root / ref_name).is_dir():
                chosen = (root / in_name, root / ref_name)
                break
        if chosen is None:
            raise EmptyDatasetError(
                f"no paired directories found under {root} "
                f"(tried {', '.join('/'.join(c) for c in candidates)})"
            )
        inputs = _collect_stems(chosen[0])
        references = _collect_stems(chosen[1])
    elif layout == "suffix":
        inputs = {}
        references = {}
        for path in sorted(root.iterdir()):
            if path.suffix.lower() not in IMAGE_EXTENSIONS or not path.is_file():
                continue
            if path.stem.endswith("_in"):
                inputs.setdefault(path.stem[:-3], path)
            elif path.stem.endswith("_gt"):
                references.setdefault(path.stem[:-3], path)
    else:
        raise ValueError(f"unknown layout {layout!r}")

    common = sorted(set(inputs) & set(references))
    for stem in sorted(set(inputs) ^ set(references)):
        side = "reference" if stem in inputs else "input"
        log.warning("missing %s counterpart for %r; pair skipped", side, stem)
    return [
        DatasetPair(pair_id=stem, input_path=inputs[stem], reference_path=references[stem])
        for stem in common
    ]


def _bilinear_upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize a coarse grid with bilinear weights (pure arithmetic, so the
    synthetic corpus stays byte-identical across platforms)."""
    gh, gw = grid.shape[:2]
    ys = np.linspace(0.0, gh - 1.0, height)
    xs = np.linspace(0.0, gw - 1.0, width)
    y0 = np.minimum(ys.astype(int), gh - 2) if gh > 1 else np.zeros(height, dtype=int)
    x0 = np.minimum(xs.astype(int), gw - 2) if gw > 1 else np.zeros(width, dtype=int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if grid.ndim == 3:
        fy = fy[:, :, None]
        fx = fx[:, :, None]
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    top = grid[np.ix_(y0, x0)] * (1.0 - fx) + grid[np.ix_(y0, x1)] * fx
    bottom = grid[np.ix_(y1, x0)] * (1.0 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bottom * fy


def synth_corpus(
    count: int,
    size: int,
    seed: int,
    out: str | Path,
    tint_only: bool = False,
) -> list[DatasetPair]:
    """Generate a paired corpus of reference images and degraded twins.

    References are smooth seeded color fields with rectangular texture,
    scaled so their maximum is 0.5. Degraded counterparts multiply in a
    global per-channel tint from [0.5, 2]^3 and (unless ``tint_only``) a
    smooth scalar shadow field in [0.3, 1]; the 0.5 headroom keeps the
    product inside [0, 1], so degradation is never distorted by clamping.
    A manifest records the tint and shadow parameters per pair.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if size < 32:
        raise ValueError("size must be >= 32")
    out = Path(out)
    input_dir = out / "input"
    reference_dir = out / "reference"
    input_dir.mkdir(parents=True, exist_ok=True)
    reference_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    pairs: list[DatasetPair] = []
    manifest_pairs = []
    for i in range(count):
        pair_id = f"{i:03d}"
        coarse = rng.uniform(0.08, 1.0, size=(4, 4, 3))
        field = _bilinear_upsample(coarse, size, size)
        for _ in range(3):
            y0 = int(rng.integers(0, size // 2))
            x0 = int(rng.integers(0, size // 2))
            hgt = int(rng.integers(size // 8, size // 2))
            wid = int(rng.integers(size // 8, size // 2))
            field[y0 : y0 + hgt, x0 : x0 + wid] *= rng.uniform(0.7, 1.3)
        reference = 0.5 * field / field.max()

        tint = rng.uniform(0.5, 2.0, size=3)
        if tint_only:
            shadow_grid = None
            shade = np.ones((size, size))
        else:
            shadow_grid = rng.uniform(0.3, 1.0, size=(4, 4))
            shade = _bilinear_upsample(shadow_grid, size, size)
        degraded = np.clip(reference * tint * shade[:, :, None], 0.0, 1.0)

        ref_path = reference_dir / f"{pair_id}.png"
        in_path = input_dir / f"{pair_id}.png"
        save_image(reference, ref_path)
        save_image(degraded, in_path)
        pairs.append(DatasetPair(pair_id=pair_id, input_path=in_path, reference_path=ref_path))
        manifest_pairs.append(
            {
                "id": pair_id,
                "tint": [float(v) for v in tint],
                "shadow_grid": None if shadow_grid is None else shadow_grid.tolist(),
            }
        )

    manifest = {
        "seed": seed,
        "count": count,
        "size": size,
        "tint_only": tint_only,
        "pairs": manifest_pairs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return pairs


def _evaluate_pair(pair: DatasetPair, config: RunConfig, ssim_config: SsimConfig):
    input_image = load_image(pair.input_path)
    reference = load_image(pair.reference_path)
    if input_image.shape != reference.shape:
        return {
            "id": pair.pair_id,
            "reason": f"dimension mismatch {input_image.shape[:2]} vs {reference.shape[:2]}",
        }
    processed = config.apply(input_image)
    if config.normalize_reference and config.method != "identity":
        reference = config.apply(reference)
    # Compare inside the displayable range, as a saved output would be.
    processed = np.clip(processed, 0.0, 1.0)
    reference = np.clip(reference, 0.0, 1.0)
    if config.output_dir is not None:
        config.output_dir.mkdir(parents=True, exist_ok=True)
        save_image(processed, Path(config.output_dir) / f"{pair.pair_id}.png")
    values = {}
    for name in config.metrics:
        if name == "psnr":
            values[name] = psnr(processed, reference)
        elif name == "ssim":
            values[name] = ssim(processed, reference, ssim_config)
        elif name == "rmse":
            values[name] = rmse(processed, reference)
        else:
            values[name] = residual_error(processed, reference)
    return PairRecord(
        pair_id=pair.pair_id,
        method=config.method,
        values=MetricValues(**values),
        elements=int(processed.size),
    )


def run_method(pairs: list[DatasetPair], config: RunConfig) -> MetricReport:
    """Apply the configured method across all pairs and aggregate metrics.

    With ``normalize_reference`` on, normalizing methods are applied to the
    reference as well, so the comparison is made in the shared normalized
    space; the identity method always compares against the raw reference.
    Per-pair failures are logged and counted, never fatal. Records come
    back sorted by pair id, so results are independent of worker count.
    """
    if not pairs:
        raise EmptyDatasetError("no pairs to evaluate")
    ssim_config = SsimConfig()

    def worker(pair: DatasetPair):
        try:
            return _evaluate_pair(pair, config, ssim_config)
        except Exception as exc:  # noqa: BLE001 - per-pair isolation
            log.warning("pair %s failed: %s", pair.pair_id, exc)
            return {"id": pair.pair_id, "reason": str(exc)}

    jobs = max(1, int(config.jobs))
    if jobs == 1:
        outcomes = [worker(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(worker, pairs))

    records = sorted(
        (o for o in outcomes if isinstance(o, PairRecord)), key=lambda r: r.pair_id
    )
    skipped = sorted(
        (o for o in outcomes if not isinstance(o, PairRecord)), key=lambda s: s["id"]
    )

    aggregates: dict[str, float] = {}
    for name in config.metrics:
        per_pair = [getattr(r.values, name) for r in records]
        if not per_pair:
            continue
        if config.pooled_aggregates and name in ("residual", "rmse"):
            weights = np.array([r.elements for r in records], dtype=np.float64)
            vals = np.array(per_pair)
            if name == "residual":
                aggregates[name] = float((vals * weights).sum() / weights.sum())
            else:
                aggregates[name] = float(
                    np.sqrt((vals**2 * weights).sum() / weights.sum())
                )
        else:
            aggregates[name] = float(np.mean(per_pair))

    config_echo = {
        k: (str(v) if isinstance(v, Path) else list(v) if isinstance(v, tuple) else v)
        for k, v in asdict(config).items()
    }
    meta = {
        "dataset": config.dataset_name,
        "method": config.method,
        "tool": "illum-align",
        "version": __version__,
        "timestamp": config.timestamp,
        "config": config_echo,
        "pairs_total": len(pairs),
        "pairs_evaluated": len(records),
        "pairs_skipped": len(skipped),
    }
    return MetricReport(records=records, aggregates=aggregates, skipped=skipped, meta=meta)


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def emit_report(report: MetricReport, fmt: str, out: str | Path) -> None:
    """Write the report as JSON or CSV with stable ordering and 6-decimal
    floats; emitting the same report twice produces identical bytes."""
    out = Path(out)
    if fmt == "json":
        payload = {
            "meta": {**report.meta, "skipped": report.skipped},
            "pairs": [
                {
                    "id": r.pair_id,
                    "method": r.method,
                    "psnr": _round6(r.values.psnr),
                    "ssim": _round6(r.values.ssim),
                    "rmse": _round6(r.values.rmse),
                    "residual": _round6(r.values.residual),
                }
                for r in report.records
            ],
            "aggregates": {k: _round6(v) for k, v in report.aggregates.items()},
        }
        out.write_text(json.dumps(payload, indent=2) + "\n")
    elif fmt == "csv":
        lines = ["id,method,psnr,ssim,rmse,residual"]
        for r in report.records:
            lines.append(
                ",".join(
                    [
                        r.pair_id,
                        r.method,
                        _fmt(r.values.psnr),
                        _fmt(r.values.ssim),
                        _fmt(r.values.rmse),
                        _fmt(r.values.residual),
                    ]
                )
            )
        agg = report.aggregates
        lines.append(
            ",".join(
                [
                    "__mean__",
                    report.meta["method"],
                    _fmt(agg.get("psnr")),
                    _fmt(agg.get("ssim")),
                    _fmt(agg.get("rmse")),
                    _fmt(agg.get("residual")),
                ]
            )
        )
        out.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def _round6(value: float | None) -> float | None:
    return None if value is None else round(value, 6)
