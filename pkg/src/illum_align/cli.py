"""Command-line interface.

Subcommands: ``run`` (evaluate a method over a paired dataset), ``synth``
(generate the deterministic synthetic corpus), ``gsra-check`` (attention
kernel invariant/gradient suite), and ``depth2normal`` (depth map to
normal map). Exit codes: 0 success, 1 fatal error, 2 invalid arguments.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import IllumAlignError
from .geometry import (
    encode_normals,
    intrinsics_from_fov,
    load_depth,
    normals_from_points,
    unproject_depth,
)
from .gsra import run_self_check
from .harness import (
    METHOD_NAMES,
    METRIC_NAMES,
    RunConfig,
    emit_report,
    run_method,
    scan_dataset,
    synth_corpus,
)
from .imagecore import save_image


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="illum-align",
        description="Illumination normalization, baselines, metrics, and kernels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="evaluate a method over a paired dataset")
    run.add_argument("--dataset", required=True, help="dataset root directory")
    run.add_argument("--layout", choices=("paired-dirs", "suffix"), default="paired-dirs")
    run.add_argument("--input-dir", help="explicit input subdirectory (paired-dirs)")
    run.add_argument("--reference-dir", help="explicit reference subdirectory (paired-dirs)")
    run.add_argument("--method", choices=METHOD_NAMES, default="identity")
    run.add_argument(
        "--metrics",
        default="psnr,ssim,rmse,residual",
        help="comma-separated subset of psnr,ssim,rmse,residual",
    )
    run.add_argument("--report", required=True, help="report output path")
    run.add_argument("--format", choices=("json", "csv"), default="json")
    run.add_argument(
        "--no-normalize-reference",
        action="store_true",
        help="compare against the raw reference instead of the normalized one",
    )
    run.add_argument("--epsilon", type=float, default=1e-6)
    run.add_argument("--pan-local-gain", action="store_true")
    run.add_argument("--pan-radius", type=int, default=16)
    run.add_argument("--jobs", type=int, default=1,
                     help="worker threads (ILLUM_ALIGN_JOBS overrides)")
    run.add_argument("--pooled-aggregates", action="store_true",
                     help="pool residual/rmse over pixels instead of averaging pairs")
    run.add_argument("--save-outputs", help="directory for processed images")
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="generate a synthetic paired corpus")
    synth.add_argument("--count", type=int, default=8)
    synth.add_argument("--size", type=int, default=128)
    synth.add_argument("--seed", type=int, default=42)
    synth.add_argument("--out", required=True)
    synth.add_argument("--tint-only", action="store_true",
                       help="global tints only, no shadow field")
    synth.set_defaults(func=cmd_synth)

    check = sub.add_parser("gsra-check", help="attention kernel self-check suite")
    check.add_argument("--seed", type=int, default=7)
    check.add_argument("--tokens", type=int, default=4)
    check.add_argument("--dim", type=int, default=8)
    check.add_argument("--trials", type=int, default=20)
    check.set_defaults(func=cmd_gsra_check)

    d2n = sub.add_parser("depth2normal", help="convert a depth map to a normal map")
    d2n.add_argument("--fov", type=float, default=60.0, help="field of view in degrees")
    d2n.add_argument("--in", dest="input", required=True, help="16-bit grayscale PNG depth")
    d2n.add_argument("--out", required=True, help="8-bit RGB PNG normal map")
    d2n.set_defaults(func=cmd_depth2normal)
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    jobs = int(os.environ.get("ILLUM_ALIGN_JOBS", args.jobs))
    config = RunConfig(
        method=args.method,
        metrics=metrics,
        normalize_reference=not args.no_normalize_reference,
        epsilon=args.epsilon,
        pan_local_gain=args.pan_local_gain,
        pan_radius=args.pan_radius,
        output_dir=Path(args.save_outputs) if args.save_outputs else None,
        jobs=jobs,
        pooled_aggregates=args.pooled_aggregates,
        dataset_name=Path(args.dataset).name,
        timestamp=os.environ.get("ILLUM_ALIGN_TIMESTAMP", ""),
    )
    pairs = scan_dataset(
        args.dataset, args.layout, input_dir=args.input_dir, reference_dir=args.reference_dir
    )
    report = run_method(pairs, config)
    emit_report(report, args.format, args.report)
    print(
        f"{args.method}: {report.pairs_evaluated} pairs evaluated, "
        f"{report.pairs_skipped} skipped"
    )
    for name, value in report.aggregates.items():
        print(f"  {name:<8} {value:.6f}")
    print(f"report written to {args.report}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    pairs = synth_corpus(args.count, args.size, args.seed, args.out, args.tint_only)
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return 0


def cmd_gsra_check(args: argparse.Namespace) -> int:
    results = run_self_check(args.seed, args.tokens, args.dim, args.trials)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name:<{width}}  {r.detail}")
        failures += 0 if r.passed else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 0 if failures == 0 else 1


def cmd_depth2normal(args: argparse.Namespace) -> int:
    depth = load_depth(args.input)
    h, w = depth.shape
    intrinsics = intrinsics_from_fov(w, h, args.fov)
    points = unproject_depth(depth, intrinsics)
    normals = normals_from_points(points, valid=depth > 0)
    save_image(encode_normals(normals), args.out)
    print(f"wrote normal map to {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (IllumAlignError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
