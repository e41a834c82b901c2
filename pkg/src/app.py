"""
Main application module for spinekit

This module contains the command-line surface of the toolkit. It parses
arguments, sets up logging and the run directory, and dispatches to the
phantom, fuse, segment, evaluate and report commands.
"""
import argparse
import json
import logging
import os
import sys

from pydantic import ValidationError

from src.config.app_config import AppConfig, resolve_seed, write_run_record
from src.models.spec_models import BlendMode, PhantomSpec, PipelineConfig, TilingSpec
from src.models.volume_models import VolumeKind
from src.services.annotation_service import AnnotationSources, fuse_annotations
from src.services.label_service import write_label_map
from src.services.metrics_service import evaluate_masks
from src.services.phantom_service import generate_phantom, write_phantom
from src.services.pipeline_service import build_instance_predictor, build_semantic_predictor, run_pipeline
from src.services.predictor_service import parse_predictor_uri
from src.services.report_service import collect_frame, compare, summary_table, write_rows_csv
from src.services.volume_service import read_nifti, write_nifti
from src.utils.error_handlers import ConfigError, PhantomSpecError, SpinekitError, load_json_model
from src.utils.logging_utils import setup_logging

# Set up logging
logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def parse_triple(text, cast=float):
    """Parse "a,b,c" into a 3-tuple."""
    try:
        values = tuple(cast(v) for v in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from e
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return values


def parse_pair(text):
    try:
        upper, lower = (int(v) for v in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected a vertebra pair like 2,3, got {text!r}") from e
    return upper, lower


def _write_json(data, path):
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=4)


def cmd_phantom(args, app_config):
    """Generate a phantom and write it with labels.json and run.json."""
    if args.spec:
        spec = load_json_model(args.spec, PhantomSpec)
        if args.seed is not None:
            spec = spec.model_copy(update={"seed": args.seed})
    else:
        values = {"n_vertebrae": args.vertebrae, "seed": resolve_seed(args.seed),
                  "include_sacrum": not args.no_sacrum, "fuse_pairs": args.fuse or []}
        if args.shape:
            values["shape"] = args.shape
        spec = PhantomSpec(**values)

    intensity, semantic, instance = generate_phantom(spec)
    write_phantom(intensity, semantic, instance, args.out_dir, spec=spec)
    write_run_record(args.out_dir, "phantom", json.loads(spec.model_dump_json()), seed=spec.seed)
    return EXIT_OK


def cmd_fuse(args, app_config):
    """Merge three annotation sources and synthesize endplates."""
    sources = AnnotationSources(
        base=read_nifti(args.base, kind=VolumeKind.SEMANTIC),
        substructures=read_nifti(args.substructures, kind=VolumeKind.SEMANTIC),
        cord=read_nifti(args.cord, kind=VolumeKind.SEMANTIC),
    )
    fused, summary = fuse_annotations(sources)

    write_nifti(fused, os.path.join(args.out_dir, "fused.nii.gz"))
    write_label_map(os.path.join(args.out_dir, "labels.json"))
    _write_json(summary.model_dump(), os.path.join(args.out_dir, "fusion_summary.json"))
    write_run_record(args.out_dir, "fuse", {"base": args.base, "substructures": args.substructures,
                                            "cord": args.cord})
    logger.info(f"Fusion summary: {summary.label_counts}")
    return EXIT_OK


def _pipeline_config(args, app_config):
    config = load_json_model(args.config, PipelineConfig) if args.config else PipelineConfig()
    tiling = config.tiling.model_dump()
    for key, value in (("patch_size", args.patch), ("overlap", args.overlap), ("blend", args.blend)):
        if value is not None:
            tiling[key] = value
    update = {"tiling": TilingSpec(**tiling), "workers": args.workers or app_config.workers}
    if args.no_postprocess:
        update["postprocess"] = False
    if args.native_grid:
        update["target_spacing"] = None
    return PipelineConfig(**{**config.model_dump(), **update})


def cmd_segment(args, app_config):
    """Run the two-phase pipeline on one scan."""
    config = _pipeline_config(args, app_config)
    exchange_dir = args.exchange_dir or app_config.exchange_dir
    timeout = args.timeout or app_config.predictor_timeout

    semantic_predictors = [
        build_semantic_predictor(parse_predictor_uri(uri, exchange_dir, timeout), config.target_spacing)
        for uri in args.semantic
    ]
    instance_predictor = build_instance_predictor(
        parse_predictor_uri(args.instance, exchange_dir, timeout), config.target_spacing
    )

    scan = read_nifti(args.input, kind=VolumeKind.INTENSITY)
    outputs = run_pipeline(scan, semantic_predictors, instance_predictor, config, return_raw=args.keep_raw)
    semantic, instance, report = outputs[:3]

    write_nifti(semantic, os.path.join(args.out_dir, "semantic.nii.gz"))
    write_nifti(instance, os.path.join(args.out_dir, "instance.nii.gz"))
    if args.keep_raw:
        write_nifti(outputs[3], os.path.join(args.out_dir, "instance_raw.nii.gz"))
    write_label_map(os.path.join(args.out_dir, "labels.json"))
    _write_json(json.loads(report.model_dump_json()), os.path.join(args.out_dir, "report.json"))
    write_run_record(args.out_dir, "segment", {
        "input": args.input,
        "semantic": args.semantic,
        "instance": args.instance,
        "pipeline": json.loads(config.model_dump_json()),
        "exchange_dir": exchange_dir,
        "timeout": timeout,
    })
    return EXIT_OK


def cmd_evaluate(args, app_config):
    """Score predicted masks against references."""
    if (args.pred_instance is None) != (args.ref_instance is None):
        raise ConfigError("--pred-instance and --ref-instance must be given together")

    pred = read_nifti(args.pred, kind=VolumeKind.SEMANTIC)
    ref = read_nifti(args.ref, kind=VolumeKind.SEMANTIC)
    pred_instance = read_nifti(args.pred_instance, kind=VolumeKind.INSTANCE) if args.pred_instance else None
    ref_instance = read_nifti(args.ref_instance, kind=VolumeKind.INSTANCE) if args.ref_instance else None

    report = evaluate_masks(pred, ref, pred_instance, ref_instance)

    _write_json(json.loads(report.model_dump_json()), args.json)
    if args.csv:
        write_rows_csv(report, args.csv)
    return EXIT_OK


def cmd_report(args, app_config):
    """Summarize evaluation JSONs and compare two sets."""
    if not args.inputs and not (args.baseline and args.candidate):
        raise ConfigError("give evaluation files, or both --baseline and --candidate")

    if args.inputs:
        table = summary_table(collect_frame(args.inputs))
        for row in table.itertuples():
            logger.info(f"{row.level:8s} {row.structure:13s} {row.metric:5s} {row.summary}")
        if args.csv:
            table.to_csv(args.csv, index=False)

    if args.baseline or args.candidate:
        if not (args.baseline and args.candidate):
            raise ConfigError("--baseline and --candidate must be given together")
        comparison = compare(args.baseline, args.candidate)
        for row in comparison.itertuples():
            marker = "*" if row.significant else ""
            logger.info(f"{row.level} {row.structure} {row.metric}: p={row.p_value:.4g}{marker}")
        if args.compare_csv:
            comparison.to_csv(args.compare_csv, index=False)
    return EXIT_OK


def build_parser():
    """Create the argument parser with all subcommands."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--workers", type=int, default=None, help="Parallelism limit")

    parser = argparse.ArgumentParser(prog="spinekit", description="Two-phase spine segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    phantom = sub.add_parser("phantom", parents=[common], help="Generate a synthetic spine phantom")
    phantom.add_argument("--spec", help="PhantomSpec JSON")
    phantom.add_argument("--vertebrae", type=int, default=7)
    phantom.add_argument("--seed", type=int, default=None)
    phantom.add_argument("--shape", type=lambda t: parse_triple(t, int), default=None)
    phantom.add_argument("--fuse", type=parse_pair, action="append", help="Fuse an adjacent pair, e.g. 2,3")
    phantom.add_argument("--no-sacrum", action="store_true")
    phantom.add_argument("--out-dir", required=True)
    phantom.set_defaults(handler=cmd_phantom)

    fuse = sub.add_parser("fuse", parents=[common], help="Fuse annotation sources into one semantic mask")
    fuse.add_argument("--base", required=True, help="Corpus/IVD/canal/sacrum mask")
    fuse.add_argument("--substructures", required=True, help="Translated vertebra substructure mask")
    fuse.add_argument("--cord", required=True, help="Binary spinal cord mask")
    fuse.add_argument("--out-dir", required=True)
    fuse.set_defaults(handler=cmd_fuse)

    segment = sub.add_parser("segment", parents=[common], help="Segment a scan")
    segment.add_argument("--input", required=True)
    segment.add_argument("--semantic", required=True, action="append", help="oracle:<gt>[,<noise>] or exec:<cmd>")
    segment.add_argument("--instance", required=True, help="oracle:<gt>[,<noise>] or exec:<cmd>")
    segment.add_argument("--out-dir", required=True)
    segment.add_argument("--config", help="PipelineConfig JSON")
    segment.add_argument("--patch", type=lambda t: parse_triple(t, int), default=None)
    segment.add_argument("--overlap", type=float, default=None)
    segment.add_argument("--blend", choices=[m.value for m in BlendMode], default=None)
    segment.add_argument("--no-postprocess", action="store_true")
    segment.add_argument("--keep-raw", action="store_true", help="Also write the instance mask before post-processing")
    segment.add_argument("--native-grid", action="store_true", help="Skip resampling to the working spacing")
    segment.add_argument("--exchange-dir", default=None)
    segment.add_argument("--timeout", type=float, default=None)
    segment.set_defaults(handler=cmd_segment)

    evaluate = sub.add_parser("evaluate", parents=[common], help="Evaluate masks against references")
    evaluate.add_argument("--pred", required=True)
    evaluate.add_argument("--ref", required=True)
    evaluate.add_argument("--pred-instance")
    evaluate.add_argument("--ref-instance")
    evaluate.add_argument("--json", required=True)
    evaluate.add_argument("--csv")
    evaluate.set_defaults(handler=cmd_evaluate)

    report = sub.add_parser("report", parents=[common], help="Tabulate and compare evaluations")
    report.add_argument("inputs", nargs="*", help="Evaluation JSONs to summarize")
    report.add_argument("--csv", help="Write the mean ± std table")
    report.add_argument("--baseline", nargs="+")
    report.add_argument("--candidate", nargs="+")
    report.add_argument("--compare-csv", help="Write the Wilcoxon comparison table")
    report.add_argument("--out-dir", default=None)
    report.set_defaults(handler=cmd_report)

    return parser


def _log_dir(args):
    out_dir = getattr(args, "out_dir", None)
    if not out_dir and getattr(args, "json", None):
        out_dir = os.path.dirname(os.path.abspath(args.json))
    return os.path.join(out_dir or ".", "logs")


def main(argv=None):
    """
    Entry point of the spinekit command.

    Returns:
        int: 0 on success, 1 on pipeline or data failure, 2 on usage errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        app_config = AppConfig.from_env()
    except ConfigError as e:
        print(f"spinekit: {e}", file=sys.stderr)
        return EXIT_USAGE

    setup_logging(args.log_level or app_config.log_level, _log_dir(args))
    if args.workers is not None and args.workers < 1:
        print("spinekit: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE

    try:
        return args.handler(args, app_config)
    except (ConfigError, PhantomSpecError, ValidationError) as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"spinekit: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SpinekitError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"spinekit: {e}", file=sys.stderr)
        return EXIT_FAILURE
