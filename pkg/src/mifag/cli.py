"""Command line interface: synth / train / eval / predict / export-queries.

Exit codes: 0 success, 1 validation error, 2 runtime or numerical error.
"""

import argparse
import logging
import os
import sys

from . import harness
from .data import (FormatError, GenConfig, ValidationError, default_data_root,
                   load_manifest, make_synthetic_dataset)
from .metrics import format_report_table, write_report_csv, write_report_json


def _resolve_manifest(path):
    if path is None:
        path = os.path.join(default_data_root(), "manifest.json")
    return load_manifest(path)


def _cmd_synth(args):
    config = harness.load_config(args.config) if args.config else harness.TrainConfig()
    gen = GenConfig(num_samples=args.num_samples,
                    points_per_cloud=config.num_points,
                    images_per_sample=args.images_per_sample,
                    image_side=config.image_side,
                    num_object_classes=config.num_object_classes,
                    num_affordances=config.num_affordances)
    manifest = make_synthetic_dataset(gen, args.seed, args.out)
    print(f"wrote {len(manifest.entries)} samples to {args.out}")


def _cmd_train(args):
    config = harness.load_config(args.config)
    manifest = _resolve_manifest(args.data)
    _, log_rows, checkpoint = harness.train(config, manifest, args.out)
    final = log_rows[-1] if log_rows else None
    if final:
        print(f"finished at step {final[0]} with total loss {final[6]:.6f}")
    print(f"checkpoint: {checkpoint}")


def _cmd_eval(args):
    manifest = _resolve_manifest(args.data)
    report, config = harness.evaluate_checkpoint(args.checkpoint, manifest)
    write_report_json(args.report, report)
    csv_path = os.path.splitext(args.report)[0] + "_per_sample.csv"
    write_report_csv(csv_path, report)
    print(format_report_table(report, manifest.affordance_names))
    print(f"report: {args.report}")


def _cmd_predict(args):
    manifest = _resolve_manifest(args.data)
    ply_path, csv_path = harness.predict(args.checkpoint, manifest,
                                         args.sample, args.out)
    print(f"wrote {ply_path} and {csv_path}")


def _cmd_export_queries(args):
    manifest = _resolve_manifest(args.data)
    count = harness.export_queries(args.checkpoint, manifest, args.out)
    print(f"wrote {count} query rows to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mifag",
        description="Multi-image guided 3D affordance grounding toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-samples", type=int, default=8)
    p.add_argument("--images-per-sample", type=int, default=2)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train from a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None, help="manifest path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="export one sample's heatmap")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("export-queries", help="export query-token embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_queries)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ValidationError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (harness.NumericalError, RuntimeError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
