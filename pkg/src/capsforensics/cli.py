"""Command-line frontend.

Subcommands: train, eval, infer, saliency, inspect. Every run is
reproducible: the same config and seed produce byte-identical artifacts
(reports carry no timestamps). Errors leave a single machine-parsable
line on stderr and a meaningful exit code: 0 ok, 2 configuration
problem, 3 data problem, 4 numerical abort.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import data_root, load_config
from .errors import (AutodiffError, ConfigError, DataError, DimensionError,
                     NumericalError, ParameterError, WeightFormatError)
from .metrics import ScoreReport, write_scores
from .model import build_detector, default_class_names
from .pipeline import (build_split, image_to_float, load_image,
                       prepare_units, read_manifest, resize_image)
from .saliency import saliency_map, save_heatmap
from .training import (aggregate_by_group, evaluate, fit, load_checkpoint,
                       score_units)

log = logging.getLogger("capsforensics")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

IMAGE_EXTENSIONS = (".png", ".ppm")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="capsforensics",
        description="Capsule-network detector for manipulated images.")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a detector from a config")
    train.add_argument("--config", required=True)
    train.add_argument("--manifest", help="override data.manifest")
    train.add_argument("--seed", type=int)
    train.add_argument("--capsules", type=int, choices=(3, 10))
    train.add_argument("--classes", type=int)
    train.add_argument("--input-size", type=int)
    train.set_defaults(func=cmd_train)

    evl = sub.add_parser("eval", help="score a split against a checkpoint")
    evl.add_argument("--config", required=True)
    evl.add_argument("--checkpoint", required=True)
    evl.add_argument("--manifest", help="override data.manifest")
    evl.add_argument("--split", default="test", choices=("train", "val", "test"))
    evl.add_argument("--out", help="report directory (default: io.report_dir)")
    evl.set_defaults(func=cmd_eval)

    infer = sub.add_parser("infer", help="print per-file probabilities")
    infer.add_argument("--checkpoint", required=True)
    infer.add_argument("--input-size", type=int,
                       help="resize inputs to this square size")
    infer.add_argument("inputs", nargs="+", help="image files or directories")
    infer.set_defaults(func=cmd_infer)

    sal = sub.add_parser("saliency", help="write a guided-backprop heatmap")
    sal.add_argument("--checkpoint", required=True)
    sal.add_argument("--class", dest="target_class", type=int, default=1,
                     help="output capsule index to explain (default 1)")
    sal.add_argument("--out", required=True, help="output PNG path")
    sal.add_argument("--input-size", type=int)
    sal.add_argument("image")
    sal.set_defaults(func=cmd_saliency)

    insp = sub.add_parser("inspect",
                          help="print architecture and parameter counts")
    insp.add_argument("--checkpoint")
    insp.add_argument("--capsules", type=int, choices=(3, 10), default=3)
    insp.add_argument("--classes", type=int, default=2)
    insp.add_argument("--seed", type=int, default=0)
    insp.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except ParameterError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (DataError, WeightFormatError, DimensionError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except (FileNotFoundError, IsADirectoryError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except (NumericalError, AutodiffError) as exc:
        return _fail("numerical", exc, EXIT_NUMERIC)


def _fail(kind, exc, code):
    sys.stderr.write("capsforensics: %s: %s\n" % (kind, exc))
    return code


def _apply_overrides(cfg, args):
    if getattr(args, "manifest", None):
        cfg.data.manifest = args.manifest
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "capsules", None):
        cfg.model.capsules = args.capsules
    if getattr(args, "classes", None):
        cfg.model.classes = args.classes
        if cfg.model.class_names and len(cfg.model.class_names) != args.classes:
            cfg.model.class_names = None
    if getattr(args, "input_size", None):
        cfg.model.input_size = args.input_size
        cfg.data.resize_to = args.input_size
    return cfg.validate()


def _class_names(cfg):
    return cfg.model.class_names or default_class_names(cfg.model.classes)


def _load_units(cfg, split, frames, names):
    if not cfg.data.manifest:
        raise ConfigError("data.manifest is not set (config or --manifest)")
    entries = read_manifest(cfg.data.manifest, class_names=names)
    root = data_root(cfg)
    selected, skipped = build_split(entries, split, frames, root=root,
                                    check_files=True)
    if skipped:
        log.info("skipping %d missing file(s) in split %r", len(skipped), split)
        for e in skipped[:5]:
            log.info("  missing: %s", e.path)
    units = prepare_units(
        selected, names, root=root, crop=cfg.data.crop,
        crop_size=cfg.data.crop_size, patch_size=cfg.data.patch_size,
        resize_to=cfg.data.resize_to, use_bbox=cfg.data.use_bbox)
    return units


def cmd_train(args):
    cfg = _apply_overrides(load_config(args.config), args)
    names = _class_names(cfg)
    train_units = _load_units(cfg, "train", cfg.data.train_frames, names)
    if not train_units:
        raise DataError("train split is empty")
    val_units = _load_units(cfg, "val", cfg.data.eval_frames, names)

    detector = build_detector(
        num_capsules=cfg.model.capsules, num_classes=cfg.model.classes,
        seed=cfg.train.seed, routing=cfg.model.routing,
        prefix_init="pretrained" if cfg.io.weights else "random",
        prefix_path=cfg.io.weights, class_names=names)
    os.makedirs(cfg.io.checkpoint_dir, exist_ok=True)
    os.makedirs(cfg.io.report_dir, exist_ok=True)

    log.info("training %d-capsule %d-class model on %d units (val %d)",
             cfg.model.capsules, cfg.model.classes,
             len(train_units), len(val_units))
    history = fit(detector, train_units, val_units or None, cfg.train,
                  checkpoint_dir=cfg.io.checkpoint_dir,
                  log=lambda e: log.info(
                      "epoch %d: loss %.4f train %.4f%s", e["epoch"],
                      e["loss"], e["train_accuracy"],
                      " val %.4f" % e["val_accuracy"]
                      if "val_accuracy" in e else ""))
    log_path = os.path.join(cfg.io.report_dir, "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    log.info("wrote %s", log_path)
    return EXIT_OK


def cmd_eval(args):
    cfg = _apply_overrides(load_config(args.config), args)
    checkpoint = load_checkpoint(args.checkpoint)
    detector = checkpoint.build_detector()
    names = detector.class_names
    units = _load_units(cfg, args.split, cfg.data.eval_frames, names)
    if not units:
        raise DataError("split %r is empty" % (args.split,))

    samples = score_units(detector, units)
    num_classes = detector.capsnet.num_classes
    image_report = ScoreReport.from_samples(samples, num_classes)
    group_report = ScoreReport.from_samples(
        aggregate_by_group(samples), num_classes)

    out_dir = args.out or cfg.io.report_dir
    os.makedirs(out_dir, exist_ok=True)
    write_scores(os.path.join(out_dir, "scores.jsonl"), samples)
    for tag, report in (("image", image_report), ("group", group_report)):
        with open(os.path.join(out_dir, "report_%s.json" % tag), "w",
                  encoding="utf-8") as fh:
            fh.write(report.to_json())
        with open(os.path.join(out_dir, "report_%s.txt" % tag), "w",
                  encoding="utf-8") as fh:
            fh.write(report.to_text())
        if report.roc_points:
            with open(os.path.join(out_dir, "roc_%s.csv" % tag), "w",
                      encoding="utf-8") as fh:
                fh.write(report.roc_csv())
    sys.stdout.write("[image level]\n" + image_report.to_text())
    sys.stdout.write("[group level]\n" + group_report.to_text())
    return EXIT_OK


def _iter_image_paths(inputs):
    for item in inputs:
        if os.path.isdir(item):
            found = sorted(
                os.path.join(item, name) for name in os.listdir(item)
                if name.lower().endswith(IMAGE_EXTENSIONS))
            if not found:
                raise DataError("no .png/.ppm files in directory %s" % item)
            yield from found
        else:
            yield item


def cmd_infer(args):
    detector = load_checkpoint(args.checkpoint).build_detector()
    for path in _iter_image_paths(args.inputs):
        image = image_to_float(load_image(path))
        if args.input_size:
            image = resize_image(image, args.input_size)
        probs = detector.predict_probs(image[None])[0]
        record = {"path": path,
                  "predicted": detector.class_names[int(np.argmax(probs))],
                  "probs": [float(p) for p in probs]}
        sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_saliency(args):
    detector = load_checkpoint(args.checkpoint).build_detector()
    image = image_to_float(load_image(args.image))
    if args.input_size:
        image = resize_image(image, args.input_size)
    heat = saliency_map(detector, image, args.target_class)
    save_heatmap(args.out, heat)
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_inspect(args):
    if args.checkpoint:
        detector = load_checkpoint(args.checkpoint).build_detector()
    else:
        detector = build_detector(num_capsules=args.capsules,
                                  num_classes=args.classes, seed=args.seed)
    counts = detector.parameter_counts()
    routing = detector.routing
    lines = [
        "capsule-forensics detector",
        "  extractor: 8 conv layers (3x3, pad 1), pools after layers 2/4/8, "
        "256 output channels",
        "  primary capsules: %d (2D trunk 256->64->16, statistical pooling, "
        "1D trunk 2->8->1)" % counts["capsules"],
        "  output capsules: %d, dimension 4" % counts["classes"],
        "  routing: %d iteration(s), noise sigma %g, dropout %g"
        % (routing.iterations, routing.noise_sigma, routing.dropout_p),
        "  classes: %s" % ", ".join(detector.class_names),
        "parameters:",
        "  prefix: %d" % counts["prefix"],
        "  per-capsule: %d (trunk %d + routing %d)"
        % (counts["per_capsule"], counts["capsule_trunk"],
           counts["per_capsule"] - counts["capsule_trunk"]),
        "  total: %d" % counts["total"],
    ]
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
