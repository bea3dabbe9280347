"""``maskdet`` command line. Exit codes: 0 ok, 1 runtime failure, 2 usage error."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from .images import encode_ppm, read_image, write_ppm
from .metrics import Box, coco_evaluate
from .postprocess import PostprocessConfig
from .voc import (DEFAULT_LABEL_MAP, Annotation, AnnotationError, RecordError, VocObject,
                  dataset_stats, load_annotations, parse_label_map, parse_voc_xml,
                  read_records, split_dataset, write_records, write_voc_xml)
from .weights import (WeightFormatError, init_random, load_weights, save_weights,
                      validate_against_architecture)

log = logging.getLogger("maskdet")


class UsageError(Exception):
    pass


def _unit_interval(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {v}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load_label_map(path):
    if path is None:
        return DEFAULT_LABEL_MAP
    return parse_label_map(_existing(path, "label map").read_text())


def _postprocess_config(args) -> PostprocessConfig:
    return PostprocessConfig(args.score_threshold, args.nms_threshold, args.max_detections)


def _add_postprocess_args(p):
    p.add_argument("--score-threshold", type=_unit_interval, default=0.5)
    p.add_argument("--nms-threshold", type=_unit_interval, default=0.45)
    p.add_argument("--max-detections", type=_positive_int, default=100)


# --- detect / bench / evaluate ----------------------------------------------

def cmd_detect(args) -> int:
    from .render import render_annotations
    from .runner import Runner, detections_to_jsonl, frame_source

    _existing(args.weights, "weights")
    src = _existing(args.input, "input directory")
    if not src.is_dir():
        raise UsageError(f"input is not a directory: {src}")
    frames = frame_source(src)
    runner = Runner(args.weights, _postprocess_config(args))
    results = runner.run(frames) if frames else []
    Path(args.output).write_text(detections_to_jsonl(results))

    if args.annotate:
        out_dir = Path(args.annotate)
        out_dir.mkdir(parents=True, exist_ok=True)
        for r in results:
            if r.error is None:
                write_ppm(out_dir / f"{r.frame_id}.ppm",
                          render_annotations(read_image(r.path), r.detections))

    skipped = [r for r in results if r.error]
    for r in skipped:
        log.error("skipped %s: %s", r.path, r.error)
    n_det = sum(len(r.detections) for r in results)
    print(f"frames={len(results)} detections={n_det} skipped={len(skipped)}", file=sys.stderr)
    return 1 if skipped and args.strict else 0


def cmd_bench(args) -> int:
    from .runner import frame_source, run_bench

    _existing(args.weights, "weights")
    frames = frame_source(_existing(args.frames, "frames directory"))
    if not frames:
        raise UsageError(f"no frames in {args.frames}")
    report, _ = run_bench(args.weights, frames, args.warmup, args.repeat,
                          _postprocess_config(args), compare_serial=args.compare_serial)
    print(report.table())
    if args.output:
        _write_json(report.to_dict(), args.output)
    if args.plot:
        from .plotting import plot_latency
        plot_latency(report, args.plot)
    return 0


def read_detections_jsonl(path) -> list[Box]:
    dets = []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            dets.append(Box(str(rec["image"]), str(rec["class"]),
                            tuple(float(v) for v in rec["bbox"]), float(rec["score"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{n}: bad detection record: {exc}") from None
    return dets


def ground_truth_boxes(annotations) -> list[Box]:
    return [Box(ann.image_id, obj.name, tuple(float(v) for v in obj.bbox))
            for ann in annotations for obj in ann.objects]


def cmd_evaluate(args) -> int:
    dets = read_detections_jsonl(_existing(args.detections, "detections"))
    gt_dir = _existing(args.ground_truth, "ground-truth directory")
    label_map = _load_label_map(args.label_map)
    gts = ground_truth_boxes(ann for _, ann in load_annotations(gt_dir))
    report = coco_evaluate(dets, gts, label_map.names())
    _write_json(report.to_dict(), args.report)
    print(f"mAP@[.5:.95]={report.map_coco:.4f} AP50={report.ap50:.4f} "
          f"AR@100={report.ar_max100:.4f}", file=sys.stderr)
    if args.plot:
        from .plotting import plot_pr_curves
        plot_pr_curves(report, args.plot)
    return 0


# --- dataset -----------------------------------------------------------------

def _annotations(args):
    return load_annotations(_existing(args.annotations, "annotations directory"))


def cmd_dataset_split(args) -> int:
    if args.items:
        ids = [ln.strip() for ln in _existing(args.items, "items file").read_text().splitlines()
               if ln.strip()]
    elif args.annotations:
        ids = [p.stem for p in sorted(_existing(args.annotations, "annotations directory")
                                      .glob("*.xml"))]
    else:
        raise UsageError("dataset split needs --items or --annotations")
    split = split_dataset(ids, args.ratio, args.seed)
    _write_json({"seed": split.seed, "ratio": args.ratio,
                 "train": list(split.train), "test": list(split.test)}, args.output)
    print(f"train={len(split.train)} test={len(split.test)}", file=sys.stderr)
    return 0


def cmd_dataset_convert(args) -> int:
    items = []
    for path, ann in _annotations(args):
        root = Path(args.image_root) if args.image_root else path.parent
        image_path = root / ann.filename
        if not image_path.exists():
            raise FileNotFoundError(f"{path.name}: image {image_path} not found")
        items.append((ann, encode_ppm(read_image(image_path))))
    n = write_records(items, args.output)
    print(f"wrote {n} records to {args.output}", file=sys.stderr)
    return 0


def cmd_dataset_stats(args) -> int:
    label_map = _load_label_map(args.label_map)
    stats = dataset_stats([ann for _, ann in _annotations(args)], label_map.names())
    if args.plot:
        from .plotting import plot_box_areas
        plot_box_areas(stats, args.plot)
    stats.pop("areas")
    _write_json(stats, args.output)
    return 0


def cmd_dataset_validate(args) -> int:
    errors = []
    if args.records:
        try:
            items = read_records(_existing(args.records, "record file"))
            print(f"{len(items)} records OK", file=sys.stderr)
        except RecordError as exc:
            errors.append(str(exc))
    if args.annotations:
        label_map = _load_label_map(args.label_map)
        for path in sorted(_existing(args.annotations, "annotations directory").glob("*.xml")):
            try:
                ann = parse_voc_xml(path.read_bytes())
            except AnnotationError as exc:
                errors.append(f"{path.name}: {exc}")
                continue
            for obj in ann.objects:
                if obj.name not in label_map:
                    errors.append(f"{path.name}: unknown label {obj.name!r}")
    if not (args.records or args.annotations):
        raise UsageError("dataset validate needs --annotations and/or --records")
    for e in errors:
        print(e)
    return 1 if errors else 0


# --- augment -----------------------------------------------------------------

def _load_boxes(annotation_path):
    if not annotation_path:
        return None, np.zeros((0, 4)), []
    ann = parse_voc_xml(_existing(annotation_path, "annotation").read_bytes())
    boxes = np.array([o.bbox for o in ann.objects], dtype=np.float64).reshape(-1, 4)
    return ann, boxes, [o.name for o in ann.objects]


def _write_boxes_xml(path, ann: Annotation, image, boxes, labels):
    h, w = image.shape[:2]
    objects = []
    for label, b in zip(labels, boxes):
        x0, y0 = int(np.floor(b[0])), int(np.floor(b[1]))
        x1, y1 = min(int(np.ceil(b[2])), w), min(int(np.ceil(b[3])), h)
        if x0 < x1 and y0 < y1:
            objects.append(VocObject(label, (max(x0, 0), max(y0, 0), x1, y1)))
    out = Annotation(ann.filename, w, h, ann.depth, tuple(objects))
    Path(path).write_text(write_voc_xml(out))


def cmd_augment_geometric(args) -> int:
    image = read_image(_existing(args.image, "image"))
    ann, boxes, labels = _load_boxes(args.annotation)
    if args.op == "flip":
        out, new_boxes, keep = aug.flip_horizontal(image, boxes)
    elif args.op == "translate":
        out, new_boxes, keep = aug.translate(image, boxes, args.dx, args.dy, args.min_visible)
    else:
        out, new_boxes, keep = aug.rotate(image, boxes, args.angle, args.min_visible)
    write_ppm(args.output, out)
    if args.annotation_out:
        if ann is None:
            raise UsageError("--annotation-out requires --annotation")
        _write_boxes_xml(args.annotation_out, ann, out, new_boxes, [labels[i] for i in keep])
    return 0


def cmd_augment_mixup(args) -> int:
    samples = []
    for image_path, ann_path in ((args.image_a, args.annotation_a), (args.image_b, args.annotation_b)):
        image = read_image(_existing(image_path, "image"))
        _, boxes, labels = _load_boxes(ann_path)
        samples.append(aug.MixupSample(image, boxes=[aug.WeightedBox(lab, tuple(b))
                                                     for lab, b in zip(labels, boxes.tolist())]))
    a, b = samples
    if a.image.shape != b.image.shape:
        raise UsageError(f"images differ in size: {a.image.shape} vs {b.image.shape}")
    rng = np.random.Generator(np.random.PCG64(args.seed))
    lam = args.lam if args.lam is not None else aug.sample_lambda(rng, args.alpha)
    mixed = aug.mixup(a, b, lam)
    write_ppm(args.output, mixed.image)
    if args.boxes_out:
        _write_json({"lambda": lam, "boxes": [
            {"class": bx.label, "bbox": list(bx.bbox), "weight": bx.weight} for bx in mixed.boxes]},
            args.boxes_out)
    print(f"lambda={lam:.6f}", file=sys.stderr)
    return 0


# --- weights -----------------------------------------------------------------

def cmd_weights_init(args) -> int:
    save_weights(init_random(args.seed), args.output)
    return 0


def _load_store(path, fold=True):
    return load_weights(_existing(path, "weights"), fold=fold)


def cmd_weights_inspect(args) -> int:
    store = _load_store(args.weights, fold=False)
    width = max((len(e.name) for e in store.manifest), default=4)
    print(f"{'name':<{width}}  {'shape':<20}{'offset':>12}")
    for e in store.manifest:
        print(f"{e.name:<{width}}  {str(list(e.shape)):<20}{e.offset:>12}")
    print(f"{len(store.manifest)} tensors, {store.param_count()} parameters")
    return 0


def cmd_weights_validate(args) -> int:
    report = validate_against_architecture(_load_store(args.weights))
    for w in report.warnings:
        print(f"warning: {w}")
    for e in report.errors:
        print(f"error: {e}")
    print("OK" if report.ok else f"{len(report.errors)} error(s)", file=sys.stderr)
    return 0 if report.ok else 1


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskdet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run detection over a directory of frames")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--annotate", help="directory for annotated PPM frames")
    p.add_argument("--strict", action="store_true", help="exit 1 if any frame fails")
    _add_postprocess_args(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="COCO-style evaluation of a detections file")
    p.add_argument("--detections", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--label-map")
    p.add_argument("--report", default="-")
    p.add_argument("--plot", help="write a precision-recall figure here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="latency / throughput benchmark")
    p.add_argument("--weights", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--warmup", type=_non_negative_int, default=1)
    p.add_argument("--repeat", type=_positive_int, default=3)
    p.add_argument("--output", help="write the JSON report here")
    p.add_argument("--plot", help="write a latency histogram here")
    p.add_argument("--compare-serial", action="store_true",
                   help="also time a single-worker run and report the speedup")
    _add_postprocess_args(p)
    p.set_defaults(func=cmd_bench)

    ds = sub.add_parser("dataset", help="VOC dataset tooling").add_subparsers(
        dest="dataset_command", required=True)
    p = ds.add_parser("split")
    p.add_argument("--annotations")
    p.add_argument("--items", help="file with one item id per line")
    p.add_argument("--ratio", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_dataset_split)
    p = ds.add_parser("convert")
    p.add_argument("--annotations", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--image-root")
    p.set_defaults(func=cmd_dataset_convert)
    p = ds.add_parser("stats")
    p.add_argument("--annotations", required=True)
    p.add_argument("--label-map")
    p.add_argument("--output", default="-")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_dataset_stats)
    p = ds.add_parser("validate")
    p.add_argument("--annotations")
    p.add_argument("--label-map")
    p.add_argument("--records")
    p.set_defaults(func=cmd_dataset_validate)

    ag = sub.add_parser("augment", help="data augmentation").add_subparsers(
        dest="augment_command", required=True)
    p = ag.add_parser("mixup")
    p.add_argument("--image-a", required=True)
    p.add_argument("--image-b", required=True)
    p.add_argument("--annotation-a")
    p.add_argument("--annotation-b")
    p.add_argument("--alpha", type=float, default=aug.DEFAULT_ALPHA)
    p.add_argument("--lam", type=float, help="fixed mixing weight instead of sampling")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--boxes-out")
    p.set_defaults(func=cmd_augment_mixup)
    for op in ("flip", "translate", "rotate"):
        p = ag.add_parser(op)
        p.add_argument("--image", required=True)
        p.add_argument("--annotation")
        p.add_argument("--output", required=True)
        p.add_argument("--annotation-out")
        p.add_argument("--min-visible", type=float, default=aug.MIN_VISIBLE)
        if op == "translate":
            p.add_argument("--dx", type=int, default=0)
            p.add_argument("--dy", type=int, default=0)
        if op == "rotate":
            p.add_argument("--angle", type=float, required=True)
        p.set_defaults(func=cmd_augment_geometric, op=op)

    wt = sub.add_parser("weights", help="weight container tooling").add_subparsers(
        dest="weights_command", required=True)
    p = wt.add_parser("init-random")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_weights_init)
    p = wt.add_parser("inspect")
    p.add_argument("weights")
    p.set_defaults(func=cmd_weights_inspect)
    p = wt.add_parser("validate")
    p.add_argument("weights")
    p.set_defaults(func=cmd_weights_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "augment" and getattr(args, "alpha", 1.0) <= 0:
            raise UsageError("--alpha must be positive")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"maskdet: error: {exc}", file=sys.stderr)
        return 2
    except (AnnotationError, RecordError, WeightFormatError, ValueError, OSError,
            RuntimeError) as exc:
        print(f"maskdet: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
