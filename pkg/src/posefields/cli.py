"""posefields command line.

One binary, ten subcommands, stable exit codes: 0 ok, 1 usage, 2 bad
input, 3 internal. All randomized subcommands take --seed and are
byte-reproducible; --jobs N parallelizes per-image work without changing
output bytes (results reduce in canonical image_id order).
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .augmentation import (compose_mosaic, make_mosaic_plan, mean_instance_scale,
                           sample_mosaic_sources)
from .decoder import DecoderConfig, decode
from .errors import ParseError, PoseFieldsError
from .evaluation import (GREEDY, HUNGARIAN, LaneEvalConfig, evaluate_lanes,
                         keypoint_ap, scale_statistic)
from .fields_codec import (DEFAULT_LONG_EDGE, FieldConfig, encode_fields,
                           read_fields, rescale_to_long_edge, write_fields)
from .ingest import (ImageRecord, Instance, Keypoint, bbox_from_keypoints,
                     canonical_json, parse_coco_keypoints, parse_culane_lines,
                     parse_openlane_2d, parse_records, records_to_json)
from .lane_geometry import LanePolyline, orient_lane, resample
from .schema import CATEGORIES, DEFAULT_LANE_KEYPOINTS, builtin_schema
from .scheduling import TaskSpec, plan_epoch
from .seeding import derive_seed

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3

CATEGORY_COLORS = {
    "human": "#1f77b4",
    "animal": "#2ca02c",
    "car": "#9467bd",
    "bicycle": "#d62728",
    "lane": "#ff7f0e",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _parse_size(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise _UsageError(f"expected WxH, got {text!r}") from None


def _schema_from_args(args):
    return builtin_schema(args.category, getattr(args, "lane_keypoints", DEFAULT_LANE_KEYPOINTS))


def _read_record_file(path, category=None, lane_keypoints=DEFAULT_LANE_KEYPOINTS):
    """Canonical record array, or a COCO document when one is detected."""
    text = Path(path).read_text(encoding="utf-8")
    head = json.loads(text)
    if isinstance(head, dict) and "images" in head and "annotations" in head:
        if category is None:
            raise _UsageError(f"{path}: COCO input needs --category")
        records, skipped = parse_coco_keypoints(text, builtin_schema(category, lane_keypoints))
        if skipped:
            print(f"warning: {path}: skipped {skipped} annotations "
                  f"with mismatched keypoint counts", file=sys.stderr)
        return records
    return parse_records(text)


def _emit(args, payload: str, default_name=None):
    out = getattr(args, "out", None)
    if out:
        path = Path(out)
        if default_name is not None and path.is_dir():
            path = path / default_name
        path.write_text(payload + ("" if payload.endswith("\n") else "\n"), encoding="utf-8")
        if not args.quiet:
            print(f"wrote {path}", file=sys.stderr)
    else:
        print(payload)


def _table(rows, header=None) -> str:
    cells = ([header] if header else []) + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines)


# --- subcommands ---------------------------------------------------------------


def _cmd_schema(args):
    schema = _schema_from_args(args)
    if args.format == "table":
        rows = [(i, name, f"{kappa:g}") for i, (name, kappa)
                in enumerate(zip(schema.keypoint_names, schema.oks_kappas))]
        body = _table(rows, header=["index", "keypoint", "kappa"])
        edges = " ".join(f"({a},{b})" for a, b in schema.edges)
        _emit(args, f"category: {schema.category}\n{body}\nedges: {edges}")
    else:
        _emit(args, schema.to_json())
    return EXIT_OK


def _convert_one_file(path, args):
    raw = Path(path).read_bytes()
    if args.input_format == "culane":
        polylines = parse_culane_lines(raw)
    else:
        polylines, skipped = parse_openlane_2d(raw)
        if skipped and not args.quiet:
            print(f"warning: {path}: skipped {skipped} lanes without uv arrays",
                  file=sys.stderr)
    width, height = args.image_size
    image_id = args.image_id or Path(path).name.replace(".lines.txt", "").replace(".json", "")
    schema = builtin_schema("lane", args.keypoints)

    instances = []
    for lane_idx, poly in enumerate(polylines):
        points = poly.points
        if args.orient:
            points = orient_lane(points, height)
        lane_seed = derive_seed(args.seed, image_id, lane_idx)
        kps = resample(LanePolyline(points, tags=poly.tags), args.method,
                       args.keypoints, rng_seed=lane_seed)
        keypoints = tuple(Keypoint(x, y, 2) for x, y in kps.points)
        instances.append(Instance(
            category="lane",
            keypoints=keypoints,
            score=1.0,
            bbox=bbox_from_keypoints(keypoints),
        ))
    return ImageRecord(image_id=image_id, width=width, height=height,
                       instances=tuple(instances), scenario_tag=args.scenario_tag)


def _cmd_convert_lanes(args):
    records = [_convert_one_file(p, args) for p in args.input]
    _emit(args, records_to_json(records))
    return EXIT_OK


def _fields_name(image_id: str) -> str:
    return image_id.replace(os.sep, "_").replace("/", "_") + ".fields"


def _cmd_encode(args):
    schema = _schema_from_args(args)
    records = _read_record_file(args.annotations, args.category, args.lane_keypoints)
    cfg = FieldConfig(stride=args.stride, window=args.window, sigma_floor=args.sigma_floor)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    for record in sorted(records, key=lambda r: r.image_id):
        if args.long_edge:
            record = rescale_to_long_edge(record, args.long_edge)
        stack = encode_fields(record, schema, cfg)
        path = out_dir / _fields_name(record.image_id)
        write_fields(stack, schema.hash(), path)
        summary.append({
            "image_id": record.image_id,
            "file": path.name,
            "cif_shape": list(stack.cif.shape),
            "caf_shape": list(stack.caf.shape),
        })
    if not args.quiet:
        print(canonical_json(summary))
    return EXIT_OK


def _decode_one(path, schema, cfg):
    stack, header = read_fields(path)
    instances = decode(stack, schema, cfg)
    width, height = header["image_size"]
    image_id = Path(path).name
    if image_id.endswith(".fields"):
        image_id = image_id[:-len(".fields")]
    return ImageRecord(image_id=image_id, width=int(width), height=int(height),
                       instances=tuple(instances))


def _cmd_decode(args):
    schema = _schema_from_args(args)
    cfg = DecoderConfig(
        seed_threshold=args.seed_threshold,
        keypoint_threshold=args.keypoint_threshold,
        occupancy_radius_cells=args.occupancy_radius,
        max_instances=args.max_instances,
    )
    target = Path(args.fields)
    paths = sorted(target.glob("*.fields")) if target.is_dir() else [target]
    if not paths:
        raise ParseError(f"no .fields files under {target}")
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        records = list(pool.map(lambda p: _decode_one(p, schema, cfg), paths))
    _emit(args, records_to_json(records))
    return EXIT_OK


def _cmd_eval_lane(args):
    cfg = LaneEvalConfig(line_width=args.width, iou_threshold=args.iou)
    preds = _read_record_file(args.pred)
    gts = _read_record_file(args.gt)
    report = evaluate_lanes(preds, gts, cfg, matching=args.matching, jobs=args.jobs)
    doc = report.to_json_dict()
    if not args.by_scenario:
        doc.pop("per_scenario", None)
    if args.format == "table":
        rows = [["overall", report.tp, report.fp, report.fn,
                 f"{report.precision:.6f}", f"{report.recall:.6f}", f"{report.f1:.6f}"]]
        if args.by_scenario:
            for tag, rep in sorted(report.per_scenario.items()):
                rows.append([tag, rep.tp, rep.fp, rep.fn,
                             f"{rep.precision:.6f}", f"{rep.recall:.6f}", f"{rep.f1:.6f}"])
        _emit(args, _table(rows, header=["scope", "tp", "fp", "fn", "precision", "recall", "f1"]))
    else:
        _emit(args, canonical_json(doc))
    return EXIT_OK


def _cmd_eval_keypoints(args):
    schema = _schema_from_args(args)
    preds = _read_record_file(args.pred, args.category, args.lane_keypoints)
    gts = _read_record_file(args.gt, args.category, args.lane_keypoints)
    report = keypoint_ap(preds, gts, schema)
    if args.format == "table":
        rows = [[f"{t:.2f}", f"{ap:.6f}"]
                for t, ap in zip(report.thresholds, report.ap_per_threshold)]
        rows.append(["mean", f"{report.ap:.6f}"])
        _emit(args, _table(rows, header=["oks", "ap"]))
    else:
        _emit(args, canonical_json(report.to_json_dict()))
    return EXIT_OK


def _cmd_stats(args):
    records = _read_record_file(args.annotations, args.category, args.lane_keypoints)
    value = scale_statistic(records, args.category)
    count = sum(1 for r in records for i in r.instances
                if args.category is None or i.category == args.category)
    doc = {"scale_percent": value, "instances": count, "images": len(records)}
    if args.format == "table":
        _emit(args, _table([[k, v] for k, v in sorted(doc.items())], header=["stat", "value"]))
    else:
        _emit(args, canonical_json(doc))
    return EXIT_OK


def _cmd_mosaic(args):
    records = _read_record_file(args.annotations)
    by_id = {r.image_id: r for r in records}
    index = [(r.image_id, mean_instance_scale(r)) for r in sorted(records, key=lambda r: r.image_id)]
    canvas = _parse_size(args.canvas) if args.canvas else None

    out_records, plans = [], []
    for n in range(args.count):
        seed = derive_seed(args.seed, "mosaic", n)
        sources = sample_mosaic_sources(index, seed)
        plan = make_mosaic_plan([by_id[s] for s in sources], seed, canvas_size=canvas)
        plans.append(plan)
        out_records.append(compose_mosaic(plan, [by_id[s] for s in sources],
                                          image_id=f"mosaic-{n:06d}"))
    _emit(args, records_to_json(out_records))
    if args.emit_plans:
        Path(args.emit_plans).write_text(
            canonical_json([p.to_json_dict() for p in plans]) + "\n", encoding="utf-8")
        if not args.quiet:
            print(f"wrote {args.emit_plans}", file=sys.stderr)
    return EXIT_OK


def _cmd_plan_epochs(args):
    sizes = [int(s) for s in args.sizes.split(",")]
    weights = [float(w) for w in args.weights.split(",")]
    if len(sizes) != len(weights):
        raise _UsageError("--sizes and --weights must have the same length")
    names = args.names.split(",") if args.names else [f"task{i}" for i in range(len(sizes))]
    if len(names) != len(sizes):
        raise _UsageError("--names must match --sizes length")
    tasks = [TaskSpec(n, s, w) for n, s, w in zip(names, sizes, weights)]

    plans = []
    for epoch in range(args.epochs):
        plan = plan_epoch(tasks, args.batch, rng_seed=derive_seed(args.seed, "epoch", epoch))
        plans.append(plan.to_json_dict())
    if args.format == "table":
        rows = []
        for e, plan in enumerate(plans):
            used = {name: plan["num_batches"] * q for name, q in plan["quotas"].items()}
            for name in sorted(used):
                rows.append([e, name, plan["quotas"][name], plan["num_batches"], used[name]])
        _emit(args, _table(rows, header=["epoch", "task", "per_batch", "batches", "samples"]))
    else:
        _emit(args, canonical_json(plans))
    return EXIT_OK


def _svg_for_record(record: ImageRecord, schemas: dict) -> str:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{record.width}" '
        f'height="{record.height}" viewBox="0 0 {record.width} {record.height}">',
        f'<rect width="{record.width}" height="{record.height}" fill="white"/>',
    ]
    for inst in record.instances:
        color = CATEGORY_COLORS.get(inst.category, "#333333")
        schema = schemas.get(inst.category)
        if schema is not None and len(inst.keypoints) == schema.keypoint_count:
            for a, b in schema.edges:
                ka, kb = inst.keypoints[a], inst.keypoints[b]
                if ka.labeled and kb.labeled:
                    parts.append(
                        f'<line x1="{ka.x:.2f}" y1="{ka.y:.2f}" x2="{kb.x:.2f}" '
                        f'y2="{kb.y:.2f}" stroke="{color}" stroke-width="2"/>')
        for kp in inst.keypoints:
            if kp.labeled:
                fill = color if kp.v == 2 else "none"
                parts.append(f'<circle cx="{kp.x:.2f}" cy="{kp.y:.2f}" r="3" '
                             f'fill="{fill}" stroke="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _cmd_render(args):
    records = _read_record_file(args.annotations, args.category, args.lane_keypoints)
    schemas = {}
    for record in records:
        for inst in record.instances:
            if inst.category not in schemas:
                k = len(inst.keypoints)
                lane_m = k if inst.category == "lane" else DEFAULT_LANE_KEYPOINTS
                schemas[inst.category] = builtin_schema(inst.category, lane_m)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for record in sorted(records, key=lambda r: r.image_id):
        name = _fields_name(record.image_id).replace(".fields", ".svg")
        (out_dir / name).write_text(_svg_for_record(record, schemas), encoding="utf-8")
        names.append(name)
    if not args.quiet:
        print(canonical_json(names))
    return EXIT_OK


# --- parser --------------------------------------------------------------------


def _add_common(sub, *, category=False, lane_keypoints=False, out=False):
    if category:
        sub.add_argument("--category", "--schema", dest="category",
                         choices=CATEGORIES, required=True)
    if lane_keypoints:
        sub.add_argument("--lane-keypoints", type=int, default=DEFAULT_LANE_KEYPOINTS,
                         help="lane schema cardinality (default 24)")
    if out:
        sub.add_argument("--out", help="output path (stdout when omitted)")


def _add_global_flags(parser, suppress: bool):
    """--format/--seed/--jobs/--quiet are accepted both before and after
    the subcommand; subcommand occurrences win."""

    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--format", choices=("json", "table"), default=default("json"))
    parser.add_argument("--seed", type=int, default=default(0))
    parser.add_argument("--jobs", type=int,
                        default=default(int(os.environ.get("POSEFIELDS_JOBS", "1"))))
    parser.add_argument("--quiet", action="store_true",
                        default=default(False))


def build_parser() -> _Parser:
    parser = _Parser(prog="posefields", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    _add_global_flags(parser, suppress=False)
    shared = _Parser(add_help=False)
    _add_global_flags(shared, suppress=True)
    subs = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = subs.add_parser(parents=[shared], name="schema", help="print a built-in skeleton schema")
    _add_common(p, category=True, lane_keypoints=True, out=True)
    p.set_defaults(func=_cmd_schema)

    p = subs.add_parser(parents=[shared], name="convert-lanes", help="raw lane files to fixed keypoints")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--input-format", choices=("culane", "openlane"), default="culane")
    p.add_argument("--image-size", type=_parse_size, required=True, metavar="WxH")
    p.add_argument("--method", choices=("A", "B", "C"), default="C")
    p.add_argument("--keypoints", type=int, default=DEFAULT_LANE_KEYPOINTS)
    p.add_argument("--image-id", help="override the id derived from the file name")
    p.add_argument("--scenario-tag")
    p.add_argument("--no-orient", dest="orient", action="store_false",
                   help="keep the annotated point order")
    _add_common(p, out=True)
    p.set_defaults(func=_cmd_convert_lanes)

    p = subs.add_parser(parents=[shared], name="encode", help="records to composite field files")
    p.add_argument("--annotations", required=True)
    p.add_argument("--stride", type=int, default=16)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--sigma-floor", type=float, default=1.0)
    p.add_argument("--long-edge", type=int, default=0,
                   help=f"rescale to this long edge first (paper setting {DEFAULT_LONG_EDGE})")
    p.add_argument("--out", required=True, help="output directory for .fields files")
    _add_common(p, category=True, lane_keypoints=True)
    p.set_defaults(func=_cmd_encode)

    p = subs.add_parser(parents=[shared], name="decode", help="field files to instance predictions")
    p.add_argument("--fields", required=True, help=".fields file or directory")
    p.add_argument("--seed-threshold", type=float, default=0.3)
    p.add_argument("--keypoint-threshold", type=float, default=0.2)
    p.add_argument("--occupancy-radius", type=float, default=2.0)
    p.add_argument("--max-instances", type=int, default=128)
    _add_common(p, category=True, lane_keypoints=True, out=True)
    p.set_defaults(func=_cmd_decode)

    p = subs.add_parser(parents=[shared], name="eval-lane", help="lane F1 under the rasterized IoU protocol")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--width", type=float, default=30.0)
    p.add_argument("--iou", type=float, default=0.3)
    p.add_argument("--by-scenario", action="store_true")
    p.add_argument("--matching", choices=(GREEDY, HUNGARIAN), default=GREEDY)
    _add_common(p, out=True)
    p.set_defaults(func=_cmd_eval_lane)

    p = subs.add_parser(parents=[shared], name="eval-keypoints", help="OKS average precision")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    _add_common(p, category=True, lane_keypoints=True, out=True)
    p.set_defaults(func=_cmd_eval_keypoints)

    p = subs.add_parser(parents=[shared], name="stats", help="scale statistic over annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--category", choices=CATEGORIES)
    p.add_argument("--lane-keypoints", type=int, default=DEFAULT_LANE_KEYPOINTS)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_stats)

    p = subs.add_parser(parents=[shared], name="mosaic", help="compose annotation-space mosaics")
    p.add_argument("--annotations", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--canvas", help="output canvas WxH (default 2x the largest source)")
    p.add_argument("--emit-plans", help="also write the mosaic plans to this path")
    _add_common(p, out=True)
    p.set_defaults(func=_cmd_mosaic)

    p = subs.add_parser(parents=[shared], name="plan-epochs", help="multi-task epoch plans")
    p.add_argument("--sizes", required=True, help="comma-separated dataset sizes")
    p.add_argument("--weights", required=True, help="comma-separated batch weights")
    p.add_argument("--batch", type=int, required=True)
    p.add_argument("--names", help="comma-separated task names")
    p.add_argument("--epochs", type=int, default=1)
    _add_common(p, out=True)
    p.set_defaults(func=_cmd_plan_epochs)

    p = subs.add_parser(parents=[shared], name="render", help="SVG overlays of records")
    p.add_argument("--annotations", required=True)
    p.add_argument("--category", choices=CATEGORIES, help="needed for COCO input")
    p.add_argument("--lane-keypoints", type=int, default=DEFAULT_LANE_KEYPOINTS)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_render)

    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        if args.jobs < 1:
            raise _UsageError("--jobs must be >= 1")
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --help/--version
        return int(exc.code or 0)
    except (ParseError, FileNotFoundError, IsADirectoryError, PoseFieldsError,
            json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
