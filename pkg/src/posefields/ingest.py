"""Annotation and prediction ingest.

Normalizes COCO keypoint JSON, CULane .lines.txt, and OpenLane per-frame
JSON into Instance/ImageRecord values, and reads/writes the package's
canonical record JSON (a sorted-key array with fixed 6-decimal floats, so
golden files are bit-stable).

Coordinate convention: pixel centers at integer coordinates, origin at the
top-left, x rightward, y downward.
"""

import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ParseError
from .lane_geometry import LanePolyline

ABSENT = 0
OCCLUDED = 1
VISIBLE = 2

# Slack in pixels when growing a bbox to cover its visible keypoints.
BBOX_SLACK = 2.0

RECORD_FORMAT_VERSION = "posefields-records-v1"


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    v: int = VISIBLE

    def __post_init__(self):
        if self.v not in (ABSENT, OCCLUDED, VISIBLE):
            raise ValueError(f"visibility must be 0/1/2, got {self.v}")
        if self.v != ABSENT and not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("keypoint coordinates must be finite")

    @property
    def labeled(self) -> bool:
        return self.v != ABSENT


@dataclass(frozen=True)
class Instance:
    """One annotated or predicted object."""

    category: str
    keypoints: tuple
    score: float = 1.0
    bbox: tuple = (0.0, 0.0, 0.0, 0.0)
    keypoint_scores: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        object.__setattr__(self, "bbox", tuple(float(c) for c in self.bbox))
        if self.keypoint_scores is not None:
            scores = tuple(float(s) for s in self.keypoint_scores)
            if len(scores) != len(self.keypoints):
                raise ValueError("keypoint_scores length must match keypoints")
            object.__setattr__(self, "keypoint_scores", scores)
        if len(self.bbox) != 4:
            raise ValueError("bbox must be (x, y, w, h)")
        if self.bbox[2] < 0 or self.bbox[3] < 0:
            raise ValueError("bbox width/height must be >= 0")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0,1], got {self.score}")

    def labeled_keypoints(self):
        return [(i, kp) for i, kp in enumerate(self.keypoints) if kp.labeled]

    def bbox_area(self) -> float:
        return self.bbox[2] * self.bbox[3]


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    instances: tuple = ()
    scenario_tag: str = None

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        for inst in self.instances:
            for kp in inst.keypoints:
                if not kp.labeled:
                    continue
                if not (-0.5 * self.width <= kp.x <= 1.5 * self.width
                        and -0.5 * self.height <= kp.y <= 1.5 * self.height):
                    raise ValueError(
                        f"keypoint ({kp.x}, {kp.y}) outside the allowed frame of "
                        f"image {self.image_id!r} ({self.width}x{self.height})")


def bbox_from_keypoints(keypoints) -> tuple:
    """Tight bbox over labeled keypoints; zeros when none are labeled."""
    xs = [kp.x for kp in keypoints if kp.labeled]
    ys = [kp.y for kp in keypoints if kp.labeled]
    if not xs:
        return (0.0, 0.0, 0.0, 0.0)
    return (min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys))


def expand_bbox_to_cover(bbox, keypoints, slack: float = BBOX_SLACK) -> tuple:
    """Grow bbox minimally so every labeled keypoint sits within it + slack."""
    xs = [kp.x for kp in keypoints if kp.labeled]
    ys = [kp.y for kp in keypoints if kp.labeled]
    if not xs:
        return bbox
    x0, y0, w, h = bbox
    x1, y1 = x0 + w, y0 + h
    if min(xs) >= x0 - slack and max(xs) <= x1 + slack \
            and min(ys) >= y0 - slack and max(ys) <= y1 + slack:
        return bbox
    x0 = min(x0, min(xs))
    y0 = min(y0, min(ys))
    x1 = max(x1, max(xs))
    y1 = max(y1, max(ys))
    return (x0, y0, x1 - x0, y1 - y0)


def _as_text(document) -> str:
    if hasattr(document, "read"):
        document = document.read()
    if isinstance(document, bytes):
        try:
            return document.decode("utf-8", errors="strict")
        except UnicodeDecodeError as exc:
            raise ParseError(f"document is not valid UTF-8: {exc}") from exc
    if isinstance(document, str):
        return document
    raise ParseError(f"unsupported document type {type(document).__name__}")


def _load_json(document):
    text = _as_text(document)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON at byte offset {exc.pos}: {exc.msg}",
                         offset=exc.pos) from exc


def parse_coco_keypoints(document, schema):
    """Parse COCO-style keypoint JSON into ImageRecords.

    Annotations whose keypoint count does not match the schema are skipped.
    Returns (records, skipped_count); records follow the images array order.
    """
    doc = _load_json(document)
    if not isinstance(doc, dict) or "images" not in doc or "annotations" not in doc:
        raise ParseError("expected a COCO document with images/annotations arrays")

    k = schema.keypoint_count
    skipped = 0
    try:
        images = {img["id"]: img for img in doc["images"]}
    except (TypeError, KeyError) as exc:
        raise ParseError(f"bad images array: {exc}") from exc

    instances_by_image = {img_id: [] for img_id in images}
    for idx, ann in enumerate(doc["annotations"]):
        try:
            image_id = ann["image_id"]
            flat = ann["keypoints"]
        except (TypeError, KeyError) as exc:
            raise ParseError(f"annotation {idx} missing field: {exc}") from exc
        if image_id not in instances_by_image:
            raise ParseError(f"annotation {idx} references unknown image {image_id!r}")
        if len(flat) != 3 * k or len(flat) % 3 != 0:
            skipped += 1
            continue
        try:
            keypoints = tuple(
                Keypoint(float(flat[3 * i]), float(flat[3 * i + 1]), int(flat[3 * i + 2]))
                for i in range(k)
            )
            bbox = tuple(float(c) for c in ann.get("bbox", (0, 0, 0, 0)))
            score = float(ann.get("score", 1.0))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"annotation {idx} is malformed: {exc}") from exc
        if not bbox[2] and not bbox[3]:
            bbox = bbox_from_keypoints(keypoints)
        bbox = expand_bbox_to_cover(bbox, keypoints)
        instances_by_image[image_id].append(
            Instance(schema.category, keypoints, score=score, bbox=bbox))

    records = []
    for img_id, img in images.items():
        try:
            width = int(img["width"])
            height = int(img["height"])
        except (TypeError, KeyError, ValueError) as exc:
            raise ParseError(f"image {img_id!r} missing width/height: {exc}") from exc
        try:
            records.append(ImageRecord(
                image_id=str(img_id),
                width=width,
                height=height,
                instances=tuple(instances_by_image[img_id]),
                scenario_tag=img.get("scenario_tag"),
            ))
        except ValueError as exc:
            raise ParseError(f"image {img_id!r}: {exc}") from exc
    return records, skipped


def parse_culane_lines(lines_file, image_size=None):
    """Parse a CULane .lines.txt document: one lane per line, x y pairs."""
    text = _as_text(lines_file)
    polylines = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) % 2 != 0:
            raise ParseError(f"odd coordinate count, line {lineno}", line=lineno)
        if len(tokens) < 4:
            raise ParseError(f"lane needs at least 2 points, line {lineno}", line=lineno)
        try:
            values = [float(t) for t in tokens]
        except ValueError as exc:
            raise ParseError(f"non-numeric token on line {lineno}: {exc}", line=lineno) from exc
        if any(not math.isfinite(v) for v in values):
            raise ParseError(f"non-finite coordinate on line {lineno}", line=lineno)
        points = [(values[i], values[i + 1]) for i in range(0, len(values), 2)]
        try:
            polylines.append(LanePolyline(points))
        except Exception as exc:
            raise ParseError(f"degenerate lane on line {lineno}: {exc}", line=lineno) from exc
    return polylines


def parse_openlane_2d(document):
    """Parse an OpenLane per-frame JSON document.

    Lanes without a uv array are skipped and counted.
    Returns (polylines, skipped_count).
    """
    doc = _load_json(document)
    if not isinstance(doc, dict):
        raise ParseError("expected an OpenLane frame object")
    lanes = doc.get("lane_lines", [])
    if not isinstance(lanes, list):
        raise ParseError("lane_lines must be an array")

    polylines = []
    skipped = 0
    for idx, lane in enumerate(lanes):
        if not isinstance(lane, dict) or "uv" not in lane:
            skipped += 1
            continue
        uv = lane["uv"]
        if not isinstance(uv, (list, tuple)) or len(uv) != 2:
            raise ParseError(f"lane {idx}: uv must be a [u, v] pair of arrays")
        us, vs = uv
        if len(us) != len(vs):
            raise ParseError(f"lane {idx}: u/v arrays have mismatched lengths "
                             f"({len(us)} vs {len(vs)})")
        if len(us) < 2:
            skipped += 1
            continue
        try:
            points = [(float(u), float(v)) for u, v in zip(us, vs)]
        except (TypeError, ValueError) as exc:
            raise ParseError(f"lane {idx}: non-numeric uv entry: {exc}") from exc
        tags = {}
        if "category" in lane:
            tags["category"] = str(lane["category"])
        if "track_id" in lane:
            tags["track_id"] = str(lane["track_id"])
        try:
            polylines.append(LanePolyline(points, tags=tags))
        except Exception as exc:
            raise ParseError(f"lane {idx} is degenerate: {exc}") from exc
    return polylines, skipped


# --- canonical record JSON -------------------------------------------------

def format_float(value: float) -> str:
    """Fixed 6-decimal formatting; normalizes -0.0 and rejects non-finite."""
    v = float(value)
    if not math.isfinite(v):
        raise ValueError(f"cannot serialize non-finite float {v}")
    out = f"{v:.6f}"
    return "0.000000" if out == "-0.000000" else out


def quantize(value: float) -> float:
    """The value a float becomes after one canonical write/parse cycle."""
    return float(format_float(value))


def _emit(obj, out: list):
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=True))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=True))
            out.append(":")
            _emit(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    else:
        raise ValueError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj) -> str:
    out = []
    _emit(obj, out)
    return "".join(out)


def instance_to_dict(inst: Instance) -> dict:
    doc = {
        "category": inst.category,
        "score": inst.score,
        "bbox": [float(c) for c in inst.bbox],
        "keypoints": [[kp.x, kp.y, kp.v] for kp in inst.keypoints],
    }
    if inst.keypoint_scores is not None:
        doc["keypoint_scores"] = list(inst.keypoint_scores)
    return doc


def record_to_dict(record: ImageRecord) -> dict:
    return {
        "image_id": record.image_id,
        "width": record.width,
        "height": record.height,
        "scenario_tag": record.scenario_tag,
        "instances": [instance_to_dict(i) for i in record.instances],
    }


def records_to_json(records) -> str:
    """Canonical JSON array of records, sorted by image_id."""
    docs = [record_to_dict(r) for r in sorted(records, key=lambda r: r.image_id)]
    return canonical_json(docs)


def write_predictions(records, sink) -> None:
    """Write records as canonical JSON (sorted keys, 6-decimal floats)."""
    payload = records_to_json(records) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(payload, encoding="utf-8")
        return
    if isinstance(sink, io.TextIOBase):
        sink.write(payload)
        return
    sink.write(payload.encode("utf-8"))


def _instance_from_dict(doc: dict, where: str) -> Instance:
    try:
        keypoints = tuple(Keypoint(float(x), float(y), int(v)) for x, y, v in doc["keypoints"])
        return Instance(
            category=doc["category"],
            keypoints=keypoints,
            score=float(doc.get("score", 1.0)),
            bbox=tuple(float(c) for c in doc["bbox"]),
            keypoint_scores=tuple(doc["keypoint_scores"]) if "keypoint_scores" in doc else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad instance: {exc}") from exc


def parse_records(document):
    """Parse the canonical record JSON array back into ImageRecords."""
    doc = _load_json(document)
    if not isinstance(doc, list):
        raise ParseError("canonical record document must be a JSON array")
    records = []
    for idx, rec in enumerate(doc):
        where = f"record {idx}"
        if not isinstance(rec, dict):
            raise ParseError(f"{where}: expected an object")
        try:
            records.append(ImageRecord(
                image_id=str(rec["image_id"]),
                width=int(rec["width"]),
                height=int(rec["height"]),
                instances=tuple(_instance_from_dict(d, where) for d in rec.get("instances", [])),
                scenario_tag=rec.get("scenario_tag"),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{where}: {exc}") from exc
    return records


def quantize_record(record: ImageRecord) -> ImageRecord:
    """Round all float fields the way one write/parse cycle would."""
    new_instances = []
    for inst in record.instances:
        new_instances.append(Instance(
            category=inst.category,
            keypoints=tuple(
                Keypoint(quantize(kp.x), quantize(kp.y), kp.v) for kp in inst.keypoints),
            score=quantize(inst.score),
            bbox=tuple(quantize(c) for c in inst.bbox),
            keypoint_scores=None if inst.keypoint_scores is None
            else tuple(quantize(s) for s in inst.keypoint_scores),
        ))
    return replace(record, instances=tuple(new_instances))
