"""Annotation-space geometric augmentation.

Everything here transforms keypoints and boxes only; no pixels are
touched. Mosaic composition draws four source images (biased toward
larger-scale content), scale-fits each into a quadrant around a jittered
center, and keeps the transforms so pixel-space tooling can replay them.
The flip/rescale/crop pipeline records its parameters for exact replay.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import GeometryError
from .ingest import ImageRecord, Instance, Keypoint, bbox_from_keypoints
from .seeding import rng_for

SCALE_BIAS_EPSILON = 0.01
DEFAULT_RESCALE_RANGE = (0.5, 2.0)

# Minimum labeled keypoints an instance must keep to survive composition.
MIN_SURVIVING_KEYPOINTS = 2


def mean_instance_scale(record: ImageRecord) -> float:
    """Mean bbox-area / image-area over the record's instances (0 if none)."""
    if not record.instances:
        return 0.0
    area = record.width * record.height
    return sum(inst.bbox_area() / area for inst in record.instances) / len(record.instances)


def sample_mosaic_sources(dataset_index, rng_seed: int, count: int = 4) -> list:
    """Draw ``count`` image ids with probability proportional to
    (epsilon + mean instance scale). Draws are independent, so ids repeat
    whenever the index has fewer images than draws (and may repeat anyway).
    """
    index = list(dataset_index)
    if not index:
        raise GeometryError("cannot sample mosaic sources from an empty index")
    weights = np.asarray([SCALE_BIAS_EPSILON + float(s) for _, s in index], dtype=np.float64)
    if (weights <= 0).any():
        raise GeometryError("mosaic sampling weights must be positive")
    rng = rng_for(rng_seed, "mosaic-sources")
    picks = rng.choice(len(index), size=count, replace=True, p=weights / weights.sum())
    return [index[int(i)][0] for i in picks]


@dataclass(frozen=True)
class QuadrantTransform:
    """x' = scale * x + tx, y' = scale * y + ty."""

    scale: float
    tx: float
    ty: float
    # Closed quadrant box (x0, y0, x1, y1) on the output canvas.
    box: tuple

    def apply(self, x: float, y: float) -> tuple:
        return (self.scale * x + self.tx, self.scale * y + self.ty)


@dataclass(frozen=True)
class MosaicPlan:
    sources: tuple  # four image ids
    center: tuple  # (cx, cy) inside the central half of the canvas
    canvas_size: tuple  # (W, H)
    transforms: tuple  # four QuadrantTransforms, TL/TR/BL/BR

    def to_json_dict(self) -> dict:
        return {
            "sources": list(self.sources),
            "center": list(self.center),
            "canvas_size": list(self.canvas_size),
            "transforms": [
                {"scale": t.scale, "tx": t.tx, "ty": t.ty, "box": list(t.box)}
                for t in self.transforms
            ],
        }


def make_mosaic_plan(records, rng_seed: int, canvas_size=None) -> MosaicPlan:
    """Plan a 2x2 mosaic of four records: jitter the center inside the
    central half of the canvas, then scale-fit each source into its
    quadrant anchored at the shared center."""
    if len(records) != 4:
        raise GeometryError(f"mosaic needs exactly 4 records, got {len(records)}")
    if canvas_size is None:
        canvas_size = (2 * max(r.width for r in records),
                       2 * max(r.height for r in records))
    cw, ch = int(canvas_size[0]), int(canvas_size[1])
    rng = rng_for(rng_seed, "mosaic-center")
    cx = float(cw * rng.uniform(0.25, 0.75))
    cy = float(ch * rng.uniform(0.25, 0.75))

    boxes = (
        (0.0, 0.0, cx, cy),
        (cx, 0.0, float(cw), cy),
        (0.0, cy, cx, float(ch)),
        (cx, cy, float(cw), float(ch)),
    )
    transforms = []
    for rec, (x0, y0, x1, y1) in zip(records, boxes):
        scale = min((x1 - x0) / rec.width, (y1 - y0) / rec.height)
        tx = x0 if x0 > 0 else cx - scale * rec.width
        ty = y0 if y0 > 0 else cy - scale * rec.height
        transforms.append(QuadrantTransform(scale, tx, ty, (x0, y0, x1, y1)))
    return MosaicPlan(
        sources=tuple(r.image_id for r in records),
        center=(cx, cy),
        canvas_size=(cw, ch),
        transforms=tuple(transforms),
    )


def compose_mosaic(plan: MosaicPlan, records, image_id: str = None) -> ImageRecord:
    """Transform four records into one mosaic record.

    Keypoints landing outside their quadrant (or the pixel grid) go
    absent; instances keeping fewer than two labeled keypoints are
    dropped; boxes are recomputed from the survivors.
    """
    if tuple(r.image_id for r in records) != plan.sources:
        raise GeometryError(
            f"records {[r.image_id for r in records]} do not match plan sources "
            f"{list(plan.sources)}")
    cw, ch = plan.canvas_size
    instances = []
    for rec, tf in zip(records, plan.transforms):
        x0, y0, x1, y1 = tf.box
        for inst in rec.instances:
            new_kps = []
            for kp in inst.keypoints:
                if not kp.labeled:
                    new_kps.append(Keypoint(0.0, 0.0, 0))
                    continue
                nx, ny = tf.apply(kp.x, kp.y)
                inside = (x0 <= nx <= x1 and y0 <= ny <= y1
                          and 0.0 <= nx <= cw - 1 and 0.0 <= ny <= ch - 1)
                if inside:
                    new_kps.append(Keypoint(nx, ny, kp.v))
                else:
                    new_kps.append(Keypoint(0.0, 0.0, 0))
            if sum(1 for kp in new_kps if kp.labeled) < MIN_SURVIVING_KEYPOINTS:
                continue
            instances.append(Instance(
                category=inst.category,
                keypoints=tuple(new_kps),
                score=inst.score,
                bbox=bbox_from_keypoints(new_kps),
            ))
    if image_id is None:
        image_id = "mosaic(" + ",".join(plan.sources) + ")"
    return ImageRecord(image_id=image_id, width=cw, height=ch,
                       instances=tuple(instances), scenario_tag=None)


# --- flip / rescale / crop ----------------------------------------------------


@dataclass(frozen=True)
class GeometricTransform:
    """Replayable record of one flip/rescale/crop draw."""

    src_size: tuple
    flip: bool
    flip_pairs: tuple
    scale: float
    crop_origin: tuple
    crop_size: tuple

    def apply_point(self, x: float, y: float) -> tuple:
        """Exactly the arithmetic the record pipeline performs."""
        if self.flip:
            x = (self.src_size[0] - 1) - x
        x = x * self.scale
        y = y * self.scale
        return (x - self.crop_origin[0], y - self.crop_origin[1])

    def source_slot(self, k: int) -> int:
        """Which source keypoint slot lands in output slot k."""
        if self.flip:
            for a, b in self.flip_pairs:
                if k == a:
                    return b
                if k == b:
                    return a
        return k

    def in_crop(self, x: float, y: float) -> bool:
        cw, chh = self.crop_size
        return 0.0 <= x <= cw - 1 and 0.0 <= y <= chh - 1


def flip_horizontal(record: ImageRecord, schema) -> ImageRecord:
    """Mirror a record about its vertical axis, swapping symmetric slots."""
    w = record.width
    instances = []
    for inst in record.instances:
        kps = list(inst.keypoints)
        scores = list(inst.keypoint_scores) if inst.keypoint_scores is not None else None
        for a, b in schema.flip_pairs:
            kps[a], kps[b] = kps[b], kps[a]
            if scores is not None:
                scores[a], scores[b] = scores[b], scores[a]
        kps = [Keypoint((w - 1) - kp.x, kp.y, kp.v) if kp.labeled else kp for kp in kps]
        bx, by, bw, bh = inst.bbox
        instances.append(Instance(
            category=inst.category,
            keypoints=tuple(kps),
            score=inst.score,
            bbox=((w - 1) - (bx + bw), by, bw, bh),
            keypoint_scores=tuple(scores) if scores is not None else None,
        ))
    return replace(record, instances=tuple(instances))


def scale_record(record: ImageRecord, factor: float) -> ImageRecord:
    if factor <= 0 or not math.isfinite(factor):
        raise GeometryError(f"scale factor must be positive, got {factor}")
    instances = []
    for inst in record.instances:
        instances.append(Instance(
            category=inst.category,
            keypoints=tuple(
                Keypoint(kp.x * factor, kp.y * factor, kp.v) if kp.labeled else kp
                for kp in inst.keypoints),
            score=inst.score,
            bbox=tuple(c * factor for c in inst.bbox),
            keypoint_scores=inst.keypoint_scores,
        ))
    return replace(record,
                   width=max(1, round(record.width * factor)),
                   height=max(1, round(record.height * factor)),
                   instances=tuple(instances))


def crop_record(record: ImageRecord, origin, size) -> ImageRecord:
    """Shift into a crop window; keypoints outside go absent, instances
    losing every labeled keypoint are dropped."""
    ox, oy = float(origin[0]), float(origin[1])
    cw, ch = int(size[0]), int(size[1])
    instances = []
    for inst in record.instances:
        new_kps = []
        for kp in inst.keypoints:
            if not kp.labeled:
                new_kps.append(Keypoint(0.0, 0.0, 0))
                continue
            nx, ny = kp.x - ox, kp.y - oy
            if 0.0 <= nx <= cw - 1 and 0.0 <= ny <= ch - 1:
                new_kps.append(Keypoint(nx, ny, kp.v))
            else:
                new_kps.append(Keypoint(0.0, 0.0, 0))
        if not any(kp.labeled for kp in new_kps):
            continue
        instances.append(Instance(
            category=inst.category,
            keypoints=tuple(new_kps),
            score=inst.score,
            bbox=bbox_from_keypoints(new_kps),
            keypoint_scores=inst.keypoint_scores,
        ))
    return replace(record, width=cw, height=ch, instances=tuple(instances))


def random_geometric(record: ImageRecord, schema, rng_seed: int,
                     rescale_range=DEFAULT_RESCALE_RANGE):
    """Seeded flip (p=0.5), rescale r ~ U[range], and crop back to at most
    the original size. Returns (record, transform); replaying the
    transform on the source keypoints reproduces the output bit-for-bit.
    """
    lo, hi = rescale_range
    if not (0 < lo <= hi):
        raise GeometryError(f"bad rescale range {rescale_range}")
    rng = rng_for(rng_seed, "geometric")
    flip = bool(rng.random() < 0.5)
    factor = float(rng.uniform(lo, hi))

    work = flip_horizontal(record, schema) if flip else record
    work = scale_record(work, factor)
    crop_w = min(work.width, record.width)
    crop_h = min(work.height, record.height)
    ox = int(rng.integers(0, work.width - crop_w + 1))
    oy = int(rng.integers(0, work.height - crop_h + 1))
    work = crop_record(work, (ox, oy), (crop_w, crop_h))

    transform = GeometricTransform(
        src_size=(record.width, record.height),
        flip=flip,
        flip_pairs=schema.flip_pairs,
        scale=factor,
        crop_origin=(float(ox), float(oy)),
        crop_size=(crop_w, crop_h),
    )
    return work, transform
