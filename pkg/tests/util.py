"""Shared fixture builders for the test suite."""

import numpy as np

from posefields.ingest import ImageRecord, Instance, Keypoint, bbox_from_keypoints


def make_instance(category, points, score=1.0, visibilities=None):
    if visibilities is None:
        visibilities = [2] * len(points)
    kps = tuple(Keypoint(float(x), float(y), v)
                for (x, y), v in zip(points, visibilities))
    return Instance(category, kps, score=score, bbox=bbox_from_keypoints(kps))


def random_scene(schema, rng, canvas=(640, 640), max_instances=5,
                 separation=128.0, margin=40.0):
    """A synthetic record: instances on a jittered grid so keypoints of
    different instances stay at least ``separation`` pixels apart and all
    keypoints are visible and in bounds."""
    width, height = canvas
    pitch = separation + 2 * margin
    xs = [2 * margin + c * pitch for c in range(int(width // pitch) + 1)
          if 2 * margin + c * pitch + margin <= width - 1]
    ys = [2 * margin + r * pitch for r in range(int(height // pitch) + 1)
          if 2 * margin + r * pitch + margin <= height - 1]
    slots = [(x, y) for y in ys for x in xs]
    n = int(rng.integers(1, min(max_instances, len(slots)) + 1))
    chosen = rng.choice(len(slots), size=n, replace=False)

    instances = []
    for slot_idx in sorted(int(i) for i in chosen):
        cx, cy = slots[slot_idx]
        points = [
            (cx + float(rng.uniform(-margin, margin)),
             cy + float(rng.uniform(-margin, margin)))
            for _ in range(schema.keypoint_count)
        ]
        instances.append(make_instance(schema.category, points))
    return ImageRecord(
        image_id=f"scene-{schema.category}",
        width=width, height=height, instances=tuple(instances))


def zigzag_polyline(rng, n_points=None, span=400.0):
    """A y-monotone random polyline, lane-like."""
    if n_points is None:
        n_points = int(rng.integers(3, 40))
    ys = np.sort(rng.uniform(0, span, size=n_points))[::-1]
    xs = np.cumsum(rng.uniform(-20, 20, size=n_points)) + 100.0
    return [(float(x), float(y)) for x, y in zip(xs, ys)]
