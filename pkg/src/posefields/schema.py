"""Skeleton schemas for the five road-scene categories.

A schema names the keypoints of a category, the directed edges linking
them into a connected skeleton graph, and the per-keypoint OKS falloff
constants used by keypoint AP. Schemas are immutable; share them freely.
"""

import hashlib
import json
from dataclasses import dataclass, field

from .errors import SchemaError

CATEGORIES = ("human", "animal", "car", "bicycle", "lane")

DEFAULT_LANE_KEYPOINTS = 24

# COCO person keypoints, standard order.
_COCO_KEYPOINTS = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

_COCO_EDGES = (
    (15, 13), (13, 11), (16, 14), (14, 12), (11, 12),
    (5, 11), (6, 12), (5, 6), (5, 7), (6, 8), (7, 9), (8, 10),
    (1, 2), (0, 1), (0, 2), (1, 3), (2, 4), (3, 5), (4, 6),
)

# COCO per-keypoint constants (twice the published sigmas, the form used
# directly inside the OKS exponent).
_COCO_KAPPAS = (
    0.052, 0.050, 0.050, 0.070, 0.070, 0.158, 0.158, 0.144, 0.144,
    0.124, 0.124, 0.214, 0.214, 0.174, 0.174, 0.178, 0.178,
)

_COCO_FLIP_PAIRS = ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16))

# AnimalPose 20-keypoint layout.
_ANIMAL_KEYPOINTS = (
    "left_eye",
    "right_eye",
    "left_earbase",
    "right_earbase",
    "nose",
    "throat",
    "tailbase",
    "withers",
    "left_front_elbow",
    "right_front_elbow",
    "left_back_elbow",
    "right_back_elbow",
    "left_front_knee",
    "right_front_knee",
    "left_back_knee",
    "right_back_knee",
    "left_front_paw",
    "right_front_paw",
    "left_back_paw",
    "right_back_paw",
)

_ANIMAL_EDGES = (
    (0, 4), (1, 4), (2, 0), (3, 1), (4, 5), (5, 7), (7, 6),
    (5, 8), (8, 12), (12, 16),
    (5, 9), (9, 13), (13, 17),
    (6, 10), (10, 14), (14, 18),
    (6, 11), (11, 15), (15, 19),
)

_ANIMAL_FLIP_PAIRS = ((0, 1), (2, 3), (8, 9), (10, 11), (12, 13), (14, 15), (16, 17), (18, 19))

# 66 car keypoints: 33 stations around the body, mirrored left/right.
# Cardinality follows the ApolloCar3D annotation layout; the station names
# here are descriptive (the dataset's own name list is not bundled), see
# the README note on schema naming.
_CAR_STATIONS = (
    "front_bumper_bottom",
    "front_bumper_top",
    "front_light_outer",
    "front_light_inner",
    "hood_front_corner",
    "hood_rear_corner",
    "windshield_bottom_corner",
    "windshield_top_corner",
    "roof_front_corner",
    "roof_rear_corner",
    "rear_window_top_corner",
    "rear_window_bottom_corner",
    "trunk_front_corner",
    "trunk_rear_corner",
    "rear_light_inner",
    "rear_light_outer",
    "rear_bumper_top",
    "rear_bumper_bottom",
    "front_wheel_front",
    "front_wheel_center",
    "front_wheel_rear",
    "rear_wheel_front",
    "rear_wheel_center",
    "rear_wheel_rear",
    "front_door_top_front",
    "front_door_top_rear",
    "front_door_bottom_front",
    "front_door_bottom_rear",
    "rear_door_top_rear",
    "rear_door_bottom_rear",
    "mirror",
    "front_fender",
    "rear_fender",
)

_BICYCLE_KEYPOINTS = (
    "rear_wheel_back",
    "rear_wheel_center",
    "front_wheel_front",
    "front_wheel_center",
    "seat",
    "handlebar_center",
)

# Chain: rear wheel -> frame -> handlebar -> front wheel.
_BICYCLE_EDGES = ((0, 1), (1, 4), (4, 5), (5, 3), (3, 2))

# Uniform falloff for categories without published per-keypoint constants.
DEFAULT_KAPPA = 0.1


@dataclass(frozen=True)
class SkeletonSchema:
    """One category's skeleton: named keypoints, edges, OKS constants."""

    category: str
    keypoint_names: tuple
    edges: tuple
    oks_kappas: tuple
    flip_pairs: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "keypoint_names", tuple(self.keypoint_names))
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))
        object.__setattr__(self, "oks_kappas", tuple(float(k) for k in self.oks_kappas))
        object.__setattr__(self, "flip_pairs", tuple((int(a), int(b)) for a, b in self.flip_pairs))

    @property
    def keypoint_count(self) -> int:
        return len(self.keypoint_names)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def index_of(self, name: str) -> int:
        return self.keypoint_names.index(name)

    def to_json_dict(self) -> dict:
        doc = {
            "category": self.category,
            "keypoints": list(self.keypoint_names),
            "edges": [[a, b] for a, b in self.edges],
            "kappas": list(self.oks_kappas),
        }
        if self.flip_pairs:
            doc["flip_pairs"] = [[a, b] for a, b in self.flip_pairs]
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        """Stable 16-hex-digit digest of the canonical schema document."""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SkeletonSchema":
        try:
            return cls(
                category=doc["category"],
                keypoint_names=tuple(doc["keypoints"]),
                edges=tuple((int(a), int(b)) for a, b in doc["edges"]),
                oks_kappas=tuple(float(k) for k in doc["kappas"]),
                flip_pairs=tuple((int(a), int(b)) for a, b in doc.get("flip_pairs", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad schema document: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "SkeletonSchema":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"bad schema JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError("schema document must be a JSON object")
        return cls.from_json_dict(doc)


def _car_schema() -> SkeletonSchema:
    names = tuple(f"{s}_left" for s in _CAR_STATIONS) + tuple(f"{s}_right" for s in _CAR_STATIONS)
    n = len(_CAR_STATIONS)
    edges = []
    for side in (0, n):
        edges.extend((side + i, side + i + 1) for i in range(n - 1))
    # Tie the two sides together at the bumpers and roof.
    edges.extend([(0, n), (17, n + 17), (8, n + 8)])
    return SkeletonSchema(
        category="car",
        keypoint_names=names,
        edges=tuple(edges),
        oks_kappas=(DEFAULT_KAPPA,) * (2 * n),
    )


def _lane_schema(cardinality: int) -> SkeletonSchema:
    names = tuple(f"point_{i:02d}" for i in range(cardinality))
    edges = tuple((i, i + 1) for i in range(cardinality - 1))
    return SkeletonSchema(
        category="lane",
        keypoint_names=names,
        edges=edges,
        oks_kappas=(DEFAULT_KAPPA,) * cardinality,
    )


def builtin_schema(category: str, lane_cardinality: int = DEFAULT_LANE_KEYPOINTS) -> SkeletonSchema:
    """Return the built-in schema for a category.

    ``lane_cardinality`` only applies to the lane category and must be >= 2.
    """
    if category == "human":
        return SkeletonSchema("human", _COCO_KEYPOINTS, _COCO_EDGES, _COCO_KAPPAS, _COCO_FLIP_PAIRS)
    if category == "animal":
        kappas = (DEFAULT_KAPPA,) * len(_ANIMAL_KEYPOINTS)
        return SkeletonSchema("animal", _ANIMAL_KEYPOINTS, _ANIMAL_EDGES, kappas, _ANIMAL_FLIP_PAIRS)
    if category == "car":
        return _car_schema()
    if category == "bicycle":
        kappas = (DEFAULT_KAPPA,) * len(_BICYCLE_KEYPOINTS)
        return SkeletonSchema("bicycle", _BICYCLE_KEYPOINTS, _BICYCLE_EDGES, kappas)
    if category == "lane":
        if lane_cardinality < 2:
            raise SchemaError(f"lane cardinality must be >= 2, got {lane_cardinality}")
        return _lane_schema(int(lane_cardinality))
    raise SchemaError(f"unknown category {category!r}, expected one of {CATEGORIES}")


def validate_schema(schema: SkeletonSchema) -> list:
    """Return a list of violated-invariant messages; empty means valid."""
    errors = []
    if schema.category not in CATEGORIES:
        errors.append(f"unknown category: {schema.category!r}")

    names = schema.keypoint_names
    k = len(names)
    if k < 1:
        errors.append("schema has no keypoints")
    if any(not isinstance(n, str) or not n for n in names):
        errors.append("keypoint names must be nonempty strings")
    if len(set(names)) != k:
        dupes = sorted({n for n in names if names.count(n) > 1})
        errors.append(f"duplicate name: {', '.join(dupes)}")

    if len(schema.oks_kappas) != k:
        errors.append(f"kappa count {len(schema.oks_kappas)} != keypoint count {k}")
    if any(kp <= 0 for kp in schema.oks_kappas):
        errors.append("kappas must be positive")

    bad_edge = False
    for a, b in schema.edges:
        if not (0 <= a < k and 0 <= b < k):
            errors.append(f"edge ({a},{b}) index out of range")
            bad_edge = True
        elif a == b:
            errors.append(f"edge ({a},{b}) is a self-loop")
            bad_edge = True

    if not bad_edge and k > 0:
        # Connectivity over the undirected edge graph.
        adjacency = {i: set() for i in range(k)}
        for a, b in schema.edges:
            adjacency[a].add(b)
            adjacency[b].add(a)
        seen = {0}
        stack = [0]
        while stack:
            node = stack.pop()
            for nxt in adjacency[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if len(seen) != k:
            errors.append("edge graph is not connected over all keypoints")

    for a, b in schema.flip_pairs:
        if not (0 <= a < k and 0 <= b < k) or a == b:
            errors.append(f"flip pair ({a},{b}) invalid")

    if schema.category == "lane":
        chain = tuple((i, i + 1) for i in range(k - 1))
        if schema.edges != chain:
            errors.append("lane must be a chain")
    if schema.category == "bicycle":
        if names != _BICYCLE_KEYPOINTS:
            errors.append("bicycle schema must have the 6 canonical keypoint names")

    return errors
