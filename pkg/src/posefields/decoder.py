"""Greedy bottom-up decoding of composite fields into skeleton instances.

Seeds come from plateau-aware local maxima of the intensity maps; an
instance grows best-first along skeleton edges, projecting each new
keypoint through the association maps and accepting it only where the
intensity map supports it and no earlier instance claimed the spot.
Every ordering (seeds, frontier, output) is total, so decoding is
deterministic down to the byte.
"""

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import FieldShapeError
from .fields_codec import FieldStack
from .ingest import Instance, Keypoint, bbox_from_keypoints


@dataclass(frozen=True)
class DecoderConfig:
    seed_threshold: float = 0.3
    keypoint_threshold: float = 0.2
    occupancy_radius_cells: float = 2.0
    max_instances: int = 128

    def __post_init__(self):
        if not (0.0 <= self.seed_threshold <= 1.0):
            raise ValueError("seed_threshold must be in [0,1]")
        if not (0.0 <= self.keypoint_threshold <= 1.0):
            raise ValueError("keypoint_threshold must be in [0,1]")
        if self.occupancy_radius_cells <= 0:
            raise ValueError("occupancy_radius_cells must be positive")
        if self.max_instances < 1:
            raise ValueError("max_instances must be >= 1")


@dataclass(frozen=True)
class SeedCandidate:
    confidence: float
    keypoint: int
    row: int
    col: int


class OccupancyMap:
    """Claimed keypoint locations, one bucket per keypoint type."""

    def __init__(self, keypoint_count: int):
        self._claims = [[] for _ in range(keypoint_count)]

    def is_occupied(self, k: int, x: float, y: float) -> bool:
        return any(math.hypot(x - cx, y - cy) <= r for cx, cy, r in self._claims[k])

    def claim(self, k: int, x: float, y: float, radius: float) -> None:
        self._claims[k].append((x, y, radius))


def seed_candidates(cif: np.ndarray, cfg: DecoderConfig) -> list:
    """Plateau-aware local maxima of each keypoint confidence map.

    A connected region of equal confidence with no strictly greater
    8-neighbor yields exactly one candidate at its smallest (row, col).
    Candidates are sorted by descending confidence, then (row, col,
    keypoint index).
    """
    eight = np.ones((3, 3), dtype=bool)
    out = []
    for k in range(cif.shape[0]):
        conf = cif[k, 0]
        neighborhood_max = ndimage.maximum_filter(conf, size=3, mode="constant", cval=-np.inf)
        tops = (conf >= cfg.seed_threshold) & (conf > 0) & (neighborhood_max == conf)
        if not tops.any():
            continue
        labels, count = ndimage.label(tops, structure=eight)
        flat = labels.ravel()
        first = np.full(count + 1, flat.size, dtype=np.int64)
        np.minimum.at(first, flat, np.arange(flat.size))
        wc = conf.shape[1]
        for label in range(1, count + 1):
            idx = int(first[label])
            row, col = divmod(idx, wc)
            out.append(SeedCandidate(float(conf[row, col]), k, row, col))
    out.sort(key=lambda c: (-c.confidence, c.row, c.col, c.keypoint))
    return out


class _DecodeContext:
    """Per-stack precomputation: adjacency and active association cells."""

    def __init__(self, fields: FieldStack, schema, cfg: DecoderConfig):
        self.fields = fields
        self.schema = schema
        self.cfg = cfg
        self.stride = fields.config.stride
        self.cif = np.asarray(fields.cif, dtype=np.float64)
        caf = np.asarray(fields.caf, dtype=np.float64)

        self.adjacency = [[] for _ in range(schema.keypoint_count)]
        for e, (a, b) in enumerate(schema.edges):
            self.adjacency[a].append((e, b, True))
            self.adjacency[b].append((e, a, False))

        # Active cells per edge map, in row-major order so distance ties
        # resolve to the smallest (row, col).
        self.edge_cells = []
        s = self.stride
        for e in range(caf.shape[0]):
            rows, cols = np.nonzero(caf[e, 0] >= cfg.keypoint_threshold)
            conf = caf[e, 0, rows, cols]
            q1 = np.stack([(cols + caf[e, 1, rows, cols]) * s,
                           (rows + caf[e, 2, rows, cols]) * s], axis=1)
            q2 = np.stack([(cols + caf[e, 3, rows, cols]) * s,
                           (rows + caf[e, 4, rows, cols]) * s], axis=1)
            self.edge_cells.append((conf, q1, q2))

        self.link_tolerance = cfg.occupancy_radius_cells * s

    def project(self, edge: int, forward: bool, x: float, y: float):
        """Best association cell whose source endpoint reconstructs nearest
        (x, y); returns (caf_confidence, target_xy) or None."""
        conf, q1, q2 = self.edge_cells[edge]
        if conf.size == 0:
            return None
        src, dst = (q1, q2) if forward else (q2, q1)
        d = np.hypot(src[:, 0] - x, src[:, 1] - y)
        best = int(np.argmin(d))
        if d[best] > self.link_tolerance:
            return None
        return float(conf[best]), (float(dst[best, 0]), float(dst[best, 1]))

    def refine(self, k: int, x: float, y: float):
        """Intensity support at the cell containing (x, y); returns
        (confidence, refined_xy, sigma_cells) or None when off-grid."""
        hc, wc = self.cif.shape[2:]
        j, i = math.floor(x / self.stride), math.floor(y / self.stride)
        if not (0 <= i < hc and 0 <= j < wc):
            return None
        support = float(self.cif[k, 0, i, j])
        rx = (j + float(self.cif[k, 1, i, j])) * self.stride
        ry = (i + float(self.cif[k, 2, i, j])) * self.stride
        return support, (rx, ry), float(self.cif[k, 4, i, j])


def _claim_radius(cfg: DecoderConfig, sigma_cells: float, stride: int) -> float:
    return max(cfg.occupancy_radius_cells, sigma_cells) * stride


def grow_instance(seed: SeedCandidate, fields: FieldStack, occupancy: OccupancyMap,
                  cfg: DecoderConfig, schema=None, _ctx: _DecodeContext = None) -> Instance:
    """Best-first expansion from an unoccupied seed over the schema edges."""
    ctx = _ctx if _ctx is not None else _DecodeContext(fields, schema, cfg)
    k_total = ctx.schema.keypoint_count
    positions = [None] * k_total
    confidences = [0.0] * k_total

    # The seed cell is on-grid by construction.
    _, _, sigma_cells = ctx.refine(
        seed.keypoint, (seed.col + 0.5) * ctx.stride, (seed.row + 0.5) * ctx.stride)
    sx = (seed.col + float(ctx.cif[seed.keypoint, 1, seed.row, seed.col])) * ctx.stride
    sy = (seed.row + float(ctx.cif[seed.keypoint, 2, seed.row, seed.col])) * ctx.stride
    positions[seed.keypoint] = (sx, sy)
    confidences[seed.keypoint] = seed.confidence
    occupancy.claim(seed.keypoint, sx, sy, _claim_radius(cfg, sigma_cells, ctx.stride))

    frontier = []
    seq = 0

    def push_edges(src_k: int):
        nonlocal seq
        x, y = positions[src_k]
        for edge, other_k, forward in ctx.adjacency[src_k]:
            if positions[other_k] is not None:
                continue
            link = ctx.project(edge, forward, x, y)
            if link is None:
                continue
            caf_conf, target = link
            priority = confidences[src_k] * caf_conf
            heapq.heappush(frontier, (-priority, seq, other_k, target))
            seq += 1

    push_edges(seed.keypoint)
    while frontier:
        _, _, dst_k, target = heapq.heappop(frontier)
        if positions[dst_k] is not None:
            continue
        refined = ctx.refine(dst_k, target[0], target[1])
        if refined is None:
            continue
        support, (rx, ry), sigma_cells = refined
        if support < cfg.keypoint_threshold:
            continue
        if occupancy.is_occupied(dst_k, rx, ry):
            continue
        positions[dst_k] = (rx, ry)
        confidences[dst_k] = support
        occupancy.claim(dst_k, rx, ry, _claim_radius(cfg, sigma_cells, ctx.stride))
        push_edges(dst_k)

    keypoints = tuple(
        Keypoint(p[0], p[1], 2) if p is not None else Keypoint(0.0, 0.0, 0)
        for p in positions)
    present = [c for p, c in zip(positions, confidences) if p is not None]
    return Instance(
        category=ctx.schema.category,
        keypoints=keypoints,
        score=float(np.mean(present)),
        bbox=bbox_from_keypoints(keypoints),
        keypoint_scores=tuple(confidences),
    )


def decode(fields: FieldStack, schema, cfg: DecoderConfig = DecoderConfig()) -> list:
    """Decode a field stack into instances sorted by descending score."""
    if fields.cif.shape[0] != schema.keypoint_count:
        raise FieldShapeError(
            f"cif has {fields.cif.shape[0]} keypoint maps, schema "
            f"{schema.category!r} wants {schema.keypoint_count}")
    if fields.caf.shape[0] != schema.edge_count:
        raise FieldShapeError(
            f"caf has {fields.caf.shape[0]} edge maps, schema "
            f"{schema.category!r} wants {schema.edge_count}")

    ctx = _DecodeContext(fields, schema, cfg)
    occupancy = OccupancyMap(schema.keypoint_count)
    instances = []
    for seed in seed_candidates(ctx.cif, cfg):
        if len(instances) >= cfg.max_instances:
            break
        sx = (seed.col + float(ctx.cif[seed.keypoint, 1, seed.row, seed.col])) * ctx.stride
        sy = (seed.row + float(ctx.cif[seed.keypoint, 2, seed.row, seed.col])) * ctx.stride
        if occupancy.is_occupied(seed.keypoint, sx, sy):
            continue
        instances.append(grow_instance(seed, fields, occupancy, cfg, _ctx=ctx))
    instances.sort(key=lambda inst: -inst.score)
    return instances
