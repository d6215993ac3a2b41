"""Lane polyline geometry: arc-length tables and the three downsampling
strategies that turn a raw lane annotation into a fixed number of ordered
keypoints.

Method A draws arc positions uniformly at random; method B walks fixed
20-pixel vertical intervals and pads/prunes to the target count; method C
keeps both endpoints and spaces the rest evenly in arc length. All
interpolation is linear between annotated points.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .seeding import rng_for

METHOD_A = "A_random"
METHOD_B = "B_fixed_vertical"
METHOD_C = "C_even_fixed_endpoints"

METHOD_ALIASES = {
    "A": METHOD_A, METHOD_A: METHOD_A,
    "B": METHOD_B, METHOD_B: METHOD_B,
    "C": METHOD_C, METHOD_C: METHOD_C,
}

DEFAULT_VERTICAL_INTERVAL = 20.0


@dataclass(frozen=True)
class LanePolyline:
    """Ordered raw lane points. Consecutive duplicates are collapsed on
    construction; a polyline with zero total length is rejected."""

    points: tuple
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        deduped = []
        for p in self.points:
            q = (float(p[0]), float(p[1]))
            if not (math.isfinite(q[0]) and math.isfinite(q[1])):
                raise GeometryError(f"non-finite lane point {q}")
            if not deduped or q != deduped[-1]:
                deduped.append(q)
        if len(deduped) < 2:
            raise GeometryError("lane polyline needs >= 2 distinct points")
        object.__setattr__(self, "points", tuple(deduped))
        object.__setattr__(self, "tags", dict(self.tags))

    def __len__(self):
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)


@dataclass(frozen=True)
class LaneKeypoints:
    """A lane as exactly m ordered points plus the method that produced it."""

    points: tuple
    method: str

    def __post_init__(self):
        object.__setattr__(
            self, "points", tuple((float(x), float(y)) for x, y in self.points))
        if self.method not in (METHOD_A, METHOD_B, METHOD_C):
            raise GeometryError(f"unknown method {self.method!r}")

    def __len__(self):
        return len(self.points)


def arc_length_table(poly: LanePolyline) -> np.ndarray:
    """Cumulative arc lengths: table[0] = 0, table[-1] = total length."""
    pts = poly.as_array()
    seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    return np.concatenate([[0.0], np.cumsum(seg)])


def _point_at(pts: np.ndarray, table: np.ndarray, s: float) -> tuple:
    """Linear interpolation of the point at arc position s."""
    idx = int(np.searchsorted(table, s, side="right")) - 1
    idx = min(max(idx, 0), len(pts) - 2)
    seg_len = table[idx + 1] - table[idx]
    alpha = 0.0 if seg_len == 0 else (s - table[idx]) / seg_len
    x = pts[idx, 0] + alpha * (pts[idx + 1, 0] - pts[idx, 0])
    y = pts[idx, 1] + alpha * (pts[idx + 1, 1] - pts[idx, 1])
    return (float(x), float(y))


def _require_target(m: int):
    if m < 2:
        raise GeometryError(f"target keypoint count must be >= 2, got {m}")


def resample_even(poly: LanePolyline, m: int) -> LaneKeypoints:
    """Method C: keep both endpoints, space the rest evenly in arc length."""
    _require_target(m)
    pts = poly.as_array()
    table = arc_length_table(poly)
    total = float(table[-1])
    if total <= 0:
        raise GeometryError("degenerate polyline: zero arc length")
    out = [_point_at(pts, table, total * k / (m - 1)) for k in range(m)]
    out[0] = poly.points[0]
    out[-1] = poly.points[-1]
    return LaneKeypoints(out, METHOD_C)


def _vertical_candidates(poly: LanePolyline, interval: float):
    """Walk the polyline in order and record the first crossing of each
    successive y level (start y plus multiples of the interval, in the
    direction of net y change). Returns (points, arc_positions)."""
    pts = poly.as_array()
    table = arc_length_table(poly)
    y0 = pts[0, 1]
    direction = 1.0 if pts[-1, 1] >= y0 else -1.0

    candidates = [(float(pts[0, 0]), float(pts[0, 1]))]
    arcs = [0.0]
    level = y0 + direction * interval
    for i in range(len(pts) - 1):
        ya, yb = pts[i, 1], pts[i + 1, 1]
        # Every earlier walk point lies strictly before the pending level,
        # so the segment reaches it iff its far end does; by the same
        # invariant ya != yb whenever it triggers.
        while (yb - level) * direction >= 0:
            t = (level - ya) / (yb - ya)
            x = pts[i, 0] + t * (pts[i + 1, 0] - pts[i, 0])
            candidates.append((float(x), float(level)))
            arcs.append(float(table[i] + t * (table[i + 1] - table[i])))
            level += direction * interval
    return candidates, arcs


def _pad_even(poly: LanePolyline, candidates, arcs, m: int):
    """Insert points by even arc-length interpolation inside the largest
    gaps (proportional largest-remainder allocation) until m points."""
    pts = poly.as_array()
    table = arc_length_table(poly)
    if len(candidates) < 2:
        # Too few crossings to define gaps; fall back to the lane endpoints.
        candidates = [poly.points[0], poly.points[-1]]
        arcs = [0.0, float(table[-1])]
    need = m - len(candidates)
    gaps = np.diff(np.asarray(arcs))
    total_gap = float(gaps.sum())
    if total_gap <= 0:
        raise GeometryError("cannot pad candidates with zero arc span")
    exact = gaps / total_gap * need
    alloc = np.floor(exact).astype(int)
    remainder = exact - alloc
    for _ in range(need - int(alloc.sum())):
        j = int(np.argmax(remainder))
        alloc[j] += 1
        remainder[j] = -1.0
    out_pts = []
    for i, cand in enumerate(candidates[:-1]):
        out_pts.append(cand)
        for j in range(alloc[i]):
            s = arcs[i] + (j + 1) * gaps[i] / (alloc[i] + 1)
            out_pts.append(_point_at(pts, table, s))
    out_pts.append(candidates[-1])
    return out_pts


def resample_fixed_vertical(poly: LanePolyline, m: int,
                            interval: float = DEFAULT_VERTICAL_INTERVAL,
                            rng_seed: int = 0) -> LaneKeypoints:
    """Method B: candidates at fixed vertical intervals, then a seeded
    random order-preserving subset (too many) or even arc interpolation
    into the gaps (too few)."""
    _require_target(m)
    if interval <= 0:
        raise GeometryError(f"interval must be positive, got {interval}")
    table = arc_length_table(poly)
    if table[-1] <= 0:
        raise GeometryError("degenerate polyline: zero arc length")

    candidates, arcs = _vertical_candidates(poly, float(interval))
    if len(candidates) > m:
        rng = rng_for(rng_seed, "lane-method-b")
        keep = np.sort(rng.choice(len(candidates), size=m, replace=False))
        out = [candidates[i] for i in keep]
    elif len(candidates) < m:
        out = _pad_even(poly, candidates, arcs, m)
    else:
        out = candidates
    return LaneKeypoints(out, METHOD_B)


def resample_random(poly: LanePolyline, m: int, rng_seed: int = 0) -> LaneKeypoints:
    """Method A: m arc positions uniform in [0, L], sorted, interpolated."""
    _require_target(m)
    pts = poly.as_array()
    table = arc_length_table(poly)
    total = float(table[-1])
    if total <= 0:
        raise GeometryError("degenerate polyline: zero arc length")
    rng = rng_for(rng_seed, "lane-method-a")
    fractions = np.sort(rng.random(m))
    out = [_point_at(pts, table, f * total) for f in fractions]
    return LaneKeypoints(out, METHOD_A)


def resample(poly: LanePolyline, method: str, m: int, rng_seed: int = 0,
             interval: float = DEFAULT_VERTICAL_INTERVAL) -> LaneKeypoints:
    """Dispatch on a method name or its single-letter alias."""
    try:
        canonical = METHOD_ALIASES[method]
    except KeyError:
        raise GeometryError(f"unknown resampling method {method!r}") from None
    if canonical == METHOD_A:
        return resample_random(poly, m, rng_seed)
    if canonical == METHOD_B:
        return resample_fixed_vertical(poly, m, interval, rng_seed)
    return resample_even(poly, m)


def orient_lane(points, image_height: int = 0):
    """Canonical lane ordering: ego-near (larger y) end first; when the
    endpoint ys tie, the smaller x comes first. Returns a tuple, reversed
    when needed. ``image_height`` is accepted for interface stability."""
    pts = tuple((float(x), float(y)) for x, y in points)
    if len(pts) < 2:
        raise GeometryError("need >= 2 points to orient")
    (x0, y0), (x1, y1) = pts[0], pts[-1]
    if y0 < y1 or (y0 == y1 and x0 > x1):
        return pts[::-1]
    return pts
