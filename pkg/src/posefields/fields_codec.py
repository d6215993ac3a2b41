"""Composite field target encoding.

Ground-truth instances become two stacks of coarse maps at a configurable
stride: per-keypoint intensity maps (confidence, sub-cell offset, spread,
scale) and per-edge association maps (confidence, offsets to both
endpoints, spreads, scales). Confidence targets are binary inside a
window-by-window cell block; every written cell's offsets reconstruct the
exact annotated location, which is what the decoder and the round-trip
tests rely on.

Cell convention: cell (row i, col j) covers pixels [j*s, (j+1)*s) x
[i*s, (i+1)*s); a point (x, y) has continuous cell coordinates
(u, v) = (x/s, y/s) and reconstructs as x = (j + dx) * s with dx = u - j.
"""

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FieldShapeError, ParseError
from .ingest import ImageRecord, Instance, Keypoint

CIF_CHANNELS = ("confidence", "dx", "dy", "spread", "scale")
CAF_CHANNELS = ("confidence", "dx1", "dy1", "dx2", "dy2",
                "spread1", "spread2", "scale1", "scale2")

FIELDS_FORMAT_VERSION = "posefields-fields-v1"

DEFAULT_LONG_EDGE = 621


@dataclass(frozen=True)
class FieldConfig:
    stride: int = 16
    window: int = 4
    sigma_floor: float = 1.0

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.sigma_floor < 0:
            raise ValueError("sigma_floor must be >= 0")

    def grid_shape(self, width: int, height: int) -> tuple:
        """(Hc, Wc) with conceptual right/bottom zero padding."""
        return (math.ceil(height / self.stride), math.ceil(width / self.stride))


@dataclass(frozen=True)
class FieldStack:
    """Encoded CIF/CAF maps for one image."""

    cif: np.ndarray  # [K, 5, Hc, Wc]
    caf: np.ndarray  # [E, 9, Hc, Wc]
    config: FieldConfig
    image_size: tuple  # (W, H)

    def __post_init__(self):
        object.__setattr__(self, "image_size",
                           (int(self.image_size[0]), int(self.image_size[1])))
        hc, wc = self.config.grid_shape(*self.image_size)
        if self.cif.ndim != 4 or self.cif.shape[1] != len(CIF_CHANNELS):
            raise FieldShapeError(f"cif must be [K,5,Hc,Wc], got {self.cif.shape}")
        if self.caf.ndim != 4 or self.caf.shape[1] != len(CAF_CHANNELS):
            raise FieldShapeError(f"caf must be [E,9,Hc,Wc], got {self.caf.shape}")
        if self.cif.shape[2:] != (hc, wc) or self.caf.shape[2:] != (hc, wc):
            raise FieldShapeError(
                f"grid {self.cif.shape[2:]}/{self.caf.shape[2:]} does not match "
                f"image {self.image_size} at stride {self.config.stride} (want {(hc, wc)})")

    @property
    def grid_shape(self) -> tuple:
        return self.cif.shape[2:]


def _window_range(center: float, window: int, limit: int) -> range:
    """Indices of the `window` cells nearest a continuous cell coordinate,
    clipped to [0, limit). Half-cell ties round the start index up."""
    start = math.floor(center - window / 2.0 + 0.5)
    return range(max(start, 0), min(start + window, limit))


def _instance_sigma(inst: Instance, cfg: FieldConfig) -> float:
    return math.sqrt(max(inst.bbox_area(), 0.0)) / cfg.stride


def _spread(sigma: float, cfg: FieldConfig) -> float:
    return max(cfg.sigma_floor / cfg.stride, sigma / 4.0)


def _check_instances(record: ImageRecord, schema) -> None:
    for inst in record.instances:
        if len(inst.keypoints) != schema.keypoint_count:
            raise FieldShapeError(
                f"instance has {len(inst.keypoints)} keypoints, schema "
                f"{schema.category!r} wants {schema.keypoint_count}")


def encode_cif(record: ImageRecord, schema, cfg: FieldConfig = FieldConfig()) -> np.ndarray:
    """Encode keypoint intensity targets; returns [K, 5, Hc, Wc] float64."""
    if record.width < cfg.stride or record.height < cfg.stride:
        raise FieldShapeError(
            f"image {record.width}x{record.height} smaller than stride {cfg.stride}")
    _check_instances(record, schema)
    hc, wc = cfg.grid_shape(record.width, record.height)
    cif = np.zeros((schema.keypoint_count, len(CIF_CHANNELS), hc, wc), dtype=np.float64)

    for inst in record.instances:
        sigma = _instance_sigma(inst, cfg)
        spread = _spread(sigma, cfg)
        for k, kp in enumerate(inst.keypoints):
            if not kp.labeled:
                continue
            u = kp.x / cfg.stride
            v = kp.y / cfg.stride
            for i in _window_range(v, cfg.window, hc):
                for j in _window_range(u, cfg.window, wc):
                    dx, dy = u - j, v - i
                    if cif[k, 0, i, j] > 0:
                        old = cif[k, 1, i, j] ** 2 + cif[k, 2, i, j] ** 2
                        if dx * dx + dy * dy >= old:
                            continue
                    cif[k, :, i, j] = (1.0, dx, dy, spread, sigma)
    return cif


def _segment_cells(ua, va, ub, vb, hc, wc):
    """Cells met at 1-cell arc steps along the segment, endpoints included."""
    length = math.hypot(ub - ua, vb - va)
    steps = int(math.floor(length)) + 1
    ts = [min(k / length, 1.0) for k in range(steps)] if length > 0 else [0.0]
    if ts[-1] < 1.0:
        ts.append(1.0)
    cells = []
    for t in ts:
        j = math.floor(ua + t * (ub - ua))
        i = math.floor(va + t * (vb - va))
        if 0 <= i < hc and 0 <= j < wc:
            cells.append((int(i), int(j)))
    return cells


def encode_caf(record: ImageRecord, schema, cfg: FieldConfig = FieldConfig()) -> np.ndarray:
    """Encode edge association targets; returns [E, 9, Hc, Wc] float64."""
    if record.width < cfg.stride or record.height < cfg.stride:
        raise FieldShapeError(
            f"image {record.width}x{record.height} smaller than stride {cfg.stride}")
    _check_instances(record, schema)
    hc, wc = cfg.grid_shape(record.width, record.height)
    caf = np.zeros((schema.edge_count, len(CAF_CHANNELS), hc, wc), dtype=np.float64)

    for inst in record.instances:
        sigma = _instance_sigma(inst, cfg)
        spread = _spread(sigma, cfg)
        for e, (a, b) in enumerate(schema.edges):
            ka, kb = inst.keypoints[a], inst.keypoints[b]
            if not (ka.labeled and kb.labeled):
                continue
            ua, va = ka.x / cfg.stride, ka.y / cfg.stride
            ub, vb = kb.x / cfg.stride, kb.y / cfg.stride
            um, vm = (ua + ub) / 2.0, (va + vb) / 2.0

            cells = set()
            for i in _window_range(vm, cfg.window, hc):
                for j in _window_range(um, cfg.window, wc):
                    cells.add((i, j))
            cells.update(_segment_cells(ua, va, ub, vb, hc, wc))

            for i, j in sorted(cells):
                d1x, d1y = ua - j, va - i
                d2x, d2y = ub - j, vb - i
                mag = math.hypot(d1x, d1y) + math.hypot(d2x, d2y)
                if caf[e, 0, i, j] > 0:
                    old = (math.hypot(caf[e, 1, i, j], caf[e, 2, i, j])
                           + math.hypot(caf[e, 3, i, j], caf[e, 4, i, j]))
                    if mag >= old:
                        continue
                caf[e, :, i, j] = (1.0, d1x, d1y, d2x, d2y, spread, spread, sigma, sigma)
    return caf


def encode_fields(record: ImageRecord, schema, cfg: FieldConfig = FieldConfig()) -> FieldStack:
    return FieldStack(
        cif=encode_cif(record, schema, cfg),
        caf=encode_caf(record, schema, cfg),
        config=cfg,
        image_size=(record.width, record.height),
    )


def rescale_to_long_edge(record: ImageRecord, long_edge: int = DEFAULT_LONG_EDGE) -> ImageRecord:
    """Rescale a record so max(W, H) == long_edge, preserving aspect ratio."""
    w, h = record.width, record.height
    factor = long_edge / max(w, h)
    if w >= h:
        new_w, new_h = long_edge, max(1, round(h * factor))
    else:
        new_w, new_h = max(1, round(w * factor)), long_edge
    instances = []
    for inst in record.instances:
        instances.append(Instance(
            category=inst.category,
            keypoints=tuple(Keypoint(kp.x * factor, kp.y * factor, kp.v)
                            for kp in inst.keypoints),
            score=inst.score,
            bbox=tuple(c * factor for c in inst.bbox),
            keypoint_scores=inst.keypoint_scores,
        ))
    return replace(record, width=new_w, height=new_h, instances=tuple(instances))


# --- file format -------------------------------------------------------------

def _header_dict(stack: FieldStack, schema_hash: str) -> dict:
    return {
        "caf_shape": list(stack.caf.shape),
        "channel_names": {"caf": list(CAF_CHANNELS), "cif": list(CIF_CHANNELS)},
        "cif_shape": list(stack.cif.shape),
        "format": FIELDS_FORMAT_VERSION,
        "image_size": list(stack.image_size),
        "schema_hash": schema_hash,
        "sigma_floor": stack.config.sigma_floor,
        "stride": stack.config.stride,
        "window": stack.config.window,
    }


def fields_to_bytes(stack: FieldStack, schema_hash: str) -> bytes:
    """Serialize: one JSON header line (space-padded so the payload starts
    on a 4-byte boundary) followed by raw little-endian float32 cif then
    caf, C order."""
    header = json.dumps(_header_dict(stack, schema_hash),
                        sort_keys=True, separators=(",", ":"))
    pad = (-(len(header) + 1)) % 4
    header_line = header + " " * pad + "\n"
    payload = (stack.cif.astype("<f4").tobytes()
               + stack.caf.astype("<f4").tobytes())
    return header_line.encode("ascii") + payload


def write_fields(stack: FieldStack, schema_hash: str, sink) -> None:
    data = fields_to_bytes(stack, schema_hash)
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)


def fields_from_bytes(data: bytes):
    """Parse a fields file; returns (FieldStack, header_dict).

    Arrays come back float32 exactly as stored.
    """
    newline = data.find(b"\n")
    if newline < 0:
        raise ParseError("fields file has no header line")
    try:
        header = json.loads(data[:newline].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad fields header: {exc}") from exc
    try:
        cif_shape = tuple(int(n) for n in header["cif_shape"])
        caf_shape = tuple(int(n) for n in header["caf_shape"])
        cfg = FieldConfig(stride=int(header["stride"]), window=int(header["window"]),
                          sigma_floor=float(header["sigma_floor"]))
        image_size = tuple(int(n) for n in header["image_size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"fields header missing field: {exc}") from exc

    cif_count = int(np.prod(cif_shape))
    caf_count = int(np.prod(caf_shape))
    payload = data[newline + 1:]
    expected = 4 * (cif_count + caf_count)
    if len(payload) != expected:
        raise ParseError(f"fields payload is {len(payload)} bytes, expected {expected}")
    cif = np.frombuffer(payload, dtype="<f4", count=cif_count).reshape(cif_shape)
    caf = np.frombuffer(payload, dtype="<f4", count=caf_count,
                        offset=4 * cif_count).reshape(caf_shape)
    stack = FieldStack(cif=cif, caf=caf, config=cfg, image_size=image_size)
    return stack, header


def read_fields(source):
    if isinstance(source, (str, Path)):
        return fields_from_bytes(Path(source).read_bytes())
    return fields_from_bytes(source.read())
