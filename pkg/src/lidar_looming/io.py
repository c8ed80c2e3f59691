"""File formats: KITTI Velodyne scans, ego-motion CSV, RGRID/LGRID grids, PPM.

All writers go through a temp file in the target directory followed by an
atomic rename, so readers never observe half-written output.
"""

from __future__ import annotations

import logging
import math
import os
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import FormatVersionError, InvalidInputError, ParseError
from .geometry import Vec3
from .looming import DEFAULT_L_MAX, LoomingMap, ThreatClass, ThreatMap
from .range_image import GridSpec, PointCloud, RangeImage

log = logging.getLogger(__name__)

VELODYNE_RECORD = 16
GRID_VERSION = 1
EMPTY_RANGE = -1.0
# longest header we are willing to scan for the newline
MAX_HEADER = 1024

THREAT_PALETTE = {
    ThreatClass.NONE: (0, 0, 0),
    ThreatClass.LOW: (255, 255, 0),
    ThreatClass.MEDIUM: (255, 165, 0),
    ThreatClass.HIGH: (255, 0, 0),
}


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{uuid.uuid4().hex}.tmp")
    try:
        with open(tmp, "xb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


# -- KITTI velodyne ------------------------------------------------------------------


def parse_velodyne_bytes(data: bytes, timestamp: float = 0.0) -> PointCloud:
    """Decode 16-byte ``(x, y, z, reflectance)`` little-endian float records."""
    if len(data) % VELODYNE_RECORD:
        offset = len(data) - len(data) % VELODYNE_RECORD
        raise ParseError(
            f"truncated record at byte offset {offset}: file size {len(data)} is not a multiple of 16",
            offset,
        )
    rec = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    finite = np.all(np.isfinite(rec), axis=1)
    dropped = int((~finite).sum())
    if dropped:
        log.warning("dropped %d velodyne records with non-finite values", dropped)
    rec = rec[finite]
    return PointCloud(rec[:, :3], rec[:, 3], timestamp, dropped)


def read_velodyne_bin(path, timestamp: float = 0.0) -> PointCloud:
    return parse_velodyne_bytes(Path(path).read_bytes(), timestamp)


def velodyne_bytes(cloud: PointCloud) -> bytes:
    rec = np.zeros((len(cloud), 4), dtype="<f4")
    rec[:, :3] = cloud.points
    if cloud.intensity is not None:
        rec[:, 3] = cloud.intensity
    return rec.tobytes()


def write_velodyne_bin(cloud: PointCloud, path) -> None:
    atomic_write(path, velodyne_bytes(cloud))


# -- ego motion ---------------------------------------------------------------------------


class EgoMotionRecord(NamedTuple):
    timestamp: float
    t: Vec3


def parse_ego_motion(text: str) -> list[EgoMotionRecord]:
    """Parse ``timestamp,vx,vy,vz`` lines; ``#`` starts a comment."""
    records: list[EgoMotionRecord] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            if len(parts) != 4:
                raise ValueError(f"expected 4 fields, got {len(parts)}")
            ts, vx, vy, vz = (float(p) for p in parts)
            if not all(math.isfinite(v) for v in (ts, vx, vy, vz)):
                raise ValueError("non-finite value")
        except ValueError as exc:
            raise ParseError(f"line {lineno}: malformed ego-motion record ({exc})", lineno) from None
        if records and ts <= records[-1].timestamp:
            raise ParseError(f"line {lineno}: timestamp {ts} is not after {records[-1].timestamp}", lineno)
        records.append(EgoMotionRecord(ts, Vec3(vx, vy, vz)))
    return records


def read_ego_motion(path) -> list[EgoMotionRecord]:
    return parse_ego_motion(Path(path).read_text())


def velocity_at(records: Sequence[EgoMotionRecord], timestamp: float) -> Vec3:
    """Piecewise-linear velocity, clamped to the first/last record outside the span."""
    if not records:
        raise InvalidInputError("no ego-motion records")
    ts = np.array([r.timestamp for r in records])
    vs = np.array([r.t for r in records], dtype=np.float64)
    return Vec3(*(float(np.interp(timestamp, ts, vs[:, k])) for k in range(3)))


# -- RGRID / LGRID -------------------------------------------------------------------------


def _header(magic: str, spec: GridSpec, last: float) -> bytes:
    fields = [magic, str(GRID_VERSION), str(spec.width), str(spec.height)]
    fields += [repr(float(v)) for v in (spec.theta_min, spec.theta_max, spec.phi_min, spec.phi_max, last)]
    return (" ".join(fields) + "\n").encode("ascii")


def _parse_header(data: bytes, magic: str) -> tuple[GridSpec, float, int]:
    end = data.find(b"\n", 0, MAX_HEADER)
    if end < 0:
        raise ParseError(f"missing {magic} header line", 0)
    try:
        fields = data[:end].decode("ascii").split()
    except UnicodeDecodeError:
        raise ParseError(f"header is not ASCII; expected {magic!r}", 0) from None
    if not fields or fields[0] != magic:
        got = fields[0] if fields else ""
        raise ParseError(f"bad magic {got[:16]!r}, expected {magic!r}", 0)
    if len(fields) < 2 or fields[1] != str(GRID_VERSION):
        raise FormatVersionError(
            f"unsupported {magic} version {fields[1] if len(fields) > 1 else '?'!r}, expected {GRID_VERSION}", 0
        )
    if len(fields) != 9:
        raise ParseError(f"{magic} header has {len(fields)} fields, expected 9", 0)
    try:
        width, height = int(fields[2]), int(fields[3])
        nums = [float(f) for f in fields[4:]]
        spec = GridSpec(width, height, *nums[:4])
    except (ValueError, InvalidInputError) as exc:
        raise ParseError(f"invalid {magic} header: {exc}", 0) from None
    return spec, nums[4], end + 1


def range_image_bytes(img: RangeImage) -> bytes:
    cells = np.where(img.mask, img.ranges, EMPTY_RANGE).astype("<f4")
    stored = cells[img.mask]
    if not np.all(np.isfinite(stored) & (stored > 0)):
        raise InvalidInputError("range values do not survive conversion to float32")
    return _header("RGRID", img.spec, img.timestamp) + cells.tobytes()


def parse_rgrid(data: bytes) -> RangeImage:
    spec, timestamp, offset = _parse_header(data, "RGRID")
    n = spec.width * spec.height
    body = data[offset:]
    if len(body) != 4 * n:
        raise ParseError(f"RGRID payload is {len(body)} bytes, expected {4 * n}", offset)
    cells = np.frombuffer(body, dtype="<f4").reshape(spec.shape).astype(np.float64)
    mask = cells != EMPTY_RANGE
    bad = mask & ~(np.isfinite(cells) & (cells > 0))
    if np.any(bad):
        raise ParseError(f"RGRID holds {int(bad.sum())} invalid range values", offset)
    return RangeImage(spec, np.where(mask, cells, np.nan), mask, timestamp)


def write_rgrid(img: RangeImage, path) -> None:
    atomic_write(path, range_image_bytes(img))


def read_rgrid(path) -> RangeImage:
    return parse_rgrid(Path(path).read_bytes())


def looming_map_bytes(lmap: LoomingMap) -> bytes:
    values = np.where(lmap.mask, lmap.values, 0.0).astype("<f4")
    return _header("LGRID", lmap.spec, lmap.dt) + values.tobytes() + lmap.mask.astype(np.uint8).tobytes()


def parse_lgrid(data: bytes, l_max: float = DEFAULT_L_MAX) -> LoomingMap:
    """Decode an LGRID file.

    The clamp count is not stored; it is recovered as the number of VALID
    cells sitting at ``|L| >= l_max``.
    """
    spec, dt, offset = _parse_header(data, "LGRID")
    n = spec.width * spec.height
    body = data[offset:]
    if len(body) < 4 * n:
        raise ParseError(f"LGRID value block is {len(body)} bytes, expected {4 * n}", offset)
    mask_block = body[4 * n :]
    if len(mask_block) != n:
        raise ParseError(f"LGRID mask block is {len(mask_block)} bytes, expected {n}", offset + 4 * n)
    values = np.frombuffer(body[: 4 * n], dtype="<f4").reshape(spec.shape).astype(np.float64)
    mask_raw = np.frombuffer(mask_block, dtype=np.uint8).reshape(spec.shape)
    if np.any(mask_raw > 1):
        raise ParseError("LGRID mask bytes must be 0 or 1", offset + 4 * n)
    mask = mask_raw == 1
    if not np.all(np.isfinite(values[mask])):
        raise ParseError("LGRID holds non-finite looming values", offset)
    clamped = int((mask & (np.abs(values) >= l_max)).sum())
    return LoomingMap(spec, values, mask, dt, l_max, clamped)


def write_lgrid(lmap: LoomingMap, path) -> None:
    atomic_write(path, looming_map_bytes(lmap))


def read_lgrid(path, l_max: float = DEFAULT_L_MAX) -> LoomingMap:
    return parse_lgrid(Path(path).read_bytes(), l_max)


# -- PPM -------------------------------------------------------------------------------------


@dataclass(frozen=True)
class ColorScale:
    """Looming magnitude that maps to full channel intensity, fixed across frames."""

    l_saturation: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.l_saturation) and self.l_saturation > 0):
            raise InvalidInputError("color scale saturation must be > 0")


def _ppm(rgb: np.ndarray) -> bytes:
    # row 0 of a grid is the lowest elevation; images put the sky on top
    rgb = np.ascontiguousarray(rgb[::-1], dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def looming_rgb(lmap: LoomingMap, scale: ColorScale) -> np.ndarray:
    """Red for approaching, blue for receding, black for EMPTY; grid orientation."""
    frac = np.minimum(np.abs(lmap.values) / scale.l_saturation, 1.0)
    level = np.floor(255.0 * frac + 0.5).astype(np.uint8)
    rgb = np.zeros(lmap.spec.shape + (3,), dtype=np.uint8)
    pos = lmap.mask & (lmap.values > 0)
    neg = lmap.mask & (lmap.values < 0)
    rgb[..., 0] = np.where(pos, level, 0)
    rgb[..., 2] = np.where(neg, level, 0)
    return rgb


def looming_ppm_bytes(lmap: LoomingMap, scale: ColorScale) -> bytes:
    return _ppm(looming_rgb(lmap, scale))


def write_looming_ppm(lmap: LoomingMap, scale: ColorScale, path) -> None:
    atomic_write(path, looming_ppm_bytes(lmap, scale))


def threat_ppm_bytes(tmap: ThreatMap) -> bytes:
    lut = np.array([THREAT_PALETTE[c] for c in ThreatClass], dtype=np.uint8)
    return _ppm(lut[tmap.classes])


def write_threat_ppm(tmap: ThreatMap, path) -> None:
    atomic_write(path, threat_ppm_bytes(tmap))


def parse_ppm(data: bytes) -> np.ndarray:
    """Decode a binary P6 image with maxval 255 into an ``(h, w, 3)`` array (top row first)."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PPM header", pos)
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ParseError("only binary P6 images with maxval 255 are supported", 0)
    w, h = int(tokens[1]), int(tokens[2])
    body = data[pos + 1 :]
    if len(body) != w * h * 3:
        raise ParseError(f"PPM payload is {len(body)} bytes, expected {w * h * 3}", pos + 1)
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def decode_threat_ppm(data: bytes) -> np.ndarray:
    """Invert :func:`threat_ppm_bytes` back to a class grid in grid orientation."""
    rgb = parse_ppm(data)[::-1]
    classes = np.full(rgb.shape[:2], 255, dtype=np.uint8)
    for cls, color in THREAT_PALETTE.items():
        classes[np.all(rgb == color, axis=-1)] = cls
    if np.any(classes == 255):
        raise ParseError("image contains colors outside the threat palette")
    return classes
