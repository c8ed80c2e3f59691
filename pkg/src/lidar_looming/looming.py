"""Looming maps from LiDAR, threat zones and equal-looming spheres.

Two estimators produce a :class:`LoomingMap` on a range-image grid:

* :func:`loom_from_grids` differences two consecutive range images cell by
  cell, needing nothing but the LiDAR.
* :func:`loom_from_velocity` evaluates ``t . e_r / r`` for every point of a
  single scan given the sensor translation velocity ``t``. It is exact for
  static scenes and wrong for moving objects, whose own motion it ignores.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError, NoFiniteSphereError
from .geometry import Vec3, _vec, looming_radial_arrays
from .range_image import DEFAULT_R_MAX, GridSpec, PointCloud, RangeImage, _bin_points

DEFAULT_L_MAX = 20.0
DEFAULT_THRESHOLDS = (0.2, 0.5, 1.0)
EDGE_JUMP_M = 1.0


@dataclass
class LoomingMap:
    """Per-cell looming in 1/s.

    ``dt`` is the scan interval for the grid estimator and 0 for
    instantaneous maps. ``clamped`` counts cells whose raw magnitude
    exceeded ``l_max`` and were saturated. ``ranges`` optionally carries the
    current range behind each cell; evaluation uses it to locate edges.
    """

    spec: GridSpec
    values: np.ndarray
    mask: np.ndarray
    dt: float = 0.0
    l_max: float = DEFAULT_L_MAX
    clamped: int = 0
    ranges: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.spec.shape or self.mask.shape != self.spec.shape:
            raise InvalidInputError(f"looming arrays must have shape {self.spec.shape}")
        self.values = np.where(self.mask, self.values, 0.0)
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("VALID looming values must be finite")

    @property
    def valid_count(self) -> int:
        return int(self.mask.sum())


def _clamp(values: np.ndarray, mask: np.ndarray, l_max: float) -> tuple[np.ndarray, int]:
    over = mask & (np.abs(values) > l_max)
    return np.clip(values, -l_max, l_max), int(over.sum())


def loom_from_grids(
    prev: RangeImage, curr: RangeImage, dt: float, l_max: float = DEFAULT_L_MAX
) -> LoomingMap:
    """Cell-wise ``-((r_curr - r_prev) / dt) / r_curr``.

    Cells EMPTY in either scan stay EMPTY. Magnitudes above ``l_max`` are
    saturated and counted; they come mostly from occlusion edges where the
    two scans see different surfaces through the same cell.
    """
    if prev.spec != curr.spec:
        raise InvalidInputError("range images were built on different grids")
    if not (math.isfinite(dt) and dt > 0.0):
        raise InvalidInputError(f"dt must be finite and > 0, got {dt!r}")
    if not l_max > 0:
        raise InvalidInputError("l_max must be > 0")
    mask = prev.mask & curr.mask
    with np.errstate(invalid="ignore"):
        raw = -((curr.ranges - prev.ranges) / dt) / curr.ranges
    raw = np.where(mask, raw, 0.0)
    values, clamped = _clamp(raw, mask, l_max)
    return LoomingMap(curr.spec, values, mask, dt, l_max, clamped, ranges=curr.ranges.copy())


def loom_from_velocity(
    cloud: PointCloud,
    t,
    spec: GridSpec = GridSpec(),
    r_max: float = DEFAULT_R_MAX,
    l_max: float = DEFAULT_L_MAX,
) -> LoomingMap:
    """Instantaneous looming of every point from the translation velocity.

    Binning follows :func:`~lidar_looming.range_image.project`: a cell
    takes the looming of its nearest point.
    """
    tv = _vec(t)
    if len(cloud) == 0:
        raise InvalidInputError("point cloud is empty")
    flat, r, theta, phi, keep, _ = _bin_points(cloud, spec, r_max)
    rk = r[keep]
    lk = looming_radial_arrays(tv, rk, theta[keep], phi[keep])
    # nearest point per cell: sort by (cell, range) and take each group's head
    order = np.lexsort((rk, flat))
    flat_s = flat[order]
    head = np.ones(len(flat_s), dtype=bool)
    head[1:] = flat_s[1:] != flat_s[:-1]
    cells = flat_s[head]
    n = spec.width * spec.height
    raw = np.zeros(n)
    ranges = np.full(n, np.nan)
    mask = np.zeros(n, dtype=bool)
    raw[cells] = lk[order][head]
    ranges[cells] = rk[order][head]
    mask[cells] = True
    raw, mask, ranges = raw.reshape(spec.shape), mask.reshape(spec.shape), ranges.reshape(spec.shape)
    values, clamped = _clamp(raw, mask, l_max)
    return LoomingMap(spec, values, mask, 0.0, l_max, clamped, ranges=ranges)


# -- threat zones ---------------------------------------------------------------


class ThreatClass(enum.IntEnum):
    NONE = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3


@dataclass
class ThreatMap:
    spec: GridSpec
    classes: np.ndarray
    thresholds: tuple[float, float, float]

    def counts(self) -> dict[ThreatClass, int]:
        return {c: int((self.classes == c).sum()) for c in ThreatClass}


def validate_thresholds(l1: float, l2: float, l3: float) -> tuple[float, float, float]:
    vals = (float(l1), float(l2), float(l3))
    if not all(math.isfinite(v) for v in vals) or not (vals[2] > vals[1] > vals[0] > 0.0):
        raise InvalidInputError(f"thresholds must satisfy L3 > L2 > L1 > 0, got {vals}")
    return vals


def classify_values(values, l1: float, l2: float, l3: float) -> np.ndarray:
    """Threat class per value; a value equal to a threshold falls in the lower class."""
    l1, l2, l3 = validate_thresholds(l1, l2, l3)
    v = np.asarray(values, dtype=np.float64)
    out = np.zeros(v.shape, dtype=np.uint8)
    out[v > l1] = ThreatClass.LOW
    out[v > l2] = ThreatClass.MEDIUM
    out[v > l3] = ThreatClass.HIGH
    return out


def classify_threat(
    lmap: LoomingMap, l1: float, l2: float, l3: float
) -> ThreatMap:
    classes = classify_values(lmap.values, l1, l2, l3)
    classes[~lmap.mask] = ThreatClass.NONE
    return ThreatMap(lmap.spec, classes, validate_thresholds(l1, l2, l3))


# -- equal looming spheres ---------------------------------------------------------


@dataclass(frozen=True)
class EqualLoomingSphere:
    """All points p with ``t . p / (p . p) == level`` (origin excluded)."""

    center: Vec3
    radius: float
    level: float

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.asarray(self.center) + self.radius * d


def equal_looming_sphere(t, level: float) -> EqualLoomingSphere:
    """Sphere through the sensor origin with its center on ``t``.

    From ``t . p = L |p|^2``: completing the square gives center
    ``t / (2L)`` and radius ``|t| / (2|L|)``. Negative levels put the
    sphere behind the direction of travel.
    """
    tv = _vec(t)
    speed = float(np.linalg.norm(tv))
    if speed == 0.0:
        raise InvalidInputError("translation velocity must be non-zero")
    if not math.isfinite(level):
        raise InvalidInputError(f"level must be finite, got {level!r}")
    if level == 0.0:
        raise NoFiniteSphereError("zero looming: the locus is the plane t . p = 0")
    center = tv / (2.0 * level)
    return EqualLoomingSphere(Vec3(*map(float, center)), speed / (2.0 * abs(level)), float(level))


# -- evaluation -------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorStats:
    median: float
    p90: float
    frac10: float
    cells: int
    clamped: int
    empty: bool = False

    def line(self) -> str:
        return (
            f"median={self.median:.6g} p90={self.p90:.6g} frac10={self.frac10:.6g} "
            f"cells={self.cells} clamped={self.clamped}"
        )


def edge_mask(ranges: np.ndarray, exclusion: int, jump: float = EDGE_JUMP_M, wrap: bool = True) -> np.ndarray:
    """Cells within ``exclusion`` cells of a range discontinuity.

    A discontinuity sits between azimuth neighbours whose ranges differ by
    more than ``jump`` metres, or where one neighbour is EMPTY and the other
    is not. Both cells of such a pair are marked, then the mark is dilated
    by a ``(2*exclusion + 1)`` square.
    """
    if exclusion < 0:
        raise InvalidInputError("edge exclusion must be >= 0")
    valid = np.isfinite(ranges)
    nxt = np.roll(ranges, -1, axis=1)
    nxt_valid = np.roll(valid, -1, axis=1)
    with np.errstate(invalid="ignore"):
        step = (valid != nxt_valid) | (valid & nxt_valid & (np.abs(nxt - ranges) > jump))
    if not wrap:
        step[:, -1] = False
    edges = step | np.roll(step, 1, axis=1)
    if exclusion == 0:
        return edges & valid
    size = 2 * exclusion + 1
    mode = "wrap" if wrap else "constant"
    return ndimage.maximum_filter(edges, size=size, mode=mode) & valid


def compare_maps(
    est: LoomingMap,
    truth: LoomingMap,
    edge_exclusion: int = 1,
    ranges: Optional[np.ndarray] = None,
) -> ErrorStats:
    """Error statistics of ``est`` against ``truth`` away from range edges.

    ``ranges`` defaults to the range grid carried by ``truth``. Without any
    range information no edge exclusion is applied.
    """
    if est.spec != truth.spec:
        raise InvalidInputError("looming maps were built on different grids")
    both = est.mask & truth.mask
    if ranges is None:
        ranges = truth.ranges
    if ranges is not None:
        edges = edge_mask(np.asarray(ranges, dtype=np.float64), edge_exclusion, wrap=truth.spec.full_circle)
        both &= ~edges
    n = int(both.sum())
    if n == 0:
        return ErrorStats(math.nan, math.nan, math.nan, 0, est.clamped, empty=True)
    diff = np.abs(est.values[both] - truth.values[both])
    within = diff <= 0.1 * np.abs(truth.values[both])
    return ErrorStats(
        median=float(np.median(diff)),
        p90=float(np.percentile(diff, 90)),
        frac10=float(within.mean()),
        cells=n,
        clamped=est.clamped,
    )
