"""Spherical range-image grids: projection, gap filling, decimation.

Grids are stored as ``(height, width)`` arrays. Row ``i`` covers elevation
``[phi_min + i*dphi, phi_min + (i+1)*dphi)`` and column ``j`` covers azimuth
``[theta_min + j*dtheta, theta_min + (j+1)*dtheta)``; the top elevation edge
is closed so ``phi == phi_max`` still lands in the last row. Empty cells are
tracked in a boolean mask and hold NaN in the range array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .geometry import cart_to_spherical_arrays, normalize_theta, radial_unit_vectors

DEFAULT_R_MAX = 120.0
# HDL-64E: 26.8 deg vertical FOV, split as -24.8 / +2.0
DEFAULT_PHI_MIN = math.radians(-24.8)
DEFAULT_PHI_MAX = math.radians(2.0)


@dataclass(frozen=True)
class GridSpec:
    width: int = 2000
    height: int = 64
    theta_min: float = -math.pi
    theta_max: float = math.pi
    phi_min: float = DEFAULT_PHI_MIN
    phi_max: float = DEFAULT_PHI_MAX

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise InvalidInputError("grid width and height must be integers")
        if self.width < 2 or self.height < 2:
            raise InvalidInputError(f"grid must be at least 2x2, got {self.width}x{self.height}")
        vals = (self.theta_min, self.theta_max, self.phi_min, self.phi_max)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("grid bounds must be finite")
        if not self.theta_max > self.theta_min:
            raise InvalidInputError("theta_max must exceed theta_min")
        if not self.phi_max > self.phi_min:
            raise InvalidInputError("phi_max must exceed phi_min")
        if self.phi_min < -math.pi / 2 or self.phi_max > math.pi / 2:
            raise InvalidInputError("elevation span must lie within [-pi/2, pi/2]")
        if self.theta_max - self.theta_min > 2 * math.pi + 1e-12:
            raise InvalidInputError("azimuth span cannot exceed 2*pi")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def theta_step(self) -> float:
        return (self.theta_max - self.theta_min) / self.width

    @property
    def phi_step(self) -> float:
        return (self.phi_max - self.phi_min) / self.height

    @property
    def full_circle(self) -> bool:
        return math.isclose(self.theta_max - self.theta_min, 2 * math.pi, rel_tol=0, abs_tol=1e-12)

    def with_size(self, width: int, height: int) -> "GridSpec":
        return GridSpec(width, height, self.theta_min, self.theta_max, self.phi_min, self.phi_max)

    def cell_index(self, theta, phi):
        """Map angles to ``(row, col, inside)`` using the floor convention.

        ``inside`` is False for angles outside the grid span; their row/col
        entries are meaningless.
        """
        theta = np.asarray(theta, dtype=np.float64)
        phi = np.asarray(phi, dtype=np.float64)
        if self.full_circle:
            # any azimuth is in span once wrapped relative to theta_min
            rel_t = np.mod(theta - self.theta_min, 2 * math.pi)
            in_t = np.ones(theta.shape, dtype=bool)
        else:
            rel_t = theta - self.theta_min
            in_t = (theta >= self.theta_min) & (theta < self.theta_max)
        in_p = (phi >= self.phi_min) & (phi <= self.phi_max)
        span_t = self.theta_max - self.theta_min
        col = np.floor(rel_t * self.width / span_t).astype(np.int64)
        row = np.floor((phi - self.phi_min) * self.height / (self.phi_max - self.phi_min)).astype(np.int64)
        col = np.clip(col, 0, self.width - 1)
        row = np.clip(row, 0, self.height - 1)
        return row, col, in_t & in_p

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """``(theta, phi)`` arrays of shape ``(height, width)``."""
        cols = self.theta_min + (np.arange(self.width) + 0.5) * self.theta_step
        rows = self.phi_min + (np.arange(self.height) + 0.5) * self.phi_step
        theta, phi = np.meshgrid(normalize_theta(cols), rows)
        return theta, phi

    def center_directions(self) -> np.ndarray:
        """Unit ray directions through every cell center, ``(height, width, 3)``."""
        theta, phi = self.cell_centers()
        return radial_unit_vectors(theta, phi)


@dataclass
class PointCloud:
    points: np.ndarray
    intensity: Optional[np.ndarray] = None
    timestamp: float = 0.0
    # points discarded by the reader (non-finite records)
    dropped: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise InvalidInputError("point cloud contains non-finite coordinates")
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=np.float64)
            if self.intensity.shape != (len(self.points),):
                raise InvalidInputError("intensity length must match point count")

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class ProjectionStats:
    total: int
    binned: int
    dropped_origin: int
    dropped_span: int
    dropped_range: int

    @property
    def dropped(self) -> int:
        return self.dropped_origin + self.dropped_span + self.dropped_range


@dataclass
class RangeImage:
    spec: GridSpec
    ranges: np.ndarray
    mask: np.ndarray
    timestamp: float = 0.0
    stats: Optional[ProjectionStats] = field(default=None, compare=False)

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.ranges.shape != self.spec.shape or self.mask.shape != self.spec.shape:
            raise InvalidInputError(
                f"range image arrays must have shape {self.spec.shape}, "
                f"got {self.ranges.shape} and {self.mask.shape}"
            )
        self.ranges = np.where(self.mask, self.ranges, np.nan)
        valid = self.ranges[self.mask]
        if not np.all(np.isfinite(valid) & (valid > 0.0)):
            raise InvalidInputError("VALID cells must hold finite positive ranges")

    @classmethod
    def empty(cls, spec: GridSpec, timestamp: float = 0.0) -> "RangeImage":
        return cls(spec, np.full(spec.shape, np.nan), np.zeros(spec.shape, dtype=bool), timestamp)

    @property
    def valid_count(self) -> int:
        return int(self.mask.sum())

    def same_as(self, other: "RangeImage") -> bool:
        return (
            self.spec == other.spec
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.ranges, other.ranges, equal_nan=True)
        )

    def to_cloud(self) -> PointCloud:
        """One point per VALID cell, placed on the cell-center ray."""
        dirs = self.spec.center_directions()[self.mask]
        pts = dirs * self.ranges[self.mask][:, None]
        return PointCloud(pts, timestamp=self.timestamp)


def _bin_points(cloud: PointCloud, spec: GridSpec, r_max: float):
    """Shared front half of projection: spherical coords, filters, flat cell ids."""
    r, theta, phi = cart_to_spherical_arrays(cloud.points)
    row, col, inside = spec.cell_index(theta, phi)
    at_origin = r == 0.0
    too_far = ~at_origin & (r > r_max)
    out_span = ~at_origin & ~too_far & ~inside
    keep = ~(at_origin | too_far | out_span)
    stats = ProjectionStats(
        total=len(r),
        binned=int(keep.sum()),
        dropped_origin=int(at_origin.sum()),
        dropped_span=int(out_span.sum()),
        dropped_range=int(too_far.sum()),
    )
    flat = row[keep] * spec.width + col[keep]
    return flat, r, theta, phi, keep, stats


def project(
    cloud: PointCloud,
    spec: GridSpec = GridSpec(),
    r_max: float = DEFAULT_R_MAX,
    reduce: str = "min",
) -> RangeImage:
    """Bin a point cloud into a range image.

    Each cell keeps the nearest range among the points that fall in it
    (``reduce="mean"`` averages instead). Points at the origin, outside the
    grid span or beyond ``r_max`` are dropped and counted in ``stats``.
    """
    if reduce not in ("min", "mean"):
        raise InvalidInputError(f"unknown reduction {reduce!r}")
    flat, r, _, _, keep, stats = _bin_points(cloud, spec, r_max)
    rk = r[keep]
    n = spec.width * spec.height
    if reduce == "min":
        acc = np.full(n, np.inf)
        np.minimum.at(acc, flat, rk)
        mask = np.isfinite(acc)
    else:
        counts = np.bincount(flat, minlength=n)
        sums = np.bincount(flat, weights=rk, minlength=n)
        mask = counts > 0
        acc = np.divide(sums, counts, out=np.full(n, np.nan), where=mask)
    img = RangeImage(spec, acc.reshape(spec.shape), mask.reshape(spec.shape), cloud.timestamp)
    img.stats = stats
    return img


def fill_gaps(img: RangeImage, max_gap: int) -> RangeImage:
    """Linearly interpolate short EMPTY runs along each azimuth row.

    A run is filled only if it has VALID cells on both sides within the row
    and its length is at most ``max_gap``. Rings are never mixed.
    """
    if max_gap < 0:
        raise InvalidInputError("max_gap must be >= 0")
    h, w = img.spec.shape
    mask = img.mask
    idx = np.broadcast_to(np.arange(w), (h, w))
    prev = np.maximum.accumulate(np.where(mask, idx, -1), axis=1)
    nxt = np.minimum.accumulate(np.where(mask, idx, w)[:, ::-1], axis=1)[:, ::-1]
    gap = nxt - prev - 1
    fill = ~mask & (prev >= 0) & (nxt < w) & (gap <= max_gap)
    if not np.any(fill):
        return RangeImage(img.spec, img.ranges.copy(), mask.copy(), img.timestamp)

    rows = np.nonzero(fill)[0]
    p, q = prev[fill], nxt[fill]
    r_p, r_q = img.ranges[rows, p], img.ranges[rows, q]
    frac = (idx[fill] - p) / (q - p)
    ranges = img.ranges.copy()
    ranges[fill] = r_p + (r_q - r_p) * frac
    return RangeImage(img.spec, ranges, mask | fill, img.timestamp)


def decimate(img: RangeImage, factor_theta: int, factor_phi: int) -> RangeImage:
    """Block-minimum downsampling by integer factors."""
    h, w = img.spec.shape
    a, b = factor_theta, factor_phi
    if a < 1 or b < 1:
        raise InvalidInputError("decimation factors must be >= 1")
    if w % a or h % b:
        raise InvalidInputError(f"factors {a}x{b} do not divide grid {w}x{h}")
    spec = img.spec.with_size(w // a, h // b)
    blocks = np.where(img.mask, img.ranges, np.inf).reshape(h // b, b, w // a, a)
    out = blocks.min(axis=(1, 3))
    mask = np.isfinite(out)
    return RangeImage(spec, np.where(mask, out, np.nan), mask, img.timestamp)


def sample(img: RangeImage, theta: float, phi: float) -> Optional[float]:
    """Nearest-cell lookup. Returns None for EMPTY cells."""
    row, col, inside = img.spec.cell_index(theta, phi)
    if not bool(inside):
        raise InvalidInputError(f"angle ({theta}, {phi}) is outside the grid span")
    row, col = int(row), int(col)
    if not img.mask[row, col]:
        return None
    return float(img.ranges[row, col])
