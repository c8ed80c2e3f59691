"""Looming (−ṙ/r) estimation from LiDAR scans, with threat maps and a ray-casting oracle."""

from .errors import (
    FormatVersionError,
    InvalidInputError,
    LoomingError,
    NoFiniteSphereError,
    ParseError,
    UndefinedAtOriginError,
)
from .geometry import SphericalCoord, Vec3, looming_radial, looming_vector_form
from .looming import (
    ErrorStats,
    LoomingMap,
    ThreatClass,
    ThreatMap,
    classify_threat,
    compare_maps,
    equal_looming_sphere,
    loom_from_grids,
    loom_from_velocity,
)
from .range_image import GridSpec, PointCloud, RangeImage, decimate, fill_gaps, project, sample

__version__ = "0.1.0"

__all__ = [
    "ErrorStats",
    "FormatVersionError",
    "GridSpec",
    "InvalidInputError",
    "LoomingError",
    "LoomingMap",
    "NoFiniteSphereError",
    "ParseError",
    "PointCloud",
    "RangeImage",
    "SphericalCoord",
    "ThreatClass",
    "ThreatMap",
    "UndefinedAtOriginError",
    "Vec3",
    "classify_threat",
    "compare_maps",
    "decimate",
    "equal_looming_sphere",
    "fill_gaps",
    "loom_from_grids",
    "loom_from_velocity",
    "looming_radial",
    "looming_vector_form",
    "project",
    "sample",
]
