"""Ray-casting LiDAR simulator with exact ground-truth looming.

Scenes are built from spheres, planes and axis-aligned boxes, each moving
with a constant world-frame velocity. Every intersection has a closed form,
so the ground truth carries no discretisation error of its own.

The vehicle carries the sensor. Its translation velocity ``t`` is given in
the sensor frame (x forward, z up) and it yaws at ``omega_z``; both are
constant, so the trajectory is a straight line or a circular arc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import InvalidInputError, ParseError, UndefinedAtOriginError
from .geometry import Vec3, _vec
from .looming import DEFAULT_L_MAX, LoomingMap, _clamp
from .range_image import DEFAULT_R_MAX, GridSpec, RangeImage

# hits closer than this to the ray origin are ignored (self-intersection guard)
HIT_EPS = 1e-9
DEFAULT_NOISE_SIGMA = 0.02


@dataclass(frozen=True)
class Sphere:
    center: Vec3
    radius: float
    velocity: Vec3 = Vec3(0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidInputError(f"sphere radius must be > 0, got {self.radius}")

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, time: float) -> np.ndarray:
        c = np.asarray(self.center) + np.asarray(self.velocity) * time
        oc = origin - c
        b = dirs @ oc
        disc = b * b - (oc @ oc - self.radius**2)
        with np.errstate(invalid="ignore"):
            root = np.sqrt(disc)
        near, far = -b - root, -b + root
        s = np.where(near > HIT_EPS, near, np.where(far > HIT_EPS, far, np.inf))
        return np.where(disc >= 0.0, s, np.inf)


@dataclass(frozen=True)
class Plane:
    point: Vec3
    normal: Vec3
    velocity: Vec3 = Vec3(0.0, 0.0, 0.0)

    def __post_init__(self):
        if not math.isclose(float(np.linalg.norm(self.normal)), 1.0, rel_tol=0, abs_tol=1e-9):
            raise InvalidInputError(f"plane normal must be a unit vector, got {tuple(self.normal)}")

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, time: float) -> np.ndarray:
        n = np.asarray(self.normal)
        p = np.asarray(self.point) + np.asarray(self.velocity) * time
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((p - origin) @ n) / denom
        return np.where((np.abs(denom) > 1e-15) & (s > HIT_EPS), s, np.inf)


@dataclass(frozen=True)
class AxisBox:
    min: Vec3
    max: Vec3
    velocity: Vec3 = Vec3(0.0, 0.0, 0.0)

    def __post_init__(self):
        if not all(a < b for a, b in zip(self.min, self.max)):
            raise InvalidInputError("box min must be below max on every axis")

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, time: float) -> np.ndarray:
        shift = np.asarray(self.velocity) * time
        lo = np.asarray(self.min) + shift - origin
        hi = np.asarray(self.max) + shift - origin
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t0, t1 = lo * inv, hi * inv
        # a zero direction component means the slab is all-or-nothing
        par = dirs == 0.0
        inside = (lo <= 0.0) & (hi >= 0.0)
        t_near = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t0, t1))
        t_far = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t0, t1))
        enter = t_near.max(axis=-1)
        leave = t_far.min(axis=-1)
        s = np.where(enter > HIT_EPS, enter, leave)
        return np.where((enter <= leave) & (s > HIT_EPS), s, np.inf)


Primitive = Union[Sphere, Plane, AxisBox]


@dataclass
class Scene:
    objects: list = field(default_factory=list)

    def cast(self, origin, dirs: np.ndarray, time: float, r_max: float = DEFAULT_R_MAX):
        """Nearest hit per ray: ``(distance, object_index)``, MISS as ``(inf, -1)``."""
        o = np.asarray(origin, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        best = np.full(dirs.shape[:-1], np.inf)
        owner = np.full(dirs.shape[:-1], -1, dtype=np.int64)
        for k, obj in enumerate(self.objects):
            s = obj.intersect(o, dirs, time)
            closer = s < best
            best = np.where(closer, s, best)
            owner = np.where(closer, k, owner)
        miss = best > r_max
        return np.where(miss, np.inf, best), np.where(miss, -1, owner)

    def velocities(self) -> np.ndarray:
        return np.array([obj.velocity for obj in self.objects], dtype=np.float64).reshape(-1, 3)


@dataclass(frozen=True)
class VehicleState:
    """Vehicle pose at time 0 plus constant body-frame motion."""

    position: Vec3 = Vec3(0.0, 0.0, 0.0)
    heading: float = 0.0
    t: Vec3 = Vec3(0.0, 0.0, 0.0)
    omega_z: float = 0.0

    def heading_at(self, time: float) -> float:
        return self.heading + self.omega_z * time

    def position_at(self, time: float) -> np.ndarray:
        tx, ty, tz = self.t
        h0, w = self.heading, self.omega_z
        if w == 0.0:
            c, s = math.cos(h0) * time, math.sin(h0) * time
        else:
            h1 = h0 + w * time
            c = (math.sin(h1) - math.sin(h0)) / w
            s = (math.cos(h0) - math.cos(h1)) / w
        # integral of Rz(h(s)) @ t over [0, time]
        return np.asarray(self.position) + np.array([tx * c - ty * s, tx * s + ty * c, tz * time])

    def world_velocity_at(self, time: float) -> np.ndarray:
        return yaw_matrix(self.heading_at(time)) @ np.asarray(self.t, dtype=np.float64)


def yaw_matrix(heading: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def ray_cast(scene: Scene, origin, direction, at_time: float = 0.0, r_max: float = DEFAULT_R_MAX) -> Optional[float]:
    """Distance to the nearest surface along a unit ray, or None for a miss."""
    d = _vec(direction)
    if not math.isclose(float(np.linalg.norm(d)), 1.0, rel_tol=0, abs_tol=1e-9):
        raise InvalidInputError("ray direction must be a unit vector")
    dist, _ = scene.cast(_vec(origin), d[None, :], at_time, r_max)
    return None if not np.isfinite(dist[0]) else float(dist[0])


def _scan_rays(state: VehicleState, spec: GridSpec, at_time: float):
    sensor_dirs = spec.center_directions()
    world_dirs = sensor_dirs @ yaw_matrix(state.heading_at(at_time)).T
    return state.position_at(at_time), world_dirs


def simulate_scan(
    scene: Scene,
    state: VehicleState,
    spec: GridSpec = GridSpec(),
    at_time: float = 0.0,
    r_max: float = DEFAULT_R_MAX,
    noise_sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> RangeImage:
    """One instantaneous sweep: a ray through every cell center.

    ``noise_sigma`` adds Gaussian range noise to hits (requires ``rng`` for
    reproducibility; a fresh seeded generator is used otherwise).
    """
    origin, dirs = _scan_rays(state, spec, at_time)
    dist, _ = scene.cast(origin, dirs, at_time, r_max)
    mask = np.isfinite(dist)
    if noise_sigma > 0.0:
        rng = rng if rng is not None else np.random.default_rng(0)
        noisy = dist + rng.normal(0.0, noise_sigma, size=dist.shape)
        dist = np.where(mask, np.maximum(noisy, HIT_EPS), dist)
    return RangeImage(spec, np.where(mask, dist, np.nan), mask, at_time)


def ground_truth_looming(point_pos, point_vel, veh_pos, veh_vel) -> float:
    """Exact looming of a moving point seen from a moving vehicle."""
    dp = _vec(point_pos) - _vec(veh_pos)
    dv = _vec(point_vel) - _vec(veh_vel)
    pp = float(dp @ dp)
    if pp == 0.0:
        raise UndefinedAtOriginError("point coincides with the vehicle")
    return -float(dp @ dv) / pp


def ground_truth_map(
    scene: Scene,
    state: VehicleState,
    spec: GridSpec = GridSpec(),
    at_time: float = 0.0,
    r_max: float = DEFAULT_R_MAX,
    l_max: float = DEFAULT_L_MAX,
) -> LoomingMap:
    """Exact looming per cell from each hit point and its owner's velocity."""
    origin, dirs = _scan_rays(state, spec, at_time)
    dist, owner = scene.cast(origin, dirs, at_time, r_max)
    mask = np.isfinite(dist)
    obj_vel = np.zeros(dirs.shape)
    if scene.objects:
        obj_vel[mask] = scene.velocities()[owner[mask]]
    rel_v = obj_vel - state.world_velocity_at(at_time)
    safe = np.where(mask, dist, 1.0)
    # dp = dist * dir, so -(dp . dv) / |dp|^2 = -(dir . dv) / dist
    raw = np.where(mask, -np.einsum("...k,...k->...", dirs, rel_v) / safe, 0.0)
    values, clamped = _clamp(raw, mask, l_max)
    return LoomingMap(spec, values, mask, 0.0, l_max, clamped, ranges=np.where(mask, dist, np.nan))


# -- demo scene and scene files --------------------------------------------------------


DEMO_SPEED = 5.0
DEMO_RATE_HZ = 10.0


def demo_scene() -> Scene:
    """Wall 50 m ahead and three static spheres near the path."""
    return Scene(
        [
            Plane(Vec3(50.0, 0.0, 0.0), Vec3(-1.0, 0.0, 0.0)),
            Sphere(Vec3(15.0, -4.0, -0.5), 2.0),
            Sphere(Vec3(25.0, 5.0, 0.0), 3.0),
            Sphere(Vec3(12.0, 2.0, -1.0), 1.5),
        ]
    )


def demo_state(speed: float = DEMO_SPEED) -> VehicleState:
    return VehicleState(t=Vec3(speed, 0.0, 0.0))


_FIELDS = {"SPHERE": 7, "PLANE": 9, "BOX": 9}


def parse_scene(text: str) -> Scene:
    """Parse the line-oriented scene format (``SPHERE``/``PLANE``/``BOX``)."""
    objects = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *rest = line.split()
        kind = kind.upper()
        if kind not in _FIELDS:
            raise ParseError(f"line {lineno}: unknown primitive {kind!r}", lineno)
        if len(rest) != _FIELDS[kind]:
            raise ParseError(f"line {lineno}: {kind} takes {_FIELDS[kind]} numbers, got {len(rest)}", lineno)
        try:
            v = [float(x) for x in rest]
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}", lineno) from None
        if not all(math.isfinite(x) for x in v):
            raise ParseError(f"line {lineno}: non-finite value", lineno)
        try:
            if kind == "SPHERE":
                objects.append(Sphere(Vec3(*v[0:3]), v[3], Vec3(*v[4:7])))
            elif kind == "PLANE":
                n = np.array(v[3:6])
                norm = np.linalg.norm(n)
                if norm == 0:
                    raise InvalidInputError("plane normal is zero")
                objects.append(Plane(Vec3(*v[0:3]), Vec3(*(n / norm)), Vec3(*v[6:9])))
            else:
                objects.append(AxisBox(Vec3(*v[0:3]), Vec3(*v[3:6]), Vec3(*v[6:9])))
        except InvalidInputError as exc:
            raise ParseError(f"line {lineno}: {exc}", lineno) from None
    return Scene(objects)


def load_scene(path) -> Scene:
    return parse_scene(Path(path).read_text())


def format_scene(scene: Scene) -> str:
    lines = []
    for obj in scene.objects:
        if isinstance(obj, Sphere):
            nums = [*obj.center, obj.radius, *obj.velocity]
            kind = "SPHERE"
        elif isinstance(obj, Plane):
            nums = [*obj.point, *obj.normal, *obj.velocity]
            kind = "PLANE"
        else:
            nums = [*obj.min, *obj.max, *obj.velocity]
            kind = "BOX"
        lines.append(" ".join([kind] + [repr(float(x)) for x in nums]))
    return "\n".join(lines) + "\n"
