"""Coordinate conversions, relative velocity field and looming formulas.

Frame convention: x forward, z up. Azimuth ``theta`` is measured from the
x-axis in the XY-plane, elevation ``phi`` from the XY-plane. Looming is
``-rdot / r`` in 1/s and is positive for approaching points.

Scalar functions take any 3-sequence for vectors and return immutable
named tuples. The ``*_arrays`` variants work on ``(N, 3)`` arrays and are
what the grid code uses.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, UndefinedAtOriginError

TWO_PI = 2.0 * math.pi

# cos(phi) below this counts as a pole for azimuth rates
POLE_COS_EPS = 1e-12


class Vec3(NamedTuple):
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


class SphericalCoord(NamedTuple):
    r: float
    theta: float
    phi: float


class SphericalRates(NamedTuple):
    """Time derivatives of (r, theta, phi).

    ``degenerate`` is set at the poles, where ``theta_dot`` is undefined and
    carried as NaN.
    """

    r_dot: float
    theta_dot: float
    phi_dot: float
    degenerate: bool = False


def _vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise InvalidInputError(f"expected a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"non-finite vector component in {tuple(a)}")
    return a


def _xyz(v) -> tuple[float, float, float]:
    """Scalar-path twin of ``_vec``: three finite floats without numpy overhead."""
    try:
        x, y, z = v
        x, y, z = float(x), float(y), float(z)
    except (TypeError, ValueError):
        return tuple(_vec(v))  # raises with the usual message
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise InvalidInputError(f"non-finite vector component in {(x, y, z)}")
    return x, y, z


def _wrap(theta: float) -> float:
    if -math.pi <= theta < math.pi:
        return theta
    return float(normalize_theta(theta))


def normalize_theta(theta):
    """Wrap azimuth into [-pi, pi). Works on scalars and arrays."""
    wrapped = np.mod(np.asarray(theta, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    # mod can land exactly on +pi through rounding
    wrapped = np.where(wrapped >= math.pi, wrapped - TWO_PI, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def cart_to_spherical(p) -> SphericalCoord:
    """Convert a sensor-frame point to (r, theta, phi).

    The origin maps to (0, 0, 0) so that projection code tolerates the
    sensor's own location showing up in data.
    """
    x, y, z = _xyz(p)
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        return SphericalCoord(0.0, 0.0, 0.0)
    theta = _wrap(math.atan2(y, x))
    phi = math.atan2(z, math.hypot(x, y))
    return SphericalCoord(r, theta, phi)


def spherical_to_cart(s: SphericalCoord) -> Vec3:
    r, theta, phi = s
    cp = math.cos(phi)
    return Vec3(r * cp * math.cos(theta), r * cp * math.sin(theta), r * math.sin(phi))


def radial_unit_vector(theta: float, phi: float) -> Vec3:
    """e_r for the given direction."""
    cp = math.cos(phi)
    return Vec3(cp * math.cos(theta), cp * math.sin(theta), math.sin(phi))


def spherical_basis(theta: float, phi: float) -> np.ndarray:
    """Rows are e_r, e_theta, e_phi expressed in rectilinear components.

    The matrix is orthonormal, so its transpose maps spherical components
    back to (x, y, z).
    """
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(phi), math.sin(phi)
    return np.array(
        [
            [ct * cp, st * cp, sp],
            [-st, ct, 0.0],
            [-ct * sp, -st * sp, cp],
        ]
    )


def relative_velocity_field(t, omega, r_vec) -> Vec3:
    """Apparent velocity of a static point at ``r_vec`` seen from the sensor.

    The vehicle translates with ``t`` and rotates with ``omega``; the point
    therefore moves with ``-t - omega x r`` in the sensor frame.
    """
    v = -_vec(t) - np.cross(_vec(omega), _vec(r_vec))
    return Vec3(*map(float, v))


def normalized_velocity_field(t, omega, at: SphericalCoord) -> np.ndarray:
    """Components of V / r along (e_r, e_theta, e_phi), built term by term.

    Translation contributes ``-t_k / r`` on every axis. Rotation enters as
    ``-(omega x e_r) = omega_theta e_phi - omega_phi e_theta`` and so never
    touches the radial slot; the radial entry is exactly ``-L``.
    """
    r, theta, phi = at
    if r <= 0.0:
        raise UndefinedAtOriginError("normalized field is undefined at the origin")
    basis = spherical_basis(theta, phi)
    t_r, t_theta, t_phi = basis @ _vec(t)
    _, om_theta, om_phi = basis @ _vec(omega)
    return np.array([-t_r / r, -t_theta / r - om_phi, -t_phi / r + om_theta])


def velocity_to_spherical_rates(v, at: SphericalCoord) -> SphericalRates:
    """Decompose a rectilinear velocity at ``at`` into (rdot, thetadot, phidot)."""
    r, theta, phi = at
    if r <= 0.0:
        raise UndefinedAtOriginError("spherical rates are undefined at the origin")
    vx, vy, vz = _xyz(v)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(phi), math.sin(phi)
    # rows of spherical_basis applied by hand
    r_dot = ct * cp * vx + st * cp * vy + sp * vz
    v_theta = -st * vx + ct * vy
    phi_dot = (-ct * sp * vx - st * sp * vy + cp * vz) / r
    if abs(cp) <= POLE_COS_EPS:
        return SphericalRates(r_dot, math.nan, phi_dot, degenerate=True)
    return SphericalRates(r_dot, v_theta / (r * cp), phi_dot)


def spherical_rates_to_velocity(rates: SphericalRates, at: SphericalCoord) -> Vec3:
    r, theta, phi = at
    if rates.degenerate:
        raise InvalidInputError("cannot rebuild a velocity from degenerate (pole) rates")
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(phi), math.sin(phi)
    a, b, c = rates.r_dot, r * rates.theta_dot * cp, r * rates.phi_dot
    # transpose of spherical_basis
    return Vec3(ct * cp * a - st * b - ct * sp * c, st * cp * a + ct * b - st * sp * c, sp * a + cp * c)


def looming_vector_form(t, r_vec) -> float:
    """L = (t . r) / (r . r)."""
    x, y, z = _xyz(r_vec)
    tx, ty, tz = _xyz(t)
    rr = x * x + y * y + z * z
    if rr == 0.0:
        raise UndefinedAtOriginError("looming is undefined at zero range")
    return (tx * x + ty * y + tz * z) / rr


def looming_radial(t, at: SphericalCoord) -> float:
    """L = (t . e_r) / r. No rotation term appears: it has no radial part."""
    r, theta, phi = at
    if r <= 0.0:
        raise UndefinedAtOriginError("looming is undefined at zero range")
    ex, ey, ez = radial_unit_vector(theta, phi)
    tx, ty, tz = _xyz(t)
    return (tx * ex + ty * ey + tz * ez) / r


def looming_finite_difference(r_prev: float, r_curr: float, dt: float) -> float:
    """Two-sample looming ``-((r_curr - r_prev) / dt) / r_curr``.

    The current range is the denominator, matching the grid estimator.
    """
    for name, val in (("r_prev", r_prev), ("r_curr", r_curr), ("dt", dt)):
        if not (math.isfinite(val) and val > 0.0):
            raise InvalidInputError(f"{name} must be finite and > 0, got {val!r}")
    return -((r_curr - r_prev) / dt) / r_curr


# -- array variants ---------------------------------------------------------


def cart_to_spherical_arrays(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(N, 3) points -> (r, theta, phi) arrays. Origin points get zero angles."""
    pts = np.asarray(points, dtype=np.float64)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    rho = np.hypot(x, y)
    r = np.sqrt(x * x + y * y + z * z)
    theta = normalize_theta(np.arctan2(y, x))
    phi = np.arctan2(z, rho)
    at_origin = r == 0.0
    if np.any(at_origin):
        theta = np.where(at_origin, 0.0, theta)
        phi = np.where(at_origin, 0.0, phi)
    return r, np.asarray(theta), phi


def radial_unit_vectors(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Stack of e_r vectors with shape ``theta.shape + (3,)``."""
    cp = np.cos(phi)
    return np.stack([cp * np.cos(theta), cp * np.sin(theta), np.sin(phi)], axis=-1)


def looming_radial_arrays(t, r: np.ndarray, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Vectorized ``looming_radial``; zero ranges yield NaN."""
    tv = _vec(t)
    e_r = radial_unit_vectors(theta, phi)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (e_r @ tv) / r
    return np.where(r > 0.0, out, np.nan)
