"""Sphere-based camera viewpoints and pinhole cameras built from them.

Viewpoints sit on latitude floors of a sphere of radius ``r_sph``; each
camera "owns" a surface circle of radius ``r_circ`` and the floors/circles
are counted so neighbouring circles do not overlap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SphereConfig:
    r_sph: float = 0.8
    r_circ: float = 0.15
    include_poles: bool = True
    excluded_indices: frozenset = field(default_factory=frozenset)
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0 < self.r_circ <= self.r_sph:
            raise ValueError(f"need 0 < r_circ <= r_sph, got r_circ={self.r_circ}, r_sph={self.r_sph}")
        object.__setattr__(self, "excluded_indices", frozenset(int(i) for i in self.excluded_indices))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True)
class Viewpoint:
    index: int
    theta: float
    phi: float
    position: tuple
    euler_deg: tuple


@dataclass(frozen=True, eq=False)
class CameraView:
    """Pinhole camera. ``rotation``/``translation`` map world to camera
    coordinates (x right, y down, z forward)."""

    viewpoint: Viewpoint
    distance: float
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def position(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points) -> np.ndarray:
        return np.asarray(points, float).reshape(-1, 3) @ self.rotation.T + self.translation


# quotients within this relative distance below an integer are floored up to it,
# so that e.g. pi / (2 asin(1/2)) = 2.9999999999999996 counts as 3
_SNAP = 1e-12


def _snap_floor(x: float) -> int:
    k = math.floor(x)
    return int(k + 1) if (k + 1) - x <= _SNAP * max(1.0, x) else int(k)


def latitude_floor_count(r_sph: float, r_circ: float) -> int:
    ratio = r_circ / r_sph
    if not 0 < ratio <= 1:
        raise ValueError(f"r_circ/r_sph must lie in (0, 1], got {ratio}")
    return _snap_floor(math.pi / (2.0 * math.asin(ratio)))


def circles_per_floor(r_sph: float, r_circ: float, theta_i: float) -> int:
    return _snap_floor(2.0 * math.pi * r_sph * math.sin(theta_i) / (2.0 * r_circ))


def floor_angles(n_floors: int) -> list:
    """Polar angle of each floor: band centres ``(i + 1/2) * pi / n``."""
    return [(i + 0.5) * math.pi / n_floors for i in range(n_floors)]


def _wrap_deg(rad: float) -> float:
    deg = (rad * 180.0 / math.pi) % 360.0
    # tiny negative angles round up to exactly 360.0
    return 0.0 if deg >= 360.0 else deg + 0.0


def euler_from_cartesian(position) -> tuple:
    """(roll, pitch, yaw) in degrees, each in [0, 360), for a camera location.

    Uses ``atan2(0, 0) = 0``, so the poles have well-defined angles.
    """
    x, y, z = (float(c) for c in position)
    if x == 0.0 and y == 0.0 and z == 0.0:
        raise ValueError("euler_from_cartesian is undefined at the origin")
    roll = math.atan2(y, x)
    pitch = math.atan2(-z, math.sqrt(x * x + y * y))
    yaw = -math.atan2(math.sin(roll) * z, math.cos(roll) * x - math.sin(roll) * y)
    return _wrap_deg(roll), _wrap_deg(pitch), _wrap_deg(yaw)


def spherical_to_cartesian(r: float, theta: float, phi: float) -> tuple:
    st = math.sin(theta)
    return r * st * math.cos(phi), r * st * math.sin(phi), r * math.cos(theta)


def _make_viewpoint(index, r, theta, phi, center):
    if theta == 0.0 or theta == math.pi:
        rel = (0.0, 0.0, r if theta == 0.0 else -r)  # exact pole coordinates
    else:
        rel = spherical_to_cartesian(r, theta, phi)
    pos = tuple(c + o for c, o in zip(rel, center))
    return Viewpoint(index, theta, phi, pos, euler_from_cartesian(rel))


def generate_viewpoints(cfg: SphereConfig) -> list:
    """Floor-major viewpoint list, poles last, exclusions removed.

    Indices are assigned before exclusion, so an excluded index simply
    disappears from the list and the others keep theirs.
    """
    n_floors = latitude_floor_count(cfg.r_sph, cfg.r_circ)
    angles = []
    for theta in floor_angles(n_floors):
        n = circles_per_floor(cfg.r_sph, cfg.r_circ, theta)
        angles.extend((theta, j * 2.0 * math.pi / n) for j in range(n))
    if cfg.include_poles:
        angles.extend([(0.0, 0.0), (math.pi, 0.0)])
    bad = sorted(i for i in cfg.excluded_indices if not 0 <= i < len(angles))
    if bad:
        raise ValueError(f"excluded viewpoint indices out of range 0..{len(angles) - 1}: {bad}")
    return [
        _make_viewpoint(i, cfg.r_sph, th, ph, cfg.center)
        for i, (th, ph) in enumerate(angles)
        if i not in cfg.excluded_indices
    ]


def viewpoints_from_angles(angles, r_sph: float, center=(0.0, 0.0, 0.0)) -> list:
    """Viewpoints from an explicit list of ``(theta, phi)`` pairs (radians)."""
    return [_make_viewpoint(i, r_sph, float(th), float(ph), center) for i, (th, ph) in enumerate(angles)]


def look_at(eye, target):
    """World-to-camera rotation for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, float)
    forward = np.asarray(target, float) - eye
    norm = np.linalg.norm(forward)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("degenerate view direction")
    forward /= norm
    up = np.array([0.0, 0.0, 1.0]) if abs(forward[2]) <= 0.999 else np.array([1.0, 0.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return rot, -rot @ eye


def camera_from_viewpoint(vp: Viewpoint, distance: float, image=(256, 256), vfov: float = 60.0,
                          center=(0.0, 0.0, 0.0), sphere_center=None) -> CameraView:
    """Camera on the viewpoint's ray from the sphere centre, ``distance`` away from ``center``.

    The viewing direction is ``vp.position - sphere_center`` (``sphere_center``
    defaults to ``center``), so a viewpoint generated around one centre can
    be re-anchored on another target.
    """
    if not distance > 0:
        raise ValueError("camera distance must be positive")
    if not 0 < vfov < 180:
        raise ValueError("vfov must lie in (0, 180) degrees")
    origin = np.asarray(center if sphere_center is None else sphere_center, float)
    direction = np.asarray(vp.position, float) - origin
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise ValueError("degenerate view direction")
    center = np.asarray(center, float)
    eye = center + distance * direction / norm
    rot, trans = look_at(eye, center)
    w, h = int(image[0]), int(image[1])
    fy = (h / 2.0) / math.tan(math.radians(vfov) / 2.0)
    return CameraView(vp, float(distance), fy, fy, w / 2.0, h / 2.0, w, h, rot, trans)


def viewpoint_table(viewpoints) -> list:
    """Rows of (index, theta, phi, x, y, z, roll, pitch, yaw) for display/export."""
    return [
        {
            "index": vp.index,
            "theta": vp.theta,
            "phi": vp.phi,
            "x": vp.position[0],
            "y": vp.position[1],
            "z": vp.position[2],
            "roll": vp.euler_deg[0],
            "pitch": vp.euler_deg[1],
            "yaw": vp.euler_deg[2],
        }
        for vp in viewpoints
    ]
