"""Scene content: meshes, the skinned hand rig, grasp poses, the probe model,
and the grasp-geometry operations that act on them.

All types are immutable after construction (their arrays are flagged
read-only) so they can be shared freely between threads and worker processes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from graspsynth import kernels
from graspsynth.geometry import axis_angle_matrix, euler_matrix_deg, homogeneous, transform_points

MESH_LABELS = ("hand", "arm", "probe", "other")
DEFAULT_Z_OFFSET = 0.07189549170510294
DEFAULT_CONTACT_THRESHOLD = 0.005
DEFAULT_BPS_COUNT = 1024
RIG_FORMAT = "graspsynth-rig/1"
GRASP_FORMAT = "graspsynth-grasp/1"
NUM_KEYPOINTS = 21

# fixed, non-axis-aligned direction for inside/outside ray parity
_PARITY_DIR = np.array([1.0, 2.0, 3.0]) / math.sqrt(14.0)


class AssetError(Exception):
    """Base class for asset loading and validation failures."""


class MeshNotFoundError(AssetError, FileNotFoundError):
    pass


class MeshParseError(AssetError):
    pass


class EmptyMeshError(AssetError):
    pass


class MeshIndexError(AssetError, IndexError):
    pass


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    label: str = "other"

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64).reshape(-1, 3)
        t = _frozen(self.triangles, np.int64).reshape(-1, 3)
        if self.label not in MESH_LABELS:
            raise ValueError(f"unknown mesh label {self.label!r}")
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertex coordinates must be finite")
        if len(t):
            if t.min() < 0 or t.max() >= len(v):
                raise MeshIndexError(f"triangle index out of range for {len(v)} vertices")
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ValueError("degenerate triangle index triple")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, rotation, translation) -> "TriMesh":
        return TriMesh(transform_points(rotation, translation, self.vertices), self.triangles, self.label)

    def with_label(self, label: str) -> "TriMesh":
        return TriMesh(self.vertices, self.triangles, label)

    def submesh(self, triangle_mask, label: Optional[str] = None) -> "TriMesh":
        """Mesh made of the selected triangles, with unused vertices dropped."""
        tris = self.triangles[np.asarray(triangle_mask, dtype=bool)]
        used, inverse = np.unique(tris.ravel(), return_inverse=True)
        return TriMesh(self.vertices[used], inverse.reshape(-1, 3), label or self.label)

    def is_watertight(self) -> bool:
        """Every directed edge is matched by exactly one opposite edge."""
        if self.n_triangles == 0:
            return False
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        fwd, fcount = np.unique(edges, axis=0, return_counts=True)
        if np.any(fcount != 1):
            return False
        rev = np.unique(edges[:, ::-1], axis=0)
        return np.array_equal(fwd, rev)

    def triangle_arrays(self):
        """``(v0, e1, e2)`` per triangle as used by the ray kernels."""
        v = self.vertices
        t = self.triangles
        v0 = v[t[:, 0]]
        return np.ascontiguousarray(v0), np.ascontiguousarray(v[t[:, 1]] - v0), np.ascontiguousarray(v[t[:, 2]] - v0)


@dataclass(frozen=True)
class Joint:
    name: str
    parent: Optional[int]
    rest_rotation: np.ndarray  # 3x3, relative to parent
    rest_translation: np.ndarray  # meters, relative to parent


@dataclass(frozen=True, eq=False)
class HandRig:
    """Skeleton, skin weights and the 21-keypoint index map.

    ``skin_weights`` is a dense (n_vertices, n_joints) matrix; the rig file
    stores it as sparse (joint, weight) pairs. ``arm_triangles`` marks the
    triangles that render as forearm rather than hand.
    """

    joints: tuple
    skin_weights: np.ndarray
    mesh: TriMesh
    keypoint_map: tuple
    arm_triangles: np.ndarray = None

    def __post_init__(self):
        joints = tuple(self.joints)
        if not joints or joints[0].parent is not None:
            raise ValueError("joint 0 must be the root (parent None)")
        for i, j in enumerate(joints[1:], start=1):
            if j.parent is None or not 0 <= j.parent < i:
                raise ValueError(f"joint {i} ({j.name}) parent must precede it")
        w = _frozen(self.skin_weights, np.float64)
        if w.shape != (self.mesh.n_vertices, len(joints)):
            raise ValueError(f"skin weights shape {w.shape} does not match mesh/joints")
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("skin weights must be non-negative and sum to 1")
        km = tuple(int(k) for k in self.keypoint_map)
        if len(km) != NUM_KEYPOINTS or any(not 0 <= k < len(joints) for k in km):
            raise ValueError("keypoint_map needs 21 valid joint indices")
        arm = self.arm_triangles
        arm = np.zeros(self.mesh.n_triangles, bool) if arm is None else np.asarray(arm, bool)
        if arm.shape != (self.mesh.n_triangles,):
            raise ValueError("arm_triangles must flag every mesh triangle")
        joints = tuple(
            Joint(j.name, j.parent, _frozen(j.rest_rotation, np.float64).reshape(3, 3),
                  _frozen(j.rest_translation, np.float64).reshape(3))
            for j in joints
        )
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "skin_weights", w)
        object.__setattr__(self, "keypoint_map", km)
        object.__setattr__(self, "arm_triangles", _frozen(arm, bool))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def rest_globals(self):
        """Rest-pose global 4x4 transform per joint."""
        out = []
        for j in self.joints:
            local = homogeneous(j.rest_rotation, j.rest_translation)
            out.append(local if j.parent is None else out[j.parent] @ local)
        return np.stack(out)

    def hand_vertex_mask(self):
        """Vertices referenced by at least one non-arm triangle."""
        mask = np.zeros(self.mesh.n_vertices, bool)
        mask[self.mesh.triangles[~self.arm_triangles].ravel()] = True
        return mask


@dataclass(frozen=True, eq=False)
class GraspPose:
    grasp_id: str
    hand_translation: np.ndarray
    joint_rotations: np.ndarray  # (n_joints, 3) axis-angle, radians
    probe_euler_deg: np.ndarray
    probe_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = _frozen(self.hand_translation, np.float64).reshape(3)
        r = _frozen(self.joint_rotations, np.float64).reshape(-1, 3)
        e = _frozen(self.probe_euler_deg, np.float64).reshape(3)
        p = _frozen(self.probe_translation, np.float64).reshape(3)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
            raise ValueError("grasp pose values must be finite")
        if np.any(e < 0) or np.any(e >= 360):
            raise ValueError(f"probe_euler_deg must lie in [0, 360): {e.tolist()}")
        for name, val in (("hand_translation", t), ("joint_rotations", r),
                          ("probe_euler_deg", e), ("probe_translation", p)):
            object.__setattr__(self, name, val)

    @classmethod
    def rest(cls, n_joints: int, grasp_id: str = "rest", translation=(0.0, 0.0, 0.0)) -> "GraspPose":
        return cls(grasp_id, np.asarray(translation, float), np.zeros((n_joints, 3)), np.zeros(3))


@dataclass(frozen=True, eq=False)
class ProbeModel:
    mesh: TriMesh
    z_offset: float = DEFAULT_Z_OFFSET
    corner_source: Optional[tuple] = None  # (lo, hi) object-frame box; mesh bounds by default

    def __post_init__(self):
        if not math.isfinite(self.z_offset):
            raise ValueError("z_offset must be finite")
        lo, hi = self.corner_source if self.corner_source is not None else self.mesh.bounds()
        lo, hi = _frozen(lo, np.float64).reshape(3), _frozen(hi, np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValueError("corner box min must not exceed max")
        object.__setattr__(self, "z_offset", float(self.z_offset))
        object.__setattr__(self, "corner_source", (lo, hi))

    def bounding_sphere(self):
        lo, hi = self.mesh.bounds()
        center = 0.5 * (lo + hi)
        return center, float(np.max(np.linalg.norm(self.mesh.vertices - center, axis=1)))


@dataclass(frozen=True, eq=False)
class BasisPointSet:
    basis_points: np.ndarray
    seed: int

    def __post_init__(self):
        b = _frozen(self.basis_points, np.float64).reshape(-1, 3)
        if len(b) == 0:
            raise ValueError("basis point set must not be empty")
        object.__setattr__(self, "basis_points", b)

    @classmethod
    def sample_ball(cls, count: int, radius: float, seed: int, center=(0.0, 0.0, 0.0)) -> "BasisPointSet":
        """``count`` points uniform in a ball; identical seed gives identical points."""
        rng = np.random.default_rng(seed)
        d = rng.standard_normal((count, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = radius * rng.random(count) ** (1.0 / 3.0)
        return cls(np.asarray(center, float) + d * r[:, None], seed)

    @classmethod
    def for_probe(cls, probe: ProbeModel, count: int = DEFAULT_BPS_COUNT, seed: int = 0) -> "BasisPointSet":
        center, radius = probe.bounding_sphere()
        return cls.sample_ball(count, 1.1 * radius, seed, center)


@dataclass(frozen=True)
class TextureSpec:
    glove_rgb: tuple
    arm_rgb: tuple

    def __post_init__(self):
        for name in ("glove_rgb", "arm_rgb"):
            rgb = tuple(float(c) for c in getattr(self, name))
            if len(rgb) != 3 or not all(0.0 <= c <= 1.0 for c in rgb):
                raise ValueError(f"{name} must be an RGB triple in [0, 1]")
            object.__setattr__(self, name, rgb)


@dataclass(frozen=True)
class GraspReport:
    contact_count: int
    min_distance: float
    penetration: Optional[bool]  # None when the probe mesh is not watertight
    penetrating_vertices: Optional[int]

    def as_dict(self):
        return {
            "contact_count": self.contact_count,
            "min_distance": self.min_distance,
            "penetration": self.penetration,
            "penetrating_vertices": self.penetrating_vertices,
        }


# ---------------------------------------------------------------------------
# file IO


def load_mesh(path, label: str = "other") -> TriMesh:
    """Read a triangulated Wavefront OBJ. Vertex order is preserved.

    Only ``v`` and ``f`` records matter; faces may use ``v/vt/vn`` syntax and
    negative (relative) indices. Quads and larger polygons are rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise MeshNotFoundError(f"mesh file not found: {path}")
    verts, faces = [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(parts) < 4:
                        raise ValueError("vertex needs 3 coordinates")
                elif parts[0] == "f":
                    if len(parts) != 4:
                        raise ValueError(f"only triangular faces are supported, got {len(parts) - 1} corners")
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        if i == 0:
                            raise ValueError("OBJ indices are 1-based")
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    faces.append(idx)
            except ValueError as exc:
                raise MeshParseError(f"{path}:{lineno}: {exc}") from None
    if not verts or not faces:
        raise EmptyMeshError(f"mesh has no vertices or faces: {path}")
    v = np.array(verts)
    f = np.array(faces, dtype=np.int64)
    if f.min() < 0 or f.max() >= len(v):
        bad = int(f.max()) + 1 if f.max() >= len(v) else int(f.min()) + 1
        raise MeshIndexError(f"{path}: face references vertex {bad} but only {len(v)} exist")
    if not np.all(np.isfinite(v)):
        raise MeshParseError(f"{path}: non-finite vertex coordinate")
    try:
        return TriMesh(v, f, label)
    except MeshIndexError:
        raise
    except ValueError as exc:
        raise MeshParseError(f"{path}: {exc}") from None


def save_mesh(mesh: TriMesh, path) -> None:
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in (mesh.triangles + 1).tolist():
            fh.write(f"f {a} {b} {c}\n")


def rig_to_dict(rig: HandRig) -> dict:
    weights = []
    for row in rig.skin_weights:
        nz = np.nonzero(row)[0]
        weights.append([[int(j), float(row[j])] for j in nz])
    return {
        "format_version": RIG_FORMAT,
        "joints": [
            {
                "name": j.name,
                "parent": j.parent,
                "rest_rotation": j.rest_rotation.tolist(),
                "rest_translation": j.rest_translation.tolist(),
            }
            for j in rig.joints
        ],
        "keypoint_map": list(rig.keypoint_map),
        "vertices": rig.mesh.vertices.tolist(),
        "triangles": rig.mesh.triangles.tolist(),
        "arm_triangles": np.nonzero(rig.arm_triangles)[0].tolist(),
        "skin_weights": weights,
    }


def rig_from_dict(data: dict) -> HandRig:
    if data.get("format_version") != RIG_FORMAT:
        raise AssetError(f"unsupported rig format {data.get('format_version')!r}")
    joints = tuple(
        Joint(j["name"], j["parent"], np.asarray(j["rest_rotation"]), np.asarray(j["rest_translation"]))
        for j in data["joints"]
    )
    mesh = TriMesh(np.asarray(data["vertices"], float), np.asarray(data["triangles"], np.int64), "hand")
    w = np.zeros((mesh.n_vertices, len(joints)))
    if len(data["skin_weights"]) != mesh.n_vertices:
        raise AssetError("skin_weights needs one entry per vertex")
    for vi, pairs in enumerate(data["skin_weights"]):
        for j, wt in pairs:
            w[vi, int(j)] += wt
    arm = np.zeros(mesh.n_triangles, bool)
    arm[np.asarray(data.get("arm_triangles", []), dtype=np.int64)] = True
    return HandRig(joints, w, mesh, tuple(data["keypoint_map"]), arm)


def load_rig(path) -> HandRig:
    path = Path(path)
    if not path.is_file():
        raise AssetError(f"rig file not found: {path}")
    try:
        return rig_from_dict(json.loads(path.read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise AssetError(f"{path}: malformed rig file ({exc})") from None


def save_rig(rig: HandRig, path) -> None:
    Path(path).write_text(json.dumps(rig_to_dict(rig)))


def grasp_to_dict(pose: GraspPose) -> dict:
    return {
        "format_version": GRASP_FORMAT,
        "grasp_id": pose.grasp_id,
        "probe_euler_deg": pose.probe_euler_deg.tolist(),
        "probe_translation": pose.probe_translation.tolist(),
        "hand_translation": pose.hand_translation.tolist(),
        "joint_rotations": pose.joint_rotations.tolist(),
    }


def grasp_from_dict(data: dict) -> GraspPose:
    if data.get("format_version") != GRASP_FORMAT:
        raise AssetError(f"unsupported grasp format {data.get('format_version')!r}")
    return GraspPose(
        str(data["grasp_id"]),
        np.asarray(data["hand_translation"], float),
        np.asarray(data["joint_rotations"], float),
        np.asarray(data["probe_euler_deg"], float),
        np.asarray(data.get("probe_translation", [0.0, 0.0, 0.0]), float),
    )


def load_grasp(path) -> GraspPose:
    path = Path(path)
    if not path.is_file():
        raise AssetError(f"grasp file not found: {path}")
    try:
        return grasp_from_dict(json.loads(path.read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise AssetError(f"{path}: malformed grasp file ({exc})") from None


def save_grasp(pose: GraspPose, path) -> None:
    Path(path).write_text(json.dumps(grasp_to_dict(pose), indent=1) + "\n")


def data_path(*parts) -> Path:
    """Path of a file bundled under ``graspsynth/data``."""
    return Path(__file__).resolve().parent.joinpath("data", *parts)


def default_rig() -> HandRig:
    return load_rig(data_path("hand_rig.json"))


def default_probe(z_offset: float = DEFAULT_Z_OFFSET) -> ProbeModel:
    return ProbeModel(load_mesh(data_path("probe.obj"), "probe"), z_offset)


def bundled_grasp_files() -> list:
    return sorted(data_path("grasps").glob("*.json"))


# ---------------------------------------------------------------------------
# grasp geometry


def bps_encode(cloud, basis: BasisPointSet) -> np.ndarray:
    """Distance from every basis point to its nearest cloud point."""
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(cloud) == 0:
        raise ValueError("bps_encode needs a non-empty point cloud")
    return kernels.nearest_distances(basis.basis_points, cloud)


def hand_object_distances(hand_vertices, probe_vertices) -> np.ndarray:
    """Per hand vertex, the distance to the closest probe vertex."""
    hand = np.asarray(hand_vertices, dtype=np.float64).reshape(-1, 3)
    probe = np.asarray(probe_vertices, dtype=np.float64).reshape(-1, 3)
    if len(hand) == 0 or len(probe) == 0:
        raise ValueError("hand_object_distances needs non-empty vertex lists")
    return kernels.nearest_distances(hand, probe)


def apply_z_offset(probe_translation, dz: float) -> np.ndarray:
    """Probe translation corrected by ``(0, 0, -dz)``."""
    out = np.array(probe_translation, dtype=np.float64).reshape(3)
    out[2] = out[2] + (-dz)
    return out


def probe_pose(pose: GraspPose, probe: ProbeModel):
    """World rotation and z-offset-corrected translation of the probe for a grasp."""
    return euler_matrix_deg(pose.probe_euler_deg), apply_z_offset(pose.probe_translation, probe.z_offset)


def object_corner_keypoints(probe: ProbeModel, rotation, translation) -> np.ndarray:
    """The 8 corners of the probe's object-frame box under a rigid pose.

    Corner ``k`` takes x from max if bit 2 of k is set (min otherwise), y from
    bit 1 and z from bit 0, i.e. ``k = 4*ix + 2*iy + iz``.
    """
    lo, hi = probe.corner_source
    corners = np.array(
        [[(hi if (k >> 2) & 1 else lo)[0], (hi if (k >> 1) & 1 else lo)[1], (hi if k & 1 else lo)[2]]
         for k in range(8)]
    )
    return transform_points(rotation, translation, corners)


def joint_globals(rig: HandRig, pose: GraspPose) -> np.ndarray:
    """Posed global 4x4 transforms per joint, hand translation included."""
    if len(pose.joint_rotations) != rig.n_joints:
        raise ValueError(f"pose has {len(pose.joint_rotations)} joint rotations, rig has {rig.n_joints} joints")
    out = []
    for j, rot in zip(rig.joints, pose.joint_rotations):
        local = homogeneous(j.rest_rotation @ axis_angle_matrix(rot), j.rest_translation)
        if j.parent is None:
            out.append(homogeneous(np.eye(3), pose.hand_translation) @ local)
        else:
            out.append(out[j.parent] @ local)
    return np.stack(out)


def skin_hand(rig: HandRig, pose: GraspPose):
    """Linear blend skinning. Returns ``(posed_mesh, joints_3d)``."""
    g = joint_globals(rig, pose)
    skin = g @ np.linalg.inv(rig.rest_globals())
    blend = np.einsum("vj,jab->vab", rig.skin_weights, skin[:, :3, :])
    v = rig.mesh.vertices
    posed = np.einsum("vab,vb->va", blend[:, :, :3], v) + blend[:, :, 3]
    joints_3d = g[list(rig.keypoint_map), :3, 3]
    return TriMesh(posed, rig.mesh.triangles, rig.mesh.label), joints_3d


def points_inside(mesh: TriMesh, points) -> np.ndarray:
    """Ray-parity inside test; only meaningful for a watertight mesh."""
    v0, e1, e2 = mesh.triangle_arrays()
    return kernels.count_crossings(points, _PARITY_DIR, v0, e1, e2) % 2 == 1


def validate_grasp(rig: HandRig, pose: GraspPose, probe: ProbeModel,
                   contact_threshold: float = DEFAULT_CONTACT_THRESHOLD) -> GraspReport:
    """Contact and penetration summary of a grasp against the probe.

    Contacts count hand vertices strictly closer than ``contact_threshold``
    to a probe vertex. Penetration is reported as ``None`` when the probe mesh
    is not watertight, since parity is undefined there.
    """
    if not contact_threshold > 0:
        raise ValueError("contact_threshold must be positive")
    posed, _ = skin_hand(rig, pose)
    hand = posed.vertices[rig.hand_vertex_mask()]
    rot, trans = probe_pose(pose, probe)
    probe_world = probe.mesh.transformed(rot, trans)
    dist = hand_object_distances(hand, probe_world.vertices)
    inside = None
    n_inside = None
    if probe_world.is_watertight():
        mask = points_inside(probe_world, hand)
        n_inside = int(mask.sum())
        inside = n_inside > 0
    return GraspReport(int(np.sum(dist < contact_threshold)), float(dist.min()), inside, n_inside)
