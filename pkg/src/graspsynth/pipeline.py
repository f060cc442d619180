"""Frame combinatorics, scene assembly and the on-disk dataset writer.

Frames are the Cartesian product grasp x viewpoint x distance x background x
glove colour, enumerated in that (grasp-major) order; a frame's index is its
position in this enumeration and is part of the dataset format.
"""
from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from graspsynth import assets as A
from graspsynth import renderer as R
from graspsynth.viewsphere import (
    SphereConfig, camera_from_viewpoint, generate_viewpoints, viewpoints_from_angles,
)

log = logging.getLogger(__name__)

CONFIG_FORMAT = "graspsynth-config/1"
ANNOTATION_FORMAT = "graspsynth-annotation/1"
MANIFEST_FORMAT = "graspsynth-manifest/1"
OUTPUT_ENV = "GRASPSYNTH_OUTPUT_DIR"
SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.json"
ANNOTATION_NAME = "annotation.json"

GLOVE_COLORS = ((0.56, 0.59, 0.77), (0.38, 0.62, 0.87))
ARM_COLOR = (1.0, 0.68, 0.38)
PROBE_COLOR = (0.82, 0.82, 0.84)
DISTANCES = (0.5, 0.8)


class ConfigError(ValueError):
    pass


class FrameGenerationError(RuntimeError):
    def __init__(self, frame_index, message):
        super().__init__(frame_index, message)
        self.frame_index = frame_index
        self.message = message

    def __str__(self):
        return f"frame {self.frame_index}: {self.message}"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class GenerationConfig:
    grasp_files: tuple
    backgrounds: tuple
    split: dict
    sphere: SphereConfig = field(default_factory=SphereConfig)
    distances: tuple = DISTANCES
    glove_colors: tuple = GLOVE_COLORS
    arm_color: tuple = ARM_COLOR
    probe_color: tuple = PROBE_COLOR
    global_seed: int = 0
    image_size: tuple = (256, 256)
    vfov: float = 60.0
    output_dir: Optional[str] = None
    explicit_viewpoints: Optional[tuple] = None  # (theta, phi) pairs replacing the sphere layout
    viewpoint_indices: Optional[tuple] = None  # keep only these generated viewpoint indices
    rig_file: Optional[str] = None
    probe_mesh: Optional[str] = None
    z_offset: float = A.DEFAULT_Z_OFFSET
    ambient: float = 0.3
    shadows: bool = False
    aa_samples: int = 1
    raw_depth: bool = False

    def __post_init__(self):
        for name in ("grasp_files", "backgrounds", "distances"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "glove_colors", tuple(tuple(float(c) for c in g) for g in self.glove_colors))
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))
        object.__setattr__(self, "split", dict(self.split))
        for g in self.glove_colors + (tuple(self.arm_color), tuple(self.probe_color)):
            if len(g) != 3 or not all(0.0 <= c <= 1.0 for c in g):
                raise ConfigError(f"colours must be RGB triples in [0, 1], got {g}")
        if any(not d > 0 for d in self.distances):
            raise ConfigError("camera distances must be positive")
        bad = {s for s in self.split.values() if s not in SPLITS}
        if bad:
            raise ConfigError(f"unknown split names {sorted(bad)}; expected {SPLITS}")

    def render_config(self, seed: int = 0) -> R.RenderConfig:
        return R.RenderConfig(shadows=self.shadows, aa_samples=self.aa_samples, aa_seed=seed)


def config_to_dict(cfg: GenerationConfig, include_output: bool = True) -> dict:
    d = {
        "format_version": CONFIG_FORMAT,
        "grasp_files": [str(p) for p in cfg.grasp_files],
        "backgrounds": [str(b) for b in cfg.backgrounds],
        "split": dict(sorted(cfg.split.items())),
        "sphere": {
            "r_sph": cfg.sphere.r_sph,
            "r_circ": cfg.sphere.r_circ,
            "include_poles": cfg.sphere.include_poles,
            "excluded_indices": sorted(cfg.sphere.excluded_indices),
            "center": list(cfg.sphere.center),
        },
        "distances": list(cfg.distances),
        "glove_colors": [list(g) for g in cfg.glove_colors],
        "arm_color": list(cfg.arm_color),
        "probe_color": list(cfg.probe_color),
        "global_seed": cfg.global_seed,
        "image_size": list(cfg.image_size),
        "vfov": cfg.vfov,
        "explicit_viewpoints": None if cfg.explicit_viewpoints is None else [list(a) for a in cfg.explicit_viewpoints],
        "viewpoint_indices": None if cfg.viewpoint_indices is None else list(cfg.viewpoint_indices),
        "rig_file": cfg.rig_file,
        "probe_mesh": cfg.probe_mesh,
        "z_offset": cfg.z_offset,
        "ambient": cfg.ambient,
        "shadows": cfg.shadows,
        "aa_samples": cfg.aa_samples,
        "raw_depth": cfg.raw_depth,
    }
    if include_output:
        d["output_dir"] = cfg.output_dir
    return d


def _resolve(base: Path, p):
    if p is None:
        return None
    s = str(p)
    if s.startswith("color:"):
        return s
    q = Path(s).expanduser()
    return str(q if q.is_absolute() else (base / q).resolve())


def config_from_dict(data: dict, base_dir=".") -> GenerationConfig:
    """Build a config; relative paths are resolved against ``base_dir``."""
    if data.get("format_version") != CONFIG_FORMAT:
        raise ConfigError(f"unsupported config format {data.get('format_version')!r}")
    base = Path(base_dir)
    sphere = data.get("sphere", {})
    try:
        return GenerationConfig(
            grasp_files=tuple(_resolve(base, p) for p in data["grasp_files"]),
            backgrounds=tuple(_resolve(base, p) for p in data["backgrounds"]),
            split=data["split"],
            sphere=SphereConfig(
                sphere.get("r_sph", 0.8),
                sphere.get("r_circ", 0.15),
                sphere.get("include_poles", True),
                frozenset(sphere.get("excluded_indices", ())),
                tuple(sphere.get("center", (0.0, 0.0, 0.0))),
            ),
            distances=tuple(data.get("distances", DISTANCES)),
            glove_colors=tuple(tuple(g) for g in data.get("glove_colors", GLOVE_COLORS)),
            arm_color=tuple(data.get("arm_color", ARM_COLOR)),
            probe_color=tuple(data.get("probe_color", PROBE_COLOR)),
            global_seed=int(data.get("global_seed", 0)),
            image_size=tuple(data.get("image_size", (256, 256))),
            vfov=float(data.get("vfov", 60.0)),
            output_dir=_resolve(base, data.get("output_dir")),
            explicit_viewpoints=None if data.get("explicit_viewpoints") is None
            else tuple(tuple(a) for a in data["explicit_viewpoints"]),
            viewpoint_indices=None if data.get("viewpoint_indices") is None
            else tuple(int(i) for i in data["viewpoint_indices"]),
            rig_file=_resolve(base, data.get("rig_file")),
            probe_mesh=_resolve(base, data.get("probe_mesh")),
            z_offset=float(data.get("z_offset", A.DEFAULT_Z_OFFSET)),
            ambient=float(data.get("ambient", 0.3)),
            shadows=bool(data.get("shadows", False)),
            aa_samples=int(data.get("aa_samples", 1)),
            raw_depth=bool(data.get("raw_depth", False)),
        )
    except KeyError as exc:
        raise ConfigError(f"config is missing required field {exc}") from None


def load_config(path) -> GenerationConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data, path.parent)


def save_config(cfg: GenerationConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=1) + "\n")


# ---------------------------------------------------------------------------
# enumeration


@dataclass(frozen=True)
class FrameSpec:
    frame_index: int
    grasp_id: str
    grasp_slot: int
    viewpoint_index: int
    viewpoint_slot: int
    distance: float
    background_index: int
    glove_index: int
    lighting_seed: int


def lighting_seed(global_seed: int, frame_index: int) -> int:
    """63-bit BLAKE2b hash of ``"<global_seed>:<frame_index>"``."""
    h = hashlib.blake2b(f"{global_seed}:{frame_index}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") & 0x7FFF_FFFF_FFFF_FFFF


def config_viewpoints(cfg: GenerationConfig) -> list:
    if cfg.explicit_viewpoints is not None:
        return viewpoints_from_angles(cfg.explicit_viewpoints, cfg.sphere.r_sph, cfg.sphere.center)
    vps = generate_viewpoints(cfg.sphere)
    if cfg.viewpoint_indices is not None:
        by_index = {vp.index: vp for vp in vps}
        missing = [i for i in cfg.viewpoint_indices if i not in by_index]
        if missing:
            raise ConfigError(f"viewpoint_indices not among generated viewpoints: {missing}")
        vps = [by_index[i] for i in cfg.viewpoint_indices]
    return vps


def grasp_ids(cfg: GenerationConfig) -> list:
    """Grasp ids in config order; reads each grasp file's ``grasp_id`` field."""
    ids = []
    for p in cfg.grasp_files:
        path = Path(p)
        if not path.is_file():
            raise FileNotFoundError(f"grasp file not found: {path}")
        try:
            ids.append(str(json.loads(path.read_text())["grasp_id"]))
        except (KeyError, json.JSONDecodeError) as exc:
            raise A.AssetError(f"{path}: malformed grasp file ({exc})") from None
    if len(set(ids)) != len(ids):
        raise ConfigError("grasp ids must be unique")
    return ids


def factor_counts(cfg: GenerationConfig, viewpoints=None, ids=None) -> dict:
    viewpoints = config_viewpoints(cfg) if viewpoints is None else viewpoints
    ids = grasp_ids(cfg) if ids is None else ids
    return {
        "grasps": len(ids),
        "viewpoints": len(viewpoints),
        "distances": len(cfg.distances),
        "backgrounds": len(cfg.backgrounds),
        "glove_colors": len(cfg.glove_colors),
    }


def enumerate_frames(cfg: GenerationConfig, viewpoints=None, ids=None) -> list:
    """All frame specs: grasp (outermost), viewpoint, distance, background, glove (innermost)."""
    viewpoints = config_viewpoints(cfg) if viewpoints is None else viewpoints
    ids = grasp_ids(cfg) if ids is None else ids
    counts = factor_counts(cfg, viewpoints, ids)
    empty = [k for k, v in counts.items() if v == 0]
    if empty:
        raise ConfigError(f"empty factor list(s): {', '.join(empty)}")
    specs = []
    k = 0
    for gs, gid in enumerate(ids):
        for vs, vp in enumerate(viewpoints):
            for dist in cfg.distances:
                for b in range(len(cfg.backgrounds)):
                    for c in range(len(cfg.glove_colors)):
                        specs.append(FrameSpec(k, gid, gs, vp.index, vs, float(dist), b, c,
                                               lighting_seed(cfg.global_seed, k)))
                        k += 1
    return specs


def split_dataset(frames, assignment: dict) -> dict:
    """Frame indices per split; a frame belongs to its grasp's split."""
    out = {s: [] for s in SPLITS}
    for f in frames:
        gid = f.grasp_id if hasattr(f, "grasp_id") else f["grasp_id"]
        idx = f.frame_index if hasattr(f, "frame_index") else f["frame_index"]
        if gid not in assignment:
            raise ConfigError(f"grasp {gid!r} has no split assignment")
        split = assignment[gid]
        if split not in out:
            raise ConfigError(f"unknown split {split!r} for grasp {gid!r}")
        out[split].append(int(idx))
    for v in out.values():
        v.sort()
    return out


def check_split_assignment(cfg: GenerationConfig, ids) -> None:
    missing = [g for g in ids if g not in cfg.split]
    extra = [g for g in cfg.split if g not in ids]
    if missing or extra:
        raise ConfigError(f"split assignment must cover every grasp exactly once "
                          f"(unassigned: {missing}, unknown: {extra})")


# ---------------------------------------------------------------------------
# scene assembly


@dataclass(frozen=True, eq=False)
class AnnotationRecord:
    frame_index: int
    grasp_id: str
    image_size: tuple
    intrinsics: np.ndarray
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray
    hand_joints_3d: np.ndarray  # camera space, meters
    hand_joints_2d: np.ndarray
    object_corners_3d: np.ndarray
    object_corners_2d: np.ndarray
    probe_rotation: np.ndarray  # world
    probe_translation: np.ndarray  # world, z-offset corrected
    viewpoint_index: int
    viewpoint_euler_deg: tuple
    distance: float
    background_index: int
    glove_index: int
    lighting_seed: int
    behind_camera: bool = False

    def to_dict(self) -> dict:
        return {
            "format_version": ANNOTATION_FORMAT,
            "frame_index": self.frame_index,
            "grasp_id": self.grasp_id,
            "image_size": list(self.image_size),
            "camera": {
                "intrinsics": np.asarray(self.intrinsics).tolist(),
                "rotation": np.asarray(self.rotation).tolist(),
                "translation": np.asarray(self.translation).tolist(),
            },
            "hand_joints_3d": np.asarray(self.hand_joints_3d).tolist(),
            "hand_joints_2d": np.asarray(self.hand_joints_2d).tolist(),
            "object_corners_3d": np.asarray(self.object_corners_3d).tolist(),
            "object_corners_2d": np.asarray(self.object_corners_2d).tolist(),
            "probe_pose": {
                "rotation": np.asarray(self.probe_rotation).tolist(),
                "translation": np.asarray(self.probe_translation).tolist(),
            },
            "viewpoint": {"index": self.viewpoint_index, "euler_deg": list(self.viewpoint_euler_deg)},
            "provenance": {
                "distance": self.distance,
                "background_index": self.background_index,
                "glove_index": self.glove_index,
                "lighting_seed": self.lighting_seed,
            },
            "behind_camera": self.behind_camera,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        if d.get("format_version") != ANNOTATION_FORMAT:
            raise ValueError(f"unsupported annotation format {d.get('format_version')!r}")
        cam, prov = d["camera"], d["provenance"]
        arr = lambda x: np.asarray(x, dtype=np.float64)  # noqa: E731
        return cls(
            d["frame_index"], d["grasp_id"], tuple(d["image_size"]), arr(cam["intrinsics"]),
            arr(cam["rotation"]), arr(cam["translation"]),
            arr(d["hand_joints_3d"]).reshape(-1, 3), arr(d["hand_joints_2d"]).reshape(-1, 2),
            arr(d["object_corners_3d"]).reshape(-1, 3), arr(d["object_corners_2d"]).reshape(-1, 2),
            arr(d["probe_pose"]["rotation"]), arr(d["probe_pose"]["translation"]),
            d["viewpoint"]["index"], tuple(d["viewpoint"]["euler_deg"]), prov["distance"],
            prov["background_index"], prov["glove_index"], prov["lighting_seed"], d.get("behind_camera", False),
        )


def project_with_intrinsics(k, cam):
    """Pinhole projection of camera-space points with a 3x3 intrinsics matrix."""
    cam = np.asarray(cam, float).reshape(-1, 3)
    k = np.asarray(k, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k[0, 0] * (cam[:, 0] / cam[:, 2]) + k[0, 2]
        v = k[1, 1] * (cam[:, 1] / cam[:, 2]) + k[1, 2]
    return np.stack([u, v], axis=1)


def reprojection_error(record: AnnotationRecord) -> float:
    """Largest pixel gap between stored 2D points and the projection of stored 3D points."""
    err = 0.0
    for p3, p2 in ((record.hand_joints_3d, record.hand_joints_2d),
                   (record.object_corners_3d, record.object_corners_2d)):
        proj = project_with_intrinsics(record.intrinsics, p3)
        err = max(err, float(np.max(np.abs(proj - np.asarray(p2)))))
    return err


class SceneAssets:
    """Everything a frame needs that does not depend on the frame: rig, probe,
    grasps, viewpoints and backgrounds. Read-only once built."""

    def __init__(self, cfg: GenerationConfig):
        self.cfg = cfg
        self.rig = A.load_rig(cfg.rig_file) if cfg.rig_file else A.default_rig()
        mesh = A.load_mesh(cfg.probe_mesh, "probe") if cfg.probe_mesh else A.default_probe().mesh
        self.probe = A.ProbeModel(mesh.with_label("probe"), cfg.z_offset)
        self.grasps = {}
        for p in cfg.grasp_files:
            g = A.load_grasp(p)
            self.grasps[g.grasp_id] = g
        self.viewpoints = config_viewpoints(cfg)
        w, h = cfg.image_size
        self.backgrounds = [_load_background(b, w, h) for b in cfg.backgrounds]
        self._posed = {}

    def posed_hand(self, grasp_id):
        if grasp_id not in self._posed:
            g = self.grasps[grasp_id]
            mesh, joints = A.skin_hand(self.rig, g)
            hand = mesh.submesh(~self.rig.arm_triangles, "hand")
            arm = mesh.submesh(self.rig.arm_triangles, "arm") if self.rig.arm_triangles.any() else None
            self._posed[grasp_id] = (hand, arm, joints)
        return self._posed[grasp_id]


def _load_background(spec, w, h):
    s = str(spec)
    if s.startswith("color:"):
        rgb = tuple(float(c) for c in s[len("color:"):].split(","))
        if len(rgb) != 3 or not all(0 <= c <= 1 for c in rgb):
            raise ConfigError(f"bad background colour {s!r}")
        return rgb
    path = Path(s)
    if not path.is_file():
        raise FileNotFoundError(f"background image not found: {path}")
    return R.load_background(path, w, h)


def sample_lights(seed: int, target, camera_position):
    """1-3 point lights on the camera-side hemisphere around ``target``."""
    rng = np.random.default_rng(seed)
    target = np.asarray(target, float)
    view = np.asarray(camera_position, float) - target
    view /= np.linalg.norm(view)
    lights = []
    for _ in range(int(rng.integers(1, 4))):
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        if d @ view < 0:
            d = -d
        pos = target + d * rng.uniform(0.8, 1.5)
        tint = 1.0 - 0.15 * rng.random(3)
        lights.append(R.Light(tuple(pos.tolist()), float(rng.uniform(0.5, 1.5)), tuple(tint.tolist())))
    return tuple(lights)


def assemble_scene(spec: FrameSpec, cfg: GenerationConfig, assets: SceneAssets):
    """(RenderScene, CameraView, AnnotationRecord) for one frame spec."""
    if spec.grasp_id not in assets.grasps:
        raise A.AssetError(f"grasp {spec.grasp_id!r} not loaded")
    grasp = assets.grasps[spec.grasp_id]
    hand, arm, joints = assets.posed_hand(spec.grasp_id)
    p_rot, p_trans = A.probe_pose(grasp, assets.probe)
    centroid = hand.vertices.mean(axis=0)
    vp = assets.viewpoints[spec.viewpoint_slot]
    cam = camera_from_viewpoint(vp, spec.distance, cfg.image_size, cfg.vfov, center=centroid,
                                sphere_center=cfg.sphere.center)

    objects = [R.SceneObject(hand, color=cfg.glove_colors[spec.glove_index])]
    if arm is not None:
        objects.append(R.SceneObject(arm, color=tuple(cfg.arm_color)))
    objects.append(R.SceneObject(assets.probe.mesh, p_rot, p_trans, tuple(cfg.probe_color)))
    scene = R.RenderScene(
        objects,
        sample_lights(spec.lighting_seed, centroid, cam.position),
        cfg.ambient,
        assets.backgrounds[spec.background_index],
    )

    j_cam = cam.world_to_camera(joints)
    corners = A.object_corner_keypoints(assets.probe, p_rot, p_trans)
    c_cam = cam.world_to_camera(corners)
    k = cam.intrinsics
    behind = bool(np.any(j_cam[:, 2] <= 0) or np.any(c_cam[:, 2] <= 0))
    if behind:
        log.warning("frame %d has keypoints behind the camera", spec.frame_index)
    record = AnnotationRecord(
        spec.frame_index, spec.grasp_id, tuple(cfg.image_size), k, cam.rotation, cam.translation,
        j_cam, project_with_intrinsics(k, j_cam), c_cam, project_with_intrinsics(k, c_cam),
        p_rot, p_trans, vp.index, vp.euler_deg, spec.distance, spec.background_index,
        spec.glove_index, spec.lighting_seed, behind,
    )
    return scene, cam, record


# ---------------------------------------------------------------------------
# dataset writer


@dataclass
class DatasetManifest:
    config: dict
    frame_count: int
    factors: dict
    splits: dict
    frames: list
    format_version: str = MANIFEST_FORMAT

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "config": self.config,
            "frame_count": self.frame_count,
            "factors": self.factors,
            "splits": self.splits,
            "frames": self.frames,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        if d.get("format_version") != MANIFEST_FORMAT:
            raise ValueError(f"unsupported manifest format {d.get('format_version')!r}")
        return cls(d["config"], d["frame_count"], d["factors"], d["splits"], d["frames"], d["format_version"])

    def split_counts(self) -> dict:
        return {k: len(v) for k, v in self.splits.items()}


def frame_dir_name(index: int) -> str:
    return f"frames/frame_{index:06d}"


def build_manifest(cfg: GenerationConfig, specs, entries=None, factors=None) -> DatasetManifest:
    """Manifest for ``specs``; ``entries`` (per-frame file listings) default to the
    standard layout without checking the disk."""
    if factors is None:
        factors = factor_counts(cfg)
    ids = list(dict.fromkeys(s.grasp_id for s in specs))
    check_split_assignment(cfg, ids)
    if entries is None:
        entries = [_frame_entry(s, dict(R.PASS_FILES), False) for s in specs]
    return DatasetManifest(
        config=config_to_dict(cfg, include_output=False),
        frame_count=len(specs),
        factors=factors,
        splits=split_dataset(specs, cfg.split),
        frames=list(entries),
    )


def _frame_entry(spec, files, flagged):
    return {
        "frame_index": spec.frame_index,
        "grasp_id": spec.grasp_id,
        "path": frame_dir_name(spec.frame_index),
        "files": dict(files, annotation=ANNOTATION_NAME),
        "behind_camera": flagged,
    }


def render_frame(spec: FrameSpec, cfg: GenerationConfig, assets: SceneAssets, out_dir) -> dict:
    """Render and write one frame; returns its manifest entry."""
    scene, cam, record = assemble_scene(spec, cfg, assets)
    frames = R.render_frameset(scene, cam, cfg.render_config(spec.lighting_seed), gt=record)
    d = Path(out_dir) / frame_dir_name(spec.frame_index)
    files = R.write_frameset(frames, d, raw_depth=cfg.raw_depth)
    (d / ANNOTATION_NAME).write_text(json.dumps(record.to_dict(), indent=1) + "\n")
    return _frame_entry(spec, files, record.behind_camera)


_WORKER = {}


def _init_worker(cfg, out_dir):
    _WORKER["cfg"] = cfg
    _WORKER["assets"] = SceneAssets(cfg)
    _WORKER["out"] = out_dir


def _worker_render(spec):
    try:
        return render_frame(spec, _WORKER["cfg"], _WORKER["assets"], _WORKER["out"])
    except Exception as exc:  # re-raised in the coordinator with the frame index
        raise FrameGenerationError(spec.frame_index, f"{type(exc).__name__}: {exc}") from None


def resolve_output_dir(cfg: GenerationConfig, out_dir=None) -> Path:
    """``out_dir`` argument, then $GRASPSYNTH_OUTPUT_DIR, then the config's output_dir."""
    chosen = out_dir or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    if not chosen:
        raise ConfigError(f"no output directory (pass one, set ${OUTPUT_ENV}, or set output_dir)")
    return Path(chosen)


def _mp_context():
    methods = multiprocessing.get_all_start_methods()
    return multiprocessing.get_context("fork" if "fork" in methods else "spawn")


def generate_dataset(cfg: GenerationConfig, jobs: int = 1, out_dir=None, progress=None) -> DatasetManifest:
    """Render every frame and write the manifest last.

    Output bytes do not depend on ``jobs``. A directory without
    ``manifest.json`` is an incomplete run.
    """
    out = resolve_output_dir(cfg, out_dir)
    viewpoints = config_viewpoints(cfg)
    ids = grasp_ids(cfg)
    check_split_assignment(cfg, ids)
    specs = enumerate_frames(cfg, viewpoints, ids)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / MANIFEST_NAME
    if manifest_path.exists():
        manifest_path.unlink()

    entries = []
    if jobs <= 1:
        assets = SceneAssets(cfg)
        for spec in specs:
            try:
                entries.append(render_frame(spec, cfg, assets, out))
            except Exception as exc:
                raise FrameGenerationError(spec.frame_index, f"{type(exc).__name__}: {exc}") from exc
            if progress:
                progress(len(entries), len(specs))
    else:
        SceneAssets(cfg)  # fail fast on missing assets before forking
        with ProcessPoolExecutor(jobs, mp_context=_mp_context(), initializer=_init_worker,
                                 initargs=(cfg, out)) as pool:
            chunk = max(1, len(specs) // (jobs * 4))
            for entry in pool.map(_worker_render, specs, chunksize=chunk):
                entries.append(entry)
                if progress:
                    progress(len(entries), len(specs))

    manifest = build_manifest(cfg, specs, entries, factor_counts(cfg, viewpoints, ids))
    tmp = out / (MANIFEST_NAME + ".tmp")
    tmp.write_text(json.dumps(manifest.to_dict(), indent=1) + "\n")
    os.replace(tmp, manifest_path)
    return manifest


def generate_frame(cfg: GenerationConfig, frame_index: int, out_dir=None) -> dict:
    """Re-render a single frame by index (no manifest update)."""
    out = resolve_output_dir(cfg, out_dir)
    specs = enumerate_frames(cfg)
    if not 0 <= frame_index < len(specs):
        raise IndexError(f"frame index {frame_index} outside 0..{len(specs) - 1}")
    return render_frame(specs[frame_index], cfg, SceneAssets(cfg), out)


def load_manifest(dataset_dir) -> DatasetManifest:
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"no manifest in {dataset_dir} (missing or incomplete dataset)")
    return DatasetManifest.from_dict(json.loads(path.read_text()))


def load_annotation(dataset_dir, entry: dict) -> AnnotationRecord:
    path = Path(dataset_dir) / entry["path"] / entry["files"]["annotation"]
    return AnnotationRecord.from_dict(json.loads(path.read_text()))


# ---------------------------------------------------------------------------
# demo material


def write_demo_backgrounds(directory, size=(256, 256), seed: int = 7) -> list:
    """Eight synthetic stand-in backgrounds: plain white, a room-like gradient,
    three phantom-like blue-grey textures and three skin-tone gradients."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    w, h = size
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    imgs = [np.ones((h, w, 3))]
    imgs.append(np.stack([0.85 - 0.2 * yy, 0.78 - 0.2 * yy, 0.65 - 0.15 * yy], axis=-1))
    for k in range(3):
        base = np.array([0.45, 0.52, 0.62]) + 0.05 * k
        noise = rng.random((h // 8 + 1, w // 8 + 1))
        noise = np.kron(noise, np.ones((8, 8)))[:h, :w]
        imgs.append(np.clip(base + 0.15 * (noise[..., None] - 0.5), 0, 1))
    for tone in ((0.93, 0.80, 0.70), (0.62, 0.44, 0.32), (0.30, 0.20, 0.15)):
        shade = 1.0 - 0.25 * ((xx - 0.5) ** 2 + (yy - 0.5) ** 2) * 4
        imgs.append(np.clip(np.array(tone) * shade[..., None], 0, 1))
    paths = []
    for i, img in enumerate(imgs):
        p = directory / f"background_{i}.png"
        Image.fromarray(R.quantize_rgb(img), "RGB").save(p, format="PNG")
        paths.append(p)
    return paths


DEFAULT_SPLIT = {f"grasp_{i:02d}": ("train" if i <= 7 else "val" if i <= 9 else "test") for i in range(1, 12)}


def demo_config(directory, image_size=(256, 256), viewpoint_indices=None, n_grasps: int = 11,
                n_backgrounds: int = 8, distances=DISTANCES, glove_colors=GLOVE_COLORS,
                global_seed: int = 0) -> GenerationConfig:
    """Config over the bundled grasps and freshly written demo backgrounds."""
    directory = Path(directory).resolve()
    backgrounds = write_demo_backgrounds(directory / "backgrounds", image_size)[:n_backgrounds]
    files = A.bundled_grasp_files()[:n_grasps]
    ids = [Path(f).stem for f in files]
    return GenerationConfig(
        grasp_files=tuple(str(f) for f in files),
        backgrounds=tuple(str(b) for b in backgrounds),
        split={g: DEFAULT_SPLIT.get(g, "train") for g in ids},
        distances=tuple(distances),
        glove_colors=tuple(glove_colors),
        image_size=tuple(image_size),
        viewpoint_indices=None if viewpoint_indices is None else tuple(viewpoint_indices),
        global_seed=global_seed,
        output_dir=str(directory / "dataset"),
    )
