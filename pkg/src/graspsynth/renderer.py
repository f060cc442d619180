"""Deterministic CPU ray-casting renderer.

One primary ray per pixel centre (optionally jittered supersampling for the
RGB passes), Lambertian + ambient shading from point lights, flat per-object
colours, and screen-space background images. Every pass is derived from
three single-group traces (hand, arm, probe) through one shared BVH, so the
depth/segmentation passes are consistent by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from graspsynth import kernels
from graspsynth.assets import TriMesh
from graspsynth.viewsphere import CameraView

SEG_LABELS = {"hand": 1, "arm": 2, "probe": 3}
GROUPS = ("hand", "arm", "probe")
PASS_NAMES = ("rgb", "depth", "depth_hand", "depth_probe", "rgb_no_hand", "rgb_no_probe",
              "segmentation", "rgb_gt_overlay")
PASS_FILES = {
    "rgb": "rgb.png",
    "depth": "depth.png",
    "depth_hand": "depth_hand.png",
    "depth_probe": "depth_probe.png",
    "rgb_no_hand": "rgb_no_hand.png",
    "rgb_no_probe": "rgb_no_probe.png",
    "segmentation": "segmentation.png",
    "rgb_gt_overlay": "rgb_gt.png",
}
HAND_MARK = (1.0, 0.0, 0.0)
CORNER_MARK = (0.0, 1.0, 0.0)
_SHADOW_BIAS = 1e-6


class EmptySceneError(ValueError):
    pass


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SceneObject:
    mesh: TriMesh
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    color: tuple = (0.8, 0.8, 0.8)

    def world_mesh(self) -> TriMesh:
        return self.mesh.transformed(self.rotation, self.translation)


@dataclass(frozen=True)
class Light:
    position: tuple
    intensity: float = 1.0
    color: tuple = (1.0, 1.0, 1.0)


@dataclass(frozen=True, eq=False)
class RenderScene:
    objects: tuple
    lights: tuple = ()
    ambient: float = 0.3
    background: object = (1.0, 1.0, 1.0)  # RGB triple or (H, W, 3) float image

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "lights", tuple(self.lights))
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError("ambient must lie in [0, 1]")
        for light in self.lights:
            if light.intensity < 0:
                raise ValueError("light intensities must be non-negative")
        for obj in self.objects:
            if obj.mesh.label not in SEG_LABELS:
                raise ValueError(f"scene objects must be hand, arm or probe, got {obj.mesh.label!r}")


@dataclass(frozen=True)
class RenderConfig:
    shadows: bool = False
    aa_samples: int = 1
    aa_seed: int = 0

    def __post_init__(self):
        if self.aa_samples < 1:
            raise ValueError("aa_samples must be >= 1")


@dataclass(eq=False)
class FrameSet:
    rgb: np.ndarray
    depth: np.ndarray
    depth_hand: np.ndarray
    depth_probe: np.ndarray
    rgb_no_hand: np.ndarray
    rgb_no_probe: np.ndarray
    segmentation: np.ndarray
    rgb_gt_overlay: np.ndarray

    def passes(self) -> dict:
        return {name: getattr(self, name) for name in PASS_NAMES}


@dataclass(frozen=True)
class Hit:
    object_id: int
    triangle_id: int
    depth: float
    normal: np.ndarray
    position: np.ndarray


class Bvh:
    """Flat median-split BVH over all world-space scene triangles.

    ``node_lo``/``node_hi`` are the exact node boxes; traversal uses copies
    padded by a tiny margin so grazing hits on box faces are never culled.
    Leaves reference ``tri_index[start:start + count]``; every global
    triangle id maps back to ``(tri_object[g], tri_local[g])``.
    """

    LEAF_SIZE = 4

    def __init__(self, meshes, labels=None):
        meshes = list(meshes)
        if not meshes or sum(m.n_triangles for m in meshes) == 0:
            raise EmptySceneError("cannot build a BVH over an empty scene")
        v0s, e1s, e2s, objs, locs = [], [], [], [], []
        for oid, m in enumerate(meshes):
            v0, e1, e2 = m.triangle_arrays()
            v0s.append(v0)
            e1s.append(e1)
            e2s.append(e2)
            objs.append(np.full(m.n_triangles, oid, dtype=np.int64))
            locs.append(np.arange(m.n_triangles, dtype=np.int64))
        self.n_objects = len(meshes)
        self.labels = tuple(labels) if labels is not None else tuple(m.label for m in meshes)
        self.v0 = np.ascontiguousarray(np.concatenate(v0s))
        self.e1 = np.ascontiguousarray(np.concatenate(e1s))
        self.e2 = np.ascontiguousarray(np.concatenate(e2s))
        self.tri_object = np.concatenate(objs)
        self.tri_local = np.concatenate(locs)
        n = self.n_triangles = len(self.v0)
        p = np.stack([self.v0, self.v0 + self.e1, self.v0 + self.e2], axis=1)
        self.tri_lo = p.min(axis=1)
        self.tri_hi = p.max(axis=1)
        normals = np.cross(self.e1, self.e2)
        lens = np.linalg.norm(normals, axis=1, keepdims=True)
        self.normals = np.divide(normals, lens, out=np.zeros_like(normals), where=lens > 0)

        lo, hi, left, right, axis, start, count = [], [], [], [], [], [], []
        order = []
        centroids = p.mean(axis=1)

        def build(idx):
            node = len(lo)
            lo.append(self.tri_lo[idx].min(axis=0))
            hi.append(self.tri_hi[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            axis.append(0)
            start.append(0)
            count.append(0)
            if len(idx) <= self.LEAF_SIZE:
                start[node] = len(order)
                count[node] = len(idx)
                order.extend(idx.tolist())
                return node
            c = centroids[idx]
            ax = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            idx = idx[np.argsort(c[:, ax], kind="stable")]
            mid = len(idx) // 2
            axis[node] = ax
            left[node] = build(idx[:mid])
            right[node] = build(idx[mid:])
            return node

        build(np.arange(n, dtype=np.int64))
        self.node_lo = np.array(lo)
        self.node_hi = np.array(hi)
        self.node_left = np.array(left, dtype=np.int64)
        self.node_right = np.array(right, dtype=np.int64)
        self.node_axis = np.array(axis, dtype=np.int64)
        self.node_start = np.array(start, dtype=np.int64)
        self.node_count = np.array(count, dtype=np.int64)
        self.tri_index = np.array(order, dtype=np.int64)
        scale = max(1.0, float(np.abs(np.concatenate([self.node_lo[:1], self.node_hi[:1]])).max()))
        pad = 1e-9 * scale
        self._pad_lo = np.ascontiguousarray(self.node_lo - pad)
        self._pad_hi = np.ascontiguousarray(self.node_hi + pad)

    @property
    def n_nodes(self) -> int:
        return len(self.node_lo)

    def kernel_arrays(self):
        return (self._pad_lo, self._pad_hi, self.node_left, self.node_right, self.node_axis,
                self.node_start, self.node_count, self.tri_index, self.v0, self.e1, self.e2, self.tri_object)

    def active_mask(self, labels=None) -> np.ndarray:
        """Per-object boolean mask of the objects whose label is in ``labels`` (all if None)."""
        if labels is None:
            return np.ones(self.n_objects, dtype=bool)
        return np.array([lab in labels for lab in self.labels], dtype=bool)

    def trace(self, origins, dirs, active=None):
        """Closest hit per ray: ``(t, global_triangle_id)``; ``inf``/``-1`` on miss."""
        if active is None:
            active = self.active_mask()
        return kernels.trace_bvh(origins, dirs, self.kernel_arrays(), active)

    def trace_brute(self, origins, dirs, active=None):
        """Same contract as :meth:`trace` but tests every triangle."""
        if active is None:
            active = self.active_mask()
        origins = np.asarray(origins, float).reshape(-1, 3)
        dirs = np.asarray(dirs, float).reshape(-1, 3)
        return kernels.trace_brute_np(origins, dirs, self.v0, self.e1, self.e2, self.tri_object,
                                      np.asarray(active, bool))


def build_bvh(scene: RenderScene) -> Bvh:
    if not scene.objects:
        raise EmptySceneError("scene has no objects")
    return Bvh([o.world_mesh() for o in scene.objects])


# ---------------------------------------------------------------------------
# cameras


def pixel_rays(camera: CameraView, xs, ys):
    """World rays through image positions ``(xs, ys)`` in pixel units.

    Directions are scaled so their camera-space z component is 1, which makes
    the hit parameter ``t`` equal to camera-space depth.
    """
    xs = np.asarray(xs, float).ravel()
    ys = np.asarray(ys, float).ravel()
    d_cam = np.stack([(xs - camera.cx) / camera.fx, (ys - camera.cy) / camera.fy, np.ones_like(xs)], axis=1)
    dirs = d_cam @ camera.rotation
    origins = np.broadcast_to(camera.position, dirs.shape)
    return np.ascontiguousarray(origins), np.ascontiguousarray(dirs)


def pixel_centers(camera: CameraView):
    ys, xs = np.mgrid[0 : camera.height, 0 : camera.width]
    return xs.ravel() + 0.5, ys.ravel() + 0.5


def trace_primary(bvh: Bvh, camera: CameraView, pixel) -> Optional[Hit]:
    x, y = pixel
    if not (0 <= x < camera.width and 0 <= y < camera.height):
        raise ValueError(f"pixel {pixel} outside the {camera.width}x{camera.height} image")
    o, d = pixel_rays(camera, [x + 0.5], [y + 0.5])
    t, g = bvh.trace(o, d)
    if g[0] < 0:
        return None
    g = int(g[0])
    n = bvh.normals[g]
    if n @ d[0] > 0:
        n = -n
    return Hit(int(bvh.tri_object[g]), int(bvh.tri_local[g]), float(t[0]), n, o[0] + t[0] * d[0])


def project_points(camera: CameraView, points_world):
    """Pinhole projection: ``(uv (N,2), camera-space points (N,3))``.

    No behind-camera check; callers test ``cam[:, 2] > 0``.
    """
    cam = camera.world_to_camera(points_world)
    return project_camera_points(camera, cam), cam


def project_camera_points(camera: CameraView, cam):
    cam = np.asarray(cam, float).reshape(-1, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * (cam[:, 0] / cam[:, 2]) + camera.cx
        v = camera.fy * (cam[:, 1] / cam[:, 2]) + camera.cy
    return np.stack([u, v], axis=1)


def project_point(camera: CameraView, p_world):
    """``(u, v, depth)`` of a world point; raises :class:`BehindCameraError` if z <= 0."""
    uv, cam = project_points(camera, p_world)
    z = float(cam[0, 2])
    if not z > 0:
        raise BehindCameraError(f"point is behind the camera (z = {z})")
    return float(uv[0, 0]), float(uv[0, 1]), z


# ---------------------------------------------------------------------------
# rendering


def background_image(background, width: int, height: int) -> np.ndarray:
    """(H, W, 3) float background: a solid colour or an image stretched to the frame."""
    if isinstance(background, np.ndarray) and background.ndim == 3:
        img = background
        if img.shape[:2] != (height, width):
            u8 = Image.fromarray(np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8), "RGB")
            img = np.asarray(u8.resize((width, height), Image.BILINEAR), dtype=np.float64) / 255.0
        return np.asarray(img, dtype=np.float64)
    rgb = np.asarray(background, dtype=np.float64).reshape(3)
    return np.broadcast_to(rgb, (height, width, 3)).copy()


def load_background(path, width: int, height: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB").resize((width, height), Image.BILINEAR)
        return np.asarray(im, dtype=np.float64) / 255.0


class _Tracer:
    """Per-group closest hits for one ray batch."""

    def __init__(self, bvh, scene, origins, dirs):
        self.bvh = bvh
        self.origins = origins
        self.dirs = dirs
        n = len(origins)
        self.t = np.full((len(GROUPS), n), np.inf)
        self.tri = np.full((len(GROUPS), n), -1, dtype=np.int64)
        if bvh is None:
            return
        for gi, group in enumerate(GROUPS):
            active = bvh.active_mask((group,))
            if active.any():
                self.t[gi], self.tri[gi] = bvh.trace(origins, dirs, active)

    def nearest(self, groups):
        """Closest hit among ``groups``: (t, tri, group index); ties go to the earlier group."""
        sel = [GROUPS.index(g) for g in groups]
        t = self.t[sel]
        k = np.argmin(t, axis=0)
        cols = np.arange(t.shape[1])
        best_t = t[k, cols]
        return best_t, self.tri[sel][k, cols], np.asarray(sel)[k]


def _shade(bvh, scene, colors, origins, dirs, t, tri, bg, groups, shadows):
    out = bg.copy()
    hit = tri >= 0
    if not hit.any():
        return out
    g = tri[hit]
    d = dirs[hit]
    p = origins[hit] + t[hit, None] * d
    n = bvh.normals[g]
    flip = np.einsum("ij,ij->i", n, d) > 0
    n = np.where(flip[:, None], -n, n)
    base = colors[bvh.tri_object[g]]
    light_sum = np.full((len(g), 3), scene.ambient)
    active = bvh.active_mask(groups) if shadows else None
    for light in scene.lights:
        to_l = np.asarray(light.position, float) - p
        dist = np.linalg.norm(to_l, axis=1)
        lam = np.maximum(0.0, np.einsum("ij,ij->i", n, to_l) / np.where(dist > 0, dist, 1.0))
        if shadows:
            so = p + n * _SHADOW_BIAS
            st, _ = bvh.trace(so, np.asarray(light.position, float) - so, active)
            lam = np.where(st < 1.0, 0.0, lam)
        light_sum += lam[:, None] * light.intensity * np.asarray(light.color, float)
    out[hit] = np.clip(base * light_sum, 0.0, 1.0)
    return out


def draw_marks(image, points_2d, color, valid=None):
    """Draw 3x3 squares centred on the pixels containing ``points_2d``."""
    h, w = image.shape[:2]
    pts = np.asarray(points_2d, float).reshape(-1, 2)
    valid = np.ones(len(pts), bool) if valid is None else np.asarray(valid, bool)
    for (u, v), ok in zip(pts, valid):
        if not ok or not (np.isfinite(u) and np.isfinite(v)):
            continue
        px, py = int(np.floor(u)), int(np.floor(v))
        x0, x1 = max(px - 1, 0), min(px + 2, w)
        y0, y1 = max(py - 1, 0), min(py + 2, h)
        if x0 < x1 and y0 < y1:
            image[y0:y1, x0:x1] = color
    return image


def render_frameset(scene: RenderScene, camera: CameraView, cfg: RenderConfig = RenderConfig(),
                    gt=None, bvh: Optional[Bvh] = None) -> FrameSet:
    """Render every pass for one camera.

    ``gt`` is anything with ``hand_joints_2d``/``object_corners_2d`` (and
    optionally ``hand_joints_3d``/``object_corners_3d`` in camera space, used
    to skip points behind the camera) and is drawn on the overlay pass.
    """
    w, h = camera.width, camera.height
    if bvh is None and scene.objects:
        bvh = build_bvh(scene)
    colors = np.array([o.color for o in scene.objects], float).reshape(-1, 3)
    bg = background_image(scene.background, w, h).reshape(-1, 3)

    xs, ys = pixel_centers(camera)
    origins, dirs = pixel_rays(camera, xs, ys)
    tracer = _Tracer(bvh, scene, origins, dirs)

    t_all, tri_all, grp = tracer.nearest(GROUPS)
    hit = np.isfinite(t_all)
    depth = np.where(hit, t_all, 0.0)
    seg = np.where(hit, np.array([SEG_LABELS[g] for g in GROUPS])[grp], 0).astype(np.uint8)
    depth_hand = np.where(np.isfinite(tracer.t[0]), tracer.t[0], 0.0)
    depth_probe = np.where(np.isfinite(tracer.t[2]), tracer.t[2], 0.0)

    variants = {"rgb": GROUPS, "rgb_no_hand": ("arm", "probe"), "rgb_no_probe": ("hand", "arm")}
    rgb = {}
    if cfg.aa_samples == 1:
        batches = [tracer]
    else:
        rng = np.random.default_rng(cfg.aa_seed)
        batches = []
        for _ in range(cfg.aa_samples):
            jx = xs - 0.5 + rng.random(len(xs))
            jy = ys - 0.5 + rng.random(len(ys))
            o, d = pixel_rays(camera, jx, jy)
            batches.append(_Tracer(bvh, scene, o, d))
    for name, groups in variants.items():
        acc = np.zeros((len(xs), 3))
        for b in batches:
            t, tri, _ = b.nearest(groups)
            if bvh is None:
                acc += bg
            else:
                acc += _shade(bvh, scene, colors, b.origins, b.dirs, t, tri, bg, groups, cfg.shadows)
        rgb[name] = np.clip(acc / len(batches), 0.0, 1.0).reshape(h, w, 3)

    overlay = rgb["rgb"].copy()
    if gt is not None:
        j3 = getattr(gt, "hand_joints_3d", None)
        c3 = getattr(gt, "object_corners_3d", None)
        draw_marks(overlay, gt.object_corners_2d, CORNER_MARK, None if c3 is None else np.asarray(c3)[:, 2] > 0)
        draw_marks(overlay, gt.hand_joints_2d, HAND_MARK, None if j3 is None else np.asarray(j3)[:, 2] > 0)

    return FrameSet(
        rgb=rgb["rgb"],
        depth=depth.reshape(h, w),
        depth_hand=depth_hand.reshape(h, w),
        depth_probe=depth_probe.reshape(h, w),
        rgb_no_hand=rgb["rgb_no_hand"],
        rgb_no_probe=rgb["rgb_no_probe"],
        segmentation=seg.reshape(h, w),
        rgb_gt_overlay=overlay,
    )


# ---------------------------------------------------------------------------
# image IO


def quantize_rgb(img) -> np.ndarray:
    """Clamp to [0, 1] and quantise to 8 bits, rounding half up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def depth_to_mm16(depth) -> np.ndarray:
    """Metres to 16-bit millimetres; 0 stays the no-hit sentinel, hits clamp to [1, 65535]."""
    mm = np.floor(np.asarray(depth, float) * 1000.0 + 0.5)
    mm = np.where(np.asarray(depth) > 0, np.clip(mm, 1, 65535), 0)
    return mm.astype(np.uint16)


def write_frameset(frames: FrameSet, directory, raw_depth: bool = False) -> dict:
    """Write all passes as PNG into ``directory``; returns pass name -> file name."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in PASS_NAMES:
        img = getattr(frames, name)
        if name.startswith("rgb"):
            pil = Image.fromarray(quantize_rgb(img), "RGB")
        elif name.startswith("depth"):
            pil = Image.fromarray(depth_to_mm16(img))
        else:
            pil = Image.fromarray(np.asarray(img, np.uint8), "L")
        pil.save(directory / PASS_FILES[name], format="PNG")
    files = dict(PASS_FILES)
    if raw_depth:
        np.save(directory / "depth.npy", np.asarray(frames.depth, np.float64))
        files["depth_raw"] = "depth.npy"
    return files


def read_pass(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im)
